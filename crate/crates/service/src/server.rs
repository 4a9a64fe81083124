//! Socket service: one acceptor, one session per connection.
//!
//! A connection whose first bytes are `GET ` is upgraded to a WebSocket
//! (the browser transport, one JSON message per text frame). Anything else
//! speaks newline-delimited JSON. Both carry the same messages.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use parley_core::backend::BackendRequest;
use parley_core::backend::BackendErrorKind;
use parley_core::ingest::{FeedError, LiveFeed, SourceGuard, SourceKind};
use parley_core::session::{event::event_to_line, Effect, EventKind, SessionError, SessionPhase, SessionState};
use parley_core::settings::AppConfig;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch};
use tokio::task::{AbortHandle, JoinSet};
use tokio_tungstenite::tungstenite::Message;
use tokio_util::codec::{Framed, LinesCodec};
use tracing::{debug, info, warn};

use crate::backend::Backend;
use crate::wire::{parse_client_message, ClientMessage, ControlEvent, Envelope, WireError, MAX_LINE_BYTES};

pub const DEFAULT_OUTBOUND_CAPACITY: usize = 256;

pub struct ServerConfig {
    pub app: AppConfig,
    pub backend: Arc<dyn Backend>,
    /// Opt-in event logs, one `<session>.ndjson` per session.
    pub log_dir: Option<PathBuf>,
    /// Server messages queued per client before it counts as too slow.
    pub outbound_capacity: usize,
}

impl ServerConfig {
    pub fn new(app: AppConfig, backend: Arc<dyn Backend>) -> Self {
        Self {
            app,
            backend,
            log_dir: None,
            outbound_capacity: DEFAULT_OUTBOUND_CAPACITY,
        }
    }
}

/// Accepts connections until `shutdown` flips to true, then waits for every
/// session to close.
pub async fn serve(listener: TcpListener, config: Arc<ServerConfig>, mut shutdown: watch::Receiver<bool>) {
    let ids = Arc::new(AtomicU64::new(0));
    let mut sessions = JoinSet::new();
    loop {
        tokio::select! {
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    let id = format!("s{}", ids.fetch_add(1, Ordering::Relaxed) + 1);
                    debug!(%peer, session = %id, "accepted");
                    sessions.spawn(handle_connection(stream, id, config.clone(), shutdown.clone()));
                }
                Err(e) => warn!("accept failed: {e}"),
            },
            _ = shutdown.changed() => break,
            Some(_) = sessions.join_next(), if !sessions.is_empty() => {}
        }
    }
    while sessions.join_next().await.is_some() {}
    info!("all sessions closed");
}

/// Binds `addr` and serves in the background. Returns the bound address and
/// a sender that stops the server when set to true.
pub async fn spawn(
    addr: SocketAddr,
    config: ServerConfig,
) -> std::io::Result<(SocketAddr, watch::Sender<bool>, tokio::task::JoinHandle<()>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let (tx, rx) = watch::channel(false);
    let handle = tokio::spawn(serve(listener, Arc::new(config), rx));
    Ok((local, tx, handle))
}

type Inbound = Result<String, String>;

async fn is_websocket(stream: &TcpStream) -> std::io::Result<bool> {
    let mut buf = [0u8; 4];
    loop {
        let n = stream.peek(&mut buf).await?;
        if n == 0 {
            return Ok(false);
        }
        if n >= 4 || !b"GET ".starts_with(&buf[..n]) {
            return Ok(&buf[..n] == b"GET ");
        }
        tokio::time::sleep(Duration::from_millis(2)).await;
    }
}

async fn handle_connection(stream: TcpStream, id: String, config: Arc<ServerConfig>, shutdown: watch::Receiver<bool>) {
    let (in_tx, in_rx) = mpsc::channel::<Inbound>(64);
    let (out_tx, mut out_rx) = mpsc::channel::<String>(config.outbound_capacity.max(1));
    let websocket = match is_websocket(&stream).await {
        Ok(ws) => ws,
        Err(e) => {
            debug!("peek failed: {e}");
            return;
        }
    };

    let io_tasks: Vec<tokio::task::JoinHandle<()>> = if websocket {
        let ws = match tokio_tungstenite::accept_async(stream).await {
            Ok(ws) => ws,
            Err(e) => {
                debug!("websocket handshake failed: {e}");
                return;
            }
        };
        let (mut sink, mut source) = ws.split();
        let reader = tokio::spawn(async move {
            while let Some(msg) = source.next().await {
                let item = match msg {
                    Ok(Message::Text(text)) if text.len() > MAX_LINE_BYTES => Err("message too large".to_owned()),
                    Ok(Message::Text(text)) => Ok(text.to_string()),
                    Ok(Message::Close(_)) | Err(_) => break,
                    Ok(_) => continue,
                };
                let fatal = item.is_err();
                if in_tx.send(item).await.is_err() || fatal {
                    break;
                }
            }
        });
        let writer = tokio::spawn(async move {
            while let Some(line) = out_rx.recv().await {
                if sink.send(Message::text(line)).await.is_err() {
                    return;
                }
            }
            let _ = sink.close().await;
        });
        vec![reader, writer]
    } else {
        let framed = Framed::new(stream, LinesCodec::new_with_max_length(MAX_LINE_BYTES));
        let (mut sink, mut source) = framed.split();
        let reader = tokio::spawn(async move {
            while let Some(line) = source.next().await {
                let item = line.map_err(|e| e.to_string());
                let fatal = item.is_err();
                if in_tx.send(item).await.is_err() || fatal {
                    break;
                }
            }
        });
        let writer = tokio::spawn(async move {
            while let Some(line) = out_rx.recv().await {
                if sink.send(line).await.is_err() {
                    return;
                }
            }
            let _ = SinkExt::<String>::close(&mut sink).await;
        });
        vec![reader, writer]
    };

    let session = Session::new(id, config, out_tx);
    session.run(in_rx, shutdown).await;
    // the writer drains whatever is queued once the session drops its sender
    let mut tasks = io_tasks.into_iter();
    let reader = tasks.next().expect("reader task");
    let writer = tasks.next().expect("writer task");
    let _ = tokio::time::timeout(Duration::from_secs(5), writer).await;
    reader.abort();
}

struct Completion {
    request: BackendRequest,
    result: Result<String, BackendErrorKind>,
    latency_ms: u64,
}

#[derive(Debug, PartialEq, Eq)]
enum Flow {
    Continue,
    Disconnect,
}

struct Session {
    id: String,
    config: Arc<ServerConfig>,
    out: mpsc::Sender<String>,
    out_seq: u64,
    state: Option<SessionState>,
    opened_at: Instant,
    feed: LiveFeed,
    sources: SourceGuard,
    in_flight: HashMap<u64, AbortHandle>,
    done_tx: mpsc::UnboundedSender<Completion>,
    done_rx: mpsc::UnboundedReceiver<Completion>,
    log: Option<File>,
    logged: usize,
}

impl Session {
    fn new(id: String, config: Arc<ServerConfig>, out: mpsc::Sender<String>) -> Self {
        let (done_tx, done_rx) = mpsc::unbounded_channel();
        Self {
            id,
            config,
            out,
            out_seq: 0,
            state: None,
            opened_at: Instant::now(),
            feed: LiveFeed::new(),
            sources: SourceGuard::default(),
            in_flight: HashMap::new(),
            done_tx,
            done_rx,
            log: None,
            logged: 0,
        }
    }

    fn now_ms(&self) -> u64 {
        self.opened_at.elapsed().as_millis() as u64
    }

    async fn run(mut self, mut inbound: mpsc::Receiver<Inbound>, mut shutdown: watch::Receiver<bool>) {
        let tick = Duration::from_millis(self.config.app.engine.tick_ms.max(1));
        let mut ticker = tokio::time::interval(tick);
        ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
        let mut shutting_down = *shutdown.borrow();
        while !shutting_down {
            let flow = tokio::select! {
                msg = inbound.recv() => match msg {
                    Some(Ok(line)) => self.on_line(&line),
                    Some(Err(e)) => {
                        self.send_error(WireError::new("bad_frame", e));
                        Flow::Disconnect
                    }
                    None => Flow::Disconnect,
                },
                Some(done) = self.done_rx.recv() => self.on_completion(done),
                _ = ticker.tick() => self.on_tick(),
                changed = shutdown.changed() => {
                    shutting_down = changed.is_err() || *shutdown.borrow();
                    Flow::Continue
                }
            };
            if flow == Flow::Disconnect {
                break;
            }
        }
        self.close();
    }

    /// Ends a live conversation so the log and the client both see the
    /// feedback report, then stops outstanding backend work.
    fn close(&mut self) {
        if self.state.as_ref().is_some_and(|s| s.phase == SessionPhase::Conversation) {
            let _ = self.push(EventKind::EndSession);
        }
        for (_, handle) in self.in_flight.drain() {
            handle.abort();
        }
        if let Some(log) = self.log.as_mut() {
            let _ = log.sync_all();
        }
        debug!(session = %self.id, "closed");
    }

    fn send_line(&mut self, line: String) -> Flow {
        match self.out.try_send(line) {
            Ok(()) => Flow::Continue,
            Err(mpsc::error::TrySendError::Full(_)) => {
                warn!(session = %self.id, "client too slow, disconnecting");
                Flow::Disconnect
            }
            Err(mpsc::error::TrySendError::Closed(_)) => Flow::Disconnect,
        }
    }

    fn send_control(&mut self, event: ControlEvent) -> Flow {
        self.out_seq += 1;
        let line = Envelope::control(&self.id, self.out_seq, &event).to_line();
        self.send_line(line)
    }

    fn send_error(&mut self, err: WireError) -> Flow {
        self.send_control(ControlEvent::Error(err))
    }

    fn session_error(&mut self, err: &SessionError) -> Flow {
        self.send_error(WireError::new(err.code(), err.to_string()))
    }

    fn write_log(&mut self) {
        let (Some(state), Some(log)) = (self.state.as_ref(), self.log.as_mut()) else { return };
        for event in &state.event_log[self.logged..] {
            // one write per complete line, flushed before the next
            if let Err(e) = log.write_all(event_to_line(event).as_bytes()).and_then(|_| log.flush()) {
                warn!("event log write failed: {e}");
            }
        }
        self.logged = state.event_log.len();
    }

    /// Applies an event stamped with the current time and runs its effects.
    fn push(&mut self, kind: EventKind) -> Result<Flow, SessionError> {
        let now = self.now_ms();
        let state = self.state.as_mut().expect("session opened");
        let effects = state.push(now, kind)?;
        self.write_log();
        let mut flow = Flow::Continue;
        for effect in effects {
            match effect {
                Effect::Request(request) => self.submit(request),
                Effect::Cancel(id) => {
                    if let Some(handle) = self.in_flight.remove(&id) {
                        handle.abort();
                    }
                }
                Effect::Emit(event) => {
                    self.out_seq += 1;
                    let line = Envelope::state(&self.id, self.out_seq, &event).to_line();
                    if self.send_line(line) == Flow::Disconnect {
                        flow = Flow::Disconnect;
                    }
                }
            }
        }
        Ok(flow)
    }

    fn submit(&mut self, request: BackendRequest) {
        let backend = self.config.backend.clone();
        let done = self.done_tx.clone();
        let id = request.request_id;
        let handle = tokio::spawn(async move {
            let started = Instant::now();
            let result = backend.complete(&request).await;
            let latency_ms = started.elapsed().as_millis() as u64;
            let _ = done.send(Completion {
                request,
                result,
                latency_ms,
            });
        });
        self.in_flight.insert(id, handle.abort_handle());
    }

    fn on_completion(&mut self, done: Completion) -> Flow {
        self.in_flight.remove(&done.request.request_id);
        let kind = match done.result {
            Ok(text) => EventKind::BackendArrived(done.request.respond(text, done.latency_ms)),
            Err(error) => {
                debug!(request = done.request.request_id, %error, "backend request failed");
                EventKind::BackendFailed(done.request.fail(error, done.latency_ms))
            }
        };
        match self.push(kind) {
            Ok(flow) => flow,
            Err(e) => self.session_error(&e),
        }
    }

    fn on_tick(&mut self) -> Flow {
        if !self.state.as_ref().is_some_and(|s| s.phase == SessionPhase::Conversation) {
            return Flow::Continue;
        }
        self.push(EventKind::Tick).unwrap_or(Flow::Continue)
    }

    fn hello(&mut self, topic: Option<String>) -> Flow {
        if self.state.is_some() {
            return self.send_error(WireError::new("already_hello", "session already created"));
        }
        let app = &self.config.app;
        let mut state = SessionState::open(topic.unwrap_or_default(), app.engine.clone());
        if app.features != state.config {
            state
                .push(0, EventKind::SetConfig { config: app.features })
                .expect("set_config is legal in a fresh session");
        }
        if let Some(dir) = &self.config.log_dir {
            match File::create(dir.join(format!("{}.ndjson", self.id))) {
                Ok(f) => self.log = Some(f),
                Err(e) => warn!("cannot open event log: {e}"),
            }
        }
        self.opened_at = Instant::now();
        let event = ControlEvent::SessionCreated {
            topic: state.topic.clone(),
            config: state.config,
            snapshot: state.snapshot(),
        };
        self.state = Some(state);
        self.write_log();
        self.send_control(event)
    }

    fn on_line(&mut self, line: &str) -> Flow {
        if line.trim().is_empty() {
            return Flow::Continue;
        }
        let msg = match parse_client_message(line) {
            Ok(msg) => msg,
            Err(e) => return self.send_error(e),
        };
        if let ClientMessage::Hello { topic } = msg {
            return self.hello(topic);
        }
        let Some(state) = self.state.as_ref() else {
            return self.send_error(WireError::new("hello_required", "send hello first"));
        };
        let kind = match msg {
            ClientMessage::Hello { .. } => unreachable!("handled above"),
            ClientMessage::Snapshot => {
                let snapshot = state.snapshot();
                return self.send_control(ControlEvent::Snapshot { snapshot });
            }
            ClientMessage::SetConfig { config } => EventKind::SetConfig { config },
            ClientMessage::Confirm { config } => EventKind::ConfirmFunctions {
                config: config.unwrap_or(state.config),
            },
            ClientMessage::Utterance(live) => {
                if state.phase != SessionPhase::Conversation {
                    let err = SessionError::IllegalPhase {
                        phase: state.phase,
                        event: "utterance_arrived",
                    };
                    return self.session_error(&err);
                }
                if self.sources.attached().is_none() {
                    let _ = self.sources.attach(SourceKind::Live);
                }
                let now = self.now_ms().max(state.clock_ms);
                match self.feed.accept(live, now) {
                    Ok(utt) => EventKind::UtteranceArrived(utt),
                    Err(FeedError::EmptyText) => {
                        return self.send_error(WireError::new("invalid_utterance", "text is empty").with_field("text"))
                    }
                    Err(e) => return self.send_error(WireError::new("invalid_utterance", e.to_string())),
                }
            }
            ClientMessage::GazeTrigger => EventKind::GazeTrigger,
            ClientMessage::GazeFocus { panel } => EventKind::GazeFocus { panel },
            ClientMessage::GazeUnfocus => EventKind::GazeUnfocus,
            ClientMessage::TriggerPoke => EventKind::TriggerPoked,
            ClientMessage::ConfettiTap => EventKind::ConfettiTap,
            ClientMessage::End => EventKind::EndSession,
        };
        match self.push(kind) {
            Ok(flow) => flow,
            Err(e) => self.session_error(&e),
        }
    }
}
