#![allow(dead_code)]

pub mod fake_llm;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use parley::backend::{Backend, MockTransport};
use parley::server::{spawn, ServerConfig};
use parley::wire::Envelope;
use parley_core::session::Snapshot;
use parley_core::settings::{AppConfig, ChannelMillis, MockSettings};
use serde_json::{json, Value};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;
use tokio::sync::watch;
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;

pub const TIMEOUT: Duration = Duration::from_secs(10);

pub struct TestServer {
    pub addr: SocketAddr,
    pub stop: watch::Sender<bool>,
    pub handle: JoinHandle<()>,
}

impl TestServer {
    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        let _ = tokio::time::timeout(TIMEOUT, self.handle).await;
    }
}

/// Fast mock: fixed 20 ms latency on every channel and a 200 ms suggestion cadence.
pub fn fast_app() -> AppConfig {
    let mut app = AppConfig::default();
    app.mock = MockSettings {
        latency_ms: ChannelMillis::uniform(20),
        latency_sd_ms: ChannelMillis::uniform(0),
    };
    app.engine.suggestion_cadence_ms = 200;
    app.engine.tick_ms = 20;
    app
}

pub async fn start(app: AppConfig) -> TestServer {
    let backend: Arc<dyn Backend> = Arc::new(MockTransport::new(1, app.mock));
    start_with(ServerConfig::new(app, backend)).await
}

pub async fn start_with(config: ServerConfig) -> TestServer {
    let (addr, stop, handle) = spawn("127.0.0.1:0".parse().unwrap(), config).await.unwrap();
    TestServer { addr, stop, handle }
}

/// One protocol client, over either transport.
#[allow(async_fn_in_trait)]
pub trait Client {
    async fn send_raw(&mut self, line: &str);
    /// `None` once the server closed the connection.
    async fn recv_raw(&mut self) -> Option<String>;

    async fn send(&mut self, msg: Value) {
        self.send_raw(&msg.to_string()).await;
    }

    async fn recv(&mut self) -> Envelope {
        let line = tokio::time::timeout(TIMEOUT, self.recv_raw())
            .await
            .expect("server answered in time")
            .expect("connection open");
        serde_json::from_str(&line).unwrap_or_else(|e| panic!("bad envelope {line:?}: {e}"))
    }

    /// Reads until an envelope of type `kind` arrives; returns it and
    /// everything before it.
    async fn recv_until(&mut self, kind: &str) -> (Envelope, Vec<Envelope>) {
        let mut before = Vec::new();
        loop {
            let env = self.recv().await;
            if env.kind == kind {
                return (env, before);
            }
            before.push(env);
        }
    }
}

pub struct NdjsonClient {
    reader: BufReader<OwnedReadHalf>,
    writer: OwnedWriteHalf,
}

impl NdjsonClient {
    pub async fn connect(addr: SocketAddr) -> Self {
        let (r, w) = TcpStream::connect(addr).await.unwrap().into_split();
        Self {
            reader: BufReader::new(r),
            writer: w,
        }
    }
}

impl Client for NdjsonClient {
    async fn send_raw(&mut self, line: &str) {
        // a closed connection shows up on the read side
        let _ = self.writer.write_all(format!("{line}\n").as_bytes()).await;
    }

    async fn recv_raw(&mut self) -> Option<String> {
        let mut line = String::new();
        match self.reader.read_line(&mut line).await {
            Ok(0) | Err(_) => None,
            Ok(_) => Some(line.trim_end_matches('\n').to_owned()),
        }
    }
}

pub struct WsClient {
    ws: tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<TcpStream>>,
}

impl WsClient {
    pub async fn connect(addr: SocketAddr) -> Self {
        let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/")).await.unwrap();
        Self { ws }
    }
}

impl Client for WsClient {
    async fn send_raw(&mut self, line: &str) {
        self.ws.send(Message::text(line.to_owned())).await.unwrap();
    }

    async fn recv_raw(&mut self) -> Option<String> {
        loop {
            match self.ws.next().await? {
                Ok(Message::Text(t)) => return Some(t.to_string()),
                Ok(Message::Close(_)) | Err(_) => return None,
                Ok(_) => continue,
            }
        }
    }
}

/// Folds every state event into a client-side snapshot and checks seq order.
#[derive(Default)]
pub struct Fold {
    pub snapshot: Snapshot,
    pub last_seq: u64,
    pub events: Vec<Envelope>,
}

impl Fold {
    pub fn absorb(&mut self, env: &Envelope) {
        assert!(env.seq > self.last_seq, "seq {} after {}", env.seq, self.last_seq);
        self.last_seq = env.seq;
        if let Some(ev) = env.server_event() {
            self.snapshot.apply(&ev);
        }
        self.events.push(env.clone());
    }

    /// Requests a snapshot and compares it with the fold so far.
    pub async fn check(&mut self, client: &mut impl Client) {
        client.send(json!({"type": "snapshot"})).await;
        let (snap, before) = client.recv_until("snapshot").await;
        for env in &before {
            self.absorb(env);
        }
        self.absorb(&snap);
        let server: Snapshot = serde_json::from_value(snap.payload["snapshot"].clone()).unwrap();
        assert_eq!(self.snapshot, server, "fold diverged from the server snapshot");
    }
}
