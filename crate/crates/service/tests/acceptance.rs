//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::fake_llm::{FakeLlm, Mode};
use common::{fast_app, start_with, Client, NdjsonClient};
use parley::backend::{Backend, HttpBackend};
use parley::server::ServerConfig;
use parley_core::backend::{BackendRequest, Channel, PromptInputs};
use parley_core::ingest::{parse_transcript_str, Pacer, Speaker, Utterance};
use parley_core::metrics::wilcoxon::wilcoxon_with_method;
use parley_core::metrics::{detect_offtopic_episodes, detect_pauses, wilcoxon_signed_rank, Method};
use parley_core::offtopic::{OffTopicState, Verdict, VerdictRecord};
use parley_core::session::{Effect, EventKind, FeatureConfig, PanelDisplay, PanelId, ServerEvent, SessionState};
use parley_core::settings::{EngineSettings, HttpSettings};
use parley_core::simulate::{run_replay, ReplayConfig};
use parley_core::suggest::validate_suggestion;
use parley_core::summarize::validate_summary;
use parley_core::synth::synth_transcript;
use parley_core::SAMPLE_TRANSCRIPT;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Check = Result<String, String>;

const BIN: &str = env!("CARGO_BIN_EXE_parley");

fn core_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core").join(rel)
}

fn cadence() -> Check {
    let transcript = parse_transcript_str(SAMPLE_TRANSCRIPT).map_err(|e| e.to_string())?;
    let out = run_replay(&transcript, &ReplayConfig { seed: 42, ..Default::default() }, &Pacer::unpaced());
    let times: Vec<u64> = out
        .requests
        .iter()
        .filter(|r| r.channel == Channel::Suggestion)
        .map(|r| r.issued_at_ms)
        .collect();
    if times.len() < 2 {
        return Err(format!("only {} suggestion requests", times.len()));
    }
    if let Some(w) = times.windows(2).find(|w| !(950..=1050).contains(&(w[1] - w[0]))) {
        return Err(format!("delta {} ms between {} and {}", w[1] - w[0], w[0], w[1]));
    }
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let started = Instant::now();
    let status = Command::new(BIN)
        .args(["replay", "--speed", "0", "--seed", "42", "--transcript"])
        .arg(core_file("data/sample_topic1.ndjson"))
        .arg("--out")
        .arg(tmp.path())
        .status()
        .map_err(|e| e.to_string())?;
    let elapsed = started.elapsed().as_secs_f64();
    if !status.success() {
        return Err(format!("replay exited with {status}"));
    }
    if elapsed >= 5.0 {
        return Err(format!("replay took {elapsed:.2} s"));
    }
    Ok(format!(
        "{} suggestion requests over {:.0} s, every delta within 1000±50 ms; replay took {elapsed:.2} s",
        times.len(),
        out.state.duration_ms() as f64 / 1000.0
    ))
}

fn panel_lifetime() -> Check {
    let settings = EngineSettings::default();
    let fade = settings.panel_fade_ms;
    let mut rng = ChaCha8Rng::seed_from_u64(0x9a7e);
    let mut violations = 0;
    let mut shown_checks = 0;
    let sequences = 1000;
    for _ in 0..sequences {
        let mut s = SessionState::open("topic", settings.clone());
        let config = FeatureConfig {
            self_summary: rng.random(),
            other_summary: rng.random(),
            word_suggestions: rng.random(),
            ..FeatureConfig::default()
        };
        s.push(0, EventKind::ConfirmFunctions { config }).map_err(|e| e.to_string())?;
        let mut now = 0u64;
        let mut opened_at = None;
        for _ in 0..rng.random_range(1..80) {
            now += [0, 1, 50, 999, 2500, 4999, 5000, 7000][rng.random_range(0..8)];
            let kind = match rng.random_range(0..5) {
                0 => EventKind::GazeTrigger,
                1 => EventKind::GazeFocus { panel: PanelId::ALL[rng.random_range(0..3)] },
                2 => EventKind::GazeUnfocus,
                _ => EventKind::Tick,
            };
            let is_trigger = matches!(kind, EventKind::GazeTrigger);
            let before = s.assist_count;
            let _ = s.push(now, kind);
            if is_trigger && s.assist_count > before {
                opened_at = Some(now);
            }
            for view in s.snapshot().panels {
                if view.state == PanelDisplay::Hidden {
                    continue;
                }
                shown_checks += 1;
                let since = view.since_ms.unwrap_or(u64::MAX);
                if s.clock_ms.saturating_sub(since) >= fade || Some(since) != opened_at || !config.enables(view.panel) {
                    violations += 1;
                }
            }
        }
    }
    if violations > 0 {
        return Err(format!("{violations} violations"));
    }
    Ok(format!("{sequences} sequences, {shown_checks} visible-panel observations, 0 violations"))
}

fn validators() -> Check {
    let text = std::fs::read_to_string(core_file("tests/data/validator_corpus.json")).map_err(|e| e.to_string())?;
    let corpus: BTreeMap<String, Vec<String>> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let summaries = &corpus["summaries"];
    let suggestions = &corpus["suggestions"];
    let total = summaries.len() + suggestions.len();
    let accepted: Vec<&String> = summaries
        .iter()
        .filter(|s| validate_summary(s).is_ok())
        .chain(suggestions.iter().filter(|s| validate_suggestion(s).is_ok()))
        .collect();
    if total < 200 {
        return Err(format!("corpus has only {total} cases"));
    }
    if !accepted.is_empty() {
        return Err(format!("accepted {:?}", accepted));
    }
    Ok(format!("{total} adversarial outputs, 100% rejected"))
}

fn chaining() -> Check {
    let mut updates = 0;
    for seed in 0..50 {
        let t = synth_transcript(seed, 30);
        let out = run_replay(&t, &ReplayConfig { seed, ..Default::default() }, &Pacer::unpaced());
        let by_id: BTreeMap<u64, &BackendRequest> = out.requests.iter().map(|r| (r.request_id, r)).collect();
        let mut versions: BTreeMap<Speaker, BTreeMap<u64, Vec<String>>> = BTreeMap::new();
        for (_, ev) in &out.emitted {
            let ServerEvent::SummaryUpdate {
                channel,
                keywords,
                version,
                request_id,
            } = ev
            else {
                continue;
            };
            let known = versions.entry(*channel).or_insert_with(|| BTreeMap::from([(0, vec![])]));
            let Some(PromptInputs::Summary { previous, .. }) = by_id.get(request_id).map(|r| &r.inputs) else {
                return Err(format!("seed {seed}: update {request_id} has no summary request"));
            };
            if known.get(&(version - 1)) != Some(previous) {
                return Err(format!("seed {seed}: v{version} built on {previous:?}"));
            }
            if *version > 1 {
                updates += 1;
            }
            known.insert(*version, keywords.clone());
        }
    }
    Ok(format!("50 sessions, {updates} chained updates (v > 1), 0 violations"))
}

fn collect(fx: Vec<Effect>, requests: &mut Vec<BackendRequest>, cancelled: &mut std::collections::BTreeSet<u64>) {
    for e in fx {
        match e {
            Effect::Request(r) => requests.push(r),
            Effect::Cancel(id) => {
                cancelled.insert(id);
            }
            Effect::Emit(_) => {}
        }
    }
}

fn staleness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x57a1e);
    let shuffles = 500;
    let mut deliveries = 0;
    for round in 0..shuffles {
        let mut s = SessionState::open("park", EngineSettings::default());
        s.push(0, EventKind::ConfirmFunctions { config: FeatureConfig::default() }).map_err(|e| e.to_string())?;
        let mut requests = Vec::new();
        let mut cancelled = std::collections::BTreeSet::new();
        let mut now = 0;
        for id in 1..=rng.random_range(2..8u64) {
            now += rng.random_range(100..1500);
            let utt = Utterance {
                id,
                t_start_ms: now - 50,
                t_end_ms: now,
                speaker: if rng.random() { Speaker::SelfUser } else { Speaker::Partner },
                text: format!("the park and river number {id}"),
            };
            let fx = s.push(now, EventKind::UtteranceArrived(utt)).map_err(|e| e.to_string())?;
            collect(fx, &mut requests, &mut cancelled);
            for _ in 0..rng.random_range(0..4) {
                now += 500;
                let fx = s.push(now, EventKind::Tick).map_err(|e| e.to_string())?;
                collect(fx, &mut requests, &mut cancelled);
            }
        }
        requests.shuffle(&mut rng);
        let mut best: Option<(u64, Vec<String>)> = None;
        let mut versions = (0u64, 0u64);
        while let Some(req) = requests.pop() {
            let text = match (req.channel, rng.random_range(0..3)) {
                (Channel::Suggestion, 0) => "This is a full sentence.".to_owned(),
                (Channel::Suggestion, _) => format!("maybe {}", req.request_id),
                (Channel::OffTopic, _) => "No".to_owned(),
                (_, k) => format!("Alpha {k}, Beta, Gamma, Delta"),
            };
            let live = !cancelled.contains(&req.request_id);
            let fx = s.push(now, EventKind::BackendArrived(req.respond(text.clone(), 10))).map_err(|e| e.to_string())?;
            collect(fx, &mut requests, &mut cancelled);
            requests.shuffle(&mut rng);
            deliveries += 1;
            if req.channel == Channel::Suggestion && live {
                if let Ok(words) = validate_suggestion(&text) {
                    if best.as_ref().is_none_or(|(id, _)| req.request_id > *id) {
                        best = Some((req.request_id, words));
                    }
                }
            }
            let snap = s.snapshot();
            let expected = best.as_ref().map(|(_, w)| w.clone()).unwrap_or_default();
            if snap.suggestion != expected {
                return Err(format!("round {round}: shows {:?}, newest accepted {:?}", snap.suggestion, expected));
            }
            let now_versions = (snap.self_summary.version, snap.other_summary.version);
            if now_versions.0 < versions.0 || now_versions.1 < versions.1 {
                return Err(format!("round {round}: summary version regressed {versions:?} -> {now_versions:?}"));
            }
            versions = now_versions;
        }
    }
    Ok(format!("{shuffles} shuffled completion orders, {deliveries} deliveries, 0 violations"))
}

fn offtopic_dynamics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0ff);
    for case in 0..1000 {
        let k = rng.random_range(1..=8u32);
        let mut s = OffTopicState::new(k);
        let mut oracle = 0.0f64;
        for _ in 0..rng.random_range(0..=100) {
            let v = if rng.random() { Verdict::Yes } else { Verdict::No };
            s.update_level(v);
            oracle = match v {
                Verdict::Yes => (oracle + 1.0 / f64::from(k)).min(1.0),
                Verdict::No => (oracle - 1.0 / f64::from(k)).max(0.0),
            };
            if !(0.0..=1.0).contains(&s.level) || (s.level - oracle).abs() > 1e-9 {
                return Err(format!("case {case}: level {} vs oracle {oracle}", s.level));
            }
        }
    }
    Ok("1000 verdict sequences (length <= 100) match the clamp fold; level stays in [0, 1]".into())
}

fn random_transcript(rng: &mut ChaCha8Rng) -> Vec<Utterance> {
    let mut start = 0;
    (1..=rng.random_range(0..=50u64))
        .map(|id| {
            start += rng.random_range(0..6000);
            Utterance {
                id,
                t_start_ms: start,
                t_end_ms: start + rng.random_range(0..5000),
                speaker: if rng.random() { Speaker::SelfUser } else { Speaker::Partner },
                text: "x".into(),
            }
        })
        .collect()
}

fn enumerate_p(d: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = d.iter().copied().filter(|x| *x != 0.0).collect();
    let r: Vec<f64> = d
        .iter()
        .map(|x| {
            let below = d.iter().filter(|y| y.abs() < x.abs()).count() as f64;
            let tied = d.iter().filter(|y| y.abs() == x.abs()).count() as f64;
            below + (tied + 1.0) / 2.0
        })
        .collect();
    let w: f64 = d.iter().zip(&r).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let n = d.len();
    let (mut ge, mut le) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| r[i]).sum();
        ge += u64::from(s >= w - 1e-9);
        le += u64::from(s <= w + 1e-9);
    }
    (w, (2.0 * ge.min(le) as f64 / (1u64 << n) as f64).min(1.0))
}

fn metrics_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3e7);
    for case in 0..1000 {
        let utts = random_transcript(&mut rng);
        let threshold = 2000;
        let got: Vec<(u64, u64)> = detect_pauses(&utts, threshold).iter().map(|p| (p.from_ms, p.to_ms)).collect();
        let mut brute = Vec::new();
        for i in 1..utts.len() {
            let until = utts[..i].iter().map(|u| u.t_end_ms).max().unwrap_or(0);
            let u = &utts[i];
            if u.speaker == Speaker::SelfUser && u.t_start_ms > until && u.t_start_ms - until >= threshold {
                brute.push((until, u.t_start_ms));
            }
        }
        if got != brute {
            return Err(format!("case {case}: pauses {got:?} vs {brute:?}"));
        }

        let verdicts: Vec<VerdictRecord> = utts
            .iter()
            .map(|u| VerdictRecord {
                utterance_id: u.id,
                verdict: if rng.random() { Verdict::Yes } else { Verdict::No },
                unparsed: false,
            })
            .collect();
        let end = utts.iter().map(|u| u.t_end_ms).max().unwrap_or(0) + 1000;
        let got: Vec<(u64, u64)> = detect_offtopic_episodes(Some(&verdicts), None, &utts, end)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|e| (e.from_ms, e.to_ms))
            .collect();
        let mut brute = Vec::new();
        for k in 0..verdicts.len() {
            if verdicts[k].verdict == Verdict::Yes && (k == 0 || verdicts[k - 1].verdict == Verdict::No) {
                let close = (k + 1..verdicts.len())
                    .find(|&j| verdicts[j].verdict == Verdict::No)
                    .map_or(end, |j| utts[j].t_start_ms);
                brute.push((utts[k].t_start_ms, close));
            }
        }
        if got != brute {
            return Err(format!("case {case}: episodes {got:?} vs {brute:?}"));
        }
    }

    let mut exact_cases = 0;
    for n in 1..=12 {
        for _ in 0..30 {
            let d: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(-8i32..=8))).collect();
            if d.iter().all(|x| *x == 0.0) {
                continue;
            }
            let r = wilcoxon_signed_rank(&d, &vec![0.0; n]).map_err(|e| e.to_string())?;
            let (w, p) = enumerate_p(&d);
            if (r.w_plus - w).abs() > 1e-9 || (r.p_value - p).abs() > 1e-12 {
                return Err(format!("{d:?}: p {} vs enumeration {p}", r.p_value));
            }
            exact_cases += 1;
        }
    }
    let mut worst: f64 = 0.0;
    for _ in 0..8 {
        let d: Vec<f64> = (0..20).map(|_| rng.random_range(-50.0..50.0)).collect();
        let r = wilcoxon_with_method(&d, &[0.0; 20], Method::Normal).map_err(|e| e.to_string())?;
        let (_, p) = enumerate_p(&d);
        worst = worst.max((r.p_value - p).abs());
    }
    if worst > 0.01 {
        return Err(format!("normal approximation off by {worst:.4} at n = 20"));
    }
    Ok(format!(
        "1000 transcripts match brute-force pauses and episodes; exact p matches enumeration on {exact_cases} cases (n <= 12); normal approximation within {worst:.4} at n = 20"
    ))
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for i in 0..3 {
        let dir = tmp.path().join(i.to_string());
        let status = Command::new(BIN)
            .args(["replay", "--seed", "42", "--transcript"])
            .arg(core_file("data/sample_topic1.ndjson"))
            .arg("--out")
            .arg(&dir)
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("run {i} exited with {status}"));
        }
        let events = std::fs::read(dir.join("events.ndjson")).map_err(|e| e.to_string())?;
        let report = std::fs::read(dir.join("report.json")).map_err(|e| e.to_string())?;
        runs.push((events, report));
    }
    if runs[0] != runs[1] || runs[1] != runs[2] {
        return Err("runs differ".into());
    }
    let golden = std::fs::read(core_file("tests/data/golden_report_seed42.json")).map_err(|e| e.to_string())?;
    if runs[0].1 != golden {
        return Err("report differs from the frozen golden report".into());
    }
    Ok(format!(
        "3 runs byte-identical ({} event bytes, {} report bytes), report equals the golden file",
        runs[0].0.len(),
        runs[0].1.len()
    ))
}

async fn prompt_fidelity() -> Check {
    let template = |name: &str| std::fs::read_to_string(core_file(&format!("prompts/{name}.v1.txt")));
    let (summarize, suggest, offtopic) = match (template("summarize"), template("suggest"), template("offtopic")) {
        (Ok(a), Ok(b), Ok(c)) => (a, b, c),
        _ => return Err("template resources missing".into()),
    };
    let llm = FakeLlm::start(Mode::Answer).await;
    let backend: Arc<dyn Backend> = Arc::new(
        HttpBackend::new(
            HttpSettings {
                url: llm.url(),
                model: "fake".into(),
                timeout_ms: 5000,
            },
            None,
        )
        .map_err(|e| e.to_string())?,
    );
    let mut app = fast_app();
    app.engine.suggestion_cadence_ms = 100;
    let server = start_with(ServerConfig::new(app, backend)).await;
    let mut client = NdjsonClient::connect(server.addr).await;
    client.send(json!({"type": "hello", "topic": "favorite place"})).await;
    client.send(json!({"type": "confirm"})).await;
    let lines = [
        ("partner", "Partner", "Where do you like to go in town?"),
        ("self", "User", "The riverside park, mostly."),
        ("partner", "Partner", "Oh, with the big maple trees?"),
    ];
    for (speaker, _, text) in lines {
        client.send(json!({"type": "utterance", "speaker": speaker, "text": text})).await;
        tokio::time::sleep(Duration::from_millis(250)).await;
    }
    tokio::time::sleep(Duration::from_millis(300)).await;
    client.send(json!({"type": "end"})).await;
    client.recv_until("feedback").await;
    server.shutdown().await;

    let history = |n: usize| {
        lines[..n]
            .iter()
            .map(|(_, label, text)| format!("{label}: {text}"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let fill = |t: &str, n: usize| {
        t.replace("<current utterance>", lines[n - 1].2)
            .replace("<full dialogue history>", &history(n))
    };
    let summary = |recent: &str, previous: &str| {
        summarize.replace("<recent utterance>", recent).replace("<previous summary>", previous)
    };
    let mut required = vec![
        summary(lines[0].2, ""),
        summary(lines[1].2, ""),
        summary(lines[2].2, "Park, River, Maple Trees, Weekends"),
        fill(&offtopic, 2),
        fill(&offtopic, 3),
    ];
    let allowed: Vec<String> = required.iter().cloned().chain((1..=3).map(|n| fill(&suggest, n))).collect();
    let recorded = llm.requests();
    let mut suggestions = 0;
    for r in &recorded {
        let prompt = r.prompt();
        if !allowed.iter().any(|p| p == prompt) {
            return Err(format!("unexpected prompt on the wire: {prompt:?}"));
        }
        if prompt.starts_with(&suggest[..40]) {
            suggestions += 1;
        }
        required.retain(|p| p != prompt);
    }
    if !required.is_empty() {
        return Err(format!("{} expected prompts never sent", required.len()));
    }
    if suggestions == 0 {
        return Err("no suggestion prompt was sent".into());
    }
    Ok(format!(
        "{} recorded HTTP prompts byte-equal to the filled summarize/suggest/offtopic templates",
        recorded.len()
    ))
}

fn main() {
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
    let checks: Vec<(&str, Box<dyn FnOnce() -> Check>)> = vec![
        ("Cadence", Box::new(cadence)),
        ("Panel lifetime", Box::new(panel_lifetime)),
        ("Validators", Box::new(validators)),
        ("Chaining", Box::new(chaining)),
        ("Staleness", Box::new(staleness)),
        ("Off-topic dynamics", Box::new(offtopic_dynamics)),
        ("Metrics oracle", Box::new(metrics_oracle)),
        ("Determinism", Box::new(determinism)),
        ("Prompt fidelity", Box::new(move || runtime.block_on(prompt_fidelity()))),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
