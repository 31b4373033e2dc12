use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use gridprompt::harness::{self, episode_seeds, episode_start};
use gridprompt::llm_client::{generate, Backend, GenerationRequest, HttpBackend, LlmError, ScriptedBackend};
use gridprompt::planner;
use gridprompt::policy::{LlmPolicy, ModelSettings, PolicySpec};
use gridprompt::{ConfigId, RunConfig, StrategyFlags};

enum Reply {
    Json(String),
    Status(u16, String),
    Raw(String),
    Hang,
}

struct MockServer {
    url: String,
    bodies: Arc<Mutex<Vec<serde_json::Value>>>,
}

fn read_request(stream: &mut TcpStream) -> Option<serde_json::Value> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut len = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some(v) = l.to_ascii_lowercase().strip_prefix("content-length:") {
            len = v.trim().parse().ok()?;
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    serde_json::from_slice(&body).ok()
}

fn respond(stream: &mut TcpStream, status: u16, body: &str) {
    let _ = write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
}

fn serve(replies: Vec<Reply>) -> MockServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let seen = bodies.clone();
    let mut queue: VecDeque<Reply> = replies.into();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let Some(body) = read_request(&mut stream) else { continue };
            seen.lock().unwrap().push(body);
            match queue.pop_front() {
                Some(Reply::Json(text)) => {
                    let body = serde_json::json!({"response": text, "prompt_eval_count": 12, "eval_count": 3});
                    respond(&mut stream, 200, &body.to_string());
                }
                Some(Reply::Status(code, body)) => respond(&mut stream, code, &body),
                Some(Reply::Raw(body)) => respond(&mut stream, 200, &body),
                Some(Reply::Hang) => {
                    thread::sleep(Duration::from_secs(2));
                }
                None => break,
            }
        }
    });
    MockServer { url, bodies }
}

fn request(prompt: &str, timeout: Duration) -> GenerationRequest {
    GenerationRequest {
        model: "qwen2.5:7b".into(),
        prompt: prompt.into(),
        temperature: 0.0,
        seed: 42,
        max_tokens: 64,
        timeout,
    }
}

#[test]
fn sends_ollama_wire_format_and_reads_reply() {
    let server = serve(vec![Reply::Json("Action: move_forward".into())]);
    let backend = HttpBackend::new(&server.url, "/api/generate").unwrap();
    let resp = generate(&backend, &request("where next?", Duration::from_secs(5))).unwrap();
    assert_eq!(resp.text, "Action: move_forward");
    assert_eq!(resp.prompt_token_count, Some(12));
    assert_eq!(resp.output_token_count, Some(3));
    assert!(resp.latency <= Duration::from_secs(5));
    let bodies = server.bodies.lock().unwrap();
    assert_eq!(
        bodies[0],
        serde_json::json!({
            "model": "qwen2.5:7b",
            "prompt": "where next?",
            "stream": false,
            "options": {"temperature": 0.0, "seed": 42, "num_predict": 64}
        })
    );
}

#[test]
fn classifies_failures() {
    let server = serve(vec![
        Reply::Status(500, "model not loaded".into()),
        Reply::Raw("not json".into()),
        Reply::Hang,
    ]);
    let backend = HttpBackend::new(&server.url, "api/generate").unwrap();
    let short = Duration::from_millis(300);
    assert_eq!(
        generate(&backend, &request("a", short)),
        Err(LlmError::ServerError {
            status: 500,
            body: "model not loaded".into()
        })
    );
    assert!(matches!(generate(&backend, &request("b", short)), Err(LlmError::MalformedResponse(_))));
    assert_eq!(generate(&backend, &request("c", short)), Err(LlmError::Timeout(short)));

    let dead = HttpBackend::new("http://127.0.0.1:1", "/api/generate").unwrap();
    assert!(matches!(
        generate(&dead, &request("d", short)),
        Err(LlmError::ConnectionFailed(_))
    ));
}

fn oracle_replies(cfg: &RunConfig) -> Vec<String> {
    let mut out = Vec::new();
    for i in 0..cfg.episodes as u64 {
        let s = episode_start(cfg, &episode_seeds(cfg, i, 0));
        for a in planner::shortest_plan(&s.layout, s.pose).unwrap() {
            out.push(format!("Moving on.\nAction: {}", a.name()));
        }
    }
    out
}

#[test]
fn runs_are_identical_over_either_backend() {
    let flags = StrategyFlags {
        cot: true,
        df: true,
        rf: true,
        ..StrategyFlags::HWBP
    };
    let cfg = RunConfig {
        episodes: 2,
        seed: 8,
        ..RunConfig::new(ConfigId::Crossing9x9, PolicySpec::llm(flags))
    };
    let replies = oracle_replies(&cfg);
    let server = serve(replies.iter().cloned().map(Reply::Json).collect());
    let backends: [Arc<dyn Backend>; 2] = [
        Arc::new(HttpBackend::new(&server.url, "/api/generate").unwrap()),
        Arc::new(ScriptedBackend::new(replies.clone())),
    ];
    let runs: Vec<_> = backends
        .into_iter()
        .map(|b| {
            let policy = LlmPolicy::new(b, flags, ModelSettings::default()).unwrap();
            harness::run_eval_with(&cfg, &policy).unwrap()
        })
        .collect();
    assert_eq!(runs[0].steps, runs[1].steps);
    assert_eq!(runs[0].report.summary_row(), runs[1].report.summary_row());
    assert_eq!(runs[0].report.success_rate, 100.0);
    let bodies = server.bodies.lock().unwrap();
    assert_eq!(bodies.len(), replies.len());
    for (body, step) in bodies.iter().zip(&runs[0].steps) {
        assert_eq!(body["prompt"].as_str(), step.prompt.as_deref());
    }
}
