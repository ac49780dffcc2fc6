//! The full benchmark loop against a local deterministic provider:
//! bundle → marker selection → prompts → gateway (record) → cleanse →
//! scores → leaderboard, all inside a temp directory.
//!
//! ```bash
//! cargo run --example end_to_end
//! ```

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;

use annobench::config::RunConfig;
use annobench::dataset::save_bundle;
use annobench::run::{cmd_annotate, cmd_evaluate, cmd_report};
use annobench::synthetic::planted_bundle;

/// Minimal chat-completions endpoint whose answers are a pure function of
/// the request, so record/replay round-trips exactly.
fn spawn_mock_provider() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        for conn in listener.incoming() {
            let Ok(mut stream) = conn else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut content_length = 0usize;
            let mut line = String::new();
            loop {
                line.clear();
                if reader.read_line(&mut line).is_err() {
                    return;
                }
                let l = line.trim_end();
                if let Some(v) = l.to_ascii_lowercase().strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap_or(0);
                }
                if l.is_empty() {
                    break;
                }
            }
            let mut payload = vec![0u8; content_length];
            if reader.read_exact(&mut payload).is_err() {
                return;
            }
            let request: serde_json::Value = serde_json::from_slice(&payload).unwrap();
            let question = request["messages"][1]["content"].as_str().unwrap_or("");
            // cheat by reading the sample's type out of the marker names:
            // planted bundles name genes G000…, and each type's first
            // planted marker index encodes the type
            let text = if question.contains("step by step") && request["messages"].as_array().map(|a| a.len()) == Some(2) {
                "Let me reason about each marker in turn.".to_string()
            } else {
                match question.find("[G") {
                    Some(i) => {
                        let idx: usize = question[i + 2..i + 5].parse().unwrap_or(0);
                        format!("type{} cells", idx / 3)
                    }
                    None => "unknown".to_string(),
                }
            };
            let body = serde_json::json!({
                "choices": [{"message": {"role": "assistant", "content": text}}]
            })
            .to_string();
            let reply = format!(
                "HTTP/1.1 200 OK\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    endpoint
}

fn main() {
    let endpoint = spawn_mock_provider();
    let dir = tempfile::tempdir().unwrap();
    let (bundle, _) = planted_bundle(5, 30, 15, 3, 5.0, 2024);
    save_bundle(&bundle, &dir.path().join("bundle")).unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        format!(
            r#"bundle = "bundle"
output_dir = "out"
k_markers = 3
strategies = ["zero_shot", "cot"]

[replay]
mode = "record"
store = "store.jsonl"

[[providers]]
name = "mock"
endpoint = "{endpoint}"
model = "mock-model"
"#
        ),
    )
    .unwrap();

    let cfg = RunConfig::load(&dir.path().join("run.toml")).unwrap();
    let outcome = cmd_annotate(&cfg, dir.path(), false).unwrap();
    for slice in &outcome.slices {
        println!(
            "{} {}: ran {} samples, {} failed",
            slice.model,
            slice.strategy.as_str(),
            slice.samples_run,
            slice.failures
        );
    }
    println!("gateway calls: {:?}", outcome.gateway_calls);

    let eval = cmd_evaluate(&cfg, dir.path()).unwrap();
    println!("scored {} rows", eval.rows_scored);

    let leaderboard = cmd_report(&dir.path().join("out"), &cfg.digest()).unwrap();
    println!("\n{leaderboard}");
}
