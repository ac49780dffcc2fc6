//! Record/replay store mechanics: canonical digests, persistence, and a
//! gateway serving completions offline.
//!
//! ```bash
//! cargo run --example replay_gateway
//! ```

use annobench::gateway::{
    request_digest, ChatRequest, Gateway, ProviderConfig, ReplayMode, ReplayStore, SamplingParams,
};
use annobench::prompt::ChatMessage;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let store_path = dir.path().join("store.jsonl");
    let params = SamplingParams::default();
    let cfg = ProviderConfig {
        name: "demo".to_string(),
        endpoint: "http://unused.invalid".to_string(),
        model: "demo-model".to_string(),
        auth_env: String::new(),
        retry: Default::default(),
        in_flight_limit: 1,
        timeout_ms: 1000,
    };

    // record a couple of exchanges by hand
    let mut store = ReplayStore::open(&store_path).unwrap();
    let q1 = vec![ChatMessage::user("Given the following markers [MS4A1], …")];
    let q2 = vec![ChatMessage::user("Given the following markers [Lrp2], …")];
    let r1 = ChatRequest::new(&cfg.model, &q1, &params);
    let r2 = ChatRequest::new(&cfg.model, &q2, &params);
    store.record(&r1, "B cells").unwrap();
    store.record(&r2, "Proximal tubule cell").unwrap();
    println!("digest(q1) = {}", &request_digest(&r1)[..16]);
    println!("digest(q2) = {}", &request_digest(&r2)[..16]);
    println!("store holds {} entries at {}", store.len(), store_path.display());

    // a replay gateway answers from disk with zero network I/O
    let gateway = Gateway::http(
        cfg,
        ReplayMode::Replay,
        Some(ReplayStore::open(&store_path).unwrap()),
    )
    .unwrap();
    for messages in [&q1, &q2] {
        let text = gateway.complete(messages, &params).unwrap();
        println!("replayed: {text}");
    }
    match gateway.complete(&[ChatMessage::user("never recorded")], &params) {
        Err(e) => println!("unseen request: {e}"),
        Ok(_) => unreachable!(),
    }
}
