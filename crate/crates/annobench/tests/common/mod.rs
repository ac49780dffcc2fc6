//! Independent oracles shared by the integration suites. Everything here is
//! deliberately written from the definitions (dense loops, quadrature), not
//! by calling the library's implementation paths.

#![allow(dead_code)]

use std::collections::BTreeMap;

/// Recursive adaptive Simpson integration.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fb: f64,
        fc: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let c = 0.5 * (a + b);
        let lm = 0.5 * (a + c);
        let rm = 0.5 * (c + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (c - a) / 6.0 * (fa + 4.0 * flm + fc);
        let right = (b - c) / 6.0 * (fc + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, c, fa, fc, flm, left, 0.5 * tol, depth - 1)
                + rec(f, c, b, fc, fb, frm, right, 0.5 * tol, depth - 1)
        }
    }
    let c = 0.5 * (a + b);
    let fa = f(a);
    let fb = f(b);
    let fc = f(c);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    rec(f, a, b, fa, fb, fc, whole, tol, 60)
}

fn unnormalized_t_tail(t: f64, dof: f64) -> f64 {
    // substitute u = t + s/(1-s) to map [t, ∞) onto [0, 1)
    let integrand = move |s: f64| {
        let u = t + s / (1.0 - s);
        let ln_g = -(dof + 1.0) * 0.5 * (1.0 + u * u / dof).ln();
        let ln_jac = -2.0 * (1.0 - s).ln();
        (ln_g + ln_jac).exp()
    };
    adaptive_simpson(&integrand, 0.0, 1.0 - 1e-12, 1e-13)
}

/// Student-t survival function by quadrature of the unnormalized density;
/// never touches the gamma/beta machinery under test.
pub fn student_sf_quadrature(t: f64, dof: f64) -> f64 {
    unnormalized_t_tail(t, dof) / (2.0 * unnormalized_t_tail(0.0, dof))
}

/// Straight-line multi-reference sentence BLEU: positional n-gram scans,
/// add-one smoothing only on zero-match orders, closest-/shorter-reference
/// brevity penalty.
pub fn oracle_bleu(cand: &[&str], references: &[Vec<&str>]) -> (f64, f64, f64) {
    fn precision(cand: &[&str], references: &[Vec<&str>], n: usize) -> f64 {
        let grams: Vec<&[&str]> = if cand.len() >= n {
            (0..=cand.len() - n).map(|i| &cand[i..i + n]).collect()
        } else {
            vec![]
        };
        let total = grams.len();
        let mut matches = 0;
        let mut counted: Vec<&[&str]> = vec![];
        for g in &grams {
            if counted.contains(g) {
                continue;
            }
            counted.push(g);
            let cand_count = grams.iter().filter(|x| x == &g).count();
            let mut best = 0;
            for r in references {
                let mut c = 0;
                if r.len() >= n {
                    for i in 0..=r.len() - n {
                        if &r[i..i + n] == *g {
                            c += 1;
                        }
                    }
                }
                best = best.max(c);
            }
            matches += cand_count.min(best);
        }
        if matches == 0 {
            (matches + 1) as f64 / (total + 1) as f64
        } else {
            matches as f64 / total as f64
        }
    }
    if cand.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let p1 = precision(cand, references, 1);
    let p2 = precision(cand, references, 2);
    let mut best_len = usize::MAX;
    let mut best_key = (usize::MAX, usize::MAX);
    for r in references {
        let key = (r.len().abs_diff(cand.len()), r.len());
        if key < best_key {
            best_key = key;
            best_len = r.len();
        }
    }
    let bp = if cand.len() >= best_len {
        1.0
    } else {
        (1.0 - best_len as f64 / cand.len() as f64).exp()
    };
    let b1 = bp * p1;
    let b2 = bp * (p1 * p2).sqrt();
    (b1, b2, (b1 * b2).sqrt())
}

/// Exact-match oracle: plain string comparison against every reference.
pub fn oracle_em(candidate: &str, references: &[String]) -> f64 {
    for r in references {
        if r == candidate {
            return 1.0;
        }
    }
    0.0
}

/// A deterministic local chat-completions server: each response is a pure
/// function of the request body, so recorded runs replay exactly.
pub struct MockChatServer {
    pub endpoint: String,
    pub served: std::sync::Arc<std::sync::atomic::AtomicUsize>,
}

fn fnv64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn spawn_chat_server() -> MockChatServer {
    use std::io::{BufRead, BufReader, Read, Write};
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}", listener.local_addr().unwrap());
    let served = std::sync::Arc::new(std::sync::atomic::AtomicUsize::new(0));
    let count = std::sync::Arc::clone(&served);
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
            let last = request["messages"]
                .as_array()
                .and_then(|a| a.last())
                .and_then(|m| m["content"].as_str())
                .unwrap_or("")
                .to_string();
            let tag = format!("{:016x}", fnv64(&payload));
            let text = if last.ends_with("Let's think step by step.") {
                format!("Working through the markers one by one (trace {tag}) suggests a lymphoid profile.")
            } else {
                format!("synthetic type {}", &tag[..6])
            };
            let body = serde_json::json!({
                "choices": [{"message": {"role": "assistant", "content": text}}]
            })
            .to_string();
            let reply = format!(
                "HTTP/1.1 200 OK\r\ncontent-length: {}\r\ncontent-type: application/json\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(reply.as_bytes());
            count.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        }
    });
    MockChatServer { endpoint, served }
}

/// Relative path → bytes for every file under `root`.
pub fn snapshot_tree(root: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Token-F1 oracle via explicit sorted multisets.
pub fn oracle_f1(candidate: &str, references: &[String]) -> f64 {
    let cand: Vec<&str> = candidate.split_whitespace().collect();
    let mut best = 0.0f64;
    for r in references {
        let rt: Vec<&str> = r.split_whitespace().collect();
        if cand.is_empty() && rt.is_empty() {
            best = best.max(1.0);
            continue;
        }
        if cand.is_empty() || rt.is_empty() {
            continue;
        }
        let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for t in &cand {
            counts.entry(t).or_default().0 += 1;
        }
        for t in &rt {
            counts.entry(t).or_default().1 += 1;
        }
        let overlap: usize = counts.values().map(|&(a, b)| a.min(b)).sum();
        if overlap == 0 {
            continue;
        }
        let p = overlap as f64 / cand.len() as f64;
        let rec = overlap as f64 / rt.len() as f64;
        best = best.max(2.0 * p * rec / (p + rec));
    }
    best
}
