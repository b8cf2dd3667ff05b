//! Server side of the scorer protocol, backed by [`BuiltinScorer`]. Useful as a
//! reference peer for the client and for exercising `cmd:` / `tcp:` scorers
//! without a neural model.

use std::io::{BufRead, Write};

use serde_json::{json, Value};

use super::{BuiltinScorer, Embedder, PairScorer};

pub const SERVER_NAME: &str = "builtin-lexical";

/// Answer one request line. Returns the reply line.
pub fn handle_request(backend: &mut BuiltinScorer, batch_limit: usize, line: &str) -> String {
    let req: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => return json!({"id": Value::Null, "error": format!("malformed request: {e}")}).to_string(),
    };
    let id = req.get("id").cloned().unwrap_or(Value::Null);
    let reply = match req.get("op").and_then(Value::as_str) {
        Some("hello") => Ok(json!({
            "id": id,
            "name": SERVER_NAME,
            "caps": ["score_pairs", "embed"],
            "batch_limit": batch_limit,
        })),
        Some("score_pairs") => score_pairs(backend, batch_limit, &req).map(|scores| json!({"id": id, "scores": scores})),
        Some("embed") => embed(backend, batch_limit, &req).map(|vectors| {
            json!({"id": id, "dim": backend.dim, "vectors": vectors})
        }),
        Some(op) => Err(format!("unknown op {op:?}")),
        None => Err("request has no op".to_string()),
    };
    match reply {
        Ok(v) => v.to_string(),
        Err(msg) => json!({"id": id, "error": msg}).to_string(),
    }
}

fn check_size(n: usize, batch_limit: usize) -> Result<(), String> {
    if n > batch_limit {
        Err(format!("batch of {n} exceeds batch_limit {batch_limit}"))
    } else {
        Ok(())
    }
}

fn score_pairs(backend: &mut BuiltinScorer, batch_limit: usize, req: &Value) -> Result<Vec<f64>, String> {
    let pairs: Vec<(String, String)> =
        serde_json::from_value(req.get("pairs").cloned().unwrap_or(Value::Null))
            .map_err(|e| format!("bad pairs: {e}"))?;
    check_size(pairs.len(), batch_limit)?;
    let refs: Vec<(&str, &str)> = pairs.iter().map(|(p, h)| (p.as_str(), h.as_str())).collect();
    backend
        .score_pairs(&refs)
        .map(|s| s.into_iter().map(|s| s.value()).collect())
        .map_err(|e| e.to_string())
}

fn embed(backend: &mut BuiltinScorer, batch_limit: usize, req: &Value) -> Result<Vec<Vec<f64>>, String> {
    let texts: Vec<String> = serde_json::from_value(req.get("texts").cloned().unwrap_or(Value::Null))
        .map_err(|e| format!("bad texts: {e}"))?;
    check_size(texts.len(), batch_limit)?;
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    backend
        .embed(&refs)
        .map(|vs| vs.into_iter().map(|v| v.0).collect())
        .map_err(|e| e.to_string())
}

/// Serve requests until the reader hits EOF.
pub fn serve<R: BufRead, W: Write>(
    mut backend: BuiltinScorer,
    batch_limit: usize,
    reader: R,
    mut writer: W,
) -> std::io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut reply = handle_request(&mut backend, batch_limit, &line);
        reply.push('\n');
        writer.write_all(reply.as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}
