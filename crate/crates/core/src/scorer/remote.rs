//! Client side of the line-delimited scorer protocol.
//!
//! Each request is one JSON object on one line, tagged with an id that
//! strictly increases per connection. Each reply must echo that id. Replies
//! are checked (id, cardinality, score range, vector dims) before any value
//! reaches a caller.

use std::collections::BTreeSet;
use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex};

use serde::Deserialize;
use serde_json::{json, Value};

use super::{Capability, Embedder, Embedding, MatchScore, PairScorer};
use crate::error::{Error, Result};

/// A bidirectional line channel.
pub trait Transport: Send {
    fn send_line(&mut self, line: &str) -> io::Result<()>;
    /// Next line without its terminator. EOF is an error.
    fn recv_line(&mut self) -> io::Result<String>;
}

/// Transport over any buffered reader/writer pair. Optionally owns the child
/// process on the other end and kills it on drop.
pub struct LineTransport<R, W> {
    reader: R,
    writer: W,
    child: Option<Child>,
}

impl<R: BufRead + Send, W: Write + Send> LineTransport<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        LineTransport {
            reader,
            writer,
            child: None,
        }
    }
}

impl<R: BufRead + Send, W: Write + Send> Transport for LineTransport<R, W> {
    fn send_line(&mut self, line: &str) -> io::Result<()> {
        let mut buf = Vec::with_capacity(line.len() + 1);
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
        self.writer.write_all(&buf)?;
        self.writer.flush()
    }

    fn recv_line(&mut self) -> io::Result<String> {
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "scorer closed the connection",
            ));
        }
        while line.ends_with('\n') || line.ends_with('\r') {
            line.pop();
        }
        Ok(line)
    }
}

impl<R, W> Drop for LineTransport<R, W> {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Spawn `cmd` (split on whitespace, no shell) and talk to it over stdio.
pub fn spawn_command(cmd: &str) -> Result<LineTransport<BufReader<ChildStdout>, ChildStdin>> {
    let mut parts = cmd.split_whitespace();
    let program = parts
        .next()
        .ok_or_else(|| Error::Usage("empty scorer command".into()))?;
    let mut child = Command::new(program)
        .args(parts)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(Error::Transport)?;
    let stdin = child.stdin.take().expect("piped stdin");
    let stdout = child.stdout.take().expect("piped stdout");
    Ok(LineTransport {
        reader: BufReader::new(stdout),
        writer: stdin,
        child: Some(child),
    })
}

pub fn connect_tcp(addr: &str) -> Result<LineTransport<BufReader<TcpStream>, TcpStream>> {
    let stream = TcpStream::connect(addr).map_err(Error::Transport)?;
    stream.set_nodelay(true).map_err(Error::Transport)?;
    let reader = stream.try_clone().map_err(Error::Transport)?;
    Ok(LineTransport::new(BufReader::new(reader), stream))
}

type Responder = Box<dyn FnMut(&Value) -> Option<String> + Send>;

/// In-memory transport driven by a closure: each request is parsed and handed
/// to the closure, whose return value is the raw reply line (`None` simulates
/// a dropped connection). Every request is kept in [`ScriptedTransport::log`].
pub struct ScriptedTransport {
    respond: Responder,
    pending: Option<Option<String>>,
    log: Arc<Mutex<Vec<Value>>>,
}

impl ScriptedTransport {
    pub fn new(respond: impl FnMut(&Value) -> Option<String> + Send + 'static) -> Self {
        ScriptedTransport {
            respond: Box::new(respond),
            pending: None,
            log: Arc::default(),
        }
    }

    pub fn log(&self) -> Arc<Mutex<Vec<Value>>> {
        Arc::clone(&self.log)
    }
}

impl Transport for ScriptedTransport {
    fn send_line(&mut self, line: &str) -> io::Result<()> {
        let value: Value = serde_json::from_str(line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        self.pending = Some((self.respond)(&value));
        self.log.lock().expect("log lock").push(value);
        Ok(())
    }

    fn recv_line(&mut self) -> io::Result<String> {
        match self.pending.take() {
            Some(Some(line)) => Ok(line),
            _ => Err(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "scripted scorer hung up",
            )),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
struct Reply {
    id: Option<u64>,
    error: Option<String>,
    name: Option<String>,
    caps: Option<Vec<String>>,
    batch_limit: Option<u64>,
    scores: Option<Vec<f64>>,
    dim: Option<usize>,
    vectors: Option<Vec<Vec<f64>>>,
    labels: Option<Vec<String>>,
    probs: Option<Vec<Vec<f64>>>,
}

/// Output of the remote `classify` op: `labels` names the probability columns,
/// `probs` holds one row per input text.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub labels: Vec<String>,
    pub probs: Vec<Vec<f64>>,
}

/// Tolerance on a classify row summing to one.
const PROB_SUM_TOLERANCE: f64 = 1e-3;

pub struct RemoteScorer {
    transport: Box<dyn Transport>,
    next_id: u64,
    name: String,
    caps: BTreeSet<Capability>,
    batch_limit: usize,
    dim: Option<usize>,
    requests: usize,
}

impl RemoteScorer {
    /// Perform the hello handshake. The effective batch limit is the smaller of
    /// `client_batch_limit` and the server's advertised limit.
    pub fn connect(transport: impl Transport + 'static, client_batch_limit: usize) -> Result<Self> {
        if client_batch_limit == 0 {
            return Err(Error::validation("batch limit must be positive"));
        }
        let mut scorer = RemoteScorer {
            transport: Box::new(transport),
            next_id: 0,
            name: String::new(),
            caps: BTreeSet::new(),
            batch_limit: client_batch_limit,
            dim: None,
            requests: 0,
        };
        let reply = scorer.call(json!({"op": "hello"}))?;
        scorer.name = reply
            .name
            .ok_or_else(|| Error::protocol("hello reply lacks \"name\""))?;
        let caps = reply
            .caps
            .ok_or_else(|| Error::protocol("hello reply lacks \"caps\""))?;
        scorer.caps = caps.iter().filter_map(|c| Capability::from_wire(c)).collect();
        let server_limit = reply
            .batch_limit
            .ok_or_else(|| Error::protocol("hello reply lacks \"batch_limit\""))?;
        if server_limit == 0 {
            return Err(Error::protocol("server advertised batch_limit 0"));
        }
        scorer.batch_limit = client_batch_limit.min(usize::try_from(server_limit).unwrap_or(usize::MAX));
        Ok(scorer)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn capabilities(&self) -> &BTreeSet<Capability> {
        &self.caps
    }

    pub fn batch_limit(&self) -> usize {
        self.batch_limit
    }

    /// Requests sent so far, including the handshake.
    pub fn requests_sent(&self) -> usize {
        self.requests
    }

    fn require(&self, cap: Capability) -> Result<()> {
        if self.caps.contains(&cap) {
            Ok(())
        } else {
            Err(Error::Usage(format!(
                "scorer {:?} does not declare the {} capability",
                self.name,
                cap.wire_name()
            )))
        }
    }

    fn call(&mut self, mut request: Value) -> Result<Reply> {
        let id = self.next_id;
        self.next_id += 1;
        request["id"] = json!(id);
        let line = serde_json::to_string(&request).expect("request serializes");
        self.transport.send_line(&line).map_err(Error::Transport)?;
        self.requests += 1;
        let raw = self.transport.recv_line().map_err(Error::Transport)?;
        let reply: Reply = serde_json::from_str(&raw)
            .map_err(|e| Error::protocol(format!("malformed reply to request {id}: {e}")))?;
        match reply.id {
            Some(got) if got == id => {}
            Some(got) => {
                return Err(Error::protocol(format!(
                    "reply id {got} does not match request id {id}"
                )))
            }
            None => return Err(Error::protocol(format!("reply to request {id} has no id"))),
        }
        if let Some(msg) = &reply.error {
            return Err(Error::protocol(format!("scorer rejected request {id}: {msg}")));
        }
        Ok(reply)
    }

    pub fn classify(&mut self, texts: &[&str]) -> Result<Classification> {
        self.require(Capability::Classify)?;
        check_texts(texts)?;
        let mut labels: Option<Vec<String>> = None;
        let mut probs = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_limit) {
            let reply = self.call(json!({"op": "classify", "texts": chunk}))?;
            let got_labels = reply
                .labels
                .ok_or_else(|| Error::protocol("classify reply lacks \"labels\""))?;
            let rows = reply
                .probs
                .ok_or_else(|| Error::protocol("classify reply lacks \"probs\""))?;
            if rows.len() != chunk.len() {
                return Err(Error::protocol(format!(
                    "classify reply has {} rows for {} texts",
                    rows.len(),
                    chunk.len()
                )));
            }
            match &labels {
                Some(prev) if *prev != got_labels => {
                    return Err(Error::protocol("classify label set changed between replies"))
                }
                _ => labels = Some(got_labels.clone()),
            }
            for row in rows {
                if row.len() != got_labels.len() {
                    return Err(Error::protocol(format!(
                        "classify row has {} probabilities for {} labels",
                        row.len(),
                        got_labels.len()
                    )));
                }
                if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(Error::protocol("classify probability outside [0, 1]"));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                    return Err(Error::protocol(format!("classify row sums to {sum}")));
                }
                probs.push(row);
            }
        }
        Ok(Classification {
            labels: labels.unwrap_or_default(),
            probs,
        })
    }
}

fn check_texts(texts: &[&str]) -> Result<()> {
    if texts.is_empty() {
        return Err(Error::validation("no texts to send"));
    }
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(Error::validation(format!("text {i} is empty")));
    }
    Ok(())
}

impl PairScorer for RemoteScorer {
    fn score_pairs(&mut self, pairs: &[(&str, &str)]) -> Result<Vec<MatchScore>> {
        self.require(Capability::ScorePairs)?;
        if pairs.is_empty() {
            return Err(Error::validation("no pairs to score"));
        }
        if let Some(i) = pairs
            .iter()
            .position(|(p, h)| p.trim().is_empty() || h.trim().is_empty())
        {
            return Err(Error::validation(format!("pair {i} has an empty text")));
        }
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(self.batch_limit) {
            let wire: Vec<[&str; 2]> = chunk.iter().map(|&(p, h)| [p, h]).collect();
            let reply = self.call(json!({"op": "score_pairs", "pairs": wire}))?;
            let scores = reply
                .scores
                .ok_or_else(|| Error::protocol("score_pairs reply lacks \"scores\""))?;
            if scores.len() != chunk.len() {
                return Err(Error::protocol(format!(
                    "score_pairs reply has {} scores for {} pairs",
                    scores.len(),
                    chunk.len()
                )));
            }
            for s in scores {
                out.push(
                    MatchScore::new(s)
                        .map_err(|_| Error::protocol(format!("score {s} outside [0, 1]")))?,
                );
            }
        }
        Ok(out)
    }
}

impl Embedder for RemoteScorer {
    fn embed(&mut self, texts: &[&str]) -> Result<Vec<Embedding>> {
        self.require(Capability::Embed)?;
        check_texts(texts)?;
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_limit) {
            let reply = self.call(json!({"op": "embed", "texts": chunk}))?;
            let vectors = reply
                .vectors
                .ok_or_else(|| Error::protocol("embed reply lacks \"vectors\""))?;
            if vectors.len() != chunk.len() {
                return Err(Error::protocol(format!(
                    "embed reply has {} vectors for {} texts",
                    vectors.len(),
                    chunk.len()
                )));
            }
            let dim = reply
                .dim
                .or_else(|| vectors.first().map(Vec::len))
                .unwrap_or(0);
            if dim == 0 {
                return Err(Error::protocol("embed reply has dimension 0"));
            }
            if let Some(session) = self.dim {
                if session != dim {
                    return Err(Error::protocol(format!(
                        "embedding dim changed from {session} to {dim}"
                    )));
                }
            }
            for v in vectors {
                if v.len() != dim {
                    return Err(Error::protocol(format!(
                        "vector of length {} in a reply declaring dim {dim}",
                        v.len()
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::protocol("non-finite embedding component"));
                }
                out.push(Embedding(v));
            }
            self.dim = Some(dim);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hello(caps: &[&str], limit: u64) -> impl FnMut(&Value) -> Option<String> + Send + 'static {
        let caps: Vec<String> = caps.iter().map(|s| s.to_string()).collect();
        move |req| {
            let id = req["id"].as_u64().unwrap();
            Some(match req["op"].as_str().unwrap() {
                "hello" => json!({"id": id, "name": "mock", "caps": caps, "batch_limit": limit}).to_string(),
                "score_pairs" => {
                    let n = req["pairs"].as_array().unwrap().len();
                    json!({"id": id, "scores": vec![0.5; n]}).to_string()
                }
                "embed" => {
                    let texts = req["texts"].as_array().unwrap();
                    let vectors: Vec<Vec<f64>> = (0..texts.len())
                        .map(|i| (0..4).map(|j| if j == i % 4 { 1.0 } else { 0.0 }).collect())
                        .collect();
                    json!({"id": id, "dim": 4, "vectors": vectors}).to_string()
                }
                other => json!({"id": id, "error": format!("unknown op {other}")}).to_string(),
            })
        }
    }

    #[test]
    fn echo_scores_and_chunking() {
        let t = ScriptedTransport::new(hello(&["score_pairs", "embed"], 1000));
        let log = t.log();
        let mut s = RemoteScorer::connect(t, 900).unwrap();
        assert_eq!(s.batch_limit(), 900);
        let out = s.score_pairs(&[("a", "b"), ("c", "d")]).unwrap();
        assert_eq!(out.iter().map(|s| s.value()).collect::<Vec<_>>(), vec![0.5, 0.5]);
        let ids: Vec<u64> = log.lock().unwrap().iter().map(|r| r["id"].as_u64().unwrap()).collect();
        assert_eq!(ids, vec![0, 1]);
    }

    #[test]
    fn server_limit_wins_when_smaller() {
        let s = RemoteScorer::connect(ScriptedTransport::new(hello(&["embed"], 4)), 900).unwrap();
        assert_eq!(s.batch_limit(), 4);
    }

    #[test]
    fn embed_chunks_and_passes_vectors_through() {
        let t = ScriptedTransport::new(hello(&["embed"], 4));
        let log = t.log();
        let mut s = RemoteScorer::connect(t, 900).unwrap();
        let texts: Vec<String> = (0..10).map(|i| format!("t{i}")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let vs = s.embed(&refs).unwrap();
        assert_eq!(vs.len(), 10);
        assert_eq!(vs[1].0, vec![0.0, 1.0, 0.0, 0.0]);
        let sizes: Vec<usize> = log.lock().unwrap()[1..]
            .iter()
            .map(|r| r["texts"].as_array().unwrap().len())
            .collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn empty_text_rejected_before_sending() {
        let t = ScriptedTransport::new(hello(&["embed"], 4));
        let log = t.log();
        let mut s = RemoteScorer::connect(t, 900).unwrap();
        let err = s.embed(&["fine", " "]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert_eq!(log.lock().unwrap().len(), 1);
    }

    #[test]
    fn missing_capability_is_usage_error() {
        let mut s = RemoteScorer::connect(ScriptedTransport::new(hello(&["embed"], 4)), 900).unwrap();
        assert!(matches!(s.score_pairs(&[("a", "b")]), Err(Error::Usage(_))));
        assert!(matches!(s.classify(&["a"]), Err(Error::Usage(_))));
    }

    #[test]
    fn hangup_is_retryable_transport_error() {
        let mut calls = 0;
        let t = ScriptedTransport::new(move |req| {
            calls += 1;
            let id = req["id"].as_u64().unwrap();
            (calls == 1).then(|| json!({"id": id, "name": "m", "caps": ["score_pairs"], "batch_limit": 5}).to_string())
        });
        let mut s = RemoteScorer::connect(t, 900).unwrap();
        let err = s.score_pairs(&[("a", "b")]).unwrap_err();
        assert!(err.is_retryable(), "{err}");
    }

    #[test]
    fn remote_error_record_is_protocol_error() {
        let mut s = RemoteScorer::connect(ScriptedTransport::new(hello(&["classify"], 4)), 900).unwrap();
        let err = s.classify(&["a"]).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
        assert!(!err.is_retryable());
    }

    #[test]
    fn classify_validates_rows() {
        let mk = |probs: Value| {
            ScriptedTransport::new(move |req| {
                let id = req["id"].as_u64().unwrap();
                Some(if req["op"] == "hello" {
                    json!({"id": id, "name": "c", "caps": ["classify"], "batch_limit": 10}).to_string()
                } else {
                    json!({"id": id, "labels": ["a", "b"], "probs": probs}).to_string()
                })
            })
        };
        let mut ok = RemoteScorer::connect(mk(json!([[0.25, 0.75]])), 900).unwrap();
        let c = ok.classify(&["x"]).unwrap();
        assert_eq!(c.labels, vec!["a", "b"]);
        assert_eq!(c.probs, vec![vec![0.25, 0.75]]);
        let mut bad = RemoteScorer::connect(mk(json!([[0.5, 0.75]])), 900).unwrap();
        assert!(matches!(bad.classify(&["x"]), Err(Error::Protocol(_))));
        let mut short = RemoteScorer::connect(mk(json!([[1.0]])), 900).unwrap();
        assert!(matches!(short.classify(&["x"]), Err(Error::Protocol(_))));
    }

    #[test]
    fn hello_must_be_complete() {
        let t = ScriptedTransport::new(|req| Some(json!({"id": req["id"], "caps": []}).to_string()));
        assert!(matches!(RemoteScorer::connect(t, 900), Err(Error::Protocol(_))));
    }
}
