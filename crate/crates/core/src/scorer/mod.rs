//! Scoring backends behind one interface.
//!
//! Two capabilities matter to the classifiers: scoring (premise, hypothesis)
//! pairs with a match probability, and embedding texts. The built-in backend
//! does both deterministically (token-set Jaccard and hashed bag-of-tokens);
//! neural backends live in another process and are reached through the line
//! protocol in [`remote`].

pub mod remote;
pub mod server;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub use remote::{LineTransport, RemoteScorer, ScriptedTransport, Transport};

pub const DEFAULT_BATCH_LIMIT: usize = 900;
pub const DEFAULT_EMBED_DIM: usize = 256;
pub const MIN_EMBED_DIM: usize = 8;

/// Basis for the token hash used by [`hash_embed`]: the FNV-1a offset basis
/// XOR the ASCII bytes of "fewshot!".
pub const HASH_EMBED_BASIS: u64 = 0xcbf2_9ce4_8422_2325 ^ 0x6665_7773_686f_7421;

/// A match probability in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct MatchScore(f64);

impl MatchScore {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(MatchScore(value))
        } else {
            Err(Error::validation(format!("match score {value} outside [0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for MatchScore {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        MatchScore::new(v)
    }
}

impl From<MatchScore> for f64 {
    fn from(s: MatchScore) -> f64 {
        s.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Cosine similarity; zero when either vector is all zeros.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

fn require_text(text: &str) -> Result<()> {
    if text.trim().is_empty() {
        Err(Error::validation("empty text cannot be scored"))
    } else {
        Ok(())
    }
}

/// Jaccard similarity of the lowercase whitespace-token sets.
pub fn lexical_score(a: &str, b: &str) -> Result<MatchScore> {
    require_text(a)?;
    require_text(b)?;
    let sa: BTreeSet<String> = tokens(a).collect();
    let sb: BTreeSet<String> = tokens(b).collect();
    let inter = sa.intersection(&sb).count();
    let union = sa.len() + sb.len() - inter;
    MatchScore::new(inter as f64 / union as f64)
}

/// Hashed bag-of-tokens embedding.
///
/// Each lowercase whitespace token is hashed with FNV-1a 64 (basis
/// [`HASH_EMBED_BASIS`]) into bucket `hash % dim`; bucket counts are then
/// L2-normalized. Components are non-negative, so cosine similarities between
/// two of these vectors lie in `[0, 1]`.
pub fn hash_embed(text: &str, dim: usize) -> Result<Embedding> {
    require_text(text)?;
    if dim < MIN_EMBED_DIM {
        return Err(Error::validation(format!(
            "embedding dim {dim} is below the minimum of {MIN_EMBED_DIM}"
        )));
    }
    let mut v = vec![0.0; dim];
    for tok in tokens(text) {
        let h = seed::fnv1a64_with_basis(tok.as_bytes(), HASH_EMBED_BASIS);
        v[(h % dim as u64) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(Embedding(v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    ScorePairs,
    Embed,
    Classify,
}

impl Capability {
    pub fn wire_name(self) -> &'static str {
        match self {
            Capability::ScorePairs => "score_pairs",
            Capability::Embed => "embed",
            Capability::Classify => "classify",
        }
    }

    pub fn from_wire(s: &str) -> Option<Self> {
        match s {
            "score_pairs" => Some(Capability::ScorePairs),
            "embed" => Some(Capability::Embed),
            "classify" => Some(Capability::Classify),
            _ => None,
        }
    }
}

/// How an input is paired with a bank example before pairwise scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairDirection {
    /// (input as premise, example as hypothesis).
    #[default]
    InputFirst,
    /// (example as premise, input as hypothesis).
    ExampleFirst,
    /// Score both orders and keep the larger.
    BothMax,
}

impl PairDirection {
    /// Pairwise-score calls needed per example.
    pub fn calls_per_example(self) -> usize {
        match self {
            PairDirection::BothMax => 2,
            _ => 1,
        }
    }
}

impl FromStr for PairDirection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "input-first" => Ok(PairDirection::InputFirst),
            "example-first" => Ok(PairDirection::ExampleFirst),
            "both-max" => Ok(PairDirection::BothMax),
            other => Err(Error::Usage(format!(
                "unknown pair direction {other:?} (input-first, example-first, both-max)"
            ))),
        }
    }
}

impl fmt::Display for PairDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairDirection::InputFirst => "input-first",
            PairDirection::ExampleFirst => "example-first",
            PairDirection::BothMax => "both-max",
        })
    }
}

/// Anything that can score (premise, hypothesis) pairs.
pub trait PairScorer {
    fn score_pairs(&mut self, pairs: &[(&str, &str)]) -> Result<Vec<MatchScore>>;
}

/// Anything that can embed texts.
pub trait Embedder {
    fn embed(&mut self, texts: &[&str]) -> Result<Vec<Embedding>>;
}

impl<T: PairScorer + ?Sized> PairScorer for &mut T {
    fn score_pairs(&mut self, pairs: &[(&str, &str)]) -> Result<Vec<MatchScore>> {
        (**self).score_pairs(pairs)
    }
}

impl<T: Embedder + ?Sized> Embedder for &mut T {
    fn embed(&mut self, texts: &[&str]) -> Result<Vec<Embedding>> {
        (**self).embed(texts)
    }
}

/// Deterministic in-process backend: Jaccard pair scores and hashed embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuiltinScorer {
    pub dim: usize,
}

impl Default for BuiltinScorer {
    fn default() -> Self {
        BuiltinScorer {
            dim: DEFAULT_EMBED_DIM,
        }
    }
}

impl PairScorer for BuiltinScorer {
    fn score_pairs(&mut self, pairs: &[(&str, &str)]) -> Result<Vec<MatchScore>> {
        pairs.iter().map(|(p, h)| lexical_score(p, h)).collect()
    }
}

impl Embedder for BuiltinScorer {
    fn embed(&mut self, texts: &[&str]) -> Result<Vec<Embedding>> {
        texts.iter().map(|t| hash_embed(t, self.dim)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScorerKind {
    BuiltinLexical,
    Remote,
}

/// A live scorer: the built-in backend or a connected remote process.
///
/// A remote handle owns one connection and serializes its requests; it can be
/// moved to another thread but not shared.
pub enum ScorerHandle {
    Builtin(BuiltinScorer),
    Remote(RemoteScorer),
}

impl fmt::Debug for ScorerHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScorerHandle::Builtin(b) => f.debug_tuple("Builtin").field(b).finish(),
            ScorerHandle::Remote(r) => f
                .debug_struct("Remote")
                .field("name", &r.name())
                .field("batch_limit", &r.batch_limit())
                .finish(),
        }
    }
}

impl ScorerHandle {
    pub fn builtin(dim: usize) -> Self {
        ScorerHandle::Builtin(BuiltinScorer { dim })
    }

    pub fn kind(&self) -> ScorerKind {
        match self {
            ScorerHandle::Builtin(_) => ScorerKind::BuiltinLexical,
            ScorerHandle::Remote(_) => ScorerKind::Remote,
        }
    }

    pub fn capabilities(&self) -> BTreeSet<Capability> {
        match self {
            ScorerHandle::Builtin(_) => [Capability::ScorePairs, Capability::Embed].into(),
            ScorerHandle::Remote(r) => r.capabilities().clone(),
        }
    }

    pub fn has(&self, cap: Capability) -> bool {
        self.capabilities().contains(&cap)
    }

    pub fn batch_limit(&self) -> usize {
        match self {
            ScorerHandle::Builtin(_) => usize::MAX,
            ScorerHandle::Remote(r) => r.batch_limit(),
        }
    }

    pub fn as_remote_mut(&mut self) -> Option<&mut RemoteScorer> {
        match self {
            ScorerHandle::Remote(r) => Some(r),
            ScorerHandle::Builtin(_) => None,
        }
    }
}

impl PairScorer for ScorerHandle {
    fn score_pairs(&mut self, pairs: &[(&str, &str)]) -> Result<Vec<MatchScore>> {
        match self {
            ScorerHandle::Builtin(b) => b.score_pairs(pairs),
            ScorerHandle::Remote(r) => r.score_pairs(pairs),
        }
    }
}

impl Embedder for ScorerHandle {
    fn embed(&mut self, texts: &[&str]) -> Result<Vec<Embedding>> {
        match self {
            ScorerHandle::Builtin(b) => b.embed(texts),
            ScorerHandle::Remote(r) => r.embed(texts),
        }
    }
}

/// Where a scorer comes from: `builtin`, `cmd:<program and args>` or
/// `tcp:<host>:<port>`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ScorerSpec {
    #[default]
    Builtin,
    Command(String),
    Tcp(String),
}

impl FromStr for ScorerSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "builtin" {
            Ok(ScorerSpec::Builtin)
        } else if let Some(cmd) = s.strip_prefix("cmd:") {
            if cmd.split_whitespace().next().is_none() {
                return Err(Error::Usage("empty scorer command".into()));
            }
            Ok(ScorerSpec::Command(cmd.to_string()))
        } else if let Some(addr) = s.strip_prefix("tcp:") {
            if !addr.contains(':') {
                return Err(Error::Usage(format!("scorer address {addr:?} needs host:port")));
            }
            Ok(ScorerSpec::Tcp(addr.to_string()))
        } else {
            Err(Error::Usage(format!(
                "unknown scorer {s:?} (expected builtin, cmd:<command> or tcp:<host>:<port>)"
            )))
        }
    }
}

impl TryFrom<String> for ScorerSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ScorerSpec> for String {
    fn from(s: ScorerSpec) -> String {
        s.to_string()
    }
}

impl fmt::Display for ScorerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScorerSpec::Builtin => f.write_str("builtin"),
            ScorerSpec::Command(c) => write!(f, "cmd:{c}"),
            ScorerSpec::Tcp(a) => write!(f, "tcp:{a}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScorerOptions {
    pub batch_limit: usize,
    pub embed_dim: usize,
}

impl Default for ScorerOptions {
    fn default() -> Self {
        ScorerOptions {
            batch_limit: DEFAULT_BATCH_LIMIT,
            embed_dim: DEFAULT_EMBED_DIM,
        }
    }
}

impl ScorerSpec {
    pub fn is_remote(&self) -> bool {
        !matches!(self, ScorerSpec::Builtin)
    }

    /// Open a handle. Remote specs spawn or connect and complete the hello
    /// handshake before returning.
    pub fn open(&self, opts: ScorerOptions) -> Result<ScorerHandle> {
        match self {
            ScorerSpec::Builtin => {
                if opts.embed_dim < MIN_EMBED_DIM {
                    return Err(Error::validation(format!(
                        "embedding dim {} is below the minimum of {MIN_EMBED_DIM}",
                        opts.embed_dim
                    )));
                }
                Ok(ScorerHandle::builtin(opts.embed_dim))
            }
            ScorerSpec::Command(cmd) => {
                let transport = remote::spawn_command(cmd)?;
                Ok(ScorerHandle::Remote(RemoteScorer::connect(transport, opts.batch_limit)?))
            }
            ScorerSpec::Tcp(addr) => {
                let transport = remote::connect_tcp(addr)?;
                Ok(ScorerHandle::Remote(RemoteScorer::connect(transport, opts.batch_limit)?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexical_examples() {
        assert_eq!(lexical_score("pay my bill", "pay my bill").unwrap().value(), 1.0);
        assert_eq!(lexical_score("alpha beta", "gamma delta").unwrap().value(), 0.0);
        assert_eq!(lexical_score("a b", "a c").unwrap().value(), 1.0 / 3.0);
        assert_eq!(lexical_score("Pay  MY bill", "pay my bill").unwrap().value(), 1.0);
        assert!(lexical_score("", "x").is_err());
        assert!(lexical_score("x", "   ").is_err());
    }

    #[test]
    fn hash_embed_single_token_is_one_hot() {
        let v = hash_embed("balance", 16).unwrap();
        let nonzero: Vec<f64> = v.0.iter().copied().filter(|x| *x != 0.0).collect();
        assert_eq!(nonzero, vec![1.0]);
    }

    #[test]
    fn hash_embed_is_normalized_and_deterministic() {
        let a = hash_embed("transfer ten dollars to savings", 32).unwrap();
        let b = hash_embed("transfer ten dollars to savings", 32).unwrap();
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert!((cosine(&a.0, &b.0) - 1.0).abs() < 1e-12);
        assert!(hash_embed("x", 7).is_err());
        assert!(hash_embed(" ", 16).is_err());
    }

    #[test]
    fn cosine_handles_zero_vectors() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert_eq!(cosine(&[1.0, 0.0], &[-1.0, 0.0]), -1.0);
    }

    #[test]
    fn scorer_spec_parsing() {
        assert_eq!("builtin".parse::<ScorerSpec>().unwrap(), ScorerSpec::Builtin);
        assert_eq!(
            "cmd:python3 serve.py".parse::<ScorerSpec>().unwrap(),
            ScorerSpec::Command("python3 serve.py".into())
        );
        assert_eq!(
            "tcp:127.0.0.1:7000".parse::<ScorerSpec>().unwrap(),
            ScorerSpec::Tcp("127.0.0.1:7000".into())
        );
        assert!("tcp:localhost".parse::<ScorerSpec>().is_err());
        assert!("grpc:x".parse::<ScorerSpec>().is_err());
        assert!("cmd:  ".parse::<ScorerSpec>().is_err());
    }

    #[test]
    fn match_score_bounds() {
        assert!(MatchScore::new(-0.01).is_err());
        assert!(MatchScore::new(1.01).is_err());
        assert!(MatchScore::new(f64::NAN).is_err());
        assert_eq!(MatchScore::new(0.5).unwrap().value(), 0.5);
    }
}
