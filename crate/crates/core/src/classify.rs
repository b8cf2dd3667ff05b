//! Decision rules sharing one threshold-gated prediction contract:
//!
//! * **DNNC**: score the input against every bank example with a pairwise
//!   match scorer; the best match's label wins if its score clears the
//!   threshold.
//! * **Emb-kNN**: cosine nearest neighbors over embeddings; confidence is the
//!   nearest similarity mapped to `[0, 1]` by `(s + 1) / 2`.
//! * **Classifier**: softmax over cosine to per-intent centroids (or a remote
//!   `classify` model when the backend offers one).
//! * **DNNC-joint**: retrieve `top_k` candidates by embedding cosine, then run
//!   the DNNC rule on those candidates only.
//!
//! Scoring and thresholding are separate steps: [`Model::score`] yields a
//! [`Scored`] instance once, and [`Scored::decide`] applies any threshold.
//! Ties are always broken by bank order, i.e. (intent name, example index).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{FewShotSet, Label};
use crate::error::{Error, Result};
use crate::scorer::remote::Classification;
use crate::scorer::{
    cosine, BuiltinScorer, Embedder, Embedding, MatchScore, PairDirection, PairScorer, ScorerHandle,
};

pub const DEFAULT_TOP_K: usize = 10;
pub const DEFAULT_KNN_K: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Classifier,
    EmbKnn,
    Dnnc,
    DnncJoint,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Classifier => "classifier",
            Method::EmbKnn => "emb-knn",
            Method::Dnnc => "dnnc",
            Method::DnncJoint => "dnnc-joint",
        }
    }

    pub fn is_neighbor_based(self) -> bool {
        !matches!(self, Method::Classifier)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classifier" => Ok(Method::Classifier),
            "emb-knn" => Ok(Method::EmbKnn),
            "dnnc" => Ok(Method::Dnnc),
            "dnnc-joint" => Ok(Method::DnncJoint),
            other => Err(Error::Usage(format!(
                "unknown method {other:?} (classifier, emb-knn, dnnc, dnnc-joint)"
            ))),
        }
    }
}

/// Acceptance threshold. Inputs with confidence `>= value` are accepted.
///
/// Valid values are `[0, 1]` plus the [`Threshold::reject_all`] sentinel just
/// above 1, which rejects every input.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Threshold(f64);

/// `1 + ε`: the smallest double above one.
pub const REJECT_ALL: f64 = 1.0 + f64::EPSILON;

impl Threshold {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) || value == REJECT_ALL {
            Ok(Threshold(value))
        } else {
            Err(Error::validation(format!("threshold {value} outside [0, 1]")))
        }
    }

    pub fn reject_all() -> Self {
        Threshold(REJECT_ALL)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn accepts(self, confidence: f64) -> bool {
        confidence >= self.0
    }
}

impl TryFrom<f64> for Threshold {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Threshold::new(v)
    }
}

impl From<Threshold> for f64 {
    fn from(t: Threshold) -> f64 {
        t.0
    }
}

/// One bank entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub label: String,
    pub index: usize,
    pub text: String,
}

/// The examples a model matches against, in (intent name, index) order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExampleBank {
    examples: Vec<Example>,
}

impl ExampleBank {
    pub fn from_fewshot(fewshot: &FewShotSet) -> Self {
        let examples = fewshot
            .iter()
            .map(|(label, index, u)| Example {
                label: label.to_string(),
                index,
                text: u.text.clone(),
            })
            .collect();
        ExampleBank { examples }
    }

    /// Add extra `(label, text)` examples (augmentations). They follow the
    /// existing examples of their intent.
    pub fn extend<I, L, T>(&mut self, extra: I)
    where
        I: IntoIterator<Item = (L, T)>,
        L: Into<String>,
        T: Into<String>,
    {
        let mut next: BTreeMap<String, usize> = BTreeMap::new();
        for e in &self.examples {
            let n = next.entry(e.label.clone()).or_default();
            *n = (*n).max(e.index + 1);
        }
        for (label, text) in extra {
            let label = label.into();
            let n = next.entry(label.clone()).or_default();
            self.examples.push(Example {
                label,
                index: *n,
                text: text.into(),
            });
            *n += 1;
        }
        self.examples
            .sort_by(|a, b| (a.label.as_str(), a.index).cmp(&(b.label.as_str(), b.index)));
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Intent names in sorted order.
    pub fn labels(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.examples.iter().map(|e| e.label.as_str()).collect();
        out.dedup();
        out
    }

    fn require_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::validation("example bank is empty"))
        } else {
            Ok(())
        }
    }
}

/// A scored, not yet thresholded, input.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub method: Method,
    pub confidence: f64,
    pub predicted_label: String,
    pub matched: Option<Example>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub method: Method,
    pub decision: Label,
    pub confidence: f64,
    /// Label the input would get without the threshold.
    pub predicted_label: String,
    /// Best-matching bank example; recorded for OOS decisions too.
    pub matched_example: Option<Example>,
}

impl Scored {
    pub fn decide(&self, t: Threshold) -> Prediction {
        let decision = if t.accepts(self.confidence) {
            Label::Intent(self.predicted_label.clone())
        } else {
            Label::Oos
        };
        Prediction {
            method: self.method,
            decision,
            confidence: self.confidence,
            predicted_label: self.predicted_label.clone(),
            matched_example: self.matched.clone(),
        }
    }
}

/// Optional remote text classification.
pub trait TextClassifier {
    fn classify(&mut self, texts: &[&str]) -> Result<Classification>;
}

impl TextClassifier for BuiltinScorer {
    fn classify(&mut self, _: &[&str]) -> Result<Classification> {
        Err(Error::Usage("the builtin scorer has no classify capability".into()))
    }
}

impl TextClassifier for ScorerHandle {
    fn classify(&mut self, texts: &[&str]) -> Result<Classification> {
        match self {
            ScorerHandle::Builtin(b) => b.classify(texts),
            ScorerHandle::Remote(r) => r.classify(texts),
        }
    }
}

/// Everything a model might call on. Implemented by [`ScorerHandle`],
/// [`BuiltinScorer`] and [`SplitBackend`].
pub trait Backend: PairScorer + Embedder + TextClassifier {}

impl<T: PairScorer + Embedder + TextClassifier> Backend for T {}

/// A separate embedder and pair scorer presented as one backend.
pub struct SplitBackend<E, S> {
    pub embedder: E,
    pub scorer: S,
}

impl<E, S: PairScorer> PairScorer for SplitBackend<E, S> {
    fn score_pairs(&mut self, pairs: &[(&str, &str)]) -> Result<Vec<MatchScore>> {
        self.scorer.score_pairs(pairs)
    }
}

impl<E: Embedder, S> Embedder for SplitBackend<E, S> {
    fn embed(&mut self, texts: &[&str]) -> Result<Vec<Embedding>> {
        self.embedder.embed(texts)
    }
}

impl<E, S> TextClassifier for SplitBackend<E, S> {
    fn classify(&mut self, _: &[&str]) -> Result<Classification> {
        Err(Error::Usage("split backends do not classify".into()))
    }
}

/// Bank plus one embedding per example.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedBank {
    pub bank: ExampleBank,
    pub vectors: Vec<Embedding>,
}

impl EmbeddedBank {
    pub fn build<E: Embedder + ?Sized>(bank: ExampleBank, embedder: &mut E) -> Result<Self> {
        bank.require_nonempty()?;
        let texts: Vec<&str> = bank.examples.iter().map(|e| e.text.as_str()).collect();
        let vectors = embedder.embed(&texts)?;
        if vectors.len() != bank.len() {
            return Err(Error::protocol("embedder returned the wrong number of vectors"));
        }
        Ok(EmbeddedBank { bank, vectors })
    }

    /// Example indices ranked by cosine to `query`, best first; ties keep bank
    /// order.
    fn ranked(&self, query: &Embedding) -> Result<Vec<(usize, f64)>> {
        let dim = self.vectors[0].dim();
        if query.dim() != dim {
            return Err(Error::protocol(format!(
                "query embedding has dim {}, bank has {dim}",
                query.dim()
            )));
        }
        let mut sims: Vec<(usize, f64)> = self
            .vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (i, cosine(query.as_slice(), v.as_slice())))
            .collect();
        sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(sims)
    }
}

fn embed_one<E: Embedder + ?Sized>(embedder: &mut E, text: &str) -> Result<Embedding> {
    embedder
        .embed(&[text])?
        .pop()
        .ok_or_else(|| Error::protocol("embedder returned no vector"))
}

/// DNNC restricted to `candidates` (bank indices, ascending).
fn dnnc_over<S: PairScorer + ?Sized>(
    method: Method,
    input: &str,
    bank: &ExampleBank,
    candidates: &[usize],
    scorer: &mut S,
    direction: PairDirection,
) -> Result<Scored> {
    debug_assert!(candidates.windows(2).all(|w| w[0] < w[1]));
    let texts = candidates.iter().map(|&i| bank.examples[i].text.as_str());
    let pairs: Vec<(&str, &str)> = match direction {
        PairDirection::InputFirst => texts.map(|t| (input, t)).collect(),
        PairDirection::ExampleFirst => texts.map(|t| (t, input)).collect(),
        PairDirection::BothMax => texts
            .clone()
            .map(|t| (input, t))
            .chain(texts.map(|t| (t, input)))
            .collect(),
    };
    let raw = scorer.score_pairs(&pairs)?;
    if raw.len() != pairs.len() {
        return Err(Error::protocol("scorer returned the wrong number of scores"));
    }
    let n = candidates.len();
    let score_at = |i: usize| match direction {
        PairDirection::BothMax => raw[i].value().max(raw[i + n].value()),
        _ => raw[i].value(),
    };
    let mut best = 0;
    let mut best_score = score_at(0);
    for i in 1..n {
        let s = score_at(i);
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    let ex = &bank.examples[candidates[best]];
    Ok(Scored {
        method,
        confidence: best_score,
        predicted_label: ex.label.clone(),
        matched: Some(ex.clone()),
    })
}

/// Score `input` with the DNNC rule over the whole bank.
pub fn dnnc_score<S: PairScorer + ?Sized>(
    input: &str,
    bank: &ExampleBank,
    scorer: &mut S,
    direction: PairDirection,
) -> Result<Scored> {
    bank.require_nonempty()?;
    let all: Vec<usize> = (0..bank.len()).collect();
    dnnc_over(Method::Dnnc, input, bank, &all, scorer, direction)
}

/// Emb-kNN: majority label of the `k` nearest examples.
pub fn emb_knn_score<E: Embedder + ?Sized>(
    input: &str,
    bank: &EmbeddedBank,
    embedder: &mut E,
    k: usize,
) -> Result<Scored> {
    if k == 0 {
        return Err(Error::validation("k must be at least 1"));
    }
    let query = embed_one(embedder, input)?;
    let ranked = bank.ranked(&query)?;
    let top = &ranked[..k.min(ranked.len())];
    let mut votes: BTreeMap<&str, usize> = BTreeMap::new();
    for &(i, _) in top {
        *votes.entry(bank.bank.examples[i].label.as_str()).or_default() += 1;
    }
    // BTreeMap iterates labels in order, so the first maximum is the
    // lexicographically smallest tied label.
    let mut winner = "";
    let mut winner_votes = 0;
    for (&label, &n) in &votes {
        if n > winner_votes {
            winner = label;
            winner_votes = n;
        }
    }
    let matched = top
        .iter()
        .map(|&(i, _)| &bank.bank.examples[i])
        .find(|e| e.label == winner)
        .expect("winner has a vote");
    let nearest = top[0].1;
    Ok(Scored {
        method: Method::EmbKnn,
        confidence: ((nearest + 1.0) / 2.0).clamp(0.0, 1.0),
        predicted_label: winner.to_string(),
        matched: Some(matched.clone()),
    })
}

/// Per-intent centroids of the bank embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroids {
    pub labels: Vec<String>,
    pub centroids: Vec<Vec<f64>>,
}

impl Centroids {
    pub fn build(bank: &EmbeddedBank) -> Self {
        let mut acc: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
        for (e, v) in bank.bank.examples.iter().zip(&bank.vectors) {
            let (sum, n) = acc
                .entry(e.label.as_str())
                .or_insert_with(|| (vec![0.0; v.dim()], 0));
            sum.iter_mut().zip(v.as_slice()).for_each(|(s, x)| *s += x);
            *n += 1;
        }
        let (labels, centroids) = acc
            .into_iter()
            .map(|(l, (sum, n))| (l.to_string(), sum.into_iter().map(|s| s / n as f64).collect()))
            .unzip();
        Centroids { labels, centroids }
    }

    /// Softmax over cosine(input, centroid), in label order.
    pub fn probabilities(&self, query: &Embedding) -> Result<Vec<f64>> {
        let dim = self.centroids[0].len();
        if query.dim() != dim {
            return Err(Error::protocol(format!(
                "query embedding has dim {}, centroids have {dim}",
                query.dim()
            )));
        }
        let logits: Vec<f64> = self
            .centroids
            .iter()
            .map(|c| cosine(query.as_slice(), c))
            .collect();
        Ok(softmax(&logits))
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn centroid_score<E: Embedder + ?Sized>(
    input: &str,
    centroids: &Centroids,
    embedder: &mut E,
) -> Result<Scored> {
    let query = embed_one(embedder, input)?;
    let probs = centroids.probabilities(&query)?;
    let best = argmax_first(&probs);
    Ok(Scored {
        method: Method::Classifier,
        confidence: probs[best].clamp(0.0, 1.0),
        predicted_label: centroids.labels[best].clone(),
        matched: None,
    })
}

/// Two-stage DNNC: embedding retrieval of `top_k` candidates, then pairwise
/// scoring of those candidates only.
pub fn dnnc_joint_score<B: PairScorer + Embedder + ?Sized>(
    input: &str,
    bank: &EmbeddedBank,
    backend: &mut B,
    top_k: usize,
    direction: PairDirection,
) -> Result<Scored> {
    if top_k == 0 {
        return Err(Error::validation("top_k must be at least 1"));
    }
    let query = embed_one(backend, input)?;
    let ranked = bank.ranked(&query)?;
    let mut candidates: Vec<usize> = ranked.iter().take(top_k).map(|&(i, _)| i).collect();
    candidates.sort_unstable();
    dnnc_over(Method::DnncJoint, input, &bank.bank, &candidates, backend, direction)
}

/// A ready-to-score model for one method.
#[derive(Debug, Clone)]
pub enum Model {
    Dnnc {
        bank: ExampleBank,
        direction: PairDirection,
    },
    EmbKnn {
        bank: EmbeddedBank,
        k: usize,
    },
    Centroid(Centroids),
    /// Classifier served by a remote `classify` capability.
    RemoteClassifier {
        inventory: Vec<String>,
    },
    DnncJoint {
        bank: EmbeddedBank,
        top_k: usize,
        direction: PairDirection,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelParams {
    pub knn_k: usize,
    pub top_k: usize,
    pub direction: PairDirection,
    /// Route the classifier method through a remote `classify` op.
    pub remote_classify: bool,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            knn_k: DEFAULT_KNN_K,
            top_k: DEFAULT_TOP_K,
            direction: PairDirection::default(),
            remote_classify: false,
        }
    }
}

impl Model {
    pub fn build<B: Backend + ?Sized>(
        method: Method,
        bank: ExampleBank,
        params: ModelParams,
        backend: &mut B,
    ) -> Result<Model> {
        bank.require_nonempty()?;
        Ok(match method {
            Method::Dnnc => Model::Dnnc {
                bank,
                direction: params.direction,
            },
            Method::EmbKnn => Model::EmbKnn {
                bank: EmbeddedBank::build(bank, backend)?,
                k: params.knn_k,
            },
            Method::Classifier if params.remote_classify => Model::RemoteClassifier {
                inventory: bank.labels().into_iter().map(str::to_string).collect(),
            },
            Method::Classifier => Model::Centroid(Centroids::build(&EmbeddedBank::build(bank, backend)?)),
            Method::DnncJoint => Model::DnncJoint {
                bank: EmbeddedBank::build(bank, backend)?,
                top_k: params.top_k,
                direction: params.direction,
            },
        })
    }

    pub fn method(&self) -> Method {
        match self {
            Model::Dnnc { .. } => Method::Dnnc,
            Model::EmbKnn { .. } => Method::EmbKnn,
            Model::Centroid(_) | Model::RemoteClassifier { .. } => Method::Classifier,
            Model::DnncJoint { .. } => Method::DnncJoint,
        }
    }

    pub fn score<B: Backend + ?Sized>(&self, input: &str, backend: &mut B) -> Result<Scored> {
        if input.trim().is_empty() {
            return Err(Error::validation("empty input utterance"));
        }
        match self {
            Model::Dnnc { bank, direction } => dnnc_score(input, bank, backend, *direction),
            Model::EmbKnn { bank, k } => emb_knn_score(input, bank, backend, *k),
            Model::Centroid(c) => centroid_score(input, c, backend),
            Model::RemoteClassifier { inventory } => {
                let out = backend.classify(&[input])?;
                let row = out
                    .probs
                    .first()
                    .ok_or_else(|| Error::protocol("classify returned no rows"))?;
                let best = argmax_first(row);
                let label = &out.labels[best];
                if !inventory.iter().any(|l| l == label) {
                    return Err(Error::protocol(format!(
                        "classifier predicted {label:?}, which is not in the intent inventory"
                    )));
                }
                Ok(Scored {
                    method: Method::Classifier,
                    confidence: row[best],
                    predicted_label: label.clone(),
                    matched: None,
                })
            }
            Model::DnncJoint {
                bank,
                top_k,
                direction,
            } => dnnc_joint_score(input, bank, backend, *top_k, *direction),
        }
    }

    pub fn predict<B: Backend + ?Sized>(&self, input: &str, backend: &mut B, t: Threshold) -> Result<Prediction> {
        Ok(self.score(input, backend)?.decide(t))
    }
}

fn bank_of(fewshot: &FewShotSet) -> Result<ExampleBank> {
    let bank = ExampleBank::from_fewshot(fewshot);
    bank.require_nonempty()?;
    Ok(bank)
}

pub fn dnnc_predict<S: PairScorer + ?Sized>(
    input: &str,
    fewshot: &FewShotSet,
    scorer: &mut S,
    direction: PairDirection,
    t: Threshold,
) -> Result<Prediction> {
    Ok(dnnc_score(input, &bank_of(fewshot)?, scorer, direction)?.decide(t))
}

pub fn emb_knn_predict<E: Embedder + ?Sized>(
    input: &str,
    fewshot: &FewShotSet,
    embedder: &mut E,
    k: usize,
    t: Threshold,
) -> Result<Prediction> {
    let bank = EmbeddedBank::build(bank_of(fewshot)?, embedder)?;
    Ok(emb_knn_score(input, &bank, embedder, k)?.decide(t))
}

pub fn centroid_classifier_predict<E: Embedder + ?Sized>(
    input: &str,
    fewshot: &FewShotSet,
    embedder: &mut E,
    t: Threshold,
) -> Result<Prediction> {
    let bank = EmbeddedBank::build(bank_of(fewshot)?, embedder)?;
    Ok(centroid_score(input, &Centroids::build(&bank), embedder)?.decide(t))
}

pub fn dnnc_joint_predict<E: Embedder, S: PairScorer>(
    input: &str,
    fewshot: &FewShotSet,
    embedder: E,
    scorer: S,
    top_k: usize,
    direction: PairDirection,
    t: Threshold,
) -> Result<Prediction> {
    let mut backend = SplitBackend { embedder, scorer };
    let bank = EmbeddedBank::build(bank_of(fewshot)?, &mut backend)?;
    Ok(dnnc_joint_score(input, &bank, &mut backend, top_k, direction)?.decide(t))
}
