//! EDA augmentation (synonym replacement, random insertion, random swap,
//! random deletion) and ingestion of externally generated back-translations.
//!
//! Each EDA technique is applied on its own to the original utterance, so one
//! call yields exactly four augmentations. With the default count mode a
//! technique makes `n = max(1, floor(p_edit · L))` edits on an `L`-token
//! utterance.

mod backtranslation;
mod lexicon;

use std::fmt;

use rand::seq::{index, IndexedRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Label, Utterance};
use crate::error::{Error, Result};
use crate::seed;

pub use backtranslation::{load_augmentation_file, parse_augmentation_file, write_augmentations, AugmentationFile, MAX_PER_ORIGIN};
pub use lexicon::SynonymLexicon;

pub const DEFAULT_P_EDIT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AugmentSource {
    #[serde(rename = "eda-sr")]
    EdaSr,
    #[serde(rename = "eda-ri")]
    EdaRi,
    #[serde(rename = "eda-rs")]
    EdaRs,
    #[serde(rename = "eda-rd")]
    EdaRd,
    #[serde(rename = "backtranslation")]
    Backtranslation,
}

impl AugmentSource {
    pub const EDA: [AugmentSource; 4] = [
        AugmentSource::EdaSr,
        AugmentSource::EdaRi,
        AugmentSource::EdaRs,
        AugmentSource::EdaRd,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            AugmentSource::EdaSr => "eda-sr",
            AugmentSource::EdaRi => "eda-ri",
            AugmentSource::EdaRs => "eda-rs",
            AugmentSource::EdaRd => "eda-rd",
            AugmentSource::Backtranslation => "backtranslation",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::EDA
            .into_iter()
            .chain([AugmentSource::Backtranslation])
            .find(|s| s.tag() == tag)
    }
}

impl fmt::Display for AugmentSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedExample {
    pub text: String,
    pub label: Label,
    pub source: AugmentSource,
    pub origin_text: String,
    /// The technique could not apply (no lexicon coverage, one token) and the
    /// original text was emitted unchanged.
    pub degenerate: bool,
}

/// How `p_edit` turns into edits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditMode {
    /// `n = max(1, floor(p · L))` edits per technique.
    #[default]
    Count,
    /// Every token is independently edited with probability `p`.
    PerWordBernoulli,
}

pub fn edit_count(p_edit: f64, len: usize) -> usize {
    ((p_edit * len as f64).floor() as usize).max(1)
}

struct Outcome {
    tokens: Vec<String>,
    degenerate: bool,
}

impl Outcome {
    fn unchanged(tokens: &[&str]) -> Self {
        Outcome {
            tokens: tokens.iter().map(|t| t.to_string()).collect(),
            degenerate: true,
        }
    }
}

fn covered(tokens: &[&str], lexicon: &SynonymLexicon) -> Vec<usize> {
    (0..tokens.len())
        .filter(|&i| lexicon.synonyms(tokens[i]).is_some())
        .collect()
}

fn pick_synonym(lexicon: &SynonymLexicon, token: &str, rng: &mut ChaCha8Rng) -> String {
    lexicon
        .synonyms(token)
        .and_then(|s| s.choose(rng))
        .expect("covered token has synonyms")
        .clone()
}

fn synonym_replacement(
    tokens: &[&str],
    lexicon: &SynonymLexicon,
    p_edit: f64,
    mode: EditMode,
    rng: &mut ChaCha8Rng,
) -> Outcome {
    let cov = covered(tokens, lexicon);
    if cov.is_empty() {
        return Outcome::unchanged(tokens);
    }
    let chosen: Vec<usize> = match mode {
        EditMode::Count => {
            let n = edit_count(p_edit, tokens.len()).min(cov.len());
            index::sample(rng, cov.len(), n).into_iter().map(|i| cov[i]).collect()
        }
        EditMode::PerWordBernoulli => cov.into_iter().filter(|_| rng.random_bool(p_edit)).collect(),
    };
    let mut out: Vec<String> = tokens.iter().map(|t| t.to_string()).collect();
    for pos in chosen {
        out[pos] = pick_synonym(lexicon, tokens[pos], rng);
    }
    Outcome {
        tokens: out,
        degenerate: false,
    }
}

fn random_insertion(
    tokens: &[&str],
    lexicon: &SynonymLexicon,
    p_edit: f64,
    mode: EditMode,
    rng: &mut ChaCha8Rng,
) -> Outcome {
    let cov = covered(tokens, lexicon);
    if cov.is_empty() {
        return Outcome::unchanged(tokens);
    }
    let n = match mode {
        EditMode::Count => edit_count(p_edit, tokens.len()),
        EditMode::PerWordBernoulli => (0..tokens.len()).filter(|_| rng.random_bool(p_edit)).count(),
    };
    let mut out: Vec<String> = tokens.iter().map(|t| t.to_string()).collect();
    for _ in 0..n {
        let source = cov[rng.random_range(0..cov.len())];
        let syn = pick_synonym(lexicon, tokens[source], rng);
        let at = rng.random_range(0..=out.len());
        out.insert(at, syn);
    }
    Outcome {
        tokens: out,
        degenerate: false,
    }
}

fn other_position(len: usize, i: usize, rng: &mut ChaCha8Rng) -> usize {
    let j = rng.random_range(0..len - 1);
    if j >= i {
        j + 1
    } else {
        j
    }
}

fn random_swap(tokens: &[&str], p_edit: f64, mode: EditMode, rng: &mut ChaCha8Rng) -> Outcome {
    let len = tokens.len();
    if len < 2 {
        return Outcome::unchanged(tokens);
    }
    let mut out: Vec<String> = tokens.iter().map(|t| t.to_string()).collect();
    match mode {
        EditMode::Count => {
            for _ in 0..edit_count(p_edit, len) {
                let i = rng.random_range(0..len);
                let j = other_position(len, i, rng);
                out.swap(i, j);
            }
        }
        EditMode::PerWordBernoulli => {
            for i in 0..len {
                if rng.random_bool(p_edit) {
                    let j = other_position(len, i, rng);
                    out.swap(i, j);
                }
            }
        }
    }
    Outcome {
        tokens: out,
        degenerate: false,
    }
}

fn random_deletion(tokens: &[&str], p_edit: f64, mode: EditMode, rng: &mut ChaCha8Rng) -> Outcome {
    let len = tokens.len();
    if len < 2 {
        return Outcome::unchanged(tokens);
    }
    let mut keep = vec![true; len];
    match mode {
        EditMode::Count => {
            // p < 1 keeps n ≤ L - 1, so at least one token survives.
            let n = edit_count(p_edit, len).min(len - 1);
            for i in index::sample(rng, len, n) {
                keep[i] = false;
            }
        }
        EditMode::PerWordBernoulli => {
            for k in keep.iter_mut() {
                *k = !rng.random_bool(p_edit);
            }
            if keep.iter().all(|k| !k) {
                keep[rng.random_range(0..len)] = true;
            }
        }
    }
    Outcome {
        tokens: tokens
            .iter()
            .zip(keep)
            .filter(|(_, k)| *k)
            .map(|(t, _)| t.to_string())
            .collect(),
        degenerate: false,
    }
}

/// Produce the four EDA augmentations of `u`, in the order SR, RI, RS, RD.
///
/// Each technique draws from its own generator seeded by `(seed, tag)`.
pub fn eda_augment(
    u: &Utterance,
    lexicon: &SynonymLexicon,
    p_edit: f64,
    seed: u64,
    mode: EditMode,
) -> Result<Vec<AugmentedExample>> {
    if !(p_edit > 0.0 && p_edit < 1.0) {
        return Err(Error::validation(format!("edit probability {p_edit} must lie in (0, 1)")));
    }
    let tokens: Vec<&str> = u.text.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(Error::validation("cannot augment an utterance with no tokens"));
    }
    Ok(AugmentSource::EDA
        .into_iter()
        .map(|source| {
            let mut rng = seed::rng_for(seed, source.tag());
            let outcome = match source {
                AugmentSource::EdaSr => synonym_replacement(&tokens, lexicon, p_edit, mode, &mut rng),
                AugmentSource::EdaRi => random_insertion(&tokens, lexicon, p_edit, mode, &mut rng),
                AugmentSource::EdaRs => random_swap(&tokens, p_edit, mode, &mut rng),
                AugmentSource::EdaRd => random_deletion(&tokens, p_edit, mode, &mut rng),
                AugmentSource::Backtranslation => unreachable!(),
            };
            AugmentedExample {
                text: outcome.tokens.join(" "),
                label: u.label.clone(),
                source,
                origin_text: u.text.clone(),
                degenerate: outcome.degenerate,
            }
        })
        .collect())
}

/// Augment many utterances; utterance `i` uses a seed derived from `(seed, i)`.
pub fn eda_augment_all(
    utterances: &[Utterance],
    lexicon: &SynonymLexicon,
    p_edit: f64,
    seed: u64,
    mode: EditMode,
) -> Result<Vec<AugmentedExample>> {
    let mut out = Vec::with_capacity(utterances.len() * 4);
    for (i, u) in utterances.iter().enumerate() {
        out.extend(eda_augment(u, lexicon, p_edit, seed::derive_seed_index(seed, i as u64), mode)?);
    }
    Ok(out)
}
