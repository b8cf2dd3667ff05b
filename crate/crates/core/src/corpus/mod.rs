//! Intent-detection corpora: loading, validation, K-shot sampling and domain
//! filtering.

mod clinc;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub use clinc::{convert_clinc, ClincDomains};

/// The reserved out-of-scope label. Never valid as an intent name.
pub const OOS_LABEL: &str = "oos";

pub const CORPUS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Intent(String),
    Oos,
}

impl Label {
    pub fn parse(s: &str) -> Label {
        if s == OOS_LABEL {
            Label::Oos
        } else {
            Label::Intent(s.to_string())
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Label::Intent(name) => name,
            Label::Oos => OOS_LABEL,
        }
    }

    pub fn is_oos(&self) -> bool {
        matches!(self, Label::Oos)
    }

    pub fn intent(&self) -> Option<&str> {
        match self {
            Label::Intent(name) => Some(name),
            Label::Oos => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Label::parse(&s))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Utterance {
    pub text: String,
    pub label: Label,
}

impl Utterance {
    pub fn new(text: impl Into<String>, label: Label) -> Self {
        Utterance {
            text: text.into(),
            label,
        }
    }

    pub fn intent(text: impl Into<String>, intent: impl Into<String>) -> Self {
        Utterance::new(text, Label::Intent(intent.into()))
    }

    pub fn oos(text: impl Into<String>) -> Self {
        Utterance::new(text, Label::Oos)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Usage(format!(
                "unknown split {other:?} (expected train, dev or test)"
            ))),
        }
    }
}

/// A validated corpus. Construct through [`Dataset::new`] or
/// [`load_dataset`]; every instance upholds the label invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    domains: BTreeMap<String, Vec<String>>,
    train: Vec<Utterance>,
    dev: Vec<Utterance>,
    test: Vec<Utterance>,
    oos_dev: Vec<Utterance>,
    oos_test: Vec<Utterance>,
}

/// On-disk shape of the canonical corpus document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusFile {
    pub version: u32,
    pub domains: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub splits: SplitsFile,
    #[serde(default)]
    pub oos: OosFile,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitsFile {
    #[serde(default)]
    pub train: Vec<RowFile>,
    #[serde(default)]
    pub dev: Vec<RowFile>,
    #[serde(default)]
    pub test: Vec<RowFile>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OosFile {
    #[serde(default)]
    pub dev: Vec<OosRowFile>,
    #[serde(default)]
    pub test: Vec<OosRowFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowFile {
    pub text: String,
    pub label: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OosRowFile {
    pub text: String,
}

impl Dataset {
    pub fn new(
        domains: BTreeMap<String, Vec<String>>,
        train: Vec<Utterance>,
        dev: Vec<Utterance>,
        test: Vec<Utterance>,
        oos_dev: Vec<Utterance>,
        oos_test: Vec<Utterance>,
    ) -> Result<Self> {
        let ds = Dataset {
            domains,
            train,
            dev,
            test,
            oos_dev,
            oos_test,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (domain, intents) in &self.domains {
            for intent in intents {
                if intent == OOS_LABEL {
                    return Err(Error::validation(format!(
                        "domain {domain:?} declares the reserved label {OOS_LABEL:?} as an intent"
                    )));
                }
                if intent.trim().is_empty() {
                    return Err(Error::validation(format!(
                        "domain {domain:?} declares an empty intent name"
                    )));
                }
                if !seen.insert(intent.as_str()) {
                    return Err(Error::validation(format!(
                        "intent {intent:?} is declared more than once"
                    )));
                }
            }
        }
        if seen.is_empty() {
            return Err(Error::validation("intent inventory is empty"));
        }
        for split in Split::ALL {
            for (i, u) in self.split(split).iter().enumerate() {
                check_text(&u.text, split.name(), i)?;
                match &u.label {
                    Label::Intent(name) if seen.contains(name.as_str()) => {}
                    label => {
                        return Err(Error::validation(format!(
                            "{} row {i}: unknown label {:?}",
                            split.name(),
                            label.as_str()
                        )))
                    }
                }
            }
        }
        for (name, rows) in [("oos.dev", &self.oos_dev), ("oos.test", &self.oos_test)] {
            for (i, u) in rows.iter().enumerate() {
                check_text(&u.text, name, i)?;
                if !u.label.is_oos() {
                    return Err(Error::validation(format!(
                        "{name} row {i} carries in-domain label {:?}",
                        u.label.as_str()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_file_repr(file: CorpusFile) -> Result<Self> {
        if file.version != CORPUS_VERSION {
            return Err(Error::validation(format!(
                "unsupported corpus version {} (expected {CORPUS_VERSION})",
                file.version
            )));
        }
        let rows = |rows: Vec<RowFile>| {
            rows.into_iter()
                .map(|r| Utterance::new(r.text, Label::parse(&r.label)))
                .collect::<Vec<_>>()
        };
        let oos = |rows: Vec<OosRowFile>| rows.into_iter().map(|r| Utterance::oos(r.text)).collect();
        Dataset::new(
            file.domains,
            rows(file.splits.train),
            rows(file.splits.dev),
            rows(file.splits.test),
            oos(file.oos.dev),
            oos(file.oos.test),
        )
    }

    pub fn to_file_repr(&self) -> CorpusFile {
        let rows = |rows: &[Utterance]| {
            rows.iter()
                .map(|u| RowFile {
                    text: u.text.clone(),
                    label: u.label.as_str().to_string(),
                })
                .collect()
        };
        let oos = |rows: &[Utterance]| {
            rows.iter()
                .map(|u| OosRowFile {
                    text: u.text.clone(),
                })
                .collect()
        };
        CorpusFile {
            version: CORPUS_VERSION,
            domains: self.domains.clone(),
            splits: SplitsFile {
                train: rows(&self.train),
                dev: rows(&self.dev),
                test: rows(&self.test),
            },
            oos: OosFile {
                dev: oos(&self.oos_dev),
                test: oos(&self.oos_test),
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file_repr()).expect("corpus serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json();
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn domains(&self) -> &BTreeMap<String, Vec<String>> {
        &self.domains
    }

    /// All intent names, sorted.
    pub fn intents(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.domains.values().flatten().map(String::as_str).collect();
        out.sort_unstable();
        out
    }

    pub fn has_intent(&self, name: &str) -> bool {
        self.domains.values().flatten().any(|i| i == name)
    }

    pub fn split(&self, split: Split) -> &[Utterance] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    /// OOS pool for dev or test. There is no OOS training pool.
    pub fn oos_split(&self, split: Split) -> &[Utterance] {
        match split {
            Split::Train => &[],
            Split::Dev => &self.oos_dev,
            Split::Test => &self.oos_test,
        }
    }

    /// In-domain followed by OOS utterances of an evaluation split.
    pub fn eval_split(&self, split: Split) -> Vec<Utterance> {
        self.split(split)
            .iter()
            .chain(self.oos_split(split))
            .cloned()
            .collect()
    }

    /// In-domain dev count.
    pub fn n_in(&self) -> usize {
        self.dev.len()
    }

    /// OOS dev count.
    pub fn n_oos(&self) -> usize {
        self.oos_dev.len()
    }

    pub fn utterance_count(&self) -> usize {
        self.train.len() + self.dev.len() + self.test.len() + self.oos_dev.len() + self.oos_test.len()
    }
}

fn check_text(text: &str, split: &str, row: usize) -> Result<()> {
    if text.trim().is_empty() {
        return Err(Error::validation(format!("{split} row {row}: empty text")));
    }
    Ok(())
}

pub fn parse_dataset(text: &str, context: &str) -> Result<Dataset> {
    let file: CorpusFile = serde_json::from_str(text).map_err(|e| {
        Error::format(
            format!("{context} (line {}, column {})", e.line(), e.column()),
            e,
        )
    })?;
    Dataset::from_file_repr(file)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, &path.display().to_string())
}

/// Which domain each intent belongs to, for stats and filtering.
pub fn domain_of<'a>(dataset: &'a Dataset, intent: &str) -> Option<&'a str> {
    dataset
        .domains
        .iter()
        .find(|(_, intents)| intents.iter().any(|i| i == intent))
        .map(|(d, _)| d.as_str())
}

/// Keep only the intents of `domain`. OOS pools pass through unchanged.
pub fn domain_filter(dataset: &Dataset, domain: &str) -> Result<Dataset> {
    let Some(intents) = dataset.domains.get(domain) else {
        let available: Vec<&str> = dataset.domains.keys().map(String::as_str).collect();
        return Err(Error::validation(format!(
            "unknown domain {domain:?}; available domains: {}",
            available.join(", ")
        )));
    };
    let keep: BTreeSet<&str> = intents.iter().map(String::as_str).collect();
    let filter = |rows: &[Utterance]| -> Vec<Utterance> {
        rows.iter()
            .filter(|u| u.label.intent().is_some_and(|i| keep.contains(i)))
            .cloned()
            .collect()
    };
    Dataset::new(
        BTreeMap::from([(domain.to_string(), intents.clone())]),
        filter(&dataset.train),
        filter(&dataset.dev),
        filter(&dataset.test),
        dataset.oos_dev.clone(),
        dataset.oos_test.clone(),
    )
}

/// K labeled examples per intent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotSet {
    pub k: usize,
    pub seed: u64,
    pub shots: BTreeMap<String, Vec<Utterance>>,
}

impl FewShotSet {
    /// Build from explicit examples, checking the shape invariants.
    pub fn new(k: usize, seed: u64, shots: BTreeMap<String, Vec<Utterance>>) -> Result<Self> {
        let fs = FewShotSet { k, seed, shots };
        fs.validate()?;
        Ok(fs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::validation("K must be at least 1"));
        }
        for (intent, examples) in &self.shots {
            if intent == OOS_LABEL {
                return Err(Error::validation("few-shot set contains the OOS label"));
            }
            if examples.len() > self.k {
                return Err(Error::validation(format!(
                    "intent {intent:?} has {} examples, more than K = {}",
                    examples.len(),
                    self.k
                )));
            }
            for (i, u) in examples.iter().enumerate() {
                if u.label.intent() != Some(intent.as_str()) {
                    return Err(Error::validation(format!(
                        "example {i} of intent {intent:?} is labeled {:?}",
                        u.label.as_str()
                    )));
                }
                check_text(&u.text, intent, i)?;
            }
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.shots.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    pub fn intents(&self) -> impl Iterator<Item = &str> {
        self.shots.keys().map(String::as_str)
    }

    /// Examples in canonical order: by intent name, then by index.
    pub fn iter(&self) -> impl Iterator<Item = (&str, usize, &Utterance)> {
        self.shots
            .iter()
            .flat_map(|(intent, xs)| xs.iter().enumerate().map(move |(i, u)| (intent.as_str(), i, u)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("few-shot set serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let fs: FewShotSet = serde_json::from_str(&text).map_err(|e| {
            Error::format(
                format!("{} (line {}, column {})", path.display(), e.line(), e.column()),
                e,
            )
        })?;
        fs.validate()?;
        Ok(fs)
    }
}

/// Draw K training utterances per intent, uniformly without replacement.
///
/// Each intent gets its own generator seeded from `(seed, intent name)`, so the
/// sample for one intent does not depend on which other intents exist. The
/// chosen examples keep their order from the train split.
pub fn sample_k_shot(dataset: &Dataset, k: usize, seed: u64) -> Result<FewShotSet> {
    if k == 0 {
        return Err(Error::validation("K must be at least 1"));
    }
    let mut by_intent: BTreeMap<&str, Vec<&Utterance>> =
        dataset.intents().into_iter().map(|i| (i, Vec::new())).collect();
    for u in &dataset.train {
        if let Some(intent) = u.label.intent() {
            by_intent.get_mut(intent).expect("validated label").push(u);
        }
    }
    let mut shots = BTreeMap::new();
    for (intent, pool) in by_intent {
        if pool.is_empty() {
            return Err(Error::validation(format!(
                "intent {intent:?} has no training utterances"
            )));
        }
        let chosen = if pool.len() <= k {
            pool.into_iter().cloned().collect()
        } else {
            let mut rng = seed::rng_for(seed, intent);
            let mut idx = index::sample(&mut rng, pool.len(), k).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| pool[i].clone()).collect()
        };
        shots.insert(intent.to_string(), chosen);
    }
    Ok(FewShotSet { k, seed, shots })
}
