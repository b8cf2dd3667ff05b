//! Adapter for the public CLINC150 `data_full.json` layout:
//! `{"train": [[text, label], ...], "val": [...], "test": [...],
//!   "oos_train": [...], "oos_val": [...], "oos_test": [...]}`.
//!
//! `val` becomes `dev`; `oos_train` is dropped since the canonical format has
//! no OOS training pool.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;

use super::{Dataset, Utterance, OOS_LABEL};
use crate::error::{Error, Result};

/// Optional domain → intents mapping. Without one every intent lands in a
/// single domain named `all`.
pub type ClincDomains = BTreeMap<String, Vec<String>>;

#[derive(Debug, Deserialize)]
struct ClincFile {
    #[serde(default)]
    train: Vec<(String, String)>,
    #[serde(default)]
    val: Vec<(String, String)>,
    #[serde(default)]
    test: Vec<(String, String)>,
    #[serde(default)]
    oos_val: Vec<(String, String)>,
    #[serde(default)]
    oos_test: Vec<(String, String)>,
}

pub fn convert_clinc(json: &str, domains: Option<ClincDomains>) -> Result<Dataset> {
    let file: ClincFile = serde_json::from_str(json).map_err(|e| {
        Error::format(
            format!("clinc input (line {}, column {})", e.line(), e.column()),
            e,
        )
    })?;

    let rows = |rows: &[(String, String)]| -> Vec<Utterance> {
        rows.iter()
            .map(|(text, label)| {
                if label == OOS_LABEL {
                    Utterance::oos(text.clone())
                } else {
                    Utterance::intent(text.clone(), label.clone())
                }
            })
            .collect()
    };
    let mut train = rows(&file.train);
    let mut dev = rows(&file.val);
    let mut test = rows(&file.test);
    let mut oos_dev = rows(&file.oos_val);
    let mut oos_test = rows(&file.oos_test);

    // Some CLINC variants fold OOS rows into the main splits.
    for (split, oos) in [(&mut dev, &mut oos_dev), (&mut test, &mut oos_test)] {
        let (o, keep): (Vec<_>, Vec<_>) = split.drain(..).partition(|u| u.label.is_oos());
        *split = keep;
        oos.extend(o);
    }
    train.retain(|u| !u.label.is_oos());

    let seen: BTreeSet<String> = train
        .iter()
        .chain(&dev)
        .chain(&test)
        .filter_map(|u| u.label.intent().map(str::to_string))
        .collect();

    let domains = match domains {
        Some(map) => {
            let mapped: BTreeSet<&str> = map.values().flatten().map(String::as_str).collect();
            if let Some(missing) = seen.iter().find(|i| !mapped.contains(i.as_str())) {
                return Err(Error::validation(format!(
                    "intent {missing:?} is not assigned to any domain"
                )));
            }
            map
        }
        None => BTreeMap::from([("all".to_string(), seen.into_iter().collect())]),
    };

    Dataset::new(domains, train, dev, test, oos_dev, oos_test)
}
