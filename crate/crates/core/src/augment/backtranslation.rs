//! Augmentation files: tab-separated `origin_text`, `augmented_text`, `label`
//! with a header row, plus an optional fourth `source` column (defaults to
//! `backtranslation`). A comment line `# tau=<value>` records the sampling
//! temperature the generator used.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use log::warn;

use super::{AugmentSource, AugmentedExample};
use crate::corpus::{Dataset, Label};
use crate::error::{Error, Result};
use crate::tsv;

/// At most this many augmentations are kept per origin utterance.
pub const MAX_PER_ORIGIN: usize = 5;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AugmentationFile {
    pub examples: Vec<AugmentedExample>,
    /// Generator temperature, when the file declares one.
    pub tau: Option<f64>,
    /// Records dropped for exceeding [`MAX_PER_ORIGIN`].
    pub dropped: usize,
}

fn parse_tau(text: &str) -> Result<Option<f64>> {
    for line in text.lines() {
        let Some(rest) = line.strip_prefix('#') else { continue };
        if let Some(v) = rest.trim().strip_prefix("tau=") {
            let tau: f64 = v
                .trim()
                .parse()
                .map_err(|e| Error::format("augmentation metadata", format!("bad tau {v:?}: {e}")))?;
            return Ok(Some(tau));
        }
    }
    Ok(None)
}

/// Parse an augmentation file. When `dataset` is given, every label must be
/// one of its intents.
pub fn parse_augmentation_file(text: &str, dataset: Option<&Dataset>) -> Result<AugmentationFile> {
    let tau = parse_tau(text)?;
    if text.lines().all(|l| l.trim().is_empty() || l.starts_with('#')) {
        return Ok(AugmentationFile {
            tau,
            ..Default::default()
        });
    }
    let mut reader = tsv::reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::format("augmentation header", e))?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    let has_source = match cols.as_slice() {
        ["origin_text", "augmented_text", "label"] => false,
        ["origin_text", "augmented_text", "label", "source"] => true,
        _ => {
            return Err(Error::format(
                "augmentation header",
                format!("expected origin_text, augmented_text, label[, source]; got {}", cols.join(", ")),
            ))
        }
    };

    let mut per_origin: HashMap<String, usize> = HashMap::new();
    let mut out = AugmentationFile {
        tau,
        ..Default::default()
    };
    for (i, record) in reader.records().enumerate() {
        let ctx = || format!("augmentation record {i}");
        let record = record.map_err(|e| Error::format(ctx(), e))?;
        let field = |k: usize| record.get(k).unwrap_or("");
        let (origin, augmented, label) = (field(0), field(1), field(2));
        if origin.trim().is_empty() || augmented.trim().is_empty() || label.trim().is_empty() {
            return Err(Error::format(ctx(), "empty field"));
        }
        let source = if has_source {
            AugmentSource::from_tag(field(3))
                .ok_or_else(|| Error::format(ctx(), format!("unknown source {:?}", field(3))))?
        } else {
            AugmentSource::Backtranslation
        };
        let label = Label::parse(label);
        if let (Some(ds), Label::Intent(name)) = (dataset, &label) {
            if !ds.has_intent(name) {
                return Err(Error::validation(format!(
                    "augmentation record {i}: unknown label {name:?}"
                )));
            }
        }
        let n = per_origin.entry(origin.to_string()).or_default();
        *n += 1;
        if *n > MAX_PER_ORIGIN {
            warn!("augmentation record {i}: more than {MAX_PER_ORIGIN} augmentations of {origin:?}; dropped");
            out.dropped += 1;
            continue;
        }
        out.examples.push(AugmentedExample {
            text: augmented.to_string(),
            label,
            source,
            origin_text: origin.to_string(),
            degenerate: false,
        });
    }
    Ok(out)
}

pub fn load_augmentation_file(path: &Path, dataset: Option<&Dataset>) -> Result<AugmentationFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_augmentation_file(&text, dataset)
}

/// Write examples in the four-column form.
pub fn write_augmentations<W: Write>(out: W, examples: &[AugmentedExample]) -> Result<()> {
    let err = |e: csv::Error| Error::io("augmentation output", std::io::Error::other(e));
    let mut w = tsv::writer(out);
    w.write_record(["origin_text", "augmented_text", "label", "source"]).map_err(err)?;
    for a in examples {
        w.write_record([a.origin_text.as_str(), a.text.as_str(), a.label.as_str(), a.source.tag()])
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("augmentation output", e))
}
