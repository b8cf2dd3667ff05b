//! Plot-ready report tables.
//!
//! | file                  | columns                                                                  |
//! |-----------------------|--------------------------------------------------------------------------|
//! | `curve.tsv`           | threshold, acc_in, r_oos, joint, overall_acc, c_in, n_in, c_oos, n_oos   |
//! | `confidence_hist.tsv` | bin_start, bin_end, in_domain, oos                                       |
//! | `cases.tsv`           | input, matched_utterance, input_label, matched_label, confidence         |
//! | `embeddings.tsv`      | text, label, e0 .. e{dim-1}                                              |
//!
//! All files are tab-separated UTF-8 with a header row and LF line endings.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{CurvePoint, ScoredInstance};
use crate::classify::Prediction;
use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::scorer::Embedding;
use crate::tsv::{self, fmt_f64};

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct CaseRow {
    pub input: String,
    pub input_label: Label,
    pub matched_utterance: String,
    pub matched_label: String,
    pub confidence: f64,
}

impl CaseRow {
    pub fn from_prediction(input: &str, gold: &Label, p: &Prediction) -> Self {
        let (matched_utterance, matched_label) = match &p.matched_example {
            Some(e) => (e.text.clone(), e.label.clone()),
            None => (String::new(), p.predicted_label.clone()),
        };
        CaseRow {
            input: input.to_string(),
            input_label: gold.clone(),
            matched_utterance,
            matched_label,
            confidence: p.confidence,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReportData {
    pub cases: Vec<CaseRow>,
    pub instances: Vec<ScoredInstance>,
    pub curve: Vec<CurvePoint>,
    pub embeddings: Option<Vec<(String, Label, Embedding)>>,
}

/// Per-bin (in-domain, OOS) counts over `[0, 1]` in equal-width bins. The last
/// bin is closed on the right.
pub fn confidence_histogram(instances: &[ScoredInstance], bins: usize) -> Vec<(usize, usize)> {
    let mut out = vec![(0, 0); bins];
    for i in instances {
        let b = ((i.confidence * bins as f64).floor() as usize).min(bins - 1);
        if i.gold.is_oos() {
            out[b].1 += 1;
        } else {
            out[b].0 += 1;
        }
    }
    out
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::io(path, std::io::Error::other(e))
}

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(tsv::writer(BufWriter::new(f)))
}

fn finish<W: Write>(mut w: csv::Writer<W>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_curve(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut w = create(path)?;
    let err = csv_err(path);
    w.write_record(["threshold", "acc_in", "r_oos", "joint", "overall_acc", "c_in", "n_in", "c_oos", "n_oos"])
        .map_err(&err)?;
    for p in curve {
        let m = &p.metrics;
        w.write_record([
            fmt_f64(p.threshold),
            fmt_f64(m.acc_in),
            fmt_f64(m.r_oos),
            fmt_f64(m.joint),
            fmt_f64(m.overall_acc),
            m.c_in.to_string(),
            m.n_in.to_string(),
            m.c_oos.to_string(),
            m.n_oos.to_string(),
        ])
        .map_err(&err)?;
    }
    finish(w, path)
}

pub fn write_histogram(path: &Path, instances: &[ScoredInstance]) -> Result<()> {
    let mut w = create(path)?;
    let err = csv_err(path);
    w.write_record(["bin_start", "bin_end", "in_domain", "oos"]).map_err(&err)?;
    for (b, (n_in, n_oos)) in confidence_histogram(instances, HISTOGRAM_BINS).into_iter().enumerate() {
        w.write_record([
            fmt_f64(b as f64 / HISTOGRAM_BINS as f64),
            fmt_f64((b + 1) as f64 / HISTOGRAM_BINS as f64),
            n_in.to_string(),
            n_oos.to_string(),
        ])
        .map_err(&err)?;
    }
    finish(w, path)
}

pub fn write_cases<W: Write>(out: W, cases: &[CaseRow]) -> Result<()> {
    let path = Path::new("cases.tsv");
    let err = csv_err(path);
    let mut w = tsv::writer(out);
    w.write_record(["input", "matched_utterance", "input_label", "matched_label", "confidence"])
        .map_err(&err)?;
    for c in cases {
        w.write_record([
            c.input.as_str(),
            c.matched_utterance.as_str(),
            c.input_label.as_str(),
            c.matched_label.as_str(),
            &fmt_f64(c.confidence),
        ])
        .map_err(&err)?;
    }
    finish(w, path)
}

pub fn write_embeddings(path: &Path, rows: &[(String, Label, Embedding)]) -> Result<()> {
    let dim = rows.first().map_or(0, |r| r.2.dim());
    if rows.iter().any(|r| r.2.dim() != dim) {
        return Err(Error::validation("embedding dump mixes dimensions"));
    }
    let mut w = create(path)?;
    let err = csv_err(path);
    let mut header = vec!["text".to_string(), "label".to_string()];
    header.extend((0..dim).map(|i| format!("e{i}")));
    w.write_record(&header).map_err(&err)?;
    for (text, label, v) in rows {
        let mut rec = vec![text.clone(), label.as_str().to_string()];
        rec.extend(v.as_slice().iter().map(|x| fmt_f64(*x)));
        w.write_record(&rec).map_err(&err)?;
    }
    finish(w, path)
}

/// Write every report table into `out_dir` (created if missing). Returns the
/// written paths.
pub fn export_report(data: &ReportData, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if data.cases.is_empty() && data.instances.is_empty() {
        return Err(Error::validation("nothing to report"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();

    let curve = out_dir.join("curve.tsv");
    write_curve(&curve, &data.curve)?;
    written.push(curve);

    let hist = out_dir.join("confidence_hist.tsv");
    write_histogram(&hist, &data.instances)?;
    written.push(hist);

    let cases = out_dir.join("cases.tsv");
    let f = File::create(&cases).map_err(|e| Error::io(&cases, e))?;
    write_cases(BufWriter::new(f), &data.cases)?;
    written.push(cases);

    if let Some(rows) = &data.embeddings {
        let emb = out_dir.join("embeddings.tsv");
        write_embeddings(&emb, rows)?;
        written.push(emb);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_conserves_counts() {
        let xs: Vec<ScoredInstance> = [0.0, 0.05, 0.5, 0.999, 1.0, 0.3]
            .iter()
            .enumerate()
            .map(|(i, &c)| ScoredInstance::new(c, "a", if i % 2 == 0 { Label::parse("a") } else { Label::Oos }).unwrap())
            .collect();
        let h = confidence_histogram(&xs, HISTOGRAM_BINS);
        assert_eq!(h.iter().map(|b| b.0).sum::<usize>(), 3);
        assert_eq!(h.iter().map(|b| b.1).sum::<usize>(), 3);
        assert_eq!(h[0], (1, 0));
        assert_eq!(h[1], (0, 1));
        assert_eq!(h[19], (1, 1));
    }

    #[test]
    fn single_case_row() {
        let mut out = Vec::new();
        write_cases(
            &mut out,
            &[CaseRow {
                input: "hi".into(),
                input_label: Label::Oos,
                matched_utterance: "hello".into(),
                matched_label: "greet".into(),
                confidence: 0.25,
            }],
        )
        .unwrap();
        let text = String::from_utf8(out).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows[1], "hi\thello\toos\tgreet\t0.25");
    }

    #[test]
    fn unwritable_directory() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let data = ReportData {
            instances: vec![ScoredInstance::new(0.5, "a", Label::Oos).unwrap()],
            ..Default::default()
        };
        let err = export_report(&data, &blocker.join("sub")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
