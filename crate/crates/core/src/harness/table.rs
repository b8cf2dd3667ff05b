use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::GridPoint;
use crate::classify::Method;
use crate::error::{Error, Result};
use crate::eval::Metrics;
use crate::tsv::fmt_f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunOutcome {
    Ok {
        dev_joint: f64,
        threshold: f64,
        test: Metrics,
    },
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub grid_index: usize,
    pub grid: GridPoint,
    pub seed: u64,
    pub outcome: RunOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n − 1); zero for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<MeanStd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(MeanStd { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub grid_index: usize,
    pub grid: GridPoint,
    pub runs_ok: usize,
    pub runs_failed: usize,
    pub dev_joint: Option<MeanStd>,
    pub threshold: Option<MeanStd>,
    pub test_acc_in: Option<MeanStd>,
    pub test_r_oos: Option<MeanStd>,
    pub test_joint: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub method: Method,
    pub k: usize,
    pub rows: Vec<RunRow>,
    pub aggregates: Vec<Aggregate>,
    /// Grid point with the best mean dev joint score.
    pub best_grid_index: Option<usize>,
}

impl ResultTable {
    pub fn from_rows(method: Method, k: usize, grid: &[GridPoint], rows: Vec<RunRow>) -> Self {
        let aggregates: Vec<Aggregate> = grid
            .iter()
            .enumerate()
            .map(|(gi, g)| aggregate(gi, *g, rows.iter().filter(|r| r.grid_index == gi)))
            .collect();
        let mut best: Option<(usize, f64)> = None;
        for a in &aggregates {
            if let Some(dj) = a.dev_joint {
                if best.is_none_or(|(_, m)| dj.mean > m) {
                    best = Some((a.grid_index, dj.mean));
                }
            }
        }
        ResultTable {
            method,
            k,
            rows,
            aggregates,
            best_grid_index: best.map(|(i, _)| i),
        }
    }

    pub fn best(&self) -> Option<&Aggregate> {
        self.best_grid_index.map(|i| &self.aggregates[i])
    }

    /// One line per run.
    pub fn rows_tsv(&self) -> String {
        let mut out = String::from(
            "grid_index\tgrid\tseed\tstatus\tdev_joint\tthreshold\ttest_acc_in\ttest_r_oos\ttest_joint\terror\n",
        );
        for r in &self.rows {
            match &r.outcome {
                RunOutcome::Ok {
                    dev_joint,
                    threshold,
                    test,
                } => writeln!(
                    out,
                    "{}\t{}\t{}\tok\t{}\t{}\t{}\t{}\t{}\t",
                    r.grid_index,
                    r.grid.label(),
                    r.seed,
                    fmt_f64(*dev_joint),
                    fmt_f64(*threshold),
                    fmt_f64(test.acc_in),
                    fmt_f64(test.r_oos),
                    fmt_f64(test.joint),
                ),
                RunOutcome::Failed { error } => writeln!(
                    out,
                    "{}\t{}\t{}\tfailed\t\t\t\t\t\t{}",
                    r.grid_index,
                    r.grid.label(),
                    r.seed,
                    error.replace(['\t', '\n'], " "),
                ),
            }
            .expect("write to string");
        }
        out
    }

    /// One line per grid point: mean and std of each quantity.
    pub fn aggregates_tsv(&self) -> String {
        let mut out = String::from(
            "grid_index\tgrid\tbest\truns_ok\truns_failed\tdev_joint_mean\tdev_joint_std\tthreshold_mean\tthreshold_std\ttest_acc_in_mean\ttest_acc_in_std\ttest_r_oos_mean\ttest_r_oos_std\ttest_joint_mean\ttest_joint_std\n",
        );
        let cell = |m: Option<MeanStd>| match m {
            Some(m) => format!("{}\t{}", fmt_f64(m.mean), fmt_f64(m.std)),
            None => "\t".to_string(),
        };
        for a in &self.aggregates {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                a.grid_index,
                a.grid.label(),
                u8::from(self.best_grid_index == Some(a.grid_index)),
                a.runs_ok,
                a.runs_failed,
                cell(a.dev_joint),
                cell(a.threshold),
                cell(a.test_acc_in),
                cell(a.test_r_oos),
                cell(a.test_joint),
            )
            .expect("write to string");
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    /// Write `results.tsv`, `aggregate.tsv` and `results.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("results.tsv", self.rows_tsv()),
            ("aggregate.tsv", self.aggregates_tsv()),
            ("results.json", self.to_json() + "\n"),
        ];
        let mut written = Vec::new();
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

fn aggregate<'a>(grid_index: usize, grid: GridPoint, rows: impl Iterator<Item = &'a RunRow>) -> Aggregate {
    let mut dev = Vec::new();
    let mut thr = Vec::new();
    let mut acc = Vec::new();
    let mut rec = Vec::new();
    let mut joint = Vec::new();
    let mut failed = 0;
    for r in rows {
        match &r.outcome {
            RunOutcome::Ok {
                dev_joint,
                threshold,
                test,
            } => {
                dev.push(*dev_joint);
                thr.push(*threshold);
                acc.push(test.acc_in);
                rec.push(test.r_oos);
                joint.push(test.joint);
            }
            RunOutcome::Failed { .. } => failed += 1,
        }
    }
    Aggregate {
        grid_index,
        grid,
        runs_ok: dev.len(),
        runs_failed: failed,
        dev_joint: MeanStd::of(&dev),
        threshold: MeanStd::of(&thr),
        test_acc_in: MeanStd::of(&acc),
        test_r_oos: MeanStd::of(&rec),
        test_joint: MeanStd::of(&joint),
    }
}
