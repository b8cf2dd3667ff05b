use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{EditMode, DEFAULT_P_EDIT};
use crate::classify::{Method, ModelParams, DEFAULT_KNN_K, DEFAULT_TOP_K};
use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::scorer::{PairDirection, ScorerOptions, ScorerSpec, DEFAULT_BATCH_LIMIT, DEFAULT_EMBED_DIM};

/// Runs per grid point when the config does not say: ten for a single domain,
/// five across domains.
pub const SINGLE_DOMAIN_RUNS: usize = 10;
pub const ALL_DOMAIN_RUNS: usize = 5;

/// One hyper-parameter setting. The values are opaque to the built-in scorer;
/// for a `cmd:` scorer they are substituted into the command wherever
/// `{lr}`, `{epochs}` or `{batch_size}` appear.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPoint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
}

impl GridPoint {
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if let Some(lr) = self.learning_rate {
            parts.push(format!("lr={lr:e}"));
        }
        if let Some(ep) = self.epochs {
            parts.push(format!("ep={ep}"));
        }
        if let Some(bs) = self.batch_size {
            parts.push(format!("bs={bs}"));
        }
        if parts.is_empty() {
            "default".to_string()
        } else {
            parts.join(",")
        }
    }

    pub fn apply(&self, spec: &ScorerSpec) -> ScorerSpec {
        match spec {
            ScorerSpec::Command(cmd) => {
                let mut cmd = cmd.clone();
                if let Some(lr) = self.learning_rate {
                    cmd = cmd.replace("{lr}", &format!("{lr:e}"));
                }
                if let Some(ep) = self.epochs {
                    cmd = cmd.replace("{epochs}", &ep.to_string());
                }
                if let Some(bs) = self.batch_size {
                    cmd = cmd.replace("{batch_size}", &bs.to_string());
                }
                ScorerSpec::Command(cmd)
            }
            other => other.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AugmentationSpec {
    #[default]
    None,
    Eda {
        lexicon: PathBuf,
        #[serde(default = "default_p_edit")]
        p_edit: f64,
        #[serde(default)]
        mode: EditMode,
    },
    Backtranslation {
        file: PathBuf,
    },
}

fn default_p_edit() -> f64 {
    DEFAULT_P_EDIT
}
fn default_top_k() -> usize {
    DEFAULT_TOP_K
}
fn default_knn_k() -> usize {
    DEFAULT_KNN_K
}
fn default_batch_limit() -> usize {
    DEFAULT_BATCH_LIMIT
}
fn default_embed_dim() -> usize {
    DEFAULT_EMBED_DIM
}
fn default_parallelism() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub k: usize,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_knn_k")]
    pub knn_k: usize,
    /// Runs per grid point; defaults by domain setting.
    #[serde(default)]
    pub runs: Option<usize>,
    /// Explicit seeds. When empty, seeds are `base_seed .. base_seed + runs`.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub scorer: ScorerSpec,
    #[serde(default = "default_parallelism")]
    pub scorer_parallelism: usize,
    #[serde(default = "default_batch_limit")]
    pub batch_limit: usize,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default)]
    pub pair_direction: PairDirection,
    #[serde(default)]
    pub augmentation: AugmentationSpec,
    #[serde(default)]
    pub domain: Option<String>,
    #[serde(default)]
    pub grid: Vec<GridPoint>,
    /// Worker threads for runs; default is one per logical core.
    #[serde(default)]
    pub workers: Option<usize>,
    /// Ask a remote scorer's `classify` op for the classifier method.
    #[serde(default)]
    pub remote_classify: bool,
}

impl ExperimentConfig {
    pub fn new(method: Method, k: usize) -> Self {
        ExperimentConfig {
            method,
            k,
            top_k: DEFAULT_TOP_K,
            knn_k: DEFAULT_KNN_K,
            runs: None,
            seeds: Vec::new(),
            base_seed: 0,
            scorer: ScorerSpec::Builtin,
            scorer_parallelism: 1,
            batch_limit: DEFAULT_BATCH_LIMIT,
            embed_dim: DEFAULT_EMBED_DIM,
            pair_direction: PairDirection::default(),
            augmentation: AugmentationSpec::None,
            domain: None,
            grid: Vec::new(),
            workers: None,
            remote_classify: false,
        }
    }

    pub fn parse_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format("experiment config", e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn scorer_options(&self) -> ScorerOptions {
        ScorerOptions {
            batch_limit: self.batch_limit,
            embed_dim: self.embed_dim,
        }
    }

    pub fn model_params(&self) -> ModelParams {
        ModelParams {
            knn_k: self.knn_k,
            top_k: self.top_k,
            direction: self.pair_direction,
            remote_classify: self.remote_classify,
        }
    }

    /// Run count implied by the config and the (unfiltered) dataset.
    pub fn default_runs(&self, dataset: &Dataset) -> usize {
        if self.domain.is_some() || dataset.domains().len() == 1 {
            SINGLE_DOMAIN_RUNS
        } else {
            ALL_DOMAIN_RUNS
        }
    }

    /// Seeds in run order, checked against `runs`.
    pub fn resolve_seeds(&self, dataset: &Dataset) -> Result<Vec<u64>> {
        match (self.runs, self.seeds.is_empty()) {
            (Some(0), _) => Err(Error::validation("runs must be positive")),
            (Some(r), false) if r != self.seeds.len() => Err(Error::validation(format!(
                "runs = {r} but {} seeds were given",
                self.seeds.len()
            ))),
            (_, false) => Ok(self.seeds.clone()),
            (runs, true) => {
                let runs = runs.unwrap_or_else(|| self.default_runs(dataset));
                Ok((0..runs as u64).map(|i| self.base_seed.wrapping_add(i)).collect())
            }
        }
    }

    pub fn resolve_grid(&self) -> Result<Vec<GridPoint>> {
        if self.grid.is_empty() {
            if self.scorer.is_remote() {
                return Err(Error::validation(
                    "a remote scorer needs at least one hyper-parameter grid point",
                ));
            }
            return Ok(vec![GridPoint::default()]);
        }
        Ok(self.grid.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::validation("k must be at least 1"));
        }
        if self.top_k == 0 || self.knn_k == 0 {
            return Err(Error::validation("top_k and knn_k must be at least 1"));
        }
        if self.scorer_parallelism == 0 || self.batch_limit == 0 {
            return Err(Error::validation("scorer_parallelism and batch_limit must be positive"));
        }
        if self.workers == Some(0) {
            return Err(Error::validation("workers must be positive"));
        }
        if let AugmentationSpec::Eda { p_edit, .. } = self.augmentation {
            if !(p_edit > 0.0 && p_edit < 1.0) {
                return Err(Error::validation(format!("p_edit {p_edit} must lie in (0, 1)")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_with_defaults() {
        let cfg = ExperimentConfig::parse_toml(
            r#"
            method = "dnnc-joint"
            k = 5
            seeds = [1, 2, 3]
            pair_direction = "both-max"

            [augmentation]
            kind = "eda"
            lexicon = "lex.tsv"

            [[grid]]
            learning_rate = 2e-5
            epochs = 7.0
            batch_size = 900
            "#,
        )
        .unwrap();
        assert_eq!(cfg.method, Method::DnncJoint);
        assert_eq!(cfg.top_k, DEFAULT_TOP_K);
        assert_eq!(cfg.batch_limit, 900);
        assert!(matches!(cfg.augmentation, AugmentationSpec::Eda { p_edit, .. } if p_edit == 0.1));
        assert_eq!(ExperimentConfig::parse_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(ExperimentConfig::parse_toml("method = \"dnnc\"\nk = 5\nbogus = 1\n").is_err());
    }

    #[test]
    fn grid_substitution() {
        let g = GridPoint {
            learning_rate: Some(2e-5),
            epochs: Some(7.0),
            batch_size: Some(900),
        };
        let spec = ScorerSpec::Command("serve --model m_{lr}_{epochs}_{batch_size}".into());
        assert_eq!(g.apply(&spec), ScorerSpec::Command("serve --model m_2e-5_7_900".into()));
        assert_eq!(g.label(), "lr=2e-5,ep=7,bs=900");
    }

    #[test]
    fn remote_needs_grid() {
        let mut cfg = ExperimentConfig::new(Method::Dnnc, 5);
        assert_eq!(cfg.resolve_grid().unwrap().len(), 1);
        cfg.scorer = ScorerSpec::Tcp("localhost:1".into());
        assert!(cfg.resolve_grid().is_err());
    }
}
