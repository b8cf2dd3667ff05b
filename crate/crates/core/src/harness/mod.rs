//! Seeded multi-run experiments.
//!
//! For every (grid point, seed): sample K shots, optionally augment, build the
//! method's model, score the dev split, calibrate a threshold on dev, then
//! evaluate the test split with that frozen threshold. Runs are independent
//! and execute on the worker pool; the result table is assembled in
//! (grid point, seed) order so output is deterministic.

pub mod config;
pub mod table;

use std::collections::BTreeSet;

use log::{info, warn};

pub use config::{AugmentationSpec, ExperimentConfig, GridPoint, ALL_DOMAIN_RUNS, SINGLE_DOMAIN_RUNS};
pub use table::{Aggregate, MeanStd, ResultTable, RunOutcome, RunRow};

use crate::augment::{self, AugmentedExample, SynonymLexicon};
use crate::classify::{ExampleBank, Model, ModelParams, Scored, Threshold};
use crate::corpus::{self, Dataset, FewShotSet, Label, Split, Utterance};
use crate::error::{Error, Result};
use crate::eval::{self, CalibrationResult, Metrics, ScoredInstance};
use crate::exec::{self, ExecMode};
use crate::scorer::{ScorerHandle, ScorerOptions, ScorerSpec};
use crate::seed;

/// How a batch of inputs is spread over scorer handles.
#[derive(Debug, Clone)]
pub struct Scoring {
    pub spec: ScorerSpec,
    pub opts: ScorerOptions,
    /// Remote handles opened for one batch (`--scorer-parallelism`).
    pub parallelism: usize,
    pub exec: ExecMode,
}

impl Scoring {
    pub fn builtin(exec: ExecMode) -> Self {
        Scoring {
            spec: ScorerSpec::Builtin,
            opts: ScorerOptions::default(),
            parallelism: 1,
            exec,
        }
    }

    pub fn open(&self) -> Result<ScorerHandle> {
        self.spec.open(self.opts)
    }

    /// Score `texts` in order. The built-in scorer fans out freely; a remote
    /// scorer uses `primary` alone, or `parallelism` freshly opened handles
    /// each taking a contiguous chunk.
    pub fn score_all(&self, model: &Model, texts: &[&str], primary: &mut ScorerHandle) -> Result<Vec<Scored>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        if !self.spec.is_remote() && self.exec.is_parallel() {
            let dim = self.opts.embed_dim;
            return exec::map_init(self.exec, texts, || ScorerHandle::builtin(dim), |h, t| model.score(t, h))
                .into_iter()
                .collect();
        }
        if self.parallelism <= 1 || !self.exec.is_parallel() {
            return texts.iter().map(|t| model.score(t, primary)).collect();
        }
        let chunk = texts.len().div_ceil(self.parallelism);
        let chunks: Vec<&[&str]> = texts.chunks(chunk).collect();
        let parts = exec::map(self.exec, &chunks, |part| -> Result<Vec<Scored>> {
            let mut handle = self.open()?;
            part.iter().map(|t| model.score(t, &mut handle)).collect()
        });
        let mut out = Vec::with_capacity(texts.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }
}

/// Scored development instances. The only input calibration accepts.
#[derive(Debug, Clone, PartialEq)]
pub struct DevInstances(Vec<ScoredInstance>);

/// Scored test instances. Can be evaluated at a threshold, never calibrated on.
#[derive(Debug, Clone, PartialEq)]
pub struct TestInstances(Vec<ScoredInstance>);

impl DevInstances {
    pub fn calibrate(&self) -> Result<CalibrationResult> {
        eval::calibrate_threshold(&self.0)
    }

    pub fn instances(&self) -> &[ScoredInstance] {
        &self.0
    }
}

impl TestInstances {
    pub fn evaluate(&self, t: Threshold) -> Result<Metrics> {
        eval::compute_metrics(&self.0, t)
    }

    pub fn instances(&self) -> &[ScoredInstance] {
        &self.0
    }
}

fn score_labeled(
    model: &Model,
    utterances: &[Utterance],
    scoring: &Scoring,
    primary: &mut ScorerHandle,
) -> Result<Vec<ScoredInstance>> {
    let texts: Vec<&str> = utterances.iter().map(|u| u.text.as_str()).collect();
    let scored = scoring.score_all(model, &texts, primary)?;
    scored
        .iter()
        .zip(utterances)
        .map(|(s, u)| ScoredInstance::from_scored(s, u.label.clone()))
        .collect()
}

pub fn score_dev(model: &Model, dataset: &Dataset, scoring: &Scoring, primary: &mut ScorerHandle) -> Result<DevInstances> {
    score_labeled(model, &dataset.eval_split(Split::Dev), scoring, primary).map(DevInstances)
}

pub fn score_test(model: &Model, dataset: &Dataset, scoring: &Scoring, primary: &mut ScorerHandle) -> Result<TestInstances> {
    score_labeled(model, &dataset.eval_split(Split::Test), scoring, primary).map(TestInstances)
}

/// Augmentation inputs loaded once per experiment.
#[derive(Debug, Clone)]
pub enum Augmenter {
    None,
    Eda {
        lexicon: SynonymLexicon,
        p_edit: f64,
        mode: augment::EditMode,
    },
    Backtranslation(Vec<AugmentedExample>),
}

impl Augmenter {
    pub fn load(spec: &AugmentationSpec, dataset: &Dataset) -> Result<Self> {
        Ok(match spec {
            AugmentationSpec::None => Augmenter::None,
            AugmentationSpec::Eda { lexicon, p_edit, mode } => Augmenter::Eda {
                lexicon: SynonymLexicon::load(lexicon)?,
                p_edit: *p_edit,
                mode: *mode,
            },
            AugmentationSpec::Backtranslation { file } => {
                Augmenter::Backtranslation(augment::load_augmentation_file(file, Some(dataset))?.examples)
            }
        })
    }

    /// The bank for `fewshot` plus its augmentations.
    pub fn bank(&self, fewshot: &FewShotSet, seed: u64) -> Result<ExampleBank> {
        let mut bank = ExampleBank::from_fewshot(fewshot);
        let extra: Vec<(String, String)> = match self {
            Augmenter::None => Vec::new(),
            Augmenter::Eda { lexicon, p_edit, mode } => {
                let shots: Vec<Utterance> = fewshot.iter().map(|(_, _, u)| u.clone()).collect();
                augment::eda_augment_all(&shots, lexicon, *p_edit, seed::derive_seed(seed, "augment"), *mode)?
                    .into_iter()
                    .filter(|a| !a.degenerate)
                    .filter_map(|a| a.label.intent().map(|l| (l.to_string(), a.text)))
                    .collect()
            }
            Augmenter::Backtranslation(examples) => {
                let origins: BTreeSet<(&str, &str)> = fewshot.iter().map(|(l, _, u)| (l, u.text.as_str())).collect();
                examples
                    .iter()
                    .filter_map(|a| {
                        let label = a.label.intent()?;
                        origins
                            .contains(&(label, a.origin_text.as_str()))
                            .then(|| (label.to_string(), a.text.clone()))
                    })
                    .collect()
            }
        };
        bank.extend(extra);
        Ok(bank)
    }
}

/// Everything one run needs, shared read-only across workers.
struct RunContext<'a> {
    config: &'a ExperimentConfig,
    dataset: &'a Dataset,
    augmenter: &'a Augmenter,
    params: ModelParams,
    exec: ExecMode,
}

impl RunContext<'_> {
    fn run(&self, grid: &GridPoint, seed: u64) -> Result<RunOutcome> {
        let scoring = Scoring {
            spec: grid.apply(&self.config.scorer),
            opts: self.config.scorer_options(),
            parallelism: self.config.scorer_parallelism,
            exec: self.exec,
        };
        let mut handle = scoring.open()?;
        let fewshot = corpus::sample_k_shot(self.dataset, self.config.k, seed)?;
        let bank = self.augmenter.bank(&fewshot, seed)?;
        let model = Model::build(self.config.method, bank, self.params, &mut handle)?;

        let dev = score_dev(&model, self.dataset, &scoring, &mut handle)?;
        let calibration = dev.calibrate()?;
        let test = score_test(&model, self.dataset, &scoring, &mut handle)?;
        let metrics = test.evaluate(calibration.threshold)?;
        Ok(RunOutcome::Ok {
            dev_joint: calibration.joint_at_threshold,
            threshold: calibration.threshold.value(),
            test: metrics,
        })
    }
}

pub fn run_experiment(config: &ExperimentConfig, dataset: &Dataset) -> Result<ResultTable> {
    run_experiment_with(config, dataset, ExecMode::Parallel)
}

pub fn run_experiment_with(config: &ExperimentConfig, dataset: &Dataset, exec: ExecMode) -> Result<ResultTable> {
    config.validate()?;
    let seeds = config.resolve_seeds(dataset)?;
    let grid = config.resolve_grid()?;
    let filtered;
    let dataset = match &config.domain {
        Some(d) => {
            filtered = corpus::domain_filter(dataset, d)?;
            &filtered
        }
        None => dataset,
    };
    if dataset.split(Split::Dev).is_empty() || dataset.oos_split(Split::Dev).is_empty() {
        return Err(Error::validation("dev split needs both in-domain and OOS utterances"));
    }
    if dataset.split(Split::Test).is_empty() || dataset.oos_split(Split::Test).is_empty() {
        return Err(Error::validation("test split needs both in-domain and OOS utterances"));
    }
    let augmenter = Augmenter::load(&config.augmentation, dataset)?;
    let ctx = RunContext {
        config,
        dataset,
        augmenter: &augmenter,
        params: config.model_params(),
        exec,
    };

    let jobs: Vec<(usize, u64)> = (0..grid.len())
        .flat_map(|g| seeds.iter().map(move |&s| (g, s)))
        .collect();
    info!(
        "running {} x {} ({} grid points x {} seeds) with {} workers",
        config.method,
        jobs.len(),
        grid.len(),
        seeds.len(),
        config.workers.unwrap_or_else(|| exec::worker_count(exec))
    );
    let outcomes = exec::with_workers(config.workers, || {
        exec::map(exec, &jobs, |&(g, seed)| match ctx.run(&grid[g], seed) {
            Ok(o) => o,
            Err(e) => {
                warn!("run (grid {g}, seed {seed}) failed: {e}");
                RunOutcome::Failed { error: e.to_string() }
            }
        })
    })?;

    let rows: Vec<RunRow> = jobs
        .iter()
        .zip(outcomes)
        .map(|(&(g, seed), outcome)| RunRow {
            grid_index: g,
            grid: grid[g],
            seed,
            outcome,
        })
        .collect();
    if rows.iter().all(|r| matches!(r.outcome, RunOutcome::Failed { .. })) {
        let first = match &rows[0].outcome {
            RunOutcome::Failed { error } => error.clone(),
            RunOutcome::Ok { .. } => unreachable!(),
        };
        return Err(Error::Experiment(format!("all {} runs failed; first error: {first}", rows.len())));
    }
    Ok(ResultTable::from_rows(config.method, config.k, &grid, rows))
}

/// Gold label of every utterance in an evaluation split, in scoring order.
pub fn gold_labels(dataset: &Dataset, split: Split) -> Vec<Label> {
    dataset.eval_split(split).into_iter().map(|u| u.label).collect()
}
