//! Few-shot intent detection with out-of-scope rejection.
//!
//! The pieces, bottom up:
//!
//! * [`corpus`]: canonical corpus files, K-shot sampling, domain filters.
//! * [`pairs`]: ordered NLI-style (premise, hypothesis, match) pairs.
//! * [`scorer`]: pairwise match scores and embeddings, built in or remote.
//! * [`classify`]: DNNC, Emb-kNN, centroid classifier and DNNC-joint.
//! * [`eval`]: in-domain accuracy, OOS recall, joint-score calibration, reports.
//! * [`augment`]: EDA and back-translation ingestion.
//! * [`harness`]: seeded multi-run experiments.

pub mod augment;
pub mod classify;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod exec;
pub mod harness;
pub mod pairs;
pub mod scorer;
pub mod seed;
pub mod tsv;

pub use error::{Error, Result};
