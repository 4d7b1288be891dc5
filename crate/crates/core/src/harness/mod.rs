//! Experiment harness: config files, seed sweeps over hyper-parameter grids,
//! CSV output, and the canned Monte-Carlo checks.

mod appendix;
mod config;
mod experiment;
mod lemmas;

use std::path::PathBuf;

use thiserror::Error;

pub use appendix::{run_appendix_d, AppendixDParams, AppendixDReport};
pub use config::{
    ClipModeSpec, ClipSpec, ExperimentConfig, GridPoint, MinibatchClipSpec, NoiseKindSpec, NoiseSpec,
    ObjectiveKindSpec, ObjectiveSpec, OneOrMany, OptimizerSpec, OutputSpec, SeedSpec, SummaryMetric, TuneRule,
};
pub use experiment::{
    compare, comparison_table, pair_rows, run_experiment, run_records, summarize, trajectory_csv, ComparisonRow,
    RunOutcome, SummaryReport,
    SummaryRow,
};
pub use lemmas::{lemma_table, run_lemma_suite, LemmaRow, Verdict, MIN_LEMMA_DRAWS};

/// Environment variable that overrides `output.dir`.
pub const OUT_DIR_ENV: &str = "LOCALSIM_OUT";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] crate::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("budget mismatch: {0}")]
    Budget(String),
}

impl HarnessError {
    /// 2 for bad input, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 3,
        }
    }
}
