use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{ExperimentConfig, GridPoint, SummaryMetric, TuneRule};
use super::HarnessError;
use crate::diagnostics::{median, nearest_rank, Metric, RecorderSettings, TrajectoryRecord, TrajectoryRecorder};
use crate::optim::{run, Family, OptimizerConfig};
use crate::Error;

/// Result of a single (grid point, seed) run. `None` means the run diverged.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub grid: usize,
    pub seed: u64,
    pub record: Option<TrajectoryRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub family: Family,
    pub grid: usize,
    pub config: OptimizerConfig,
    pub seeds: usize,
    pub diverged: usize,
    pub median: f64,
    pub quantile: f64,
    /// Best median over `eta` within this row's tuning group.
    pub best_tuned: f64,
    /// This row holds the tuned `eta` of its group.
    pub tuned: bool,
    pub gradient_calls: usize,
    pub rounds: usize,
}

impl SummaryRow {
    pub fn is_diverged(&self) -> bool {
        self.diverged > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryReport {
    pub metric: SummaryMetric,
    pub q: f64,
    pub rows: Vec<SummaryRow>,
    /// Trajectory files written, in grid-then-seed order.
    pub files: Vec<PathBuf>,
}

/// A local family paired with its minibatch baseline at equal budget.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub local: SummaryRow,
    pub minibatch: SummaryRow,
}

fn final_metric(record: &TrajectoryRecord, metric: SummaryMetric) -> f64 {
    match metric {
        SummaryMetric::FinalGap => record.final_f_gap,
        SummaryMetric::XhatGap => record.xhat_f_gap.unwrap_or(record.final_f_gap),
        SummaryMetric::BestGap => record.best_f_gap,
        SummaryMetric::MoreauAvg => record.running_moreau_average().last().copied().unwrap_or(f64::NAN),
        SummaryMetric::PeakConsensus => record.peak(Metric::ConsensusErr),
    }
}

/// Runs every (grid point, seed) pair in parallel, in memory.
pub fn run_records(cfg: &ExperimentConfig) -> Result<(Vec<GridPoint>, Vec<RunOutcome>), HarnessError> {
    cfg.validate()?;
    let oracle = cfg.build_oracle()?;
    let x0 = cfg.x0()?;
    let grid = cfg.grid()?;
    let seeds = cfg.seeds()?;
    let settings = RecorderSettings { gamma: cfg.output.gamma, prox_tol: cfg.output.prox_tol };
    let jobs: Vec<(usize, u64)> = grid.iter().flat_map(|g| seeds.iter().map(move |&s| (g.index, s))).collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(gi, seed)| {
            let config = &grid[gi].config;
            let recorder = TrajectoryRecorder::new(oracle.objective(), config, seed, settings);
            match run(config, &oracle, &x0, seed, recorder) {
                Ok(record) => Ok(RunOutcome { grid: gi, seed, record: Some(record) }),
                Err(Error::Diverged { .. } | Error::NonFinite { .. }) => Ok(RunOutcome { grid: gi, seed, record: None }),
                Err(e) => Err(HarnessError::from(e)),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((grid, outcomes))
}

/// Builds summary rows from finished runs.
pub fn summarize(cfg: &ExperimentConfig, grid: &[GridPoint], outcomes: &[RunOutcome]) -> Result<SummaryReport, HarnessError> {
    let metric = cfg.output.metric;
    let q = cfg.output.quantile;
    let mut rows = Vec::with_capacity(grid.len());
    for g in grid {
        let runs: Vec<&RunOutcome> = outcomes.iter().filter(|o| o.grid == g.index).collect();
        let values: Vec<f64> = runs.iter().filter_map(|o| o.record.as_ref()).map(|r| final_metric(r, metric)).collect();
        let diverged = runs.len() - values.len();
        let (med, qv) = if diverged == 0 && !values.is_empty() {
            (median(&values)?, nearest_rank(&values, q)?)
        } else {
            (f64::NAN, f64::NAN)
        };
        rows.push(SummaryRow {
            family: g.config.family,
            grid: g.index,
            config: g.config.clone(),
            seeds: runs.len(),
            diverged,
            median: med,
            quantile: qv,
            best_tuned: med,
            tuned: false,
            gradient_calls: g.config.total_gradient_calls(),
            rounds: g.config.rounds,
        });
    }
    if cfg.output.tune == TuneRule::MinMedian {
        let mut best: BTreeMap<String, usize> = BTreeMap::new();
        for (i, row) in rows.iter().enumerate() {
            if row.is_diverged() || row.median.is_nan() {
                continue;
            }
            let key = format!("{}|{}", row.family.name(), group_key(&row.config));
            match best.get(&key) {
                Some(&j) if rows[j].median <= row.median => {}
                _ => {
                    best.insert(key, i);
                }
            }
        }
        for (key, &i) in &best {
            let value = rows[i].median;
            rows[i].tuned = true;
            for row in rows.iter_mut() {
                if format!("{}|{}", row.family.name(), group_key(&row.config)) == *key {
                    row.best_tuned = value;
                }
            }
        }
    }
    Ok(SummaryReport { metric, q, rows, files: Vec::new() })
}

/// Everything except the family and `eta`.
fn group_key(c: &OptimizerConfig) -> String {
    format!(
        "{}|{}|{}|{}|{:?}|{}|{}|{}|{:?}",
        c.workers,
        c.local_steps,
        c.rounds,
        c.clip.rho(),
        c.clip.mode(),
        c.beta1,
        c.beta2,
        c.lambda,
        c.minibatch_clip
    )
}

/// CSV bytes of one trajectory.
pub fn trajectory_csv(record: &TrajectoryRecord) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["seed", "family", "r", "k", "f_gap", "consensus_err", "moreau_grad_nsq", "grad_nsq"])?;
    let family = record.config.family.name();
    for e in &record.entries {
        w.write_record([
            record.seed.to_string(),
            family.to_string(),
            e.round.to_string(),
            e.step.to_string(),
            e.f_gap.to_string(),
            e.consensus_err.to_string(),
            e.moreau_grad_nsq.to_string(),
            e.grad_nsq.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| HarnessError::Io { path: PathBuf::from("<buffer>"), source: e.into_error() })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, bytes).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

fn mkdir(path: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

fn status(row: &SummaryRow) -> &'static str {
    if row.is_diverged() {
        "diverged"
    } else {
        "ok"
    }
}

impl SummaryReport {
    pub fn to_csv(&self) -> Result<Vec<u8>, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let qcol = format!("q{}", self.q);
        w.write_record([
            "family", "grid", "eta", "rho", "beta1", "beta2", "lambda", "workers", "local_steps", "rounds", "seeds",
            "status", "metric", "median", &qcol, "best_tuned", "tuned", "gradient_calls", "comm_rounds",
        ])?;
        for r in &self.rows {
            let c = &r.config;
            w.write_record([
                r.family.name().to_string(),
                r.grid.to_string(),
                c.eta.to_string(),
                c.clip.rho().to_string(),
                c.beta1.to_string(),
                c.beta2.to_string(),
                c.lambda.to_string(),
                c.workers.to_string(),
                c.local_steps.to_string(),
                c.rounds.to_string(),
                r.seeds.to_string(),
                status(r).to_string(),
                self.metric.name().to_string(),
                r.median.to_string(),
                r.quantile.to_string(),
                r.best_tuned.to_string(),
                r.tuned.to_string(),
                r.gradient_calls.to_string(),
                r.rounds.to_string(),
            ])?;
        }
        w.into_inner().map_err(|e| HarnessError::Io { path: PathBuf::from("<buffer>"), source: e.into_error() })
    }

    /// Fixed-width text table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let qcol = format!("q{}", self.q);
        let _ = writeln!(
            s,
            "{:<15} {:>4} {:>9} {:>7} {:>4} {:>4} {:>5} {:>9} {:>8} {:>12} {:>12} {:>5}",
            "family", "grid", "eta", "rho", "M", "K", "R", "calls", "status", self.metric.name(), qcol, "tuned"
        );
        for r in &self.rows {
            let c = &r.config;
            let _ = writeln!(
                s,
                "{:<15} {:>4} {:>9.3e} {:>7} {:>4} {:>4} {:>5} {:>9} {:>8} {:>12.4e} {:>12.4e} {:>5}",
                r.family.name(),
                r.grid,
                c.eta,
                c.clip.rho(),
                c.workers,
                c.local_steps,
                c.rounds,
                r.gradient_calls,
                status(r),
                r.median,
                r.quantile,
                if r.tuned { "*" } else { "" }
            );
        }
        s
    }
}

/// Runs the experiment and writes `runs/*.csv`, `summary.csv` and the
/// resolved `config.toml` under `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<SummaryReport, HarnessError> {
    let (grid, outcomes) = run_records(cfg)?;
    let runs_dir = out_dir.join("runs");
    mkdir(&runs_dir)?;
    let files = outcomes
        .par_iter()
        .filter_map(|o| o.record.as_ref().map(|r| (o, r)))
        .map(|(o, record)| {
            let name = format!("{}_g{:04}_s{}.csv", record.config.family.name(), o.grid, o.seed);
            let path = runs_dir.join(name);
            write(&path, &trajectory_csv(record)?)?;
            Ok(path)
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let mut report = summarize(cfg, &grid, &outcomes)?;
    report.files = files;
    write(&out_dir.join("summary.csv"), &report.to_csv()?)?;
    write(&out_dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    Ok(report)
}

/// Pairs each local family with its minibatch counterpart at the same
/// topology and clipping, and checks that both spend the same budget.
pub fn pair_rows(report: &SummaryReport, tuned_only: bool) -> Result<Vec<ComparisonRow>, HarnessError> {
    let mut pairs = Vec::new();
    for local in report.rows.iter().filter(|r| !r.family.is_minibatch()) {
        if tuned_only && !local.tuned {
            continue;
        }
        let Some(target) = local.family.minibatch_counterpart() else { continue };
        let key = group_key(&local.config);
        let found = report.rows.iter().find(|r| {
            r.family == target
                && group_key(&r.config) == key
                && if tuned_only { r.tuned } else { r.config.eta == local.config.eta }
        });
        if let Some(mb) = found {
            if mb.gradient_calls != local.gradient_calls || mb.rounds != local.rounds {
                return Err(HarnessError::Budget(format!(
                    "{} grid {} uses {} calls / {} rounds but {} grid {} uses {} / {}",
                    local.family, local.grid, local.gradient_calls, local.rounds, mb.family, mb.grid, mb.gradient_calls, mb.rounds
                )));
            }
            pairs.push(ComparisonRow { local: local.clone(), minibatch: mb.clone() });
        }
    }
    Ok(pairs)
}

/// `run_experiment` followed by a local-vs-minibatch table in `comparison.csv`.
pub fn compare(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(SummaryReport, Vec<ComparisonRow>), HarnessError> {
    let report = run_experiment(cfg, out_dir)?;
    let pairs = pair_rows(&report, cfg.output.tune == TuneRule::MinMedian)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "local", "local_grid", "local_eta", "local_median", "minibatch", "minibatch_grid", "minibatch_eta",
        "minibatch_median", "workers", "local_steps", "rounds", "gradient_calls",
    ])?;
    for p in &pairs {
        w.write_record([
            p.local.family.name().to_string(),
            p.local.grid.to_string(),
            p.local.config.eta.to_string(),
            p.local.median.to_string(),
            p.minibatch.family.name().to_string(),
            p.minibatch.grid.to_string(),
            p.minibatch.config.eta.to_string(),
            p.minibatch.median.to_string(),
            p.local.config.workers.to_string(),
            p.local.config.local_steps.to_string(),
            p.local.rounds.to_string(),
            p.local.gradient_calls.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Io { path: PathBuf::from("<buffer>"), source: e.into_error() })?;
    write(&out_dir.join("comparison.csv"), &bytes)?;
    Ok((report, pairs))
}

/// Text table for `compare`.
pub fn comparison_table(pairs: &[ComparisonRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:>9} {:>12} {:<15} {:>9} {:>12} {:>4} {:>4} {:>5} {:>9}",
        "local", "eta", "median", "minibatch", "eta", "median", "M", "K", "R", "calls"
    );
    for p in pairs {
        let _ = writeln!(
            s,
            "{:<12} {:>9.3e} {:>12.4e} {:<15} {:>9.3e} {:>12.4e} {:>4} {:>4} {:>5} {:>9}",
            p.local.family.name(),
            p.local.config.eta,
            p.local.median,
            p.minibatch.family.name(),
            p.minibatch.config.eta,
            p.minibatch.median,
            p.local.config.workers,
            p.local.config.local_steps,
            p.local.rounds,
            p.local.gradient_calls
        );
    }
    s
}
