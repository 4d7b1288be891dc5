use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use localsim::harness::{
    compare, comparison_table, lemma_table, run_appendix_d, run_experiment, run_lemma_suite, AppendixDParams,
    ExperimentConfig, HarnessError, MIN_LEMMA_DRAWS, OUT_DIR_ENV,
};

#[derive(Parser)]
#[command(name = "localsim", version, about = "Local adaptive optimization simulator")]
struct Cli {
    /// Worker threads for the run pool (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (grid point, seed) of a config and write CSV output.
    Run {
        config: PathBuf,
        /// Output directory; overrides the config and the environment.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Like `run`, then pair local families with their minibatch baselines.
    Compare {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo checks of the moment and clipping bounds.
    Lemmas {
        #[arg(long, default_value_t = MIN_LEMMA_DRAWS)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Adversarial heavy-tail instance: SGD with and without clipping.
    AppendixD {
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
        #[arg(long = "lipschitz", default_value_t = 1.0)]
        l: f64,
        #[arg(long, default_value_t = 0.5)]
        eta: f64,
        #[arg(long, default_value_t = 2.0)]
        sigma: f64,
        #[arg(long, default_value_t = 4.0)]
        alpha: f64,
        #[arg(long, default_value_t = 4.0)]
        x0: f64,
        /// Horizon T; by default the smallest T whose contraction reaches the target.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Clipping level in units of sigma.
        #[arg(long, default_value_t = 3.0)]
        rho_factor: f64,
    },
}

fn load(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_toml(&text)
}

fn out_dir(cfg: &ExperimentConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from)).unwrap_or_else(|| cfg.output.dir.clone())
}

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run { config, out } => {
            let cfg = load(&config)?;
            let dir = out_dir(&cfg, out);
            let report = run_experiment(&cfg, &dir)?;
            print!("{}", report.table());
            println!("wrote {} trajectories and summary.csv to {}", report.files.len(), dir.display());
        }
        Command::Compare { config, out } => {
            let cfg = load(&config)?;
            let dir = out_dir(&cfg, out);
            let (report, pairs) = compare(&cfg, &dir)?;
            print!("{}", report.table());
            println!();
            print!("{}", comparison_table(&pairs));
        }
        Command::Lemmas { draws, seed } => {
            let rows = run_lemma_suite(seed, draws)?;
            print!("{}", lemma_table(&rows));
        }
        Command::AppendixD { eps, l, eta, sigma, alpha, x0, steps, trials, seed, rho_factor } => {
            let report = run_appendix_d(AppendixDParams { eps, l, eta, sigma, alpha, x0, steps, trials, seed, rho_factor })?;
            print!("{}", report.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(3);
        }
    };
    match pool.install(|| execute(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
