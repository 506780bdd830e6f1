use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cola::allocation::OptimizerOptions;
use cola::cola::{Method, Optimizer};
use cola::datagen::{CaseId, Sizes};
use cola::harness::{
    allocate_scores, format_float, ingest_scores_csv, parse_methods, run_experiment, run_external, summarize,
    summary_csv, write_results_csv, ConfigFile, ExperimentConfig, ExternalConfig, TrialRecord,
};
use cola::{Error, Result};

#[derive(Parser)]
#[command(
    name = "cola",
    version,
    about = "Aggregate conformal prediction sets by allocating confidence levels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run Monte Carlo trials on a synthetic case.
    Simulate(SimulateArgs),
    /// Run the aggregation methods on a precomputed score matrix; models are not refit.
    Run(RunArgs),
    /// Fit one allocation on a score matrix and print it.
    Allocate(AllocateArgs),
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// 1, 2, 3 or individual.
    #[arg(long)]
    case: Option<CaseId>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_holdout: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated, e.g. cola-e,cola-s,efcp.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Number of scores in the Case 3 menu.
    #[arg(long)]
    n_scores: Option<usize>,
    #[arg(long)]
    ygrid_count: Option<usize>,
    #[arg(long)]
    target_ess: Option<f64>,
    /// Method that summary size ratios are relative to.
    #[arg(long)]
    reference: Option<Method>,
    #[arg(long)]
    record_timing: bool,
    /// File of `key = value` lines; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct RunArgs {
    /// CSV with columns s1..sK, optionally y and c1..cK.
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long, default_value = "cola-e,cola-s,efcp,vfcp,majority,random")]
    methods: String,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long, default_value_t = 4)]
    k_max: usize,
    #[arg(long, default_value_t = 10)]
    max_iter: usize,
    #[arg(long)]
    record_timing: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct AllocateArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// stepwise, exhaustive or smooth.
    #[arg(long, default_value = "stepwise")]
    optimizer: Optimizer,
    #[arg(long, default_value_t = 4)]
    k_max: usize,
    #[arg(long, default_value_t = 10)]
    max_iter: usize,
}

const SIMULATE_KEYS: &[&str] = &[
    "case",
    "alpha",
    "n-train",
    "n-holdout",
    "n-test",
    "trials",
    "seed",
    "methods",
    "k-max",
    "max-iter",
    "n-scores",
    "ygrid-count",
    "target-ess",
    "reference",
];

const DEFAULT_METHODS: &str = "cola-e,cola-s,efcp,vfcp,majority,random";

fn simulate(args: SimulateArgs) -> Result<()> {
    let file = match &args.config {
        Some(path) => ConfigFile::load(path, SIMULATE_KEYS)?,
        None => ConfigFile::default(),
    };
    let case = match args.case {
        Some(c) => c,
        None => file
            .get("case")?
            .ok_or_else(|| Error::Config("--case is required".into()))?,
    };
    let methods = parse_methods(&file.resolve(args.methods, "methods", DEFAULT_METHODS.to_string())?)?;
    let defaults = ExperimentConfig::new(case, methods.clone());
    let config = ExperimentConfig {
        case,
        methods,
        alpha: file.resolve(args.alpha, "alpha", defaults.alpha)?,
        sizes: Sizes {
            n_train: file.resolve(args.n_train, "n-train", defaults.sizes.n_train)?,
            n_holdout: file.resolve(args.n_holdout, "n-holdout", defaults.sizes.n_holdout)?,
            n_test: file.resolve(args.n_test, "n-test", defaults.sizes.n_test)?,
        },
        trials: file.resolve(args.trials, "trials", defaults.trials)?,
        seed: file.resolve(args.seed, "seed", defaults.seed)?,
        optimizer: OptimizerOptions {
            k_max: file.resolve(args.k_max, "k-max", defaults.optimizer.k_max)?,
            max_iter: file.resolve(args.max_iter, "max-iter", defaults.optimizer.max_iter)?,
            parallel: true,
        },
        n_scores: file.resolve(args.n_scores, "n-scores", defaults.n_scores)?,
        ygrid_count: file.resolve(args.ygrid_count, "ygrid-count", defaults.ygrid_count)?,
        target_ess: file.resolve(args.target_ess, "target-ess", defaults.target_ess)?,
        record_timing: args.record_timing,
    };
    let reference = file.resolve(args.reference, "reference", config.methods[0])?;
    let records = run_experiment(&config)?;
    finish(&records, reference, &args.out)
}

fn finish(records: &[TrialRecord], reference: Method, out: &std::path::Path) -> Result<()> {
    write_results_csv(records, out)?;
    print!("{}", summary_csv(&summarize(records, reference)?));
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let config = ExternalConfig {
        scores: args.scores,
        methods: parse_methods(&args.methods)?,
        alpha: args.alpha,
        split_seed: args.split_seed,
        trials: args.trials,
        optimizer: OptimizerOptions {
            k_max: args.k_max,
            max_iter: args.max_iter,
            parallel: true,
        },
        record_timing: args.record_timing,
    };
    let records = run_external(&config)?;
    finish(&records, config.methods[0], &args.out)
}

fn allocate(args: AllocateArgs) -> Result<()> {
    let data = ingest_scores_csv(&args.scores)?;
    let opts = OptimizerOptions {
        k_max: args.k_max,
        max_iter: args.max_iter,
        parallel: true,
    };
    let result = allocate_scores(&data, args.alpha, args.optimizer, &opts)?;
    println!("optimizer,alloc,loss");
    println!(
        "{},{},{}",
        args.optimizer,
        result.allocation.to_slash_string(),
        format_float(result.loss)
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Run(args) => run(args),
        Command::Allocate(args) => allocate(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
