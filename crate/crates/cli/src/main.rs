//! groupfair: fair division of indivisible goods among variable groups.
//!
//! Solvers read an instance file (JSON: group sizes plus an additive
//! matrix or monotone table) and print the outcome as JSON. Experiment
//! commands read a sweep config and exit with 0 on success, 1 on property
//! failures, 2 on invalid input, 3 on budget aborts.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use groupfair::experiments::{
    report_to_json, run_connected_stress, run_ef1_stress, run_sweep, StressReport, SweepConfig,
};
use groupfair::prob::bounds::bound_evaluators;
use groupfair::prob::{
    estimate_pair_probs, exists_ef_exact, exists_ef_exact_with_budget, is_delta_ib,
    randomized_ef_search, sample_balanced_allocation, Distribution, RandomModel,
};
use groupfair::{connected, ef1, Error, Instance, Outcome};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "groupfair",
    version,
    about = "Fair division for variable groups"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve an instance with generalized envy cycle elimination (EF1).
    SolveEf1(SolveEf1Args),
    /// Find a connected (interval) EF1 allocation on the path of goods.
    SolveConnected(SolveConnectedArgs),
    /// Exhaustive envy-free existence search.
    EfExact(EfExactArgs),
    /// Randomized envy-free search over balanced allocations.
    EfRandom(EfRandomArgs),
    /// Evaluate the closed-form existence bounds at one parameter point.
    Bounds(BoundsArgs),
    /// Estimate joint favorite-bundle probabilities for a balanced pair.
    PairProbs(PairProbsArgs),
    /// Run a parameter sweep from a config file and write a CSV.
    Sweep(SweepArgs),
    /// EF1 stress suite: solve random instances and verify every output.
    StressEf1(StressArgs),
    /// Connected EF1 stress suite.
    StressConnected(StressArgs),
}

#[derive(Args)]
struct SolveEf1Args {
    /// Instance file (JSON).
    #[arg(long)]
    instance: PathBuf,
    /// Good processing order as comma-separated ids, e.g. "3,1,2".
    #[arg(long)]
    order: Option<String>,
    /// Write the solver trace as line-delimited JSON records.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct SolveConnectedArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Seating certificate each agent must get against every bundle.
    #[arg(long, value_enum, default_value_t = Mode::UpToOne)]
    mode: Mode,
    /// Worker threads scanning the cut space (default 1: deterministic).
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    UpToOne,
    Ef1,
}

#[derive(Args)]
struct EfExactArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Cap on the k^m search space.
    #[arg(long)]
    budget: Option<u128>,
}

#[derive(Args)]
struct EfRandomArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Number of balanced allocations to try (default n^{2k}, capped).
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    n: usize,
    /// Good count; real-valued so asymptotic diets like ln(n)/4 fit.
    #[arg(long)]
    m: f64,
    #[arg(long)]
    k: usize,
    /// Distribution as JSON, e.g. '{"kind":"beta","alpha":2,"beta":5}'.
    #[arg(long, default_value = r#"{"kind":"uniform"}"#)]
    distribution: String,
}

#[derive(Args)]
struct PairProbsArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    k: usize,
    /// Intersection-balance tolerance the sampled pair must satisfy.
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = r#"{"kind":"uniform"}"#)]
    distribution: String,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep config file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// CSV destination; overrides the config's `out` field.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StressArgs {
    #[arg(long)]
    config: PathBuf,
}

fn main() -> ExitCode {
    // Die quietly on a closed pipe (e.g. `groupfair sweep ... | head`)
    // like any other filter, instead of panicking mid-print.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(classify(&err))
        }
    }
}

/// Exit codes: 1 property failure, 2 invalid input, 3 budget abort.
fn classify(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::BudgetExceeded { .. }) => 3,
        Some(Error::InvariantViolation(_)) => 1,
        _ => 2,
    }
}

fn load_instance(path: &PathBuf) -> anyhow::Result<Instance> {
    let text = std::fs::read_to_string(path)?;
    Ok(Instance::from_json_str(&text)?)
}

fn parse_distribution(text: &str) -> anyhow::Result<Distribution> {
    let dist: Distribution = serde_json::from_str(text)?;
    dist.validate()?;
    Ok(dist)
}

fn print_outcome(outcome: &Outcome) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(outcome)?);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::SolveEf1(args) => {
            let instance = load_instance(&args.instance)?;
            let order: Option<Vec<usize>> = match &args.order {
                None => None,
                Some(text) => Some(
                    text.split(',')
                        .map(|part| part.trim().parse::<usize>())
                        .collect::<Result<_, _>>()
                        .map_err(|e| anyhow::anyhow!("bad --order: {e}"))?,
                ),
            };
            let (outcome, trace) = ef1::solve_ef1(&instance, order.as_deref())?;
            if let Some(path) = &args.trace {
                let mut file = std::fs::File::create(path)?;
                for event in &trace.events {
                    serde_json::to_writer(&mut file, event)?;
                    file.write_all(b"\n")?;
                }
            }
            print_outcome(&outcome)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::SolveConnected(args) => {
            let instance = load_instance(&args.instance)?;
            let strength = match args.mode {
                Mode::UpToOne => connected::Strength::UpToOne,
                Mode::Ef1 => connected::Strength::Ef1,
            };
            let outcome =
                connected::solve_connected_with_workers(&instance, strength, args.workers)?;
            print_outcome(&outcome)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::EfExact(args) => {
            let instance = load_instance(&args.instance)?;
            let found = match args.budget {
                Some(budget) => exists_ef_exact_with_budget(&instance, budget)?,
                None => exists_ef_exact(&instance)?,
            };
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({
                    "found": found.is_some(),
                    "outcome": found,
                }))?
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::EfRandom(args) => {
            let instance = load_instance(&args.instance)?;
            let found = randomized_ef_search(&instance, args.trials, args.seed)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({
                    "found": found.is_some(),
                    "outcome": found,
                }))?
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Bounds(args) => {
            let distribution = parse_distribution(&args.distribution)?;
            let model = RandomModel::new(distribution, 0)?;
            let report = bound_evaluators(args.n, args.m, args.k, &model)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::PairProbs(args) => {
            let distribution = parse_distribution(&args.distribution)?;
            let model = RandomModel::new(distribution, args.seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            let (a, b) = loop {
                let a = sample_balanced_allocation(args.m, args.k, &mut rng)?;
                let b = sample_balanced_allocation(args.m, args.k, &mut rng)?;
                if is_delta_ib(&a, &b, args.delta)? {
                    break (a, b);
                }
            };
            let probs = estimate_pair_probs(&a, &b, &model, args.trials)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({
                    "first": a,
                    "second": b,
                    "delta": args.delta,
                    "probs": probs,
                }))?
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep(args) => {
            let text = std::fs::read_to_string(&args.config)?;
            let mut config = SweepConfig::from_json_str(&text)?;
            if let Some(out) = args.out {
                config.out = Some(out);
            }
            let result = run_sweep(&config)?;
            report_to_json(&result, &mut std::io::stdout())?;
            if result.all_complete() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("warning: some cells hit their budget before finishing");
                Ok(ExitCode::from(3))
            }
        }
        Command::StressEf1(args) => stress(&args.config, run_ef1_stress),
        Command::StressConnected(args) => stress(&args.config, run_connected_stress),
    }
}

fn stress(
    path: &PathBuf,
    runner: fn(&SweepConfig) -> groupfair::Result<StressReport>,
) -> anyhow::Result<ExitCode> {
    let text = std::fs::read_to_string(path)?;
    let config = SweepConfig::from_json_str(&text)?;
    let report = runner(&config)?;
    report_to_json(&report, &mut std::io::stdout())?;
    if report.passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "error: {} of {} trials failed",
            report.failures.len(),
            report.trials
        );
        Ok(ExitCode::from(1))
    }
}
