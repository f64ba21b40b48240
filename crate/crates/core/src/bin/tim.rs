//! Command-line front end: `tim run`, `tim convert`, `tim audit`, `tim generate`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use tim::adm::{AblationVariant, QSolver, FIXED_POINT_TOL};
use tim::bounds::{label_distribution, proposition1_bound_with};
use tim::harness::{read_posterior_dump, run_benchmark, BankSource, RunConfig, Solver};
use tim::tasks::{generate_synthetic_bank, read_bank, write_bank, EpisodeSpec, SyntheticConfig};
use tim::{Error, Hyperparameters, Result};

#[derive(Parser)]
#[command(
    name = "tim",
    version,
    about = "Transductive few-shot inference on embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve many sampled episodes and aggregate the results.
    Run(Box<RunArgs>),
    /// Convert an embedding file between CSV and binary (by extension).
    Convert { input: PathBuf, output: PathBuf },
    /// Evaluate the error bound on a stored posterior dump.
    Audit(AuditArgs),
    /// Write a synthetic embedding bank to a file.
    Generate {
        /// Synthetic config, e.g. `hard,dim=32,seed=3`.
        #[arg(long, default_value = "typical")]
        config: String,
        output: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "adm")]
    solver: Solver,
    #[arg(long, default_value = "full")]
    variant: AblationVariant,
    #[arg(long, default_value_t = 5)]
    ways: usize,
    #[arg(long, default_value_t = 1)]
    shots: usize,
    /// Query samples per class.
    #[arg(long, default_value_t = 15)]
    query: usize,
    /// Draw random tasks with ways in this range, e.g. `3-10`.
    #[arg(long, value_parser = parse_range)]
    random_ways: Option<(usize, usize)>,
    /// Per-class support range for random tasks, e.g. `1-5`.
    #[arg(long, value_parser = parse_range, requires = "random_ways")]
    random_support: Option<(usize, usize)>,
    /// Total query count for random tasks.
    #[arg(long, requires = "random_ways")]
    query_budget: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    episodes: usize,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Defaults to 150 for adm and 1000 for gd.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `synthetic:<preset>[,key=value...]` or `file:<path>`.
    #[arg(long, default_value = "synthetic:typical")]
    bank: BankSource,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    hessian_check: bool,
    #[arg(long)]
    bound_audit: bool,
    #[arg(long)]
    fixed_point_test: bool,
    #[arg(long, default_value_t = FIXED_POINT_TOL)]
    fixed_point_tol: f64,
    /// Solve the assignment step exactly instead of in closed form.
    #[arg(long)]
    exact_q: bool,
    /// Plain gradient steps instead of Adam.
    #[arg(long)]
    plain_gd: bool,
    /// Number of per-episode traces to write.
    #[arg(long, default_value_t = 10)]
    traces: usize,
    #[arg(long)]
    dump_posteriors: bool,
}

#[derive(Args)]
struct AuditArgs {
    /// CSV with header `truth,p0,...,p{K-1}`.
    input: PathBuf,
    /// Comma-separated prior; defaults to the empirical label distribution.
    #[arg(long)]
    prior: Option<String>,
    /// Use `>=` instead of `>` for diagonal dominance.
    #[arg(long)]
    weak_dominance: bool,
}

fn parse_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once('-').unwrap_or((s, s));
    let lo = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let hi = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
    Ok((lo, hi))
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = RunConfig::new(args.solver, args.bank);
    let defaults = match args.solver {
        Solver::Gd => Hyperparameters::gd(),
        Solver::Adm => Hyperparameters::adm(),
    };
    cfg.hyperparameters = Hyperparameters {
        tau: args.tau.unwrap_or(defaults.tau),
        alpha: args.alpha.unwrap_or(defaults.alpha),
        lambda: args.lambda.unwrap_or(defaults.lambda),
        beta: args.beta.unwrap_or(defaults.beta),
        learning_rate: args.lr.unwrap_or(defaults.learning_rate),
        iterations: args.iters.unwrap_or(defaults.iterations),
    };
    cfg.variant = args.variant;
    cfg.episode = match args.random_ways {
        Some(ways) => EpisodeSpec::Random {
            ways,
            support: args.random_support.unwrap_or((args.shots, args.shots)),
            query_budget: args.query_budget.unwrap_or(args.query * ways.1),
        },
        None => EpisodeSpec::standard(args.ways, args.shots, args.query),
    };
    cfg.episodes = args.episodes;
    cfg.seed = args.seed;
    cfg.output = args.out;
    cfg.hessian_check = args.hessian_check;
    cfg.bound_audit = args.bound_audit;
    cfg.fixed_point_test = args.fixed_point_test;
    cfg.fixed_point_tol = args.fixed_point_tol;
    cfg.q_solver = if args.exact_q {
        QSolver::Exact
    } else {
        QSolver::ClosedForm
    };
    cfg.plain_gd = args.plain_gd;
    cfg.trace_episodes = args.traces;
    cfg.dump_posteriors = args.dump_posteriors;

    let run = run_benchmark(&cfg)?;
    let a = &run.aggregate;
    let summary = json!({
        "solver": a.solver,
        "variant": a.variant,
        "episodes": a.episodes_run,
        "mean_accuracy": a.mean_accuracy,
        "ci95": a.ci95,
        "mean_initial_accuracy": a.mean_initial_accuracy,
        "collapse_rate": a.collapse_rate,
        "mi_growth_rate": a.mi_growth_rate,
        "descent_violation_rate": a.descent_violation_rate,
        "first_step_rise_rate": a.first_step_rise_rate,
        "hessian_pass_rate": a.hessian_pass_rate,
        "fixed_point_pass_rate": a.fixed_point_pass_rate,
        "bound_audit_pass_rate": a.bound_audit_pass_rate,
        "bound_audit_applicable": a.bound_audit_applicable,
        "mean_episode_seconds": run.timing.mean_episode_seconds,
        "total_seconds": run.timing.total_seconds,
    });
    println!("{summary}");
    Ok(())
}

fn audit(args: AuditArgs) -> Result<()> {
    let (posteriors, truth) = read_posterior_dump(&args.input)?;
    let k = posteriors.num_classes();
    let prior = match args.prior {
        Some(s) => s
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("prior entry {v:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?,
        None => label_distribution(&truth, k),
    };
    let report = proposition1_bound_with(&posteriors, &truth, &prior, !args.weak_dominance)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => run(*args),
        Command::Convert { input, output } => {
            let bank = read_bank(&input)?;
            write_bank(&bank, &output)?;
            println!(
                "{}",
                json!({"converted": bank.len(), "dim": bank.dim(), "classes": bank.num_classes()})
            );
            Ok(())
        }
        Command::Audit(args) => audit(args),
        Command::Generate { config, output } => {
            let cfg: SyntheticConfig = config.parse()?;
            let bank = generate_synthetic_bank(&cfg)?;
            write_bank(&bank, &output)?;
            println!("{}", json!({"written": bank.len(), "dim": bank.dim()}));
            Ok(())
        }
    }
}

fn error_line(kind: &str, message: &str) -> String {
    json!({"error": {"kind": kind, "message": message}}).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            e.exit()
        }
        Err(e) => {
            eprintln!("{}", error_line("usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
