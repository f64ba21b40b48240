//! Episode-level evaluation: run a solver over many sampled tasks and
//! aggregate accuracy, diagnostics and audits.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adm::{
    fixed_point_residual, run_tim_adm_with, AblationVariant, AdmOptions, FixedPointResidual,
    QSolver, FIXED_POINT_TOL,
};
use crate::bounds::{label_distribution, proposition1_bound, BoundReport, BoundVerdict};
use crate::classifier::{query_accuracy, Posteriors};
use crate::error::{Error, Result};
use crate::gd::{run_tim_gd_with, Optimizer};
use crate::task::{Hyperparameters, Task};
use crate::tasks::{
    generate_synthetic_bank, read_bank, sample_episode, EmbeddingBank, EpisodeSpec, SyntheticConfig,
};
use crate::trace::ConvergenceTrace;

/// Loss increases larger than this count as descent violations.
pub const DESCENT_TOL: f64 = 1e-9;

/// Share of query predictions in one class that counts as a collapse.
pub const COLLAPSE_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Gd,
    Adm,
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Solver::Gd => "gd",
            Solver::Adm => "adm",
        })
    }
}

impl FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gd" => Ok(Solver::Gd),
            "adm" => Ok(Solver::Adm),
            other => Err(Error::Config(format!("unknown solver {other:?}"))),
        }
    }
}

/// Where episodes come from: `synthetic:<cfg>` or `file:<path>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BankSource {
    Synthetic(SyntheticConfig),
    File(PathBuf),
}

impl BankSource {
    pub fn load(&self) -> Result<EmbeddingBank> {
        match self {
            BankSource::Synthetic(cfg) => generate_synthetic_bank(cfg),
            BankSource::File(path) => read_bank(path),
        }
    }
}

impl FromStr for BankSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(cfg) = s.strip_prefix("synthetic:") {
            Ok(BankSource::Synthetic(cfg.parse()?))
        } else if s == "synthetic" {
            Ok(BankSource::Synthetic(SyntheticConfig::default()))
        } else if let Some(path) = s.strip_prefix("file:") {
            Ok(BankSource::File(PathBuf::from(path)))
        } else {
            Err(Error::Config(format!(
                "bank must be synthetic:<cfg> or file:<path>, got {s:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub solver: Solver,
    pub variant: AblationVariant,
    pub hyperparameters: Hyperparameters,
    pub episode: EpisodeSpec,
    pub episodes: usize,
    pub seed: u64,
    pub bank: BankSource,
    /// Directory for artifacts; nothing is written when unset.
    pub output: Option<PathBuf>,
    pub hessian_check: bool,
    pub bound_audit: bool,
    pub fixed_point_test: bool,
    pub fixed_point_tol: f64,
    pub q_solver: QSolver,
    /// Use plain gradient steps instead of Adam.
    pub plain_gd: bool,
    /// Number of leading episodes whose traces are written.
    pub trace_episodes: usize,
    pub dump_posteriors: bool,
}

impl RunConfig {
    /// 1000 episodes of 5-way 1-shot with 15 queries per class, solver defaults.
    pub fn new(solver: Solver, bank: BankSource) -> Self {
        RunConfig {
            solver,
            variant: AblationVariant::Full,
            hyperparameters: match solver {
                Solver::Gd => Hyperparameters::gd(),
                Solver::Adm => Hyperparameters::adm(),
            },
            episode: EpisodeSpec::standard(5, 1, 15),
            episodes: 1000,
            seed: 0,
            bank,
            output: None,
            hessian_check: false,
            bound_audit: false,
            fixed_point_test: false,
            fixed_point_tol: FIXED_POINT_TOL,
            q_solver: QSolver::ClosedForm,
            plain_gd: false,
            trace_episodes: 10,
            dump_posteriors: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("episode count must be at least 1".into()));
        }
        self.hyperparameters.validate()?;
        self.episode.validate()?;
        if self.solver == Solver::Gd && self.variant != AblationVariant::Full {
            return Err(Error::Config(
                "ablation variants are only defined for the adm solver".into(),
            ));
        }
        Ok(())
    }

    /// Seed of episode `index`, derived from the run seed alone.
    pub fn episode_seed(&self, index: usize) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64 + 1);
        rng.next_u64()
    }
}

/// Per-episode outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub index: usize,
    pub seed: u64,
    pub ways: usize,
    pub support_size: usize,
    pub query_size: usize,
    pub initial_accuracy: f64,
    pub accuracy: f64,
    pub initial_mi: f64,
    pub final_mi: f64,
    pub final_loss: f64,
    /// Share of query predictions that fall in the most predicted class.
    pub largest_class_fraction: f64,
    pub collapsed: bool,
    /// Iterations `t ≥ 2` whose loss rose by more than [`DESCENT_TOL`]
    /// over iteration `t − 1` (adm only).
    pub descent_violations: Option<usize>,
    /// Whether the first iteration ended above the initial loss, which is
    /// evaluated with the assignments set to the initial posteriors (adm only).
    pub first_step_rise: Option<bool>,
    pub hessian_passed: Option<bool>,
    pub max_hessian_eigenvalue: Option<f64>,
    pub fixed_point: Option<FixedPointResidual>,
    pub fixed_point_passed: Option<bool>,
    pub bound: Option<BoundReport>,
}

/// Aggregate over all episodes. Contains no timing, so identical
/// configurations produce identical values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub solver: Solver,
    pub variant: AblationVariant,
    pub episodes_run: usize,
    pub mean_accuracy: f64,
    /// 95% half-width, `1.96·σ/√n` over per-episode accuracies.
    pub ci95: f64,
    pub mean_initial_accuracy: f64,
    pub collapse_rate: f64,
    /// Share of episodes whose final MI exceeds the initial MI.
    pub mi_growth_rate: f64,
    pub descent_violation_rate: Option<f64>,
    pub first_step_rise_rate: Option<f64>,
    pub hessian_pass_rate: Option<f64>,
    pub fixed_point_pass_rate: Option<f64>,
    /// Pass rate among episodes where the bound applies.
    pub bound_audit_pass_rate: Option<f64>,
    pub bound_audit_applicable: Option<usize>,
    pub episodes: Vec<EpisodeRecord>,
}

/// Wall-clock measurements, kept apart from the deterministic aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub mean_episode_seconds: f64,
    pub episode_seconds: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkRun {
    pub aggregate: AggregateResult,
    pub timing: Timing,
}

/// Mean and normal-approximation 95% half-width.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

struct EpisodeOutput {
    record: EpisodeRecord,
    trace: ConvergenceTrace,
    posteriors: Posteriors,
    truth: Vec<usize>,
    seconds: f64,
}

fn largest_class_fraction(predictions: &[usize], k: usize) -> f64 {
    let mut counts = vec![0usize; k];
    for &p in predictions {
        counts[p] += 1;
    }
    *counts.iter().max().unwrap_or(&0) as f64 / predictions.len().max(1) as f64
}

fn run_episode(cfg: &RunConfig, bank: &EmbeddingBank, index: usize) -> Result<EpisodeOutput> {
    let start = Instant::now();
    let seed = cfg.episode_seed(index);
    let task = sample_episode(bank, &cfg.episode, seed)?;
    let truth = task
        .query_labels()
        .map(<[usize]>::to_vec)
        .unwrap_or_default();
    // Solvers only ever see the unlabelled view.
    let solver_task = task.without_query_labels();
    let hp = &cfg.hyperparameters;

    let mut record = EpisodeRecord {
        index,
        seed,
        ways: task.num_classes(),
        support_size: task.support_len(),
        query_size: task.query_len(),
        initial_accuracy: 0.0,
        accuracy: 0.0,
        initial_mi: 0.0,
        final_mi: 0.0,
        final_loss: 0.0,
        largest_class_fraction: 0.0,
        collapsed: false,
        descent_violations: None,
        first_step_rise: None,
        hessian_passed: None,
        max_hessian_eigenvalue: None,
        fixed_point: None,
        fixed_point_passed: None,
        bound: None,
    };

    let initial_posteriors = crate::classifier::compute_posteriors(
        &crate::classifier::init_prototypes(&solver_task)?,
        &solver_task,
        hp.tau,
    )?;
    record.initial_accuracy = query_accuracy(&initial_posteriors.predictions(), &truth)?;

    let (trace, posteriors) = match cfg.solver {
        Solver::Gd => {
            let optimizer = if cfg.plain_gd {
                Optimizer::Plain
            } else {
                Optimizer::adam()
            };
            let r = run_tim_gd_with(&solver_task, hp, optimizer)?;
            (r.trace, r.final_posteriors)
        }
        Solver::Adm => {
            let options = AdmOptions {
                variant: cfg.variant,
                q_solver: cfg.q_solver,
                hessian_check: cfg.hessian_check,
                fixed_point_tol: cfg.fixed_point_tol,
            };
            let r = run_tim_adm_with(&solver_task, hp, &options)?;
            let losses: Vec<f64> = r.trace.records().iter().map(|x| x.loss).collect();
            record.descent_violations = Some(
                losses
                    .windows(2)
                    .filter(|w| w[1] > w[0] + DESCENT_TOL)
                    .count(),
            );
            record.first_step_rise = losses
                .first()
                .map(|&l| l > r.trace.initial().loss + DESCENT_TOL);
            if cfg.hessian_check {
                record.hessian_passed = Some(r.hessian_passed());
                record.max_hessian_eigenvalue = r
                    .hessian_reports
                    .iter()
                    .map(|h| h.max_eigenvalue())
                    .reduce(f64::max);
            }
            if cfg.fixed_point_test {
                let residual = fixed_point_residual(&r, &solver_task, hp)?;
                record.fixed_point_passed = Some(residual.within(cfg.fixed_point_tol));
                record.fixed_point = Some(residual);
            }
            (r.trace, r.final_posteriors)
        }
    };

    let predictions = posteriors.predictions();
    record.accuracy = query_accuracy(&predictions, &truth)?;
    record.initial_mi = trace.initial().mi_alpha1;
    record.final_mi = trace.last().mi_alpha1;
    record.final_loss = trace.last().loss;
    record.largest_class_fraction = largest_class_fraction(&predictions, task.num_classes());
    record.collapsed = record.largest_class_fraction >= COLLAPSE_FRACTION;
    if cfg.bound_audit {
        let prior = label_distribution(&truth, task.num_classes());
        record.bound = Some(proposition1_bound(&posteriors, &truth, &prior)?);
    }

    Ok(EpisodeOutput {
        record,
        trace,
        posteriors,
        truth,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn rate(flags: impl Iterator<Item = bool>) -> Option<f64> {
    let (mut hits, mut n) = (0usize, 0usize);
    for f in flags {
        n += 1;
        hits += usize::from(f);
    }
    (n > 0).then(|| hits as f64 / n as f64)
}

fn aggregate(cfg: &RunConfig, records: Vec<EpisodeRecord>) -> AggregateResult {
    let acc: Vec<f64> = records.iter().map(|r| r.accuracy).collect();
    let (mean_accuracy, ci95) = mean_ci95(&acc);
    let n = records.len() as f64;
    let applicable: Vec<&BoundReport> = records
        .iter()
        .filter_map(|r| r.bound.as_ref())
        .filter(|b| matches!(b.verdict, BoundVerdict::Holds | BoundVerdict::Violated))
        .collect();
    AggregateResult {
        solver: cfg.solver,
        variant: cfg.variant,
        episodes_run: records.len(),
        mean_accuracy,
        ci95,
        mean_initial_accuracy: records.iter().map(|r| r.initial_accuracy).sum::<f64>() / n,
        collapse_rate: records.iter().filter(|r| r.collapsed).count() as f64 / n,
        mi_growth_rate: records.iter().filter(|r| r.final_mi > r.initial_mi).count() as f64 / n,
        descent_violation_rate: rate(
            records
                .iter()
                .filter_map(|r| r.descent_violations)
                .map(|v| v > 0),
        ),
        first_step_rise_rate: rate(records.iter().filter_map(|r| r.first_step_rise)),
        hessian_pass_rate: rate(records.iter().filter_map(|r| r.hessian_passed)),
        fixed_point_pass_rate: rate(records.iter().filter_map(|r| r.fixed_point_passed)),
        bound_audit_pass_rate: cfg
            .bound_audit
            .then(|| rate(applicable.iter().map(|b| b.bound_holds)))
            .flatten(),
        bound_audit_applicable: cfg.bound_audit.then_some(applicable.len()),
        episodes: records,
    }
}

/// Samples and solves every episode, in parallel across episodes. Results
/// are collected in episode order, so they do not depend on scheduling.
pub fn run_benchmark(cfg: &RunConfig) -> Result<BenchmarkRun> {
    cfg.validate()?;
    let start = Instant::now();
    let bank = cfg.bank.load()?;
    let outputs: Vec<Result<EpisodeOutput>> = (0..cfg.episodes)
        .into_par_iter()
        .map(|i| {
            run_episode(cfg, &bank, i).map_err(|e| Error::Episode {
                index: i,
                source: Box::new(e),
            })
        })
        .collect();
    let outputs = outputs.into_iter().collect::<Result<Vec<_>>>()?;

    if let Some(dir) = &cfg.output {
        write_artifacts(dir, cfg, &outputs)?;
    }
    let episode_seconds: Vec<f64> = outputs.iter().map(|o| o.seconds).collect();
    let records = outputs.into_iter().map(|o| o.record).collect();
    let aggregate = aggregate(cfg, records);
    let timing = Timing {
        total_seconds: start.elapsed().as_secs_f64(),
        mean_episode_seconds: episode_seconds.iter().sum::<f64>() / episode_seconds.len() as f64,
        episode_seconds,
    };
    if let Some(dir) = &cfg.output {
        emit_report(&aggregate, dir.join("report.json"))?;
        fs::write(
            dir.join("timing.json"),
            serde_json::to_string_pretty(&timing)?,
        )?;
    }
    Ok(BenchmarkRun { aggregate, timing })
}

fn write_artifacts(dir: &Path, cfg: &RunConfig, outputs: &[EpisodeOutput]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(cfg)?)?;

    let mut w = csv::Writer::from_path(dir.join("episodes.csv"))?;
    w.write_record([
        "index",
        "seed",
        "ways",
        "initial_accuracy",
        "accuracy",
        "initial_mi",
        "final_mi",
        "final_loss",
        "collapsed",
    ])?;
    for o in outputs {
        let r = &o.record;
        w.write_record([
            r.index.to_string(),
            r.seed.to_string(),
            r.ways.to_string(),
            r.initial_accuracy.to_string(),
            r.accuracy.to_string(),
            r.initial_mi.to_string(),
            r.final_mi.to_string(),
            r.final_loss.to_string(),
            r.collapsed.to_string(),
        ])?;
    }
    w.flush()?;

    if cfg.trace_episodes > 0 {
        let traces = dir.join("traces");
        fs::create_dir_all(&traces)?;
        for o in outputs.iter().take(cfg.trace_episodes) {
            emit_trace(
                &o.trace,
                traces.join(format!("episode_{:05}.csv", o.record.index)),
            )?;
        }
    }
    if cfg.dump_posteriors {
        let dumps = dir.join("posteriors");
        fs::create_dir_all(&dumps)?;
        for o in outputs {
            write_posterior_dump(
                &o.posteriors,
                &o.truth,
                dumps.join(format!("episode_{:05}.csv", o.record.index)),
            )?;
        }
    }
    Ok(())
}

/// Trace CSV: `iteration,loss,accuracy,mi_alpha1,weight_displacement`,
/// one row per completed iteration. Missing accuracy is left empty.
pub fn emit_trace(trace: &ConvergenceTrace, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "iteration",
        "loss",
        "accuracy",
        "mi_alpha1",
        "weight_displacement",
    ])?;
    for r in trace.records() {
        w.write_record([
            r.iteration.to_string(),
            r.loss.to_string(),
            r.accuracy.map(|a| a.to_string()).unwrap_or_default(),
            r.mi_alpha1.to_string(),
            r.weight_displacement.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_report(aggregate: &AggregateResult, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(aggregate)?)?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<AggregateResult> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Query posteriors with their true labels: header `truth,p0,…,p{K-1}`.
pub fn write_posterior_dump(
    posteriors: &Posteriors,
    truth: &[usize],
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let k = posteriors.num_classes();
    let mut header = vec!["truth".to_string()];
    header.extend((0..k).map(|c| format!("p{c}")));
    w.write_record(&header)?;
    let p = posteriors.probs();
    for (&i, &y) in posteriors.query_rows().iter().zip(truth) {
        let mut rec = vec![y.to_string()];
        rec.extend((0..k).map(|c| p[(i, c)].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_posterior_dump(path: impl AsRef<Path>) -> Result<(Posteriors, Vec<usize>)> {
    let path = path.as_ref();
    let format = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let k = r.headers()?.len().saturating_sub(1);
    if k < 2 {
        return Err(format(
            "need a truth column and at least two probability columns".into(),
        ));
    }
    let mut truth = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        truth.push(
            rec[0]
                .parse::<usize>()
                .map_err(|e| format(format!("row {line}: truth: {e}")))?,
        );
        for v in rec.iter().skip(1) {
            values.push(
                v.parse::<f64>()
                    .map_err(|e| format(format!("row {line}: {v:?}: {e}")))?,
            );
        }
    }
    if truth.is_empty() {
        return Err(format("no rows".into()));
    }
    let probs = nalgebra::DMatrix::from_row_slice(truth.len(), k, &values);
    Ok((Posteriors::from_query_probs(probs)?, truth))
}

/// Runs one episode directly; handy for examples and tests.
pub fn solve_episode(
    cfg: &RunConfig,
    bank: &EmbeddingBank,
    index: usize,
) -> Result<(Task, EpisodeRecord)> {
    let task = sample_episode(bank, &cfg.episode, cfg.episode_seed(index))?;
    let out = run_episode(cfg, bank, index)?;
    Ok((task, out.record))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ci_of_constant_values_is_zero() {
        assert_eq!(mean_ci95(&[0.5, 0.5, 0.5]), (0.5, 0.0));
        let (m, h) = mean_ci95(&[0.0, 1.0]);
        assert_eq!(m, 0.5);
        assert!((h - 1.96 * 0.5 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn parses_bank_sources() {
        assert!(matches!(
            "synthetic:hard".parse::<BankSource>(),
            Ok(BankSource::Synthetic(_))
        ));
        assert!(matches!(
            "file:/tmp/x.timb".parse::<BankSource>(),
            Ok(BankSource::File(_))
        ));
        assert!("s3://bucket".parse::<BankSource>().is_err());
    }

    #[test]
    fn episode_seeds_differ() {
        let cfg = RunConfig::new(
            Solver::Adm,
            BankSource::Synthetic(SyntheticConfig::default()),
        );
        assert_ne!(cfg.episode_seed(0), cfg.episode_seed(1));
        assert_eq!(cfg.episode_seed(5), cfg.episode_seed(5));
    }

    #[test]
    fn zero_episodes_rejected() {
        let mut cfg = RunConfig::new(
            Solver::Adm,
            BankSource::Synthetic(SyntheticConfig::default()),
        );
        cfg.episodes = 0;
        assert!(cfg.validate().is_err());
    }
}
