//! Acceptance criteria. Prints one PASS/FAIL line per criterion plus INFO
//! lines, and exits nonzero when any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use nalgebra::DMatrix;
use rand::Rng;
use tim::adm::{q_update, q_update_exact, w_update};
use tim::bounds::{entropy_continuity_bound, kl_divergence, l1_distance, p_delta_terms};
use tim::classifier::compute_posteriors;
use tim::gd::tim_loss_gradient;
use tim::harness::{run_benchmark, AggregateResult, BankSource, BenchmarkRun, RunConfig, Solver};
use tim::objective::tim_loss;
use tim::tasks::{
    generate_synthetic_bank, read_bank, write_bank, Difficulty, EmbeddingBank, SyntheticConfig,
};
use tim::{adm::AblationVariant, ClassifierWeights, Hyperparameters, Posteriors, Task};

// Criterion 1.
const GRAD_TRIPLES: usize = 100;
const GRAD_FD_STEP: f64 = 1e-5;
const GRAD_REL_TOL: f64 = 1e-5;
const GRAD_SECONDS: f64 = 30.0;
// Criterion 2.
const Q_INSTANCES: usize = 50;
const Q_MAX_QUERY: usize = 6;
const Q_OBJECTIVE_TOL: f64 = 1e-6;
const Q_ALTERNATIVES: usize = 1000;
const Q_SECONDS: f64 = 60.0;
const Q_ORACLE_STEPS: usize = 20_000;
// Criterion 3.
const W_INSTANCES: usize = 100;
const W_RESIDUAL_TOL: f64 = 1e-8;
// Criteria 4, 5, 6, 9 share one run of this many typical episodes.
const SWEEP_EPISODES: usize = 1000;
const FIXED_POINT_RATE: f64 = 0.95;
const MI_GROWTH_RATE: f64 = 0.95;
// Criterion 6.
const RANDOM_AUDITS: usize = 1000;
const INEQUALITY_TOL: f64 = 1e-12;
// Criterion 7.
const AGREEMENT_EPISODES: usize = 200;
const AGREEMENT_GAP: f64 = 0.02;
// Criterion 8.
const ABLATION_EPISODES: usize = 1000;
const COLLAPSE_MIN_PLUS_COND: f64 = 0.20;
const COLLAPSE_MAX_FULL: f64 = 0.01;
// Criterion 10.
const BENCH_SECONDS: f64 = 300.0;
const BENCH_EPISODE_SECONDS: f64 = 0.3;

struct Outcome {
    id: u8,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn info(msg: impl AsRef<str>) {
    println!("INFO  {}", msg.as_ref());
}

fn typical() -> BankSource {
    BankSource::Synthetic(SyntheticConfig::preset(Difficulty::Typical))
}

fn hard() -> BankSource {
    BankSource::Synthetic(SyntheticConfig::preset(Difficulty::Hard))
}

fn bench(cfg: RunConfig) -> BenchmarkRun {
    run_benchmark(&cfg).expect("benchmark run")
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1001);
    let mut worst: f64 = 0.0;
    for _ in 0..GRAD_TRIPLES {
        let k = r.random_range(2..=6);
        let d = r.random_range(2..=10);
        let (nq, spread) = (r.random_range(1..=12), r.random_range(0.1..1.5));
        let task = random_task(&mut r, k, d, 3, nq);
        let w = random_weights(&mut r, k, d, spread);
        let hp = Hyperparameters {
            tau: r.random_range(1.0..20.0),
            alpha: r.random_range(0.0..2.0),
            lambda: r.random_range(0.0..2.0),
            ..Hyperparameters::gd()
        };
        let analytic = tim_loss_gradient(&w, &task, &hp).unwrap();
        let loss = |m: DMatrix<f64>| {
            let wm = ClassifierWeights::new(m).unwrap();
            tim_loss(&compute_posteriors(&wm, &task, hp.tau).unwrap(), &task, &hp)
        };
        for row in 0..k {
            for col in 0..d {
                let (mut plus, mut minus) = (w.weights().clone(), w.weights().clone());
                plus[(row, col)] += GRAD_FD_STEP;
                minus[(row, col)] -= GRAD_FD_STEP;
                let fd = (loss(plus) - loss(minus)) / (2.0 * GRAD_FD_STEP);
                worst = worst.max((analytic[(row, col)] - fd).abs() / fd.abs().max(1.0));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        id: 1,
        name: "gradient oracle",
        passed: worst < GRAD_REL_TOL && secs < GRAD_SECONDS,
        detail: format!(
            "max rel err {worst:.2e} (< {GRAD_REL_TOL:.0e}) over {GRAD_TRIPLES} triples, {secs:.1} s (< {GRAD_SECONDS} s)"
        ),
    }
}

fn q_update_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1002);
    let hp = Hyperparameters::adm();
    let (mut within, mut beats) = (0, 0);
    let (mut worst_gap, mut worst_exact_gap): (f64, f64) = (0.0, 0.0);
    for _ in 0..Q_INSTANCES {
        let k = r.random_range(2..=4);
        let nq = r.random_range(1..=Q_MAX_QUERY);
        let task = random_task(&mut r, k, 4, 2, nq);
        let w = random_weights(&mut r, k, 4, 0.6);
        let post = compute_posteriors(&w, &task, hp.tau).unwrap();
        let p = post.query_probs();

        let closed = q_objective(&p, q_update(&post, &hp).assignments(), hp.alpha, hp.beta);
        let exact = q_objective(
            &p,
            q_update_exact(&post, &hp).assignments(),
            hp.alpha,
            hp.beta,
        );
        let oracle = q_objective(
            &p,
            &mirror_descent_q(&p, hp.alpha, hp.beta, Q_ORACLE_STEPS),
            hp.alpha,
            hp.beta,
        );
        let gap = closed - oracle;
        worst_gap = worst_gap.max(gap.abs());
        worst_exact_gap = worst_exact_gap.max((exact - oracle).abs());
        if gap.abs() <= Q_OBJECTIVE_TOL {
            within += 1;
        }

        let beaten = (0..Q_ALTERNATIVES).all(|_| {
            let mut alt = DMatrix::zeros(nq, k);
            for i in 0..nq {
                for (c, v) in random_simplex(&mut r, k).into_iter().enumerate() {
                    alt[(i, c)] = v;
                }
            }
            closed <= q_objective(&p, &alt, hp.alpha, hp.beta)
        });
        if beaten {
            beats += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    info(format!(
        "criterion 2: exact assignment solver vs oracle, max objective gap {worst_exact_gap:.2e}"
    ));
    Outcome {
        id: 2,
        name: "closed-form q-update oracle",
        passed: within == Q_INSTANCES && beats == Q_INSTANCES && secs < Q_SECONDS,
        detail: format!(
            "{within}/{Q_INSTANCES} within {Q_OBJECTIVE_TOL:.0e} of oracle (max gap {worst_gap:.2e}), \
             {beats}/{Q_INSTANCES} beat {Q_ALTERNATIVES} random alternatives, {secs:.1} s (< {Q_SECONDS} s)"
        ),
    }
}

fn w_update_residual() -> Outcome {
    let mut r = rng(1003);
    let mut worst: f64 = 0.0;
    for _ in 0..W_INSTANCES {
        let k = r.random_range(2..=6);
        let d = r.random_range(2..=12);
        let (nq, spread) = (r.random_range(1..=15), r.random_range(0.1..1.0));
        let task = random_task(&mut r, k, d, 3, nq);
        let w0 = random_weights(&mut r, k, d, spread);
        let hp = Hyperparameters {
            alpha: r.random_range(0.0..1.0),
            lambda: r.random_range(0.01..1.0),
            beta: r.random_range(0.1..5.0),
            ..Hyperparameters::adm()
        };
        let post = compute_posteriors(&w0, &task, hp.tau).unwrap();
        let aux = q_update(&post, &hp);
        let w1 = w_update(&w0, &post, &aux, &task, &hp).unwrap();
        let g = majorizer_gradient(
            w1.weights(),
            w0.weights(),
            post.probs(),
            aux.assignments(),
            &task,
            &hp,
        );
        worst = worst.max(g.amax());
    }
    Outcome {
        id: 3,
        name: "w-update gradient residual",
        passed: worst < W_RESIDUAL_TOL,
        detail: format!(
            "max residual {worst:.2e} (< {W_RESIDUAL_TOL:.0e}) over {W_INSTANCES} instances"
        ),
    }
}

fn monotone_descent(sweep: &AggregateResult) -> Outcome {
    let checked: Vec<_> = sweep
        .episodes
        .iter()
        .filter(|e| e.hessian_passed == Some(true))
        .collect();
    let violating = checked
        .iter()
        .filter(|e| e.descent_violations.unwrap_or(0) > 0)
        .count();
    let steps: usize = checked
        .iter()
        .map(|e| e.descent_violations.unwrap_or(0))
        .sum();
    info(format!(
        "criterion 4: first iteration from the q = p start rises in {:.1}% of episodes",
        100.0 * sweep.first_step_rise_rate.unwrap_or(f64::NAN)
    ));
    Outcome {
        id: 4,
        name: "monotone descent",
        passed: !checked.is_empty() && violating == 0,
        detail: format!(
            "{violating}/{} hessian-passing episodes rise by more than 1e-9 ({steps} iterations), 0 allowed",
            checked.len()
        ),
    }
}

fn fixed_point(sweep: &AggregateResult) -> Outcome {
    let rate = sweep.fixed_point_pass_rate.unwrap_or(0.0);
    let residuals: Vec<f64> = sweep
        .episodes
        .iter()
        .filter_map(|e| e.fixed_point.map(|f| f.weights.max(f.assignments)))
        .collect();
    let mut sorted = residuals.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted.get(sorted.len() / 2).copied().unwrap_or(f64::NAN);
    Outcome {
        id: 5,
        name: "fixed point",
        passed: rate >= FIXED_POINT_RATE,
        detail: format!(
            "{:.1}% pass at tol 1e-4 (>= {:.0}%), median residual {median:.2e}",
            100.0 * rate,
            100.0 * FIXED_POINT_RATE
        ),
    }
}

fn random_posteriors(r: &mut rand_chacha::ChaCha8Rng) -> Posteriors {
    let n = r.random_range(1..=20);
    let k = r.random_range(2..=8);
    let mut m = DMatrix::zeros(n, k);
    // Mix flat and sharp rows so both ends of the chain are exercised.
    let sharpness = r.random_range(0.0..6.0);
    for i in 0..n {
        let logits: Vec<f64> = (0..k)
            .map(|_| sharpness * r.random::<f64>() * 4.0)
            .collect();
        let s: f64 = logits.iter().map(|l| l.exp()).sum();
        for c in 0..k {
            m[(i, c)] = logits[c].exp() / s;
        }
    }
    Posteriors::from_query_probs(m).unwrap()
}

fn bound_audit(sweep: &AggregateResult) -> Outcome {
    let applicable = sweep.bound_audit_applicable.unwrap_or(0);
    let rate = sweep.bound_audit_pass_rate.unwrap_or(0.0);

    let mut r = rng(1006);
    let chain_fail = (0..RANDOM_AUDITS)
        .filter(|_| !p_delta_terms(&random_posteriors(&mut r)).chain_holds(INEQUALITY_TOL))
        .count();
    let pinsker_fail = (0..RANDOM_AUDITS)
        .filter(|_| {
            let k = r.random_range(2..=10);
            let (a, b) = (random_simplex(&mut r, k), random_simplex(&mut r, k));
            l1_distance(&a, &b) > (2.0 * kl_divergence(&a, &b).unwrap()).sqrt() + INEQUALITY_TOL
        })
        .count();
    let (mut cont_checked, mut cont_fail) = (0, 0);
    while cont_checked < RANDOM_AUDITS {
        let k = r.random_range(2..=10);
        let (a, b) = (random_simplex(&mut r, k), random_simplex(&mut r, k));
        let c = entropy_continuity_bound(&a, &b, k).unwrap();
        if let Some(holds) = c.holds(INEQUALITY_TOL) {
            cont_checked += 1;
            if !holds {
                cont_fail += 1;
            }
        }
    }
    Outcome {
        id: 6,
        name: "error bound audit",
        passed: applicable > 0 && rate == 1.0 && chain_fail + pinsker_fail + cont_fail == 0,
        detail: format!(
            "bound holds on {:.1}% of {applicable} applicable episodes; violations: chain {chain_fail}, \
             Pinsker {pinsker_fail}, continuity {cont_fail} ({RANDOM_AUDITS} each)",
            100.0 * rate
        ),
    }
}

fn solver_agreement() -> Outcome {
    let run = |solver| {
        bench(RunConfig {
            episodes: AGREEMENT_EPISODES,
            seed: 7,
            ..RunConfig::new(solver, typical())
        })
        .aggregate
    };
    let (adm, gd) = (run(Solver::Adm), run(Solver::Gd));
    let gap = (adm.mean_accuracy - gd.mean_accuracy).abs();
    Outcome {
        id: 7,
        name: "solver agreement",
        passed: gap <= AGREEMENT_GAP,
        detail: format!(
            "adm {:.2}% vs gd {:.2}%, gap {:.2} pp (<= {:.0} pp)",
            100.0 * adm.mean_accuracy,
            100.0 * gd.mean_accuracy,
            100.0 * gap,
            100.0 * AGREEMENT_GAP
        ),
    }
}

fn ablation_direction() -> Outcome {
    let run = |variant| {
        bench(RunConfig {
            episodes: ABLATION_EPISODES,
            seed: 8,
            variant,
            ..RunConfig::new(Solver::Adm, hard())
        })
        .aggregate
    };
    let full = run(AblationVariant::Full);
    let plus_cond = run(AblationVariant::CePlusCond);
    let ce = run(AblationVariant::CeOnly);
    let collapse_ok =
        plus_cond.collapse_rate >= COLLAPSE_MIN_PLUS_COND && full.collapse_rate < COLLAPSE_MAX_FULL;
    let separated = full.mean_accuracy - full.ci95 > ce.mean_accuracy + ce.ci95;
    Outcome {
        id: 8,
        name: "ablation direction",
        passed: collapse_ok && separated,
        detail: format!(
            "collapse ce+cond {:.1}% (>= {:.0}%), full {:.1}% (< {:.0}%); accuracy full {:.2}±{:.2} vs ce {:.2}±{:.2}",
            100.0 * plus_cond.collapse_rate,
            100.0 * COLLAPSE_MIN_PLUS_COND,
            100.0 * full.collapse_rate,
            100.0 * COLLAPSE_MAX_FULL,
            100.0 * full.mean_accuracy,
            100.0 * full.ci95,
            100.0 * ce.mean_accuracy,
            100.0 * ce.ci95
        ),
    }
}

fn mi_growth(sweep: &AggregateResult) -> Outcome {
    Outcome {
        id: 9,
        name: "mutual information growth",
        passed: sweep.mi_growth_rate >= MI_GROWTH_RATE,
        detail: format!(
            "{:.1}% of episodes end above their initial MI (>= {:.0}%)",
            100.0 * sweep.mi_growth_rate,
            100.0 * MI_GROWTH_RATE
        ),
    }
}

fn same_bits(a: &EmbeddingBank, b: &EmbeddingBank) -> bool {
    a.dim() == b.dim()
        && a.num_classes() == b.num_classes()
        && a.labels() == b.labels()
        && a.features()
            .iter()
            .map(|v| v.to_bits())
            .eq(b.features().iter().map(|v| v.to_bits()))
}

fn determinism_and_io() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let runs: Vec<BenchmarkRun> = dirs
        .iter()
        .map(|d| {
            bench(RunConfig {
                output: Some(d.path().to_path_buf()),
                ..RunConfig::new(Solver::Adm, typical())
            })
        })
        .collect();
    let mut files = vec!["report.json".to_string(), "episodes.csv".to_string()];
    files.extend((0..10).map(|i| format!("traces/episode_{i:05}.csv")));
    // config.json records the output directory, which differs by construction.
    let config = |d: &tempfile::TempDir| {
        let text = fs::read_to_string(d.path().join("config.json")).unwrap();
        RunConfig {
            output: None,
            ..serde_json::from_str(&text).unwrap()
        }
    };
    let identical = runs[0].aggregate == runs[1].aggregate
        && config(&dirs[0]) == config(&dirs[1])
        && files.iter().all(|f| {
            fs::read(dirs[0].path().join(f)).unwrap() == fs::read(dirs[1].path().join(f)).unwrap()
        });

    let bank = generate_synthetic_bank(&SyntheticConfig::default()).unwrap();
    let io_dir = tempfile::tempdir().unwrap();
    let round_trip = ["bank.timb", "bank.csv"].iter().all(|name| {
        let path = io_dir.path().join(name);
        write_bank(&bank, &path).unwrap();
        same_bits(&bank, &read_bank(&path).unwrap())
    });

    let t = &runs[0].timing;
    let fast = t.total_seconds < BENCH_SECONDS && t.mean_episode_seconds <= BENCH_EPISODE_SECONDS;
    Outcome {
        id: 10,
        name: "determinism and I/O",
        passed: identical && round_trip && fast,
        detail: format!(
            "repeat run identical: {identical}; binary and CSV round trip bit-exact: {round_trip}; \
             default benchmark {:.1} s (< {BENCH_SECONDS} s), {:.4} s/episode (<= {BENCH_EPISODE_SECONDS} s)",
            t.total_seconds, t.mean_episode_seconds
        ),
    }
}

fn curvature_info() {
    use tim::adm::{curvature_check, run_tim_adm};
    use tim::tasks::{sample_episode, EpisodeSpec};
    let bank = generate_synthetic_bank(&SyntheticConfig::default()).unwrap();
    let hp = Hyperparameters::adm();
    let (mut passed, total) = (0, 100);
    for seed in 0..total {
        let task: Task = sample_episode(&bank, &EpisodeSpec::standard(5, 1, 15), seed).unwrap();
        let out = run_tim_adm(&task, &hp, AblationVariant::Full).unwrap();
        if curvature_check(&out.final_weights, &out.final_posteriors, &task, hp.tau).passed {
            passed += 1;
        }
    }
    info(format!(
        "true log-partition curvature is negative semi-definite at {passed}/{total} final typical iterates"
    ));
}

fn main() -> ExitCode {
    let mut outcomes = Vec::new();
    let mut report = |o: Outcome| {
        println!(
            "{}  C{:<2} {}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.id,
            o.name,
            o.detail
        );
        outcomes.push(o.passed);
    };

    report(gradient_oracle());
    report(q_update_oracle());
    report(w_update_residual());

    let sweep = bench(RunConfig {
        episodes: SWEEP_EPISODES,
        hessian_check: true,
        fixed_point_test: true,
        bound_audit: true,
        ..RunConfig::new(Solver::Adm, typical())
    })
    .aggregate;
    report(monotone_descent(&sweep));
    report(fixed_point(&sweep));
    report(bound_audit(&sweep));
    report(solver_agreement());
    report(ablation_direction());
    report(mi_growth(&sweep));
    report(determinism_and_io());

    curvature_info();
    let easy = bench(RunConfig {
        fixed_point_test: true,
        ..RunConfig::new(
            Solver::Adm,
            BankSource::Synthetic(SyntheticConfig::preset(Difficulty::Easy)),
        )
    })
    .aggregate;
    info(format!(
        "fixed point pass rate on the easy bank: {:.1}%",
        100.0 * easy.fixed_point_pass_rate.unwrap_or(f64::NAN)
    ));

    let passed = outcomes.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", outcomes.len());
    if passed == outcomes.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
