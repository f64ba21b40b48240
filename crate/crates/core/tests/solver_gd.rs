mod common;

use common::*;
use nalgebra::DMatrix;
use tim::classifier::{compute_posteriors, init_prototypes, query_accuracy};
use tim::gd::{run_tim_gd, run_tim_gd_with, tim_loss_gradient, Optimizer};
use tim::objective::{cross_entropy, tim_loss};
use tim::tasks::{
    generate_synthetic_bank, sample_episode, Difficulty, EpisodeSpec, SyntheticConfig,
};
use tim::{ClassifierWeights, Hyperparameters, Task};

const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-5;

fn central_difference(w: &ClassifierWeights, task: &Task, hp: &Hyperparameters) -> DMatrix<f64> {
    let base = w.weights().clone();
    DMatrix::from_fn(base.nrows(), base.ncols(), |r, c| {
        let eval = |delta: f64| {
            let mut m = base.clone();
            m[(r, c)] += delta;
            let wm = ClassifierWeights::new(m).unwrap();
            tim_loss(&compute_posteriors(&wm, task, hp.tau).unwrap(), task, hp)
        };
        (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP)
    })
}

#[test]
fn gradient_matches_central_differences() {
    let mut r = rng(21);
    for _ in 0..100 {
        let task = random_task(&mut r, 4, 6, 3, 8);
        let w = random_weights(&mut r, 4, 6, 0.5);
        let hp = Hyperparameters {
            alpha: 0.5,
            lambda: 0.7,
            ..Hyperparameters::gd()
        };
        let a = tim_loss_gradient(&w, &task, &hp).unwrap();
        let f = central_difference(&w, &task, &hp);
        for (x, y) in a.iter().zip(f.iter()) {
            assert!((x - y).abs() / y.abs().max(1.0) < FD_REL_TOL, "{x} vs {y}");
        }
    }
}

#[test]
fn gradient_vanishes_at_the_symmetric_origin() {
    let f = DMatrix::from_row_slice(
        8,
        2,
        &[
            1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0, //
            1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0,
        ],
    );
    let task = Task::new(
        f,
        vec![0, 1, 2, 3],
        vec![0, 0, 1, 1],
        vec![4, 5, 6, 7],
        None,
        2,
    )
    .unwrap();
    let w = ClassifierWeights::new(DMatrix::zeros(2, 2)).unwrap();
    for alpha in [0.0, 0.1, 1.0] {
        let hp = Hyperparameters {
            alpha,
            ..Hyperparameters::gd()
        };
        let g = tim_loss_gradient(&w, &task, &hp).unwrap();
        assert!(g.amax() < 1e-12);
    }
}

#[test]
fn zero_iterations_keep_the_prototypes() {
    let mut r = rng(22);
    let task = random_task(&mut r, 3, 5, 2, 6);
    let hp = Hyperparameters::gd().with_iterations(0);
    let out = run_tim_gd(&task, &hp).unwrap();
    assert_eq!(out.final_weights, init_prototypes(&task).unwrap());
    assert!(out.trace.is_empty());
    let p = compute_posteriors(&out.final_weights, &task, hp.tau).unwrap();
    assert_eq!(out.query_predictions, p.predictions());
}

#[test]
fn well_separated_clusters_are_classified_perfectly() {
    let bank = generate_synthetic_bank(&SyntheticConfig::preset(Difficulty::Easy)).unwrap();
    let spec = EpisodeSpec::standard(5, 5, 15);
    for seed in 0..20 {
        let task = sample_episode(&bank, &spec, seed).unwrap();
        let out = run_tim_gd(&task, &Hyperparameters::gd()).unwrap();
        let acc = query_accuracy(&out.query_predictions, task.query_labels().unwrap()).unwrap();
        assert_eq!(acc, 1.0, "episode {seed}");
    }
}

#[test]
fn final_loss_is_below_the_first_on_nearly_every_task() {
    let bank = generate_synthetic_bank(&SyntheticConfig::default()).unwrap();
    let spec = EpisodeSpec::standard(5, 1, 15);
    let hp = Hyperparameters::gd();
    let mut descended = 0;
    for seed in 0..1000 {
        let task = sample_episode(&bank, &spec, seed).unwrap();
        let out = run_tim_gd(&task, &hp).unwrap();
        let rec = out.trace.records();
        if rec.last().unwrap().loss <= rec[0].loss {
            descended += 1;
        }
    }
    assert!(descended >= 990, "{descended}/1000");
}

#[test]
fn strong_supervision_drives_cross_entropy_down() {
    let mut r = rng(23);
    let task = random_task(&mut r, 3, 6, 3, 4);
    let hp = Hyperparameters {
        alpha: 0.0,
        lambda: 100.0,
        learning_rate: 1e-2,
        ..Hyperparameters::gd()
    };
    let start = cross_entropy(
        &compute_posteriors(&init_prototypes(&task).unwrap(), &task, hp.tau).unwrap(),
        &task,
    );
    let out = run_tim_gd(&task, &hp).unwrap();
    let end = cross_entropy(&out.final_posteriors, &task);
    assert!(end < 0.05 * start, "{start} -> {end}");
}

#[test]
fn plain_descent_lowers_the_loss() {
    let mut r = rng(24);
    let task = random_task(&mut r, 4, 6, 2, 10);
    let hp = Hyperparameters {
        learning_rate: 1e-3,
        ..Hyperparameters::gd().with_iterations(200)
    };
    let out = run_tim_gd_with(&task, &hp, Optimizer::Plain).unwrap();
    assert!(out.trace.last().loss < out.trace.initial().loss);
}

#[test]
fn runs_are_bit_identical() {
    let mut r = rng(25);
    let task = random_task(&mut r, 5, 8, 2, 12);
    let hp = Hyperparameters::gd().with_iterations(300);
    let a = run_tim_gd(&task, &hp).unwrap();
    let b = run_tim_gd(&task, &hp).unwrap();
    assert_eq!(a, b);
}
