//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tim::{ClassifierWeights, Hyperparameters, Task};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(rng));
    for mut r in m.row_iter_mut() {
        let norm = r.norm();
        r /= norm;
    }
    m
}

/// A random task: every class gets `1..=max_shots` support rows and the
/// query set has `queries` rows with random labels.
pub fn random_task(
    rng: &mut ChaCha8Rng,
    k: usize,
    d: usize,
    max_shots: usize,
    queries: usize,
) -> Task {
    let mut labels = Vec::new();
    for c in 0..k {
        let shots = rng.random_range(1..=max_shots);
        labels.extend(std::iter::repeat_n(c, shots));
    }
    let ns = labels.len();
    let features = unit_rows(rng, ns + queries, d);
    let query_labels = (0..queries).map(|_| rng.random_range(0..k)).collect();
    Task::new(
        features,
        (0..ns).collect(),
        labels,
        (ns..ns + queries).collect(),
        Some(query_labels),
        k,
    )
    .unwrap()
}

/// Weights drawn around the origin with the given spread.
pub fn random_weights(rng: &mut ChaCha8Rng, k: usize, d: usize, spread: f64) -> ClassifierWeights {
    ClassifierWeights::new(DMatrix::from_fn(k, d, |_, _| {
        spread * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
    }))
    .unwrap()
}

/// A probability vector with strictly positive entries.
pub fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..k)
        .map(|_| -(rng.random::<f64>().max(1e-300)).ln())
        .collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// Independent posterior oracle: direct softmax of `-(tau/2)‖w_k − z_i‖²`.
pub fn direct_posteriors(task: &Task, w: &ClassifierWeights, tau: f64) -> DMatrix<f64> {
    let z = task.features();
    let w = w.weights();
    DMatrix::from_fn(z.nrows(), w.nrows(), |i, k| {
        let logits: Vec<f64> = (0..w.nrows())
            .map(|j| -0.5 * tau * (z.row(i) - w.row(j)).norm_squared())
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        (logits[k] - m).exp() / s
    })
}

/// The assignment-dependent part of the penalized objective for fixed
/// query posteriors `p` (rows are query samples).
pub fn q_objective(p: &DMatrix<f64>, q: &DMatrix<f64>, alpha: f64, beta: f64) -> f64 {
    let (n, k) = q.shape();
    let nq = n as f64;
    let mut total = 0.0;
    for c in 0..k {
        let m = q.column(c).sum() / nq;
        if m > 0.0 {
            total += m * m.ln();
        }
    }
    for i in 0..n {
        for c in 0..k {
            let (qi, pi) = (q[(i, c)], p[(i, c)]);
            if qi > 0.0 {
                total += (-alpha * qi * pi.ln() + beta * qi * (qi / pi).ln()) / nq;
            }
        }
    }
    total
}

/// Independent minimizer of [`q_objective`] over simplex rows by
/// exponentiated gradient with a decaying step.
pub fn mirror_descent_q(p: &DMatrix<f64>, alpha: f64, beta: f64, steps: usize) -> DMatrix<f64> {
    let (n, k) = p.shape();
    let mut q = DMatrix::from_element(n, k, 1.0 / k as f64);
    for t in 0..steps {
        let eta = 1.0 / ((1.0 + beta) * (1.0 + (t as f64 / 500.0).sqrt()));
        let marginal: Vec<f64> = (0..k).map(|c| q.column(c).sum() / n as f64).collect();
        for i in 0..n {
            let mut row: Vec<f64> = (0..k)
                .map(|c| {
                    let grad = marginal[c].ln() + 1.0 - alpha * p[(i, c)].ln()
                        + beta * ((q[(i, c)] / p[(i, c)]).ln() + 1.0);
                    q[(i, c)].ln() - eta * grad
                })
                .collect();
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|x| (x - m).exp()).sum();
            for x in row.iter_mut() {
                *x = (*x - m).exp() / s;
            }
            for c in 0..k {
                q[(i, c)] = row[c].max(1e-300);
            }
        }
    }
    q
}

/// Gradient of the convex weight majorizer, written out term by term.
pub fn majorizer_gradient(
    w: &DMatrix<f64>,
    w_prev: &DMatrix<f64>,
    p_prev: &DMatrix<f64>,
    q: &DMatrix<f64>,
    task: &Task,
    hp: &Hyperparameters,
) -> DMatrix<f64> {
    let (lambda, alpha, beta) = (hp.lambda, hp.alpha, hp.beta);
    let z = task.features();
    let (k, d) = w.shape();
    let mut g = DMatrix::zeros(k, d);
    let s_scale = lambda / task.support_len() as f64;
    let q_scale = (beta + alpha) / task.query_len() as f64;
    for (&i, &y) in task.support_indices().iter().zip(task.support_labels()) {
        for c in 0..k {
            let yc = if c == y { 1.0 } else { 0.0 };
            for j in 0..d {
                g[(c, j)] += s_scale
                    * (yc * (w[(c, j)] - z[(i, j)])
                        + p_prev[(i, c)] * (z[(i, j)] - w_prev[(c, j)]));
            }
        }
    }
    for (r, &i) in task.query_indices().iter().enumerate() {
        for c in 0..k {
            for j in 0..d {
                g[(c, j)] += q_scale
                    * (q[(r, c)] * (w[(c, j)] - z[(i, j)])
                        + p_prev[(i, c)] * (z[(i, j)] - w_prev[(c, j)]));
            }
        }
    }
    g
}
