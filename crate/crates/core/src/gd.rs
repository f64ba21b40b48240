//! Gradient-descent inference: minimize the TIM loss over the classifier
//! weights with the features held fixed.

use nalgebra::DMatrix;

use crate::classifier::{
    compute_posteriors, init_prototypes, query_accuracy, ClassifierWeights, Posteriors,
};
use crate::error::Result;
use crate::objective::{tim_loss, weighted_mutual_information};
use crate::task::{Hyperparameters, Task};
use crate::trace::{ConvergenceTrace, IterationRecord};

/// Update rule applied to the full-batch gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
    /// `W ← W − lr·∇L`.
    Plain,
}

impl Optimizer {
    /// Adam with the usual constants (0.9, 0.999, 1e-8).
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Self::adam()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdResult {
    pub final_weights: ClassifierWeights,
    pub final_posteriors: Posteriors,
    pub trace: ConvergenceTrace,
    /// Row argmax of the final query posteriors.
    pub query_predictions: Vec<usize>,
}

/// Analytic gradient of the TIM loss with respect to every class weight.
pub fn tim_loss_gradient(
    weights: &ClassifierWeights,
    task: &Task,
    hp: &Hyperparameters,
) -> Result<DMatrix<f64>> {
    let posteriors = compute_posteriors(weights, task, hp.tau)?;
    Ok(gradient_at(weights, &posteriors, task, hp))
}

/// Gradient given posteriors already evaluated at `weights`.
///
/// With logits `l_ik = −(τ/2)‖w_k − z_i‖²`, the loss gradient is
/// `τ Σ_i G_ik (z_i − w_k)` where `G = ∂L/∂l` collects the three terms.
fn gradient_at(
    weights: &ClassifierWeights,
    posteriors: &Posteriors,
    task: &Task,
    hp: &Hyperparameters,
) -> DMatrix<f64> {
    let p = posteriors.probs();
    let lp = posteriors.log_probs();
    let k = task.num_classes();
    let mut g = DMatrix::<f64>::zeros(task.num_rows(), k);

    let ce_scale = hp.lambda / task.support_len() as f64;
    for (&i, &y) in task.support_indices().iter().zip(task.support_labels()) {
        for c in 0..k {
            g[(i, c)] = ce_scale * p[(i, c)];
        }
        g[(i, y)] -= ce_scale;
    }

    let nq = task.query_len() as f64;
    let log_marginal: Vec<f64> = posteriors.query_marginal().iter().map(|m| m.ln()).collect();
    for &i in task.query_indices() {
        let mut mean_log_marginal = 0.0;
        let mut row_entropy = 0.0;
        for c in 0..k {
            if p[(i, c)] > 0.0 {
                mean_log_marginal += p[(i, c)] * log_marginal[c];
                row_entropy -= p[(i, c)] * lp[(i, c)];
            }
        }
        for c in 0..k {
            let pc = p[(i, c)];
            if pc > 0.0 {
                let marginal = pc * (log_marginal[c] - mean_log_marginal);
                let conditional = -pc * (lp[(i, c)] + row_entropy);
                g[(i, c)] = (marginal + hp.alpha * conditional) / nq;
            }
        }
    }

    let w = weights.weights();
    let mut grad = g.transpose() * task.features();
    for c in 0..k {
        let mass: f64 = g.column(c).sum();
        let mut row = grad.row_mut(c);
        row -= w.row(c) * mass;
    }
    grad * hp.tau
}

/// Runs `hp.iterations` full-batch Adam steps from the class prototypes.
pub fn run_tim_gd(task: &Task, hp: &Hyperparameters) -> Result<GdResult> {
    run_tim_gd_with(task, hp, Optimizer::default())
}

pub fn run_tim_gd_with(
    task: &Task,
    hp: &Hyperparameters,
    optimizer: Optimizer,
) -> Result<GdResult> {
    hp.validate()?;
    let mut weights = init_prototypes(task)?;
    let mut posteriors = compute_posteriors(&weights, task, hp.tau)?;
    let mut trace = ConvergenceTrace::new(record(0, &posteriors, task, hp, 0.0)?, hp.iterations);

    let shape = weights.weights().shape();
    let mut m = DMatrix::<f64>::zeros(shape.0, shape.1);
    let mut v = DMatrix::<f64>::zeros(shape.0, shape.1);

    for t in 1..=hp.iterations {
        let grad = gradient_at(&weights, &posteriors, task, hp);
        let step = match optimizer {
            Optimizer::Plain => grad * hp.learning_rate,
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                m = m * beta1 + &grad * (1.0 - beta1);
                v = v * beta2 + grad.map(|x| x * x) * (1.0 - beta2);
                let m_corr = 1.0 - beta1.powi(t as i32);
                let v_corr = 1.0 - beta2.powi(t as i32);
                m.zip_map(&v, |mi, vi| {
                    hp.learning_rate * (mi / m_corr) / ((vi / v_corr).sqrt() + epsilon)
                })
            }
        };
        let next = ClassifierWeights::new(weights.weights() - step)?;
        let displacement = next.max_abs_diff(&weights);
        weights = next;
        posteriors = compute_posteriors(&weights, task, hp.tau)?;
        trace.push(record(t, &posteriors, task, hp, displacement)?);
    }

    let query_predictions = posteriors.predictions();
    Ok(GdResult {
        final_weights: weights,
        final_posteriors: posteriors,
        trace,
        query_predictions,
    })
}

fn record(
    iteration: usize,
    posteriors: &Posteriors,
    task: &Task,
    hp: &Hyperparameters,
    weight_displacement: f64,
) -> Result<IterationRecord> {
    let accuracy = match task.query_labels() {
        Some(truth) => Some(query_accuracy(&posteriors.predictions(), truth)?),
        None => None,
    };
    Ok(IterationRecord {
        iteration,
        loss: tim_loss(posteriors, task, hp),
        accuracy,
        mi_alpha1: weighted_mutual_information(posteriors, 1.0),
        weight_displacement,
    })
}
