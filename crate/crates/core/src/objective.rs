//! Entropy, mutual-information and loss terms.
//!
//! All logarithms are natural; `0·ln 0` is taken as 0.

use nalgebra::{DMatrix, DVector};

use crate::classifier::{Posteriors, SIMPLEX_TOL};
use crate::error::{Error, Result};
use crate::task::{Hyperparameters, Task};

/// Auxiliary soft assignments for the query rows, used by the
/// alternating-direction solver. Rows are strictly positive and sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxAssignments {
    assignments: DMatrix<f64>,
    log_assignments: DMatrix<f64>,
    marginal: DVector<f64>,
}

impl AuxAssignments {
    pub fn new(assignments: DMatrix<f64>) -> Result<Self> {
        for (i, row) in assignments.row_iter().enumerate() {
            if row.iter().any(|&q| !(q > 0.0 && q <= 1.0)) {
                return Err(Error::InvalidDistribution(format!(
                    "assignment row {i} has an entry outside (0, 1]"
                )));
            }
            let s = row.sum();
            if (s - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::InvalidDistribution(format!(
                    "assignment row {i} sums to {s}"
                )));
            }
        }
        let log_assignments = assignments.map(f64::ln);
        Ok(Self::assemble(assignments, log_assignments))
    }

    /// Normalizes each row of unnormalized log-weights.
    pub(crate) fn from_log_weights(log_weights: DMatrix<f64>) -> Self {
        let log_q = crate::classifier::log_softmax_rows(log_weights);
        let q = log_q.map(f64::exp);
        Self::assemble(q, log_q)
    }

    /// The assignments that make the penalty term vanish: `q = p` on the query rows.
    pub fn from_posteriors(posteriors: &Posteriors) -> Self {
        let rows = posteriors.query_rows();
        let q = posteriors.probs().select_rows(rows.iter());
        let log_q = posteriors.log_probs().select_rows(rows.iter());
        Self::assemble(q, log_q)
    }

    fn assemble(assignments: DMatrix<f64>, log_assignments: DMatrix<f64>) -> Self {
        let n = assignments.nrows().max(1) as f64;
        let marginal = DVector::from_iterator(
            assignments.ncols(),
            assignments.column_iter().map(|c| c.sum() / n),
        );
        AuxAssignments {
            assignments,
            log_assignments,
            marginal,
        }
    }

    /// |Q|×K matrix, rows in query order.
    pub fn assignments(&self) -> &DMatrix<f64> {
        &self.assignments
    }

    pub fn log_assignments(&self) -> &DMatrix<f64> {
        &self.log_assignments
    }

    pub fn marginal(&self) -> &[f64] {
        self.marginal.as_slice()
    }

    pub fn max_abs_diff(&self, other: &AuxAssignments) -> f64 {
        crate::classifier::max_abs_diff(&self.assignments, &other.assignments)
    }
}

/// Shannon entropy of a probability vector.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// Mean entropy of the query rows.
pub fn conditional_entropy(posteriors: &Posteriors) -> f64 {
    let (p, lp) = (posteriors.probs(), posteriors.log_probs());
    let rows = posteriors.query_rows();
    let mut total = 0.0;
    for &i in rows {
        for k in 0..p.ncols() {
            if p[(i, k)] > 0.0 {
                total -= p[(i, k)] * lp[(i, k)];
            }
        }
    }
    total / rows.len() as f64
}

/// Entropy of the query marginal.
pub fn marginal_entropy(posteriors: &Posteriors) -> f64 {
    entropy(posteriors.query_marginal())
}

/// `H(marginal) − alpha·H(conditional)`; `alpha = 1` is the plain mutual information.
pub fn weighted_mutual_information(posteriors: &Posteriors, alpha: f64) -> f64 {
    marginal_entropy(posteriors) - alpha * conditional_entropy(posteriors)
}

/// Mean negative log-likelihood of the support labels.
pub fn cross_entropy(posteriors: &Posteriors, task: &Task) -> f64 {
    let lp = posteriors.log_probs();
    let n = task.support_len();
    if n == 0 {
        return 0.0;
    }
    let total: f64 = task
        .support_indices()
        .iter()
        .zip(task.support_labels())
        .map(|(&i, &y)| -lp[(i, y)])
        .sum();
    total / n as f64
}

/// `λ·CE − H(marginal) + α·H(conditional)`.
pub fn tim_loss(posteriors: &Posteriors, task: &Task, hp: &Hyperparameters) -> f64 {
    hp.lambda * cross_entropy(posteriors, task) - marginal_entropy(posteriors)
        + hp.alpha * conditional_entropy(posteriors)
}

/// The four unweighted pieces of the penalized objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmLossTerms {
    /// Support cross-entropy.
    pub cross_entropy: f64,
    /// `Σ_k q̂_k ln q̂_k`, the negative entropy of the assignment marginal.
    pub neg_marginal_entropy: f64,
    /// `−(1/|Q|) Σ_i Σ_k q_ik ln p_ik`.
    pub assignment_cross_entropy: f64,
    /// `(1/|Q|) Σ_i Σ_k q_ik ln(q_ik / p_ik)`.
    pub penalty: f64,
}

impl AdmLossTerms {
    pub fn total(&self, hp: &Hyperparameters) -> f64 {
        hp.lambda * self.cross_entropy
            + self.neg_marginal_entropy
            + hp.alpha * self.assignment_cross_entropy
            + hp.beta * self.penalty
    }
}

pub fn adm_loss_terms(
    posteriors: &Posteriors,
    aux: &AuxAssignments,
    task: &Task,
) -> Result<AdmLossTerms> {
    let rows = posteriors.query_rows();
    let (q, lq) = (aux.assignments(), aux.log_assignments());
    if q.nrows() != rows.len() || q.ncols() != posteriors.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: rows.len() * posteriors.num_classes(),
            actual: q.nrows() * q.ncols(),
        });
    }
    let lp = posteriors.log_probs();
    let mut cross = 0.0;
    let mut penalty = 0.0;
    for (j, &i) in rows.iter().enumerate() {
        for k in 0..q.ncols() {
            cross -= q[(j, k)] * lp[(i, k)];
            penalty += q[(j, k)] * (lq[(j, k)] - lp[(i, k)]);
        }
    }
    let nq = rows.len() as f64;
    Ok(AdmLossTerms {
        cross_entropy: cross_entropy(posteriors, task),
        neg_marginal_entropy: -entropy(aux.marginal()),
        assignment_cross_entropy: cross / nq,
        penalty: penalty / nq,
    })
}

/// The penalized objective minimized by the alternating-direction solver.
/// Equals [`tim_loss`] when the assignments equal the query posteriors.
pub fn adm_loss(
    posteriors: &Posteriors,
    aux: &AuxAssignments,
    task: &Task,
    hp: &Hyperparameters,
) -> Result<f64> {
    Ok(adm_loss_terms(posteriors, aux, task)?.total(hp))
}
