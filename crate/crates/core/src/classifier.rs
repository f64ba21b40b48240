//! The distance-based soft classifier and its prototype initialization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::task::Task;

/// Row-simplex tolerance for posterior and assignment matrices.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Class weight vectors, one row per class. Never renormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierWeights {
    weights: DMatrix<f64>,
}

impl ClassifierWeights {
    pub fn new(weights: DMatrix<f64>) -> Result<Self> {
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidHyperparameter(
                "classifier weights contain a non-finite entry".into(),
            ));
        }
        Ok(ClassifierWeights { weights })
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.weights
    }

    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    /// Largest absolute entry-wise difference to `other`.
    pub fn max_abs_diff(&self, other: &ClassifierWeights) -> f64 {
        max_abs_diff(&self.weights, &other.weights)
    }
}

pub(crate) fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Soft predictions for every task row, plus the query marginal.
///
/// Log-probabilities are stored next to the probabilities so entropy terms
/// never take the log of an underflowed value.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    probs: DMatrix<f64>,
    log_probs: DMatrix<f64>,
    query_rows: Vec<usize>,
    query_marginal: DVector<f64>,
}

impl Posteriors {
    /// Wraps an explicit probability matrix. `query_rows` selects the rows
    /// that feed the marginal and the entropy terms.
    ///
    /// Rows must be on the simplex. Zero entries are allowed here so that
    /// hard predictions can be audited.
    pub fn new(probs: DMatrix<f64>, query_rows: Vec<usize>) -> Result<Self> {
        if probs.ncols() < 2 {
            return Err(Error::InvalidDistribution(format!(
                "need at least 2 classes, got {}",
                probs.ncols()
            )));
        }
        if query_rows.is_empty() {
            return Err(Error::InvalidDistribution("no query rows".into()));
        }
        for (i, row) in probs.row_iter().enumerate() {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::InvalidDistribution(format!(
                    "row {i} has an entry outside [0, 1]"
                )));
            }
            let s: f64 = row.sum();
            if (s - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::InvalidDistribution(format!("row {i} sums to {s}")));
            }
        }
        if let Some(&bad) = query_rows.iter().find(|&&i| i >= probs.nrows()) {
            return Err(Error::InvalidDistribution(format!(
                "query row {bad} out of range"
            )));
        }
        let log_probs = probs.map(f64::ln);
        let query_marginal = column_mean(&probs, &query_rows);
        Ok(Posteriors {
            probs,
            log_probs,
            query_rows,
            query_marginal,
        })
    }

    /// Every row is treated as a query row.
    pub fn from_query_probs(probs: DMatrix<f64>) -> Result<Self> {
        let rows = (0..probs.nrows()).collect();
        Self::new(probs, rows)
    }

    /// Builds posteriors from normalized log-probabilities.
    pub(crate) fn from_log_probs(log_probs: DMatrix<f64>, query_rows: Vec<usize>) -> Self {
        let probs = log_probs.map(f64::exp);
        let query_marginal = column_mean(&probs, &query_rows);
        Posteriors {
            probs,
            log_probs,
            query_rows,
            query_marginal,
        }
    }

    /// N×K probabilities over all task rows.
    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn log_probs(&self) -> &DMatrix<f64> {
        &self.log_probs
    }

    pub fn query_rows(&self) -> &[usize] {
        &self.query_rows
    }

    /// Mean of the query rows.
    pub fn query_marginal(&self) -> &[f64] {
        self.query_marginal.as_slice()
    }

    pub fn num_classes(&self) -> usize {
        self.probs.ncols()
    }

    /// |Q|×K probabilities of the query rows, in query order.
    pub fn query_probs(&self) -> DMatrix<f64> {
        self.probs.select_rows(self.query_rows.iter())
    }

    /// Hard prediction (row argmax) for each query row.
    pub fn predictions(&self) -> Vec<usize> {
        self.query_rows
            .iter()
            .map(|&i| argmax(self.probs.row(i).iter().copied()))
            .collect()
    }
}

fn column_mean(probs: &DMatrix<f64>, rows: &[usize]) -> DVector<f64> {
    let mut m = DVector::zeros(probs.ncols());
    for &i in rows {
        for k in 0..probs.ncols() {
            m[k] += probs[(i, k)];
        }
    }
    m / rows.len() as f64
}

/// Index of the largest value; ties resolve to the lowest index.
pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, v) in values.enumerate() {
        if v > best.1 {
            best = (k, v);
        }
    }
    best.0
}

/// Scales every row to unit L2 norm.
pub fn normalize_features(raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = raw.clone();
    for (row, mut r) in out.row_iter_mut().enumerate() {
        let norm = r.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroNormRow { row });
        }
        r /= norm;
    }
    Ok(out)
}

/// Softmax over negative scaled squared distances to each class weight.
///
/// Logits are `-(tau/2)·‖w_k − z_i‖²`, stabilized by subtracting each row's
/// maximum before exponentiating.
pub fn compute_posteriors(
    weights: &ClassifierWeights,
    task: &Task,
    tau: f64,
) -> Result<Posteriors> {
    if weights.dim() != task.dim() {
        return Err(Error::DimensionMismatch {
            expected: task.dim(),
            actual: weights.dim(),
        });
    }
    if weights.num_classes() != task.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: task.num_classes(),
            actual: weights.num_classes(),
        });
    }
    let logits = scaled_neg_sq_distances(task.features(), weights.weights(), tau);
    Ok(Posteriors::from_log_probs(
        log_softmax_rows(logits),
        task.query_indices().to_vec(),
    ))
}

/// `-(tau/2)·‖w_k − z_i‖²` for every (row, class), via one matrix product.
fn scaled_neg_sq_distances(z: &DMatrix<f64>, w: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let cross = z * w.transpose();
    let z_sq: Vec<f64> = z.row_iter().map(|r| r.norm_squared()).collect();
    let w_sq: Vec<f64> = w.row_iter().map(|r| r.norm_squared()).collect();
    DMatrix::from_fn(z.nrows(), w.nrows(), |i, k| {
        let d2 = (z_sq[i] + w_sq[k] - 2.0 * cross[(i, k)]).max(0.0);
        -0.5 * tau * d2
    })
}

pub(crate) fn log_softmax_rows(mut logits: DMatrix<f64>) -> DMatrix<f64> {
    for mut row in logits.row_iter_mut() {
        let max = row.max();
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        row.add_scalar_mut(-lse);
    }
    logits
}

/// Class means of the support embeddings.
pub fn init_prototypes(task: &Task) -> Result<ClassifierWeights> {
    let k = task.num_classes();
    let mut w = DMatrix::zeros(k, task.dim());
    let mut counts = vec![0usize; k];
    for (&i, &y) in task.support_indices().iter().zip(task.support_labels()) {
        let mut row = w.row_mut(y);
        row += task.features().row(i);
        counts[y] += 1;
    }
    for (class, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(Error::EmptyClass { class });
        }
        let mut row = w.row_mut(class);
        row /= c as f64;
    }
    ClassifierWeights::new(w)
}

/// Fraction of query predictions that match the evaluation labels.
pub fn query_accuracy(predictions: &[usize], truth: &[usize]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: truth.len(),
        });
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let hits = predictions
        .iter()
        .zip(truth)
        .filter(|(a, b)| a == b)
        .count();
    Ok(hits as f64 / truth.len() as f64)
}
