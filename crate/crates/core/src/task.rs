//! Few-shot tasks and solver hyperparameters.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the unit-norm invariant for task features.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// One few-shot task: L2-normalized embeddings split into a labelled
/// support set and an unlabelled query set.
///
/// Query labels, when present, are kept for evaluation only. Solvers
/// never read them.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    features: DMatrix<f64>,
    support: Vec<usize>,
    support_labels: Vec<usize>,
    query: Vec<usize>,
    query_labels: Option<Vec<usize>>,
    num_classes: usize,
}

impl Task {
    /// Builds a task and checks every structural invariant.
    ///
    /// `features` has one row per sample. `support` and `query` index into
    /// those rows and must partition them. `support_labels[j]` is the class of
    /// row `support[j]`.
    pub fn new(
        features: DMatrix<f64>,
        support: Vec<usize>,
        support_labels: Vec<usize>,
        query: Vec<usize>,
        query_labels: Option<Vec<usize>>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if num_classes < 2 {
            return Err(Error::InvalidTask(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if features.ncols() == 0 {
            return Err(Error::InvalidTask("feature dimension is zero".into()));
        }
        if query.is_empty() {
            return Err(Error::InvalidTask("query set is empty".into()));
        }
        if support.len() != support_labels.len() {
            return Err(Error::LengthMismatch {
                left: support.len(),
                right: support_labels.len(),
            });
        }
        if let Some(ql) = &query_labels {
            if ql.len() != query.len() {
                return Err(Error::LengthMismatch {
                    left: query.len(),
                    right: ql.len(),
                });
            }
            if let Some(&bad) = ql.iter().find(|&&y| y >= num_classes) {
                return Err(Error::LabelOutOfRange {
                    label: bad as u64,
                    num_classes: num_classes as u64,
                });
            }
        }

        let mut seen = vec![false; n];
        for &i in support.iter().chain(query.iter()) {
            if i >= n {
                return Err(Error::InvalidTask(format!(
                    "row index {i} out of range for {n} rows"
                )));
            }
            if seen[i] {
                return Err(Error::InvalidTask(format!(
                    "row {i} appears more than once in support/query"
                )));
            }
            seen[i] = true;
        }
        if support.len() + query.len() != n {
            return Err(Error::InvalidTask(format!(
                "support and query cover {} of {n} rows",
                support.len() + query.len()
            )));
        }

        let mut present = vec![false; num_classes];
        for &y in &support_labels {
            if y >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: y as u64,
                    num_classes: num_classes as u64,
                });
            }
            present[y] = true;
        }
        if let Some(class) = present.iter().position(|&p| !p) {
            return Err(Error::EmptyClass { class });
        }

        for (row, r) in features.row_iter().enumerate() {
            let norm = r.norm();
            if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::InvalidTask(format!(
                    "row {row} has norm {norm}, expected 1"
                )));
            }
        }

        Ok(Task {
            features,
            support,
            support_labels,
            query,
            query_labels,
            num_classes,
        })
    }

    /// Stacks separate support and query matrices (support rows first).
    pub fn from_parts(
        support_features: DMatrix<f64>,
        support_labels: Vec<usize>,
        query_features: DMatrix<f64>,
        query_labels: Option<Vec<usize>>,
        num_classes: usize,
    ) -> Result<Self> {
        let (ns, nq) = (support_features.nrows(), query_features.nrows());
        if ns > 0 && nq > 0 && support_features.ncols() != query_features.ncols() {
            return Err(Error::DimensionMismatch {
                expected: support_features.ncols(),
                actual: query_features.ncols(),
            });
        }
        let d = support_features.ncols().max(query_features.ncols());
        let mut features = DMatrix::zeros(ns + nq, d);
        features.rows_mut(0, ns).copy_from(&support_features);
        features.rows_mut(ns, nq).copy_from(&query_features);
        Task::new(
            features,
            (0..ns).collect(),
            support_labels,
            (ns..ns + nq).collect(),
            query_labels,
            num_classes,
        )
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn support_indices(&self) -> &[usize] {
        &self.support
    }

    pub fn support_labels(&self) -> &[usize] {
        &self.support_labels
    }

    pub fn query_indices(&self) -> &[usize] {
        &self.query
    }

    /// Evaluation-only labels for the query rows.
    pub fn query_labels(&self) -> Option<&[usize]> {
        self.query_labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn support_len(&self) -> usize {
        self.support.len()
    }

    pub fn query_len(&self) -> usize {
        self.query.len()
    }

    /// A copy of this task with the query labels removed.
    pub fn without_query_labels(&self) -> Task {
        Task {
            query_labels: None,
            ..self.clone()
        }
    }
}

/// Solver knobs. The same struct drives both solvers; `learning_rate`
/// is only read by gradient descent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Softmax temperature.
    pub tau: f64,
    /// Weight on the conditional entropy.
    pub alpha: f64,
    /// Weight on the support cross-entropy.
    pub lambda: f64,
    /// Penalty multiplier tying the auxiliary assignments to the posteriors.
    pub beta: f64,
    pub learning_rate: f64,
    pub iterations: usize,
}

impl Hyperparameters {
    /// Defaults for the alternating-direction solver (150 iterations).
    pub fn adm() -> Self {
        Hyperparameters {
            tau: 15.0,
            alpha: 0.1,
            lambda: 0.1,
            beta: 1.0,
            learning_rate: 1e-4,
            iterations: 150,
        }
    }

    /// Defaults for gradient descent (1000 Adam steps).
    pub fn gd() -> Self {
        Hyperparameters {
            iterations: 1000,
            ..Self::adm()
        }
    }

    pub fn with_iterations(self, iterations: usize) -> Self {
        Hyperparameters { iterations, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidHyperparameter(format!("{what} = {v}")));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau", self.tau);
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha", self.alpha);
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda", self.lambda);
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta", self.beta);
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", self.learning_rate);
        }
        Ok(())
    }
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self::adm()
    }
}
