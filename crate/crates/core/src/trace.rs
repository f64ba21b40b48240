//! Per-iteration convergence records shared by both solvers.

use serde::{Deserialize, Serialize};

/// State of a solver at one point in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based count of completed iterations; 0 for the initial state.
    pub iteration: usize,
    /// Objective value of the solver that produced the trace.
    pub loss: f64,
    /// Query accuracy, when evaluation labels are available.
    pub accuracy: Option<f64>,
    /// Empirical mutual information between query features and predictions.
    pub mi_alpha1: f64,
    /// Largest absolute change of any weight entry during this iteration.
    pub weight_displacement: f64,
}

/// The initial state followed by one record per completed iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    initial: IterationRecord,
    records: Vec<IterationRecord>,
}

impl ConvergenceTrace {
    pub(crate) fn new(initial: IterationRecord, capacity: usize) -> Self {
        ConvergenceTrace {
            initial,
            records: Vec::with_capacity(capacity),
        }
    }

    pub(crate) fn push(&mut self, record: IterationRecord) {
        debug_assert_eq!(record.iteration, self.records.len() + 1);
        self.records.push(record);
    }

    /// State before the first iteration (prototype initialization).
    pub fn initial(&self) -> &IterationRecord {
        &self.initial
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Last recorded state, or the initial state when no iteration ran.
    pub fn last(&self) -> &IterationRecord {
        self.records.last().unwrap_or(&self.initial)
    }
}
