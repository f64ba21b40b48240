//! Alternating-direction inference: closed-form updates of auxiliary
//! assignments and of the classifier weights, plus the ablation variants
//! and the convergence diagnostics.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::classifier::{
    compute_posteriors, init_prototypes, query_accuracy, ClassifierWeights, Posteriors,
};
use crate::error::{Error, Result};
use crate::objective::{adm_loss_terms, weighted_mutual_information, AuxAssignments};
use crate::task::{Hyperparameters, Task};
use crate::trace::{ConvergenceTrace, IterationRecord};

/// Tolerance used by the Hessian sign checks.
pub const HESSIAN_TOL: f64 = 1e-10;

/// Default tolerance for the fixed-point test.
pub const FIXED_POINT_TOL: f64 = 1e-4;

/// Which terms of the objective a run keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AblationVariant {
    /// Cross-entropy, marginal entropy and conditional entropy.
    Full,
    /// Cross-entropy only: the weights stay at the class prototypes.
    CeOnly,
    /// Cross-entropy and conditional entropy, no marginal term.
    CePlusCond,
    /// Cross-entropy and marginal entropy, no conditional term.
    CeMinusMarg,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [
        AblationVariant::Full,
        AblationVariant::CeOnly,
        AblationVariant::CePlusCond,
        AblationVariant::CeMinusMarg,
    ];

    /// Conditional-entropy weight actually used by this variant.
    pub fn effective_alpha(self, hp: &Hyperparameters) -> f64 {
        match self {
            AblationVariant::CeMinusMarg => 0.0,
            _ => hp.alpha,
        }
    }

    fn has_marginal_term(self) -> bool {
        matches!(self, AblationVariant::Full | AblationVariant::CeMinusMarg)
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationVariant::Full => "full",
            AblationVariant::CeOnly => "ce",
            AblationVariant::CePlusCond => "ce+cond",
            AblationVariant::CeMinusMarg => "ce-marg",
        })
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(AblationVariant::Full),
            "ce" => Ok(AblationVariant::CeOnly),
            "ce+cond" => Ok(AblationVariant::CePlusCond),
            "ce-marg" => Ok(AblationVariant::CeMinusMarg),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (expected full, ce, ce+cond or ce-marg)"
            ))),
        }
    }
}

/// How the assignment step is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum QSolver {
    /// The closed-form update (default). Ignores the coupling between
    /// rows through the marginal, so it is approximate when |Q| > 1.
    #[default]
    ClosedForm,
    /// Exact minimizer of the assignment subproblem via a Newton solve on
    /// its K-dimensional dual.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmOptions {
    pub variant: AblationVariant,
    pub q_solver: QSolver,
    /// Run [`hessian_check`] at every iterate.
    pub hessian_check: bool,
    /// Tolerance used to flag the first iteration where nothing moves.
    pub fixed_point_tol: f64,
}

impl Default for AdmOptions {
    fn default() -> Self {
        AdmOptions {
            variant: AblationVariant::Full,
            q_solver: QSolver::ClosedForm,
            hessian_check: false,
            fixed_point_tol: FIXED_POINT_TOL,
        }
    }
}

impl From<AblationVariant> for AdmOptions {
    fn from(variant: AblationVariant) -> Self {
        AdmOptions {
            variant,
            ..AdmOptions::default()
        }
    }
}

/// Largest eigenvalue of each per-class curvature matrix at one iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianCheckReport {
    pub support_max_eigenvalues: Vec<f64>,
    pub query_max_eigenvalues: Vec<f64>,
    /// Every eigenvalue is at most [`HESSIAN_TOL`].
    pub passed: bool,
}

impl HessianCheckReport {
    fn from_eigenvalues(support: Vec<f64>, query: Vec<f64>) -> Self {
        let passed = support.iter().chain(&query).all(|&e| e <= HESSIAN_TOL);
        HessianCheckReport {
            support_max_eigenvalues: support,
            query_max_eigenvalues: query,
            passed,
        }
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.support_max_eigenvalues
            .iter()
            .chain(&self.query_max_eigenvalues)
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmResult {
    pub final_weights: ClassifierWeights,
    pub final_aux: AuxAssignments,
    pub final_posteriors: Posteriors,
    pub trace: ConvergenceTrace,
    pub options: AdmOptions,
    /// First iteration whose weight and assignment changes were both
    /// within `options.fixed_point_tol`.
    pub fixed_point_reached: Option<usize>,
    /// One report per iteration when the Hessian check was enabled.
    pub hessian_reports: Vec<HessianCheckReport>,
}

impl AdmResult {
    pub fn query_predictions(&self) -> Vec<usize> {
        self.final_posteriors.predictions()
    }

    /// Every per-iteration Hessian check passed (vacuously true when disabled).
    pub fn hessian_passed(&self) -> bool {
        self.hessian_reports.iter().all(|r| r.passed)
    }
}

/// Closed-form assignment update:
/// `q_ik ∝ p_ik^{1+α/β} / (Σ_{j∈Q} p_jk^{1+α/β})^{1/(1+β)}`.
///
/// Evaluated in log space and renormalized per row.
pub fn q_update(posteriors: &Posteriors, hp: &Hyperparameters) -> AuxAssignments {
    closed_form(posteriors, hp.alpha, hp.beta, true)
}

/// Assignment update for an ablation variant.
pub fn variant_q_update(
    posteriors: &Posteriors,
    hp: &Hyperparameters,
    variant: AblationVariant,
    solver: QSolver,
) -> AuxAssignments {
    let alpha = variant.effective_alpha(hp);
    match variant {
        AblationVariant::CeOnly => AuxAssignments::from_posteriors(posteriors),
        AblationVariant::CePlusCond => closed_form(posteriors, alpha, hp.beta, false),
        AblationVariant::Full | AblationVariant::CeMinusMarg => match solver {
            QSolver::ClosedForm => closed_form(posteriors, alpha, hp.beta, true),
            QSolver::Exact => exact_assignments(posteriors, alpha, hp.beta),
        },
    }
}

fn query_log_probs(posteriors: &Posteriors) -> DMatrix<f64> {
    posteriors
        .log_probs()
        .select_rows(posteriors.query_rows().iter())
}

fn closed_form(posteriors: &Posteriors, alpha: f64, beta: f64, marginal: bool) -> AuxAssignments {
    let mut la = query_log_probs(posteriors) * (1.0 + alpha / beta);
    if marginal {
        let shrink = 1.0 / (1.0 + beta);
        for mut col in la.column_iter_mut() {
            let lse = log_sum_exp(col.as_slice());
            col.add_scalar_mut(-shrink * lse);
        }
    }
    AuxAssignments::from_log_weights(la)
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Exact minimizer of the penalized objective over the assignments, with
/// the weights held fixed.
pub fn q_update_exact(posteriors: &Posteriors, hp: &Hyperparameters) -> AuxAssignments {
    exact_assignments(posteriors, hp.alpha, hp.beta)
}

/// Maximizes the concave dual
/// `g(v) = −LSE(v) − (β/|Q|) Σ_i LSE_k(a_ik − v_k/β)`,
/// `a_ik = (1+α/β)·ln p_ik`, whose row-wise maximizers
/// `q_ik ∝ exp(a_ik − v_k/β)` are the primal solution.
fn exact_assignments(posteriors: &Posteriors, alpha: f64, beta: f64) -> AuxAssignments {
    let la = query_log_probs(posteriors) * (1.0 + alpha / beta);
    let (n, k) = la.shape();
    let nf = n as f64;

    let rows_at = |v: &DVector<f64>| -> (DMatrix<f64>, f64) {
        let mut lq = la.clone();
        let mut lse_sum = 0.0;
        for mut row in lq.row_iter_mut() {
            for c in 0..k {
                row[c] -= v[c] / beta;
            }
            let lse = log_sum_exp(&row.iter().copied().collect::<Vec<_>>());
            lse_sum += lse;
            row.add_scalar_mut(-lse);
        }
        (lq, lse_sum)
    };
    let dual = |v: &DVector<f64>, lse_rows: f64| -> f64 {
        -log_sum_exp(v.as_slice()) - beta / nf * lse_rows
    };
    let softmax = |v: &DVector<f64>| -> DVector<f64> {
        let lse = log_sum_exp(v.as_slice());
        v.map(|x| (x - lse).exp())
    };

    // Warm start from the marginal of the closed-form update.
    let start = closed_form(posteriors, alpha, beta, true);
    let mut v = DVector::from_iterator(k, start.marginal().iter().map(|m| m.ln()));
    let (mut lq, lse_rows) = rows_at(&v);
    let mut value = dual(&v, lse_rows);

    for _ in 0..100 {
        let q = lq.map(f64::exp);
        let s = softmax(&v);
        let q_mean = DVector::from_iterator(k, q.column_iter().map(|c| c.sum() / nf));
        let grad = &q_mean - &s;
        if grad.amax() < 1e-15 {
            break;
        }

        let mut neg_hess = DMatrix::from_diagonal(&s) - &s * s.transpose();
        let mut rows_cov = DMatrix::from_diagonal(&(&q_mean * nf)) - q.transpose() * &q;
        rows_cov /= beta * nf;
        neg_hess += rows_cov;
        neg_hess.add_scalar_mut(1.0);
        let Some(chol) = neg_hess.cholesky() else {
            break;
        };
        let direction = chol.solve(&grad);
        let slope = grad.dot(&direction);

        let mut step = 1.0;
        let mut accepted = false;
        while step > 1e-10 {
            let candidate = &v + &direction * step;
            let (cand_lq, cand_lse) = rows_at(&candidate);
            let cand_value = dual(&candidate, cand_lse);
            if cand_value >= value + 1e-4 * step * slope {
                v = candidate;
                lq = cand_lq;
                value = cand_value;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // Rounding noise dominates the remaining ascent.
            break;
        }
    }
    AuxAssignments::from_log_weights(lq)
}

/// Weight update obtained by zeroing the gradient of the convex majorizer
/// built at `weights_prev`.
///
/// With `c = λ/(β+α)` and `r = |S|/|Q|`,
/// `w_k = [c Σ_S f(y_ik) + r Σ_Q f(q_ik)] / [c Σ_S y_ik + r Σ_Q q_ik]`,
/// where `f(x) = x·z_i + p_ik (w_k − z_i)` uses the previous iterate.
pub fn w_update(
    weights_prev: &ClassifierWeights,
    posteriors_prev: &Posteriors,
    aux: &AuxAssignments,
    task: &Task,
    hp: &Hyperparameters,
) -> Result<ClassifierWeights> {
    w_update_with_alpha(weights_prev, posteriors_prev, aux, task, hp, hp.alpha)
}

fn w_update_with_alpha(
    weights_prev: &ClassifierWeights,
    posteriors_prev: &Posteriors,
    aux: &AuxAssignments,
    task: &Task,
    hp: &Hyperparameters,
    alpha: f64,
) -> Result<ClassifierWeights> {
    let k = task.num_classes();
    let q = aux.assignments();
    if q.nrows() != task.query_len() || q.ncols() != k {
        return Err(Error::DimensionMismatch {
            expected: task.query_len(),
            actual: q.nrows(),
        });
    }
    let p = posteriors_prev.probs();
    let c = hp.lambda / (hp.beta + alpha);
    let r = task.support_len() as f64 / task.query_len() as f64;

    // Coefficients on z_i: targets minus previous posteriors.
    let mut coef = DMatrix::<f64>::zeros(task.num_rows(), k);
    let mut den = vec![0.0; k];
    let mut p_mass = vec![0.0; k];
    for (&i, &y) in task.support_indices().iter().zip(task.support_labels()) {
        for col in 0..k {
            coef[(i, col)] = -c * p[(i, col)];
            p_mass[col] += c * p[(i, col)];
        }
        coef[(i, y)] += c;
        den[y] += c;
    }
    for (j, &i) in task.query_indices().iter().enumerate() {
        for col in 0..k {
            coef[(i, col)] = r * (q[(j, col)] - p[(i, col)]);
            p_mass[col] += r * p[(i, col)];
            den[col] += r * q[(j, col)];
        }
    }

    let mut w = coef.transpose() * task.features();
    for col in 0..k {
        if den[col].is_nan() || den[col] <= 0.0 {
            return Err(Error::ZeroDenominator { class: col });
        }
        let mut row = w.row_mut(col);
        row += weights_prev.weights().row(col) * p_mass[col];
        row /= den[col];
    }
    ClassifierWeights::new(w)
}

/// Value of the convex majorizer whose minimizer is [`w_update`], up to
/// terms that do not depend on `weights`.
pub fn auxiliary_bound(
    weights: &ClassifierWeights,
    weights_prev: &ClassifierWeights,
    posteriors_prev: &Posteriors,
    aux: &AuxAssignments,
    task: &Task,
    hp: &Hyperparameters,
) -> f64 {
    let z = task.features();
    let (w, w0) = (weights.weights(), weights_prev.weights());
    let p = posteriors_prev.probs();
    let q = aux.assignments();
    let k = task.num_classes();
    let linear =
        |i: usize, col: usize| -> f64 { (z.row(i) - w0.row(col)).dot(&w.row(col)) * p[(i, col)] };
    let sq = |i: usize, col: usize| 0.5 * (z.row(i) - w.row(col)).norm_squared();

    let mut support = 0.0;
    for (&i, &y) in task.support_indices().iter().zip(task.support_labels()) {
        support += sq(i, y);
        for col in 0..k {
            support += linear(i, col);
        }
    }
    let mut query = 0.0;
    for (j, &i) in task.query_indices().iter().enumerate() {
        for col in 0..k {
            query += q[(j, col)] * sq(i, col) + linear(i, col);
        }
    }
    hp.lambda / task.support_len() as f64 * support
        + (hp.beta + hp.alpha) / task.query_len() as f64 * query
}

/// Sign check of the per-class curvature matrices
/// `H_k = Σ_i p_ik(p_ik − 1)(z_i − w_k)(z_i − w_k)ᵀ − p_ik·I`
/// over the support and the query rows.
///
/// Both summands are negative semi-definite, so this passes on any input.
/// [`curvature_check`] evaluates the actual Hessian of the log-partition term.
pub fn hessian_check(
    weights: &ClassifierWeights,
    posteriors: &Posteriors,
    task: &Task,
) -> HessianCheckReport {
    per_class_max_eigenvalues(weights, posteriors, task, Curvature::Stated)
}

/// Largest eigenvalue of the true Hessian of `Σ_i ln Σ_j exp(−(τ/2)‖z_i − w_j‖²)`
/// with respect to `w_k`: `Σ_i τ² p_ik(1 − p_ik) u uᵀ − τ p_ik I`.
pub fn curvature_check(
    weights: &ClassifierWeights,
    posteriors: &Posteriors,
    task: &Task,
    tau: f64,
) -> HessianCheckReport {
    per_class_max_eigenvalues(weights, posteriors, task, Curvature::True { tau })
}

#[derive(Clone, Copy)]
enum Curvature {
    /// `−MᵀM − s·I`
    Stated,
    /// `τ²MᵀM − τs·I`
    True { tau: f64 },
}

/// For each class and row set, forms `M` with rows `sqrt(p(1−p))·(z_i − w_k)`
/// and `s = Σ p_ik`, then reads the extreme eigenvalue of `MᵀM` off the
/// smaller of the two Gram matrices.
fn per_class_max_eigenvalues(
    weights: &ClassifierWeights,
    posteriors: &Posteriors,
    task: &Task,
    form: Curvature,
) -> HessianCheckReport {
    let z = task.features();
    let w = weights.weights();
    let p = posteriors.probs();
    let d = task.dim();

    let eval = |rows: &[usize], class: usize| -> f64 {
        if rows.is_empty() {
            return 0.0;
        }
        let n = rows.len();
        let mut m = DMatrix::<f64>::zeros(n, d);
        let mut mass = 0.0;
        for (r, &i) in rows.iter().enumerate() {
            let pi = p[(i, class)];
            mass += pi;
            let scale = (pi * (1.0 - pi)).max(0.0).sqrt();
            for c in 0..d {
                m[(r, c)] = scale * (z[(i, c)] - w[(class, c)]);
            }
        }
        let gram = if n < d {
            &m * m.transpose()
        } else {
            m.transpose() * &m
        };
        let eigs = gram.symmetric_eigenvalues();
        match form {
            Curvature::Stated => {
                // MᵀM has d − n extra zero eigenvalues when n < d.
                let smallest = if n < d { 0.0 } else { eigs.min() };
                -mass - smallest
            }
            Curvature::True { tau } => tau * tau * eigs.max().max(0.0) - tau * mass,
        }
    };

    let k = task.num_classes();
    let support = (0..k).map(|c| eval(task.support_indices(), c)).collect();
    let query = (0..k).map(|c| eval(task.query_indices(), c)).collect();
    HessianCheckReport::from_eigenvalues(support, query)
}

/// Penalized objective of a variant, evaluated at (posteriors, assignments).
pub fn variant_loss(
    posteriors: &Posteriors,
    aux: &AuxAssignments,
    task: &Task,
    hp: &Hyperparameters,
    variant: AblationVariant,
) -> Result<f64> {
    let t = adm_loss_terms(posteriors, aux, task)?;
    let alpha = variant.effective_alpha(hp);
    Ok(match variant {
        AblationVariant::CeOnly => hp.lambda * t.cross_entropy,
        _ => {
            let marginal = if variant.has_marginal_term() {
                t.neg_marginal_entropy
            } else {
                0.0
            };
            hp.lambda * t.cross_entropy
                + marginal
                + alpha * t.assignment_cross_entropy
                + hp.beta * t.penalty
        }
    })
}

/// Runs the full objective with the closed-form updates.
pub fn run_tim_adm(
    task: &Task,
    hp: &Hyperparameters,
    variant: AblationVariant,
) -> Result<AdmResult> {
    run_tim_adm_with(task, hp, &AdmOptions::from(variant))
}

pub fn run_tim_adm_with(
    task: &Task,
    hp: &Hyperparameters,
    options: &AdmOptions,
) -> Result<AdmResult> {
    hp.validate()?;
    let variant = options.variant;
    let mut weights = init_prototypes(task)?;
    let mut posteriors = compute_posteriors(&weights, task, hp.tau)?;
    let mut aux = AuxAssignments::from_posteriors(&posteriors);

    let initial_loss = variant_loss(&posteriors, &aux, task, hp, variant)?;
    let mut trace = ConvergenceTrace::new(
        record(0, initial_loss, &posteriors, task, 0.0)?,
        hp.iterations,
    );
    let mut hessian_reports = Vec::new();
    let mut fixed_point_reached = None;

    for t in 1..=hp.iterations {
        if options.hessian_check {
            hessian_reports.push(hessian_check(&weights, &posteriors, task));
        }
        let next_aux = variant_q_update(&posteriors, hp, variant, options.q_solver);
        let next_weights = match variant {
            AblationVariant::CeOnly => weights.clone(),
            _ => w_update_with_alpha(
                &weights,
                &posteriors,
                &next_aux,
                task,
                hp,
                variant.effective_alpha(hp),
            )?,
        };
        let displacement = next_weights.max_abs_diff(&weights);
        let aux_change = next_aux.max_abs_diff(&aux);
        if fixed_point_reached.is_none()
            && t > 1
            && displacement <= options.fixed_point_tol
            && aux_change <= options.fixed_point_tol
        {
            fixed_point_reached = Some(t);
        }

        weights = next_weights;
        aux = next_aux;
        posteriors = compute_posteriors(&weights, task, hp.tau)?;
        let loss = variant_loss(&posteriors, &aux, task, hp, variant)?;
        trace.push(record(t, loss, &posteriors, task, displacement)?);
    }

    Ok(AdmResult {
        final_weights: weights,
        final_aux: aux,
        final_posteriors: posteriors,
        trace,
        options: *options,
        fixed_point_reached,
        hessian_reports,
    })
}

fn record(
    iteration: usize,
    loss: f64,
    posteriors: &Posteriors,
    task: &Task,
    weight_displacement: f64,
) -> Result<IterationRecord> {
    let accuracy = match task.query_labels() {
        Some(truth) => Some(query_accuracy(&posteriors.predictions(), truth)?),
        None => None,
    };
    Ok(IterationRecord {
        iteration,
        loss,
        accuracy,
        mi_alpha1: weighted_mutual_information(posteriors, 1.0),
        weight_displacement,
    })
}

/// Change produced by one more (assignment, weight) update pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointResidual {
    pub weights: f64,
    pub assignments: f64,
}

impl FixedPointResidual {
    pub fn within(&self, tol: f64) -> bool {
        self.weights <= tol && self.assignments <= tol
    }
}

pub fn fixed_point_residual(
    result: &AdmResult,
    task: &Task,
    hp: &Hyperparameters,
) -> Result<FixedPointResidual> {
    let variant = result.options.variant;
    let posteriors = compute_posteriors(&result.final_weights, task, hp.tau)?;
    let aux = variant_q_update(&posteriors, hp, variant, result.options.q_solver);
    let weights = match variant {
        AblationVariant::CeOnly => result.final_weights.clone(),
        _ => w_update_with_alpha(
            &result.final_weights,
            &posteriors,
            &aux,
            task,
            hp,
            variant.effective_alpha(hp),
        )?,
    };
    Ok(FixedPointResidual {
        weights: weights.max_abs_diff(&result.final_weights),
        assignments: aux.max_abs_diff(&result.final_aux),
    })
}

/// True when one extra update pair moves neither the weights nor the
/// assignments by more than `tol` (max-abs over entries).
pub fn fixed_point_test(
    result: &AdmResult,
    task: &Task,
    hp: &Hyperparameters,
    tol: f64,
) -> Result<bool> {
    Ok(fixed_point_residual(result, task, hp)?.within(tol))
}
