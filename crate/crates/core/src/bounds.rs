//! Error-probability bounds for the soft classifier, in nats.
//!
//! The headline result bounds the hard error rate by three terms: a
//! marginal-mismatch term `δ(√(KL/2))`, a confidence term `δ(H(Ŷ|X))`
//! and a class-confusion term `g(ε)`. Pinsker's inequality, entropy
//! continuity and the `P_Δ` chain are exposed separately so each step
//! can be audited on its own.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::classifier::{Posteriors, SIMPLEX_TOL};
use crate::error::{Error, Result};
use crate::objective::{conditional_entropy, entropy};

fn domain_err(what: &'static str, value: f64, domain: impl Into<String>) -> Error {
    Error::Domain {
        what,
        value,
        domain: domain.into(),
    }
}

/// `−p ln p − (1−p) ln(1−p)`.
pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(domain_err("p", p, "[0, 1]"));
    }
    Ok(entropy(&[p, 1.0 - p]))
}

/// Upper end of the domain of [`delta`]: `(K−1)/K`.
pub fn delta_domain_max(k: usize) -> f64 {
    (k as f64 - 1.0) / k as f64
}

/// `δ(x) = H₂(x) + x ln(K−1)`, strictly increasing on `[0, (K−1)/K]`.
pub fn delta(x: f64, k: usize) -> Result<f64> {
    if k < 2 {
        return Err(domain_err("k", k as f64, "k >= 2"));
    }
    let hi = delta_domain_max(k);
    if !(0.0..=hi).contains(&x) {
        return Err(domain_err("x", x, format!("[0, {hi}]")));
    }
    Ok(binary_entropy(x)? + x * (k as f64 - 1.0).ln())
}

/// `g(ε) = −ln(1−ε) − (K−1) ε ln ε`, with `g(0) = 0`.
pub fn g_epsilon(eps: f64, k: usize) -> Result<f64> {
    if k < 2 {
        return Err(domain_err("k", k as f64, "k >= 2"));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(domain_err("eps", eps, "[0, 1)"));
    }
    let tail = if eps > 0.0 { eps * eps.ln() } else { 0.0 };
    Ok(-(1.0 - eps).ln() - (k as f64 - 1.0) * tail)
}

/// Joint distribution of (prediction, truth) and the per-class diagnostics
/// built from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionStats {
    /// `joint[ŷ][y] = P(Ŷ = ŷ, Y = y)`.
    pub joint: Vec<Vec<f64>>,
    /// `P(Ŷ = y | Y = y)`; NaN for classes absent from the truth.
    pub per_class_recall: Vec<f64>,
    /// `1 − min recall` over the classes present in the truth.
    pub epsilon: f64,
    /// For every predicted class `y` that occurs,
    /// `P(Ŷ=y, Y=y) > P(Ŷ=y, Y=y')` for all `y' ≠ y`.
    pub diagonally_dominant: bool,
    /// The same predicate with `≥`.
    pub weakly_dominant: bool,
}

impl ConfusionStats {
    fn from_joint(joint: Vec<Vec<f64>>) -> Self {
        let k = joint.len();
        let truth_mass: Vec<f64> = (0..k).map(|y| (0..k).map(|p| joint[p][y]).sum()).collect();
        let per_class_recall: Vec<f64> = (0..k)
            .map(|y| {
                if truth_mass[y] > 0.0 {
                    joint[y][y] / truth_mass[y]
                } else {
                    f64::NAN
                }
            })
            .collect();
        let min_recall = per_class_recall
            .iter()
            .filter(|r| !r.is_nan())
            .copied()
            .fold(1.0, f64::min);
        let epsilon = (1.0 - min_recall).clamp(0.0, 1.0);

        let dominant = |strict: bool| {
            (0..k).all(|y| {
                let row = &joint[y];
                row.iter().sum::<f64>() == 0.0
                    || (0..k).filter(|&o| o != y).all(|o| {
                        if strict {
                            row[y] > row[o]
                        } else {
                            row[y] >= row[o]
                        }
                    })
            })
        };
        ConfusionStats {
            diagonally_dominant: dominant(true),
            weakly_dominant: dominant(false),
            joint,
            per_class_recall,
            epsilon,
        }
    }
}

fn check_labels(labels: &[usize], k: usize) -> Result<()> {
    match labels.iter().find(|&&y| y >= k) {
        Some(&y) => Err(Error::LabelOutOfRange {
            label: y as u64,
            num_classes: k as u64,
        }),
        None => Ok(()),
    }
}

/// Empirical confusion of hard predictions against the truth.
pub fn confusion_stats(predictions: &[usize], truth: &[usize], k: usize) -> Result<ConfusionStats> {
    if predictions.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: truth.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::InvalidDistribution("no labels".into()));
    }
    check_labels(predictions, k)?;
    check_labels(truth, k)?;
    let mut counts = vec![vec![0usize; k]; k];
    for (&p, &y) in predictions.iter().zip(truth) {
        counts[p][y] += 1;
    }
    let n = truth.len() as f64;
    let joint = counts
        .into_iter()
        .map(|row| row.into_iter().map(|c| c as f64 / n).collect())
        .collect();
    Ok(ConfusionStats::from_joint(joint))
}

/// Confusion of the soft classifier: `Ŷ` is drawn from each row's posterior.
///
/// Its recall `P(Ŷ=y | Y=y)` is the mean posterior mass on the true class,
/// which is the quantity the `g(ε)` term controls.
pub fn soft_confusion_stats(posteriors: &Posteriors, truth: &[usize]) -> Result<ConfusionStats> {
    let rows = posteriors.query_rows();
    if rows.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: rows.len(),
            right: truth.len(),
        });
    }
    let k = posteriors.num_classes();
    check_labels(truth, k)?;
    let w = 1.0 / truth.len() as f64;
    let p = posteriors.probs();
    let mut joint = vec![vec![0.0; k]; k];
    for (&i, &y) in rows.iter().zip(truth) {
        for (c, row) in joint.iter_mut().enumerate() {
            row[y] += w * p[(i, c)];
        }
    }
    Ok(ConfusionStats::from_joint(joint))
}

/// The chain `P_Δ ≤ 1 − exp(−H(Ŷ|X)) ≤ H(Ŷ|X)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PDeltaTerms {
    /// `1 −` mean over query rows of `max_k p_ik`.
    pub empirical: f64,
    /// `1 − exp(−H(Ŷ|X))`.
    pub exp_bound: f64,
    /// `H(Ŷ|X)`.
    pub bound: f64,
}

impl PDeltaTerms {
    /// Whether both inequalities hold, up to `tol`.
    pub fn chain_holds(&self, tol: f64) -> bool {
        self.empirical <= self.exp_bound + tol && self.exp_bound <= self.bound + tol
    }
}

pub fn p_delta_terms(posteriors: &Posteriors) -> PDeltaTerms {
    let p = posteriors.probs();
    let rows = posteriors.query_rows();
    let mean_max = rows.iter().map(|&i| p.row(i).max()).sum::<f64>() / rows.len() as f64;
    let h = conditional_entropy(posteriors);
    PDeltaTerms {
        empirical: 1.0 - mean_max,
        exp_bound: 1.0 - (-h).exp(),
        bound: h,
    }
}

fn check_simplex(name: &str, v: &[f64]) -> Result<()> {
    if v.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::InvalidDistribution(format!(
            "{name} has an entry outside [0, 1]"
        )));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidDistribution(format!("{name} sums to {s}")));
    }
    Ok(())
}

/// `Σ_k a_k ln(a_k / b_k)`.
pub fn kl_divergence(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let mut total = 0.0;
    for (k, (&x, &y)) in a.iter().zip(b).enumerate() {
        if x > 0.0 {
            if y <= 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "reference has zero mass on class {k} where the distribution does not"
                )));
            }
            total += x * (x / y).ln();
        }
    }
    Ok(total.max(0.0))
}

/// KL divergence from the query marginal to `prior`.
pub fn marginal_kl(posteriors: &Posteriors, prior: &[f64]) -> Result<f64> {
    check_simplex("prior", prior)?;
    kl_divergence(posteriors.query_marginal(), prior)
}

/// `Σ_k |a_k − b_k|`.
pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Right-hand side of the entropy continuity inequality
/// `|H(a) − H(b)| ≤ t ln(K−1) + H₂(t)`, `t = ½‖a − b‖₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuityBound {
    pub half_l1: f64,
    /// `None` when `half_l1` is outside `[0, (K−1)/K]`.
    pub bound: Option<f64>,
    /// `|H(a) − H(b)|`.
    pub entropy_gap: f64,
}

impl ContinuityBound {
    pub fn in_domain(&self) -> bool {
        self.bound.is_some()
    }

    pub fn holds(&self, tol: f64) -> Option<bool> {
        self.bound.map(|b| self.entropy_gap <= b + tol)
    }
}

pub fn entropy_continuity_bound(pa: &[f64], pb: &[f64], k: usize) -> Result<ContinuityBound> {
    if pa.len() != k || pb.len() != k {
        return Err(Error::LengthMismatch {
            left: pa.len(),
            right: pb.len(),
        });
    }
    check_simplex("pa", pa)?;
    check_simplex("pb", pb)?;
    let half_l1 = 0.5 * l1_distance(pa, pb);
    Ok(ContinuityBound {
        half_l1,
        bound: delta(half_l1, k).ok(),
        entropy_gap: (entropy(pa) - entropy(pb)).abs(),
    })
}

/// `P_e ≤ H(Y|Ŷ)/2` with the entropy in bits, restated for an entropy in
/// nats: `P_e ≤ H / (2 ln 2)`. Valid in the regime `P_e ≤ 1/2`.
pub fn kovalevsky_check(cond_entropy_nats: f64, p_e: f64) -> Result<bool> {
    if !(0.0..=0.5).contains(&p_e) {
        return Err(domain_err("p_e", p_e, "[0, 0.5]"));
    }
    Ok(p_e <= cond_entropy_nats / (2.0 * LN_2))
}

/// Outcome of the assembled error bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundVerdict {
    Holds,
    Violated,
    /// The confusion matrix is not diagonally dominant.
    AssumptionViolated,
    /// A `δ` argument or `ε` falls outside its domain.
    NotApplicable,
}

/// Every term of the error bound for one set of query posteriors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// Hard error rate of the argmax predictions.
    pub p_e: f64,
    pub kl_marginal: f64,
    pub cond_entropy: f64,
    pub p_delta_empirical: f64,
    pub p_delta_bound: f64,
    pub delta_term_kl: Option<f64>,
    pub delta_term_cond: Option<f64>,
    pub g_eps: Option<f64>,
    pub total_bound: Option<f64>,
    pub epsilon: f64,
    pub diagonally_dominant: bool,
    /// Both `δ` arguments are within `[0, (K−1)/K]`.
    pub domain_valid: bool,
    pub bound_holds: bool,
    pub verdict: BoundVerdict,
}

/// Assembles `P_e ≤ δ(√(KL/2)) + δ(H(Ŷ|X)) + g(ε)`.
///
/// Dominance is checked on the hard confusion matrix. `ε` comes from the
/// soft confusion so that `g(ε)` bounds the soft classifier's `H(Ŷ|Y)`.
pub fn proposition1_bound(
    posteriors: &Posteriors,
    truth: &[usize],
    prior: &[f64],
) -> Result<BoundReport> {
    proposition1_bound_with(posteriors, truth, prior, true)
}

/// As [`proposition1_bound`]; `strict` selects `>` or `≥` for dominance.
pub fn proposition1_bound_with(
    posteriors: &Posteriors,
    truth: &[usize],
    prior: &[f64],
    strict: bool,
) -> Result<BoundReport> {
    let k = posteriors.num_classes();
    if prior.len() != k {
        return Err(Error::LengthMismatch {
            left: prior.len(),
            right: k,
        });
    }
    let predictions = posteriors.predictions();
    let hard = confusion_stats(&predictions, truth, k)?;
    let soft = soft_confusion_stats(posteriors, truth)?;
    let errors = predictions
        .iter()
        .zip(truth)
        .filter(|(a, b)| a != b)
        .count();
    let p_e = errors as f64 / truth.len() as f64;

    let kl = marginal_kl(posteriors, prior)?;
    let pd = p_delta_terms(posteriors);
    let cond = pd.bound;

    let delta_term_kl = delta((kl / 2.0).sqrt(), k).ok();
    let delta_term_cond = delta(cond, k).ok();
    let g_eps = g_epsilon(soft.epsilon, k).ok();
    let domain_valid = delta_term_kl.is_some() && delta_term_cond.is_some();
    let total_bound = match (delta_term_kl, delta_term_cond, g_eps) {
        (Some(a), Some(b), Some(c)) => Some(a + b + c),
        _ => None,
    };
    let dominant = if strict {
        hard.diagonally_dominant
    } else {
        hard.weakly_dominant
    };

    let verdict = match total_bound {
        _ if !dominant => BoundVerdict::AssumptionViolated,
        None => BoundVerdict::NotApplicable,
        Some(b) if p_e <= b => BoundVerdict::Holds,
        Some(_) => BoundVerdict::Violated,
    };
    Ok(BoundReport {
        p_e,
        kl_marginal: kl,
        cond_entropy: cond,
        p_delta_empirical: pd.empirical,
        p_delta_bound: pd.bound,
        delta_term_kl,
        delta_term_cond,
        g_eps,
        total_bound,
        epsilon: soft.epsilon,
        diagonally_dominant: dominant,
        domain_valid,
        bound_holds: verdict == BoundVerdict::Holds,
        verdict,
    })
}

/// Class frequencies of `labels`.
pub fn label_distribution(labels: &[usize], k: usize) -> Vec<f64> {
    let mut d = vec![0.0; k];
    for &y in labels {
        if y < k {
            d[y] += 1.0;
        }
    }
    let n = labels.len().max(1) as f64;
    d.iter_mut().for_each(|x| *x /= n);
    d
}
