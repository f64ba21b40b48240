use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EmbeddingBank;
use crate::classifier::normalize_features;
use crate::error::{Error, Result};
use crate::task::Task;
use nalgebra::DMatrix;

/// How an episode is drawn from a bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpisodeSpec {
    /// K classes with the same support and query count each.
    Standard {
        ways: usize,
        shots: usize,
        queries: usize,
    },
    /// Ways and per-class support counts drawn uniformly from inclusive
    /// ranges; the query budget is split evenly, remainder to the first classes.
    Random {
        ways: (usize, usize),
        support: (usize, usize),
        query_budget: usize,
    },
}

impl EpisodeSpec {
    pub fn standard(ways: usize, shots: usize, queries: usize) -> Self {
        EpisodeSpec::Standard {
            ways,
            shots,
            queries,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidEpisode(m));
        match *self {
            EpisodeSpec::Standard {
                ways,
                shots,
                queries,
            } => {
                if ways < 2 {
                    return bad(format!("ways must be at least 2, got {ways}"));
                }
                if shots == 0 || queries == 0 {
                    return bad("shots and queries must be positive".into());
                }
            }
            EpisodeSpec::Random {
                ways,
                support,
                query_budget,
            } => {
                if ways.0 < 2 || ways.0 > ways.1 {
                    return bad(format!("bad ways range {}..={}", ways.0, ways.1));
                }
                if support.0 == 0 || support.0 > support.1 {
                    return bad(format!("bad support range {}..={}", support.0, support.1));
                }
                if query_budget < ways.1 {
                    return bad(format!(
                        "query budget {query_budget} is below the largest way count {}",
                        ways.1
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Draws one task. Class choice and row choice use one random stream;
/// the Random mode's shape draws use a second stream, so degenerate ranges
/// reproduce the Standard task for the same seed.
pub fn sample_episode(bank: &EmbeddingBank, spec: &EpisodeSpec, rng_seed: u64) -> Result<Task> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut shape_rng = ChaCha8Rng::seed_from_u64(rng_seed);
    shape_rng.set_stream(1);

    let (ways, support_counts, query_counts) = match *spec {
        EpisodeSpec::Standard {
            ways,
            shots,
            queries,
        } => (ways, vec![shots; ways], vec![queries; ways]),
        EpisodeSpec::Random {
            ways,
            support,
            query_budget,
        } => {
            let k = shape_rng.random_range(ways.0..=ways.1);
            let s: Vec<usize> = (0..k)
                .map(|_| shape_rng.random_range(support.0..=support.1))
                .collect();
            let q: Vec<usize> = (0..k)
                .map(|c| query_budget / k + usize::from(c < query_budget % k))
                .collect();
            (k, s, q)
        }
    };

    if bank.num_classes() < ways {
        return Err(Error::InvalidEpisode(format!(
            "bank has {} classes, episode needs {ways}",
            bank.num_classes()
        )));
    }
    let classes = sample(&mut rng, bank.num_classes(), ways).into_vec();

    let mut support_rows = Vec::new();
    let mut support_labels = Vec::new();
    let mut query_rows = Vec::new();
    let mut query_labels = Vec::new();
    for (label, &class) in classes.iter().enumerate() {
        let rows = bank.class_rows(class);
        let needed = support_counts[label] + query_counts[label];
        if rows.len() < needed {
            return Err(Error::InsufficientSamples {
                class,
                needed,
                available: rows.len(),
            });
        }
        let picked = sample(&mut rng, rows.len(), needed).into_vec();
        let (s, q) = picked.split_at(support_counts[label]);
        support_rows.extend(s.iter().map(|&j| rows[j]));
        support_labels.extend(std::iter::repeat_n(label, s.len()));
        query_rows.extend(q.iter().map(|&j| rows[j]));
        query_labels.extend(std::iter::repeat_n(label, q.len()));
    }

    let ns = support_rows.len();
    let all: Vec<usize> = support_rows.iter().chain(&query_rows).copied().collect();
    let raw = DMatrix::from_fn(all.len(), bank.dim(), |i, j| bank.row(all[i])[j] as f64);
    let features = normalize_features(&raw)?;
    Task::new(
        features,
        (0..ns).collect(),
        support_labels,
        (ns..all.len()).collect(),
        Some(query_labels),
        ways,
    )
}
