//! Embedding banks, episode sampling and embedding files.

mod episode;
mod io;
mod synthetic;

pub use episode::{sample_episode, EpisodeSpec};
pub use io::{
    read_bank, read_csv_embeddings, read_embeddings, write_bank, write_csv_embeddings,
    write_embeddings,
};
pub use synthetic::{generate_synthetic_bank, Difficulty, SyntheticConfig};

use crate::error::{Error, Result};

/// A labelled pool of embeddings stored as `f32`, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBank {
    dim: usize,
    num_classes: usize,
    labels: Vec<u32>,
    features: Vec<f32>,
    class_rows: Vec<Vec<usize>>,
}

impl EmbeddingBank {
    /// `features` is row-major, `labels.len() × dim`.
    pub fn new(
        dim: usize,
        num_classes: usize,
        labels: Vec<u32>,
        features: Vec<f32>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidTask("embedding dimension is zero".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                actual: features.len(),
            });
        }
        let mut class_rows = vec![Vec::new(); num_classes];
        for (i, &y) in labels.iter().enumerate() {
            let slot = class_rows
                .get_mut(y as usize)
                .ok_or(Error::LabelOutOfRange {
                    label: y as u64,
                    num_classes: num_classes as u64,
                })?;
            slot.push(i);
        }
        Ok(EmbeddingBank {
            dim,
            num_classes,
            labels,
            features,
            class_rows,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Row-major feature storage.
    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Row indices belonging to `class`.
    pub fn class_rows(&self, class: usize) -> &[usize] {
        &self.class_rows[class]
    }
}
