use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::EmbeddingBank;
use crate::error::{Error, Result};

/// Gaussian-on-the-sphere clusters standing in for backbone features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_classes_pool: usize,
    pub samples_per_class: usize,
    pub dim: usize,
    /// Inverse noise scale; larger means tighter clusters.
    pub class_concentration: f64,
    pub rng_seed: u64,
}

/// Named difficulty presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Difficulty {
    /// Prototypes alone classify essentially every query correctly.
    Easy,
    /// Prototypes are decent; transductive inference adds several points.
    Typical,
    /// Heavy class overlap.
    Hard,
}

impl Difficulty {
    pub fn concentration(self) -> f64 {
        match self {
            Difficulty::Easy => 16.0,
            Difficulty::Typical => 5.0,
            Difficulty::Hard => 3.0,
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Difficulty::Easy => "easy",
            Difficulty::Typical => "typical",
            Difficulty::Hard => "hard",
        })
    }
}

impl FromStr for Difficulty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Difficulty::Easy),
            "typical" => Ok(Difficulty::Typical),
            "hard" => Ok(Difficulty::Hard),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }
}

impl SyntheticConfig {
    /// 20 classes of 200 samples in 64 dimensions.
    pub fn preset(difficulty: Difficulty) -> Self {
        SyntheticConfig {
            num_classes_pool: 20,
            samples_per_class: 200,
            dim: 64,
            class_concentration: difficulty.concentration(),
            rng_seed: 0,
        }
    }

    pub fn with_seed(self, rng_seed: u64) -> Self {
        SyntheticConfig { rng_seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config(format!(
                "dim must be at least 2, got {}",
                self.dim
            )));
        }
        if self.num_classes_pool < 2 {
            return Err(Error::Config("need at least 2 classes in the pool".into()));
        }
        if self.samples_per_class == 0 {
            return Err(Error::Config("samples_per_class must be positive".into()));
        }
        if !(self.class_concentration > 0.0 && self.class_concentration.is_finite()) {
            return Err(Error::Config(format!(
                "class_concentration must be positive, got {}",
                self.class_concentration
            )));
        }
        Ok(())
    }
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self::preset(Difficulty::Typical)
    }
}

/// Parses `typical` or `hard,dim=32,seed=7,pool=10,per_class=100,concentration=4`.
impl FromStr for SyntheticConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut cfg = SyntheticConfig::default();
        for (n, part) in s
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .enumerate()
        {
            let Some((key, value)) = part.split_once('=') else {
                if n == 0 {
                    cfg = SyntheticConfig::preset(part.parse()?);
                    continue;
                }
                return Err(Error::Config(format!("expected key=value, got {part:?}")));
            };
            let bad = |e: &dyn fmt::Display| Error::Config(format!("{key}: {e}"));
            match key {
                "dim" => cfg.dim = value.parse().map_err(|e| bad(&e))?,
                "seed" => cfg.rng_seed = value.parse().map_err(|e| bad(&e))?,
                "pool" => cfg.num_classes_pool = value.parse().map_err(|e| bad(&e))?,
                "per_class" => cfg.samples_per_class = value.parse().map_err(|e| bad(&e))?,
                "concentration" => cfg.class_concentration = value.parse().map_err(|e| bad(&e))?,
                "preset" => cfg.class_concentration = value.parse::<Difficulty>()?.concentration(),
                other => return Err(Error::Config(format!("unknown synthetic key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// One mean direction per class, uniform on the sphere; samples are
/// `normalize(mean + noise / concentration)` with standard normal noise.
pub fn generate_synthetic_bank(cfg: &SyntheticConfig) -> Result<EmbeddingBank> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let n = cfg.num_classes_pool * cfg.samples_per_class;
    let mut labels = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n * cfg.dim);
    let scale = 1.0 / cfg.class_concentration;

    for class in 0..cfg.num_classes_pool {
        let mean = unit_gaussian(&mut rng, cfg.dim);
        for _ in 0..cfg.samples_per_class {
            let x: Vec<f64> = mean
                .iter()
                .map(|m| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    m + scale * e
                })
                .collect();
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            features.extend(x.iter().map(|v| (v / norm) as f32));
            labels.push(class as u32);
        }
    }
    EmbeddingBank::new(cfg.dim, cfg.num_classes_pool, labels, features)
}
