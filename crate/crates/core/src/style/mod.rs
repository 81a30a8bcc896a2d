//! Learning style word vectors.
//!
//! Each style vector fills the placeholder slot of "a <S> style of a" and
//! "a <S> style of a [class]". Vectors are learned so that their style
//! features are mutually orthogonal on the sphere while every style-content
//! feature stays closest to the content feature of its own class.

pub mod io;
mod learn;
pub mod loss;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sphere::FeatureVector;

pub use learn::{learn, learn_styles, learn_styles_parallel, learn_with_tally};
pub use loss::{
    content_consistency_loss, content_similarity_matrix, prompt_loss, style_diversity_loss,
    FeatureTally, LossBreakdown, LossSelection, PromptObjective, SimilarityMatrix,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitDistribution {
    Normal { mean: f64, std: f64 },
    Uniform { low: f64, high: f64 },
}

impl Default for InitDistribution {
    fn default() -> Self {
        InitDistribution::Normal {
            mean: 0.0,
            std: 0.02,
        }
    }
}

impl InitDistribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            InitDistribution::Normal { mean, std } => {
                if !mean.is_finite() || !(std.is_finite() && std > 0.0) {
                    return Err(Error::BadDistribution(format!(
                        "normal(mean={mean}, std={std})"
                    )));
                }
            }
            InitDistribution::Uniform { low, high } => {
                if !(low.is_finite() && high.is_finite() && low < high) {
                    return Err(Error::BadDistribution(format!(
                        "uniform(low={low}, high={high})"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningMode {
    #[default]
    Sequential,
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub num_styles: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub init: InitDistribution,
    #[serde(default)]
    pub seed: u64,
    pub mode: LearningMode,
    #[serde(default)]
    pub losses: LossSelection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_styles: 80,
            iterations: 100,
            learning_rate: 0.002,
            momentum: 0.9,
            init: InitDistribution::default(),
            seed: 0,
            mode: LearningMode::Sequential,
            losses: LossSelection::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::config(field, reason));
        if self.num_styles == 0 {
            return bad("num_styles", "must be positive");
        }
        if self.iterations == 0 {
            return bad("iterations", "must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate", "must be a positive finite number");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must lie in [0, 1)");
        }
        self.init.validate()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(json).into()
    }
}

/// Draws `K` word vectors of width `dim`. Values are rounded to the `f32`
/// grid so that a stored bank reproduces them exactly.
pub fn init_style_vectors(config: &TrainConfig, dim: usize) -> Result<Vec<FeatureVector>> {
    config.init.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut draw: Box<dyn FnMut(&mut ChaCha8Rng) -> f64> = match config.init {
        InitDistribution::Normal { mean, std } => {
            let dist = Normal::new(mean, std).map_err(|e| Error::BadDistribution(e.to_string()))?;
            Box::new(move |r| dist.sample(r) as f32 as f64)
        }
        InitDistribution::Uniform { low, high } => {
            let dist =
                Uniform::new(low, high).map_err(|e| Error::BadDistribution(e.to_string()))?;
            Box::new(move |r| {
                let mut v = dist.sample(r) as f32;
                // Keep the half-open interval after rounding.
                if v as f64 >= high {
                    v = v.next_down();
                }
                if (v as f64) < low {
                    v = v.next_up();
                }
                v as f64
            })
        }
    };
    Ok((0..config.num_styles)
        .map(|_| FeatureVector::new((0..dim).map(|_| draw(&mut rng)).collect()))
        .collect())
}

/// Final metrics of one learned style.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StyleLog {
    pub style_loss: f64,
    pub content_loss: f64,
    pub iterations: usize,
}

/// Learned style word vectors in learning order.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleBank {
    pub vectors: Vec<FeatureVector>,
    pub log: Vec<StyleLog>,
    pub seed: u64,
    pub config_digest: [u8; 32],
}

impl StyleBank {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, FeatureVector::dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(v: &[FeatureVector]) -> (f64, f64, usize) {
        let all: Vec<f64> = v.iter().flat_map(|x| x.values().to_vec()).collect();
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt(), all.len())
    }

    #[test]
    fn default_normal_init_statistics() {
        let cfg = TrainConfig {
            seed: 1234,
            ..TrainConfig::default()
        };
        let v = init_style_vectors(&cfg, 512).unwrap();
        assert_eq!(v.len(), 80);
        let (mean, std, n) = stats(&v);
        assert_eq!(n, 80 * 512);
        assert!(mean.abs() <= 0.002, "mean {mean}");
        assert!((std - 0.02).abs() <= 0.002, "std {std}");
    }

    #[test]
    fn alternative_distributions() {
        for (dist, mean_target, std_target) in [
            (
                InitDistribution::Normal {
                    mean: 0.0,
                    std: 0.2,
                },
                0.0,
                0.2,
            ),
            (
                InitDistribution::Normal {
                    mean: 0.2,
                    std: 0.02,
                },
                0.2,
                0.02,
            ),
        ] {
            let cfg = TrainConfig {
                init: dist,
                seed: 9,
                ..TrainConfig::default()
            };
            let (mean, std, _) = stats(&init_style_vectors(&cfg, 512).unwrap());
            assert!((mean - mean_target).abs() < 0.1 * std_target + 1e-3);
            assert!((std - std_target).abs() < 0.1 * std_target);
        }
        let cfg = TrainConfig {
            init: InitDistribution::Uniform {
                low: 0.0,
                high: 0.2,
            },
            seed: 5,
            ..TrainConfig::default()
        };
        let v = init_style_vectors(&cfg, 512).unwrap();
        assert!(v
            .iter()
            .flat_map(|x| x.values())
            .all(|&x| (0.0..0.2).contains(&x)));
    }

    #[test]
    fn init_is_deterministic_and_on_f32_grid() {
        let cfg = TrainConfig {
            num_styles: 4,
            seed: 77,
            ..TrainConfig::default()
        };
        let a = init_style_vectors(&cfg, 16).unwrap();
        let b = init_style_vectors(&cfg, 16).unwrap();
        assert_eq!(a, b);
        assert!(a
            .iter()
            .flat_map(|x| x.values())
            .all(|&x| x == x as f32 as f64));
    }

    #[test]
    fn bad_distributions() {
        for dist in [
            InitDistribution::Normal {
                mean: 0.0,
                std: 0.0,
            },
            InitDistribution::Normal {
                mean: f64::NAN,
                std: 1.0,
            },
            InitDistribution::Uniform {
                low: 0.2,
                high: 0.2,
            },
        ] {
            let cfg = TrainConfig {
                init: dist,
                ..TrainConfig::default()
            };
            assert!(matches!(
                init_style_vectors(&cfg, 4),
                Err(Error::BadDistribution(_))
            ));
        }
    }

    #[test]
    fn defaults_match_published_settings() {
        let c = TrainConfig::default();
        assert_eq!((c.num_styles, c.iterations), (80, 100));
        assert_eq!((c.learning_rate, c.momentum), (0.002, 0.9));
        assert_eq!(
            c.init,
            InitDistribution::Normal {
                mean: 0.0,
                std: 0.02
            }
        );
        assert_eq!(c.mode, LearningMode::Sequential);
    }
}
