//! Synthetic image-side features.
//!
//! Each class anchor is the unit content feature of its class. A sample is the
//! anchor pushed along one of a few unseen style directions, shifted by a
//! shared modality-gap direction, perturbed by isotropic noise and projected
//! back onto the sphere.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::classifier::LinearClassifier;
use crate::container::{read_file, write_file};
use crate::encoder::TextEncoder;
use crate::error::{Error, Result};
use crate::sphere::{l2_normalize, FeatureVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub per_class_count: usize,
    pub style_sigma: f64,
    pub gap_magnitude: f64,
    pub noise_sigma: f64,
    pub num_unseen_styles: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            per_class_count: 200,
            style_sigma: 0.6,
            gap_magnitude: 0.4,
            noise_sigma: 0.1,
            num_unseen_styles: 4,
            seed: 0,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("style_sigma", self.style_sigma),
            ("gap_magnitude", self.gap_magnitude),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(field, "must be finite and non-negative"));
            }
        }
        if self.per_class_count == 0 {
            return Err(Error::config("per_class_count", "must be positive"));
        }
        if self.num_unseen_styles == 0 {
            return Err(Error::config("num_unseen_styles", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub feature: FeatureVector,
    pub label: usize,
    pub style_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub anchors: Vec<FeatureVector>,
    pub style_directions: Vec<FeatureVector>,
    pub gap_direction: FeatureVector,
}

impl World {
    pub fn num_classes(&self) -> usize {
        self.anchors.len()
    }

    pub fn dim(&self) -> usize {
        self.gap_direction.dim()
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Result<FeatureVector> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    l2_normalize(&FeatureVector::new(v))
}

pub fn generate_world<S: AsRef<str>>(
    encoder: &TextEncoder,
    class_names: &[S],
    spec: &WorldSpec,
) -> Result<World> {
    spec.validate()?;
    if class_names.is_empty() {
        return Err(Error::UnknownClass("empty class list".into()));
    }
    let anchors = crate::classifier::zero_shot_classifier(encoder, class_names)?
        .weights()
        .iter()
        .map(|w| FeatureVector::unit(w.clone()))
        .collect::<Result<Vec<_>>>()?;
    let dim = encoder.feature_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let style_directions = (0..spec.num_unseen_styles)
        .map(|_| random_unit(&mut rng, dim))
        .collect::<Result<Vec<_>>>()?;
    let gap_direction = random_unit(&mut rng, dim)?;
    Ok(World {
        anchors,
        style_directions,
        gap_direction,
    })
}

/// `per_class_count` samples per class, class-major. Unseen styles are
/// assigned round-robin over the global sample index.
pub fn sample_image_features(
    world: &World,
    spec: &WorldSpec,
    seed: u64,
) -> Result<Vec<ImageSample>> {
    spec.validate()?;
    if spec.num_unseen_styles != world.style_directions.len() {
        return Err(Error::config(
            "num_unseen_styles",
            "does not match the generated world",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = world.dim();
    let mut out = Vec::with_capacity(world.num_classes() * spec.per_class_count);
    for (label, anchor) in world.anchors.iter().enumerate() {
        for k in 0..spec.per_class_count {
            let style_id = (label * spec.per_class_count + k) % spec.num_unseen_styles;
            let d = world.style_directions[style_id].values();
            let g = world.gap_direction.values();
            let v: Vec<f64> = (0..dim)
                .map(|t| {
                    let z: f64 = rng.sample(StandardNormal);
                    anchor.values()[t]
                        + spec.style_sigma * d[t]
                        + spec.gap_magnitude * g[t]
                        + spec.noise_sigma * z
                })
                .collect();
            out.push(ImageSample {
                feature: l2_normalize(&FeatureVector::new(v))?,
                label,
                style_id,
            });
        }
    }
    Ok(out)
}

pub fn accuracy(classifier: &LinearClassifier, samples: &[ImageSample]) -> Result<f64> {
    classifier.accuracy(samples.iter().map(|s| (&s.feature, s.label)))
}

/// Plain-text dump: one sample per line, whitespace separated:
/// `label style_id x_0 ... x_{C-1}`. Values use the shortest decimal form that
/// parses back to the same `f64`. Lines starting with `#` are comments.
pub fn samples_to_text(samples: &[ImageSample]) -> String {
    let mut out = String::from("# label style_id feature...\n");
    for s in samples {
        write!(out, "{} {}", s.label, s.style_id).unwrap();
        for v in s.feature.values() {
            write!(out, " {v:?}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn samples_from_text(text: &str) -> Result<Vec<ImageSample>> {
    let bad = |line: usize, what: &str| Error::Format(format!("samples line {line}: {what}"));
    let mut out = Vec::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let mut int = |name: &str| -> Result<usize> {
            fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| bad(i + 1, name))
        };
        let label = int("label")?;
        let style_id = int("style id")?;
        let values = fields
            .map(|f| f.parse::<f64>().map_err(|_| bad(i + 1, "feature value")))
            .collect::<Result<Vec<_>>>()?;
        if *dim.get_or_insert(values.len()) != values.len() || values.is_empty() {
            return Err(bad(i + 1, "inconsistent feature width"));
        }
        out.push(ImageSample {
            feature: FeatureVector::unit(values)?,
            label,
            style_id,
        });
    }
    Ok(out)
}

pub fn save_samples(samples: &[ImageSample], path: &Path) -> Result<()> {
    write_file(path, samples_to_text(samples).as_bytes())
}

pub fn load_samples(path: &Path) -> Result<Vec<ImageSample>> {
    let bytes = read_file(path)?;
    let text =
        String::from_utf8(bytes).map_err(|_| Error::Format("samples are not UTF-8".into()))?;
    samples_from_text(&text)
}
