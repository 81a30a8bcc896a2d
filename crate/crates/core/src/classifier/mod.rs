//! Cosine linear classifier trained on synthesized style-content features.

pub mod io;
mod loss;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::container::to_f32_grid;
use crate::encoder::{PromptSpec, TextEncoder};
use crate::error::{Error, Result};
use crate::optim::SgdMomentum;
use crate::sphere::{dot, l2_normalize, norm, FeatureVector, ZERO_NORM_THRESHOLD};
use crate::style::StyleBank;

pub use loss::{arcface_loss, margin_loss, softmax_ce_loss, LossGrad, COS_CLAMP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[serde(rename = "arcface")]
    ArcFace,
    Softmax,
}

impl LossKind {
    pub(crate) fn code(self) -> u32 {
        match self {
            LossKind::ArcFace => 0,
            LossKind::Softmax => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(LossKind::ArcFace),
            1 => Ok(LossKind::Softmax),
            _ => Err(Error::Format(format!("unknown loss kind {code}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub loss_kind: LossKind,
    pub scale: f64,
    pub margin: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 0.005,
            momentum: 0.9,
            batch_size: 128,
            loss_kind: LossKind::ArcFace,
            scale: 5.0,
            margin: 0.5,
            seed: 0,
        }
    }
}

fn check_head(scale: f64, margin: f64) -> Result<()> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::config("scale", "must be a positive finite number"));
    }
    if !(0.0..std::f64::consts::FRAC_PI_2).contains(&margin) {
        return Err(Error::config("margin", "must lie in [0, pi/2)"));
    }
    Ok(())
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(
                "learning_rate",
                "must be a positive finite number",
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        check_head(self.scale, self.margin)
    }
}

/// Unit-norm features with 0-based class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatureSet {
    features: Vec<FeatureVector>,
    labels: Vec<usize>,
}

impl LabeledFeatureSet {
    pub fn new(features: Vec<FeatureVector>, labels: Vec<usize>) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.len(),
                got: labels.len(),
            });
        }
        let dim = features.first().map_or(0, FeatureVector::dim);
        for f in &features {
            crate::sphere::check_dims(dim, f.dim())?;
            if !f.is_unit() {
                return Err(Error::NotNormalized { norm: f.norm() });
            }
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, FeatureVector::dim)
    }

    /// One more than the largest label.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }

    pub fn features(&self) -> &[FeatureVector] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// `N x C` weight rows scored by cosine similarity. There is no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    weights: Vec<Vec<f64>>,
    pub loss_kind: LossKind,
    pub scale: f64,
    pub margin: f64,
}

impl LinearClassifier {
    pub fn new(
        weights: Vec<Vec<f64>>,
        loss_kind: LossKind,
        scale: f64,
        margin: f64,
    ) -> Result<Self> {
        if weights.is_empty() || weights[0].is_empty() {
            return Err(Error::EmptyDataset);
        }
        let c = weights[0].len();
        for row in &weights {
            crate::sphere::check_dims(c, row.len())?;
            let n = norm(row);
            if !(n > ZERO_NORM_THRESHOLD) {
                return Err(Error::ZeroVector { norm: n });
            }
        }
        check_head(scale, margin)?;
        Ok(Self {
            weights,
            loss_kind,
            scale,
            margin,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.weights[0].len()
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    /// Cosine scores against every class and the argmax. Ties go to the lower
    /// class index.
    pub fn classify(&self, feature: &FeatureVector) -> Result<(Vec<f64>, usize)> {
        crate::sphere::check_dims(self.dim(), feature.dim())?;
        let x = l2_normalize(feature)?;
        let scores: Vec<f64> = self
            .weights
            .iter()
            .map(|w| (dot(w, x.values()) / norm(w)).clamp(-1.0, 1.0))
            .collect();
        let mut best = 0;
        for (j, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = j;
            }
        }
        Ok((scores, best))
    }

    pub fn predict(&self, feature: &FeatureVector) -> Result<usize> {
        Ok(self.classify(feature)?.1)
    }

    /// Fraction of `(feature, label)` pairs classified correctly.
    pub fn accuracy<'a, I>(&self, samples: I) -> Result<f64>
    where
        I: IntoIterator<Item = (&'a FeatureVector, usize)>,
    {
        let (mut hit, mut total) = (0usize, 0usize);
        for (x, label) in samples {
            total += 1;
            if self.predict(x)? == label {
                hit += 1;
            }
        }
        if total == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(hit as f64 / total as f64)
    }
}

/// `K * N` unit style-content features, style-major: entry `i * N + m` is the
/// feature of style `i` and class `m` with label `m`.
pub fn synthesize_training_set<S: AsRef<str>>(
    encoder: &TextEncoder,
    bank: &StyleBank,
    class_names: &[S],
) -> Result<LabeledFeatureSet> {
    if bank.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = class_names
        .iter()
        .map(|c| encoder.vocab.class_index(c.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let mut features = Vec::with_capacity(bank.len() * classes.len());
    let mut labels = Vec::with_capacity(features.capacity());
    for s in &bank.vectors {
        for (label, &m) in classes.iter().enumerate() {
            let raw = encoder.encode_prompt(&PromptSpec::style_content(0, m), Some(s))?;
            features.push(l2_normalize(&raw)?);
            labels.push(label);
        }
    }
    LabeledFeatureSet::new(features, labels)
}

/// Rows are the unit content features of `class_names`, in order.
pub fn zero_shot_classifier<S: AsRef<str>>(
    encoder: &TextEncoder,
    class_names: &[S],
) -> Result<LinearClassifier> {
    if class_names.is_empty() {
        return Err(Error::UnknownClass("empty class list".into()));
    }
    let rows = class_names
        .iter()
        .map(|c| {
            let m = encoder.vocab.class_index(c.as_ref())?;
            let f = l2_normalize(&encoder.encode_prompt(&PromptSpec::content(m), None)?)?;
            Ok(f.into_values())
        })
        .collect::<Result<Vec<_>>>()?;
    LinearClassifier::new(rows, LossKind::Softmax, 1.0, 0.0)
}

/// Mini-batch SGD with momentum over seeded per-epoch shuffles. The last
/// partial batch is kept. Final weights are rounded to the `f32` grid.
pub fn train_classifier(
    dataset: &LabeledFeatureSet,
    config: &ClassifierConfig,
) -> Result<LinearClassifier> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = dataset.num_classes();
    let c = dataset.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = Normal::new(0.0, 0.02).expect("valid normal");
    let mut flat: Vec<f64> = (0..n * c)
        .map(|_| init.sample(&mut rng) as f32 as f64)
        .collect();
    let margin = match config.loss_kind {
        LossKind::ArcFace => config.margin,
        LossKind::Softmax => 0.0,
    };
    let mut opt = SgdMomentum::new(config.learning_rate, config.momentum, n * c);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let rows: Vec<Vec<f64>> = flat.chunks(c).map(<[f64]>::to_vec).collect();
            let mut grad = vec![0.0; n * c];
            let mut total = 0.0;
            for &k in batch {
                let r = margin_loss(
                    &rows,
                    &dataset.features[k],
                    dataset.labels[k],
                    config.scale,
                    margin,
                )?;
                total += r.loss;
                for (g, d) in grad.iter_mut().zip(r.grad.iter().flatten()) {
                    *g += d;
                }
            }
            let inv = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteTraining { epoch });
            }
            opt.step(&mut flat, &grad);
        }
    }
    let weights = flat
        .chunks(c)
        .map(|r| r.iter().map(|&v| to_f32_grid(v)).collect())
        .collect();
    LinearClassifier::new(weights, config.loss_kind, config.scale, config.margin)
}
