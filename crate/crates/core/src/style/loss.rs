//! Style diversity and content consistency losses, and their gradients with
//! respect to a style word vector.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::encoder::{PromptSpec, Tape, TextEncoder};
use crate::error::{Error, Result};
use crate::sphere::{self, dot, l2_normalize, FeatureVector};

/// `N x N` cosine scores, row `m` for the style-content prompt of class `m`.
pub type SimilarityMatrix = Vec<Vec<f64>>;

/// Which terms of the prompt loss are active. A disabled term contributes
/// zero loss and zero gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSelection {
    pub style: bool,
    pub content: bool,
}

impl Default for LossSelection {
    fn default() -> Self {
        Self {
            style: true,
            content: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub style_loss: f64,
    pub content_loss: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(style_loss: f64, content_loss: f64) -> Self {
        Self {
            style_loss,
            content_loss,
            total: style_loss + content_loss,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.style_loss.is_finite() && self.content_loss.is_finite() && self.total.is_finite()
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute cosine between the current style feature and each previous
/// one. Zero when there are no previous features.
pub fn style_diversity_loss(current: &FeatureVector, previous: &[FeatureVector]) -> Result<f64> {
    sphere::require_unit(current)?;
    if previous.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for p in previous {
        sphere::require_unit(p)?;
        sum += current.dot(p)?.abs();
    }
    Ok(sum / previous.len() as f64)
}

/// Gradient of [`style_diversity_loss`] with respect to the (unit) current
/// feature, treating the previous features as constants.
fn style_diversity_grad(current: &[f64], previous: &[FeatureVector]) -> Vec<f64> {
    let mut g = vec![0.0; current.len()];
    if previous.is_empty() {
        return g;
    }
    let w = 1.0 / previous.len() as f64;
    for p in previous {
        let s = sign(dot(current, p.values())) * w;
        for (gi, pi) in g.iter_mut().zip(p.values()) {
            *gi += s * pi;
        }
    }
    g
}

/// Mean softmax cross-entropy of each row against its diagonal entry,
/// computed with max subtraction.
pub fn content_consistency_loss(z: &[Vec<f64>]) -> f64 {
    let n = z.len();
    if n == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for (m, row) in z.iter().enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[m];
    }
    total / n as f64
}

/// `d loss / d z[m][n] = (softmax(z[m])[n] - [m == n]) / N`.
pub fn content_consistency_grad(z: &[Vec<f64>]) -> SimilarityMatrix {
    let n = z.len();
    z.iter()
        .enumerate()
        .map(|(m, row)| {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter()
                .enumerate()
                .map(|(k, ek)| (ek / s - if k == m { 1.0 } else { 0.0 }) / n as f64)
                .collect()
        })
        .collect()
}

/// Gradient through `u = f / |f|`: maps `dL/du` to `dL/df`.
pub(crate) fn normalize_pullback(unit: &[f64], raw_norm: f64, du: &[f64]) -> Vec<f64> {
    let proj = dot(unit, du);
    du.iter()
        .zip(unit)
        .map(|(g, u)| (g - proj * u) / raw_norm)
        .collect()
}

/// Counts style-content features whose tapes are alive at the same time.
#[derive(Debug, Default)]
pub struct FeatureTally {
    live: Cell<usize>,
    peak: Cell<usize>,
}

impl FeatureTally {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn acquire(&self) -> FeatureGuard<'_> {
        let live = self.live.get() + 1;
        self.live.set(live);
        if live > self.peak.get() {
            self.peak.set(live);
        }
        FeatureGuard(self)
    }

    pub fn live(&self) -> usize {
        self.live.get()
    }

    pub fn peak(&self) -> usize {
        self.peak.get()
    }
}

/// Held for as long as a style-content feature (and its tape) is alive.
pub struct FeatureGuard<'a>(&'a FeatureTally);

impl Drop for FeatureGuard<'_> {
    fn drop(&mut self) {
        self.0.live.set(self.0.live.get() - 1);
    }
}

/// A differentiable encoder output: unit feature, raw norm and tape.
pub(crate) struct TrackedFeature<'e, 't> {
    pub unit: FeatureVector,
    pub norm: f64,
    pub tape: Tape<'e>,
    _guard: Option<FeatureGuard<'t>>,
}

impl TrackedFeature<'_, '_> {
    /// Pulls `dL/du` back to the style word vector.
    pub fn pullback(&self, du: &[f64]) -> Result<Vec<f64>> {
        let df = normalize_pullback(self.unit.values(), self.norm, du);
        self.tape.pullback(&df)
    }
}

/// Everything the prompt loss needs that does not depend on the style vector
/// being learned: the encoder, the class subset and their cached content
/// features.
pub struct PromptObjective<'e> {
    encoder: &'e TextEncoder,
    classes: Vec<usize>,
    content: Vec<FeatureVector>,
    selection: LossSelection,
}

impl<'e> PromptObjective<'e> {
    pub fn new<S: AsRef<str>>(
        encoder: &'e TextEncoder,
        class_names: &[S],
        selection: LossSelection,
    ) -> Result<Self> {
        if class_names.is_empty() {
            return Err(Error::UnknownClass("empty class list".into()));
        }
        let classes = class_names
            .iter()
            .map(|c| encoder.vocab.class_index(c.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let content = classes
            .iter()
            .map(|&m| l2_normalize(&encoder.encode_prompt(&PromptSpec::content(m), None)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            encoder,
            classes,
            content,
            selection,
        })
    }

    pub fn encoder(&self) -> &'e TextEncoder {
        self.encoder
    }

    pub fn selection(&self) -> LossSelection {
        self.selection
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Cached unit content features, in class-list order.
    pub fn content_features(&self) -> &[FeatureVector] {
        &self.content
    }

    pub fn style_feature(&self, style: &FeatureVector) -> Result<FeatureVector> {
        l2_normalize(
            &self
                .encoder
                .encode_prompt(&PromptSpec::style(0), Some(style))?,
        )
    }

    pub(crate) fn track<'t>(
        &self,
        spec: PromptSpec,
        style: &FeatureVector,
        tally: Option<&'t FeatureTally>,
    ) -> Result<TrackedFeature<'e, 't>> {
        let (raw, tape) = self.encoder.encode_prompt_with_grad(&spec, style)?;
        let norm = raw.norm();
        let unit = l2_normalize(&raw)?;
        Ok(TrackedFeature {
            unit,
            norm,
            tape,
            _guard: tally.map(FeatureTally::acquire),
        })
    }

    pub(crate) fn track_style<'t>(&self, style: &FeatureVector) -> Result<TrackedFeature<'e, 't>> {
        self.track(PromptSpec::style(0), style, None)
    }

    /// Style-content features for every class, all alive at once.
    pub(crate) fn track_style_content<'t>(
        &self,
        style: &FeatureVector,
        tally: Option<&'t FeatureTally>,
    ) -> Result<Vec<TrackedFeature<'e, 't>>> {
        self.classes
            .iter()
            .map(|&m| self.track(PromptSpec::style_content(0, m), style, tally))
            .collect()
    }

    fn similarity_from(&self, rows: &[FeatureVector]) -> SimilarityMatrix {
        rows.iter()
            .map(|u| {
                self.content
                    .iter()
                    .map(|c| dot(u.values(), c.values()).clamp(-1.0, 1.0))
                    .collect()
            })
            .collect()
    }

    /// `z[m][n]` = cosine between the style-content feature of class `m` and
    /// the content feature of class `n`.
    pub fn similarity_matrix(&self, style: &FeatureVector) -> Result<SimilarityMatrix> {
        let rows = self
            .classes
            .iter()
            .map(|&m| {
                l2_normalize(
                    &self
                        .encoder
                        .encode_prompt(&PromptSpec::style_content(0, m), Some(style))?,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.similarity_from(&rows))
    }

    /// Content loss and its gradient on the style vector, given already
    /// tracked style-content features.
    pub(crate) fn content_term(&self, tracked: &[TrackedFeature]) -> Result<(f64, Vec<f64>)> {
        let units: Vec<FeatureVector> = tracked.iter().map(|t| t.unit.clone()).collect();
        let z = self.similarity_from(&units);
        let loss = content_consistency_loss(&z);
        let dz = content_consistency_grad(&z);
        let d = self.encoder.word_dim();
        let mut grad = vec![0.0; d];
        for (t, dz_row) in tracked.iter().zip(&dz) {
            let mut du = vec![0.0; self.encoder.feature_dim()];
            for (w, c) in dz_row.iter().zip(&self.content) {
                for (g, ci) in du.iter_mut().zip(c.values()) {
                    *g += w * ci;
                }
            }
            for (g, v) in grad.iter_mut().zip(t.pullback(&du)?) {
                *g += v;
            }
        }
        Ok((loss, grad))
    }

    /// Total prompt loss for one style vector against frozen previous style
    /// features, with its gradient on the style vector.
    pub fn loss_and_grad(
        &self,
        style: &FeatureVector,
        previous: &[FeatureVector],
        tally: Option<&FeatureTally>,
    ) -> Result<(LossBreakdown, Vec<f64>)> {
        let d = self.encoder.word_dim();
        let mut grad = vec![0.0; d];
        let mut style_loss = 0.0;
        let mut content_loss = 0.0;
        if self.selection.style {
            let sf = self.track_style(style)?;
            style_loss = style_diversity_loss(&sf.unit, previous)?;
            let du = style_diversity_grad(sf.unit.values(), previous);
            grad = sf.pullback(&du)?;
        }
        if self.selection.content {
            let tracked = self.track_style_content(style, tally)?;
            let (loss, g) = self.content_term(&tracked)?;
            content_loss = loss;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        Ok((LossBreakdown::new(style_loss, content_loss), grad))
    }

    /// Loss only, without building tapes.
    pub fn loss(&self, style: &FeatureVector, previous: &[FeatureVector]) -> Result<LossBreakdown> {
        let style_loss = if self.selection.style {
            style_diversity_loss(&self.style_feature(style)?, previous)?
        } else {
            0.0
        };
        let content_loss = if self.selection.content {
            content_consistency_loss(&self.similarity_matrix(style)?)
        } else {
            0.0
        };
        Ok(LossBreakdown::new(style_loss, content_loss))
    }
}

/// Convenience wrapper: builds the objective and evaluates the similarity
/// matrix for one style vector.
pub fn content_similarity_matrix<S: AsRef<str>>(
    encoder: &TextEncoder,
    style: &FeatureVector,
    class_names: &[S],
) -> Result<SimilarityMatrix> {
    PromptObjective::new(encoder, class_names, LossSelection::default())?.similarity_matrix(style)
}

/// Convenience wrapper around [`PromptObjective::loss_and_grad`] with both
/// terms active.
pub fn prompt_loss<S: AsRef<str>>(
    encoder: &TextEncoder,
    style: &FeatureVector,
    previous: &[FeatureVector],
    class_names: &[S],
) -> Result<(LossBreakdown, Vec<f64>)> {
    PromptObjective::new(encoder, class_names, LossSelection::default())?
        .loss_and_grad(style, previous, None)
}
