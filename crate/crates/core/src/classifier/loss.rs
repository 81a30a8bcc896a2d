use std::f64::consts::PI;

use super::LinearClassifier;
use crate::error::{Error, Result};
use crate::sphere::{check_dims, dot, norm, FeatureVector};

/// Cosines are clamped to `[-1 + COS_CLAMP, 1 - COS_CLAMP]` before `acos`.
pub const COS_CLAMP: f64 = 1e-7;

/// Loss of one sample and its gradient with respect to every weight row.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<Vec<f64>>,
}

/// Additive angular margin cross-entropy on raw weight rows.
///
/// Logits are `scale * cos(theta_j)` for `j != label` and
/// `scale * cos(min(theta_label + margin, pi))` for the label, where
/// `cos(theta_j)` is the clamped cosine between row `j` and `feature`.
pub fn margin_loss(
    weights: &[Vec<f64>],
    feature: &FeatureVector,
    label: usize,
    scale: f64,
    margin: f64,
) -> Result<LossGrad> {
    let n = weights.len();
    if label >= n {
        return Err(Error::LabelOutOfRange { label, classes: n });
    }
    if !feature.is_unit() {
        return Err(Error::NotNormalized {
            norm: feature.norm(),
        });
    }
    let x = feature.values();
    let lo = -1.0 + COS_CLAMP;
    let hi = 1.0 - COS_CLAMP;

    let mut norms = Vec::with_capacity(n);
    let mut raw = Vec::with_capacity(n);
    for w in weights {
        check_dims(x.len(), w.len())?;
        let r = norm(w);
        norms.push(r);
        raw.push(dot(w, x) / r);
    }
    let cos: Vec<f64> = raw.iter().map(|c| c.clamp(lo, hi)).collect();

    let theta = cos[label].acos();
    let shifted = (theta + margin).min(PI);
    let mut logits: Vec<f64> = cos.iter().map(|c| scale * c).collect();
    logits[label] = scale * shifted.cos();
    // d logit_label / d cos_label
    let target_slope = if theta + margin >= PI {
        0.0
    } else {
        scale * shifted.sin() / theta.sin()
    };

    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[label];

    let grad = weights
        .iter()
        .enumerate()
        .map(|(j, w)| {
            let p = exps[j] / sum;
            let dlogit = if j == label { p - 1.0 } else { p };
            let slope = if j == label { target_slope } else { scale };
            let clamped = raw[j] != cos[j];
            let dcos = if clamped { 0.0 } else { dlogit * slope };
            w.iter()
                .zip(x)
                .map(|(&wv, &xv)| dcos * (xv - raw[j] * wv / norms[j]) / norms[j])
                .collect()
        })
        .collect();
    Ok(LossGrad { loss, grad })
}

/// ArcFace loss with the classifier's scale and margin.
pub fn arcface_loss(
    classifier: &LinearClassifier,
    feature: &FeatureVector,
    label: usize,
) -> Result<LossGrad> {
    margin_loss(
        classifier.weights(),
        feature,
        label,
        classifier.scale,
        classifier.margin,
    )
}

/// Softmax cross-entropy on scaled cosine logits.
pub fn softmax_ce_loss(
    classifier: &LinearClassifier,
    feature: &FeatureVector,
    label: usize,
) -> Result<LossGrad> {
    margin_loss(classifier.weights(), feature, label, classifier.scale, 0.0)
}
