use super::loss::{style_diversity_loss, FeatureTally, LossBreakdown, PromptObjective};
use super::{init_style_vectors, LearningMode, StyleBank, StyleLog, TrainConfig};
use crate::container::to_f32_grid;
use crate::encoder::TextEncoder;
use crate::error::{Error, Result};
use crate::optim::SgdMomentum;
use crate::sphere::{dot, FeatureVector};

fn check_finite(loss: &LossBreakdown, grad: &[f64], style: usize, iteration: usize) -> Result<()> {
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss { style, iteration });
    }
    Ok(())
}

fn commit(values: &[f64]) -> FeatureVector {
    FeatureVector::new(values.iter().map(|&v| to_f32_grid(v)).collect())
}

/// Dispatches on `config.mode`.
pub fn learn<S: AsRef<str>>(
    encoder: &TextEncoder,
    class_names: &[S],
    config: &TrainConfig,
) -> Result<StyleBank> {
    learn_with_tally(encoder, class_names, config, &FeatureTally::new())
}

/// Like [`learn`], recording how many style-content features are alive at
/// once in `tally`.
pub fn learn_with_tally<S: AsRef<str>>(
    encoder: &TextEncoder,
    class_names: &[S],
    config: &TrainConfig,
    tally: &FeatureTally,
) -> Result<StyleBank> {
    config.validate()?;
    let objective = PromptObjective::new(encoder, class_names, config.losses)?;
    match config.mode {
        LearningMode::Sequential => sequential(&objective, config, tally),
        LearningMode::Parallel => parallel(&objective, config, tally),
    }
}

/// Learns the `K` style vectors one after another. Style `i` is optimized for
/// `L` iterations against the frozen style features of styles `0..i`; its
/// committed vector is never touched again.
pub fn learn_styles<S: AsRef<str>>(
    encoder: &TextEncoder,
    class_names: &[S],
    config: &TrainConfig,
) -> Result<StyleBank> {
    if config.mode != LearningMode::Sequential {
        return Err(Error::config(
            "mode",
            "sequential learning requires mode = sequential",
        ));
    }
    learn(encoder, class_names, config)
}

/// Learns all `K` style vectors jointly.
pub fn learn_styles_parallel<S: AsRef<str>>(
    encoder: &TextEncoder,
    class_names: &[S],
    config: &TrainConfig,
) -> Result<StyleBank> {
    if config.mode != LearningMode::Parallel {
        return Err(Error::config(
            "mode",
            "parallel learning requires mode = parallel",
        ));
    }
    learn(encoder, class_names, config)
}

fn sequential(
    objective: &PromptObjective,
    config: &TrainConfig,
    tally: &FeatureTally,
) -> Result<StyleBank> {
    let dim = objective.encoder().word_dim();
    let init = init_style_vectors(config, dim)?;
    let mut vectors: Vec<FeatureVector> = Vec::with_capacity(config.num_styles);
    let mut log = Vec::with_capacity(config.num_styles);
    // Style features of already committed vectors; constant during a stage.
    let mut previous: Vec<FeatureVector> = Vec::with_capacity(config.num_styles);

    for (i, start) in init.into_iter().enumerate() {
        let mut s = start.into_values();
        let mut opt = SgdMomentum::new(config.learning_rate, config.momentum, dim);
        for it in 0..config.iterations {
            let current = FeatureVector::new(s.clone());
            let (loss, grad) = objective.loss_and_grad(&current, &previous, Some(tally))?;
            check_finite(&loss, &grad, i, it)?;
            opt.step(&mut s, &grad);
        }
        let committed = commit(&s);
        let final_loss = objective.loss(&committed, &previous)?;
        check_finite(&final_loss, &[], i, config.iterations)?;
        log.push(StyleLog {
            style_loss: final_loss.style_loss,
            content_loss: final_loss.content_loss,
            iterations: config.iterations,
        });
        previous.push(objective.style_feature(&committed)?);
        vectors.push(committed);
    }

    Ok(StyleBank {
        vectors,
        log,
        seed: config.seed,
        config_digest: config.digest(),
    })
}

/// Symmetrized style term: for each style, the mean absolute cosine to every
/// other current style feature. Returns per-style losses and the gradient of
/// their sum with respect to each unit feature.
fn pairwise_style_term(units: &[FeatureVector]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let k = units.len();
    let c = units.first().map_or(0, FeatureVector::dim);
    let mut losses = vec![0.0; k];
    let mut grads = vec![vec![0.0; c]; k];
    if k < 2 {
        return (losses, grads);
    }
    let w = 1.0 / (k - 1) as f64;
    for i in 0..k {
        for j in (i + 1)..k {
            let cos = dot(units[i].values(), units[j].values());
            losses[i] += w * cos.abs();
            losses[j] += w * cos.abs();
            let s = if cos > 0.0 {
                1.0
            } else if cos < 0.0 {
                -1.0
            } else {
                0.0
            };
            // The pair appears in both style i's and style j's term.
            for t in 0..c {
                grads[i][t] += 2.0 * w * s * units[j].values()[t];
                grads[j][t] += 2.0 * w * s * units[i].values()[t];
            }
        }
    }
    (losses, grads)
}

fn parallel(
    objective: &PromptObjective,
    config: &TrainConfig,
    tally: &FeatureTally,
) -> Result<StyleBank> {
    let dim = objective.encoder().word_dim();
    let k = config.num_styles;
    let sel = objective.selection();
    let mut styles: Vec<Vec<f64>> = init_style_vectors(config, dim)?
        .into_iter()
        .map(FeatureVector::into_values)
        .collect();
    let mut opts: Vec<SgdMomentum> = (0..k)
        .map(|_| SgdMomentum::new(config.learning_rate, config.momentum, dim))
        .collect();

    for it in 0..config.iterations {
        let current: Vec<FeatureVector> = styles
            .iter()
            .map(|s| FeatureVector::new(s.clone()))
            .collect();
        let mut grads = vec![vec![0.0; dim]; k];
        let mut style_losses = vec![0.0; k];
        let mut content_losses = vec![0.0; k];

        if sel.style {
            let tracked = current
                .iter()
                .map(|s| objective.track_style(s))
                .collect::<Result<Vec<_>>>()?;
            let units: Vec<FeatureVector> = tracked.iter().map(|t| t.unit.clone()).collect();
            let (losses, du) = pairwise_style_term(&units);
            style_losses = losses;
            for (i, t) in tracked.iter().enumerate() {
                grads[i] = t.pullback(&du[i])?;
            }
        }
        if sel.content {
            // The joint objective keeps all K * N style-content graphs alive
            // until the backward pass.
            let tracked = current
                .iter()
                .map(|s| objective.track_style_content(s, Some(tally)))
                .collect::<Result<Vec<_>>>()?;
            for (i, per_style) in tracked.iter().enumerate() {
                let (loss, g) = objective.content_term(per_style)?;
                content_losses[i] = loss;
                for (a, b) in grads[i].iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        for i in 0..k {
            let loss = LossBreakdown::new(style_losses[i], content_losses[i]);
            check_finite(&loss, &grads[i], i, it)?;
            opts[i].step(&mut styles[i], &grads[i]);
        }
    }

    let vectors: Vec<FeatureVector> = styles.iter().map(|s| commit(s)).collect();
    let features = vectors
        .iter()
        .map(|v| objective.style_feature(v))
        .collect::<Result<Vec<_>>>()?;
    let mut log = Vec::with_capacity(k);
    for (i, v) in vectors.iter().enumerate() {
        let style_loss = if sel.style {
            let others: Vec<FeatureVector> = features
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, f)| f.clone())
                .collect();
            style_diversity_loss(&features[i], &others)?
        } else {
            0.0
        };
        let content_loss = objective.loss(v, &[])?.content_loss;
        let loss = LossBreakdown::new(style_loss, content_loss);
        check_finite(&loss, &[], i, config.iterations)?;
        log.push(StyleLog {
            style_loss,
            content_loss,
            iterations: config.iterations,
        });
    }

    Ok(StyleBank {
        vectors,
        log,
        seed: config.seed,
        config_digest: config.digest(),
    })
}
