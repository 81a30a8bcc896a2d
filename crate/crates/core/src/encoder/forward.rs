//! Forward pass and reverse-mode pullback restricted to the style slot.

use super::{EncoderWeights, Readout, TokenId, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::sphere::FeatureVector;

/// `x (rows x inp) @ w (inp x out) + b`.
fn linear(x: &[f64], rows: usize, w: &[f64], b: &[f64], inp: usize, out: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(rows * out);
    for r in 0..rows {
        y.extend_from_slice(b);
        let yr = &mut y[r * out..(r + 1) * out];
        for (i, &xi) in x[r * inp..(r + 1) * inp].iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (yo, &wio) in yr.iter_mut().zip(&w[i * out..(i + 1) * out]) {
                *yo += xi * wio;
            }
        }
    }
    y
}

/// `dy (rows x out) @ w^T`.
fn linear_back(dy: &[f64], rows: usize, w: &[f64], inp: usize, out: usize) -> Vec<f64> {
    let mut dx = vec![0.0; rows * inp];
    for r in 0..rows {
        let dyr = &dy[r * out..(r + 1) * out];
        for i in 0..inp {
            let wi = &w[i * out..(i + 1) * out];
            dx[r * inp + i] = wi.iter().zip(dyr).map(|(a, b)| a * b).sum();
        }
    }
    dx
}

struct NormCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

fn layer_norm(
    x: &[f64],
    rows: usize,
    d: usize,
    gain: &[f64],
    bias: &[f64],
) -> (Vec<f64>, NormCache) {
    let mut y = vec![0.0; rows * d];
    let mut xhat = vec![0.0; rows * d];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        rstd[r] = rs;
        for i in 0..d {
            let h = (xr[i] - mean) * rs;
            xhat[r * d + i] = h;
            y[r * d + i] = gain[i] * h + bias[i];
        }
    }
    (y, NormCache { xhat, rstd })
}

fn layer_norm_back(dy: &[f64], rows: usize, d: usize, gain: &[f64], cache: &NormCache) -> Vec<f64> {
    let mut dx = vec![0.0; rows * d];
    for r in 0..rows {
        let xhat = &cache.xhat[r * d..(r + 1) * d];
        let dxhat: Vec<f64> = (0..d).map(|i| dy[r * d + i] * gain[i]).collect();
        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dx = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for i in 0..d {
            dx[r * d + i] = cache.rstd[r] * (dxhat[i] - mean_d - xhat[i] * mean_dx);
        }
    }
    dx
}

const GELU_ALPHA: f64 = 1.702;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x * sigmoid(1.702 x)`, the fast GELU variant used by CLIP's text tower.
fn quick_gelu(x: f64) -> f64 {
    x * sigmoid(GELU_ALPHA * x)
}

fn quick_gelu_grad(x: f64) -> f64 {
    let s = sigmoid(GELU_ALPHA * x);
    s + GELU_ALPHA * x * s * (1.0 - s)
}

struct BlockCache {
    norm1: NormCache,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `heads x T x T`, zero above the diagonal.
    probs: Vec<f64>,
    norm2: NormCache,
    pre_act: Vec<f64>,
}

/// Intermediate values of one forward pass, retained so the output can be
/// pulled back to the style slot.
pub struct Tape<'w> {
    weights: &'w EncoderWeights,
    len: usize,
    slot: usize,
    blocks: Vec<BlockCache>,
    final_norm: Option<NormCache>,
}

struct Forward<'w> {
    output: Vec<f64>,
    tape: Tape<'w>,
}

fn validate(
    weights: &EncoderWeights,
    tokens: &[TokenId],
    placeholder: TokenId,
    style: Option<&FeatureVector>,
) -> Result<Option<usize>> {
    let arch = &weights.arch;
    if tokens.is_empty() {
        return Err(Error::SequenceTooLong {
            len: 0,
            max: arch.max_len,
        });
    }
    if tokens.len() > arch.max_len {
        return Err(Error::SequenceTooLong {
            len: tokens.len(),
            max: arch.max_len,
        });
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= weights.vocab_size) {
        return Err(Error::UnknownToken(bad));
    }
    let slots: Vec<usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, &t)| t == placeholder)
        .map(|(i, _)| i)
        .collect();
    match (slots.as_slice(), style) {
        ([], None) => Ok(None),
        ([], Some(_)) => Err(Error::UnexpectedStyleVector),
        ([_], None) => Err(Error::MissingStyleVector),
        ([slot], Some(s)) => {
            crate::sphere::check_dims(arch.model_dim, s.dim())?;
            Ok(Some(*slot))
        }
        _ => Err(Error::MissingStyleSlot),
    }
}

fn run<'w>(
    weights: &'w EncoderWeights,
    tokens: &[TokenId],
    slot: Option<usize>,
    style: Option<&FeatureVector>,
) -> Forward<'w> {
    let arch = &weights.arch;
    let d = arch.model_dim;
    let f = arch.mlp_dim();
    let heads = arch.heads;
    let hd = arch.head_dim();
    let t_len = tokens.len();
    let scale = 1.0 / (hd as f64).sqrt();

    let mut x = vec![0.0; t_len * d];
    for (t, &tok) in tokens.iter().enumerate() {
        let row = match (slot, style) {
            (Some(s), Some(v)) if s == t => v.values(),
            _ => weights.embedding_row(tok),
        };
        let pos = &weights.positional[t * d..(t + 1) * d];
        for i in 0..d {
            x[t * d + i] = row[i] + pos[i];
        }
    }

    let mut caches = Vec::with_capacity(weights.blocks.len());
    for b in &weights.blocks {
        let (h1, norm1) = layer_norm(&x, t_len, d, &b.ln1_gain, &b.ln1_bias);
        let q = linear(&h1, t_len, &b.wq, &b.bq, d, d);
        let k = linear(&h1, t_len, &b.wk, &b.bk, d, d);
        let v = linear(&h1, t_len, &b.wv, &b.bv, d, d);
        let mut probs = vec![0.0; heads * t_len * t_len];
        let mut attn = vec![0.0; t_len * d];
        for h in 0..heads {
            let off = h * hd;
            for t in 0..t_len {
                let qt = &q[t * d + off..t * d + off + hd];
                let p = &mut probs[(h * t_len + t) * t_len..(h * t_len + t + 1) * t_len];
                let mut max = f64::NEG_INFINITY;
                for u in 0..=t {
                    let ku = &k[u * d + off..u * d + off + hd];
                    let s = scale * qt.iter().zip(ku).map(|(a, b)| a * b).sum::<f64>();
                    p[u] = s;
                    max = max.max(s);
                }
                let mut z = 0.0;
                for pu in p.iter_mut().take(t + 1) {
                    *pu = (*pu - max).exp();
                    z += *pu;
                }
                for pu in p.iter_mut().take(t + 1) {
                    *pu /= z;
                }
                for u in 0..=t {
                    let w = p[u];
                    for j in 0..hd {
                        attn[t * d + off + j] += w * v[u * d + off + j];
                    }
                }
            }
        }
        let o = linear(&attn, t_len, &b.wo, &b.bo, d, d);
        for (xi, oi) in x.iter_mut().zip(&o) {
            *xi += oi;
        }
        let (h2, norm2) = layer_norm(&x, t_len, d, &b.ln2_gain, &b.ln2_bias);
        let pre_act = linear(&h2, t_len, &b.w1, &b.b1, d, f);
        let act: Vec<f64> = pre_act.iter().map(|&u| quick_gelu(u)).collect();
        let m = linear(&act, t_len, &b.w2, &b.b2, f, d);
        for (xi, mi) in x.iter_mut().zip(&m) {
            *xi += mi;
        }
        caches.push(BlockCache {
            norm1,
            q,
            k,
            v,
            probs,
            norm2,
            pre_act,
        });
    }

    let c = arch.output_dim;
    let (output, final_norm) = match arch.readout {
        Readout::EosNorm => {
            let last = &x[(t_len - 1) * d..];
            let (y, cache) = layer_norm(last, 1, d, &weights.final_gain, &weights.final_bias);
            (
                linear(&y, 1, &weights.projection, &vec![0.0; c], d, c),
                Some(cache),
            )
        }
        Readout::SumLinear => {
            let mut pooled = vec![0.0; d];
            for t in 0..t_len {
                for i in 0..d {
                    pooled[i] += x[t * d + i];
                }
            }
            (
                linear(&pooled, 1, &weights.projection, &vec![0.0; c], d, c),
                None,
            )
        }
    };

    Forward {
        output,
        tape: Tape {
            weights,
            len: t_len,
            slot: slot.unwrap_or(usize::MAX),
            blocks: caches,
            final_norm,
        },
    }
}

/// Encodes a token sequence into an unnormalized feature of width `C`.
///
/// The placeholder position reads `style` instead of its table row; every
/// other position reads its table row. Both add the positional embedding.
pub fn encode(
    weights: &EncoderWeights,
    tokens: &[TokenId],
    placeholder: TokenId,
    style: Option<&FeatureVector>,
) -> Result<FeatureVector> {
    let slot = validate(weights, tokens, placeholder, style)?;
    Ok(FeatureVector::new(run(weights, tokens, slot, style).output))
}

/// Like [`encode`], additionally returning a tape whose
/// [`pullback`](Tape::pullback) maps a gradient on the output feature to the
/// gradient on the style vector.
pub fn encode_with_grad<'w>(
    weights: &'w EncoderWeights,
    tokens: &[TokenId],
    placeholder: TokenId,
    style: &FeatureVector,
) -> Result<(FeatureVector, Tape<'w>)> {
    if !tokens.contains(&placeholder) {
        return Err(Error::MissingStyleSlot);
    }
    let slot = validate(weights, tokens, placeholder, Some(style))?;
    let fwd = run(weights, tokens, slot, Some(style));
    Ok((FeatureVector::new(fwd.output), fwd.tape))
}

impl Tape<'_> {
    pub fn slot(&self) -> usize {
        self.slot
    }

    /// Transpose-Jacobian product: `d feature -> d style_vector`.
    pub fn pullback(&self, upstream: &[f64]) -> Result<Vec<f64>> {
        let w = self.weights;
        let arch = &w.arch;
        let d = arch.model_dim;
        let c = arch.output_dim;
        let f = arch.mlp_dim();
        let heads = arch.heads;
        let hd = arch.head_dim();
        let t_len = self.len;
        let scale = 1.0 / (hd as f64).sqrt();
        crate::sphere::check_dims(c, upstream.len())?;

        let dpooled = linear_back(upstream, 1, &w.projection, d, c);
        let mut dx = vec![0.0; t_len * d];
        match (arch.readout, &self.final_norm) {
            (Readout::EosNorm, Some(cache)) => {
                let dlast = layer_norm_back(&dpooled, 1, d, &w.final_gain, cache);
                dx[(t_len - 1) * d..].copy_from_slice(&dlast);
            }
            _ => {
                for t in 0..t_len {
                    dx[t * d..(t + 1) * d].copy_from_slice(&dpooled);
                }
            }
        }

        for (b, cache) in w.blocks.iter().zip(&self.blocks).rev() {
            // MLP branch.
            let dact = linear_back(&dx, t_len, &b.w2, f, d);
            let dpre: Vec<f64> = dact
                .iter()
                .zip(&cache.pre_act)
                .map(|(g, &u)| g * quick_gelu_grad(u))
                .collect();
            let dh2 = linear_back(&dpre, t_len, &b.w1, d, f);
            let dn2 = layer_norm_back(&dh2, t_len, d, &b.ln2_gain, &cache.norm2);
            for (a, g) in dx.iter_mut().zip(&dn2) {
                *a += g;
            }

            // Attention branch.
            let dattn = linear_back(&dx, t_len, &b.wo, d, d);
            let mut dq = vec![0.0; t_len * d];
            let mut dk = vec![0.0; t_len * d];
            let mut dv = vec![0.0; t_len * d];
            for h in 0..heads {
                let off = h * hd;
                for t in 0..t_len {
                    let p = &cache.probs[(h * t_len + t) * t_len..(h * t_len + t + 1) * t_len];
                    let da = &dattn[t * d + off..t * d + off + hd];
                    let mut dp = vec![0.0; t + 1];
                    for u in 0..=t {
                        let vu = &cache.v[u * d + off..u * d + off + hd];
                        dp[u] = da.iter().zip(vu).map(|(a, b)| a * b).sum();
                        for j in 0..hd {
                            dv[u * d + off + j] += p[u] * da[j];
                        }
                    }
                    let inner: f64 = (0..=t).map(|u| p[u] * dp[u]).sum();
                    for u in 0..=t {
                        let ds = p[u] * (dp[u] - inner) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        for j in 0..hd {
                            dq[t * d + off + j] += ds * cache.k[u * d + off + j];
                            dk[u * d + off + j] += ds * cache.q[t * d + off + j];
                        }
                    }
                }
            }
            let mut dh1 = linear_back(&dq, t_len, &b.wq, d, d);
            for (a, g) in dh1.iter_mut().zip(linear_back(&dk, t_len, &b.wk, d, d)) {
                *a += g;
            }
            for (a, g) in dh1.iter_mut().zip(linear_back(&dv, t_len, &b.wv, d, d)) {
                *a += g;
            }
            let dn1 = layer_norm_back(&dh1, t_len, d, &b.ln1_gain, &cache.norm1);
            for (a, g) in dx.iter_mut().zip(&dn1) {
                *a += g;
            }
        }

        Ok(dx[self.slot * d..(self.slot + 1) * d].to_vec())
    }
}
