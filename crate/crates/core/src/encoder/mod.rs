//! Frozen miniature text encoder.
//!
//! A pre-layer-norm transformer with learned positional embeddings and
//! last-token pooling. The style placeholder token never reads its row of the
//! embedding table: the caller supplies a word vector for that slot, and
//! [`encode_with_grad`] returns the exact vector-Jacobian product of the output
//! feature with respect to that word vector. Encoder parameters are never
//! updated.

mod forward;
pub mod io;
pub mod vocab;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sphere::FeatureVector;

pub use forward::{encode, encode_with_grad, Tape};
pub use vocab::{build_prompt, PromptKind, PromptSpec, TokenId, Vocabulary};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const MLP_RATIO: usize = 4;

/// How the output feature is read off the final residual stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Final layer norm on the last (EOS) position, then the output projection.
    EosNorm,
    /// Sum over all positions, then the output projection. No normalization.
    /// Used by the identity test configuration.
    SumLinear,
}

impl Readout {
    pub(crate) fn code(self) -> u32 {
        match self {
            Readout::EosNorm => 0,
            Readout::SumLinear => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Readout::EosNorm),
            1 => Ok(Readout::SumLinear),
            _ => Err(Error::Format(format!("unknown readout code {code}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arch {
    pub blocks: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub output_dim: usize,
    pub max_len: usize,
    pub readout: Readout,
}

impl Default for Arch {
    fn default() -> Self {
        Self {
            blocks: 2,
            heads: 2,
            model_dim: 32,
            output_dim: 16,
            max_len: 16,
            readout: Readout::EosNorm,
        }
    }
}

impl Arch {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::BadArchitecture(msg));
        if self.model_dim == 0 || self.output_dim == 0 {
            return bad("model and output widths must be positive".into());
        }
        if self.heads == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "model width {} is not divisible by {} heads",
                self.model_dim, self.heads
            ));
        }
        if self.max_len < vocab::LONGEST_PROMPT {
            return bad(format!(
                "max length {} is shorter than the longest template ({})",
                self.max_len,
                vocab::LONGEST_PROMPT
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn mlp_dim(&self) -> usize {
        self.model_dim * MLP_RATIO
    }
}

/// Standard deviations used by [`init_encoder_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitScales {
    /// Token embedding table.
    pub embedding: f64,
    /// Positional embedding table.
    pub positional: f64,
    /// Dense matrices are drawn with std `gain / sqrt(fan_in)`.
    pub matrix_gain: f64,
    /// Extra factor on the query and key matrices.
    pub qk_gain: f64,
}

impl Default for InitScales {
    fn default() -> Self {
        Self {
            embedding: 0.05,
            positional: 0.005,
            matrix_gain: 0.7,
            qk_gain: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub wq: Vec<f64>,
    pub bq: Vec<f64>,
    pub wk: Vec<f64>,
    pub bk: Vec<f64>,
    pub wv: Vec<f64>,
    pub bv: Vec<f64>,
    pub wo: Vec<f64>,
    pub bo: Vec<f64>,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Block {
    fn tensors(&self) -> [&Vec<f64>; 16] {
        [
            &self.ln1_gain,
            &self.ln1_bias,
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.ln2_gain,
            &self.ln2_bias,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 16] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }

    fn zeros(d: usize, f: usize) -> Self {
        let z = |n| vec![0.0; n];
        Self {
            ln1_gain: vec![1.0; d],
            ln1_bias: z(d),
            wq: z(d * d),
            bq: z(d),
            wk: z(d * d),
            bk: z(d),
            wv: z(d * d),
            bv: z(d),
            wo: z(d * d),
            bo: z(d),
            ln2_gain: vec![1.0; d],
            ln2_bias: z(d),
            w1: z(d * f),
            b1: z(f),
            w2: z(f * d),
            b2: z(d),
        }
    }
}

/// All encoder parameters. Matrices are row-major `[in][out]`, so a dense
/// layer computes `y[o] = b[o] + sum_i x[i] * w[i * out + o]`.
///
/// Every value is exactly representable as an `f32`; arithmetic happens in
/// `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub(crate) arch: Arch,
    pub(crate) vocab_size: usize,
    pub(crate) token_embedding: Vec<f64>,
    pub(crate) positional: Vec<f64>,
    pub(crate) blocks: Vec<Block>,
    pub(crate) final_gain: Vec<f64>,
    pub(crate) final_bias: Vec<f64>,
    pub(crate) projection: Vec<f64>,
}

impl EncoderWeights {
    pub(crate) fn zeros(arch: Arch, vocab_size: usize) -> Self {
        let d = arch.model_dim;
        Self {
            arch,
            vocab_size,
            token_embedding: vec![0.0; vocab_size * d],
            positional: vec![0.0; arch.max_len * d],
            blocks: (0..arch.blocks)
                .map(|_| Block::zeros(d, arch.mlp_dim()))
                .collect(),
            final_gain: vec![1.0; d],
            final_bias: vec![0.0; d],
            projection: vec![0.0; d * arch.output_dim],
        }
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Tensors in serialization order.
    pub(crate) fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut out = vec![&self.token_embedding, &self.positional];
        for b in &self.blocks {
            out.extend(b.tensors());
        }
        out.extend([&self.final_gain, &self.final_bias, &self.projection]);
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = vec![&mut self.token_embedding, &mut self.positional];
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        out.extend([
            &mut self.final_gain,
            &mut self.final_bias,
            &mut self.projection,
        ]);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// SHA-256 over the architecture header and every parameter as a
    /// little-endian `f32`.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(io::header_bytes(self));
        for t in self.tensors() {
            for &v in t.iter() {
                h.update((v as f32).to_le_bytes());
            }
        }
        h.finalize().into()
    }

    pub fn embedding_row(&self, token: TokenId) -> &[f64] {
        let d = self.arch.model_dim;
        let t = token as usize;
        &self.token_embedding[t * d..(t + 1) * d]
    }
}

fn fill_normal(rng: &mut ChaCha8Rng, std: f64, out: &mut [f64]) {
    let dist = Normal::new(0.0, std).expect("finite std");
    for v in out {
        *v = dist.sample(rng) as f32 as f64;
    }
}

/// Deterministic seeded initialization with the default scales.
pub fn init_encoder(seed: u64, arch: Arch, vocab_size: usize) -> Result<EncoderWeights> {
    init_encoder_with(seed, arch, vocab_size, InitScales::default())
}

pub fn init_encoder_with(
    seed: u64,
    arch: Arch,
    vocab_size: usize,
    scales: InitScales,
) -> Result<EncoderWeights> {
    arch.validate()?;
    if vocab_size == 0 {
        return Err(Error::BadArchitecture("empty vocabulary".into()));
    }
    if ![
        scales.embedding,
        scales.positional,
        scales.matrix_gain,
        scales.qk_gain,
    ]
    .iter()
    .all(|&v| v.is_finite() && v > 0.0)
    {
        return Err(Error::BadArchitecture(
            "init scales must be positive".into(),
        ));
    }
    let d = arch.model_dim;
    let f = arch.mlp_dim();
    let mut w = EncoderWeights::zeros(arch, vocab_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mat = |fan_in: usize| scales.matrix_gain / (fan_in as f64).sqrt();
    fill_normal(&mut rng, scales.embedding, &mut w.token_embedding);
    fill_normal(&mut rng, scales.positional, &mut w.positional);
    for b in &mut w.blocks {
        fill_normal(&mut rng, scales.qk_gain * mat(d), &mut b.wq);
        fill_normal(&mut rng, scales.qk_gain * mat(d), &mut b.wk);
        fill_normal(&mut rng, mat(d), &mut b.wv);
        fill_normal(&mut rng, mat(d), &mut b.wo);
        fill_normal(&mut rng, mat(d), &mut b.w1);
        fill_normal(&mut rng, mat(f), &mut b.w2);
    }
    fill_normal(&mut rng, mat(d), &mut w.projection);
    Ok(w)
}

/// The degenerate identity configuration: no blocks, zero positional table,
/// zero rows for every non-class token, sum readout and an identity output
/// projection. Under it a style prompt encodes to the style vector itself,
/// a content prompt to its class row, and a style-content prompt to their sum.
pub fn identity_encoder(seed: u64, vocab: &Vocabulary, dim: usize) -> Result<EncoderWeights> {
    let arch = Arch {
        blocks: 0,
        heads: 1,
        model_dim: dim,
        output_dim: dim,
        max_len: vocab::LONGEST_PROMPT,
        readout: Readout::SumLinear,
    };
    arch.validate()?;
    let mut w = EncoderWeights::zeros(arch, vocab.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = 1.0 / (dim as f64).sqrt();
    for m in 0..vocab.num_classes() {
        let t = vocab.class_token(m)? as usize;
        fill_normal(
            &mut rng,
            std,
            &mut w.token_embedding[t * dim..(t + 1) * dim],
        );
    }
    for i in 0..dim {
        w.projection[i * dim + i] = 1.0;
    }
    Ok(w)
}

/// An encoder bound to the vocabulary it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder {
    pub vocab: Vocabulary,
    pub weights: EncoderWeights,
}

impl TextEncoder {
    pub fn new(vocab: Vocabulary, weights: EncoderWeights) -> Result<Self> {
        if vocab.len() != weights.vocab_size {
            return Err(Error::BadArchitecture(format!(
                "vocabulary has {} tokens but the embedding table has {} rows",
                vocab.len(),
                weights.vocab_size
            )));
        }
        Ok(Self { vocab, weights })
    }

    /// Seeded transformer encoder over the given class names.
    pub fn seeded<S: AsRef<str>>(seed: u64, arch: Arch, class_names: &[S]) -> Result<Self> {
        let vocab = Vocabulary::new(class_names)?;
        let weights = init_encoder(seed, arch, vocab.len())?;
        Self::new(vocab, weights)
    }

    pub fn identity<S: AsRef<str>>(seed: u64, dim: usize, class_names: &[S]) -> Result<Self> {
        let vocab = Vocabulary::new(class_names)?;
        let weights = identity_encoder(seed, &vocab, dim)?;
        Self::new(vocab, weights)
    }

    pub fn word_dim(&self) -> usize {
        self.weights.arch.model_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.arch.output_dim
    }

    pub fn num_classes(&self) -> usize {
        self.vocab.num_classes()
    }

    pub fn encode_prompt(
        &self,
        spec: &PromptSpec,
        style: Option<&FeatureVector>,
    ) -> Result<FeatureVector> {
        let tokens = build_prompt(spec, &self.vocab)?;
        encode(&self.weights, &tokens, self.vocab.placeholder(), style)
    }

    pub fn encode_prompt_with_grad<'a>(
        &'a self,
        spec: &PromptSpec,
        style: &FeatureVector,
    ) -> Result<(FeatureVector, Tape<'a>)> {
        let tokens = build_prompt(spec, &self.vocab)?;
        encode_with_grad(&self.weights, &tokens, self.vocab.placeholder(), style)
    }

    /// Unit-norm content features `T("[class]_m")` for every class.
    pub fn content_features(&self) -> Result<Vec<FeatureVector>> {
        (0..self.num_classes())
            .map(|m| {
                crate::sphere::l2_normalize(&self.encode_prompt(&PromptSpec::content(m), None)?)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let arch = Arch::default();
        let a = init_encoder(7, arch, 12).unwrap();
        let b = init_encoder(7, arch, 12).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        assert_eq!(a, b);
        let c = init_encoder(8, arch, 12).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn bad_architectures() {
        let arch = Arch {
            model_dim: 33,
            heads: 2,
            ..Arch::default()
        };
        assert!(matches!(
            init_encoder(1, arch, 10),
            Err(Error::BadArchitecture(_))
        ));
        let arch = Arch {
            max_len: 7,
            ..Arch::default()
        };
        assert!(matches!(
            init_encoder(1, arch, 10),
            Err(Error::BadArchitecture(_))
        ));
    }

    #[test]
    fn default_arch_passes_audit() {
        let w = init_encoder(42, Arch::default(), 11).unwrap();
        assert!(w.all_finite());
        assert!(w
            .tensors()
            .iter()
            .all(|t| t.iter().all(|&v| v == v as f32 as f64)));
        let per_block = 4 * 32 + 4 * (32 * 32 + 32) + 2 * 32 * 128 + 128 + 32;
        assert_eq!(
            w.num_parameters(),
            11 * 32 + 16 * 32 + 2 * per_block + 2 * 32 + 32 * 16
        );
    }

    #[test]
    fn vocab_size_must_match() {
        let vocab = Vocabulary::new(&["cat", "dog"]).unwrap();
        let w = init_encoder(1, Arch::default(), vocab.len() + 1).unwrap();
        assert!(TextEncoder::new(vocab, w).is_err());
    }
}
