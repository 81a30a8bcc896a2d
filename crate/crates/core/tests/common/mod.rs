//! Test oracles written against the documented file formats and formulas,
//! without calling the library's forward pass or loss code.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, RowDVector};

/// A reimplementation of the encoder forward pass built from the bytes of an
/// encoder weight file.
pub struct RefEncoder {
    pub heads: usize,
    pub dim: usize,
    pub out: usize,
    pub max_len: usize,
    pub sum_readout: bool,
    pub embedding: DMatrix<f64>,
    pub positional: DMatrix<f64>,
    pub blocks: Vec<RefBlock>,
    pub final_gain: DVector<f64>,
    pub final_bias: DVector<f64>,
    pub projection: DMatrix<f64>,
}

pub struct RefBlock {
    ln1: (DVector<f64>, DVector<f64>),
    wq: DMatrix<f64>,
    bq: DVector<f64>,
    wk: DMatrix<f64>,
    bk: DVector<f64>,
    wv: DMatrix<f64>,
    bv: DVector<f64>,
    wo: DMatrix<f64>,
    bo: DVector<f64>,
    ln2: (DVector<f64>, DVector<f64>),
    w1: DMatrix<f64>,
    b1: DVector<f64>,
    w2: DMatrix<f64>,
    b2: DVector<f64>,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn u32(&mut self) -> usize {
        let v = u32::from_le_bytes(self.buf[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        v as usize
    }

    fn floats(&mut self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let v = f32::from_le_bytes(self.buf[self.pos..self.pos + 4].try_into().unwrap());
                self.pos += 4;
                v as f64
            })
            .collect()
    }

    fn vector(&mut self, n: usize) -> DVector<f64> {
        DVector::from_vec(self.floats(n))
    }

    /// Row-major `[rows][cols]`.
    fn matrix(&mut self, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, &self.floats(rows * cols))
    }
}

fn layer_norm(x: &RowDVector<f64>, gain: &DVector<f64>, bias: &DVector<f64>) -> RowDVector<f64> {
    let d = x.len() as f64;
    let mean = x.sum() / d;
    let centered = x.map(|v| v - mean);
    let var = centered.map(|v| v * v).sum() / d;
    let h = centered / (var + 1e-5).sqrt();
    h.component_mul(&gain.transpose()) + bias.transpose()
}

fn rows_layer_norm(x: &DMatrix<f64>, p: &(DVector<f64>, DVector<f64>)) -> DMatrix<f64> {
    let mut y = x.clone();
    for r in 0..x.nrows() {
        y.set_row(r, &layer_norm(&x.row(r).into_owned(), &p.0, &p.1));
    }
    y
}

fn affine(x: &DMatrix<f64>, w: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let mut y = x * w;
    for mut row in y.row_iter_mut() {
        row += b.transpose();
    }
    y
}

impl RefEncoder {
    pub fn from_bytes(bytes: &[u8]) -> Self {
        assert_eq!(&bytes[..8], b"SSENCWT\0");
        let mut c = Cursor { buf: bytes, pos: 8 };
        assert_eq!(c.u32(), 1);
        let blocks = c.u32();
        let heads = c.u32();
        let dim = c.u32();
        let out = c.u32();
        let vocab = c.u32();
        let max_len = c.u32();
        let sum_readout = c.u32() == 1;
        let f = 4 * dim;
        let embedding = c.matrix(vocab, dim);
        let positional = c.matrix(max_len, dim);
        let blocks = (0..blocks)
            .map(|_| RefBlock {
                ln1: (c.vector(dim), c.vector(dim)),
                wq: c.matrix(dim, dim),
                bq: c.vector(dim),
                wk: c.matrix(dim, dim),
                bk: c.vector(dim),
                wv: c.matrix(dim, dim),
                bv: c.vector(dim),
                wo: c.matrix(dim, dim),
                bo: c.vector(dim),
                ln2: (c.vector(dim), c.vector(dim)),
                w1: c.matrix(dim, f),
                b1: c.vector(f),
                w2: c.matrix(f, dim),
                b2: c.vector(dim),
            })
            .collect();
        let final_gain = c.vector(dim);
        let final_bias = c.vector(dim);
        let projection = c.matrix(dim, out);
        assert_eq!(c.pos, bytes.len(), "trailing bytes");
        Self {
            heads,
            dim,
            out,
            max_len,
            sum_readout,
            embedding,
            positional,
            blocks,
            final_gain,
            final_bias,
            projection,
        }
    }

    /// Unnormalized output feature; `slot` replaces one position's table row.
    pub fn encode(&self, tokens: &[u32], slot: Option<(usize, &[f64])>) -> Vec<f64> {
        let t_len = tokens.len();
        let d = self.dim;
        let mut x = DMatrix::zeros(t_len, d);
        for (t, &tok) in tokens.iter().enumerate() {
            let row = match slot {
                Some((s, v)) if s == t => RowDVector::from_row_slice(v),
                _ => self.embedding.row(tok as usize).into_owned(),
            };
            x.set_row(t, &(row + self.positional.row(t)));
        }
        let hd = d / self.heads;
        for b in &self.blocks {
            let h = rows_layer_norm(&x, &b.ln1);
            let q = affine(&h, &b.wq, &b.bq);
            let k = affine(&h, &b.wk, &b.bk);
            let v = affine(&h, &b.wv, &b.bv);
            let mut attn = DMatrix::zeros(t_len, d);
            for head in 0..self.heads {
                let qh = q.columns(head * hd, hd);
                let kh = k.columns(head * hd, hd);
                let vh = v.columns(head * hd, hd);
                let mut scores = (qh * kh.transpose()) / (hd as f64).sqrt();
                for i in 0..t_len {
                    for j in (i + 1)..t_len {
                        scores[(i, j)] = f64::NEG_INFINITY;
                    }
                    let max = scores.row(i).max();
                    let mut row = scores.row(i).map(|s| (s - max).exp());
                    row /= row.sum();
                    scores.set_row(i, &row);
                }
                attn.columns_mut(head * hd, hd).copy_from(&(scores * vh));
            }
            x += affine(&attn, &b.wo, &b.bo);
            let h2 = rows_layer_norm(&x, &b.ln2);
            let u = affine(&h2, &b.w1, &b.b1).map(|z| z / (1.0 + (-1.702 * z).exp()));
            x += affine(&u, &b.w2, &b.b2);
        }
        let pooled = if self.sum_readout {
            x.row_sum()
        } else {
            layer_norm(
                &x.row(t_len - 1).into_owned(),
                &self.final_gain,
                &self.final_bias,
            )
        };
        (pooled * &self.projection).iter().copied().collect()
    }
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let a = DVector::from_column_slice(a);
    let b = DVector::from_column_slice(b);
    a.dot(&b) / (a.norm() * b.norm())
}

/// Mean absolute cosine against each previous feature.
pub fn ref_style_loss(current: &[f64], previous: &[Vec<f64>]) -> f64 {
    if previous.is_empty() {
        return 0.0;
    }
    previous.iter().map(|p| cos(current, p).abs()).sum::<f64>() / previous.len() as f64
}

/// Mean over rows of `-log softmax(z_m)[m]`.
pub fn ref_content_loss(z: &[Vec<f64>]) -> f64 {
    z.iter()
        .enumerate()
        .map(|(m, row)| {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            lse - row[m]
        })
        .sum::<f64>()
        / z.len() as f64
}

/// `scale * cos` logits, cross-entropy at `label`.
pub fn ref_softmax_ce(weights: &[Vec<f64>], x: &[f64], label: usize, scale: f64) -> f64 {
    let logits: Vec<f64> = weights.iter().map(|w| scale * cos(w, x)).collect();
    ref_content_loss_row(&logits, label)
}

fn ref_content_loss_row(row: &[f64], label: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max - row[label]
}

/// Central differences of `f` at `x`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; zero when both vanish.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let a = DVector::from_column_slice(a);
    let b = DVector::from_column_slice(b);
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).norm() / scale
    }
}

/// Seeded `f64` stream for test inputs, independent of the library's RNG use.
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[-1, 1)`.
    pub fn symmetric(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 52) as f64 - 1.0
    }

    pub fn vec(&mut self, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| scale * self.symmetric()).collect()
    }
}

pub mod gradcheck {
    use super::*;
    use stylesynth_core::encoder::{build_prompt, io, Arch, PromptSpec, TextEncoder};
    use stylesynth_core::sphere::FeatureVector;
    use stylesynth_core::style::{LossSelection, PromptObjective};

    pub const NAMES: [&str; 6] = ["dog", "elephant", "giraffe", "guitar", "horse", "house"];
    pub const STEP: f64 = 1e-5;

    pub struct Case {
        pub encoder_seed: u64,
        pub selection: LossSelection,
        pub classes: Vec<&'static str>,
        pub style: Vec<f64>,
        pub previous_styles: Vec<Vec<f64>>,
    }

    /// Case `k` cycles through style-only, content-only and combined losses,
    /// two to six classes and zero to three previous styles.
    pub fn case(k: u64) -> Case {
        let mut rng = TestRng::new(1000 + k);
        let selection = match k % 3 {
            0 => LossSelection {
                style: true,
                content: false,
            },
            1 => LossSelection {
                style: false,
                content: true,
            },
            _ => LossSelection::default(),
        };
        let n = 2 + (k as usize % 5);
        let scale = [0.02, 0.2, 1.0][(k / 3) as usize % 3];
        let prev = if selection.style {
            1 + (k as usize % 3)
        } else {
            (k as usize) % 2
        };
        Case {
            encoder_seed: rng.next_u64(),
            selection,
            classes: NAMES[..n].to_vec(),
            style: rng.vec(32, scale),
            previous_styles: (0..prev).map(|_| rng.vec(32, scale)).collect(),
        }
    }

    /// Relative error between the library gradient and central differences
    /// of the oracle loss.
    pub fn check(case: &Case) -> f64 {
        let enc = TextEncoder::seeded(case.encoder_seed, Arch::default(), &NAMES).unwrap();
        let objective = PromptObjective::new(&enc, &case.classes, case.selection).unwrap();
        let previous: Vec<FeatureVector> = case
            .previous_styles
            .iter()
            .map(|p| {
                objective
                    .style_feature(&FeatureVector::new(p.clone()))
                    .unwrap()
            })
            .collect();
        let s = FeatureVector::new(case.style.clone());
        let (_, grad) = objective.loss_and_grad(&s, &previous, None).unwrap();

        let r = RefEncoder::from_bytes(&io::to_bytes(&enc.weights));
        let placeholder = enc.vocab.placeholder();
        let with_slot = |spec: PromptSpec, v: &[f64]| {
            let tokens = build_prompt(&spec, &enc.vocab).unwrap();
            let slot = tokens.iter().position(|&t| t == placeholder).unwrap();
            r.encode(&tokens, Some((slot, v)))
        };
        let class_ids: Vec<usize> = case
            .classes
            .iter()
            .map(|c| enc.vocab.class_index(c).unwrap())
            .collect();
        let content: Vec<Vec<f64>> = class_ids
            .iter()
            .map(|&m| {
                r.encode(
                    &build_prompt(&PromptSpec::content(m), &enc.vocab).unwrap(),
                    None,
                )
            })
            .collect();
        let prev: Vec<Vec<f64>> = previous.iter().map(|p| p.values().to_vec()).collect();
        let oracle = |v: &[f64]| {
            let mut total = 0.0;
            if case.selection.style {
                total += ref_style_loss(&with_slot(PromptSpec::style(0), v), &prev);
            }
            if case.selection.content {
                let z: Vec<Vec<f64>> = class_ids
                    .iter()
                    .map(|&m| {
                        let f = with_slot(PromptSpec::style_content(0, m), v);
                        content.iter().map(|c| cos(&f, c)).collect()
                    })
                    .collect();
                total += ref_content_loss(&z);
            }
            total
        };
        let fd = central_diff(oracle, &case.style, STEP);
        // the oracle and the library must also agree on the loss itself
        let lib = objective.loss(&s, &previous).unwrap().total;
        assert!((lib - oracle(&case.style)).abs() < 1e-12, "loss mismatch");
        rel_error(&grad, &fd)
    }
}
