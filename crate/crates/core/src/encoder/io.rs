//! Encoder weight file.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic      8 bytes  "SSENCWT\0"
//! version    u32      1
//! blocks     u32
//! heads      u32
//! model_dim  u32      D
//! output_dim u32      C
//! vocab_size u32      V
//! max_len    u32      Lmax
//! readout    u32      0 = EOS + final layer norm, 1 = sum over positions
//! tensors    f32...
//! ```
//!
//! Tensor order: token embedding `V x D`, positional `Lmax x D`; then for each
//! block: ln1 gain, ln1 bias, Wq, bq, Wk, bk, Wv, bv, Wo, bo, ln2 gain,
//! ln2 bias, W1 `D x 4D`, b1, W2 `4D x D`, b2; then the final layer-norm gain
//! and bias and the output projection `D x C`. Matrices are row-major
//! `[in][out]`.

use std::path::Path;

use super::{Arch, EncoderWeights, Readout};
use crate::container::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SSENCWT\0";
pub const VERSION: u32 = 1;

pub(crate) fn header_bytes(w: &EncoderWeights) -> Vec<u8> {
    let a = &w.arch;
    [
        a.blocks,
        a.heads,
        a.model_dim,
        a.output_dim,
        w.vocab_size,
        a.max_len,
    ]
    .iter()
    .map(|&v| v as u32)
    .chain([a.readout.code()])
    .flat_map(u32::to_le_bytes)
    .collect()
}

pub fn to_bytes(w: &EncoderWeights) -> Vec<u8> {
    let mut out = Writer::new(MAGIC, VERSION);
    out.bytes(&header_bytes(w));
    for t in w.tensors() {
        out.f32s(t);
    }
    out.finish()
}

pub fn from_bytes(bytes: &[u8]) -> Result<EncoderWeights> {
    let mut r = Reader::new(bytes, MAGIC, VERSION)?;
    let blocks = r.usize()?;
    let heads = r.usize()?;
    let model_dim = r.usize()?;
    let output_dim = r.usize()?;
    let vocab_size = r.usize()?;
    let max_len = r.usize()?;
    let readout = Readout::from_code(r.u32()?)?;
    let arch = Arch {
        blocks,
        heads,
        model_dim,
        output_dim,
        max_len,
        readout,
    };
    arch.validate()?;
    if vocab_size == 0 || blocks > 1024 {
        return Err(Error::Format("implausible header".into()));
    }
    let mut w = EncoderWeights::zeros(arch, vocab_size);
    for t in w.tensors_mut() {
        let n = t.len();
        *t = r.f32s(n)?;
    }
    r.finish()?;
    if !w.all_finite() {
        return Err(Error::Format("non-finite parameter".into()));
    }
    Ok(w)
}

pub fn save(w: &EncoderWeights, path: &Path) -> Result<()> {
    write_file(path, &to_bytes(w))
}

pub fn load(path: &Path) -> Result<EncoderWeights> {
    from_bytes(&read_file(path)?)
}
