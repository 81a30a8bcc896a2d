//! Classifier file.
//!
//! ```text
//! magic      8 bytes  "SSCLSFR\0"
//! version    u32      1
//! N          u32
//! C          u32
//! loss_kind  u32      0 = ArcFace, 1 = softmax
//! scale      f64
//! margin     f64
//! weights    N x C f32, row-major
//! ```

use std::path::Path;

use super::{LinearClassifier, LossKind};
use crate::container::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SSCLSFR\0";
pub const VERSION: u32 = 1;

pub fn to_bytes(clf: &LinearClassifier) -> Vec<u8> {
    let mut out = Writer::new(MAGIC, VERSION);
    out.u32(clf.num_classes() as u32);
    out.u32(clf.dim() as u32);
    out.u32(clf.loss_kind.code());
    out.f64(clf.scale);
    out.f64(clf.margin);
    for row in clf.weights() {
        out.f32s(row);
    }
    out.finish()
}

pub fn from_bytes(bytes: &[u8]) -> Result<LinearClassifier> {
    let mut r = Reader::new(bytes, MAGIC, VERSION)?;
    let n = r.usize()?;
    let c = r.usize()?;
    let kind = LossKind::from_code(r.u32()?)?;
    let scale = r.f64()?;
    let margin = r.f64()?;
    if n == 0 || c == 0 {
        return Err(Error::Format("empty classifier".into()));
    }
    let weights = (0..n).map(|_| r.f32s(c)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    LinearClassifier::new(weights, kind, scale, margin)
        .map_err(|e| Error::Format(format!("invalid classifier: {e}")))
}

pub fn save(clf: &LinearClassifier, path: &Path) -> Result<()> {
    write_file(path, &to_bytes(clf))
}

pub fn load(path: &Path) -> Result<LinearClassifier> {
    from_bytes(&read_file(path)?)
}
