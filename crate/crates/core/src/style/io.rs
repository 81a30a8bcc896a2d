//! Style bank file.
//!
//! ```text
//! magic     8 bytes  "SSSTYBK\0"
//! version   u32      1
//! K         u32
//! D         u32
//! seed      u64
//! digest    32 bytes SHA-256 of the training config
//! vectors   K x D f32
//! per style: style_loss f64, content_loss f64, iterations u32
//! ```

use std::path::Path;

use super::{StyleBank, StyleLog};
use crate::container::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::sphere::FeatureVector;

pub const MAGIC: &[u8; 8] = b"SSSTYBK\0";
pub const VERSION: u32 = 1;

pub fn to_bytes(bank: &StyleBank) -> Vec<u8> {
    let mut out = Writer::new(MAGIC, VERSION);
    out.u32(bank.len() as u32);
    out.u32(bank.dim() as u32);
    out.u64(bank.seed);
    out.bytes(&bank.config_digest);
    for v in &bank.vectors {
        out.f32s(v.values());
    }
    for l in &bank.log {
        out.f64(l.style_loss);
        out.f64(l.content_loss);
        out.u32(l.iterations as u32);
    }
    out.finish()
}

pub fn from_bytes(bytes: &[u8]) -> Result<StyleBank> {
    let mut r = Reader::new(bytes, MAGIC, VERSION)?;
    let k = r.usize()?;
    let d = r.usize()?;
    let seed = r.u64()?;
    let config_digest = r.bytes::<32>()?;
    if k == 0 || d == 0 {
        return Err(Error::Format("empty style bank".into()));
    }
    let vectors = (0..k)
        .map(|_| r.f32s(d).map(FeatureVector::new))
        .collect::<Result<Vec<_>>>()?;
    let mut log = Vec::with_capacity(k);
    for _ in 0..k {
        log.push(StyleLog {
            style_loss: r.f64()?,
            content_loss: r.f64()?,
            iterations: r.usize()?,
        });
    }
    r.finish()?;
    if vectors.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite style vector".into()));
    }
    Ok(StyleBank {
        vectors,
        log,
        seed,
        config_digest,
    })
}

pub fn save(bank: &StyleBank, path: &Path) -> Result<()> {
    write_file(path, &to_bytes(bank))
}

pub fn load(path: &Path) -> Result<StyleBank> {
    from_bytes(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{Arch, TextEncoder};
    use crate::style::{learn_styles, TrainConfig};

    #[test]
    fn round_trip() {
        let names = ["cat", "dog"];
        let enc = TextEncoder::seeded(2, Arch::default(), &names).unwrap();
        let cfg = TrainConfig {
            num_styles: 3,
            iterations: 4,
            seed: 8,
            ..TrainConfig::default()
        };
        let bank = learn_styles(&enc, &names, &cfg).unwrap();
        let bytes = to_bytes(&bank);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, bank);
        assert_eq!(to_bytes(&back), bytes);
        assert_eq!(bytes.len(), 12 + 8 + 8 + 32 + 4 * 3 * 32 + 3 * 20);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("styles.bin");
        save(&bank, &path).unwrap();
        assert_eq!(load(&path).unwrap(), bank);
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
