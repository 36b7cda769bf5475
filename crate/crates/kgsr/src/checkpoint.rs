//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "KGSR" | version u32 | d u32 | d1 u32 | d2 u32 | |E| u32 | |R| u32
//! W1 (d1 x 2d) | W2 (d x d1) | W3 (d2 x 3d) | W4 (d x d2) | entities (|E| x d) | relations (|R| x d)
//!     every matrix row-major f32
//! entity names, then relation names: u32 byte length + UTF-8 bytes each
//! FNV-1a 64 of every preceding byte, u64
//! ```
//!
//! Values are stored as `f32`; a model whose values are already
//! `f32`-representable (as training leaves them) loads back bit for bit.

use std::path::Path;

use kgsr_core::diffusion::AttentionParams;
use kgsr_core::embedding::EmbeddingTable;
use kgsr_core::linalg::Matrix;
use kgsr_core::model::{Checkpoint, ModelParams};
use kgsr_core::scoring::EncoderParams;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"KGSR";
pub const VERSION: u32 = 1;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit the u32 header field")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_matrix(out: &mut Vec<u8>, m: &Matrix) {
    for &x in m.as_slice() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let m = &ckpt.model;
    m.check()?;
    let d = m.dim();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        d,
        m.attention.hidden(),
        m.encoder.hidden(),
        m.embeddings.entity_count(),
        m.embeddings.relation_count(),
    ] {
        put_u32(&mut out, v)?;
    }
    for block in m.blocks() {
        put_matrix(&mut out, block);
    }
    if ckpt.entity_names.len() != m.embeddings.entity_count() || ckpt.relation_names.len() != m.embeddings.relation_count() {
        return Err(Error::Format("name tables do not match the embedding tables".into()));
    }
    for name in ckpt.entity_names.iter().chain(&ckpt.relation_names) {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
    }
    let sum = fnv1a(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Corrupt(format!("file ends inside {what}")))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<Matrix> {
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Corrupt(format!("{what} is too large")))?;
        let raw = self.take(n, what)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        Ok(Matrix::from_vec(rows, cols, data)?)
    }

    fn name(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)?;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Corrupt(format!("{what} is not UTF-8")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing KGSR magic bytes".into()));
    }
    let mut c = Cursor { bytes, at: 4 };
    let version = c.u32("the version")? as u32;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let d = c.u32("the header")?;
    let d1 = c.u32("the header")?;
    let d2 = c.u32("the header")?;
    let n_ent = c.u32("the header")?;
    let n_rel = c.u32("the header")?;
    if d == 0 || d1 == 0 || d2 == 0 {
        return Err(Error::Corrupt("zero dimension in header".into()));
    }
    let w1 = c.matrix(d1, 2 * d, "W1")?;
    let w2 = c.matrix(d, d1, "W2")?;
    let w3 = c.matrix(d2, 3 * d, "W3")?;
    let w4 = c.matrix(d, d2, "W4")?;
    let entities = c.matrix(n_ent, d, "the entity table")?;
    let relations = c.matrix(n_rel, d, "the relation table")?;
    let mut entity_names = Vec::with_capacity(n_ent.min(1 << 20));
    for _ in 0..n_ent {
        entity_names.push(c.name("the entity names")?);
    }
    let mut relation_names = Vec::with_capacity(n_rel.min(1 << 20));
    for _ in 0..n_rel {
        relation_names.push(c.name("the relation names")?);
    }
    let body_end = c.at;
    let stored = u64::from_le_bytes(c.take(8, "the checksum")?.try_into().expect("8 bytes"));
    if c.at != bytes.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes", bytes.len() - c.at)));
    }
    if fnv1a(&bytes[..body_end]) != stored {
        return Err(Error::Corrupt("checksum mismatch".into()));
    }
    let model = ModelParams {
        attention: AttentionParams { w1, w2 },
        encoder: EncoderParams { w3, w4 },
        embeddings: EmbeddingTable::from_matrices(entities, relations)?,
    };
    model.check()?;
    Ok(Checkpoint {
        model,
        entity_names,
        relation_names,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode(ckpt)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
