//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! "PNFR"  u32 version
//! u32 d  u32 num_blocks  u32 num_heads  u32 max_len  u32 num_items  u32 variant_tag
//! u32 tensor_count
//! per tensor, in layout order:  u32 ndim  u32 dims[ndim]  f32 data[prod(dims)]
//! ```

use std::path::Path;

use super::{EncoderConfig, ModelError, ModelVariant, Result, SeqModel};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PNFR";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| ModelError::Format(format!("{v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_checkpoint(model: &SeqModel<f32>) -> Result<Vec<u8>> {
    let c = &model.config;
    let mut out = Vec::with_capacity(64 + 4 * model.num_parameters());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [c.d, c.num_blocks, c.num_heads, c.max_len, model.num_items] {
        put_u32(&mut out, v)?;
    }
    out.extend_from_slice(&model.variant.tag().to_le_bytes());
    put_u32(&mut out, model.params().len())?;
    for t in model.params() {
        put_u32(&mut out, t.shape().len())?;
        for &dim in t.shape() {
            put_u32(&mut out, dim)?;
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ModelError::Format("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
}

/// Inverse of [`encode_checkpoint`]. `dropout` is not stored and is set to 0.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<SeqModel<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(ModelError::Format("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Format(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let config = EncoderConfig {
        d: r.usize()?,
        num_blocks: r.usize()?,
        num_heads: r.usize()?,
        max_len: r.usize()?,
        dropout: 0.0,
    };
    let num_items = r.usize()?;
    let tag = r.u32()?;
    let variant = ModelVariant::from_tag(tag)
        .ok_or_else(|| ModelError::Format(format!("unknown variant tag {tag}")))?;
    let count = r.usize()?;
    let mut params = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let ndim = r.usize()?;
        let shape: Vec<usize> = (0..ndim).map(|_| r.usize()).collect::<Result<_>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| ModelError::Format("tensor size overflows".into()))?;
        let raw = r.take(
            n.checked_mul(4)
                .ok_or_else(|| ModelError::Format("tensor size overflows".into()))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push(Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(ModelError::Format(
            "trailing bytes after last tensor".into(),
        ));
    }
    SeqModel::from_params(config, variant, num_items, params)
}

pub fn save_checkpoint(path: &Path, model: &SeqModel<f32>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model)?).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<SeqModel<f32>> {
    let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes)
}
