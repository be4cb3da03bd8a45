//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!   magic "IOLAB" | version u32 | d_model u32 | n_layers u32 | n_heads u32
//!   | d_ffn u32 | vocab_size u32 | max_len u32 | dropout f32 | seed u64
//!   | n_arrays u32 | arrays...
//! Each array: name_len u32 | name utf-8 | count u32 | count * f32.
//! Arrays appear in the canonical `Parameters::named_arrays` order and loads
//! verify names and lengths, so a checkpoint never silently reshapes a model.

use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelError, Parameters};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"IOLAB";
pub const CHECKPOINT_VERSION: u32 = 1;

pub(super) fn save(path: &Path, cfg: &ModelConfig, params: &Parameters) -> Result<(), ModelError> {
    let arrays = params.named_arrays();
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for dim in [cfg.d_model, cfg.n_layers, cfg.n_heads, cfg.d_ffn, cfg.vocab_size, cfg.max_len] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(cfg.dropout as f32).to_le_bytes());
    buf.extend_from_slice(&cfg.seed.to_le_bytes());
    buf.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, arr) in arrays {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(arr.len() as u32).to_le_bytes());
        for &v in arr.iter() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.data.len() {
            return Err(ModelError::BadCheckpoint(format!(
                "truncated at byte {} (wanted {} more)",
                self.pos, n
            )));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, ModelError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub(super) fn load(path: &Path) -> Result<(ModelConfig, Parameters), ModelError> {
    let data = fs::read(path)?;
    let mut r = Reader { data: &data, pos: 0 };
    if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
        return Err(ModelError::BadCheckpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::BadCheckpoint(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let mut dims = [0usize; 6];
    for d in dims.iter_mut() {
        *d = r.u32()? as usize;
    }
    let dropout = r.f32()? as f64;
    let seed = r.u64()?;
    let cfg = ModelConfig {
        d_model: dims[0],
        n_layers: dims[1],
        n_heads: dims[2],
        d_ffn: dims[3],
        vocab_size: dims[4],
        max_len: dims[5],
        dropout,
        seed,
    };
    cfg.validate()
        .map_err(|e| ModelError::BadCheckpoint(format!("config in file is invalid: {e}")))?;

    let mut params = Parameters::zeros(&cfg);
    let n_arrays = r.u32()? as usize;
    let expected = params.named_arrays().len();
    if n_arrays != expected {
        return Err(ModelError::BadCheckpoint(format!(
            "{n_arrays} arrays in file, config implies {expected}"
        )));
    }
    for (name, arr) in params.named_arrays_mut() {
        let name_len = r.u32()? as usize;
        let got = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| ModelError::BadCheckpoint("array name is not utf-8".into()))?;
        if got != name {
            return Err(ModelError::BadCheckpoint(format!(
                "array order mismatch: found {got:?}, expected {name:?}"
            )));
        }
        let count = r.u32()? as usize;
        if count != arr.len() {
            return Err(ModelError::BadCheckpoint(format!(
                "array {name:?} has {count} values, config implies {}",
                arr.len()
            )));
        }
        for v in arr.iter_mut() {
            *v = r.f32()? as f64;
        }
    }
    if r.pos != data.len() {
        return Err(ModelError::BadCheckpoint(format!(
            "{} trailing bytes after arrays",
            data.len() - r.pos
        )));
    }
    Ok((cfg, params))
}
