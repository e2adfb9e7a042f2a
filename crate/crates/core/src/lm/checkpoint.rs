//! Checkpoint container.
//!
//! Binary file, all integers little-endian:
//!
//! ```text
//! magic     8 bytes   "RVSOCKP1"
//! count     u32       number of tensors
//! tensor*   name_len u32, name (UTF-8), dtype u8 (0 = f32, 1 = f64),
//!           ndim u32, dims u64 * ndim, row-major data
//! ```
//!
//! Parameters use the names from [`Params::tensors`]; Adam moments, when
//! present, are stored as `adam.m.<name>` and `adam.v.<name>`. A JSON
//! sidecar at `<path>.json` holds [`CheckpointMeta`].

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, TrainConfig};
use super::optim::Adam;
use super::params::{ModelState, Params};
use super::{DType, Scalar};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RVSOCKP1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub dtype: String,
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub step: u64,
    pub epoch: usize,
    pub optimizer_updates: Option<u64>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn dtype_code(d: DType) -> u8 {
    match d {
        DType::F32 => 0,
        DType::F64 => 1,
    }
}

fn write_tensor<T: Scalar>(out: &mut Vec<u8>, name: &str, shape: &[usize], data: impl Iterator<Item = T>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(dtype_code(T::DTYPE));
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for x in data {
        x.write_le(out);
    }
}

fn encode_params<T: Scalar>(out: &mut Vec<u8>, prefix: &str, p: &Params<T>) -> u32 {
    let mut n = 0;
    for (name, t) in p.tensors() {
        write_tensor(out, &format!("{prefix}{name}"), t.shape(), t.iter().copied());
        n += 1;
    }
    n
}

pub fn save_checkpoint<T: Scalar>(
    state: &ModelState<T>,
    train: Option<&TrainConfig>,
    path: &Path,
) -> Result<()> {
    let mut body = Vec::new();
    let mut count = encode_params(&mut body, "", &state.params);
    if let Some(opt) = &state.optimizer {
        count += encode_params(&mut body, "adam.m.", &opt.m);
        count += encode_params(&mut body, "adam.v.", &opt.v);
    }
    let mut bytes = Vec::with_capacity(body.len() + 12);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&count.to_le_bytes());
    bytes.extend_from_slice(&body);
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;

    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        dtype: T::DTYPE.name().to_string(),
        model: state.config.clone(),
        train: train.cloned(),
        step: state.step,
        epoch: state.epoch,
        optimizer_updates: state.optimizer.as_ref().map(|o| o.t),
    };
    let side = sidecar_path(path);
    std::fs::write(&side, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&side, e))
}

struct RawTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    native: Vec<u8>,
    dtype: u8,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap_or_default()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap_or_default()))
    }
}

fn read_tensors(bytes: &[u8]) -> Result<HashMap<String, RawTensor>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let count = r.u32()?;
    let mut out = HashMap::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let dtype = r.take(1)?[0];
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let width = match dtype {
            0 => 4,
            1 => 8,
            other => return Err(Error::Checkpoint(format!("unknown dtype code {other}"))),
        };
        let raw = r.take(len * width)?;
        let values = raw
            .chunks_exact(width)
            .map(|c| if width == 4 { f32::read_le(c) as f64 } else { f64::read_le(c) })
            .collect();
        out.insert(
            name,
            RawTensor {
                shape,
                values,
                native: raw.to_vec(),
                dtype,
            },
        );
    }
    Ok(out)
}

fn fill_params<T: Scalar>(
    p: &mut Params<T>,
    prefix: &str,
    raw: &HashMap<String, RawTensor>,
) -> Result<()> {
    for (name, mut t) in p.tensors_mut() {
        let key = format!("{prefix}{name}");
        let src = raw
            .get(&key)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
        if src.shape != t.shape() {
            return Err(Error::Checkpoint(format!(
                "{key}: shape {:?} does not match config {:?}",
                src.shape,
                t.shape()
            )));
        }
        if src.dtype == dtype_code(T::DTYPE) {
            let width = src.native.len() / src.values.len().max(1);
            for (dst, chunk) in t.iter_mut().zip(src.native.chunks_exact(width.max(1))) {
                *dst = T::read_le(chunk);
            }
        } else {
            for (dst, &v) in t.iter_mut().zip(&src.values) {
                *dst = T::lit(v);
            }
        }
    }
    Ok(())
}

/// Loads a checkpoint, converting element type if it was saved in another
/// precision.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(ModelState<T>, CheckpointMeta)> {
    let side = sidecar_path(path);
    let meta_text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&meta_text)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            meta.format_version
        )));
    }
    meta.model.validate()?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let raw = read_tensors(&bytes)?;

    let mut params = Params::<T>::zeros(&meta.model);
    fill_params(&mut params, "", &raw)?;
    let optimizer = match meta.optimizer_updates {
        Some(t) => {
            let mut opt = Adam::new(&meta.model);
            fill_params(&mut opt.m, "adam.m.", &raw)?;
            fill_params(&mut opt.v, "adam.v.", &raw)?;
            opt.t = t;
            Some(opt)
        }
        None => None,
    };
    let state = ModelState {
        config: meta.model.clone(),
        params,
        step: meta.step,
        epoch: meta.epoch,
        optimizer,
    };
    Ok((state, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::model::{forward, Batch};
    use crate::lm::params::init;

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            dim: 8,
            n_heads: 2,
            max_seq: 6,
            vocab_size: 9,
            dropout: 0.1,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut st = init::<f32>(&cfg(), 2).unwrap();
        st.step = 17;
        st.epoch = 3;
        let mut opt = Adam::new(&cfg());
        opt.m.tok_emb.fill(0.25);
        opt.t = 17;
        st.optimizer = Some(opt);
        save_checkpoint(&st, Some(&TrainConfig::default()), &path).unwrap();
        let (back, meta) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(back, st);
        assert_eq!(meta.step, 17);
        assert_eq!(meta.dtype, "f32");

        let b = Batch::from_sequences(&[vec![1u32, 5, 6, 7]]);
        let a = forward(&st, &b).unwrap();
        let c = forward(&back, &b).unwrap();
        assert!(a.iter().zip(c.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn loads_across_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let st = init::<f32>(&cfg(), 2).unwrap();
        save_checkpoint(&st, None, &path).unwrap();
        let (wide, _) = load_checkpoint::<f64>(&path).unwrap();
        assert_eq!(wide.params.tok_emb[[3, 1]], st.params.tok_emb[[3, 1]] as f64);
        assert!(wide.optimizer.is_none());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let st = init::<f32>(&cfg(), 2).unwrap();
        save_checkpoint(&st, None, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&path), Err(Error::Checkpoint(_))));
        std::fs::write(&path, b"NOTACKPT").unwrap();
        assert!(matches!(load_checkpoint::<f32>(&path), Err(Error::Checkpoint(_))));
    }
}
