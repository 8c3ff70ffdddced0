//! Binary checkpoint format.
//!
//! ```text
//! "CHRS"  u32 version
//! config: u64 l_tail, n_proj, n_conv, n_blk, mlp_hidden, seed, n_kernels, kernels...
//! u64 k_stat, f64 mean, f64 std, u64 init_seed
//! u64 n_tensors, then per tensor: u32 ndim, u64 dims..., f64 data...
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::config::ChronosConfig;
use super::params::{ModelParams, Weights};
use super::NetError;
use crate::scalar::Scalar;
use crate::signal::Standardizer;

pub const MAGIC: &[u8; 4] = b"CHRS";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn encode<T: Scalar>(params: &ModelParams<T>) -> Vec<u8> {
    let c = &params.config;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [c.l_tail, c.n_proj, c.n_conv, c.n_blk, c.mlp_hidden] {
        put_u64(&mut buf, v as u64);
    }
    put_u64(&mut buf, c.seed);
    put_u64(&mut buf, c.kernel_lengths.len() as u64);
    for &k in &c.kernel_lengths {
        put_u64(&mut buf, k as u64);
    }
    put_u64(&mut buf, params.k_stat as u64);
    put_f64(&mut buf, params.standardizer.mean);
    put_f64(&mut buf, params.standardizer.std);
    put_u64(&mut buf, params.init_seed);
    let tensors = params.weights.tensors();
    put_u64(&mut buf, tensors.len() as u64);
    for t in tensors {
        buf.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            put_u64(&mut buf, d as u64);
        }
        for &v in &t.data {
            put_f64(&mut buf, v.as_f64());
        }
    }
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        if self.pos + n > self.bytes.len() {
            return Err(NetError::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NetError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize, NetError> {
        usize::try_from(self.u64()?).map_err(|_| NetError::Checkpoint("size overflow".into()))
    }

    fn f64(&mut self) -> Result<f64, NetError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<ModelParams<T>, NetError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(NetError::Checkpoint("bad magic bytes".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(NetError::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let l_tail = cur.usize()?;
    let n_proj = cur.usize()?;
    let n_conv = cur.usize()?;
    let n_blk = cur.usize()?;
    let mlp_hidden = cur.usize()?;
    let seed = cur.u64()?;
    let n_kernels = cur.usize()?;
    if n_kernels > 1024 {
        return Err(NetError::Checkpoint(format!(
            "implausible kernel count {n_kernels}"
        )));
    }
    let kernel_lengths = (0..n_kernels)
        .map(|_| cur.usize())
        .collect::<Result<Vec<_>, _>>()?;
    let config = ChronosConfig {
        l_tail,
        n_proj,
        n_conv,
        kernel_lengths,
        n_blk,
        mlp_hidden,
        seed,
    };
    config.validate()?;
    let k_stat = cur.usize()?;
    let standardizer = Standardizer {
        mean: cur.f64()?,
        std: cur.f64()?,
    };
    let init_seed = cur.u64()?;

    let mut weights = Weights::<T>::zeros(&config);
    let n_tensors = cur.usize()?;
    let mut slots = weights.tensors_mut();
    if n_tensors != slots.len() {
        return Err(NetError::Shape(format!(
            "checkpoint holds {n_tensors} tensors, config implies {}",
            slots.len()
        )));
    }
    for (i, slot) in slots.iter_mut().enumerate() {
        let ndim = cur.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| cur.usize())
            .collect::<Result<Vec<_>, _>>()?;
        if shape != slot.shape {
            return Err(NetError::Shape(format!(
                "tensor {i}: stored shape {shape:?} does not match config shape {:?}",
                slot.shape
            )));
        }
        for v in slot.data.iter_mut() {
            *v = T::lit(cur.f64()?);
        }
    }
    if cur.pos != bytes.len() {
        return Err(NetError::Checkpoint(
            "trailing bytes after last tensor".into(),
        ));
    }
    Ok(ModelParams {
        config,
        k_stat,
        standardizer,
        init_seed,
        weights,
    })
}

pub fn save_checkpoint<T: Scalar>(params: &ModelParams<T>, path: &Path) -> Result<(), NetError> {
    fs::write(path, encode(params))?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ModelParams<T>, NetError> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::params::init_params;
    use crate::signal::TemporalSignal;

    fn model() -> ModelParams<f64> {
        let cfg = ChronosConfig::new(24, 3, 2, vec![2, 5], 2);
        let mut p = init_params::<f64>(&cfg, 77).unwrap();
        p.k_stat = 7;
        p.standardizer = Standardizer {
            mean: 0.3,
            std: 1.7,
        };
        p.weights.head_b2.data[0] = -0.125;
        p
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.chrs");
        let p = model();
        save_checkpoint(&p, &path).unwrap();
        let q: ModelParams<f64> = load_checkpoint(&path).unwrap();
        assert_eq!(p, q);
        let sig = TemporalSignal {
            values: (0..24).map(|i| i as f64 / 7.0).collect(),
            valid_len: 20,
        };
        assert_eq!(
            p.score_signal(&sig).unwrap().to_bits(),
            q.score_signal(&sig).unwrap().to_bits()
        );
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = encode(&model());
        assert!(decode::<f64>(&bytes[..bytes.len() - 3]).is_err());
        let mut v = bytes.clone();
        v[4] = 9;
        assert!(matches!(decode::<f64>(&v), Err(NetError::Checkpoint(m)) if m.contains("version")));
        bytes[0] = b'X';
        assert!(
            matches!(decode::<f64>(&bytes), Err(NetError::Checkpoint(m)) if m.contains("magic"))
        );
    }

    #[test]
    fn shape_mismatch_on_wrong_input_length() {
        let p = model();
        let sig = TemporalSignal {
            values: vec![0.0; 32],
            valid_len: 32,
        };
        assert!(matches!(p.score_signal(&sig), Err(NetError::Shape(_))));
    }

    #[test]
    fn f32_models_roundtrip_too() {
        let cfg = ChronosConfig::new(8, 2, 1, vec![3], 1);
        let p = init_params::<f32>(&cfg, 1).unwrap();
        let q: ModelParams<f32> = decode(&encode(&p)).unwrap();
        assert_eq!(p, q);
    }
}
