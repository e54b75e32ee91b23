//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `XSACKPT1`, `u32` version, `u32` metadata
//! length followed by UTF-8 JSON metadata, `u32` array count, then for each
//! array: `u32` name length + name, `u8` dtype (0 = f32, 1 = f64), `u32` rank,
//! `u64` per dimension, raw values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::{Domain, MethodSpec, TargetInput, TrainedModel};
use crate::classifier::{EEGNet, EEGNetConfig};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::resize_net::{ResizeNet, ResizeNetConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"XSACKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Configuration stored alongside the arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub method: MethodSpec,
    pub eegnet: EEGNetConfig,
    pub resize: Option<ResizeNetConfig>,
    pub resize_side: Option<Domain>,
    pub has_teacher: bool,
    pub target_input: TargetInput,
    pub seed: u64,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Serializes metadata and named arrays into one buffer.
pub fn encode_container<T: Scalar>(meta: &impl Serialize, arrays: &[(String, &Tensor<T>)]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(meta)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, t) in arrays {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::dtype_tag());
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            match T::dtype_tag() {
                0 => out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
                _ => out.extend_from_slice(&v.as_f64().to_le_bytes()),
            }
        }
    }
    Ok(out)
}

/// Parses a container; stored values are converted to `T`.
pub fn decode_container<T: Scalar>(bytes: &[u8]) -> Result<(serde_json::Value, Vec<(String, Tensor<T>)>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32()? as usize;
    let meta: serde_json::Value = serde_json::from_slice(r.take(len)?)?;
    let count = r.u32()?;
    let mut arrays = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Format("array name".into()))?;
        let dtype = r.take(1)?[0];
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data: Vec<T> = match dtype {
            0 => r.take(4 * n)?.chunks_exact(4).map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64)).collect(),
            1 => r.take(8 * n)?.chunks_exact(8).map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap()))).collect(),
            other => return Err(Error::Format(format!("unknown dtype tag {other}"))),
        };
        arrays.push((name, Tensor::from_vec(&shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok((meta, arrays))
}

fn prefixed<'a, T: Scalar>(prefix: &str, ps: &'a ParamSet<T>) -> impl Iterator<Item = (String, &'a Tensor<T>)> + 'a {
    let prefix = prefix.to_string();
    ps.iter().map(move |(n, t)| (format!("{prefix}/{n}"), t))
}

fn collect<T: Scalar>(arrays: &[(String, Tensor<T>)], prefix: &str) -> ParamSet<T> {
    let p = format!("{prefix}/");
    let (names, values) = arrays
        .iter()
        .filter_map(|(n, t)| n.strip_prefix(&p).map(|s| (s.to_string(), t.clone())))
        .unzip();
    ParamSet::from_parts(names, values)
}

impl<T: Scalar> TrainedModel<T> {
    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            method: self.method.clone(),
            eegnet: self.eegnet.cfg.clone(),
            resize: self.resize.as_ref().map(|r| r.cfg.clone()),
            resize_side: self.resize_side,
            has_teacher: self.teacher.is_some(),
            target_input: self.target_input,
            seed: self.seed,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut arrays: Vec<(String, &Tensor<T>)> = Vec::new();
        arrays.extend(prefixed("eegnet", &self.eegnet.params));
        arrays.extend(prefixed("eegnet_buffers", &self.eegnet.buffers));
        if let Some(r) = &self.resize {
            arrays.extend(prefixed("resize", &r.params));
        }
        if let Some(t) = &self.teacher {
            arrays.extend(prefixed("teacher", &t.params));
            arrays.extend(prefixed("teacher_buffers", &t.buffers));
        }
        encode_container(&self.meta(), &arrays)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, arrays) = decode_container::<T>(bytes)?;
        let meta: CheckpointMeta = serde_json::from_value(meta)?;
        let eegnet =
            EEGNet::from_parts(meta.eegnet.clone(), &collect(&arrays, "eegnet"), &collect(&arrays, "eegnet_buffers"))?;
        let resize = match &meta.resize {
            Some(cfg) => Some(ResizeNet::from_params(cfg.clone(), &collect(&arrays, "resize"))?),
            None => None,
        };
        let teacher = if meta.has_teacher {
            Some(EEGNet::from_parts(
                meta.eegnet.clone(),
                &collect(&arrays, "teacher"),
                &collect(&arrays, "teacher_buffers"),
            )?)
        } else {
            None
        };
        Ok(TrainedModel {
            method: meta.method,
            eegnet,
            resize,
            resize_side: meta.resize_side,
            teacher,
            target_input: meta.target_input,
            seed: meta.seed,
        })
    }

    /// Writes the checkpoint atomically.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip_and_corruption() {
        let a = Tensor::<f64>::from_fn(&[2, 3], |i| i as f64 * 0.5);
        let b = Tensor::<f64>::scalar(-1.25);
        let bytes = encode_container(&serde_json::json!({"k": 1}), &[("a".into(), &a), ("b".into(), &b)]).unwrap();
        let (meta, arrays) = decode_container::<f64>(&bytes).unwrap();
        assert_eq!(meta["k"], 1);
        assert_eq!(arrays[0], ("a".to_string(), a));
        assert_eq!(arrays[1].1, b);
        assert!(decode_container::<f64>(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'Y';
        assert!(decode_container::<f64>(&bad).is_err());
    }
}
