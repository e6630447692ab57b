//! Binary checkpoint container.
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `APBCKPT\0` |
//! | 4 | format version, u32 LE |
//! | 8 | header length `h`, u64 LE |
//! | h | UTF-8 JSON [`CheckpointHeader`] |
//! | rest | every tensor's values as f64 LE, at the offsets in the header |
//!
//! Values are stored at full precision so a save/load round trip is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Adam, BatchNorm2d, Param};
use crate::PIPELINE_VERSION;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"APBCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in values (not bytes) into the data section.
    pub offset: usize,
}

impl TensorEntry {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// `"predictor"` or `"reenactor"`.
    pub kind: String,
    pub pipeline_version: String,
    /// Completed training epochs.
    pub epoch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<String>,
    pub arch: serde_json::Value,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    data: Vec<f64>,
}

impl Checkpoint {
    pub fn new(kind: &str, arch: &impl Serialize, epoch: usize) -> Result<Self> {
        Ok(Checkpoint {
            header: CheckpointHeader {
                kind: kind.to_string(),
                pipeline_version: PIPELINE_VERSION.to_string(),
                epoch,
                identity: None,
                arch: serde_json::to_value(arch)?,
                meta: serde_json::Value::Null,
                tensors: Vec::new(),
            },
            data: Vec::new(),
        })
    }

    pub fn arch<T: DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.header.arch.clone())?)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.header.kind != kind {
            return Err(Error::Format(format!(
                "expected a {kind} checkpoint, found {}",
                self.header.kind
            )));
        }
        Ok(())
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], values: &[f64]) {
        let name = name.into();
        assert_eq!(shape.iter().product::<usize>(), values.len(), "tensor {name} shape mismatch");
        self.header.tensors.push(TensorEntry {
            name,
            shape: shape.to_vec(),
            offset: self.data.len(),
        });
        self.data.extend_from_slice(values);
    }

    pub fn has(&self, name: &str) -> bool {
        self.header.tensors.iter().any(|t| t.name == name)
    }

    pub fn tensor(&self, name: &str) -> Result<&[f64]> {
        let e = self
            .header
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no tensor {name:?}")))?;
        Ok(&self.data[e.offset..e.offset + e.len()])
    }

    pub fn read_into(&self, name: &str, dst: &mut [f64]) -> Result<()> {
        let src = self.tensor(name)?;
        if src.len() != dst.len() {
            return Err(Error::Format(format!(
                "tensor {name:?} has {} values, model expects {}",
                src.len(),
                dst.len()
            )));
        }
        dst.copy_from_slice(src);
        Ok(())
    }

    pub fn push_params(&mut self, prefix: &str, params: Vec<(String, &Param)>) {
        for (name, p) in params {
            self.push(format!("{prefix}.{name}"), &p.shape, &p.value);
        }
    }

    /// `names` and `params` must come from the same model, in the same order.
    pub fn load_params(&self, prefix: &str, names: Vec<String>, params: Vec<&mut Param>) -> Result<()> {
        if names.len() != params.len() {
            return Err(Error::Format("parameter name/count mismatch".into()));
        }
        for (name, p) in names.into_iter().zip(params) {
            self.read_into(&format!("{prefix}.{name}"), &mut p.value)?;
        }
        Ok(())
    }

    pub fn push_norms(&mut self, prefix: &str, norms: Vec<(String, &mut BatchNorm2d)>) {
        for (name, bn) in norms {
            let c = bn.running_mean.len();
            self.push(format!("{prefix}.{name}.running_mean"), &[c], &bn.running_mean);
            self.push(format!("{prefix}.{name}.running_var"), &[c], &bn.running_var);
        }
    }

    pub fn load_norms(&self, prefix: &str, norms: Vec<(String, &mut BatchNorm2d)>) -> Result<()> {
        for (name, bn) in norms {
            self.read_into(&format!("{prefix}.{name}.running_mean"), &mut bn.running_mean)?;
            self.read_into(&format!("{prefix}.{name}.running_var"), &mut bn.running_var)?;
        }
        Ok(())
    }

    pub fn push_adam(&mut self, prefix: &str, opt: &Adam) {
        self.push(format!("{prefix}.step"), &[1], &[opt.step as f64]);
        for (i, (m, v)) in opt.m.iter().zip(&opt.v).enumerate() {
            self.push(format!("{prefix}.m.{i}"), &[m.len()], m);
            self.push(format!("{prefix}.v.{i}"), &[v.len()], v);
        }
    }

    pub fn load_adam(&self, prefix: &str, opt: &mut Adam) -> Result<()> {
        opt.step = self.tensor(&format!("{prefix}.step"))?[0] as u64;
        for i in 0..opt.m.len() {
            self.read_into(&format!("{prefix}.m.{i}"), &mut opt.m[i])?;
            self.read_into(&format!("{prefix}.v.{i}"), &mut opt.v[i])?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(20 + header.len() + 8 * self.data.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| Error::Format("truncated checkpoint".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4).map_err(|_| Error::Format("truncated checkpoint".into()))?;
        let version = u32::from_le_bytes(b4);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        r.read_exact(&mut b8).map_err(|_| Error::Format("truncated checkpoint".into()))?;
        let hlen = u64::from_le_bytes(b8) as usize;
        if r.len() < hlen {
            return Err(Error::Format("truncated checkpoint header".into()));
        }
        let header: CheckpointHeader = serde_json::from_slice(&r[..hlen])?;
        let body = &r[hlen..];
        if body.len() % 8 != 0 {
            return Err(Error::Format("checkpoint data is not a whole number of f64 values".into()));
        }
        let data: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        for t in &header.tensors {
            if t.offset + t.len() > data.len() {
                return Err(Error::Format(format!("tensor {:?} runs past the data section", t.name)));
            }
        }
        Ok(Checkpoint { header, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.to_bytes()?)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_roundtrip_is_exact() {
        let mut c = Checkpoint::new("predictor", &serde_json::json!({"n": 3}), 4).unwrap();
        c.push("a", &[2, 2], &[0.1, -0.0, f64::MIN_POSITIVE, 1e300]);
        c.push("b", &[1], &[std::f64::consts::PI]);
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.tensor("a").unwrap()[1].to_bits(), (-0.0f64).to_bits());
        assert!(back.tensor("zzz").is_err());
        let mut bad = c.to_bytes().unwrap();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let bytes = c.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
