//! Binary checkpoint container.
//!
//! ```text
//! "VCFM"                      4 bytes
//! version                     u32
//! config length, config JSON  u32, UTF-8
//! tensor count                u32
//! per tensor:
//!   name length, name         u16, UTF-8
//!   rank, extents             u32, rank x u64
//!   dtype                     u8 (0 = f32, 1 = f64)
//!   data                      row-major
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use vcformer::model::{Dtype, ModelParams};
use vcformer::tensor::Tensor;

use crate::config::RunConfig;
use crate::error::CliError;

pub const MAGIC: &[u8; 4] = b"VCFM";
pub const VERSION: u32 = 1;
pub const MEAN_TENSOR: &str = "data.mean";
pub const STD_TENSOR: &str = "data.std";

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub dtype: Dtype,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_json: String,
    pub tensors: Vec<StoredTensor>,
}

fn corrupt(msg: impl Into<String>) -> CliError {
    CliError::Runtime(vcformer::Error::Data(format!("corrupt checkpoint: {}", msg.into())))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CliError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, CliError> {
        Ok(self.array::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16, CliError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn utf8(&mut self, n: usize) -> Result<String, CliError> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("string is not UTF-8"))
    }
}

impl Checkpoint {
    /// Model parameters at the configured dtype plus the train statistics.
    pub fn new(run: &RunConfig, params: &ModelParams<Tensor>, mean: &[f64], std: &[f64]) -> Result<Self, CliError> {
        let mut tensors: Vec<StoredTensor> = params
            .to_named()
            .into_iter()
            .map(|(name, tensor)| StoredTensor { name, dtype: run.model.dtype, tensor })
            .collect();
        for (name, v) in [(MEAN_TENSOR, mean), (STD_TENSOR, std)] {
            tensors.push(StoredTensor {
                name: name.to_string(),
                dtype: Dtype::F64,
                tensor: Tensor::vector(v.to_vec())?,
            });
        }
        Ok(Checkpoint { config_json: run.to_json(), tensors })
    }

    pub fn run_config(&self) -> Result<RunConfig, CliError> {
        RunConfig::from_json(&self.config_json)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.tensor)
    }

    pub fn model_params(&self) -> Result<ModelParams<Tensor>, CliError> {
        let run = self.run_config()?;
        let named: Vec<(String, Tensor)> = self
            .tensors
            .iter()
            .filter(|t| !t.name.starts_with("data."))
            .map(|t| (t.name.clone(), t.tensor.clone()))
            .collect();
        Ok(ModelParams::from_named(&run.model, &named)?)
    }

    /// Per-channel train mean and standard deviation.
    pub fn stats(&self) -> Result<(Vec<f64>, Vec<f64>), CliError> {
        let get = |n: &str| {
            self.tensor(n)
                .map(|t| t.data().to_vec())
                .ok_or_else(|| corrupt(format!("missing {n}")))
        };
        Ok((get(MEAN_TENSOR)?, get(STD_TENSOR)?))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CliError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = self.config_json.as_bytes();
        let cfg_len = u32::try_from(cfg.len()).map_err(|_| corrupt("config too large"))?;
        out.extend_from_slice(&cfg_len.to_le_bytes());
        out.extend_from_slice(cfg);
        let count = u32::try_from(self.tensors.len()).map_err(|_| corrupt("too many tensors"))?;
        out.extend_from_slice(&count.to_le_bytes());
        for t in &self.tensors {
            let name = t.name.as_bytes();
            let name_len = u16::try_from(name.len()).map_err(|_| corrupt(format!("name too long: {}", t.name)))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name);
            let shape = t.tensor.shape();
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &e in shape {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            match t.dtype {
                Dtype::F32 => {
                    out.push(0);
                    for &v in t.tensor.data() {
                        out.extend_from_slice(&(v as f32).to_le_bytes());
                    }
                }
                Dtype::F64 => {
                    out.push(1);
                    for &v in t.tensor.data() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let cfg_len = r.u32()? as usize;
        let config_json = r.utf8(cfg_len)?;
        let count = r.u32()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = r.utf8(name_len)?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|e| e as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |a, &e| a.checked_mul(e))
                .ok_or_else(|| corrupt(format!("extents of {name} overflow")))?;
            let (dtype, data) = match r.u8()? {
                0 => {
                    let raw = r.take(len.checked_mul(4).ok_or_else(|| corrupt("size overflow"))?)?;
                    let data = raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
                        .collect();
                    (Dtype::F32, data)
                }
                1 => {
                    let raw = r.take(len.checked_mul(8).ok_or_else(|| corrupt("size overflow"))?)?;
                    let data = raw
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                        .collect();
                    (Dtype::F64, data)
                }
                tag => return Err(corrupt(format!("unknown dtype tag {tag} for {name}"))),
            };
            tensors.push(StoredTensor { name, dtype, tensor: Tensor::new(shape, data)? });
        }
        if r.pos != bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { config_json, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
