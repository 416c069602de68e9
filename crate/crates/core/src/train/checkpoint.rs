//! Versioned binary checkpoints.
//!
//! Layout (little endian): magic `GRASPCKP`, `u32` version, `u64`
//! iteration, `u64` length + UTF-8 JSON run config, `u32` parameter count,
//! then per parameter: `u32` name length + name, `u8` group, `u32` rank,
//! `u64` dims, `f64` values, `f64` momentum buffer. Floats are stored as raw
//! bits so a round trip is exact.

use std::io::{Read, Write};
use std::path::Path;

use super::RunConfig;
use crate::autodiff::{ParamGroup, Tensor};
use crate::error::{GraspError, Result};
use crate::model::Model;

const MAGIC: &[u8; 8] = b"GRASPCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SavedParam {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
    pub velocity: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: usize,
    /// Config echo; `model` holds the resolved anchor size.
    pub config: RunConfig,
    pub params: Vec<SavedParam>,
}

fn group_code(g: ParamGroup) -> u8 {
    match g {
        ParamGroup::Fe => 0,
        ParamGroup::Pgp => 1,
        ParamGroup::Scorer => 2,
    }
}

fn bad(msg: impl Into<String>) -> GraspError {
    GraspError::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(bad("truncated checkpoint"));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| bad("length overflow"))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| bad("length overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

impl Checkpoint {
    pub fn from_model(model: &Model, config: &RunConfig, iteration: usize) -> Self {
        let mut config = config.clone();
        config.model = model.config.clone();
        Self {
            iteration,
            config,
            params: model
                .params
                .iter()
                .map(|(_, p)| SavedParam {
                    name: p.name.clone(),
                    group: p.group,
                    value: p.value.clone(),
                    velocity: p.velocity.clone(),
                })
                .collect(),
        }
    }

    /// Rebuilds the model, including momentum buffers.
    pub fn to_model(&self) -> Result<Model> {
        let mut model = Model::new(self.config.model.clone())?;
        if model.params.len() != self.params.len() {
            return Err(bad(format!(
                "config implies {} parameters, checkpoint holds {}",
                model.params.len(),
                self.params.len()
            )));
        }
        for (p, s) in model.params.iter_mut().zip(&self.params) {
            if p.name != s.name || p.group != s.group || p.value.shape() != s.value.shape() {
                return Err(bad(format!(
                    "parameter {} {:?} {:?} does not match saved {} {:?} {:?}",
                    p.name,
                    p.group,
                    p.value.shape(),
                    s.name,
                    s.group,
                    s.value.shape()
                )));
            }
            p.value = s.value.clone();
            p.velocity = s.velocity.clone();
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.iteration as u64).to_le_bytes());
        let cfg = serde_json::to_vec(&self.config).expect("config serializes");
        out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
        out.extend_from_slice(&cfg);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.push(group_code(p.group));
            out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for t in [&p.value, &p.velocity] {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes };
        if r.take(8)? != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let iteration = r.len()?;
        let n = r.len()?;
        let config: RunConfig = serde_json::from_slice(r.take(n)?)?;
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| bad("parameter name is not UTF-8"))?;
            let group = match r.u8()? {
                0 => ParamGroup::Fe,
                1 => ParamGroup::Pgp,
                2 => ParamGroup::Scorer,
                g => return Err(bad(format!("unknown group code {g}"))),
            };
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| bad("shape overflow"))?;
            let value = Tensor::new(&shape, r.f64s(numel)?)?;
            let velocity = Tensor::new(&shape, r.f64s(numel)?)?;
            params.push(SavedParam {
                name,
                group,
                value,
                velocity,
            });
        }
        if !r.buf.is_empty() {
            return Err(bad(format!("{} trailing bytes", r.buf.len())));
        }
        Ok(Self {
            iteration,
            config,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}
