//! Self-describing binary checkpoint: format version, the model
//! configuration, and every parameter as (dotted name, shape, f64 values),
//! little-endian throughout.

use crate::ioutil::atomic_write;
use crate::model::{FastModel, ModelConfig, ModelParams};
use crate::tensor::Tensor;
use crate::{Error, Result};
use std::path::Path;

const MAGIC: &[u8] = b"FSTC1\n";
const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn of(model: &FastModel) -> Self {
        Checkpoint { config: model.config.clone(), params: model.params.clone() }
    }

    pub fn into_model(self) -> Result<FastModel> {
        FastModel::from_parts(self.config, self.params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let c = &self.config;
        for v in [
            c.nodes,
            c.input_steps,
            c.horizon,
            c.dim,
            c.experts,
            c.agents,
            c.layers,
            c.steps_per_day,
            c.days_per_week,
        ] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        out.push(c.ha_router as u8);
        let entries = self.params.entries();
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for (name, tensor) in entries {
            let bytes = name.as_bytes();
            out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
            out.extend_from_slice(bytes);
            out.push(tensor.ndim() as u8);
            for &d in &tensor.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &tensor.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        atomic_write(path, &out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut r = Reader { bytes: &bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(r.err_at(0, "missing FSTC1 magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.err_here(format!("unsupported checkpoint version {version}")));
        }
        let mut dims = [0usize; 9];
        for d in dims.iter_mut() {
            *d = r.u64()? as usize;
        }
        let ha_router = r.u8()? != 0;
        let config = ModelConfig {
            nodes: dims[0],
            input_steps: dims[1],
            horizon: dims[2],
            dim: dims[3],
            experts: dims[4],
            agents: dims[5],
            layers: dims[6],
            steps_per_day: dims[7],
            days_per_week: dims[8],
            ha_router,
        };
        let count = r.u32()? as usize;
        let mut named = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| r.err_here("parameter name is not utf-8"))?
                .to_string();
            let ndim = r.u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
            }
            named.push((name, Tensor::from_vec(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(r.err_here(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let params = ModelParams::from_named(&config, named)?;
        Ok(Checkpoint { config, params })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.err_here("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn err_here(&self, msg: impl Into<String>) -> Error {
        self.err_at(self.pos, msg)
    }

    fn err_at(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::Parse { offset, msg: msg.into() }
    }
}
