//! Binary checkpoint layout, all integers little-endian:
//!
//! ```text
//! "RFGM" | u32 version | u32 len | config JSON {"model", "frontend"}
//! u32 n_params, then per parameter:
//!     u16 name_len | name | u8 dtype (0 = f32, 1 = f64) | u8 frozen
//!     u8 rank | u32 dims[rank] | payload
//! u8 has_norm [| u32 planes | u32 bands | f64 mean[..] | f64 std[..]]
//! u32 len | metadata JSON
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{param_specs, ModelConfig, Precision};
use super::network::{Model, NormStats};
use super::{ModelError, Result};
use crate::dsp::FrontendConfig;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"RFGM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    frontend: FrontendConfig,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let header = serde_json::to_vec(&Header {
            model: self.config.clone(),
            frontend: self.frontend.clone(),
        })
        .expect("config serializes");
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);

        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        let f32_payload = self.config.precision == Precision::F32;
        for ((name, p), &frozen) in self.names.iter().zip(&self.params).zip(&self.frozen) {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(if f32_payload { 0 } else { 1 });
            out.push(frozen as u8);
            out.push(p.shape().len() as u8);
            for &d in p.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in p.data() {
                if f32_payload {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                } else {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }

        match &self.norm {
            None => out.push(0),
            Some(n) => {
                out.push(1);
                out.extend_from_slice(&(n.planes as u32).to_le_bytes());
                out.extend_from_slice(&(n.bands as u32).to_le_bytes());
                for v in n.mean.iter().chain(&n.std) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }

        let meta = serde_json::to_vec(&self.metadata).expect("metadata serializes");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(bad("bad checkpoint magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(len)?).map_err(|e| bad(format!("bad config block: {e}")))?;
        let config = header.model;
        config.validate()?;
        let specs = param_specs(&config);

        let n = r.u32()? as usize;
        if n != specs.len() {
            return Err(bad(format!("expected {} parameters, found {n}", specs.len())));
        }
        let mut params = Vec::with_capacity(n);
        let mut frozen = Vec::with_capacity(n);
        for (want_name, want_shape) in &specs {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| bad("parameter name is not UTF-8"))?
                .to_string();
            if &name != want_name {
                return Err(bad(format!("unexpected parameter {name} (expected {want_name})")));
            }
            let dtype = r.u8()?;
            frozen.push(r.u8()? != 0);
            let rank = r.u8()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            if &shape != want_shape {
                return Err(bad(format!(
                    "shape mismatch for parameter {name}: expected {want_shape:?}, found {shape:?}"
                )));
            }
            let count: usize = shape.iter().product();
            let data = match dtype {
                0 => r
                    .take(count * 4)?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
                1 => r
                    .take(count * 8)?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
                d => return Err(bad(format!("unknown dtype code {d} for parameter {name}"))),
            };
            params.push(Tensor::from_vec(shape, data)?);
        }

        let norm = match r.u8()? {
            0 => None,
            1 => {
                let planes = r.u32()? as usize;
                let bands = r.u32()? as usize;
                let k = planes * bands;
                let mean = (0..k).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                let std = (0..k).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                Some(NormStats {
                    planes,
                    bands,
                    mean,
                    std,
                })
            }
            f => return Err(bad(format!("bad normalization flag {f}"))),
        };

        let len = r.u32()? as usize;
        let metadata = serde_json::from_slice(r.take(len)?).map_err(|e| bad(format!("bad metadata: {e}")))?;
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes after checkpoint"));
        }
        Ok(Model {
            names: specs.into_iter().map(|(n, _)| n).collect(),
            config,
            frontend: header.frontend,
            params,
            frozen,
            norm,
            metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Model::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(bad("truncated checkpoint"));
        }
        let s = &self.buf[self.pos..self.pos + n];
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

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
