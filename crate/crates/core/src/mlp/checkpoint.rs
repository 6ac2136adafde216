//! `.hdgm` checkpoints (little-endian):
//! magic `HDGM`, version u32 = 1, D, H1, H2, K as u32, dropout_p as f32,
//! class-name table (u32 count, then u32 byte length + UTF-8 per name), then
//! W1, b1, γ1, β1, μ1, v1, W2, b2, γ2, β2, μ2, v2, W3, b3 as row-major f32.

use std::fs;
use std::path::Path;

use super::{Mlp, MlpArch};
use crate::error::{Error, IoContext, Result};

pub const MAGIC: &[u8; 4] = b"HDGM";
pub const VERSION: u32 = 1;

/// A trained classifier together with the class names it predicts.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Mlp,
    pub class_names: Vec<String>,
}

impl Checkpoint {
    pub fn new(model: Mlp, class_names: Vec<String>) -> Result<Self> {
        if class_names.len() != model.arch.num_classes {
            return Err(Error::Schema(format!(
                "{} class names for a {}-class model",
                class_names.len(),
                model.arch.num_classes
            )));
        }
        Ok(Self { model, class_names })
    }

    pub fn encode(&self) -> Vec<u8> {
        let arch = self.model.arch;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            arch.input_dim as u32,
            arch.hidden[0] as u32,
            arch.hidden[1] as u32,
            arch.num_classes as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(arch.dropout_p as f32).to_le_bytes());
        out.extend_from_slice(&(self.class_names.len() as u32).to_le_bytes());
        for name in &self.class_names {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        }
        for t in self.model.all_tensors() {
            for &v in t {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not an HDGM checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let input_dim = r.u32()? as usize;
        let h1 = r.u32()? as usize;
        let h2 = r.u32()? as usize;
        let num_classes = r.u32()? as usize;
        let dropout_p = f64::from(r.f32()?);
        let arch = MlpArch {
            input_dim,
            hidden: [h1, h2],
            num_classes,
            dropout_p,
        };
        arch.validate()
            .map_err(|e| Error::Format(format!("checkpoint architecture: {e}")))?;
        let n_names = r.u32()? as usize;
        let mut class_names = Vec::with_capacity(n_names.min(256));
        for _ in 0..n_names {
            let len = r.u32()? as usize;
            let raw = r.take(len)?;
            let name = std::str::from_utf8(raw)
                .map_err(|_| Error::Format("class name is not UTF-8".into()))?;
            class_names.push(name.to_string());
        }
        let mut model = Mlp::init(arch, 0)?;
        for t in model.all_tensors_mut() {
            for v in t.iter_mut() {
                *v = f64::from(r.f32()?);
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint tensors",
                bytes.len() - r.pos
            )));
        }
        if model
            .all_tensors()
            .iter()
            .any(|t| t.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Data("checkpoint holds non-finite values".into()));
        }
        if model
            .hidden
            .iter()
            .any(|l| l.running_var.iter().any(|&v| v <= 0.0))
        {
            return Err(Error::Data(
                "checkpoint running variance must be positive".into(),
            ));
        }
        Self::new(model, class_names)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).at(path)?;
        Self::decode(&bytes)
    }
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
            .ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
