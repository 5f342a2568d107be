//! Binary checkpoints.
//!
//! Layout (all integers `u32` little-endian, all reals `f64` little-endian):
//!
//! ```text
//! magic    8 bytes  "SDORECKP"
//! version  u32      1
//! kind     u32      0 = network, 1 = ensemble
//! K        u32      member count (1 for a network)
//! per member:
//!   n_dims u32, then n_dims × u32 layer widths
//! ensemble only:
//!   K × f64 logits
//! per member, per layer ℓ:
//!   weight ℓ row-major (N_{ℓ+1} × N_ℓ values), then bias ℓ (N_{ℓ+1} values)
//! ```
//!
//! The file must end exactly after the last bias.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{Ensemble, Model, ReQUNetwork};
use crate::error::{Result, SdoreError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SDORECKP";
pub const CHECKPOINT_VERSION: u32 = 1;

const KIND_NETWORK: u32 = 0;
const KIND_ENSEMBLE: u32 = 1;
/// Guards against absurd allocations from corrupt headers.
const MAX_WIDTH: u32 = 1 << 20;
const MAX_LAYERS: u32 = 1 << 10;

pub fn encode(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let (kind, members, logits): (u32, Vec<&ReQUNetwork>, Option<&Array2<f64>>) = match model {
        Model::Network(n) => (KIND_NETWORK, vec![n], None),
        Model::Ensemble(e) => (KIND_ENSEMBLE, e.members().iter().collect(), Some(e.logits())),
    };
    out.extend_from_slice(&kind.to_le_bytes());
    out.extend_from_slice(&(members.len() as u32).to_le_bytes());
    for m in &members {
        out.extend_from_slice(&(m.layer_dims().len() as u32).to_le_bytes());
        for &n in m.layer_dims() {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
    }
    if let Some(l) = logits {
        for v in l.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for m in &members {
        for p in m.parameters() {
            for v in p.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(SdoreError::Parse {
                section: section.to_string(),
                message: format!(
                    "truncated: needed {n} bytes at offset {}, {} left",
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, section: &str) -> Result<u32> {
        let b = self.take(4, section)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, count: usize, section: &str) -> Result<Vec<f64>> {
        let b = self.take(count * 8, section)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "header")? != CHECKPOINT_MAGIC {
        return Err(SdoreError::Parse {
            section: "header".into(),
            message: "bad magic string".into(),
        });
    }
    let version = r.u32("header")?;
    if version != CHECKPOINT_VERSION {
        return Err(SdoreError::Parse {
            section: "header".into(),
            message: format!("unsupported version {version}"),
        });
    }
    let kind = r.u32("header")?;
    let k = r.u32("header")?;
    if kind != KIND_NETWORK && kind != KIND_ENSEMBLE {
        return Err(SdoreError::Parse {
            section: "header".into(),
            message: format!("unknown model kind {kind}"),
        });
    }
    if k == 0 || (kind == KIND_NETWORK && k != 1) || k > MAX_LAYERS {
        return Err(SdoreError::Parse {
            section: "header".into(),
            message: format!("invalid member count {k} for kind {kind}"),
        });
    }

    let mut all_dims = Vec::with_capacity(k as usize);
    for j in 0..k {
        let section = format!("layer_dims of member {j}");
        let n = r.u32(&section)?;
        if n > MAX_LAYERS {
            return Err(SdoreError::Parse {
                section,
                message: format!("{n} layer widths is implausible"),
            });
        }
        let mut dims = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let w = r.u32(&section)?;
            if w > MAX_WIDTH {
                return Err(SdoreError::Parse {
                    section,
                    message: format!("width {w} is implausible"),
                });
            }
            dims.push(w as usize);
        }
        all_dims.push(dims);
    }

    let logits = if kind == KIND_ENSEMBLE {
        let v = r.f64s(k as usize, "ensemble logits")?;
        Some(Array2::from_shape_vec((1, k as usize), v).expect("logit row"))
    } else {
        None
    };

    let mut members = Vec::with_capacity(k as usize);
    for (j, dims) in all_dims.into_iter().enumerate() {
        if dims.len() < 2 {
            return Err(SdoreError::Validation(format!(
                "member {j}: layer_dims {dims:?} is not a shape chain"
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, pair) in dims.windows(2).enumerate() {
            let section = format!("member {j} layer {l} weights");
            let w = r.f64s(pair[0] * pair[1], &section)?;
            weights.push(Array2::from_shape_vec((pair[1], pair[0]), w).expect("weight block"));
            let section = format!("member {j} layer {l} bias");
            let b = r.f64s(pair[1], &section)?;
            biases.push(Array2::from_shape_vec((1, pair[1]), b).expect("bias row"));
        }
        members.push(ReQUNetwork::from_parts(dims, weights, biases)?);
    }

    if r.pos != bytes.len() {
        return Err(SdoreError::Parse {
            section: "trailer".into(),
            message: format!("{} unexpected trailing bytes", bytes.len() - r.pos),
        });
    }

    match logits {
        None => Ok(Model::Network(members.pop().expect("one member"))),
        Some(l) => Ok(Model::Ensemble(
            Ensemble::from_logits(members, l).map_err(|e| SdoreError::Validation(e.to_string()))?,
        )),
    }
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model)).map_err(|e| SdoreError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| SdoreError::io(path, e))?;
    decode(&bytes)
}
