//! Binary parameter container shared by student and expert checkpoints.
//!
//! Layout:
//!
//! ```text
//! magic    8 bytes  "XEMBCKPT"
//! version  u32 LE   currently 1
//! hlen     u64 LE   byte length of the header
//! header   hlen     UTF-8 TOML: kind, config table, [[tensor]] name/shape
//! payload           every tensor in header order, f32 LE, row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Layout;

pub const MAGIC: &[u8; 8] = b"XEMBCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    config: toml::Table,
    tensor: Vec<TensorHeader>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config: toml::Table,
    pub tensors: Vec<(TensorHeader, Vec<f32>)>,
}

impl Checkpoint {
    /// Packs `params` according to `layout`.
    pub fn from_params(kind: &str, config: toml::Table, layout: &Layout, params: &[f64]) -> Self {
        let tensors = layout
            .tensors
            .iter()
            .map(|t| {
                let data = params[t.range.clone()].iter().map(|&v| v as f32).collect();
                (TensorHeader { name: t.name.clone(), shape: t.shape.clone() }, data)
            })
            .collect();
        Checkpoint { kind: kind.into(), config, tensors }
    }

    /// Unpacks into a flat vector, checking names and shapes against `layout`.
    pub fn to_params(&self, layout: &Layout) -> Result<Vec<f64>> {
        if self.tensors.len() != layout.tensors.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, architecture expects {}",
                self.tensors.len(),
                layout.tensors.len()
            )));
        }
        let mut out = vec![0.0; layout.len];
        for ((h, data), spec) in self.tensors.iter().zip(&layout.tensors) {
            if h.name != spec.name || h.shape != spec.shape {
                return Err(Error::Format(format!(
                    "tensor {} {:?} does not match {} {:?}",
                    h.name, h.shape, spec.name, spec.shape
                )));
            }
            for (o, &v) in out[spec.range.clone()].iter_mut().zip(data) {
                *o = v as f64;
            }
        }
        Ok(out)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let header = Header {
            kind: self.kind.clone(),
            config: self.config.clone(),
            tensor: self.tensors.iter().map(|(h, _)| h.clone()).collect(),
        };
        let text = toml::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(text.len() as u64).to_le_bytes())?;
        w.write_all(text.as_bytes())?;
        for (_, data) in &self.tensors {
            let mut buf = Vec::with_capacity(data.len() * 4);
            for v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let hlen = u64::from_le_bytes(b8) as usize;
        let mut text = vec![0u8; hlen];
        r.read_exact(&mut text)?;
        let text = String::from_utf8(text).map_err(|e| Error::Format(e.to_string()))?;
        let header: Header = toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        let mut tensors = Vec::with_capacity(header.tensor.len());
        for h in header.tensor {
            let n: usize = h.shape.iter().product();
            let mut buf = vec![0u8; n * 4];
            r.read_exact(&mut buf)?;
            let data = buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            tensors.push((h, data));
        }
        Ok(Checkpoint { kind: header.kind, config: header.config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

/// Serializes any config struct into a TOML table for the header.
pub fn config_table<T: Serialize>(cfg: &T) -> Result<toml::Table> {
    toml::Table::try_from(cfg).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    #[test]
    fn round_trips_through_bytes() {
        let mut layout = Layout::default();
        layout.mlp("net", &[2, 3, 1], Activation::Elu, Activation::Identity);
        let params: Vec<f64> = (0..layout.len).map(|i| i as f64 * 0.25 - 1.0).collect();
        let mut cfg = toml::Table::new();
        cfg.insert("width".into(), toml::Value::Integer(3));
        let ck = Checkpoint::from_params("test", cfg, &layout, &params);
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let back = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_params(&layout).unwrap(), params);
    }

    #[test]
    fn rejects_bad_magic_and_mismatched_layout() {
        assert!(matches!(Checkpoint::read_from(&mut &b"NOPE0000"[..]), Err(Error::Format(_))));
        let mut a = Layout::default();
        a.mlp("net", &[2, 3, 1], Activation::Elu, Activation::Identity);
        let mut b = Layout::default();
        b.mlp("net", &[2, 4, 1], Activation::Elu, Activation::Identity);
        let ck = Checkpoint::from_params("t", toml::Table::new(), &a, &vec![0.0; a.len]);
        assert!(ck.to_params(&b).is_err());
    }
}
