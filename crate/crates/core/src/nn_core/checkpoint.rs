//! Binary model container.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! magic      8 bytes  "SPHPVAE\0"
//! version    u32      1
//! spec       u32 length + UTF-8 bytes (composition string)
//! height     u32      image height
//! width      u32      image width
//! kappa_max  f64 LE
//! layers     u32 count, then per layer:
//!   name     u32 length + UTF-8 bytes
//!   rows     u32      fan-in
//!   cols     u32      fan-out
//!   weights  rows*cols f32 LE, row-major
//!   biases   cols f32 LE
//! ```

use std::path::Path;

use ndarray::{Array1, Array2};

use super::DenseLayer;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SPHPVAE\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerBlob {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f32>,
    pub biases: Vec<f32>,
}

impl LayerBlob {
    pub fn from_layer(layer: &DenseLayer) -> Self {
        Self {
            name: layer.name.clone(),
            rows: layer.inputs(),
            cols: layer.outputs(),
            weights: layer.weights.iter().map(|&w| w as f32).collect(),
            biases: layer.biases.iter().map(|&b| b as f32).collect(),
        }
    }

    pub fn to_layer(&self) -> Result<DenseLayer> {
        let mut layer = DenseLayer::zeros(self.name.clone(), self.rows, self.cols);
        layer.weights = Array2::from_shape_vec(
            (self.rows, self.cols),
            self.weights.iter().map(|&w| w as f64).collect(),
        )
        .map_err(|e| Error::Checkpoint(format!("layer {}: {e}", self.name)))?;
        layer.biases = Array1::from_iter(self.biases.iter().map(|&b| b as f64));
        if layer.biases.len() != self.cols {
            return Err(Error::Checkpoint(format!(
                "layer {}: bias length",
                self.name
            )));
        }
        Ok(layer)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: String,
    pub image_height: usize,
    pub image_width: usize,
    pub kappa_max: f64,
    pub layers: Vec<LayerBlob>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_str(&mut out, &self.spec);
        put_u32(&mut out, self.image_height as u32);
        put_u32(&mut out, self.image_width as u32);
        out.extend_from_slice(&self.kappa_max.to_le_bytes());
        put_u32(&mut out, self.layers.len() as u32);
        for layer in &self.layers {
            put_str(&mut out, &layer.name);
            put_u32(&mut out, layer.rows as u32);
            put_u32(&mut out, layer.cols as u32);
            for w in layer.weights.iter().chain(&layer.biases) {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(
                "not a sphereprod checkpoint (bad magic)".into(),
            ));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let spec = r.string()?;
        let image_height = r.u32()? as usize;
        let image_width = r.u32()? as usize;
        let kappa_max = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let count = r.u32()? as usize;
        let mut layers = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let name = r.string()?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let weights = r.f32s(
                rows.checked_mul(cols)
                    .ok_or_else(|| Error::Checkpoint("layer too large".into()))?,
            )?;
            let biases = r.f32s(cols)?;
            layers.push(LayerBlob {
                name,
                rows,
                cols,
                weights,
                biases,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after last layer",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            spec,
            image_height,
            image_width,
            kappa_max,
            layers,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
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
            .ok_or_else(|| {
                Error::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid UTF-8 string".into()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Checkpoint("layer too large".into()))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}
