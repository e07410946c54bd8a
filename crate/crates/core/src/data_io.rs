//! Binary image datasets.
//!
//! Sources: IDX files (the MNIST container), raw `uint8` matrices with a
//! `<name>.meta` sidecar holding `n h w`, and a synthetic shape generator.
//! Grey levels are turned into a fixed ("static") binarization once, with a
//! seed that is independent of the training seed.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

/// Default seed for the one-time Bernoulli binarization.
pub const DEFAULT_BINARIZATION_SEED: u64 = 1337;
pub const IDX_MAGIC_IMAGES: u32 = 0x0000_0803;
pub const IDX_MAGIC_LABELS: u32 = 0x0000_0801;

/// Intensities in `[0, 1]`, one image per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMatrix {
    pub pixels: Array2<f64>,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Full,
    Train,
    Validation,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Full => "full",
            SplitTag::Train => "train",
            SplitTag::Validation => "val",
        }
    }
}

/// `N × (h·w)` matrix of exact zeros and ones.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryImageDataset {
    pub images: Array2<f64>,
    pub height: usize,
    pub width: usize,
    pub split: SplitTag,
}

impl BinaryImageDataset {
    pub fn new(images: Array2<f64>, height: usize, width: usize) -> Result<Self> {
        if images.ncols() != height * width {
            return Err(Error::Data(format!(
                "{} columns do not match {height}x{width} images",
                images.ncols()
            )));
        }
        if images.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data("dataset entries must be exactly 0 or 1".into()));
        }
        Ok(Self {
            images,
            height,
            width,
            split: SplitTag::Full,
        })
    }

    pub fn len(&self) -> usize {
        self.images.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixels per image.
    pub fn dim(&self) -> usize {
        self.images.ncols()
    }

    pub fn select(&self, rows: &[usize], split: SplitTag) -> Self {
        Self {
            images: self.images.select(ndarray::Axis(0), rows),
            height: self.height,
            width: self.width,
            split,
        }
    }

    /// First `n` images (or all of them).
    pub fn truncate(&self, n: usize) -> Self {
        let rows: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&rows, self.split)
    }

    /// Seeded split into `(train, validation)` with `round(N · val_fraction)`
    /// validation images (at least one when `N >= 2`). Both halves keep the
    /// original row order.
    pub fn train_val_split(&self, seed: u64, val_fraction: f64) -> (Self, Self) {
        let n = self.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(seed, "split", 0));
        let mut n_val = (n as f64 * val_fraction).round() as usize;
        if n >= 2 {
            n_val = n_val.clamp(1, n - 1);
        }
        let (val, train) = order.split_at(n_val.min(n));
        let (mut val, mut train) = (val.to_vec(), train.to_vec());
        val.sort_unstable();
        train.sort_unstable();
        (
            self.select(&train, SplitTag::Train),
            self.select(&val, SplitTag::Validation),
        )
    }
}

/// Parses an IDX file (`0x00000803` images or `0x00000801` labels), scaling
/// bytes to `[0, 1]`. Labels come back as an `N × 1` matrix.
pub fn parse_idx(bytes: &[u8]) -> Result<ImageMatrix> {
    let read_u32 = |offset: usize| -> Result<u32> {
        bytes
            .get(offset..offset + 4)
            .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| Error::Truncated {
                offset: bytes.len(),
                needed: offset + 4 - bytes.len(),
            })
    };
    let magic = read_u32(0)?;
    let ndims = match magic {
        IDX_MAGIC_IMAGES => 3,
        IDX_MAGIC_LABELS => 1,
        _ => return Err(Error::BadMagic { magic }),
    };
    let mut dims = Vec::with_capacity(ndims);
    let mut total: usize = 1;
    for i in 0..ndims {
        let offset = 4 + 4 * i;
        let d = read_u32(offset)? as usize;
        total = total
            .checked_mul(d)
            .ok_or(Error::DimensionOverflow { offset })?;
        dims.push(d);
    }
    let header = 4 + 4 * ndims;
    let end = header
        .checked_add(total)
        .ok_or(Error::DimensionOverflow { offset: header })?;
    if bytes.len() < end {
        return Err(Error::Truncated {
            offset: bytes.len(),
            needed: end - bytes.len(),
        });
    }
    let (rows, height, width) = if ndims == 3 {
        (dims[0], dims[1], dims[2])
    } else {
        (dims[0], 1, 1)
    };
    let pixels = Array2::from_shape_vec(
        (rows, height * width),
        bytes[header..end]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect(),
    )
    .expect("sizes checked above");
    Ok(ImageMatrix {
        pixels,
        height,
        width,
    })
}

pub fn load_idx(path: &Path) -> Result<ImageMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes)
}

/// Loads `<name>.u8` (row-major bytes) described by `<name>.meta` (`n h w`).
/// Files holding only 0/1 bytes are taken as already binary; anything else is
/// scaled by 1/255.
pub fn load_raw_u8(path: &Path) -> Result<ImageMatrix> {
    let meta_path = path.with_extension("meta");
    let meta = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let fields: Vec<usize> = meta
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| {
            Error::Data(format!(
                "{}: expected three integers `n h w`",
                meta_path.display()
            ))
        })?;
    let [n, h, w] = fields[..] else {
        return Err(Error::Data(format!(
            "{}: expected three integers `n h w`",
            meta_path.display()
        )));
    };
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = n
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or(Error::DimensionOverflow { offset: 0 })?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            offset: bytes.len(),
            needed: expected - bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Data(format!(
            "{}: {} bytes but meta says {expected}",
            path.display(),
            bytes.len()
        )));
    }
    let scale = if bytes.iter().all(|&b| b <= 1) {
        1.0
    } else {
        255.0
    };
    let pixels = Array2::from_shape_vec(
        (n, h * w),
        bytes.iter().map(|&b| b as f64 / scale).collect(),
    )
    .expect("sizes checked above");
    Ok(ImageMatrix {
        pixels,
        height: h,
        width: w,
    })
}

/// One Bernoulli draw per pixel with the intensity as probability.
pub fn binarize_static(images: &ImageMatrix, seed: u64) -> Result<BinaryImageDataset> {
    if let Some(v) = images.pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Data(format!("intensity {v} outside [0, 1]")));
    }
    let mut rng = rng::stream(seed, "binarize", 0);
    let images_bin = images.pixels.mapv(|p| {
        let u: f64 = rng.random();
        if u < p {
            1.0
        } else {
            0.0
        }
    });
    BinaryImageDataset::new(images_bin, images.height, images.width)
}

/// Renders `n` images each holding one axis-aligned filled rectangle or
/// cross with random centre, half-width and half-height.
pub fn synthetic_blobs(n: usize, height: usize, width: usize, seed: u64) -> BinaryImageDataset {
    let mut rng = rng::stream(seed, "blobs", 0);
    let mut images = Array2::zeros((n, height * width));
    let half_range = |dim: usize| {
        let max = ((dim.saturating_sub(1)) / 2).min((dim / 4).max(1));
        (max.min(1), max)
    };
    let (hw_lo, hw_hi) = half_range(width);
    let (hh_lo, hh_hi) = half_range(height);
    for mut row in images.rows_mut() {
        let cross = rng.random::<bool>();
        let hw = rng.random_range(hw_lo..=hw_hi);
        let hh = rng.random_range(hh_lo..=hh_hi);
        let cx = rng.random_range(hw..=width - 1 - hw);
        let cy = rng.random_range(hh..=height - 1 - hh);
        for y in cy - hh..=cy + hh {
            for x in cx - hw..=cx + hw {
                if !cross || x == cx || y == cy {
                    row[y * width + x] = 1.0;
                }
            }
        }
    }
    BinaryImageDataset {
        images,
        height,
        width,
        split: SplitTag::Full,
    }
}

/// Shuffled index batches; the order is a pure function of `(seed, epoch)`
/// and the final short batch is kept.
pub fn batches(len: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng::stream(seed, "batches", epoch));
    order
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}
