//! Products of independent hyperspheres `S^{k_1} × … × S^{k_n}`.
//!
//! A latent point is the concatenation of one unit vector per shell, in the
//! written order of the composition. Under a factorized posterior and the
//! product-of-uniforms prior, the joint log-density and the KL divergence are
//! both sums over shells.
//!
//! Compositions use a compact text form: `s` followed by `x`-separated sphere
//! dimensions, each optionally repeated with `*count`. `s20x10x6x1`,
//! `s10x9*3` and `s1*20` are all valid.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::special_math::log_unit_sphere_area;
use crate::vmf::{SampleStats, VmfDistribution};

/// Ordered sphere dimensions `[k_1, …, k_n]`; shell `i` lives in `R^{k_i + 1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CompositionSpec {
    dims: Vec<usize>,
}

impl CompositionSpec {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Parse {
                position: 0,
                message: "a composition needs at least one sphere".into(),
            });
        }
        if let Some(i) = dims.iter().position(|&k| k == 0) {
            return Err(Error::Parse {
                position: i,
                message: "sphere dimension must be >= 1".into(),
            });
        }
        Ok(Self { dims })
    }

    pub fn parse(text: &str) -> Result<Self> {
        parse_composition(text)
    }

    /// Sphere dimensions `k_i`.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Number of shells, i.e. concentration parameters.
    pub fn shell_count(&self) -> usize {
        self.dims.len()
    }

    /// `Σ (k_i + 1)`.
    pub fn ambient_dim(&self) -> usize {
        self.dims.iter().map(|k| k + 1).sum()
    }

    /// `Σ k_i`.
    pub fn dof(&self) -> usize {
        self.dims.iter().sum()
    }

    /// Ambient dimension `k_i + 1` of each shell.
    pub fn shell_ambient_dims(&self) -> impl Iterator<Item = usize> + '_ {
        self.dims.iter().map(|k| k + 1)
    }

    /// Coordinate range of each shell inside a concatenated latent vector.
    pub fn shell_ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.dims
            .iter()
            .map(|k| {
                let r = start..start + k + 1;
                start = r.end;
                r
            })
            .collect()
    }

    /// Log density of the product-of-uniforms prior (constant).
    pub fn log_uniform_density(&self) -> f64 {
        -self
            .shell_ambient_dims()
            .map(|m| log_unit_sphere_area(m).expect("m >= 2"))
            .sum::<f64>()
    }
}

impl fmt::Display for CompositionSpec {
    /// Canonical form: runs of equal dimensions collapse to `k*count`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("s")?;
        let mut i = 0;
        let mut first = true;
        while i < self.dims.len() {
            let k = self.dims[i];
            let run = self.dims[i..].iter().take_while(|&&d| d == k).count();
            if !first {
                f.write_str("x")?;
            }
            first = false;
            if run > 1 {
                write!(f, "{k}*{run}")?;
            } else {
                write!(f, "{k}")?;
            }
            i += run;
        }
        Ok(())
    }
}

impl FromStr for CompositionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_composition(s)
    }
}

/// Parses the composition grammar `s INT[*INT] (x INT[*INT])*`.
pub fn parse_composition(text: &str) -> Result<CompositionSpec> {
    let bytes = text.as_bytes();
    let err = |position: usize, message: &str| Error::Parse {
        position,
        message: message.to_string(),
    };
    if bytes.first() != Some(&b's') {
        return Err(err(0, "composition must start with 's'"));
    }
    let mut pos = 1;
    let mut dims = Vec::new();
    loop {
        let start = pos;
        let (k, k_pos) =
            read_int(bytes, &mut pos).ok_or_else(|| err(start, "expected a sphere dimension"))?;
        if k == 0 {
            return Err(err(k_pos, "sphere dimension must be >= 1"));
        }
        let mut count = 1;
        if bytes.get(pos) == Some(&b'*') {
            pos += 1;
            let start = pos;
            let (c, c_pos) = read_int(bytes, &mut pos)
                .ok_or_else(|| err(start, "expected a repetition count"))?;
            if c == 0 {
                return Err(err(c_pos, "repetition count must be >= 1"));
            }
            count = c;
        }
        if dims.len().saturating_add(count) > 1 << 20 {
            return Err(err(pos, "too many spheres"));
        }
        dims.extend(std::iter::repeat_n(k, count));
        match bytes.get(pos) {
            None => break,
            Some(b'x') => pos += 1,
            Some(_) => return Err(err(pos, "expected 'x', '*' or end of input")),
        }
    }
    CompositionSpec::new(dims)
}

fn read_int(bytes: &[u8], pos: &mut usize) -> Option<(usize, usize)> {
    let start = *pos;
    let mut value: usize = 0;
    while let Some(&c) = bytes.get(*pos) {
        if !c.is_ascii_digit() {
            break;
        }
        value = value.checked_mul(10)?.checked_add((c - b'0') as usize)?;
        *pos += 1;
    }
    (*pos > start).then_some((value, start))
}

/// A concatenated latent point together with its shell boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductSample {
    pub coords: Vec<f64>,
    pub shell_slices: Vec<Range<usize>>,
}

impl ProductSample {
    pub fn slice(&self, shell: usize) -> &[f64] {
        &self.coords[self.shell_slices[shell].clone()]
    }
}

/// Factorized posterior `q(z|x) = Π_i vMF(z_i; μ_i, κ_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductVmf {
    spec: CompositionSpec,
    shells: Vec<VmfDistribution>,
}

/// Total KL to the product-of-uniforms prior and its per-shell terms.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductKl {
    pub total: f64,
    pub per_shell: Vec<f64>,
}

impl ProductVmf {
    pub fn new(spec: CompositionSpec, shells: Vec<VmfDistribution>) -> Result<Self> {
        if shells.len() != spec.shell_count() {
            return Err(Error::DimensionMismatch {
                expected: spec.shell_count(),
                got: shells.len(),
            });
        }
        for (q, m) in shells.iter().zip(spec.shell_ambient_dims()) {
            if q.dim() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: q.dim(),
                });
            }
        }
        Ok(Self { spec, shells })
    }

    /// The product-of-uniforms prior.
    pub fn uniform(spec: CompositionSpec) -> Result<Self> {
        let shells = spec
            .shell_ambient_dims()
            .map(VmfDistribution::uniform)
            .collect::<Result<Vec<_>>>()?;
        Self::new(spec, shells)
    }

    pub fn spec(&self) -> &CompositionSpec {
        &self.spec
    }

    pub fn shells(&self) -> &[VmfDistribution] {
        &self.shells
    }

    /// Independent draw per shell, concatenated in composition order.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
    ) -> Result<(ProductSample, Vec<SampleStats>)> {
        let mut coords = Vec::with_capacity(self.spec.ambient_dim());
        let mut stats = Vec::with_capacity(self.shells.len());
        for q in &self.shells {
            let (z, proposals) = q.sample_one(rng)?;
            coords.extend_from_slice(z.as_slice());
            stats.push(SampleStats {
                accepted: 1,
                proposals,
            });
        }
        Ok((
            ProductSample {
                coords,
                shell_slices: self.spec.shell_ranges(),
            },
            stats,
        ))
    }

    /// `Σ_i log q_i(z_i)`.
    pub fn log_prob(&self, z: &ProductSample) -> Result<f64> {
        self.log_prob_coords(&z.coords)
    }

    pub fn log_prob_coords(&self, coords: &[f64]) -> Result<f64> {
        if coords.len() != self.spec.ambient_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.spec.ambient_dim(),
                got: coords.len(),
            });
        }
        self.shells
            .iter()
            .zip(self.spec.shell_ranges())
            .map(|(q, r)| q.log_prob(&coords[r]))
            .sum()
    }

    /// `KL(q ‖ Π Uniform) = Σ_i KL(q_i ‖ Uniform)`.
    pub fn kl(&self) -> ProductKl {
        let per_shell: Vec<f64> = self
            .shells
            .iter()
            .map(VmfDistribution::kl_to_uniform)
            .collect();
        ProductKl {
            total: per_shell.iter().sum(),
            per_shell,
        }
    }
}

pub fn product_sample<R: Rng + ?Sized>(q: &ProductVmf, rng: &mut R) -> Result<ProductSample> {
    Ok(q.sample(rng)?.0)
}

pub fn product_log_prob(q: &ProductVmf, z: &ProductSample) -> Result<f64> {
    q.log_prob(z)
}

pub fn product_kl(q: &ProductVmf) -> ProductKl {
    q.kl()
}
