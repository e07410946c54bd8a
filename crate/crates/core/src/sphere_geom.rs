//! Unit-sphere geometry: validated unit vectors, uniform sampling, the
//! Householder reflection that carries the north pole `e₁` onto a mean
//! direction, and great-circle interpolation.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Norms at or below this are treated as zero.
pub const DEGENERATE_NORM: f64 = 1e-12;
/// Tolerated deviation of `‖v‖` from one.
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// A point on `S^{m-1} ⊂ R^m`, `m >= 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Wraps `coords` after checking it is unit-norm to within `tolerance`.
    pub fn from_unit(coords: Vec<f64>, tolerance: f64) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: coords.len(),
            });
        }
        let norm = norm(&coords);
        if !((norm - 1.0).abs() <= tolerance) {
            return Err(Error::NotUnit { norm });
        }
        Ok(Self(coords))
    }

    /// North pole `e₁` of `S^{m-1}`.
    pub fn north_pole(m: usize) -> Result<Self> {
        let mut coords = vec![0.0; m];
        if let Some(first) = coords.first_mut() {
            *first = 1.0;
        }
        Self::from_unit(coords, UNIT_TOLERANCE)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    /// Angle to `other` in radians.
    pub fn angle_to(&self, other: &UnitVector) -> f64 {
        self.dot(&other.0).clamp(-1.0, 1.0).acos()
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `v / ‖v‖`.
pub fn normalize(v: &[f64]) -> Result<UnitVector> {
    if v.len() < 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: v.len(),
        });
    }
    let n = norm(v);
    if !(n > DEGENERATE_NORM) {
        return Err(Error::DegenerateVector {
            norm: n,
            threshold: DEGENERATE_NORM,
        });
    }
    Ok(UnitVector(v.iter().map(|x| x / n).collect()))
}

/// Uniform draw on `S^{m-1}` by normalizing a standard normal vector.
pub fn sample_uniform<R: Rng + ?Sized>(rng: &mut R, m: usize) -> Result<UnitVector> {
    if m < 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: m,
        });
    }
    let mut buf = vec![0.0; m];
    loop {
        for x in buf.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        if let Ok(u) = normalize(&buf) {
            return Ok(u);
        }
    }
}

/// `(I - 2uuᵀ) x` with `u = (e₁ - μ) / ‖e₁ - μ‖`; maps `e₁` to `μ`.
pub fn householder_apply(mu: &UnitVector, x: &[f64]) -> Result<Vec<f64>> {
    let mut out = x.to_vec();
    householder_apply_in_place(mu.as_slice(), &mut out)?;
    Ok(out)
}

pub(crate) fn householder_apply_in_place(mu: &[f64], x: &mut [f64]) -> Result<()> {
    if mu.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: mu.len(),
            got: x.len(),
        });
    }
    let Some(r2) = householder_axis_norm2(mu) else {
        return Ok(());
    };
    // r = e₁ - μ
    let r_dot_x = x[0] - dot(mu, x);
    let scale = 2.0 * r_dot_x / r2;
    x[0] -= scale;
    for (xi, mi) in x.iter_mut().zip(mu) {
        *xi += scale * mi;
    }
    Ok(())
}

/// `‖e₁ - μ‖²`, or `None` when `μ` is numerically the north pole.
pub(crate) fn householder_axis_norm2(mu: &[f64]) -> Option<f64> {
    let d0 = 1.0 - mu[0];
    let r2 = d0 * d0 + mu[1..].iter().map(|m| m * m).sum::<f64>();
    (r2.sqrt() >= DEGENERATE_NORM).then_some(r2)
}

/// Great-circle interpolation from `a` (t = 0) to `b` (t = 1).
pub fn slerp(a: &UnitVector, b: &UnitVector, t: f64) -> Result<UnitVector> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    if !t.is_finite() {
        return Err(Error::domain("slerp parameter must be finite", t));
    }
    let cos = a.dot(&b.0).clamp(-1.0, 1.0);
    if cos <= -1.0 + UNIT_TOLERANCE {
        return Err(Error::Antipodal);
    }
    let theta = cos.acos();
    if theta == 0.0 {
        return Ok(a.clone());
    }
    if theta < 1e-7 {
        let mixed: Vec<f64> =
            a.0.iter()
                .zip(&b.0)
                .map(|(x, y)| (1.0 - t) * x + t * y)
                .collect();
        return normalize(&mixed);
    }
    let sin = theta.sin();
    let wa = ((1.0 - t) * theta).sin() / sin;
    let wb = (t * theta).sin() / sin;
    let coords: Vec<f64> = a.0.iter().zip(&b.0).map(|(x, y)| wa * x + wb * y).collect();
    // renormalize away rounding drift
    normalize(&coords)
}
