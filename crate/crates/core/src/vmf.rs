//! The von Mises-Fisher distribution on `S^{m-1}`.
//!
//! Sampling follows Wood's rejection scheme for the component `w = μᵀz`,
//! followed by a uniform tangent direction and a Householder rotation onto
//! `μ`. Gradients with respect to `κ` are pathwise only: the accepted Beta
//! draw is held fixed and `w` is differentiated through `b(κ)`. The
//! score-function correction for the accept/reject step is not computed.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::special_math::{
    bessel_ratio, bessel_ratio_grad, log_scaled_bessel_i, log_unit_sphere_area, BesselOrder,
};
use crate::sphere_geom::{householder_apply_in_place, sample_uniform, UnitVector};

/// Tolerance on `‖z‖ - 1` accepted by [`VmfDistribution::log_prob`].
pub const LOG_PROB_UNIT_TOLERANCE: f64 = 1e-6;

fn check_kappa(kappa: f64) -> Result<()> {
    if !kappa.is_finite() || kappa < 0.0 {
        return Err(Error::domain("kappa must be finite and >= 0", kappa));
    }
    Ok(())
}

fn half_order(m: usize) -> Result<f64> {
    Ok(BesselOrder::for_ambient_dim(m)?.value())
}

/// `ln C_m(κ)`; at `κ = 0` this is the log density of the uniform law.
pub fn log_normalizer(m: usize, kappa: f64) -> Result<f64> {
    let v = half_order(m)?;
    check_kappa(kappa)?;
    // (m/2-1) ln κ - (m/2) ln 2π - ln I_v(κ), with ln Γ(m/2) and powers of two
    // cancelled against the sphere area
    Ok(-log_unit_sphere_area(m)? - log_scaled_bessel_i(v, kappa))
}

/// `KL(vMF(μ, κ) ‖ Uniform(S^{m-1}))`.
pub fn kl_to_uniform(m: usize, kappa: f64) -> Result<f64> {
    let v = half_order(m)?;
    check_kappa(kappa)?;
    if kappa == 0.0 {
        return Ok(0.0);
    }
    // κ A_m(κ) + ln C_m(κ) + ln |S^{m-1}|
    Ok(kappa * bessel_ratio(m, kappa)? - log_scaled_bessel_i(v, kappa))
}

/// `dKL/dκ = κ A'_m(κ)`; zero at `κ = 0`.
pub fn kl_grad_kappa(m: usize, kappa: f64) -> Result<f64> {
    half_order(m)?;
    check_kappa(kappa)?;
    if kappa == 0.0 {
        return Ok(0.0);
    }
    Ok(kappa * bessel_ratio_grad(m, kappa)?)
}

/// Differential entropy.
pub fn entropy(m: usize, kappa: f64) -> Result<f64> {
    check_kappa(kappa)?;
    let a = bessel_ratio(m, kappa)?;
    Ok(-kappa * a - log_normalizer(m, kappa)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VmfDistribution {
    mu: UnitVector,
    kappa: f64,
}

impl VmfDistribution {
    pub fn new(mu: UnitVector, kappa: f64) -> Result<Self> {
        check_kappa(kappa)?;
        Ok(Self { mu, kappa })
    }

    pub fn uniform(m: usize) -> Result<Self> {
        Self::new(UnitVector::north_pole(m)?, 0.0)
    }

    pub fn mu(&self) -> &UnitVector {
        &self.mu
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Ambient dimension `m`.
    pub fn dim(&self) -> usize {
        self.mu.dim()
    }

    pub fn log_normalizer(&self) -> f64 {
        log_normalizer(self.dim(), self.kappa).expect("validated at construction")
    }

    pub fn log_prob(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: z.len(),
            });
        }
        let n = crate::sphere_geom::norm(z);
        if !((n - 1.0).abs() <= LOG_PROB_UNIT_TOLERANCE) {
            return Err(Error::NotUnit { norm: n });
        }
        Ok(self.log_normalizer() + self.kappa * self.mu.dot(z))
    }

    pub fn mean_resultant_length(&self) -> f64 {
        bessel_ratio(self.dim(), self.kappa).expect("validated at construction")
    }

    pub fn kl_to_uniform(&self) -> f64 {
        kl_to_uniform(self.dim(), self.kappa).expect("validated at construction")
    }

    pub fn entropy(&self) -> f64 {
        entropy(self.dim(), self.kappa).expect("validated at construction")
    }

    /// Draws one sample and returns it with the number of proposals used.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(UnitVector, usize)> {
        let m = self.dim();
        if self.kappa == 0.0 {
            return Ok((sample_uniform(rng, m)?, 1));
        }
        let wood = WoodConstants::new(m, self.kappa)?;
        let (w, _, proposals) = wood.sample_accepted(rng);
        let mut z = tangent_lift(w, &sample_tangent(rng, m));
        householder_apply_in_place(self.mu.as_slice(), &mut z)?;
        Ok((crate::sphere_geom::normalize(&z)?, proposals))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<VmfSamples> {
        let mut samples = Vec::with_capacity(n);
        let mut proposals = 0;
        for _ in 0..n {
            let (z, p) = self.sample_one(rng)?;
            samples.push(z);
            proposals += p;
        }
        Ok(VmfSamples {
            samples,
            stats: SampleStats {
                accepted: n,
                proposals,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SampleStats {
    pub accepted: usize,
    pub proposals: usize,
}

impl SampleStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            1.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct VmfSamples {
    pub samples: Vec<UnitVector>,
    pub stats: SampleStats,
}

/// Constants of Wood's rejection sampler for `w = μᵀz` at `(m, κ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WoodConstants {
    pub b: f64,
    pub a: f64,
    pub d: f64,
    m: usize,
    root: f64,
}

impl WoodConstants {
    pub fn new(m: usize, kappa: f64) -> Result<Self> {
        if m < 2 {
            return Err(Error::domain("ambient dimension must be >= 2", m as f64));
        }
        check_kappa(kappa)?;
        let m1 = (m - 1) as f64;
        let root = (4.0 * kappa * kappa + m1 * m1).sqrt();
        // (-2κ + root) / (m-1), rationalized
        let b = m1 / (2.0 * kappa + root);
        let a = (m1 + 2.0 * kappa + root) / 4.0;
        let d = 4.0 * a * b / (1.0 + b) - m1 * m1.ln();
        Ok(Self { b, a, d, m, root })
    }

    /// Candidate `w` for a Beta draw `eps`.
    pub fn w_from_eps(&self, eps: f64) -> f64 {
        (1.0 - (1.0 + self.b) * eps) / (1.0 - (1.0 - self.b) * eps)
    }

    /// `∂w/∂κ` with `eps` held fixed.
    pub fn dw_dkappa(&self, eps: f64) -> f64 {
        let denom = 1.0 - (1.0 - self.b) * eps;
        // dw/db = -2ε(1-ε)/D², db/dκ = -2b/root
        4.0 * self.b * eps * (1.0 - eps) / (self.root * denom * denom)
    }

    /// Wood's acceptance test for the pair `(eps, u)`.
    pub fn accepts(&self, eps: f64, u: f64) -> bool {
        let t = 2.0 * self.a * self.b / (1.0 - (1.0 - self.b) * eps);
        (self.m - 1) as f64 * t.ln() - t + self.d >= u.ln()
    }

    /// Runs the acceptance loop; returns `(w, eps, proposals)`.
    pub fn sample_accepted<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64, usize) {
        let shape = (self.m - 1) as f64 / 2.0;
        let gamma = Gamma::new(shape, 1.0).expect("shape is positive");
        let mut proposals = 0;
        loop {
            proposals += 1;
            let eps = beta_from_gammas(&gamma, rng);
            let u: f64 = rng.random();
            if self.accepts(eps, u) {
                return (self.w_from_eps(eps), eps, proposals);
            }
        }
    }
}

fn beta_from_gammas<R: Rng + ?Sized>(gamma: &Gamma<f64>, rng: &mut R) -> f64 {
    loop {
        let x = gamma.sample(rng);
        let y = gamma.sample(rng);
        let s = x + y;
        if s > 0.0 {
            return x / s;
        }
    }
}

/// Accepted `w` with its pathwise derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathwiseDraw {
    pub w: f64,
    pub dw_dkappa: f64,
    pub eps: f64,
    pub proposals: usize,
}

/// Samples `w` and returns `∂w/∂κ` with the accepted Beta noise frozen.
pub fn sample_w_pathwise<R: Rng + ?Sized>(
    m: usize,
    kappa: f64,
    rng: &mut R,
) -> Result<PathwiseDraw> {
    if !(kappa > 0.0) {
        return Err(Error::domain("pathwise sampling needs kappa > 0", kappa));
    }
    let wood = WoodConstants::new(m, kappa)?;
    let (w, eps, proposals) = wood.sample_accepted(rng);
    Ok(PathwiseDraw {
        w,
        dw_dkappa: wood.dw_dkappa(eps),
        eps,
        proposals,
    })
}

/// Uniform direction on `S^{m-2}` as a length `m - 1` vector. For `m = 2`
/// this is a fair sign.
pub fn sample_tangent<R: Rng + ?Sized>(rng: &mut R, m: usize) -> Vec<f64> {
    if m == 2 {
        vec![if rng.random::<bool>() { 1.0 } else { -1.0 }]
    } else {
        sample_uniform(rng, m - 1).expect("m - 1 >= 2").into_vec()
    }
}

/// `(w, sqrt(1 - w²) v)`.
pub fn tangent_lift(w: f64, tangent: &[f64]) -> Vec<f64> {
    let s = (1.0 - w * w).max(0.0).sqrt();
    std::iter::once(w)
        .chain(tangent.iter().map(|t| s * t))
        .collect()
}
