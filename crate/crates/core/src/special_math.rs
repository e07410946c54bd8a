//! Modified Bessel functions of the first kind in log scale, the Bessel ratio
//! `A_m(κ) = I_{m/2}(κ) / I_{m/2-1}(κ)` and its derivative, and hypersphere
//! surface areas.
//!
//! `ln I_v(x)` is evaluated by one of two branches:
//!
//! * the ascending power series, summed in a rescaled accumulator so that it
//!   cannot overflow, whenever `x < max(30, 2v²)`;
//! * the large-argument (Hankel) asymptotic expansion otherwise. Past that
//!   point the expansion terms shrink geometrically by at least a factor of
//!   four before they start to grow, which leaves far more than double
//!   precision headroom.
//!
//! The Bessel ratio uses the Gauss continued fraction below the same branch
//! point and the quotient of the two Hankel sums above it; neither route
//! exponentiates a difference of large logarithms.

use crate::error::{Error, Result};

const HANKEL_MIN_X: f64 = 30.0;
const RESCALE_AT: f64 = 1e280;
const LN_RESCALE: f64 = 644.723_826_038_332_8; // 280 * ln(10)

/// Non-negative, finite order of a modified Bessel function.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct BesselOrder(f64);

impl BesselOrder {
    pub fn new(v: f64) -> Result<Self> {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::domain("Bessel order must be finite and >= 0", v));
        }
        Ok(Self(v))
    }

    /// The order `m/2 - 1` appearing in the vMF normalizer on `S^{m-1}`.
    pub fn for_ambient_dim(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::domain("ambient dimension must be >= 2", m as f64));
        }
        Ok(Self(m as f64 / 2.0 - 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Natural log of the gamma function.
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `ln I_v(x)`.
///
/// Returns `0` for `I_0(0)` and negative infinity for `I_v(0)`, `v > 0`.
pub fn log_bessel_i(v: BesselOrder, x: f64) -> Result<f64> {
    check_argument(x)?;
    let v = v.0;
    if x == 0.0 {
        return Ok(if v == 0.0 { 0.0 } else { f64::NEG_INFINITY });
    }
    if use_hankel(v, x) {
        Ok(log_bessel_hankel(v, x))
    } else {
        Ok(v * (0.5 * x).ln() - ln_gamma(v + 1.0) + log_series_sum(v, x))
    }
}

/// `ln[Γ(v+1) (2/x)^v I_v(x)]`, i.e. the log of the hypergeometric series
/// `0F1(; v+1; x²/4)`. This is `ln I_v(x)` with the leading power stripped,
/// which stays accurate as `x -> 0` (it tends to `x² / (4(v+1))`).
pub(crate) fn log_scaled_bessel_i(v: f64, x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else if use_hankel(v, x) {
        log_bessel_hankel(v, x) - v * (0.5 * x).ln() + ln_gamma(v + 1.0)
    } else {
        log_series_sum(v, x)
    }
}

/// Mean resultant length `A_m(κ) = I_{m/2}(κ) / I_{m/2-1}(κ)` of a vMF on
/// `S^{m-1}`. Exactly `0` at `κ = 0`.
pub fn bessel_ratio(m: usize, kappa: f64) -> Result<f64> {
    let v = BesselOrder::for_ambient_dim(m)?.0;
    check_argument(kappa)?;
    if kappa == 0.0 {
        return Ok(0.0);
    }
    if use_hankel(v + 1.0, kappa) {
        Ok(hankel_sum(v + 1.0, kappa) / hankel_sum(v, kappa))
    } else {
        Ok(ratio_continued_fraction(v, kappa))
    }
}

/// `dA_m/dκ = 1 - A² - (m-1) A / κ`.
pub fn bessel_ratio_grad(m: usize, kappa: f64) -> Result<f64> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::domain("bessel_ratio_grad needs kappa > 0", kappa));
    }
    let a = bessel_ratio(m, kappa)?;
    Ok(1.0 - a * a - (m as f64 - 1.0) * a / kappa)
}

/// `ln(2 π^{m/2} / Γ(m/2))`, the log surface area of the unit sphere in `R^m`.
pub fn log_unit_sphere_area(m: usize) -> Result<f64> {
    if m < 1 {
        return Err(Error::domain("ambient dimension must be >= 1", m as f64));
    }
    let half = m as f64 / 2.0;
    Ok(std::f64::consts::LN_2 + half * std::f64::consts::PI.ln() - ln_gamma(half))
}

fn check_argument(x: f64) -> Result<()> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::domain("Bessel argument must be finite and >= 0", x));
    }
    Ok(())
}

fn use_hankel(v: f64, x: f64) -> bool {
    x >= HANKEL_MIN_X.max(2.0 * v * v)
}

/// `ln Σ_j (x²/4)^j Γ(v+1) / (j! Γ(v+j+1))`.
fn log_series_sum(v: f64, x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut head = 1.0;
    let mut term = 1.0;
    let mut tail = 0.0;
    let mut log_scale = 0.0;
    let mut j = 0.0_f64;
    loop {
        j += 1.0;
        term *= q / (j * (v + j));
        tail += term;
        if tail > RESCALE_AT {
            head /= RESCALE_AT;
            term /= RESCALE_AT;
            tail /= RESCALE_AT;
            log_scale += LN_RESCALE;
        }
        // Terms grow until j(v+j) exceeds x²/4; only stop on the far side.
        if (term <= tail * 1e-17 && j > 0.5 * x) || j > 1e7 {
            break;
        }
    }
    if log_scale == 0.0 {
        tail.ln_1p()
    } else {
        (head + tail).ln() + log_scale
    }
}

/// `Σ_k (-1)^k a_k(v) / x^k` from `I_v(x) ~ e^x / sqrt(2πx) · Σ ...`.
fn hankel_sum(v: f64, x: f64) -> f64 {
    let mu = 4.0 * v * v;
    let mut term = 1.0_f64;
    let mut sum = 1.0;
    for k in 1..500 {
        let odd = (2 * k - 1) as f64;
        let next = -term * (mu - odd * odd) / (8.0 * k as f64 * x);
        if next == 0.0 {
            break;
        }
        if next.abs() > term.abs() {
            // asymptotic series started to diverge
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

fn log_bessel_hankel(v: f64, x: f64) -> f64 {
    x - 0.5 * (2.0 * std::f64::consts::PI * x).ln() + hankel_sum(v, x).ln()
}

/// `I_{v+1}(x) / I_v(x)` from `1 / (b_1 + 1/(b_2 + ...))`, `b_k = 2(v+k)/x`,
/// evaluated with the modified Lentz method.
fn ratio_continued_fraction(v: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let b = |k: f64| 2.0 * (v + k) / x;
    let mut f = b(1.0);
    if f == 0.0 {
        f = TINY;
    }
    let mut c = f;
    let mut d = 0.0;
    let mut k = 1.0;
    loop {
        k += 1.0;
        let bk = b(k);
        d += bk;
        if d == 0.0 {
            d = TINY;
        }
        c = bk + 1.0 / c;
        if c == 0.0 {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() <= f64::EPSILON || k > 1e7 {
            break;
        }
    }
    1.0 / f
}

#[cfg(test)]
mod tests {
    use super::*;

    fn order(v: f64) -> BesselOrder {
        BesselOrder::new(v).unwrap()
    }

    #[test]
    fn rescale_constant_matches() {
        assert_eq!(LN_RESCALE, RESCALE_AT.ln());
    }

    #[test]
    fn series_survives_many_rescales() {
        // the power series path with several 1e280 rescales
        let got = log_bessel_i(order(64.0), 5000.0).unwrap();
        assert!((got - 4_994.412_854_500_198).abs() < 1e-9, "{got}");
    }

    #[test]
    fn zero_argument() {
        assert_eq!(log_bessel_i(order(0.0), 0.0).unwrap(), 0.0);
        assert_eq!(log_bessel_i(order(2.5), 0.0).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn half_order_closed_form() {
        // I_{1/2}(x) = sqrt(2/(πx)) sinh x
        for &x in &[1e-3, 0.5, 1.0, 7.0, 29.0, 31.0, 300.0] {
            // ln sinh x = x - ln 2 + ln(1 - e^{-2x})
            let ln_sinh = x - std::f64::consts::LN_2 + (-(-2.0 * x).exp()).ln_1p();
            let expected = 0.5 * (2.0 / (std::f64::consts::PI * x)).ln() + ln_sinh;
            let got = log_bessel_i(order(0.5), x).unwrap();
            assert!((got - expected).abs() < 1e-12, "x={x}: {got} vs {expected}");
        }
        let got = log_bessel_i(order(0.5), 1.0).unwrap();
        assert!((got - (-0.064_351_991_073_531_8)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_domain() {
        assert!(BesselOrder::new(-0.5).is_err());
        assert!(BesselOrder::new(f64::NAN).is_err());
        assert!(log_bessel_i(order(1.0), -1.0).is_err());
        assert!(log_bessel_i(order(1.0), f64::NAN).is_err());
        assert!(bessel_ratio(1, 1.0).is_err());
        assert!(bessel_ratio(3, -1.0).is_err());
        assert!(bessel_ratio_grad(3, 0.0).is_err());
        assert!(log_unit_sphere_area(0).is_err());
    }

    #[test]
    fn ratio_closed_form_m3() {
        assert_eq!(bessel_ratio(3, 0.0).unwrap(), 0.0);
        for &k in &[1e-4_f64, 0.3, 1.0, 4.0, 29.5, 30.5, 200.0] {
            // coth(k) - 1/k, via its Taylor series where the closed form cancels
            let expected = if k < 1e-2 {
                k / 3.0 - k.powi(3) / 45.0
            } else {
                1.0 / k.tanh() - 1.0 / k
            };
            let got = bessel_ratio(3, k).unwrap();
            assert!(
                ((got - expected) / expected).abs() < 1e-10,
                "k={k}: {got} vs {expected}"
            );
        }
        assert!((bessel_ratio(3, 1.0).unwrap() - 0.313_035_285_499_331_3).abs() < 1e-15);
    }

    #[test]
    fn ratio_grad_m3() {
        let g = bessel_ratio_grad(3, 1.0).unwrap();
        let a: f64 = 0.313_035_285_499_331_3;
        assert!((g - (1.0 - a * a - 2.0 * a)).abs() < 1e-14);
        assert!((g - 0.27593).abs() < 1e-5);
    }

    #[test]
    fn sphere_areas() {
        let two_pi = 2.0 * std::f64::consts::PI;
        assert!((log_unit_sphere_area(2).unwrap() - two_pi.ln()).abs() < 1e-14);
        assert!((log_unit_sphere_area(3).unwrap() - (2.0 * two_pi).ln()).abs() < 1e-14);
        assert!((log_unit_sphere_area(1).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn branches_agree_at_switch() {
        for &v in &[0.0, 0.5, 3.0, 4.5, 10.0] {
            let x = HANKEL_MIN_X.max(2.0 * v * v);
            let series = v * (0.5 * x).ln() - ln_gamma(v + 1.0) + log_series_sum(v, x);
            let hankel = log_bessel_hankel(v, x);
            assert!(
                (series - hankel).abs() < 1e-11,
                "v={v}: {series} vs {hankel}"
            );
        }
    }
}
