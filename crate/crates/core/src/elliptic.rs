//! Complete elliptic integral of the first kind and the closed-orbit
//! periods of the cellular flows.

use std::f64::consts::PI;

use crate::basis::{cos_pi, sin_pi};
use crate::error::{Error, Result};

const AGM_TOL: f64 = 1e-15;
const AGM_MAX_ITER: usize = 60;

fn agm(mut a: f64, mut b: f64) -> f64 {
    for _ in 0..AGM_MAX_ITER {
        if (a - b).abs() <= AGM_TOL * a {
            break;
        }
        let next = 0.5 * (a + b);
        b = (a * b).sqrt();
        a = next;
    }
    0.5 * (a + b)
}

/// `K(k) = ∫₀^{π/2} dθ / √(1 − k² sin²θ)` for modulus `0 ≤ k < 1`.
pub fn elliptic_k(k: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&k) {
        return Err(Error::Domain(format!(
            "elliptic modulus must satisfy 0 <= k < 1, got {k}"
        )));
    }
    // (1−k)(1+k) keeps the complementary modulus accurate as k → 1
    elliptic_k_complementary(((1.0 - k) * (1.0 + k)).sqrt())
}

/// `K` written in terms of the complementary modulus `k' = √(1−k²) ∈ (0, 1]`.
pub fn elliptic_k_complementary(kp: f64) -> Result<f64> {
    if !(kp > 0.0 && kp <= 1.0) {
        return Err(Error::Domain(format!(
            "complementary modulus must lie in (0, 1], got {kp}"
        )));
    }
    Ok(PI / (2.0 * agm(1.0, kp)))
}

fn check_orbit(n: u32, action: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidBasisIndex(0));
    }
    let upper = 0.5 / n as f64;
    if !(action > 0.0 && action < upper) {
        return Err(Error::Domain(format!(
            "orbit level I must lie in (0, {upper}), got {action}"
        )));
    }
    Ok(())
}

/// Period of the closed orbit of `b_N` through `(1/(2N), I)`:
/// `(4/(N²π²))·K(cos(NπI))` for the unscaled Hamiltonian and
/// `(4/(Nπ))·K(cos(NπI))` for the scaled one.
pub fn orbit_period(n: u32, action: f64, scaled: bool) -> Result<f64> {
    check_orbit(n, action)?;
    let nf = n as f64;
    debug_assert!(cos_pi(nf * action) < 1.0);
    let k = elliptic_k_complementary(sin_pi(nf * action))?;
    Ok(period_prefactor(n, scaled) * k)
}

fn period_prefactor(n: u32, scaled: bool) -> f64 {
    let nf = n as f64;
    if scaled {
        4.0 / (nf * PI)
    } else {
        4.0 / (nf * nf * PI * PI)
    }
}

/// Period of the small orbits around the elliptic point, the limit of
/// [`orbit_period`] as `I → 1/(2N)`.
pub fn period_center_limit(n: u32, scaled: bool) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidBasisIndex(0));
    }
    Ok(period_prefactor(n, scaled) * PI / 2.0)
}

/// Logarithmic behaviour near the separatrix:
/// `prefactor · ln(4/(NπI))`, asymptotic to [`orbit_period`] as `I → 0`.
pub fn period_log_asymptote(n: u32, action: f64, scaled: bool) -> Result<f64> {
    check_orbit(n, action)?;
    Ok(period_prefactor(n, scaled) * (4.0 / (n as f64 * PI * action)).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Gauss–Legendre (5 points) on `[0, π/2]`.
    fn k_by_quadrature(k: f64, panels: usize) -> f64 {
        let nodes = [
            0.0,
            -0.538_469_310_105_683_1,
            0.538_469_310_105_683_1,
            -0.906_179_845_938_664,
            0.906_179_845_938_664,
        ];
        let weights = [
            0.568_888_888_888_888_9,
            0.478_628_670_499_366_5,
            0.478_628_670_499_366_5,
            0.236_926_885_056_189_1,
            0.236_926_885_056_189_1,
        ];
        let width = 0.5 * PI / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let mid = (p as f64 + 0.5) * width;
            for (x, w) in nodes.iter().zip(weights) {
                let t = mid + 0.5 * width * x;
                let s = t.sin();
                total += 0.5 * width * w / (1.0 - k * k * s * s).sqrt();
            }
        }
        total
    }

    #[test]
    fn k_at_zero() {
        assert_eq!(elliptic_k(0.0).unwrap(), PI / 2.0);
    }

    #[test]
    fn k_matches_quadrature() {
        for k in [0.1, 0.5, 1.0 / 2f64.sqrt(), 0.9, 0.99] {
            let oracle = k_by_quadrature(k, 400);
            let got = elliptic_k(k).unwrap();
            assert!(((got - oracle) / oracle).abs() < 1e-13, "k={k}: {got} vs {oracle}");
        }
    }

    #[test]
    fn k_log_asymptote() {
        let k: f64 = 0.9999;
        let kp = (1.0 - k * k).sqrt();
        let got = elliptic_k(k).unwrap();
        assert!((got - (4.0 / kp).ln()).abs() < 1e-3);
        assert!(((got - k_by_quadrature(k, 20000)) / got).abs() < 1e-10);
    }

    #[test]
    fn k_rejects_divergent_modulus() {
        assert!(elliptic_k(1.0).is_err());
        assert!(elliptic_k(1.5).is_err());
        assert!(elliptic_k(-0.1).is_err());
    }

    #[test]
    fn period_domain() {
        assert!(orbit_period(1, 0.0, false).is_err());
        assert!(orbit_period(1, 0.5, false).is_err());
        assert!(orbit_period(2, 0.25, false).is_err());
        assert!(orbit_period(0, 0.1, false).is_err());
        assert!(orbit_period(2, 0.2, true).is_ok());
    }

    #[test]
    fn period_limits() {
        for n in 1..=4 {
            let nf = n as f64;
            let limit = period_center_limit(n, false).unwrap();
            assert!((limit - 2.0 / (nf * nf * PI)).abs() < 1e-15);
            let near = orbit_period(n, 0.5 / nf * (1.0 - 1e-9), false).unwrap();
            assert!((near - limit).abs() < 1e-8);
            let scaled = orbit_period(n, 0.2 / nf, true).unwrap();
            let unscaled = orbit_period(n, 0.2 / nf, false).unwrap();
            assert!((scaled / unscaled - nf * PI).abs() < 1e-12);
        }
    }

    #[test]
    fn period_is_decreasing() {
        for n in [1, 3] {
            let upper = 0.5 / n as f64;
            let mut prev = f64::INFINITY;
            for s in 1..200 {
                let t = orbit_period(n, upper * s as f64 / 200.0, false).unwrap();
                assert!(t < prev);
                prev = t;
            }
        }
    }

    #[test]
    fn period_log_ratio() {
        for n in 1..=4 {
            let ratio = orbit_period(n, 1e-6, false).unwrap()
                / period_log_asymptote(n, 1e-6, false).unwrap();
            assert!((ratio - 1.0).abs() < 0.01);
        }
    }
}
