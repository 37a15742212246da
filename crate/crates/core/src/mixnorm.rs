//! The `(H¹)′` mix-norm through the Neumann problem `(−Δ + I)η = θ`,
//! solved exactly in the cosine basis, and the final-time constraint
//! violation built on it.

use std::f64::consts::PI;

use ndarray::Array2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CosineTransform, Grid2D, ScalarField};

/// Which eigenvalues of `−Δ` the diagonal solve uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Spectrum {
    /// `π²(j² + k²)`: the continuous Neumann Laplacian.
    #[default]
    Continuous,
    /// `(2 − 2cos(jπh) + 2 − 2cos(kπh))/h²`: the 5-point Neumann stencil.
    FivePoint,
}

/// Precomputed transform and eigenvalues of `𝒜 = −Δ + I` on one grid.
#[derive(Debug, Clone)]
pub struct MixNormContext {
    transform: CosineTransform,
    spectrum: Spectrum,
    /// `eigenvalues[[k, j]]` belongs to `cos(jπx₁)cos(kπx₂)`.
    eigenvalues: Array2<f64>,
    /// Trapezoid norms of the modes.
    mode_weights: Array2<f64>,
}

impl MixNormContext {
    pub fn new(grid: Grid2D) -> Self {
        Self::with_spectrum(grid, Spectrum::Continuous)
    }

    pub fn with_spectrum(grid: Grid2D, spectrum: Spectrum) -> Self {
        let n = grid.n();
        let h = grid.h();
        let lap_1d = |m: usize| match spectrum {
            Spectrum::Continuous => (PI * m as f64).powi(2),
            Spectrum::FivePoint => (2.0 - 2.0 * (PI * m as f64 * h).cos()) / (h * h),
        };
        let eigenvalues = Array2::from_shape_fn((n, n), |(k, j)| 1.0 + lap_1d(j) + lap_1d(k));
        let mode_weights = Array2::from_shape_fn((n, n), |(k, j)| {
            CosineTransform::mode_norm_sq_1d(j, n) * CosineTransform::mode_norm_sq_1d(k, n)
        });
        Self {
            transform: CosineTransform::new(grid),
            spectrum,
            eigenvalues,
            mode_weights,
        }
    }

    pub fn grid(&self) -> Grid2D {
        self.transform.grid()
    }

    pub fn spectrum(&self) -> Spectrum {
        self.spectrum
    }

    /// Eigenvalue of `𝒜` for `cos(jπx₁)cos(kπx₂)`.
    pub fn eigenvalue(&self, j: usize, k: usize) -> f64 {
        self.eigenvalues[[k, j]]
    }

    /// `η = 𝒜⁻¹θ` with homogeneous Neumann data.
    pub fn solve_helmholtz(&self, theta: &ScalarField) -> Result<ScalarField> {
        let mut c = self.transform.forward(theta)?;
        c.as_array_mut()
            .zip_mut_with(&self.eigenvalues, |v, lambda| *v /= lambda);
        self.transform.inverse(&c)
    }

    /// `‖θ‖²_{(H¹)′} = (𝒜⁻¹θ, θ)` as a weighted spectral sum.
    pub fn mix_norm_sq(&self, theta: &ScalarField) -> Result<f64> {
        let c = self.transform.forward(theta)?;
        let mut total = 0.0;
        for ((v, lambda), w) in c
            .as_array()
            .iter()
            .zip(&self.eigenvalues)
            .zip(&self.mode_weights)
        {
            total += v * v * w / lambda;
        }
        Ok(total)
    }

    pub fn mix_norm(&self, theta: &ScalarField) -> Result<f64> {
        Ok(self.mix_norm_sq(theta)?.sqrt())
    }

    /// `μ = ‖θ(t_f) − θ̄₀‖²_{(H¹)′} − r²C₀²`; non-positive means feasible.
    pub fn violation(&self, theta_tf: &ScalarField, mean0: f64, r: f64, c0_sq: f64) -> Result<f64> {
        if c0_sq <= 0.0 {
            return Err(Error::DegenerateInitialState(c0_sq));
        }
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::Domain(format!("r must lie in (0, 1), got {r}")));
        }
        Ok(self.mix_norm_sq(&theta_tf.shifted(-mean0))? - r * r * c0_sq)
    }
}

/// `(−Δₕ + I)η` with the 5-point stencil; Neumann data enter through
/// mirrored ghost nodes `η₋₁ = η₁`.
pub fn apply_helmholtz_five_point(eta: &ScalarField) -> ScalarField {
    let grid = eta.grid();
    let n = grid.n();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let v = eta.values();
    let mirror = |i: isize| -> usize {
        if i < 0 {
            1
        } else if i as usize >= n {
            n - 2
        } else {
            i as usize
        }
    };
    let out = Array2::from_shape_fn((n, n), |(iy, ix)| {
        let (x, y) = (ix as isize, iy as isize);
        let c = v[[iy, ix]];
        let lap = v[[iy, mirror(x - 1)]] + v[[iy, mirror(x + 1)]] + v[[mirror(y - 1), ix]]
            + v[[mirror(y + 1), ix]]
            - 4.0 * c;
        c - lap * inv_h2
    });
    ScalarField::from_values(grid, out).expect("stencil of finite values is finite")
}
