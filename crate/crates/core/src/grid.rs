//! Uniform node grid on the unit square, nodal fields and the quadrature,
//! difference and cosine-transform machinery shared by every solver.
//!
//! Field storage is row-major with rows running along `x₂`: the value at
//! node `(ix, iy)`, located at `(ix·h, iy·h)`, lives at `values[[iy, ix]]`.

use std::f64::consts::PI;

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};

/// Uniform tensor grid with `n` nodes per side; boundary nodes lie on Γ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid2D {
    n: usize,
}

impl Grid2D {
    pub const MIN_NODES: usize = 8;

    pub fn new(n: usize) -> Result<Self> {
        if n < Self::MIN_NODES {
            return Err(Error::InvalidGrid(n));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Node spacing `1/(n−1)`.
    pub fn h(&self) -> f64 {
        1.0 / self.intervals() as f64
    }

    pub fn intervals(&self) -> usize {
        self.n - 1
    }

    /// Coordinate of node `i`; exact `0.0` and `1.0` at the ends.
    pub fn coord(&self, i: usize) -> f64 {
        i as f64 / self.intervals() as f64
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n, self.n)
    }

    pub fn is_boundary(&self, ix: usize, iy: usize) -> bool {
        ix == 0 || iy == 0 || ix == self.n - 1 || iy == self.n - 1
    }

    /// One-dimensional quadrature weights for `rule`.
    pub fn weights_1d(&self, rule: Quadrature) -> Result<Vec<f64>> {
        let h = self.h();
        let last = self.n - 1;
        match rule {
            Quadrature::Trapezoid => Ok((0..self.n)
                .map(|i| if i == 0 || i == last { 0.5 * h } else { h })
                .collect()),
            Quadrature::Simpson => {
                if !self.intervals().is_multiple_of(2) {
                    return Err(Error::Domain(format!(
                        "Simpson's rule needs an even number of intervals, grid has {}",
                        self.intervals()
                    )));
                }
                Ok((0..self.n)
                    .map(|i| {
                        let w = if i == 0 || i == last {
                            1.0
                        } else if i % 2 == 1 {
                            4.0
                        } else {
                            2.0
                        };
                        w * h / 3.0
                    })
                    .collect())
            }
        }
    }

    /// Tensor trapezoid weights (dual-cell areas), laid out like field values.
    pub fn trapezoid_weights(&self) -> Array2<f64> {
        let w = self
            .weights_1d(Quadrature::Trapezoid)
            .expect("trapezoid weights exist on every grid");
        Array2::from_shape_fn(self.shape(), |(iy, ix)| w[iy] * w[ix])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Quadrature {
    #[default]
    Trapezoid,
    Simpson,
}

/// Nodal values of a scalar quantity (θ, η or ρ).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid2D,
    values: Array2<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid2D) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid2D, c: f64) -> Self {
        Self {
            grid,
            values: Array2::from_elem(grid.shape(), c),
        }
    }

    /// Samples `f(x₁, x₂)` at every node.
    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let values =
            Array2::from_shape_fn(grid.shape(), |(iy, ix)| f(grid.coord(ix), grid.coord(iy)));
        Self { grid, values }
    }

    pub fn from_values(grid: Grid2D, values: Array2<f64>) -> Result<Self> {
        if values.dim() != grid.shape() {
            return Err(Error::shape(
                format!("{:?}", grid.shape()),
                format!("{:?}", values.dim()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scalar field"));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[[iy, ix]]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.mapv(f),
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    pub fn shifted(&self, c: f64) -> Self {
        self.map(|v| v + c)
    }

    /// `self + a·other`.
    pub fn add_scaled(&self, a: f64, other: &ScalarField) -> Result<Self> {
        self.check_same_grid(other)?;
        let mut values = self.values.clone();
        values.scaled_add(a, &other.values);
        Ok(Self {
            grid: self.grid,
            values,
        })
    }

    /// Nodewise product.
    pub fn mul(&self, other: &ScalarField) -> Result<Self> {
        self.check_same_grid(other)?;
        Ok(Self {
            grid: self.grid,
            values: &self.values * &other.values,
        })
    }

    pub(crate) fn check_same_grid(&self, other: &ScalarField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::shape(
                format!("n={}", self.grid.n()),
                format!("n={}", other.grid.n()),
            ));
        }
        Ok(())
    }
}

/// Nodal velocity samples.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid2D,
    vx: Array2<f64>,
    vy: Array2<f64>,
}

impl VectorField {
    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            grid,
            vx: Array2::zeros(grid.shape()),
            vy: Array2::zeros(grid.shape()),
        }
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> [f64; 2]) -> Self {
        let mut out = Self::zeros(grid);
        for iy in 0..grid.n() {
            for ix in 0..grid.n() {
                let [a, b] = f(grid.coord(ix), grid.coord(iy));
                out.vx[[iy, ix]] = a;
                out.vy[[iy, ix]] = b;
            }
        }
        out
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn vx(&self) -> &Array2<f64> {
        &self.vx
    }

    pub fn vy(&self) -> &Array2<f64> {
        &self.vy
    }

    pub fn at(&self, ix: usize, iy: usize) -> [f64; 2] {
        [self.vx[[iy, ix]], self.vy[[iy, ix]]]
    }

    /// `self += a·other`.
    pub fn accumulate(&mut self, a: f64, other: &VectorField) {
        self.vx.scaled_add(a, &other.vx);
        self.vy.scaled_add(a, &other.vy);
    }

    pub fn max_speed(&self) -> f64 {
        Zip::from(&self.vx)
            .and(&self.vy)
            .fold(0.0_f64, |m, &a, &b| m.max(a.hypot(b)))
    }

    /// Nodewise `|v|²`.
    pub fn speed_sq(&self) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: Zip::from(&self.vx)
                .and(&self.vy)
                .map_collect(|&a, &b| a * a + b * b),
        }
    }

    /// Nodewise `self·other`.
    pub fn dot(&self, other: &VectorField) -> ScalarField {
        let values = Zip::from(&self.vx)
            .and(&self.vy)
            .and(&other.vx)
            .and(&other.vy)
            .map_collect(|&a, &b, &c, &d| a * c + b * d);
        ScalarField {
            grid: self.grid,
            values,
        }
    }
}

/// ∫_Ω f dx by the tensor trapezoid rule.
pub fn integrate(f: &ScalarField) -> f64 {
    integrate_with(f, Quadrature::Trapezoid).expect("trapezoid rule is always available")
}

pub fn integrate_with(f: &ScalarField, rule: Quadrature) -> Result<f64> {
    let w = f.grid.weights_1d(rule)?;
    let mut total = 0.0;
    for (iy, row) in f.values.outer_iter().enumerate() {
        let row_sum: f64 = row.iter().zip(&w).map(|(v, wx)| v * wx).sum();
        total += w[iy] * row_sum;
    }
    Ok(total)
}

/// Spatial average; |Ω| = 1.
pub fn mean(f: &ScalarField) -> f64 {
    integrate(f)
}

/// Trapezoid L² inner product.
pub fn inner(f: &ScalarField, g: &ScalarField) -> f64 {
    let w = f.grid.weights_1d(Quadrature::Trapezoid).expect("trapezoid");
    let mut total = 0.0;
    for iy in 0..f.grid.n() {
        let mut row_sum = 0.0;
        for ix in 0..f.grid.n() {
            row_sum += w[ix] * f.values[[iy, ix]] * g.values[[iy, ix]];
        }
        total += w[iy] * row_sum;
    }
    total
}

pub fn l2_norm(f: &ScalarField) -> f64 {
    inner(f, f).max(0.0).sqrt()
}

/// First derivative along one axis of a row/column: centered in the
/// interior, second-order one-sided at both ends.
fn diff_line(line: &[f64], h: f64, out: &mut [f64]) {
    let m = line.len();
    out[0] = (-3.0 * line[0] + 4.0 * line[1] - line[2]) / (2.0 * h);
    for i in 1..m - 1 {
        out[i] = (line[i + 1] - line[i - 1]) / (2.0 * h);
    }
    out[m - 1] = (3.0 * line[m - 1] - 4.0 * line[m - 2] + line[m - 3]) / (2.0 * h);
}

/// Nodal gradient by second-order finite differences.
pub fn gradient(f: &ScalarField) -> VectorField {
    let grid = f.grid;
    let n = grid.n();
    let h = grid.h();
    let mut out = VectorField::zeros(grid);
    let mut line = vec![0.0; n];
    let mut d = vec![0.0; n];
    for iy in 0..n {
        for ix in 0..n {
            line[ix] = f.values[[iy, ix]];
        }
        diff_line(&line, h, &mut d);
        for ix in 0..n {
            out.vx[[iy, ix]] = d[ix];
        }
    }
    for ix in 0..n {
        for iy in 0..n {
            line[iy] = f.values[[iy, ix]];
        }
        diff_line(&line, h, &mut d);
        for iy in 0..n {
            out.vy[[iy, ix]] = d[iy];
        }
    }
    out
}

/// Nodal divergence with the same stencils as [`gradient`].
pub fn divergence(v: &VectorField) -> ScalarField {
    let grid = v.grid;
    let n = grid.n();
    let h = grid.h();
    let mut out = ScalarField::zeros(grid);
    let mut line = vec![0.0; n];
    let mut d = vec![0.0; n];
    for iy in 0..n {
        for ix in 0..n {
            line[ix] = v.vx[[iy, ix]];
        }
        diff_line(&line, h, &mut d);
        for ix in 0..n {
            out.values[[iy, ix]] += d[ix];
        }
    }
    for ix in 0..n {
        for iy in 0..n {
            line[iy] = v.vy[[iy, ix]];
        }
        diff_line(&line, h, &mut d);
        for iy in 0..n {
            out.values[[iy, ix]] += d[iy];
        }
    }
    out
}

/// `(‖f‖²_{L²} + ‖∇f‖²_{L²})^{1/2}` with trapezoid quadrature.
pub fn h1_norm(f: &ScalarField) -> f64 {
    h1_norm_with(f, Quadrature::Trapezoid).expect("trapezoid rule is always available")
}

pub fn h1_norm_with(f: &ScalarField, rule: Quadrature) -> Result<f64> {
    let g = gradient(f);
    let density = ScalarField {
        grid: f.grid,
        values: &f.values * &f.values + g.speed_sq().values,
    };
    Ok(integrate_with(&density, rule)?.max(0.0).sqrt())
}

/// Coefficients in the basis `cos(jπx₁)·cos(kπx₂)`, `0 ≤ j,k ≤ n−1`,
/// laid out like field values: `coeffs[[k, j]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineCoefficients {
    grid: Grid2D,
    coeffs: Array2<f64>,
}

impl CosineCoefficients {
    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    /// Coefficient of `cos(jπx₁)cos(kπx₂)`.
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.coeffs[[k, j]]
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.coeffs
    }

    pub fn as_array_mut(&mut self) -> &mut Array2<f64> {
        &mut self.coeffs
    }
}

/// Discrete cosine transform (type I) on the node grid. Mode `m` has
/// trapezoid norm `‖cos(mπx)‖² = 1` for `m ∈ {0, n−1}` and `1/2`
/// otherwise, so the transform is an exact isometry for the trapezoid
/// inner product.
#[derive(Debug, Clone)]
pub struct CosineTransform {
    grid: Grid2D,
    /// `synthesis[[m, i]] = cos(mπ x_i)`.
    synthesis: Array2<f64>,
    /// `analysis[[m, i]] = w_i cos(mπ x_i) / ν_m`.
    analysis: Array2<f64>,
}

impl CosineTransform {
    pub fn new(grid: Grid2D) -> Self {
        let n = grid.n();
        let intervals = grid.intervals();
        let w = grid.weights_1d(Quadrature::Trapezoid).expect("trapezoid");
        let synthesis = Array2::from_shape_fn((n, n), |(m, i)| {
            // reduce m·i modulo 2(n−1) so the angle stays in [0, 2π)
            let r = (m * i) % (2 * intervals);
            (PI * r as f64 / intervals as f64).cos()
        });
        let analysis = Array2::from_shape_fn((n, n), |(m, i)| {
            w[i] * synthesis[[m, i]] / Self::mode_norm_sq_1d(m, n)
        });
        Self {
            grid,
            synthesis,
            analysis,
        }
    }

    /// Trapezoid `‖cos(mπx)‖²` on an `n`-node grid.
    pub fn mode_norm_sq_1d(m: usize, n: usize) -> f64 {
        if m == 0 || m == n - 1 {
            1.0
        } else {
            0.5
        }
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn forward(&self, f: &ScalarField) -> Result<CosineCoefficients> {
        if f.grid != self.grid {
            return Err(Error::shape(
                format!("n={}", self.grid.n()),
                format!("n={}", f.grid.n()),
            ));
        }
        let coeffs = self.analysis.dot(&f.values).dot(&self.analysis.t());
        Ok(CosineCoefficients {
            grid: self.grid,
            coeffs,
        })
    }

    pub fn inverse(&self, c: &CosineCoefficients) -> Result<ScalarField> {
        if c.grid != self.grid {
            return Err(Error::shape(
                format!("n={}", self.grid.n()),
                format!("n={}", c.grid.n()),
            ));
        }
        let values = self.synthesis.t().dot(&c.coeffs).dot(&self.synthesis);
        Ok(ScalarField {
            grid: self.grid,
            values,
        })
    }
}

/// One-shot forward transform.
pub fn cosine_transform(f: &ScalarField) -> CosineCoefficients {
    CosineTransform::new(f.grid)
        .forward(f)
        .expect("transform built on the field's own grid")
}
