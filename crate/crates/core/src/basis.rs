//! Cellular flows `b_i = ∇⊥H_i` with `H_i = sin(iπx₁)sin(iπx₂)/(iπ)`.
//!
//! Each basis flow is sampled once per grid in two forms: nodal velocity
//! samples (used by quadratures such as the cost and the `M` matrix) and
//! exact face fluxes over the dual cells of the node grid (used by the
//! transport operator). The face fluxes are differences of `H_i` at cell
//! corners, so their discrete divergence vanishes identically.

use std::f64::consts::PI;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::{Grid2D, VectorField};

/// `sin(πt)`, exactly zero at integer `t`.
pub(crate) fn sin_pi(t: f64) -> f64 {
    let r = t.rem_euclid(2.0);
    if r == 0.0 || r == 1.0 {
        0.0
    } else {
        (PI * r).sin()
    }
}

/// `cos(πt)`, exactly zero at half-integer `t`.
pub(crate) fn cos_pi(t: f64) -> f64 {
    let r = t.rem_euclid(2.0);
    if r == 0.5 || r == 1.5 {
        0.0
    } else {
        (PI * r).cos()
    }
}

fn check_index(i: u32) -> Result<()> {
    if i == 0 {
        return Err(Error::InvalidBasisIndex(0));
    }
    Ok(())
}

/// Velocity of cellular flow `i` at `x`:
/// `(−sin(iπx₁)cos(iπx₂), cos(iπx₁)sin(iπx₂))`.
///
/// The same vector results from either Hamiltonian normalization; the
/// `scaled` flag only matters for orbit periods, see [`crate::elliptic`].
pub fn eval_basis(i: u32, x: [f64; 2]) -> Result<[f64; 2]> {
    check_index(i)?;
    if !(0.0..=1.0).contains(&x[0]) || !(0.0..=1.0).contains(&x[1]) {
        return Err(Error::Domain(format!("point {x:?} outside the unit square")));
    }
    Ok(velocity(i, x[0], x[1]))
}

fn velocity(i: u32, x: f64, y: f64) -> [f64; 2] {
    let f = i as f64;
    [
        -sin_pi(f * x) * cos_pi(f * y),
        cos_pi(f * x) * sin_pi(f * y),
    ]
}

/// `H_i(x)`: `sin(iπx₁)sin(iπx₂)`, divided by `iπ` when `scaled`.
pub fn hamiltonian(i: u32, x: [f64; 2], scaled: bool) -> Result<f64> {
    check_index(i)?;
    let f = i as f64;
    let h = sin_pi(f * x[0]) * sin_pi(f * x[1]);
    Ok(if scaled { h / (f * PI) } else { h })
}

/// Integrated normal velocity across the faces of the dual cells
/// surrounding each node.
///
/// `east[[iy, ix]]` is the flux from node `(ix, iy)` into `(ix+1, iy)`;
/// `north[[iy, ix]]` is the flux from `(ix, iy)` into `(ix, iy+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceFluxes {
    grid: Grid2D,
    east: Array2<f64>,
    north: Array2<f64>,
}

impl FaceFluxes {
    pub fn zeros(grid: Grid2D) -> Self {
        let n = grid.n();
        Self {
            grid,
            east: Array2::zeros((n, n - 1)),
            north: Array2::zeros((n - 1, n)),
        }
    }

    /// Exact fluxes of `b_i` from corner values of its streamfunction.
    pub fn of_basis(grid: Grid2D, i: u32) -> Result<Self> {
        check_index(i)?;
        let n = grid.n();
        let f = i as f64;
        // dual-cell corner coordinates: 0, h/2, 3h/2, …, 1 − h/2, 1
        let denom = 2.0 * grid.intervals() as f64;
        let corner = |m: usize| -> f64 {
            if m == 0 {
                0.0
            } else if m == n {
                1.0
            } else {
                (2 * m - 1) as f64 / denom
            }
        };
        let s: Vec<f64> = (0..=n).map(|m| sin_pi(f * corner(m))).collect();
        let scale = 1.0 / (f * PI);
        let stream = |a: usize, b: usize| scale * s[a] * s[b];
        let east = Array2::from_shape_fn((n, n - 1), |(iy, ix)| {
            stream(iy, ix + 1) - stream(iy + 1, ix + 1)
        });
        let north = Array2::from_shape_fn((n - 1, n), |(iy, ix)| {
            stream(iy + 1, ix + 1) - stream(iy + 1, ix)
        });
        Ok(Self { grid, east, north })
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn east(&self) -> &Array2<f64> {
        &self.east
    }

    pub fn north(&self) -> &Array2<f64> {
        &self.north
    }

    /// `self += a·other`.
    pub fn accumulate(&mut self, a: f64, other: &FaceFluxes) {
        self.east.scaled_add(a, &other.east);
        self.north.scaled_add(a, &other.north);
    }

    /// Net outflow of the dual cell around each node.
    pub fn net_outflow(&self) -> Array2<f64> {
        let n = self.grid.n();
        Array2::from_shape_fn((n, n), |(iy, ix)| {
            let mut out = 0.0;
            if ix + 1 < n {
                out += self.east[[iy, ix]];
            }
            if ix > 0 {
                out -= self.east[[iy, ix - 1]];
            }
            if iy + 1 < n {
                out += self.north[[iy, ix]];
            }
            if iy > 0 {
                out -= self.north[[iy - 1, ix]];
            }
            out
        })
    }
}

/// Velocity of `Σ uᵢ bᵢ` in both nodal and face-flux form.
#[derive(Debug, Clone)]
pub struct Stirring {
    pub velocity: VectorField,
    pub fluxes: FaceFluxes,
}

/// A set of distinct cellular flows sampled on one grid.
#[derive(Debug, Clone)]
pub struct BasisSet {
    grid: Grid2D,
    indices: Vec<u32>,
    scaled: bool,
    samples: Vec<VectorField>,
    fluxes: Vec<FaceFluxes>,
}

impl BasisSet {
    pub fn new(grid: Grid2D, indices: &[u32], scaled: bool) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Domain("basis needs at least one index".into()));
        }
        for (pos, &i) in indices.iter().enumerate() {
            check_index(i)?;
            if indices[..pos].contains(&i) {
                return Err(Error::DuplicateBasisIndex(i));
            }
        }
        let samples = indices
            .iter()
            .map(|&i| VectorField::from_fn(grid, |x, y| velocity(i, x, y)))
            .collect();
        let fluxes = indices
            .iter()
            .map(|&i| FaceFluxes::of_basis(grid, i))
            .collect::<Result<_>>()?;
        Ok(Self {
            grid,
            indices: indices.to_vec(),
            scaled,
            samples,
            fluxes,
        })
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn scaled(&self) -> bool {
        self.scaled
    }

    pub fn samples(&self) -> &[VectorField] {
        &self.samples
    }

    pub fn fluxes(&self) -> &[FaceFluxes] {
        &self.fluxes
    }

    fn check_controls(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.len() {
            return Err(Error::ControlLength {
                expected: self.len(),
                found: u.len(),
            });
        }
        Ok(())
    }

    /// Nodal `v = Σ uᵢ bᵢ`.
    pub fn assemble_velocity(&self, u: &[f64]) -> Result<VectorField> {
        self.check_controls(u)?;
        let mut v = VectorField::zeros(self.grid);
        for (ui, b) in u.iter().zip(&self.samples) {
            if *ui != 0.0 {
                v.accumulate(*ui, b);
            }
        }
        Ok(v)
    }

    pub fn assemble_fluxes(&self, u: &[f64]) -> Result<FaceFluxes> {
        self.check_controls(u)?;
        let mut f = FaceFluxes::zeros(self.grid);
        for (ui, b) in u.iter().zip(&self.fluxes) {
            if *ui != 0.0 {
                f.accumulate(*ui, b);
            }
        }
        Ok(f)
    }

    pub fn assemble(&self, u: &[f64]) -> Result<Stirring> {
        Ok(Stirring {
            velocity: self.assemble_velocity(u)?,
            fluxes: self.assemble_fluxes(u)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{divergence, integrate};

    #[test]
    fn eval_basis_examples() {
        let v = eval_basis(1, [0.5, 0.5]).unwrap();
        assert!(v[0].abs() < 1e-16 && v[1].abs() < 1e-16);
        let v = eval_basis(1, [0.25, 0.5]).unwrap();
        assert!(v[0].abs() < 1e-16);
        assert!((v[1] - 0.5_f64.sqrt()).abs() < 1e-15);
        for y in [0.0, 0.1, 0.37, 1.0] {
            assert_eq!(eval_basis(2, [0.0, y]).unwrap()[0], 0.0);
        }
    }

    #[test]
    fn eval_basis_rejects_bad_input() {
        assert!(matches!(eval_basis(0, [0.1, 0.1]), Err(Error::InvalidBasisIndex(0))));
        assert!(eval_basis(1, [1.5, 0.1]).is_err());
    }

    #[test]
    fn hamiltonian_gradient_is_the_velocity() {
        let (x, y, d) = (0.31, 0.72, 1e-6);
        for i in 1..=4 {
            let hs = |a: f64, b: f64| hamiltonian(i, [a, b], true).unwrap();
            let vx = -(hs(x, y + d) - hs(x, y - d)) / (2.0 * d);
            let vy = (hs(x + d, y) - hs(x - d, y)) / (2.0 * d);
            let v = eval_basis(i, [x, y]).unwrap();
            assert!((v[0] - vx).abs() < 1e-8 && (v[1] - vy).abs() < 1e-8);
            let ratio = hamiltonian(i, [x, y], false).unwrap() / hs(x, y);
            assert!((ratio - i as f64 * PI).abs() < 1e-12);
        }
    }

    #[test]
    fn basis_set_validation() {
        let g = Grid2D::new(9).unwrap();
        assert!(BasisSet::new(g, &[], false).is_err());
        assert!(matches!(
            BasisSet::new(g, &[1, 2, 1], false),
            Err(Error::DuplicateBasisIndex(1))
        ));
        assert!(BasisSet::new(g, &[0], false).is_err());
    }

    #[test]
    fn assemble_examples() {
        let g = Grid2D::new(17).unwrap();
        let basis = BasisSet::new(g, &[1, 2], false).unwrap();
        assert_eq!(basis.assemble_velocity(&[0.0, 0.0]).unwrap(), VectorField::zeros(g));
        assert_eq!(&basis.assemble_velocity(&[1.0, 0.0]).unwrap(), &basis.samples()[0]);
        assert!(matches!(
            basis.assemble_velocity(&[1.0]),
            Err(Error::ControlLength { expected: 2, found: 1 })
        ));
        let v = basis.assemble_velocity(&[1.0, 1.0]).unwrap();
        for (ix, iy) in [(3, 5), (0, 16), (8, 8), (11, 2), (16, 9)] {
            let x = [g.coord(ix), g.coord(iy)];
            let a = eval_basis(1, x).unwrap();
            let b = eval_basis(2, x).unwrap();
            let got = v.at(ix, iy);
            assert!((got[0] - a[0] - b[0]).abs() < 1e-15);
            assert!((got[1] - a[1] - b[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn samples_are_tangential_on_boundary() {
        let g = Grid2D::new(33).unwrap();
        let basis = BasisSet::new(g, &[1, 2, 3, 4, 7], false).unwrap();
        let last = g.n() - 1;
        for b in basis.samples() {
            for m in 0..g.n() {
                assert_eq!(b.at(0, m)[0], 0.0);
                assert_eq!(b.at(last, m)[0], 0.0);
                assert_eq!(b.at(m, 0)[1], 0.0);
                assert_eq!(b.at(m, last)[1], 0.0);
            }
        }
    }

    #[test]
    fn face_fluxes_are_discretely_solenoidal() {
        let g = Grid2D::new(33).unwrap();
        for i in 1..=5 {
            let f = FaceFluxes::of_basis(g, i).unwrap();
            let out = f.net_outflow();
            assert!(out.iter().all(|v| v.abs() < 1e-15), "i={i}");
        }
    }

    #[test]
    fn face_fluxes_approximate_normal_velocity() {
        let g = Grid2D::new(65).unwrap();
        let h = g.h();
        let f = FaceFluxes::of_basis(g, 2).unwrap();
        let (ix, iy) = (20, 41);
        let v = eval_basis(2, [g.coord(ix) + 0.5 * h, g.coord(iy)]).unwrap();
        assert!((f.east()[[iy, ix]] / h - v[0]).abs() < 1e-3);
        let v = eval_basis(2, [g.coord(ix), g.coord(iy) + 0.5 * h]).unwrap();
        assert!((f.north()[[iy, ix]] / h - v[1]).abs() < 1e-3);
    }

    #[test]
    fn kinetic_normalization() {
        let g = Grid2D::new(65).unwrap();
        let basis = BasisSet::new(g, &[1, 2, 3, 4], false).unwrap();
        for b in basis.samples() {
            assert!((integrate(&b.speed_sq()) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn sampled_divergence_is_second_order_small() {
        for n in [33, 65, 129] {
            let g = Grid2D::new(n).unwrap();
            let basis = BasisSet::new(g, &[1, 2, 3, 4], false).unwrap();
            let h = g.h();
            for b in basis.samples() {
                let d = divergence(b).max_abs();
                assert!(d <= 10.0 * 16.0 * h * h * PI.powi(3), "n={n} div={d}");
            }
        }
    }
}
