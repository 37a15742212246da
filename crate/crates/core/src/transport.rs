//! Forward transport of the scalar (implicit Euler), backward sweep of the
//! adjoint, and the kinetic-energy cost.
//!
//! Advection uses central fluxes over the dual cells of the node grid:
//! `(W A θ)_c = ½ Σ_nb F_{c→nb} θ_nb`, where `W` holds the trapezoid
//! weights and `F` are the exact face fluxes of the stirring field. `W A`
//! is antisymmetric, so `A` is skew-adjoint in the trapezoid inner product,
//! and `Σ_c F_{c→nb} = 0` makes the scheme conserve `∫θ`.

use ndarray::{Array2, Axis};

use crate::basis::{BasisSet, FaceFluxes};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{inner, Grid2D, ScalarField};
use crate::mixnorm::MixNormContext;

/// Piecewise-constant controls: column `k` applies on `[kτ, (k+1)τ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTrajectory {
    dt: f64,
    /// `values[[i, k]]` is `u_i` on step `k`.
    values: Array2<f64>,
}

impl ControlTrajectory {
    pub fn new(dt: f64, values: Array2<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Domain(format!("time step must be positive, got {dt}")));
        }
        if values.ncols() == 0 || values.nrows() == 0 {
            return Err(Error::Domain("control trajectory is empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("control trajectory"));
        }
        Ok(Self { dt, values })
    }

    /// Number of steps `t_f/τ`, rejecting a step that does not divide `t_f`.
    pub fn step_count(final_time: f64, dt: f64) -> Result<usize> {
        if !(dt > 0.0 && final_time > 0.0) {
            return Err(Error::Domain(format!(
                "need positive t_f and tau, got t_f={final_time}, tau={dt}"
            )));
        }
        let steps = (final_time / dt).round();
        if steps < 1.0 || (steps * dt - final_time).abs() > 1e-12 * final_time.max(1.0) {
            return Err(Error::Domain(format!(
                "tau={dt} does not divide t_f={final_time}"
            )));
        }
        Ok(steps as usize)
    }

    /// The same control vector on every step of `[0, t_f]`.
    pub fn constant(profile: &[f64], final_time: f64, dt: f64) -> Result<Self> {
        let steps = Self::step_count(final_time, dt)?;
        let values = Array2::from_shape_fn((profile.len(), steps), |(i, _)| profile[i]);
        Self::new(dt, values)
    }

    pub fn zeros(controls: usize, final_time: f64, dt: f64) -> Result<Self> {
        Self::constant(&vec![0.0; controls], final_time, dt)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.values.ncols()
    }

    pub fn controls(&self) -> usize {
        self.values.nrows()
    }

    pub fn final_time(&self) -> f64 {
        self.steps() as f64 * self.dt
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    /// Control vector on step `k`.
    pub fn at(&self, k: usize) -> Vec<f64> {
        self.values.column(k).to_vec()
    }

    pub fn set_step(&mut self, k: usize, u: &[f64]) {
        for (dst, src) in self.values.column_mut(k).iter_mut().zip(u) {
            *dst = *src;
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            dt: self.dt,
            values: self.values.mapv(|v| a * v),
        }
    }

    /// Controls replayed backwards in time with flipped sign.
    pub fn reversed_negated(&self) -> Self {
        let mut values = self.values.mapv(|v| -v);
        values.invert_axis(Axis(1));
        Self { dt: self.dt, values }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Stopping rule for the per-step linear solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSolverConfig {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for LinearSolverConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_iter: 5000,
        }
    }
}

/// Discrete `v·∇` for one stirring field.
#[derive(Debug, Clone)]
pub struct AdvectionOperator {
    grid: Grid2D,
    fluxes: FaceFluxes,
    weights: Array2<f64>,
    inv_weights: Array2<f64>,
    max_speed: f64,
}

impl AdvectionOperator {
    pub fn new(fluxes: FaceFluxes, max_speed: f64) -> Self {
        let grid = fluxes.grid();
        let weights = grid.trapezoid_weights();
        let inv_weights = weights.mapv(|w| 1.0 / w);
        Self {
            grid,
            fluxes,
            weights,
            inv_weights,
            max_speed,
        }
    }

    /// Operator of `Σ uᵢ bᵢ`.
    pub fn from_controls(basis: &BasisSet, u: &[f64]) -> Result<Self> {
        let stirring = basis.assemble(u)?;
        Ok(Self::new(stirring.fluxes, stirring.velocity.max_speed()))
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn max_speed(&self) -> f64 {
        self.max_speed
    }

    pub fn is_zero(&self) -> bool {
        self.fluxes.east().iter().all(|f| *f == 0.0) && self.fluxes.north().iter().all(|f| *f == 0.0)
    }

    /// `τ·max|v|/h`.
    pub fn courant(&self, dt: f64) -> f64 {
        dt * self.max_speed / self.grid.h()
    }

    /// `out = A x`.
    pub fn apply_into(&self, x: &Array2<f64>, out: &mut Array2<f64>) {
        let n = self.grid.n();
        let east = self.fluxes.east();
        let north = self.fluxes.north();
        for iy in 0..n {
            for ix in 0..n {
                let mut acc = 0.0;
                if ix + 1 < n {
                    acc += east[[iy, ix]] * x[[iy, ix + 1]];
                }
                if ix > 0 {
                    acc -= east[[iy, ix - 1]] * x[[iy, ix - 1]];
                }
                if iy + 1 < n {
                    acc += north[[iy, ix]] * x[[iy + 1, ix]];
                }
                if iy > 0 {
                    acc -= north[[iy - 1, ix]] * x[[iy - 1, ix]];
                }
                out[[iy, ix]] = 0.5 * acc * self.inv_weights[[iy, ix]];
            }
        }
    }

    pub fn apply(&self, theta: &ScalarField) -> Result<ScalarField> {
        self.check(theta)?;
        let mut out = Array2::zeros(self.grid.shape());
        self.apply_into(theta.values(), &mut out);
        ScalarField::from_values(self.grid, out)
    }

    fn check(&self, f: &ScalarField) -> Result<()> {
        if f.grid() != self.grid {
            return Err(Error::shape(
                format!("n={}", self.grid.n()),
                format!("n={}", f.grid().n()),
            ));
        }
        Ok(())
    }

    fn wdot(&self, a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let mut total = 0.0;
        for ((w, x), y) in self.weights.iter().zip(a.iter()).zip(b.iter()) {
            total += w * x * y;
        }
        total
    }

    /// Solves `(I + s·A) x = b`.
    ///
    /// `A` is skew-adjoint for the trapezoid inner product, so the normal
    /// operator `(I − sA)(I + sA) = I − s²A²` is symmetric positive definite
    /// there and conjugate gradients converge for every `s`. The normal
    /// residual bounds the true one, and every Krylov iterate started from
    /// `b` keeps `∫x = ∫b`.
    pub fn solve_shifted(
        &self,
        s: f64,
        b: &ScalarField,
        cfg: LinearSolverConfig,
    ) -> Result<ScalarField> {
        self.check(b)?;
        let shape = self.grid.shape();
        let bv = b.values();
        let b_norm = self.wdot(bv, bv).sqrt();
        if b_norm == 0.0 || s == 0.0 || self.is_zero() {
            return Ok(b.clone());
        }

        let mut x = bv.clone();
        let mut tmp = Array2::zeros(shape);
        let mut tmp2 = Array2::zeros(shape);

        // r = (I − sA)(b − (I + sA)x) with x = b, i.e. −s(I − sA)A b
        self.apply_into(&x, &mut tmp);
        tmp.mapv_inplace(|v| -s * v);
        let mut r = tmp.clone();
        self.apply_into(&tmp, &mut tmp2);
        r.scaled_add(-s, &tmp2);

        let mut p = r.clone();
        let mut rr = self.wdot(&r, &r);
        let target = cfg.rel_tol * b_norm;
        let mut q = Array2::zeros(shape);
        for iter in 0..cfg.max_iter {
            if rr.sqrt() <= target {
                return ScalarField::from_values(self.grid, x);
            }
            // q = (I − sA)(I + sA) p
            self.apply_into(&p, &mut tmp);
            tmp.zip_mut_with(&p, |t, pv| *t = pv + s * *t);
            self.apply_into(&tmp, &mut tmp2);
            q.assign(&tmp);
            q.scaled_add(-s, &tmp2);

            let pq = self.wdot(&p, &q);
            if pq <= 0.0 {
                return Err(Error::SolverNonConvergence {
                    iterations: iter,
                    residual: rr.sqrt() / b_norm,
                });
            }
            let alpha = rr / pq;
            x.scaled_add(alpha, &p);
            r.scaled_add(-alpha, &q);
            let rr_next = self.wdot(&r, &r);
            let beta = rr_next / rr;
            rr = rr_next;
            p.zip_mut_with(&r, |pv, rv| *pv = rv + beta * *pv);
        }
        if rr.sqrt() <= target {
            return ScalarField::from_values(self.grid, x);
        }
        Err(Error::SolverNonConvergence {
            iterations: cfg.max_iter,
            residual: rr.sqrt() / b_norm,
        })
    }
}

/// One implicit Euler step of `∂tθ + v·∇θ = 0`: `(I + τA)θ_{k+1} = θ_k`.
pub fn step_state_implicit(
    theta: &ScalarField,
    op: &AdvectionOperator,
    dt: f64,
    cfg: LinearSolverConfig,
) -> Result<ScalarField> {
    if dt <= 0.0 {
        return Err(Error::Domain(format!("time step must be positive, got {dt}")));
    }
    op.solve_shifted(dt, theta, cfg)
}

/// How the backward sweep transports the adjoint over one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjointScheme {
    /// `(I − τA)ρ̂ = ρ_{k+1}`: the exact transpose of the implicit state step.
    #[default]
    Implicit,
    /// `ρ̂ = ρ_{k+1} + τAρ_{k+1}`, guarded by `τ·max|v|/h ≤ 1`.
    Explicit,
}

/// Kinetic-energy density driving the adjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjointSource {
    /// `½|Σᵢ uᵢbᵢ|²`, the θ-derivative of the cost integrand.
    #[default]
    SquareOfSum,
    /// `½Σᵢ|uᵢbᵢ|²`.
    SumOfSquares,
}

/// Transport part of one backward adjoint step.
pub fn transport_adjoint(
    rho_next: &ScalarField,
    op: &AdvectionOperator,
    dt: f64,
    scheme: AdjointScheme,
    cfg: LinearSolverConfig,
) -> Result<ScalarField> {
    match scheme {
        AdjointScheme::Implicit => op.solve_shifted(-dt, rho_next, cfg),
        AdjointScheme::Explicit => {
            let cfl = op.courant(dt);
            if cfl > 1.0 {
                return Err(Error::CflViolation(cfl));
            }
            rho_next.add_scaled(dt, &op.apply(rho_next)?)
        }
    }
}

/// One explicit backward step of `−∂tρ − v·∇ρ = source`:
/// `ρ_k = ρ_{k+1} + τ(v·∇ₕρ_{k+1} + source)`.
pub fn step_adjoint_explicit(
    rho_next: &ScalarField,
    op: &AdvectionOperator,
    source: &ScalarField,
    dt: f64,
) -> Result<ScalarField> {
    let moved = transport_adjoint(
        rho_next,
        op,
        dt,
        AdjointScheme::Explicit,
        LinearSolverConfig::default(),
    )?;
    moved.add_scaled(dt, source)
}

/// One backward step with the implicit transport.
pub fn step_adjoint_implicit(
    rho_next: &ScalarField,
    op: &AdvectionOperator,
    source: &ScalarField,
    dt: f64,
    cfg: LinearSolverConfig,
) -> Result<ScalarField> {
    let moved = transport_adjoint(rho_next, op, dt, AdjointScheme::Implicit, cfg)?;
    moved.add_scaled(dt, source)
}

/// `½|Σᵢ uᵢbᵢ|²` or `½Σᵢ|uᵢbᵢ|²` at every node.
pub fn kinetic_density(basis: &BasisSet, u: &[f64], kind: AdjointSource) -> Result<ScalarField> {
    match kind {
        AdjointSource::SquareOfSum => Ok(basis.assemble_velocity(u)?.speed_sq().scaled(0.5)),
        AdjointSource::SumOfSquares => {
            if u.len() != basis.len() {
                return Err(Error::ControlLength {
                    expected: basis.len(),
                    found: u.len(),
                });
            }
            let mut acc = ScalarField::zeros(basis.grid());
            for (ui, b) in u.iter().zip(basis.samples()) {
                acc = acc.add_scaled(0.5 * ui * ui, &b.speed_sq())?;
            }
            Ok(acc)
        }
    }
}

/// θ at every step `0..=T`.
#[derive(Debug, Clone)]
pub struct StateTrajectory {
    pub states: Vec<ScalarField>,
}

impl StateTrajectory {
    pub fn initial(&self) -> &ScalarField {
        &self.states[0]
    }

    pub fn final_state(&self) -> &ScalarField {
        self.states.last().expect("trajectory holds at least θ₀")
    }

    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }
}

fn check_shapes(theta0: &ScalarField, basis: &BasisSet, u: &ControlTrajectory) -> Result<()> {
    if theta0.grid() != basis.grid() {
        return Err(Error::shape(
            format!("n={}", basis.grid().n()),
            format!("n={}", theta0.grid().n()),
        ));
    }
    if u.controls() != basis.len() {
        return Err(Error::ControlLength {
            expected: basis.len(),
            found: u.controls(),
        });
    }
    Ok(())
}

/// Implicit Euler over all steps of `u`.
pub fn solve_state(
    theta0: &ScalarField,
    basis: &BasisSet,
    u: &ControlTrajectory,
    cfg: LinearSolverConfig,
) -> Result<StateTrajectory> {
    check_shapes(theta0, basis, u)?;
    if !theta0.is_finite() {
        return Err(Error::NonFinite("initial state"));
    }
    let mut states = Vec::with_capacity(u.steps() + 1);
    states.push(theta0.clone());
    for k in 0..u.steps() {
        let op = AdvectionOperator::from_controls(basis, &u.at(k))?;
        let next = step_state_implicit(&states[k], &op, u.dt(), cfg)?;
        states.push(next);
    }
    Ok(StateTrajectory { states })
}

/// Per-step cost contributions `½τ∫θ_k|v_k|²` (left-endpoint rule).
pub fn cost_increments(
    states: &StateTrajectory,
    basis: &BasisSet,
    u: &ControlTrajectory,
) -> Result<Vec<f64>> {
    if states.steps() != u.steps() {
        return Err(Error::shape(
            format!("{} steps", u.steps()),
            format!("{} steps", states.steps()),
        ));
    }
    (0..u.steps())
        .map(|k| {
            let speed = basis.assemble_velocity(&u.at(k))?.speed_sq();
            Ok(0.5 * u.dt() * inner(&states.states[k], &speed))
        })
        .collect()
}

/// Kinetic energy `½∫₀^{t_f}∫_Ω θ|Σuᵢbᵢ|² dx dt`.
pub fn cost_of(states: &StateTrajectory, basis: &BasisSet, u: &ControlTrajectory) -> Result<f64> {
    Ok(cost_increments(states, basis, u)?.iter().sum())
}

/// Adjoint at every step plus the transported values `ρ̂_k` (before the
/// source is added), which pair with `θ_{k+1}` in the control gradient.
#[derive(Debug, Clone)]
pub struct AdjointTrajectory {
    pub rho: Vec<ScalarField>,
    pub transported: Vec<ScalarField>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AdjointOptions {
    pub scheme: AdjointScheme,
    pub source: AdjointSource,
    pub solver: LinearSolverConfig,
}

/// Terminal adjoint `−2λ𝒜⁻¹(θ(t_f) − θ̄₀)`.
pub fn adjoint_terminal(
    theta_tf: &ScalarField,
    lambda: f64,
    mean0: f64,
    mixnorm: &MixNormContext,
) -> Result<ScalarField> {
    if lambda < 0.0 {
        return Err(Error::Domain(format!("multiplier must be >= 0, got {lambda}")));
    }
    Ok(mixnorm
        .solve_helmholtz(&theta_tf.shifted(-mean0))?
        .scaled(-2.0 * lambda))
}

/// Backward sweep from `ρ(t_f) = −2λ𝒜⁻¹(θ(t_f) − θ̄₀)`.
///
/// The source enters as `−½|v|²`, the sign that pairs with the terminal
/// value above so that `u = M⁻¹p` is the stationarity condition of
/// `J + λ·(‖θ(t_f) − θ̄₀‖² − r²C₀²)`.
pub fn solve_adjoint(
    theta_tf: &ScalarField,
    lambda: f64,
    mean0: f64,
    basis: &BasisSet,
    u: &ControlTrajectory,
    mixnorm: &MixNormContext,
    opts: AdjointOptions,
) -> Result<AdjointTrajectory> {
    check_shapes(theta_tf, basis, u)?;
    let steps = u.steps();
    let dt = u.dt();
    let mut rho = vec![ScalarField::zeros(basis.grid()); steps + 1];
    let mut transported = vec![ScalarField::zeros(basis.grid()); steps];
    rho[steps] = adjoint_terminal(theta_tf, lambda, mean0, mixnorm)?;
    for k in (0..steps).rev() {
        let uk = u.at(k);
        let op = AdvectionOperator::from_controls(basis, &uk)?;
        let moved = transport_adjoint(&rho[k + 1], &op, dt, opts.scheme, opts.solver)?;
        let density = kinetic_density(basis, &uk, opts.source)?;
        rho[k] = moved.add_scaled(-dt, &density)?;
        transported[k] = moved;
    }
    Ok(AdjointTrajectory { rho, transported })
}

/// Diagnostics of one forward solve.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    /// `‖θ(kτ) − θ̄₀‖²_{(H¹)′}` for `k = 0..=T`.
    pub mixnorm_series: Vec<f64>,
    /// Cost accumulated up to step `k`, `k = 0..=T`.
    pub cost_cumulative: Vec<f64>,
    pub snapshots: Vec<(usize, ScalarField)>,
}

impl TrajectoryRecord {
    pub fn build(
        states: &StateTrajectory,
        basis: &BasisSet,
        u: &ControlTrajectory,
        mixnorm: &MixNormContext,
        mean0: f64,
        snapshot_steps: &[usize],
    ) -> Result<Self> {
        let mixnorm_series = states
            .states
            .iter()
            .map(|s| mixnorm.mix_norm_sq(&s.shifted(-mean0)))
            .collect::<Result<Vec<_>>>()?;
        let mut cost_cumulative = Vec::with_capacity(states.states.len());
        let mut acc = 0.0;
        cost_cumulative.push(acc);
        for inc in cost_increments(states, basis, u)? {
            acc += inc;
            cost_cumulative.push(acc);
        }
        let snapshots = snapshot_steps
            .iter()
            .filter(|&&k| k < states.states.len())
            .map(|&k| (k, states.states[k].clone()))
            .collect();
        Ok(Self {
            mixnorm_series,
            cost_cumulative,
            snapshots,
        })
    }

    pub fn total_cost(&self) -> f64 {
        *self.cost_cumulative.last().unwrap_or(&0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{integrate, l2_norm, mean};
    use std::f64::consts::PI;

    fn setup(n: usize, indices: &[u32]) -> (Grid2D, BasisSet) {
        let g = Grid2D::new(n).unwrap();
        (g, BasisSet::new(g, indices, false).unwrap())
    }

    fn tanh_stripe(g: Grid2D) -> ScalarField {
        ScalarField::from_fn(g, |_, y| ((2.0 * y - 1.0) / 0.2).tanh() + 1.0)
    }

    #[test]
    fn control_trajectory_validation() {
        assert_eq!(ControlTrajectory::step_count(1.0, 0.005).unwrap(), 200);
        assert!(ControlTrajectory::step_count(1.0, 0.003).is_err());
        assert!(ControlTrajectory::step_count(1.0, 0.0).is_err());
        let u = ControlTrajectory::constant(&[0.0, 1.0], 1.0, 0.02).unwrap();
        assert_eq!(u.steps(), 50);
        assert!((u.final_time() - 1.0).abs() < 1e-12);
        assert_eq!(u.at(17), vec![0.0, 1.0]);
        let bad = Array2::from_elem((1, 3), f64::INFINITY);
        assert!(ControlTrajectory::new(0.1, bad).is_err());
    }

    #[test]
    fn operator_is_skew_and_conservative() {
        let (g, basis) = setup(17, &[1, 2, 3]);
        let op = AdvectionOperator::from_controls(&basis, &[0.7, -1.3, 0.4]).unwrap();
        let a = ScalarField::from_fn(g, |x, y| (3.0 * x).sin() + y * y);
        let b = ScalarField::from_fn(g, |x, y| (x - 0.3) * (y + 0.1) * 4.0 + (5.0 * y).cos());
        let lhs = inner(&a, &op.apply(&b).unwrap());
        let rhs = inner(&op.apply(&a).unwrap(), &b);
        assert!((lhs + rhs).abs() < 1e-14);
        assert!(integrate(&op.apply(&b).unwrap()).abs() < 1e-14);
        assert!(op.apply(&ScalarField::constant(g, 3.0)).unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn operator_approximates_advective_derivative() {
        let (g, basis) = setup(129, &[1]);
        let op = AdvectionOperator::from_controls(&basis, &[1.0]).unwrap();
        let f = ScalarField::from_fn(g, |x, y| (PI * x).cos() * y);
        let got = op.apply(&f).unwrap();
        let (ix, iy) = (40, 90);
        let (x, y) = (g.coord(ix), g.coord(iy));
        let v = crate::basis::eval_basis(1, [x, y]).unwrap();
        let exact = v[0] * (-PI * (PI * x).sin() * y) + v[1] * (PI * x).cos();
        assert!((got.at(ix, iy) - exact).abs() < 1e-3);
    }

    #[test]
    fn zero_velocity_is_identity() {
        let (g, basis) = setup(17, &[1, 2]);
        let theta = tanh_stripe(g);
        let op = AdvectionOperator::from_controls(&basis, &[0.0, 0.0]).unwrap();
        let next = step_state_implicit(&theta, &op, 0.005, LinearSolverConfig::default()).unwrap();
        assert_eq!(next, theta);
    }

    #[test]
    fn implicit_step_conserves_mass_and_dissipates() {
        let (g, basis) = setup(65, &[1, 2]);
        let theta = tanh_stripe(g);
        let op = AdvectionOperator::from_controls(&basis, &[0.5, 2.0]).unwrap();
        let cfg = LinearSolverConfig::default();
        let next = step_state_implicit(&theta, &op, 0.01, cfg).unwrap();
        assert!((integrate(&next) - integrate(&theta)).abs() < 1e-13);
        assert!(l2_norm(&next) <= l2_norm(&theta));
        let residual = next
            .add_scaled(0.01, &op.apply(&next).unwrap())
            .unwrap()
            .add_scaled(-1.0, &theta)
            .unwrap();
        assert!(l2_norm(&residual) <= 1e-10 * l2_norm(&theta));
    }

    #[test]
    fn large_steps_still_converge() {
        let (g, basis) = setup(33, &[3]);
        let op = AdvectionOperator::from_controls(&basis, &[20.0]).unwrap();
        assert!(op.courant(0.05) > 10.0);
        let theta = tanh_stripe(g);
        assert!(step_state_implicit(&theta, &op, 0.05, LinearSolverConfig::default()).is_ok());
        let tight = LinearSolverConfig {
            rel_tol: 1e-14,
            max_iter: 2,
        };
        assert!(matches!(
            step_state_implicit(&theta, &op, 0.05, tight),
            Err(Error::SolverNonConvergence { .. })
        ));
    }

    #[test]
    fn step_halving_difference_is_second_order() {
        let (g, basis) = setup(65, &[1]);
        let theta = ScalarField::from_fn(g, |x, _| (PI * x).cos());
        let op = AdvectionOperator::from_controls(&basis, &[1.0]).unwrap();
        let cfg = LinearSolverConfig {
            rel_tol: 1e-13,
            max_iter: 5000,
        };
        let mut diffs = Vec::new();
        for dt in [0.01, 0.005, 0.0025] {
            let full = step_state_implicit(&theta, &op, dt, cfg).unwrap();
            let half = step_state_implicit(&theta, &op, 0.5 * dt, cfg).unwrap();
            let half = step_state_implicit(&half, &op, 0.5 * dt, cfg).unwrap();
            diffs.push(l2_norm(&full.add_scaled(-1.0, &half).unwrap()));
        }
        for w in diffs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((order - 2.0).abs() < 0.1, "order {order}");
        }
    }

    #[test]
    fn explicit_adjoint_examples() {
        let (g, basis) = setup(17, &[1, 2]);
        let rho = tanh_stripe(g);
        let zero = AdvectionOperator::from_controls(&basis, &[0.0, 0.0]).unwrap();
        let none = ScalarField::zeros(g);
        assert_eq!(step_adjoint_explicit(&rho, &zero, &none, 0.01).unwrap(), rho);

        let s = ScalarField::constant(g, 0.3);
        let mut acc = ScalarField::zeros(g);
        for _ in 0..100 {
            acc = step_adjoint_explicit(&acc, &zero, &s, 0.01).unwrap();
        }
        assert!(acc.values().iter().all(|v| (v - 0.3).abs() < 1e-12));

        let fast = AdvectionOperator::from_controls(&basis, &[10.0, 0.0]).unwrap();
        assert!(matches!(
            step_adjoint_explicit(&rho, &fast, &none, 0.05),
            Err(Error::CflViolation(_))
        ));
    }

    #[test]
    fn kinetic_density_examples() {
        let (g, basis) = setup(17, &[1, 2]);
        let d = kinetic_density(&basis, &[1.0, 0.0], AdjointSource::SquareOfSum).unwrap();
        assert!((d.at(4, 4) - 0.25).abs() < 1e-15);
        let a = kinetic_density(&basis, &[1.0, 1.0], AdjointSource::SquareOfSum).unwrap();
        let b = kinetic_density(&basis, &[1.0, 1.0], AdjointSource::SumOfSquares).unwrap();
        let cross = basis.samples()[0].dot(&basis.samples()[1]);
        let diff = a.add_scaled(-1.0, &b).unwrap().add_scaled(-1.0, &cross).unwrap();
        assert!(diff.max_abs() < 1e-14);
        assert_eq!(g.n(), 17);
    }

    #[test]
    fn solve_state_with_zero_controls_is_static() {
        let (g, basis) = setup(17, &[1, 2]);
        let theta = tanh_stripe(g);
        let u = ControlTrajectory::zeros(2, 0.1, 0.01).unwrap();
        let traj = solve_state(&theta, &basis, &u, LinearSolverConfig::default()).unwrap();
        assert_eq!(traj.final_state(), &theta);
        let ctx = MixNormContext::new(g);
        let rec = TrajectoryRecord::build(&traj, &basis, &u, &ctx, mean(&theta), &[0, 5]).unwrap();
        assert!(rec.mixnorm_series.windows(2).all(|w| w[0] == w[1]));
        assert!(rec.cost_cumulative.iter().all(|c| *c == 0.0));
        assert_eq!(rec.snapshots.len(), 2);
    }

    #[test]
    fn solve_state_rejects_mismatched_controls() {
        let (g, basis) = setup(17, &[1, 2]);
        let u = ControlTrajectory::zeros(3, 0.1, 0.01).unwrap();
        assert!(matches!(
            solve_state(&tanh_stripe(g), &basis, &u, LinearSolverConfig::default()),
            Err(Error::ControlLength { .. })
        ));
    }

    #[test]
    fn time_reversal_returns_close_to_start() {
        // forward then backward implicit Euler composes to (I − τ²A²)⁻¹ per
        // step pair, so the probe measures first-order dissipation only
        let (g, basis) = setup(65, &[1, 2]);
        let theta = tanh_stripe(g);
        let cfg = LinearSolverConfig::default();
        let mut errors = Vec::new();
        for dt in [0.005, 0.0025] {
            let u = ControlTrajectory::constant(&[0.0, 1.0], 40.0 * dt, dt).unwrap();
            let fwd = solve_state(&theta, &basis, &u, cfg).unwrap();
            let back = solve_state(fwd.final_state(), &basis, &u.reversed_negated(), cfg).unwrap();
            errors.push(l2_norm(&back.final_state().add_scaled(-1.0, &theta).unwrap()));
        }
        assert!(errors[0] <= 5e-3 * l2_norm(&theta), "reversal error {}", errors[0]);
        let order = (errors[0] / errors[1]).log2();
        assert!(order > 1.7, "order {order}");
    }

    #[test]
    fn cost_examples() {
        let (g, basis) = setup(33, &[1]);
        let ones = ScalarField::constant(g, 1.0);
        let u = ControlTrajectory::constant(&[1.0], 1.0, 0.05).unwrap();
        let frozen = StateTrajectory {
            states: vec![ones.clone(); u.steps() + 1],
        };
        assert!((cost_of(&frozen, &basis, &u).unwrap() - 0.25).abs() < 1e-6);
        let c1 = cost_of(&frozen, &basis, &u).unwrap();
        let c2 = cost_of(&frozen, &basis, &u.scaled(2.0)).unwrap();
        assert!((c2 - 4.0 * c1).abs() < 1e-14);
        let zero = ControlTrajectory::zeros(1, 1.0, 0.05).unwrap();
        assert_eq!(cost_of(&frozen, &basis, &zero).unwrap(), 0.0);
    }

    #[test]
    fn adjoint_examples() {
        let (g, basis) = setup(33, &[1, 2]);
        let ctx = MixNormContext::new(g);
        let theta = tanh_stripe(g);
        let m0 = mean(&theta);
        let opts = AdjointOptions::default();
        let zero = ControlTrajectory::zeros(2, 0.2, 0.02).unwrap();

        let adj = solve_adjoint(&theta, 0.0, m0, &basis, &zero, &ctx, opts).unwrap();
        assert!(adj.rho.iter().all(|r| r.max_abs() == 0.0));

        let adj = solve_adjoint(&theta, 1.0, m0, &basis, &zero, &ctx, opts).unwrap();
        let frozen = ctx.solve_helmholtz(&theta.shifted(-m0)).unwrap().scaled(-2.0);
        for r in &adj.rho {
            assert!(r.add_scaled(-1.0, &frozen).unwrap().max_abs() < 1e-14);
        }

        // the source mean is invariant under transport: mean ρ(0) = −t_f·c²/2
        let c = 1.5;
        let u = ControlTrajectory::constant(&[c, 0.0], 1.0, 0.02).unwrap();
        let adj = solve_adjoint(&theta, 0.0, m0, &basis, &u, &ctx, opts).unwrap();
        assert!((mean(&adj.rho[0]) + c * c / 2.0 * 0.5).abs() < 1e-3);
    }

    #[test]
    fn explicit_and_implicit_adjoints_agree_for_small_steps() {
        let (g, basis) = setup(33, &[1, 2]);
        let ctx = MixNormContext::new(g);
        let theta = tanh_stripe(g);
        let m0 = mean(&theta);
        let u = ControlTrajectory::constant(&[0.3, 0.2], 0.1, 0.001).unwrap();
        let implicit = solve_adjoint(&theta, 1.0, m0, &basis, &u, &ctx, AdjointOptions::default())
            .unwrap();
        let opts = AdjointOptions {
            scheme: AdjointScheme::Explicit,
            ..Default::default()
        };
        let explicit = solve_adjoint(&theta, 1.0, m0, &basis, &u, &ctx, opts).unwrap();
        let diff = implicit.rho[0].add_scaled(-1.0, &explicit.rho[0]).unwrap();
        assert!(l2_norm(&diff) < 1e-3 * l2_norm(&implicit.rho[0]));
    }
}
