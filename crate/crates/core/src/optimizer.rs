//! Relaxed fixed-point iteration on the first-order optimality system,
//! plus the frequency bound that guarantees feasibility and the empirical
//! mixing-rate study of single cellular flows.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rayon::prelude::*;

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::grid::{h1_norm, inner, mean, Grid2D, ScalarField};
use crate::mixnorm::MixNormContext;
use crate::transport::{
    cost_of, solve_adjoint, solve_state, AdjointOptions, AdjointTrajectory, AdvectionOperator,
    ControlTrajectory, LinearSolverConfig, StateTrajectory,
};

/// Floor of the adaptive relaxation schedule.
pub const ALPHA_MIN: f64 = 0.05;

/// `M_ij = ∫θ⁺ bᵢ·bⱼ dx + σδᵢⱼ` with `σ = 10⁻¹⁰·tr/N`.
pub fn assemble_m(theta: &ScalarField, basis: &BasisSet) -> Result<DMatrix<f64>> {
    if theta.grid() != basis.grid() {
        return Err(Error::shape(
            format!("n={}", basis.grid().n()),
            format!("n={}", theta.grid().n()),
        ));
    }
    let mut m = kinetic_matrix(&theta.map(|v| v.max(0.0)), basis);
    let n = basis.len();
    let trace = m.trace();
    let shift = if trace > 0.0 {
        1e-10 * trace / n as f64
    } else {
        1e-10
    };
    for i in 0..n {
        m[(i, i)] += shift;
    }
    Ok(m)
}

/// `∫θ bᵢ·bⱼ dx` exactly as the cost sees it: no clamping, no shift.
fn kinetic_matrix(theta: &ScalarField, basis: &BasisSet) -> DMatrix<f64> {
    let samples = basis.samples();
    let n = basis.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = inner(theta, &samples[i].dot(&samples[j]));
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Advection operators of the individual basis flows.
#[derive(Debug, Clone)]
pub struct BasisOperators {
    ops: Vec<AdvectionOperator>,
}

impl BasisOperators {
    pub fn new(basis: &BasisSet) -> Self {
        let ops = basis
            .fluxes()
            .iter()
            .zip(basis.samples())
            .map(|(f, s)| AdvectionOperator::new(f.clone(), s.max_speed()))
            .collect();
        Self { ops }
    }
}

/// `pᵢ = ∫(bᵢ·∇ρ)θ dx` with the discrete advection stencil for `bᵢ·∇`.
pub fn assemble_p(
    theta: &ScalarField,
    rho: &ScalarField,
    ops: &BasisOperators,
) -> Result<DVector<f64>> {
    if theta.grid() != rho.grid() {
        return Err(Error::shape(
            format!("n={}", theta.grid().n()),
            format!("n={}", rho.grid().n()),
        ));
    }
    let mut p = DVector::zeros(ops.ops.len());
    for (i, op) in ops.ops.iter().enumerate() {
        p[i] = inner(theta, &op.apply(rho)?);
    }
    Ok(p)
}

/// `M` and `p` on every step. Step `k` pairs `M(θ_k)` (the cost's left
/// endpoint) with `p(θ_{k+1}, ρ̂_k)`, the combination that makes
/// `τ(M u − p)` the exact gradient of the discrete Lagrangian.
pub fn assemble_system(
    states: &StateTrajectory,
    adjoint: &AdjointTrajectory,
    basis: &BasisSet,
    ops: &BasisOperators,
) -> Result<Vec<(DMatrix<f64>, DVector<f64>)>> {
    let steps = adjoint.transported.len();
    if states.steps() != steps {
        return Err(Error::shape(
            format!("{steps} adjoint steps"),
            format!("{} state steps", states.steps()),
        ));
    }
    (0..steps)
        .map(|k| {
            Ok((
                assemble_m(&states.states[k], basis)?,
                assemble_p(&states.states[k + 1], &adjoint.transported[k], ops)?,
            ))
        })
        .collect()
}

fn solve_small(m: &DMatrix<f64>, p: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = m.clone().cholesky() {
        return Ok(chol.solve(p));
    }
    m.clone()
        .lu()
        .solve(p)
        .ok_or_else(|| Error::Domain("singular control system".into()))
}

/// `u_{k+1}(t) = (1−α)u_k(t) + α M(t)⁻¹p(t)` on every step.
pub fn update_u(
    u: &ControlTrajectory,
    system: &[(DMatrix<f64>, DVector<f64>)],
    alpha: f64,
) -> Result<ControlTrajectory> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!("relaxation must lie in (0, 1], got {alpha}")));
    }
    if system.len() != u.steps() {
        return Err(Error::shape(
            format!("{} steps", u.steps()),
            format!("{} systems", system.len()),
        ));
    }
    let mut next = u.clone();
    for (k, (m, p)) in system.iter().enumerate() {
        let target = solve_small(m, p)?;
        let old = u.at(k);
        let blended: Vec<f64> = old
            .iter()
            .zip(target.iter())
            .map(|(o, t)| (1.0 - alpha) * o + alpha * t)
            .collect();
        next.set_step(k, &blended);
    }
    Ok(next)
}

/// Gradient of the discrete Lagrangian `J + λ·(‖θ(t_f) − θ̄₀‖² − r²C₀²)`
/// with respect to every control entry, `τ(M_k u_k − p_k)`. `M_k` here is
/// the plain kinetic matrix of `θ_k`, so small undershoots of the transport
/// scheme are differentiated exactly rather than clamped.
pub fn control_gradient(
    u: &ControlTrajectory,
    states: &StateTrajectory,
    adjoint: &AdjointTrajectory,
    basis: &BasisSet,
    ops: &BasisOperators,
) -> Result<Array2<f64>> {
    if states.steps() != u.steps() || adjoint.transported.len() != u.steps() {
        return Err(Error::shape(
            format!("{} steps", u.steps()),
            format!(
                "{} state and {} adjoint steps",
                states.steps(),
                adjoint.transported.len()
            ),
        ));
    }
    if u.controls() != basis.len() {
        return Err(Error::ControlLength {
            expected: basis.len(),
            found: u.controls(),
        });
    }
    let mut grad = Array2::zeros((u.controls(), u.steps()));
    for k in 0..u.steps() {
        let m = kinetic_matrix(&states.states[k], basis);
        let p = assemble_p(&states.states[k + 1], &adjoint.transported[k], ops)?;
        let g = (m * DVector::from_vec(u.at(k)) - p) * u.dt();
        for i in 0..u.controls() {
            grad[[i, k]] = g[i];
        }
    }
    Ok(grad)
}

/// `λ_{k+1} = max(λ_k + β·μ, 0)`.
pub fn update_lambda(lambda: f64, beta: f64, mu: f64) -> f64 {
    (lambda + beta * mu).max(0.0)
}

/// Halve the relaxation (down to [`ALPHA_MIN`]) once the target is met.
pub fn schedule_alpha(alpha: f64, mu: f64, eps1: f64) -> f64 {
    if mu < eps1 {
        (0.5 * alpha).max(ALPHA_MIN)
    } else {
        alpha
    }
}

/// Multiplier step size from the current cost and violation.
pub fn schedule_beta(cost: f64, mu: f64, eps1: f64) -> f64 {
    if mu >= eps1 {
        if cost >= 1.0 {
            2.0 * cost / mu
        } else {
            100.0
        }
    } else {
        250.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeConfig {
    pub r: f64,
    pub final_time: f64,
    pub dt: f64,
    pub lambda0: f64,
    pub alpha0: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub max_iter: usize,
    /// Constant initial control, one entry per basis flow.
    pub initial_controls: Vec<f64>,
    pub adjoint: AdjointOptions,
}

impl OptimizeConfig {
    /// Parameters of the reference runs for a basis of `controls` flows:
    /// the first flow idle, the others at unit strength.
    pub fn reference(controls: usize) -> Self {
        let mut initial_controls = vec![1.0; controls];
        initial_controls[0] = 0.0;
        Self {
            r: 0.3,
            final_time: 1.0,
            dt: 0.005,
            lambda0: 1.0,
            alpha0: 1.0,
            eps1: 5e-4,
            eps2: 1e-3,
            max_iter: 200,
            initial_controls,
            adjoint: AdjointOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.r > 0.0 && self.r < 1.0) {
            errs.push(format!("r must lie in (0, 1), got {}", self.r));
        }
        if let Err(e) = ControlTrajectory::step_count(self.final_time, self.dt) {
            errs.push(e.to_string());
        }
        if self.lambda0 < 0.0 {
            errs.push(format!("lambda0 must be >= 0, got {}", self.lambda0));
        }
        if !(self.alpha0 > 0.0 && self.alpha0 <= 1.0) {
            errs.push(format!("alpha0 must lie in (0, 1], got {}", self.alpha0));
        }
        if self.eps1 <= 0.0 || self.eps2 <= 0.0 {
            errs.push("eps1 and eps2 must be positive".into());
        }
        if self.max_iter == 0 {
            errs.push("max_iter must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// One row of the iteration log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    /// `J(u^k)` along its own trajectory.
    pub cost: f64,
    pub mu: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    /// `|J(u^k) − J(u^{k−1})| / |J(u^{k−1})|`, absent on the first pass.
    pub rel_change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub k: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub cost_history: Vec<f64>,
    pub mu_history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub converged: bool,
    pub state: OptimizerState,
    pub history: Vec<IterationRecord>,
    /// Controls of the last completed forward solve.
    pub controls: ControlTrajectory,
    pub trajectory: StateTrajectory,
    pub mean0: f64,
    pub c0_sq: f64,
}

impl OptimizeOutcome {
    pub fn final_mix_norm(&self, mixnorm: &MixNormContext) -> Result<f64> {
        mixnorm.mix_norm(&self.trajectory.final_state().shifted(-self.mean0))
    }
}

fn relative_change(current: f64, previous: f64) -> f64 {
    if previous == 0.0 {
        if current == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (current - previous).abs() / previous.abs()
    }
}

/// Fixed-point iteration on the optimality system.
///
/// Each pass solves the state with `u^k`, updates `β` and `λ` from the
/// violation, sweeps the adjoint back from the new multiplier, then relaxes
/// the controls toward `M⁻¹p`. The loop stops as soon as a forward solve
/// satisfies `μ ≤ ε₁` with relative cost change `≤ ε₂`; those controls and
/// that trajectory are returned.
pub fn optimize(
    cfg: &OptimizeConfig,
    basis: &BasisSet,
    theta0: &ScalarField,
    mixnorm: &MixNormContext,
    solver: LinearSolverConfig,
    mut observe: impl FnMut(&IterationRecord),
) -> Result<OptimizeOutcome> {
    cfg.validate()?;
    if cfg.initial_controls.len() != basis.len() {
        return Err(Error::ControlLength {
            expected: basis.len(),
            found: cfg.initial_controls.len(),
        });
    }
    let mean0 = mean(theta0);
    let c0_sq = mixnorm.mix_norm_sq(&theta0.shifted(-mean0))?;
    if c0_sq <= 1e-14 * (1.0 + mean0 * mean0) {
        return Err(Error::DegenerateInitialState(c0_sq));
    }

    let ops = BasisOperators::new(basis);
    let mut u = ControlTrajectory::constant(&cfg.initial_controls, cfg.final_time, cfg.dt)?;
    let mut state = OptimizerState {
        k: 0,
        lambda: cfg.lambda0,
        alpha: cfg.alpha0,
        beta: f64::NAN,
        cost_history: Vec::new(),
        mu_history: Vec::new(),
    };
    let mut history = Vec::new();
    let mut previous_cost: Option<f64> = None;

    for k in 0..cfg.max_iter {
        let trajectory = solve_state(theta0, basis, &u, solver)?;
        let cost = cost_of(&trajectory, basis, &u)?;
        let mu = mixnorm.violation(trajectory.final_state(), mean0, cfg.r, c0_sq)?;
        if !cost.is_finite() || !mu.is_finite() {
            return Err(Error::NonFinite("optimizer iterate"));
        }
        let rel_change = previous_cost.map(|p| relative_change(cost, p));

        state.k = k;
        state.beta = schedule_beta(cost, mu, cfg.eps1);
        state.lambda = update_lambda(state.lambda, state.beta, mu);
        state.cost_history.push(cost);
        state.mu_history.push(mu);
        let record = IterationRecord {
            k,
            cost,
            mu,
            lambda: state.lambda,
            alpha: state.alpha,
            beta: state.beta,
            rel_change,
        };
        observe(&record);
        history.push(record);

        if mu <= cfg.eps1 && rel_change.is_some_and(|r| r <= cfg.eps2) {
            return Ok(OptimizeOutcome {
                converged: true,
                state,
                history,
                controls: u,
                trajectory,
                mean0,
                c0_sq,
            });
        }
        if k + 1 == cfg.max_iter {
            return Ok(OptimizeOutcome {
                converged: false,
                state,
                history,
                controls: u,
                trajectory,
                mean0,
                c0_sq,
            });
        }

        let adjoint = solve_adjoint(
            trajectory.final_state(),
            state.lambda,
            mean0,
            basis,
            &u,
            mixnorm,
            cfg.adjoint,
        )?;
        state.alpha = schedule_alpha(state.alpha, mu, cfg.eps1);
        let system = assemble_system(&trajectory, &adjoint, basis, &ops)?;
        debug_assert!(system.iter().all(|(m, _)| m.clone().cholesky().is_some()));
        u = update_u(&u, &system, state.alpha)?;
        previous_cost = Some(cost);
    }
    unreachable!("loop returns on its last iteration")
}

/// Inputs of the feasibility frequency bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityInput {
    pub r: f64,
    pub final_time: f64,
    pub eps: f64,
    /// Rate constant of the scaled-Hamiltonian mixing estimate.
    pub c2: f64,
    /// `‖θ₀ − θ̄‖_{H¹}`.
    pub norm_h1: f64,
    /// `‖θ₀ − θ̄‖_{(H¹)′}`.
    pub norm_dual: f64,
}

/// Smallest frequency `N` for which a single scaled cellular flow is
/// guaranteed to reach the target by `t_f`:
/// `⌈(C₂‖θ₀−θ̄‖_{H¹}/(r‖θ₀−θ̄‖_{(H¹)′}))^{2/(1−3ε)} / t_f^{2/3}⌉`, at least 1.
pub fn feasibility_n(inp: &FeasibilityInput) -> Result<u64> {
    let mut errs = Vec::new();
    if !(inp.eps > 0.0 && inp.eps < 1.0 / 3.0) {
        errs.push(format!("eps must lie in (0, 1/3), got {}", inp.eps));
    }
    if !(inp.r > 0.0 && inp.r < 1.0) {
        errs.push(format!("r must lie in (0, 1), got {}", inp.r));
    }
    for (name, v) in [
        ("t_f", inp.final_time),
        ("C2", inp.c2),
        ("H1 norm", inp.norm_h1),
        ("dual norm", inp.norm_dual),
    ] {
        if !(v > 0.0) {
            errs.push(format!("{name} must be positive, got {v}"));
        }
    }
    if !errs.is_empty() {
        return Err(Error::Domain(errs.join("; ")));
    }
    let base = inp.c2 * inp.norm_h1 / (inp.r * inp.norm_dual);
    let value = base.powf(2.0 / (1.0 - 3.0 * inp.eps)) / inp.final_time.powf(2.0 / 3.0);
    if !value.is_finite() || value > u64::MAX as f64 {
        return Err(Error::Domain(format!("frequency bound overflows: {value}")));
    }
    Ok((value.ceil() as u64).max(1))
}

/// Decay record of one single-flow run.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingRateRow {
    pub n: u32,
    pub times: Vec<f64>,
    /// `‖θ(t) − θ̄‖_{(H¹)′} / ‖θ₀ − θ̄‖_{H¹}`.
    pub ratios: Vec<f64>,
    /// `−d ln(ratio)/d ln t`, least squares over the fit window.
    pub fitted_exponent: f64,
    /// The datum is (numerically) invariant under the flow.
    pub in_kernel: bool,
}

impl MixingRateRow {
    pub fn final_ratio(&self) -> f64 {
        *self.ratios.last().expect("at least one sample")
    }

    /// Smallest `C₂` with `ratio(t) ≤ C₂/(N^{3/2}t)^{1/3−ε}` at every sample
    /// inside `window`.
    pub fn calibrate_c2(&self, eps: f64, window: (f64, f64)) -> f64 {
        let nf = self.n as f64;
        self.times
            .iter()
            .zip(&self.ratios)
            .filter(|(t, _)| **t >= window.0 - 1e-12 && **t <= window.1 + 1e-12 && **t > 0.0)
            .map(|(t, r)| r * (nf.powf(1.5) * t).powf(1.0 / 3.0 - eps))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingRateStudy {
    pub rows: Vec<MixingRateRow>,
    pub scaled: bool,
    pub fit_window: (f64, f64),
}

impl MixingRateStudy {
    /// Final ratio strictly decreasing along the listed frequencies.
    pub fn rate_improves_with_n(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[1].final_ratio() < w[0].final_ratio())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingRateConfig {
    pub frequencies: Vec<u32>,
    pub final_time: f64,
    pub dt: f64,
    pub fit_window: (f64, f64),
    pub scaled: bool,
}

fn fit_log_slope(times: &[f64], ratios: &[f64], window: (f64, f64)) -> f64 {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(ratios)
        .filter(|(t, r)| **t >= window.0 - 1e-12 && **t <= window.1 + 1e-12 && **r > 0.0)
        .map(|(t, r)| (t.ln(), r.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / m, sy / m);
    let (num, den) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| {
        (a + (x - mx) * (y - my), b + (x - mx) * (x - mx))
    });
    num / den
}

/// Runs each single flow `b_N` with steady unit control from `theta0`
/// and records the normalized mix-norm decay. Frequencies run in
/// parallel; rows come back in input order.
pub fn mixing_rate_study(
    grid: Grid2D,
    theta0: &ScalarField,
    cfg: &MixingRateConfig,
    solver: LinearSolverConfig,
) -> Result<MixingRateStudy> {
    if theta0.grid() != grid {
        return Err(Error::shape(format!("n={}", grid.n()), format!("n={}", theta0.grid().n())));
    }
    let steps = ControlTrajectory::step_count(cfg.final_time, cfg.dt)?;
    let mixnorm = MixNormContext::new(grid);
    let mean0 = mean(theta0);
    let fluctuation = theta0.shifted(-mean0);
    let h1 = h1_norm(&fluctuation);
    if h1 <= 0.0 {
        return Err(Error::DegenerateInitialState(h1));
    }
    let rows = cfg
        .frequencies
        .par_iter()
        .map(|&n| -> Result<MixingRateRow> {
            let basis = BasisSet::new(grid, &[n], cfg.scaled)?;
            let u = ControlTrajectory::constant(&[1.0], cfg.final_time, cfg.dt)?;
            let traj = solve_state(theta0, &basis, &u, solver)?;
            let times: Vec<f64> = (0..=steps).map(|k| k as f64 * cfg.dt).collect();
            let ratios = traj
                .states
                .iter()
                .map(|s| Ok(mixnorm.mix_norm(&s.shifted(-mean0))? / h1))
                .collect::<Result<Vec<_>>>()?;
            let fitted_exponent = -fit_log_slope(&times, &ratios, cfg.fit_window);
            let in_kernel = ratios[steps] >= 0.99 * ratios[0];
            Ok(MixingRateRow {
                n,
                times,
                ratios,
                fitted_exponent,
                in_kernel,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MixingRateStudy {
        rows,
        scaled: cfg.scaled,
        fit_window: cfg.fit_window,
    })
}
