//! Run configuration: TOML schema, defaults, validation and initial data.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::{Grid2D, ScalarField};
use crate::mixnorm::{MixNormContext, Spectrum};
use crate::optimizer::OptimizeConfig;
use crate::transport::{AdjointOptions, AdjointScheme, ControlTrajectory, LinearSolverConfig};

/// Named initial data.
pub const PRESETS: [&str; 3] = ["tanh-stripe", "sine-stripe", "cosine-x"];

/// Every setting that affects the numerics of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Nodes per side.
    pub n: usize,
    pub tau: f64,
    pub tf: f64,
    pub indices: Vec<u32>,
    pub scaled: bool,
    pub r: f64,
    pub lambda0: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub alpha0: f64,
    pub max_iter: usize,
    /// Preset name or closed-form expression in `x1`, `x2`.
    pub theta0: String,
    /// Constant initial controls; defaults to `(0, 1, ..., 1)`.
    pub initial_controls: Option<Vec<f64>>,
    /// Control table to replay in `simulate`.
    pub controls: Option<PathBuf>,
    pub output: PathBuf,
    pub snapshot_times: Vec<f64>,
    pub adjoint_scheme: AdjointScheme,
    pub spectrum: Spectrum,
    pub solver_rel_tol: f64,
    pub solver_max_iter: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 129,
            tau: 0.005,
            tf: 1.0,
            indices: vec![1, 2],
            scaled: false,
            r: 0.3,
            lambda0: 1.0,
            eps1: 5e-4,
            eps2: 1e-3,
            alpha0: 1.0,
            max_iter: 200,
            theta0: "tanh-stripe".into(),
            initial_controls: None,
            controls: None,
            output: PathBuf::from("cellmix-run"),
            snapshot_times: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            adjoint_scheme: AdjointScheme::Implicit,
            spectrum: Spectrum::Continuous,
            solver_rel_tol: LinearSolverConfig::default().rel_tol,
            solver_max_iter: LinearSolverConfig::default().max_iter,
        }
    }
}

impl RunConfig {
    /// Every violated invariant, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if let Err(e) = Grid2D::new(self.n) {
            errs.push(format!("n: {e}"));
        }
        if !(self.tau > 0.0 && self.tf > 0.0) {
            errs.push(format!("tau and tf must be positive, got tau={} tf={}", self.tau, self.tf));
        } else if let Err(e) = ControlTrajectory::step_count(self.tf, self.tau) {
            errs.push(format!("tau: {e}"));
        }
        if self.indices.is_empty() {
            errs.push("indices: at least one basis flow is required".into());
        }
        for (k, &i) in self.indices.iter().enumerate() {
            if i == 0 {
                errs.push("indices: basis indices start at 1".into());
            }
            if self.indices[..k].contains(&i) {
                errs.push(format!("indices: {i} listed more than once"));
            }
        }
        if !(self.r > 0.0 && self.r < 1.0) {
            errs.push(format!("r must lie in (0, 1), got {}", self.r));
        }
        if !(self.lambda0 >= 0.0) {
            errs.push(format!("lambda0 must be >= 0, got {}", self.lambda0));
        }
        if !(self.eps1 > 0.0) {
            errs.push(format!("eps1 must be positive, got {}", self.eps1));
        }
        if !(self.eps2 > 0.0) {
            errs.push(format!("eps2 must be positive, got {}", self.eps2));
        }
        if !(self.alpha0 > 0.0 && self.alpha0 <= 1.0) {
            errs.push(format!("alpha0 must lie in (0, 1], got {}", self.alpha0));
        }
        if self.max_iter == 0 {
            errs.push("max_iter must be positive".into());
        }
        if let Err(e) = resolve_theta0(&self.theta0) {
            errs.push(format!("theta0: {e}"));
        }
        if let Some(u) = &self.initial_controls {
            if u.len() != self.indices.len() {
                errs.push(format!(
                    "initial_controls has {} entries, indices has {}",
                    u.len(),
                    self.indices.len()
                ));
            }
            if u.iter().any(|v| !v.is_finite()) {
                errs.push("initial_controls must be finite".into());
            }
        }
        for &t in &self.snapshot_times {
            if !(t >= 0.0 && t <= self.tf) {
                errs.push(format!("snapshot time {t} outside [0, tf]"));
            } else if self.tau > 0.0 && ((t / self.tau).round() * self.tau - t).abs() > 1e-9 {
                errs.push(format!("snapshot time {t} is not a multiple of tau"));
            }
        }
        if !(self.solver_rel_tol > 0.0) {
            errs.push(format!("solver_rel_tol must be positive, got {}", self.solver_rel_tol));
        }
        if self.solver_max_iter == 0 {
            errs.push("solver_max_iter must be positive".into());
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.violations();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn grid(&self) -> Result<Grid2D> {
        Grid2D::new(self.n)
    }

    pub fn basis(&self) -> Result<BasisSet> {
        BasisSet::new(self.grid()?, &self.indices, self.scaled)
    }

    pub fn theta0_field(&self) -> Result<ScalarField> {
        preset_theta0(&self.theta0, self.grid()?)
    }

    pub fn mixnorm(&self) -> Result<MixNormContext> {
        Ok(MixNormContext::with_spectrum(self.grid()?, self.spectrum))
    }

    pub fn solver(&self) -> LinearSolverConfig {
        LinearSolverConfig {
            rel_tol: self.solver_rel_tol,
            max_iter: self.solver_max_iter,
        }
    }

    pub fn resolved_initial_controls(&self) -> Vec<f64> {
        self.initial_controls.clone().unwrap_or_else(|| {
            let mut u = vec![1.0; self.indices.len()];
            if let Some(first) = u.first_mut() {
                *first = 0.0;
            }
            u
        })
    }

    pub fn optimize_config(&self) -> OptimizeConfig {
        OptimizeConfig {
            r: self.r,
            final_time: self.tf,
            dt: self.tau,
            lambda0: self.lambda0,
            alpha0: self.alpha0,
            eps1: self.eps1,
            eps2: self.eps2,
            max_iter: self.max_iter,
            initial_controls: self.resolved_initial_controls(),
            adjoint: AdjointOptions {
                scheme: self.adjoint_scheme,
                solver: self.solver(),
                ..AdjointOptions::default()
            },
        }
    }

    /// Steps at which snapshots are written, sorted and deduplicated.
    pub fn snapshot_steps(&self) -> Vec<usize> {
        let mut steps: Vec<usize> = self
            .snapshot_times
            .iter()
            .map(|t| (t / self.tau).round() as usize)
            .collect();
        steps.sort_unstable();
        steps.dedup();
        steps
    }
}

enum Theta0 {
    Preset(&'static str),
    Expr(Expr),
}

fn resolve_theta0(spec: &str) -> std::result::Result<Theta0, String> {
    if let Some(p) = PRESETS.iter().find(|p| **p == spec.trim()) {
        return Ok(Theta0::Preset(p));
    }
    Expr::parse(spec).map(Theta0::Expr).map_err(|e| {
        format!(
            "'{spec}' is neither a preset ({}) nor a valid expression ({e})",
            PRESETS.join(", ")
        )
    })
}

/// Initial datum by preset name or closed-form expression.
pub fn preset_theta0(spec: &str, grid: Grid2D) -> Result<ScalarField> {
    let field = match resolve_theta0(spec).map_err(|e| Error::Config(vec![e]))? {
        Theta0::Preset("tanh-stripe") => {
            ScalarField::from_fn(grid, |_, y| ((2.0 * y - 1.0) / 0.2).tanh() + 1.0)
        }
        Theta0::Preset("sine-stripe") => {
            ScalarField::from_fn(grid, |_, y| (2.0 * std::f64::consts::PI * y).sin() + 1.0)
        }
        Theta0::Preset(_) => ScalarField::from_fn(grid, |x, _| (std::f64::consts::PI * x).cos()),
        Theta0::Expr(e) => ScalarField::from_fn(grid, |x, y| e.eval(x, y)),
    };
    if !field.is_finite() {
        return Err(Error::NonFinite("initial datum"));
    }
    Ok(field)
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Value of a `key=value` override: TOML syntax when it parses, a bare
/// string otherwise.
fn override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Parses a configuration document and applies `key=value` overrides on top.
pub fn parse_config(path: &Path, text: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
    let to_parse = |e: toml::de::Error| Error::Parse {
        path: path.display().to_string(),
        line: e.span().map_or(1, |s| line_of(text, s.start)),
        message: e.message().trim().to_string(),
    };
    let mut cfg: RunConfig = toml::from_str(text).map_err(to_parse)?;
    if !overrides.is_empty() {
        let mut table: toml::Table = toml::from_str(text).map_err(to_parse)?;
        for (key, raw) in overrides {
            table.insert(key.clone(), override_value(raw));
        }
        cfg = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| {
                Error::Config(vec![format!("command-line override: {}", e.message().trim())])
            })?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Reads, fills defaults, applies overrides and validates. `None` starts
/// from the defaults alone.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Config(vec![format!("cannot read {}: {e}", p.display())]))?;
            parse_config(p, &text, overrides)
        }
        None => parse_config(Path::new("<defaults>"), "", overrides),
    }
}
