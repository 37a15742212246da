//! Orchestration of `optimize` and `simulate` runs and their output layout:
//!
//! ```text
//! <output>/manifest.json
//! <output>/iterations.csv      k,J,mu,lambda,alpha,beta
//! <output>/controls.csv        time,u1,...,uN
//! <output>/mixnorm.csv         step,time,mixnorm_sq,mixnorm,cost_cumulative
//! <output>/snapshots/t_<time>.csv
//! ```

use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::grid::mean;
use crate::optimizer::{optimize, IterationRecord};
use crate::snapshot;
use crate::transport::{solve_state, ControlTrajectory, TrajectoryRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Optimize,
    Simulate,
}

impl Subcommand {
    fn name(self) -> &'static str {
        match self {
            Subcommand::Optimize => "optimize",
            Subcommand::Simulate => "simulate",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub subcommand: Subcommand,
    pub config: RunConfig,
    /// `true` for simulations; the stopping criteria for optimizations.
    pub converged: bool,
    pub iterations: Vec<IterationRecord>,
    pub controls: ControlTrajectory,
    pub record: TrajectoryRecord,
    pub mean0: f64,
    pub c0_sq: f64,
    pub wall_time: f64,
}

impl RunReport {
    pub fn final_mix_norm(&self) -> f64 {
        self.record.mixnorm_series.last().map_or(0.0, |v| v.sqrt())
    }

    pub fn target_mix_norm(&self) -> f64 {
        self.config.r * self.c0_sq.sqrt()
    }

    pub fn manifest(&self) -> serde_json::Value {
        let last = self.iterations.last();
        json!({
            "program": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "subcommand": self.subcommand.name(),
            "config": self.config,
            "resolved": {
                "h": 1.0 / (self.config.n as f64 - 1.0),
                "steps": self.controls.steps(),
                "initial_controls": self.config.resolved_initial_controls(),
                "snapshot_steps": self.config.snapshot_steps(),
            },
            "result": {
                "converged": self.converged,
                "iterations": self.iterations.len(),
                "final_cost": self.record.total_cost(),
                "final_mu": last.map(|r| r.mu),
                "final_lambda": last.map(|r| r.lambda),
                "mean0": self.mean0,
                "c0_sq": self.c0_sq,
                "final_mix_norm": self.final_mix_norm(),
                "target_mix_norm": self.target_mix_norm(),
            },
            "wall_time_seconds": self.wall_time,
        })
    }
}

fn record_strings(fields: impl IntoIterator<Item = String>) -> Vec<String> {
    fields.into_iter().collect()
}

pub fn render_iterations(rows: &[IterationRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["k", "J", "mu", "lambda", "alpha", "beta"])
        .map_err(csv_error)?;
    for r in rows {
        w.write_record(record_strings([
            r.k.to_string(),
            r.cost.to_string(),
            r.mu.to_string(),
            r.lambda.to_string(),
            r.alpha.to_string(),
            r.beta.to_string(),
        ]))
        .map_err(csv_error)?;
    }
    finish(w)
}

pub fn render_controls(u: &ControlTrajectory) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["time".to_string()];
    header.extend((1..=u.controls()).map(|i| format!("u{i}")));
    w.write_record(&header).map_err(csv_error)?;
    for k in 0..u.steps() {
        let mut row = vec![(k as f64 * u.dt()).to_string()];
        row.extend(u.at(k).iter().map(f64::to_string));
        w.write_record(&row).map_err(csv_error)?;
    }
    finish(w)
}

pub fn render_mixnorm(record: &TrajectoryRecord, dt: f64) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "time", "mixnorm_sq", "mixnorm", "cost_cumulative"])
        .map_err(csv_error)?;
    for (k, (m, c)) in record
        .mixnorm_series
        .iter()
        .zip(&record.cost_cumulative)
        .enumerate()
    {
        w.write_record(record_strings([
            k.to_string(),
            (k as f64 * dt).to_string(),
            m.to_string(),
            m.sqrt().to_string(),
            c.to_string(),
        ]))
        .map_err(csv_error)?;
    }
    finish(w)
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is ASCII"))
}

/// Reads a `time,u1,...,uN` table back into a control trajectory on the
/// step `dt`; row `k` must sit at `time = kτ`.
pub fn read_controls(path: &Path, dt: f64, controls: usize) -> Result<ControlTrajectory> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => parse_err(1, format!("{other:?}")),
    })?;
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let expected: Vec<String> = std::iter::once("time".to_string())
        .chain((1..=controls).map(|i| format!("u{i}")))
        .collect();
    if header.iter().collect::<Vec<_>>() != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(parse_err(
            1,
            format!("expected header '{}'", expected.join(",")),
        ));
    }
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let values = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(line, e.to_string()))?;
        if (values[0] - k as f64 * dt).abs() > 1e-9 {
            return Err(parse_err(
                line,
                format!("time {} does not match step {k} of tau = {dt}", values[0]),
            ));
        }
        columns.push(values[1..].to_vec());
    }
    let steps = columns.len();
    let values = Array2::from_shape_fn((controls, steps), |(i, k)| columns[k][i]);
    ControlTrajectory::new(dt, values)
}

/// Writes the full output layout of a report into `config.output`.
pub fn write_report(report: &RunReport) -> Result<()> {
    let dir = &report.config.output;
    let snaps = dir.join("snapshots");
    fs::create_dir_all(&snaps)?;
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&report.manifest()).expect("manifest serializes") + "\n",
    )?;
    fs::write(dir.join("iterations.csv"), render_iterations(&report.iterations)?)?;
    fs::write(dir.join("controls.csv"), render_controls(&report.controls)?)?;
    fs::write(
        dir.join("mixnorm.csv"),
        render_mixnorm(&report.record, report.config.tau)?,
    )?;
    for (step, field) in &report.record.snapshots {
        let t = *step as f64 * report.config.tau;
        snapshot::write(&snaps.join(snapshot::file_name(t)), field, t, "theta")?;
    }
    Ok(())
}

/// Runs the fixed-point optimization, calling `observe` after every
/// iteration. Nothing is written; see [`write_report`].
pub fn run_optimize(cfg: &RunConfig, observe: impl FnMut(&IterationRecord)) -> Result<RunReport> {
    cfg.validate()?;
    let start = Instant::now();
    let basis = cfg.basis()?;
    let theta0 = cfg.theta0_field()?;
    let mixnorm = cfg.mixnorm()?;
    let out = optimize(
        &cfg.optimize_config(),
        &basis,
        &theta0,
        &mixnorm,
        cfg.solver(),
        observe,
    )?;
    let record = TrajectoryRecord::build(
        &out.trajectory,
        &basis,
        &out.controls,
        &mixnorm,
        out.mean0,
        &cfg.snapshot_steps(),
    )?;
    Ok(RunReport {
        subcommand: Subcommand::Optimize,
        config: cfg.clone(),
        converged: out.converged,
        iterations: out.history,
        controls: out.controls,
        record,
        mean0: out.mean0,
        c0_sq: out.c0_sq,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Forward solve with the controls in `cfg.controls`, or with the constant
/// initial controls when no table is given.
pub fn run_simulate(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let start = Instant::now();
    let basis = cfg.basis()?;
    let theta0 = cfg.theta0_field()?;
    let mixnorm = cfg.mixnorm()?;
    let controls = match &cfg.controls {
        Some(path) => read_controls(path, cfg.tau, basis.len())?,
        None => ControlTrajectory::constant(&cfg.resolved_initial_controls(), cfg.tf, cfg.tau)?,
    };
    let steps = ControlTrajectory::step_count(cfg.tf, cfg.tau)?;
    if controls.steps() != steps {
        return Err(Error::shape(
            format!("{steps} control steps"),
            format!("{} rows", controls.steps()),
        ));
    }
    let mean0 = mean(&theta0);
    let c0_sq = mixnorm.mix_norm_sq(&theta0.shifted(-mean0))?;
    let trajectory = solve_state(&theta0, &basis, &controls, cfg.solver())?;
    let record = TrajectoryRecord::build(
        &trajectory,
        &basis,
        &controls,
        &mixnorm,
        mean0,
        &cfg.snapshot_steps(),
    )?;
    Ok(RunReport {
        subcommand: Subcommand::Simulate,
        config: cfg.clone(),
        converged: true,
        iterations: Vec::new(),
        controls,
        record,
        mean0,
        c0_sq,
        wall_time: start.elapsed().as_secs_f64(),
    })
}
