use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cellmix::config::{load_config, preset_theta0};
use cellmix::elliptic::{orbit_period, period_center_limit, period_log_asymptote};
use cellmix::grid::{h1_norm, l2_norm, mean, Grid2D, ScalarField};
use cellmix::mixnorm::{MixNormContext, Spectrum};
use cellmix::optimizer::{feasibility_n, mixing_rate_study, FeasibilityInput, MixingRateConfig};
use cellmix::runner::{run_optimize, run_simulate, write_report};
use cellmix::{snapshot, Error, Result};

const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "cellmix", version, about = "Energy-optimal stirring by cellular flows on the unit square")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize the controls for the configured scenario.
    Optimize(RunArgs),
    /// Forward solve with given (or constant initial) controls.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Control table `time,u1,...,uN` to replay.
        #[arg(long)]
        controls: Option<PathBuf>,
    },
    /// Mix-norm of a snapshot file, preset or expression.
    Mixnorm {
        /// Snapshot CSV path, preset name or expression in x1, x2.
        #[arg(long)]
        field: String,
        /// Grid size for presets and expressions.
        #[arg(long, default_value_t = 129)]
        n: usize,
        #[arg(long, value_enum, default_value_t = SpectrumArg::Continuous)]
        spectrum: SpectrumArg,
    },
    /// Decay of the mix-norm under single steady cellular flows.
    Mixrate {
        /// Frequencies to compare.
        #[arg(long = "N", value_delimiter = ',', required = true)]
        frequencies: Vec<u32>,
        #[arg(long, default_value_t = 1.0)]
        tf: f64,
        #[arg(long, default_value_t = 0.005)]
        tau: f64,
        #[arg(long, default_value_t = 129)]
        n: usize,
        #[arg(long, default_value = "cos(pi*x2)")]
        theta0: String,
        #[arg(long)]
        scaled: bool,
        /// Fit window `start,end` for the log-log slope.
        #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.2, 1.0])]
        window: Vec<f64>,
        /// Optional CSV with the full decay series.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Frequency guaranteeing the mixing target with a single scaled flow.
    Feasibility {
        /// Target fraction of the initial mix-norm.
        #[arg(long)]
        r: f64,
        /// Final time.
        #[arg(long)]
        tf: f64,
        /// Exponent margin of the rate bound, below 1/3.
        #[arg(long)]
        eps: f64,
        /// Rate constant; omit to calibrate it with `--calibrate`.
        #[arg(long, required_unless_present = "calibrate", conflicts_with = "calibrate")]
        c2: Option<f64>,
        /// Calibrate the rate constant from a steady run of this frequency.
        #[arg(long)]
        calibrate: Option<u32>,
        /// Preset name or expression in x1, x2.
        #[arg(long)]
        theta0: String,
        /// Grid nodes per side.
        #[arg(long, default_value_t = 129)]
        n: usize,
    },
    /// Period of a closed orbit of `b_N`.
    Period {
        #[arg(long = "N")]
        frequency: u32,
        #[arg(long = "I")]
        action: f64,
        #[arg(long)]
        scaled: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SpectrumArg {
    Continuous,
    FivePoint,
}

impl From<SpectrumArg> for Spectrum {
    fn from(s: SpectrumArg) -> Self {
        match s {
            SpectrumArg::Continuous => Spectrum::Continuous,
            SpectrumArg::FivePoint => Spectrum::FivePoint,
        }
    }
}

/// Configuration file plus command-line overrides.
#[derive(Args)]
struct RunArgs {
    /// TOML configuration; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Grid nodes per side.
    #[arg(long)]
    n: Option<usize>,
    /// Time step.
    #[arg(long)]
    tau: Option<f64>,
    /// Final time.
    #[arg(long)]
    tf: Option<f64>,
    /// Basis frequencies, comma separated.
    #[arg(long, value_delimiter = ',')]
    indices: Option<Vec<u32>>,
    /// Use the streamfunction normalized by `iπ` (affects orbit periods only).
    #[arg(long)]
    scaled: bool,
    /// Target fraction of the initial mix-norm.
    #[arg(long)]
    r: Option<f64>,
    /// Initial multiplier.
    #[arg(long)]
    lambda0: Option<f64>,
    /// Tolerance on the constraint violation.
    #[arg(long)]
    eps1: Option<f64>,
    /// Tolerance on the relative change of the cost.
    #[arg(long)]
    eps2: Option<f64>,
    /// Initial relaxation factor of the control update.
    #[arg(long)]
    alpha0: Option<f64>,
    /// Iteration cap.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Preset name or expression in x1, x2.
    #[arg(long)]
    theta0: Option<String>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Any configuration key, as `key=value` in TOML syntax.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Suppress the per-iteration progress lines.
    #[arg(long)]
    quiet: bool,
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

impl RunArgs {
    fn overrides(&self, controls: Option<&Path>) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: String| out.push((k.to_string(), v));
        if let Some(v) = self.n {
            push("n", v.to_string());
        }
        for (key, value) in [
            ("tau", self.tau),
            ("tf", self.tf),
            ("r", self.r),
            ("lambda0", self.lambda0),
            ("eps1", self.eps1),
            ("eps2", self.eps2),
            ("alpha0", self.alpha0),
        ] {
            if let Some(v) = value {
                push(key, format!("{v:?}"));
            }
        }
        if let Some(v) = &self.indices {
            let items: Vec<String> = v.iter().map(u32::to_string).collect();
            push("indices", format!("[{}]", items.join(", ")));
        }
        if self.scaled {
            push("scaled", "true".into());
        }
        if let Some(v) = self.max_iter {
            push("max_iter", v.to_string());
        }
        if let Some(v) = &self.theta0 {
            push("theta0", toml_string(v));
        }
        if let Some(v) = &self.output {
            push("output", toml_string(&v.display().to_string()));
        }
        if let Some(v) = controls {
            push("controls", toml_string(&v.display().to_string()));
        }
        for item in &self.set {
            let Some((k, v)) = item.split_once('=') else {
                return Err(Error::Config(vec![format!("--set expects KEY=VALUE, got '{item}'")]));
            };
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }
}

fn load_field(spec: &str, n: usize) -> Result<ScalarField> {
    let path = Path::new(spec);
    if path.is_file() {
        Ok(snapshot::read(path)?.field)
    } else {
        preset_theta0(spec, Grid2D::new(n)?)
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Optimize(args) => {
            let cfg = load_config(args.config.as_deref(), &args.overrides(None)?)?;
            let quiet = args.quiet;
            let report = run_optimize(&cfg, |r| {
                if !quiet {
                    eprintln!(
                        "k={:>4} J={:.6e} mu={:+.4e} lambda={:.4e} alpha={} beta={:.4e}",
                        r.k, r.cost, r.mu, r.lambda, r.alpha, r.beta
                    );
                }
            })?;
            write_report(&report)?;
            println!(
                "{} after {} iterations: J = {}, mix-norm = {} (target {}), output in {}",
                if report.converged { "converged" } else { "NOT converged" },
                report.iterations.len(),
                report.record.total_cost(),
                report.final_mix_norm(),
                report.target_mix_norm(),
                cfg.output.display()
            );
            Ok(if report.converged { 0 } else { EXIT_NOT_CONVERGED })
        }
        Command::Simulate { run, controls } => {
            let cfg = load_config(run.config.as_deref(), &run.overrides(controls.as_deref())?)?;
            let report = run_simulate(&cfg)?;
            write_report(&report)?;
            println!(
                "J = {}, final mix-norm = {}, output in {}",
                report.record.total_cost(),
                report.final_mix_norm(),
                cfg.output.display()
            );
            Ok(0)
        }
        Command::Mixnorm { field, n, spectrum } => {
            let theta = load_field(&field, n)?;
            let ctx = MixNormContext::with_spectrum(theta.grid(), spectrum.into());
            let sq = ctx.mix_norm_sq(&theta)?;
            println!("n = {}", theta.grid().n());
            println!("mean = {}", mean(&theta));
            println!("mixnorm_sq = {sq}");
            println!("mixnorm = {}", sq.sqrt());
            println!("l2_norm = {}", l2_norm(&theta));
            Ok(0)
        }
        Command::Mixrate {
            frequencies,
            tf,
            tau,
            n,
            theta0,
            scaled,
            window,
            output,
        } => {
            let grid = Grid2D::new(n)?;
            let theta = preset_theta0(&theta0, grid)?;
            let cfg = MixingRateConfig {
                frequencies,
                final_time: tf,
                dt: tau,
                fit_window: (window[0], window[1]),
                scaled,
            };
            let study = mixing_rate_study(grid, &theta, &cfg, Default::default())?;
            println!("N,ratio_at_tf,fitted_exponent,in_kernel");
            for row in &study.rows {
                println!(
                    "{},{},{},{}",
                    row.n,
                    row.final_ratio(),
                    row.fitted_exponent,
                    row.in_kernel
                );
            }
            println!("# ratio strictly decreasing in N: {}", study.rate_improves_with_n());
            if let Some(path) = output {
                let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Io(e.into()))?;
                w.write_record(["N", "time", "ratio"]).map_err(|e| Error::Io(e.into()))?;
                for row in &study.rows {
                    for (t, r) in row.times.iter().zip(&row.ratios) {
                        w.write_record([row.n.to_string(), t.to_string(), r.to_string()])
                            .map_err(|e| Error::Io(e.into()))?;
                    }
                }
                w.flush()?;
            }
            Ok(0)
        }
        Command::Feasibility {
            r,
            tf,
            eps,
            c2,
            calibrate,
            theta0,
            n,
        } => {
            let grid = Grid2D::new(n)?;
            let theta = preset_theta0(&theta0, grid)?;
            let fluct = theta.shifted(-mean(&theta));
            let norm_h1 = h1_norm(&fluct);
            let norm_dual = MixNormContext::new(grid).mix_norm(&fluct)?;
            let c2 = match (c2, calibrate) {
                (Some(c), _) => c,
                (None, Some(freq)) => {
                    let cfg = MixingRateConfig {
                        frequencies: vec![freq],
                        final_time: tf,
                        dt: 0.005,
                        fit_window: (0.2 * tf, tf),
                        scaled: true,
                    };
                    let study = mixing_rate_study(grid, &theta, &cfg, Default::default())?;
                    let c = study.rows[0].calibrate_c2(eps, cfg.fit_window);
                    println!("calibrated C2 = {c} (from N = {freq})");
                    c
                }
                (None, None) => unreachable!("clap requires --c2 or --calibrate"),
            };
            let freq = feasibility_n(&FeasibilityInput {
                r,
                final_time: tf,
                eps,
                c2,
                norm_h1,
                norm_dual,
            })?;
            println!("H1 norm = {norm_h1}");
            println!("dual norm = {norm_dual}");
            println!("N = {freq}");
            Ok(0)
        }
        Command::Period {
            frequency,
            action,
            scaled,
        } => {
            println!("period = {}", orbit_period(frequency, action, scaled)?);
            println!("center limit = {}", period_center_limit(frequency, scaled)?);
            println!(
                "log asymptote = {}",
                period_log_asymptote(frequency, action, scaled)?
            );
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
