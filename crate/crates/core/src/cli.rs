//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on configuration or input errors, 2 when the
//! numerics fail (divergence, failed step search, unreliable estimate, an
//! assumption violated).

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde_json::json;

use crate::analysis::{
    check_assumption1, check_assumption2, fit_loglog_slope, pre_linear_window, Window,
    LINEAR_ONSET_SLOPE,
};
use crate::driver::{run_algorithm1, Method, RunConfig, StepMode, TraceStride};
use crate::error::Error;
use crate::integrators::{empirical_order, resolve_tableau, ORDER_TOLERANCE};
use crate::objectives::{builtin, ObjectiveName};
use crate::sweeps::{figure_plan, run_plan, summary_csv, thread_count, write_results, Figure, SweepSettings};
use crate::trace::RunTrace;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "odeaccel", version, about = "Accelerated minimization by Runge-Kutta discretization of a damped ODE")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one method on one objective and write its trace.
    Run(RunArgs),
    /// Run a predefined experiment sweep.
    Sweep(SweepArgs),
    /// Estimate the convergence order of a tableau.
    OrderCheck(OrderArgs),
    /// Sample the flatness and derivative-bound assumptions.
    Assumptions(AssumptionArgs),
    /// Fit a log-log slope to a trace file.
    Slope(SlopeArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub objective: ObjectiveName,
    #[arg(long, default_value = "ode")]
    pub method: Method,
    #[arg(long, default_value_t = 2)]
    pub q: u32,
    #[arg(long, default_value = "rk4")]
    pub tableau: String,
    #[arg(long = "N", default_value_t = 100_000)]
    pub n: usize,
    /// Fixed step size.
    #[arg(long, group = "step")]
    pub h: Option<f64>,
    /// Schedule constant, h = C·N^(−1/(s+1)).
    #[arg(long = "C", group = "step")]
    pub c: Option<f64>,
    /// Search the step size (the default).
    #[arg(long = "auto-h", group = "step")]
    pub auto_h: bool,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    /// Record every k-th iterate instead of geometric thinning.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub start_time: f64,
    /// Friction numerator; defaults to 2q+1.
    #[arg(long)]
    pub friction: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub figure: Figure,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// key=value settings file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long = "N")]
    pub n: Option<usize>,
    #[arg(long)]
    pub probe_iters: Option<usize>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct OrderArgs {
    /// Built-in name or tableau file.
    #[arg(long)]
    pub tableau: String,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct AssumptionArgs {
    #[arg(long)]
    pub objective: ObjectiveName,
    #[arg(long)]
    pub p: u32,
    #[arg(long, default_value_t = 1)]
    pub i: u32,
    /// Derivative orders for the bound check, e.g. `2,3,4`.
    #[arg(long, value_delimiter = ',')]
    pub orders: Vec<u32>,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.5)]
    pub radius: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SlopeArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long, default_value = "0.3:1.0", conflicts_with = "pre_linear")]
    pub window: Window,
    /// Fit over the leading window that ends at the onset of linear convergence.
    #[arg(long)]
    pub pre_linear: bool,
    #[arg(long)]
    pub json: bool,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInput(_) | Error::Unsupported(_) | Error::Parse { .. } | Error::Io(_) => {
            EXIT_CONFIG
        }
        _ => EXIT_NUMERIC,
    }
}

fn finite_or(v: f64, label: &str) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(label)
    }
}

impl RunArgs {
    pub fn to_config(&self) -> RunConfig {
        let step = match (self.h, self.c) {
            (Some(h), _) => StepMode::Fixed(h),
            (None, Some(c)) => StepMode::Schedule(c),
            _ => StepMode::AutoSearch,
        };
        RunConfig {
            objective: self.objective,
            dim: self.dim,
            seed: self.seed,
            method: self.method,
            tableau: self.tableau.clone(),
            q: self.q,
            friction: self.friction,
            n_iters: self.n,
            step,
            stride: self.stride.map_or(TraceStride::Geometric, TraceStride::Every),
            start_time: self.start_time,
            ..Default::default()
        }
    }
}

fn cmd_run(a: &RunArgs, out: &mut dyn Write) -> Result<i32, Error> {
    let trace = run_algorithm1(&a.to_config())?;
    trace.write_csv(&a.out)?;
    let final_gap = trace.final_gap().unwrap_or(f64::NAN);
    if a.json {
        let v = json!({
            "outcome": trace.outcome.to_string(),
            "final_gap": finite_or(final_gap, "diverged"),
            "h": trace.h,
            "rows": trace.rows.len(),
            "trace": a.out.display().to_string(),
        });
        writeln!(out, "{v}")?;
    } else {
        writeln!(out, "outcome={} final_gap={final_gap:e} h={:e}", trace.outcome, trace.h)?;
    }
    Ok(if trace.outcome.is_diverged() { EXIT_NUMERIC } else { EXIT_OK })
}

fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<i32, Error> {
    let file = match &a.config {
        Some(p) => SweepSettings::load(p)?,
        None => SweepSettings::default(),
    };
    let flags = SweepSettings {
        seed: a.seed,
        dim: a.dim,
        n_iters: a.n,
        probe_iters: a.probe_iters,
        stride: None,
    };
    let plan = figure_plan(a.figure, &file.overridden_by(&flags));
    let results = run_plan(&plan, thread_count())?;
    write_results(&a.out_dir, &results)?;
    if a.json {
        let members: Vec<_> = results
            .iter()
            .map(|r| {
                json!({
                    "name": r.name,
                    "h": r.trace.h,
                    "outcome": r.trace.outcome.to_string(),
                    "slope": r.slope.map(|s| s.slope),
                    "r2": r.slope.map(|s| s.r_squared),
                })
            })
            .collect();
        let v = json!({
            "figure": a.figure.to_string(),
            "out_dir": a.out_dir.display().to_string(),
            "members": members,
        });
        writeln!(out, "{v}")?;
    } else {
        write!(out, "{}", summary_csv(&results))?;
    }
    Ok(EXIT_OK)
}

fn cmd_order_check(a: &OrderArgs, out: &mut dyn Write) -> Result<i32, Error> {
    let tab = resolve_tableau(&a.tableau)?;
    let estimate = empirical_order(&tab)?;
    let certified = (estimate - tab.declared_order as f64).abs() <= ORDER_TOLERANCE;
    if a.json {
        let v = json!({
            "tableau": tab.name,
            "stages": tab.stages(),
            "declared_order": tab.declared_order,
            "estimated_order": estimate,
            "certified": certified,
        });
        writeln!(out, "{v}")?;
    } else {
        writeln!(
            out,
            "{}: order ≈ {estimate:.1} (estimate {estimate:.3}, declared {}, {})",
            tab.name,
            tab.declared_order,
            if certified { "certified" } else { "not certified" }
        )?;
    }
    Ok(if certified { EXIT_OK } else { EXIT_NUMERIC })
}

fn cmd_assumptions(a: &AssumptionArgs, out: &mut dyn Write) -> Result<i32, Error> {
    let obj = builtin(a.objective, a.dim, a.seed)?;
    let rep = check_assumption1(&obj, a.p, a.i, a.samples, a.radius, a.seed)?;
    let bound = if a.orders.is_empty() {
        None
    } else {
        Some(check_assumption2(&obj, &a.orders, a.samples, a.radius, a.seed)?)
    };
    if a.json {
        let mut v = json!({
            "objective": obj.name(),
            "p": rep.p_tested,
            "i": rep.i_tested,
            "l_effective": finite_or(rep.l_effective, "infinite"),
            "l_reference": rep.l_reference,
            "violations": rep.violations,
            "samples": rep.samples,
        });
        if let Some(b) = &bound {
            v["derivative_bounds"] = json!({
                "max_norms": b.max_norms.iter().map(|(k, m)| json!({"order": k, "max_norm": m})).collect::<Vec<_>>(),
                "declared_m": b.declared_m,
                "within_declared": b.within_declared,
            });
        }
        writeln!(out, "{v}")?;
    } else {
        writeln!(
            out,
            "{} p={} i={}: violations = {} of {} samples, L_effective = {:e}, L_reference = {}",
            obj.name(),
            rep.p_tested,
            rep.i_tested,
            rep.violations,
            rep.samples,
            rep.l_effective,
            rep.l_reference.map_or("none".to_string(), |l| format!("{l:e}"))
        )?;
        if let Some(b) = &bound {
            for (k, m) in &b.max_norms {
                writeln!(out, "  order {k}: max norm {m:e}")?;
            }
            writeln!(
                out,
                "  declared M = {}",
                b.declared_m.map_or("none".to_string(), |m| format!("{m:e}"))
            )?;
        }
    }
    let bound_ok = bound.as_ref().and_then(|b| b.within_declared).unwrap_or(true);
    Ok(if rep.violations == 0 && bound_ok { EXIT_OK } else { EXIT_NUMERIC })
}

fn cmd_slope(a: &SlopeArgs, out: &mut dyn Write) -> Result<i32, Error> {
    let trace = RunTrace::read_csv(&a.trace)?;
    let window = if a.pre_linear {
        pre_linear_window(&trace, LINEAR_ONSET_SLOPE)?
    } else {
        a.window
    };
    let est = fit_loglog_slope(&trace, window)?;
    if a.json {
        let v = json!({
            "slope": est.slope,
            "intercept": est.intercept,
            "r2": est.r_squared,
            "window": [est.window.start, est.window.end],
            "points": est.points,
            "outcome": trace.outcome.to_string(),
        });
        writeln!(out, "{v}")?;
    } else {
        writeln!(
            out,
            "slope={:.4} r2={:.4} points={} window={}:{}",
            est.slope, est.r_squared, est.points, est.window.start, est.window.end
        )?;
    }
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name) and runs the command. Returns
/// the process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{e}");
                    EXIT_CONFIG
                }
            };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::OrderCheck(a) => cmd_order_check(a, out),
        Command::Assumptions(a) => cmd_assumptions(a, out),
        Command::Slope(a) => cmd_slope(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let code = exit_code(&e);
            let _ = writeln!(err, "error: {e}");
            if code == EXIT_CONFIG {
                let _ = writeln!(err, "\n{}", Cli::command().render_usage());
            }
            code
        }
    }
}
