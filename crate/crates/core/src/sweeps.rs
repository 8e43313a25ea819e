//! Predefined experiment sweeps and their summary output.
//!
//! A sweep is a list of named [`RunConfig`]s that run independently (in
//! parallel) and write one trace per member plus a `summary.csv`:
//!
//! ```text
//! name,q,s,h,outcome,slope,r2
//! ode_s4,2,4,1.0000000000000000e-1,budget_exhausted,-4.98...,0.99...
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::analysis::{fit_loglog_slope, SlopeEstimate, Window};
use crate::driver::{resolve_step, run_fixed, Method, Problem, RunConfig, StepMode, TraceStride};
use crate::error::{Error, Result};
use crate::integrators::resolve_tableau;
use crate::objectives::ObjectiveName;
use crate::trace::{fmt_f64, RunTrace};

pub const SUMMARY_HEADER: &str = "name,q,s,h,outcome,slope,r2";
pub const THREADS_ENV: &str = "ODEACCEL_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    Quad,
    Composite,
    Decouple,
    L4,
    Logistic,
}

impl Figure {
    pub const ALL: [Figure; 5] = [
        Figure::Quad,
        Figure::Composite,
        Figure::Decouple,
        Figure::L4,
        Figure::Logistic,
    ];
}

impl std::str::FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Figure::ALL
            .into_iter()
            .find(|f| f.to_string() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown figure '{s}'")))
    }
}

impl std::fmt::Display for Figure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Figure::Quad => "quad",
            Figure::Composite => "composite",
            Figure::Decouple => "decouple",
            Figure::L4 => "l4",
            Figure::Logistic => "logistic",
        })
    }
}

/// Settings shared by every member of a sweep. `None` keeps the figure's
/// own default.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepSettings {
    pub seed: Option<u64>,
    pub dim: Option<usize>,
    pub n_iters: Option<usize>,
    pub probe_iters: Option<usize>,
    pub stride: Option<TraceStride>,
}

impl SweepSettings {
    /// Parses `key=value` lines. Blank lines and `#` comments are ignored.
    /// Keys: `seed`, `dim`, `N`, `probe_iters`, `stride` (`geometric` or an
    /// integer).
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { line: idx + 1, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            let int = || {
                value
                    .parse::<u64>()
                    .map_err(|_| err(format!("bad integer '{value}' for '{key}'")))
            };
            match key {
                "seed" => out.seed = Some(int()?),
                "dim" => out.dim = Some(int()? as usize),
                "N" => out.n_iters = Some(int()? as usize),
                "probe_iters" => out.probe_iters = Some(int()? as usize),
                "stride" => {
                    out.stride = Some(match value {
                        "geometric" => TraceStride::Geometric,
                        _ => TraceStride::Every(int()? as usize),
                    })
                }
                _ => return Err(err(format!("unknown key '{key}'"))),
            }
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Fields set in `other` win.
    pub fn overridden_by(&self, other: &SweepSettings) -> SweepSettings {
        SweepSettings {
            seed: other.seed.or(self.seed),
            dim: other.dim.or(self.dim),
            n_iters: other.n_iters.or(self.n_iters),
            probe_iters: other.probe_iters.or(self.probe_iters),
            stride: other.stride.or(self.stride),
        }
    }

    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.dim {
            cfg.dim = v;
        }
        if let Some(v) = self.n_iters {
            cfg.n_iters = v;
        }
        if let Some(v) = self.probe_iters {
            cfg.probe_iters = v;
        }
        if let Some(v) = self.stride {
            cfg.stride = v;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepMember {
    pub name: String,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub figure: Figure,
    pub members: Vec<SweepMember>,
    /// Every ODE member runs with the step size searched for this one.
    pub shared_step_from: Option<String>,
}

fn member(name: impl Into<String>, config: RunConfig) -> SweepMember {
    SweepMember {
        name: name.into(),
        config,
    }
}

fn ode(objective: ObjectiveName, tableau: &str, q: u32, n: usize) -> RunConfig {
    RunConfig {
        objective,
        method: Method::Ode,
        tableau: tableau.into(),
        q,
        n_iters: n,
        ..Default::default()
    }
}

fn baseline(objective: ObjectiveName, method: Method, n: usize) -> RunConfig {
    RunConfig {
        objective,
        method,
        n_iters: n,
        ..Default::default()
    }
}

/// The predefined member list of a figure.
pub fn figure_plan(figure: Figure, settings: &SweepSettings) -> SweepPlan {
    use ObjectiveName as O;
    let short = 100_000;
    let long = 1_000_000;
    let mut shared_step_from = None;
    let mut members = match figure {
        Figure::Quad | Figure::Composite => {
            let obj = if figure == Figure::Quad { O::Quadratic } else { O::Composite };
            vec![
                member("gd", baseline(obj, Method::Gd, short)),
                member("nag", baseline(obj, Method::Nag, short)),
                member("ode_s1", ode(obj, "euler", 2, short)),
                member("ode_s2", ode(obj, "midpoint", 2, short)),
                member("ode_s4", ode(obj, "rk4", 2, short)),
            ]
        }
        Figure::Decouple => {
            shared_step_from = Some("ode_q2".to_string());
            (1..=4)
                .map(|q| member(format!("ode_q{q}"), ode(O::Quadratic, "rk4", q, short)))
                .collect()
        }
        Figure::L4 => {
            let mut m: Vec<_> = [2, 4, 6]
                .into_iter()
                .map(|q| member(format!("ode_q{q}"), ode(O::L4, "midpoint", q, long)))
                .collect();
            m.push(member("nag", baseline(O::L4, Method::Nag, long)));
            m
        }
        Figure::Logistic => {
            let mut m: Vec<_> = [2, 4]
                .into_iter()
                .map(|q| member(format!("ode_q{q}"), ode(O::Logistic, "midpoint", q, long)))
                .collect();
            m.push(member("nag", baseline(O::Logistic, Method::Nag, long)));
            m
        }
    };
    for m in &mut members {
        settings.apply(&mut m.config);
    }
    SweepPlan {
        figure,
        members,
        shared_step_from,
    }
}

#[derive(Debug, Clone)]
pub struct MemberResult {
    pub name: String,
    pub config: RunConfig,
    pub trace: RunTrace,
    pub slope: Option<SlopeEstimate>,
}

impl MemberResult {
    pub fn summary_line(&self) -> String {
        let (q, s) = match self.config.method {
            Method::Ode => {
                let s = resolve_tableau(&self.config.tableau)
                    .map(|t| t.declared_order.to_string())
                    .unwrap_or_default();
                (self.config.q.to_string(), s)
            }
            _ => (String::new(), String::new()),
        };
        let (slope, r2) = self
            .slope
            .map(|e| (fmt_f64(e.slope), fmt_f64(e.r_squared)))
            .unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.name,
            q,
            s,
            fmt_f64(self.trace.h),
            self.trace.outcome,
            slope,
            r2
        )
    }
}

/// Worker count: `ODEACCEL_THREADS` if set to a positive integer, otherwise
/// the number of available cores.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn run_member(cfg: &RunConfig, shared_h: Option<f64>) -> Result<RunTrace> {
    let pb = Problem::from_config(cfg)?;
    let h = match (shared_h, cfg.method) {
        (Some(h), Method::Ode) => h,
        _ => resolve_step(&pb, cfg)?,
    };
    run_fixed(&pb, h, cfg.n_iters, cfg.stride)
}

/// Runs every member, at most `threads` at a time. Results keep the plan's
/// order.
pub fn run_plan(plan: &SweepPlan, threads: usize) -> Result<Vec<MemberResult>> {
    let shared_h = match &plan.shared_step_from {
        Some(name) => {
            let m = plan
                .members
                .iter()
                .find(|m| &m.name == name)
                .ok_or_else(|| Error::InvalidInput(format!("no sweep member '{name}'")))?;
            let mut cfg = m.config.clone();
            cfg.step = StepMode::AutoSearch;
            Some(resolve_step(&Problem::from_config(&cfg)?, &cfg)?)
        }
        None => None,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    pool.install(|| {
        plan.members
            .par_iter()
            .map(|m| {
                let trace = run_member(&m.config, shared_h)?;
                let slope = fit_loglog_slope(&trace, Window::DEFAULT).ok();
                Ok(MemberResult {
                    name: m.name.clone(),
                    config: m.config.clone(),
                    trace,
                    slope,
                })
            })
            .collect()
    })
}

pub fn summary_csv(results: &[MemberResult]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in results {
        out.push_str(&r.summary_line());
        out.push('\n');
    }
    out
}

/// Writes `<name>.csv` per member and `summary.csv` into `dir`.
pub fn write_results(dir: &Path, results: &[MemberResult]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for r in results {
        r.trace.write_csv(&dir.join(format!("{}.csv", r.name)))?;
    }
    std::fs::write(dir.join("summary.csv"), summary_csv(results))?;
    Ok(())
}

/// One row of a parsed summary file.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub name: String,
    pub q: Option<u32>,
    pub s: Option<u32>,
    pub h: f64,
    pub outcome: String,
    pub slope: Option<f64>,
    pub r2: Option<f64>,
}

pub fn parse_summary(text: &str) -> Result<Vec<SummaryRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(SUMMARY_HEADER) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header '{SUMMARY_HEADER}'"),
        });
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 7 fields, found {}", f.len()),
            });
        }
        let bad = |what: &str| Error::Parse {
            line: lineno,
            msg: format!("bad {what}"),
        };
        let opt_u = |s: &str, what: &str| -> Result<Option<u32>> {
            if s.is_empty() { Ok(None) } else { s.parse().map(Some).map_err(|_| bad(what)) }
        };
        let opt_f = |s: &str, what: &str| -> Result<Option<f64>> {
            if s.is_empty() { Ok(None) } else { s.parse().map(Some).map_err(|_| bad(what)) }
        };
        rows.push(SummaryRow {
            name: f[0].to_string(),
            q: opt_u(f[1], "q")?,
            s: opt_u(f[2], "s")?,
            h: f[3].parse().map_err(|_| bad("h"))?,
            outcome: f[4].to_string(),
            slope: opt_f(f[5], "slope")?,
            r2: opt_f(f[6], "r2")?,
        });
    }
    Ok(rows)
}

/// Members by name, for lookups in tests and reports.
pub fn by_name(results: &[MemberResult]) -> BTreeMap<&str, &MemberResult> {
    results.iter().map(|r| (r.name.as_str(), r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn figure_names_round_trip() {
        for f in Figure::ALL {
            assert_eq!(f.to_string().parse::<Figure>().unwrap(), f);
        }
        assert!("fig9".parse::<Figure>().is_err());
    }

    #[test]
    fn plans_match_experiment_lists() {
        let none = SweepSettings::default();
        let quad = figure_plan(Figure::Quad, &none);
        let names: Vec<_> = quad.members.iter().map(|m| m.name.as_str()).collect();
        assert_eq!(names, ["gd", "nag", "ode_s1", "ode_s2", "ode_s4"]);
        assert!(quad.members.iter().all(|m| m.config.n_iters == 100_000));

        let dec = figure_plan(Figure::Decouple, &none);
        assert_eq!(dec.shared_step_from.as_deref(), Some("ode_q2"));
        let qs: Vec<u32> = dec.members.iter().map(|m| m.config.q).collect();
        assert_eq!(qs, [1, 2, 3, 4]);

        let l4 = figure_plan(Figure::L4, &none);
        assert_eq!(l4.members.len(), 4);
        assert!(l4.members.iter().all(|m| m.config.n_iters == 1_000_000));
        assert!(l4.members[..3].iter().all(|m| m.config.tableau == "midpoint"));
        assert_eq!(l4.members[3].config.method, Method::Nag);

        let lg = figure_plan(Figure::Logistic, &none);
        let qs: Vec<u32> = lg.members[..2].iter().map(|m| m.config.q).collect();
        assert_eq!(qs, [2, 4]);
    }

    #[test]
    fn settings_file_and_overrides() {
        let file = SweepSettings::parse("# tweaks\nseed = 3\nN=500\nstride=10\n\n").unwrap();
        assert_eq!(file.seed, Some(3));
        assert_eq!(file.n_iters, Some(500));
        assert_eq!(file.stride, Some(TraceStride::Every(10)));
        let flags = SweepSettings {
            seed: Some(9),
            ..Default::default()
        };
        let merged = file.overridden_by(&flags);
        assert_eq!(merged.seed, Some(9));
        assert_eq!(merged.n_iters, Some(500));
        let plan = figure_plan(Figure::Quad, &merged);
        assert!(plan.members.iter().all(|m| m.config.seed == 9 && m.config.n_iters == 500));

        assert!(matches!(SweepSettings::parse("seed=1\nbogus=2"), Err(Error::Parse { line: 2, .. })));
        assert!(SweepSettings::parse("seed").is_err());
        assert!(SweepSettings::parse("N=-4").is_err());
    }

    #[test]
    fn small_sweep_writes_summary_and_traces() {
        let settings = SweepSettings {
            n_iters: Some(300),
            ..Default::default()
        };
        let plan = figure_plan(Figure::Decouple, &settings);
        let results = run_plan(&plan, 2).unwrap();
        let h = results[0].trace.h;
        assert!(results.iter().all(|r| r.trace.h == h));
        let dir = tempfile::tempdir().unwrap();
        write_results(dir.path(), &results).unwrap();
        let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        let rows = parse_summary(&summary).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[1].name, "ode_q2");
        assert_eq!(rows[1].q, Some(2));
        assert_eq!(rows[1].s, Some(4));
        for r in &results {
            let back = RunTrace::read_csv(&dir.path().join(format!("{}.csv", r.name))).unwrap();
            assert_eq!(back.rows, r.trace.rows);
        }
    }
}
