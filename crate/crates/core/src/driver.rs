//! End-to-end runs: initialization, step-size selection, the iteration loop
//! with trace recording and divergence detection.

use nalgebra::DVector;

use crate::baselines::{gd_step, nag_step, NagState};
use crate::dynamics::{initial_state_at, AugmentedState, OdeParams};
use crate::error::{Error, Result};
use crate::integrators::{resolve_tableau, rk_step, ButcherTableau};
use crate::lyapunov::{check_budget, energy_with, BudgetStatus, EnergyAnchor, EnergyBudget};
use crate::objectives::{builtin, Objective, ObjectiveName};
use crate::trace::{Outcome, RunTrace, TraceRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ode,
    Gd,
    Nag,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ode" => Ok(Method::Ode),
            "gd" => Ok(Method::Gd),
            "nag" => Ok(Method::Nag),
            other => Err(Error::InvalidInput(format!("unknown method '{other}'"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Ode => "ode",
            Method::Gd => "gd",
            Method::Nag => "nag",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepMode {
    Fixed(f64),
    /// `h = C·N^{−1/(s+1)}`.
    Schedule(f64),
    AutoSearch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TraceStride {
    Every(usize),
    /// Record iterations spaced by a factor of about [`GEOMETRIC_RATIO`].
    Geometric,
}

pub const GEOMETRIC_RATIO: f64 = 1.02;
pub const DEFAULT_PROBE_ITERS: usize = 1000;
/// Iterations of the NAG warm start that supplies the logistic energy anchor.
pub const ANCHOR_WARM_START_ITERS: usize = 100_000;
/// Largest and smallest exponents `k` of the `10^{−k}` search grid.
pub const SEARCH_K_MIN: i32 = 0;
pub const SEARCH_K_MAX: i32 = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub objective: ObjectiveName,
    pub dim: usize,
    pub seed: u64,
    pub method: Method,
    pub tableau: String,
    pub q: u32,
    /// Overrides the default `2q+1` friction numerator.
    pub friction: Option<f64>,
    pub n_iters: usize,
    pub step: StepMode,
    pub stride: TraceStride,
    pub start_time: f64,
    /// Defaults to the origin.
    pub x0: Option<Vec<f64>>,
    /// Energy anchor for objectives without an optimum point.
    pub anchor: Option<Vec<f64>>,
    pub probe_iters: usize,
    /// Stop as converged once `f_gap` falls to this value.
    pub target_gap: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            objective: ObjectiveName::Quadratic,
            dim: 10,
            seed: 7,
            method: Method::Ode,
            tableau: "rk4".into(),
            q: 2,
            friction: None,
            n_iters: 100_000,
            step: StepMode::AutoSearch,
            stride: TraceStride::Geometric,
            start_time: 1.0,
            x0: None,
            anchor: None,
            probe_iters: DEFAULT_PROBE_ITERS,
            target_gap: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iters < 1 {
            return Err(Error::InvalidInput("N must be >= 1".into()));
        }
        if self.dim < 1 {
            return Err(Error::InvalidInput("dimension must be >= 1".into()));
        }
        if let TraceStride::Every(0) = self.stride {
            return Err(Error::InvalidInput("trace stride must be >= 1".into()));
        }
        if self.q < 1 {
            return Err(Error::InvalidInput("q must be >= 1".into()));
        }
        if !(self.start_time > 0.0 && self.start_time.is_finite()) {
            return Err(Error::InvalidInput("start time must be positive".into()));
        }
        match self.step {
            StepMode::Fixed(h) | StepMode::Schedule(h) if !(h > 0.0 && h.is_finite()) => {
                return Err(Error::InvalidInput(format!("step constant must be positive, got {h}")))
            }
            _ => {}
        }
        if self.probe_iters < 1 {
            return Err(Error::InvalidInput("probe iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Everything a run needs, resolved from a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct Problem {
    pub obj: Objective,
    pub method: Method,
    pub tableau: Option<ButcherTableau>,
    pub params: OdeParams,
    pub anchor: Option<EnergyAnchor>,
    pub x0: DVector<f64>,
    pub start_time: f64,
    pub target_gap: Option<f64>,
}

impl Problem {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let obj = builtin(cfg.objective, cfg.dim, cfg.seed)?;
        Self::with_objective(cfg, obj)
    }

    /// Resolves the config against a caller-supplied objective.
    pub fn with_objective(cfg: &RunConfig, obj: Objective) -> Result<Self> {
        cfg.validate()?;
        if obj.optimum_value().is_none() {
            return Err(Error::Unsupported(format!(
                "objective '{}' has no known optimum value",
                obj.name()
            )));
        }
        let x0 = match &cfg.x0 {
            Some(v) if v.len() != obj.dim() => {
                return Err(Error::InvalidInput(format!(
                    "x0 has length {}, objective dimension is {}",
                    v.len(),
                    obj.dim()
                )))
            }
            Some(v) => DVector::from_vec(v.clone()),
            None => DVector::zeros(obj.dim()),
        };
        let mut params = OdeParams::new(cfg.q)?;
        if let Some(c) = cfg.friction {
            params.friction_coeff = c;
        }
        let tableau = match cfg.method {
            Method::Ode => Some(resolve_tableau(&cfg.tableau)?),
            _ => None,
        };
        let anchor = match (&cfg.anchor, EnergyAnchor::from_objective(&obj)) {
            (Some(p), _) => {
                if p.len() != obj.dim() {
                    return Err(Error::InvalidInput("anchor dimension mismatch".into()));
                }
                Some(EnergyAnchor::surrogate(&obj, DVector::from_vec(p.clone()))?)
            }
            (None, Ok(a)) => Some(a),
            (None, Err(_)) if obj.is_logistic() => {
                Some(EnergyAnchor::surrogate(&obj, warm_start_anchor(&obj, &x0)?)?)
            }
            (None, Err(e)) if cfg.method == Method::Ode => return Err(e),
            (None, Err(_)) => None,
        };
        Ok(Self {
            obj,
            method: cfg.method,
            tableau,
            params,
            anchor,
            x0,
            start_time: cfg.start_time,
            target_gap: cfg.target_gap,
        })
    }

    pub fn stages(&self) -> usize {
        self.tableau.as_ref().map_or(1, |t| t.stages())
    }

    fn f_star(&self) -> f64 {
        self.obj.optimum_value().expect("checked at construction")
    }
}

/// Surrogate optimum for objectives whose infimum is not attained: the final
/// iterate of a NAG run with a searched step.
pub fn warm_start_anchor(obj: &Objective, x0: &DVector<f64>) -> Result<DVector<f64>> {
    let probe = Problem {
        obj: obj.clone(),
        method: Method::Nag,
        tableau: None,
        params: OdeParams::new(2)?,
        anchor: None,
        x0: x0.clone(),
        start_time: 1.0,
        target_gap: None,
    };
    let h = search_step_size_for(&probe, DEFAULT_PROBE_ITERS)?;
    let mut s = NagState::new(x0);
    for _ in 0..ANCHOR_WARM_START_ITERS {
        s = nag_step(obj, &s, h)?;
    }
    Ok(s.x_curr)
}

/// `C·N^{−1/(s+1)}`.
pub fn schedule_step_size(c: f64, n: usize, order: u32) -> f64 {
    c * (n as f64).powf(-1.0 / (order as f64 + 1.0))
}

enum IterState {
    Ode(AugmentedState),
    Gd(DVector<f64>, f64),
    Nag(NagState, f64),
}

impl IterState {
    fn x(&self) -> &DVector<f64> {
        match self {
            IterState::Ode(y) => &y.x,
            IterState::Gd(x, _) => x,
            IterState::Nag(s, _) => &s.x_curr,
        }
    }

    fn t(&self) -> f64 {
        match self {
            IterState::Ode(y) => y.t,
            IterState::Gd(_, t) | IterState::Nag(_, t) => *t,
        }
    }
}

/// Stability envelope of a run.
enum Guard {
    /// `E ≤ e·E₀ + 1`.
    Energy(EnergyBudget),
    /// `f − f* ≤ e·(f(x₀) − f* + ‖x₀ − x*‖²) + 1`, the initial sublevel set.
    Sublevel(f64),
}

struct Runner<'a> {
    pb: &'a Problem,
    h: f64,
    state: IterState,
    guard: Guard,
}

impl<'a> Runner<'a> {
    fn new(pb: &'a Problem, h: f64) -> Result<Self> {
        let x0 = &pb.x0;
        let (state, guard) = match pb.method {
            Method::Ode => {
                let y0 = initial_state_at(x0, pb.start_time)?;
                let anchor = pb.anchor.as_ref().ok_or_else(|| {
                    Error::Unsupported("ODE runs need optimum data or an energy anchor".into())
                })?;
                let e0 = energy_with(&pb.params, &pb.obj, anchor, &y0).value;
                (IterState::Ode(y0), Guard::Energy(EnergyBudget::new(e0)))
            }
            Method::Gd | Method::Nag => {
                let dist = pb
                    .anchor
                    .as_ref()
                    .map_or(0.0, |a| (x0 - &a.point).norm_squared());
                let gap0 = pb.obj.eval(x0) - pb.f_star();
                let ceiling = std::f64::consts::E * (gap0 + dist) + 1.0;
                let st = if pb.method == Method::Gd {
                    IterState::Gd(x0.clone(), 0.0)
                } else {
                    IterState::Nag(NagState::new(x0), 0.0)
                };
                (st, Guard::Sublevel(ceiling))
            }
        };
        Ok(Self { pb, h, state, guard })
    }

    fn step(&mut self) -> Result<()> {
        let pb = self.pb;
        let h = self.h;
        self.state = match &self.state {
            IterState::Ode(y) => {
                let tab = pb.tableau.as_ref().expect("ODE problem has a tableau");
                IterState::Ode(rk_step(tab, &pb.params, &pb.obj, y, h)?.next)
            }
            IterState::Gd(x, t) => IterState::Gd(gd_step(&pb.obj, x, h)?, t + h),
            IterState::Nag(s, t) => IterState::Nag(nag_step(&pb.obj, s, h)?, t + h),
        };
        Ok(())
    }

    fn gap(&self) -> f64 {
        self.pb.obj.eval(self.state.x()) - self.pb.f_star()
    }

    /// Energy reading (ODE only) and whether the state is inside the envelope.
    fn audit(&self, gap: f64) -> (Option<f64>, bool) {
        match (&self.guard, &self.state) {
            (Guard::Energy(budget), IterState::Ode(y)) => {
                let anchor = self.pb.anchor.as_ref().expect("checked in new");
                let e = energy_with(&self.pb.params, &self.pb.obj, anchor, y);
                (Some(e.value), check_budget(budget, &e) == BudgetStatus::Within)
            }
            (Guard::Sublevel(ceiling), _) => (None, gap <= *ceiling),
            _ => unreachable!("guard matches method"),
        }
    }

    fn row(&self, iter: usize, gap: f64, energy: Option<f64>) -> TraceRow {
        TraceRow {
            iter,
            t: self.state.t(),
            f_gap: gap,
            grad_norm: self.pb.obj.grad(self.state.x()).norm(),
            energy,
            grad_evals: iter * self.pb.stages(),
        }
    }

    fn at_rest(&self, gap: f64) -> bool {
        if let Some(target) = self.pb.target_gap {
            if gap <= target {
                return true;
            }
        }
        let x = self.state.x();
        let stationary = self.pb.obj.grad(x).iter().all(|g| *g == 0.0);
        stationary
            && match &self.state {
                IterState::Ode(y) => y.v.iter().all(|c| *c == 0.0),
                IterState::Gd(..) => true,
                IterState::Nag(s, _) => s.x_curr == s.x_prev,
            }
    }
}

fn should_record(iter: usize, next_record: &mut usize, stride: TraceStride) -> bool {
    if iter != *next_record {
        return false;
    }
    *next_record = match stride {
        TraceStride::Every(k) => iter + k,
        TraceStride::Geometric => ((iter as f64 * GEOMETRIC_RATIO).floor() as usize).max(iter + 1),
    };
    true
}

/// Runs `n` iterations with fixed step `h`, recording per `stride`.
///
/// Divergence (a non-finite state, or leaving the stability envelope) ends
/// the run; rows stop before the detection iteration.
pub fn run_fixed(pb: &Problem, h: f64, n: usize, stride: TraceStride) -> Result<RunTrace> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidInput(format!("step size must be positive, got {h}")));
    }
    let mut runner = Runner::new(pb, h)?;
    let mut rows = Vec::new();
    let mut next_record = 0usize;

    let gap0 = runner.gap();
    let (e0, _) = runner.audit(gap0);
    should_record(0, &mut next_record, stride);
    rows.push(runner.row(0, gap0, e0));
    if runner.at_rest(gap0) {
        return Ok(RunTrace {
            rows,
            outcome: Outcome::Converged,
            h,
        });
    }

    for k in 1..=n {
        match runner.step() {
            Ok(()) => {}
            Err(Error::Diverged { .. }) => {
                return Ok(RunTrace {
                    rows,
                    outcome: Outcome::Diverged(k),
                    h,
                })
            }
            Err(e) => return Err(e.at_iter(k)),
        }
        let gap = runner.gap();
        let (energy, inside) = runner.audit(gap);
        if !inside || !gap.is_finite() {
            return Ok(RunTrace {
                rows,
                outcome: Outcome::Diverged(k),
                h,
            });
        }
        let rest = runner.at_rest(gap);
        if should_record(k, &mut next_record, stride) || k == n || rest {
            rows.push(runner.row(k, gap, energy));
        }
        if rest {
            return Ok(RunTrace {
                rows,
                outcome: Outcome::Converged,
                h,
            });
        }
    }
    Ok(RunTrace {
        rows,
        outcome: Outcome::BudgetExhausted,
        h,
    })
}

/// Result of one probe in the step-size search.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub h: f64,
    pub outcome: Outcome,
    pub final_gap: Option<f64>,
    pub stable: bool,
}

/// A probe is stable when it stays finite and inside the envelope for all
/// `probe_iters` steps and ends strictly below its starting gap.
pub fn probe(pb: &Problem, h: f64, probe_iters: usize) -> Result<Probe> {
    let tr = run_fixed(pb, h, probe_iters, TraceStride::Every(probe_iters))?;
    let start = tr.rows[0].f_gap;
    let end = tr.final_gap();
    let stable = match tr.outcome {
        Outcome::Diverged(_) => false,
        Outcome::Converged => true,
        Outcome::BudgetExhausted => end.is_some_and(|g| g < start || start <= 0.0),
    };
    Ok(Probe {
        h,
        outcome: tr.outcome,
        final_gap: end,
        stable,
    })
}

/// Largest `h ∈ {10⁰, 10⁻¹, …, 10⁻¹²}` whose probe is stable.
pub fn search_step_size(cfg: &RunConfig, probe_iters: usize) -> Result<f64> {
    let pb = Problem::from_config(cfg)?;
    search_step_size_for(&pb, probe_iters)
}

pub fn search_step_size_for(pb: &Problem, probe_iters: usize) -> Result<f64> {
    search_with_diagnostics(pb, probe_iters).map(|(h, _)| h)
}

/// As [`search_step_size_for`], also returning every probe tried.
pub fn search_with_diagnostics(pb: &Problem, probe_iters: usize) -> Result<(f64, Vec<Probe>)> {
    if probe_iters < 1 {
        return Err(Error::InvalidInput("probe_iters must be >= 1".into()));
    }
    let mut probes = Vec::new();
    for k in SEARCH_K_MIN..=SEARCH_K_MAX {
        let h = 10f64.powi(-k);
        let p = probe(pb, h, probe_iters)?;
        let stable = p.stable;
        probes.push(p);
        if stable {
            return Ok((h, probes));
        }
    }
    let diag = probes
        .iter()
        .map(|p| format!("h={:e}: {}", p.h, p.outcome))
        .collect::<Vec<_>>()
        .join("; ");
    Err(Error::SearchFailed(format!("no stable step size down to 1e-{SEARCH_K_MAX} ({diag})")))
}

/// Resolves the step size a config asks for.
pub fn resolve_step(pb: &Problem, cfg: &RunConfig) -> Result<f64> {
    match cfg.step {
        StepMode::Fixed(h) => Ok(h),
        StepMode::Schedule(c) => {
            let order = pb.tableau.as_ref().map_or(1, |t| t.declared_order);
            Ok(schedule_step_size(c, cfg.n_iters, order))
        }
        StepMode::AutoSearch => search_step_size_for(pb, cfg.probe_iters),
    }
}

/// Algorithm 1 for ODE methods, and the matching loop for the baselines.
pub fn run_algorithm1(cfg: &RunConfig) -> Result<RunTrace> {
    let pb = Problem::from_config(cfg)?;
    let h = resolve_step(&pb, cfg)?;
    run_fixed(&pb, h, cfg.n_iters, cfg.stride)
}
