//! Post-hoc analytics over run traces, and sampled checkers for the flatness
//! and derivative-bound assumptions.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::driver::{run_fixed, search_step_size_for, Method, Problem, RunConfig, TraceStride};
use crate::error::{Error, Result};
use crate::integrators::least_squares_line;
use crate::objectives::Objective;
use crate::trace::RunTrace;

/// Fraction window `(start, end)` of the log-iteration axis.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub const DEFAULT: Window = Window { start: 0.3, end: 1.0 };

    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&start) || !(end > start && end <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "window must satisfy 0 <= start < end <= 1, got ({start}, {end})"
            )));
        }
        Ok(Self { start, end })
    }
}

impl std::str::FromStr for Window {
    type Err = Error;

    /// `"0.3:1.0"`.
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidInput(format!("window '{s}' is not 'start:end'")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("bad window bound '{v}'")))
        };
        Self::new(parse(a)?, parse(b)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SlopeEstimate {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window: Window,
    pub points: usize,
}

/// Minimum number of usable rows for a slope fit.
pub const MIN_FIT_POINTS: usize = 10;

/// Least-squares fit of `log f_gap` against `log iter` over `window`.
///
/// The log-iteration axis runs from iteration 1 to the last recorded
/// iteration. Rows with `f_gap ≤ 0`, or below `10³·ε` times the gap at the
/// start of the window, are dropped.
pub fn fit_loglog_slope(trace: &RunTrace, window: Window) -> Result<SlopeEstimate> {
    let last = trace
        .rows
        .iter()
        .map(|r| r.iter)
        .max()
        .filter(|&n| n > 1)
        .ok_or_else(|| Error::InsufficientData("trace has no iterations past 1".into()))?;
    let log_n = (last as f64).ln();
    let in_window: Vec<_> = trace
        .rows
        .iter()
        .filter(|r| r.iter >= 1)
        .filter(|r| {
            let pos = (r.iter as f64).ln() / log_n;
            pos >= window.start - 1e-12 && pos <= window.end + 1e-12
        })
        .collect();
    let first_gap = in_window
        .iter()
        .map(|r| r.f_gap)
        .find(|g| *g > 0.0)
        .unwrap_or(0.0);
    let floor = 1e3 * f64::EPSILON * first_gap;
    let pts: Vec<(f64, f64)> = in_window
        .iter()
        .filter(|r| r.f_gap > 0.0 && r.f_gap >= floor && r.f_gap.is_finite())
        .map(|r| ((r.iter as f64).ln(), r.f_gap.ln()))
        .collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData(format!(
            "{} usable rows in window ({}, {}), need {MIN_FIT_POINTS}",
            pts.len(),
            window.start,
            window.end
        )));
    }
    let (slope, intercept) = least_squares_line(&pts);
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - (slope * p.0 + intercept)).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(SlopeEstimate {
        slope,
        intercept,
        r_squared,
        window,
        points: pts.len(),
    })
}

/// Local log-log slope beyond which a baseline counts as converging linearly.
pub const LINEAR_ONSET_SLOPE: f64 = -3.0;

/// Leading window of the log-iteration axis before linear convergence sets
/// in.
///
/// The local slope at a row is measured against the first recorded row at
/// least twice as far along. The window ends at the first row whose local
/// slope is steeper than `onset_slope`, or covers the whole axis if none is.
pub fn pre_linear_window(trace: &RunTrace, onset_slope: f64) -> Result<Window> {
    let rows: Vec<_> = trace
        .rows
        .iter()
        .filter(|r| r.iter >= 1 && r.f_gap > 0.0 && r.f_gap.is_finite())
        .collect();
    let last = trace.rows.iter().map(|r| r.iter).max().unwrap_or(0);
    if last < 2 || rows.is_empty() {
        return Err(Error::InsufficientData("trace has no iterations past 1".into()));
    }
    let log_n = (last as f64).ln();
    for (i, r) in rows.iter().enumerate() {
        let Some(far) = rows[i + 1..].iter().find(|s| s.iter >= 2 * r.iter) else {
            break;
        };
        let local = (far.f_gap / r.f_gap).ln() / (far.iter as f64 / r.iter as f64).ln();
        if local < onset_slope {
            let end = (r.iter as f64).ln() / log_n;
            return Window::new(0.0, end.max(f64::EPSILON));
        }
    }
    Ok(Window::new(0.0, 1.0)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Diverged,
}

impl std::fmt::Display for Stability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stability::Stable => "stable",
            Stability::Diverged => "diverged",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow {
    pub q: u32,
    pub stability: Stability,
    pub outcome: String,
    pub slope: Option<f64>,
}

/// Labels every member of a sweep over `q` by its outcome.
pub fn classify_stability(traces: &[(u32, RunTrace)]) -> Vec<StabilityRow> {
    traces
        .iter()
        .map(|(q, tr)| {
            let stability = if tr.outcome.is_diverged() {
                Stability::Diverged
            } else {
                Stability::Stable
            };
            let slope = match stability {
                Stability::Stable => fit_loglog_slope(tr, Window::DEFAULT).ok().map(|s| s.slope),
                Stability::Diverged => None,
            };
            StabilityRow {
                q: *q,
                stability,
                outcome: tr.outcome.to_string(),
                slope,
            }
        })
        .collect()
}

/// Plain-text comparison table of a stability sweep.
pub fn stability_table(rows: &[StabilityRow]) -> String {
    let mut out = String::from("q  stability  outcome            slope\n");
    for r in rows {
        let slope = r.slope.map_or("-".to_string(), |s| format!("{s:.3}"));
        out.push_str(&format!(
            "{:<2} {:<10} {:<18} {}\n",
            r.q, r.stability, r.outcome, slope
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AssumptionReport {
    pub p_tested: u32,
    pub i_tested: u32,
    /// Smallest `L` with `f − f* ≥ ‖∇⁽ⁱ⁾f‖^{p/(p−i)} / L` at every sample.
    pub l_effective: f64,
    /// The constant violations are counted against.
    pub l_reference: Option<f64>,
    pub violations: usize,
    pub samples: usize,
}

/// Points of the neighbourhood `A` of the initial sublevel set, drawn around
/// a short gradient-descent path from `x₀`, with a share of samples placed at
/// geometrically shrinking distances from `x*` when it is known.
pub fn sample_neighbourhood(
    obj: &Objective,
    x0: &DVector<f64>,
    count: usize,
    radius: f64,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    let fs = obj.optimum_value().ok_or_else(|| {
        Error::Unsupported(format!("objective '{}' has no optimum value", obj.name()))
    })?;
    if !(radius > 0.0 && radius <= 1.0) {
        return Err(Error::InvalidInput(format!("radius must be in (0, 1], got {radius}")));
    }
    let dist0 = obj.optimum_point().map_or(0.0, |xs| (x0 - xs).norm_squared());
    let sublevel = std::f64::consts::E * (obj.eval(x0) - fs + dist0) + 1.0;

    let cfg = RunConfig {
        method: Method::Gd,
        x0: Some(x0.iter().cloned().collect()),
        ..Default::default()
    };
    let pb = Problem::with_objective(&cfg, obj.clone())?;
    let h = search_step_size_for(&pb, 100)?;
    let path = run_fixed(&pb, h, 2000, TraceStride::Geometric)?;
    // Re-walk the path to collect the recorded iterates themselves.
    let mut anchors = vec![x0.clone()];
    let mut x = x0.clone();
    let mut recorded = path.rows.iter().skip(1).map(|r| r.iter).peekable();
    for k in 1..=path.rows.last().map_or(0, |r| r.iter) {
        x = crate::baselines::gd_step(obj, &x, h)?;
        if recorded.peek() == Some(&k) {
            recorded.next();
            if obj.eval(&x) <= sublevel {
                anchors.push(x.clone());
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = obj.dim();
    let ball = |rng: &mut ChaCha8Rng, r: f64| -> DVector<f64> {
        let g = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let u: f64 = rng.random();
        g.normalize() * (r * u.powf(1.0 / d as f64))
    };
    let xs = obj.optimum_point().cloned();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let near_opt = xs.is_some() && out.len() % 4 == 3;
        let cand = if near_opt {
            let scale = 10f64.powf(-rng.random_range(1.0..6.0));
            let u = ball(&mut rng, 1.0);
            let un = u.norm();
            xs.as_ref().unwrap() + u * (scale * radius / un.max(1e-300))
        } else {
            let a = &anchors[rng.random_range(0..anchors.len())];
            a + ball(&mut rng, radius)
        };
        out.push(cand);
    }
    Ok(out)
}

/// Samples the flatness inequality `f − f* ≥ ‖∇⁽ⁱ⁾f‖^{p/(p−i)} / L`.
///
/// Violations are counted against the objective's declared `L` when it has
/// one; a sample with `f − f* ≤ 0` and a non-zero derivative is always a
/// violation and makes `L_effective` infinite.
pub fn check_assumption1(
    obj: &Objective,
    p: u32,
    i: u32,
    sample_count: usize,
    radius: f64,
    seed: u64,
) -> Result<AssumptionReport> {
    if i < 1 || i >= p {
        return Err(Error::Unsupported(format!("need 1 <= i < p, got p={p}, i={i}")));
    }
    let fs = obj.optimum_value().ok_or_else(|| {
        Error::Unsupported(format!("objective '{}' has no optimum value", obj.name()))
    })?;
    let x0 = DVector::zeros(obj.dim());
    let pts = sample_neighbourhood(obj, &x0, sample_count, radius, seed)?;
    let exponent = p as f64 / (p - i) as f64;
    let reference = obj.lipschitz_l();
    let mut l_eff = 0.0_f64;
    let mut violations = 0;
    for x in &pts {
        let gap = obj.eval(x) - fs;
        let dn = obj.derivative_norm(i, x)?;
        let lhs = dn.powf(exponent);
        let ratio = if gap > 0.0 {
            lhs / gap
        } else if lhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        l_eff = l_eff.max(ratio);
        let violated = match reference {
            Some(l) => ratio > l,
            None => ratio.is_infinite(),
        };
        if violated {
            violations += 1;
        }
    }
    Ok(AssumptionReport {
        p_tested: p,
        i_tested: i,
        l_effective: l_eff,
        l_reference: reference,
        violations,
        samples: pts.len(),
    })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DerivativeBoundReport {
    /// `(order, max sampled operator norm)`.
    pub max_norms: Vec<(u32, f64)>,
    pub declared_m: Option<f64>,
    /// Whether every sampled norm is within the declared bound.
    pub within_declared: Option<bool>,
    pub samples: usize,
}

/// Largest sampled operator norm of each requested derivative order.
pub fn check_assumption2(
    obj: &Objective,
    orders: &[u32],
    sample_count: usize,
    radius: f64,
    seed: u64,
) -> Result<DerivativeBoundReport> {
    if orders.is_empty() {
        return Err(Error::InvalidInput("no derivative orders requested".into()));
    }
    let x0 = DVector::zeros(obj.dim());
    let pts = sample_neighbourhood(obj, &x0, sample_count, radius, seed)?;
    let mut max_norms = Vec::with_capacity(orders.len());
    for &k in orders {
        let mut m = 0.0_f64;
        for x in &pts {
            m = m.max(obj.derivative_norm(k, x)?);
        }
        max_norms.push((k, m));
    }
    let declared_m = obj.deriv_bound_m();
    let within_declared =
        declared_m.map(|bound| max_norms.iter().all(|(_, m)| *m <= bound * (1.0 + 1e-12)));
    Ok(DerivativeBoundReport {
        max_norms,
        declared_m,
        within_declared,
        samples: pts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Outcome, TraceRow};

    fn synthetic(f: impl Fn(f64) -> f64, n: usize) -> RunTrace {
        let mut rows = Vec::new();
        let mut k = 0usize;
        while k <= n {
            rows.push(TraceRow {
                iter: k,
                t: 1.0 + k as f64,
                f_gap: f(k as f64),
                grad_norm: 0.0,
                energy: None,
                grad_evals: k,
            });
            k = ((k as f64 * 1.02) as usize).max(k + 1);
        }
        RunTrace {
            rows,
            outcome: Outcome::BudgetExhausted,
            h: 1.0,
        }
    }

    #[test]
    fn exact_power_law() {
        let tr = synthetic(|k| 3.0 / (k * k), 100_000);
        let s = fit_loglog_slope(&tr, Window::DEFAULT).unwrap();
        assert!((s.slope + 2.0).abs() < 1e-9);
        assert!((s.r_squared - 1.0).abs() < 1e-12);
        assert!((s.intercept - 3f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn constant_trace_has_zero_slope() {
        let tr = synthetic(|_| 0.5, 10_000);
        let s = fit_loglog_slope(&tr, Window::DEFAULT).unwrap();
        assert!(s.slope.abs() < 1e-12);
    }

    #[test]
    fn too_few_points_is_an_error() {
        let tr = synthetic(|k| 1.0 / k, 8);
        assert!(matches!(
            fit_loglog_slope(&tr, Window::DEFAULT),
            Err(Error::InsufficientData(_))
        ));
        let zeros = synthetic(|_| 0.0, 10_000);
        assert!(fit_loglog_slope(&zeros, Window::DEFAULT).is_err());
    }

    #[test]
    fn pre_linear_window_ends_at_onset() {
        // Local slope of e^{-k/τ}/k over a doubling is −1 − k/(τ ln 2).
        let tau = 1000.0;
        let tr = synthetic(|k| (-k / tau).exp() / k.max(1.0), 100_000);
        let w = pre_linear_window(&tr, LINEAR_ONSET_SLOPE).unwrap();
        let onset = 2.0 * tau * std::f64::consts::LN_2;
        let expected = onset.ln() / 100_000f64.ln();
        assert_eq!(w.start, 0.0);
        assert!((w.end - expected).abs() < 0.01, "{} vs {expected}", w.end);
        let s = fit_loglog_slope(&tr, w).unwrap();
        assert!(s.slope < -1.0 && s.slope > -2.0);

        let pure = synthetic(|k| 1.0 / (k * k).max(1.0), 100_000);
        assert_eq!(pre_linear_window(&pure, LINEAR_ONSET_SLOPE).unwrap(), Window::new(0.0, 1.0).unwrap());
    }

    #[test]
    fn window_parsing() {
        let w: Window = "0.3:1.0".parse().unwrap();
        assert_eq!(w, Window::DEFAULT);
        assert!("0.5:0.2".parse::<Window>().is_err());
        assert!("0.5".parse::<Window>().is_err());
        assert!("-0.1:0.5".parse::<Window>().is_err());
    }

    #[test]
    fn classification_partitions_outcomes() {
        let stable = synthetic(|k| 1.0 / (k * k), 1000);
        let mut div = stable.clone();
        div.outcome = Outcome::Diverged(500);
        let rows = classify_stability(&[(2, stable), (3, div)]);
        assert_eq!(rows[0].stability, Stability::Stable);
        assert!(rows[0].slope.is_some());
        assert_eq!(rows[1].stability, Stability::Diverged);
        assert!(rows[1].slope.is_none());
        let table = stability_table(&rows);
        assert!(table.contains("diverged:500"));
    }
}
