//! Explicit Runge-Kutta stepping driven by Butcher tableaus.

use std::path::Path;

use crate::dynamics::{vector_field, AugmentedState, OdeParams, Tangent};
use crate::error::{Error, Result};
use crate::objectives::Objective;

/// Coefficients of an explicit RK method.
///
/// `a[i]` holds the `i` coefficients `a_{i,0..i}` of stage `i` (so `a[0]` is
/// empty); the strictly lower-triangular shape is enforced by construction.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ButcherTableau {
    pub name: String,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub declared_order: u32,
}

/// Allowed deviation of `Σbᵢ` from 1.
const CONSISTENCY_TOL: f64 = 1e-12;

impl ButcherTableau {
    pub fn new(name: impl Into<String>, a: Vec<Vec<f64>>, b: Vec<f64>, declared_order: u32) -> Result<Self> {
        let name = name.into();
        let s = b.len();
        if s == 0 {
            return Err(Error::InvalidInput(format!("tableau '{name}' has no stages")));
        }
        if a.len() != s {
            return Err(Error::InvalidInput(format!(
                "tableau '{name}': {} a-rows for {s} stages",
                a.len()
            )));
        }
        for (i, row) in a.iter().enumerate() {
            if row.len() != i {
                return Err(Error::InvalidInput(format!(
                    "tableau '{name}': row {} must have {i} coefficients, has {}",
                    i + 1,
                    row.len()
                )));
            }
        }
        if a.iter().flatten().chain(b.iter()).any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(format!("tableau '{name}' has non-finite coefficients")));
        }
        let sum: f64 = b.iter().sum();
        if (sum - 1.0).abs() > CONSISTENCY_TOL {
            return Err(Error::InvalidInput(format!(
                "tableau '{name}' is inconsistent: sum of b = {sum}"
            )));
        }
        if declared_order < 1 {
            return Err(Error::InvalidInput(format!("tableau '{name}': order must be >= 1")));
        }
        Ok(Self {
            name,
            a,
            b,
            declared_order,
        })
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }

    /// Parses the plain-text format:
    ///
    /// ```text
    /// S s name
    /// <a-row 1: empty line>
    /// a21
    /// a31 a32
    /// ...
    /// b1 ... bS
    /// ```
    ///
    /// Row `i` carries `i−1` numbers, so the first a-row is an empty line.
    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        let header = lines.first().ok_or(Error::Parse {
            line: 1,
            msg: "empty tableau file".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected 'S s name', got '{header}'"),
            });
        }
        let s: usize = fields[0].parse().map_err(|_| Error::Parse {
            line: 1,
            msg: format!("bad stage count '{}'", fields[0]),
        })?;
        let order: u32 = fields[1].parse().map_err(|_| Error::Parse {
            line: 1,
            msg: format!("bad order '{}'", fields[1]),
        })?;
        if s == 0 {
            return Err(Error::Parse {
                line: 1,
                msg: "stage count must be positive".into(),
            });
        }
        let numbers = |idx: usize| -> Result<Vec<f64>> {
            let line = lines.get(idx).ok_or(Error::Parse {
                line: idx + 1,
                msg: "unexpected end of file".into(),
            })?;
            line.split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map_err(|_| Error::Parse {
                        line: idx + 1,
                        msg: format!("bad number '{tok}'"),
                    })
                })
                .collect()
        };
        let mut a = Vec::with_capacity(s);
        for i in 0..s {
            let row = numbers(1 + i)?;
            if row.len() != i {
                return Err(Error::Parse {
                    line: 2 + i,
                    msg: format!("a-row {} needs {i} numbers, found {}", i + 1, row.len()),
                });
            }
            a.push(row);
        }
        let b = numbers(1 + s)?;
        if b.len() != s {
            return Err(Error::Parse {
                line: 2 + s,
                msg: format!("expected {s} b-weights, found {}", b.len()),
            });
        }
        if lines[2 + s..].iter().any(|l| !l.trim().is_empty()) {
            return Err(Error::Parse {
                line: 3 + s,
                msg: "trailing content after b-weights".into(),
            });
        }
        Self::new(fields[2], a, b, order)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Serializes to the format read by [`ButcherTableau::parse`].
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.stages(), self.declared_order, self.name);
        let fmt = |row: &[f64]| row.iter().map(|c| format!("{c:e}")).collect::<Vec<_>>().join(" ");
        for row in &self.a {
            out.push_str(&fmt(row));
            out.push('\n');
        }
        out.push_str(&fmt(&self.b));
        out.push('\n');
        out
    }
}

/// Built-in explicit methods.
pub fn builtin_tableau(name: &str) -> Result<ButcherTableau> {
    match name {
        "euler" => ButcherTableau::new("euler", vec![vec![]], vec![1.0], 1),
        "midpoint" => ButcherTableau::new("midpoint", vec![vec![], vec![0.5]], vec![0.0, 1.0], 2),
        "rk4" => ButcherTableau::new(
            "rk4",
            vec![vec![], vec![0.5], vec![0.0, 0.5], vec![0.0, 0.0, 1.0]],
            vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
            4,
        ),
        other => Err(Error::InvalidInput(format!(
            "unknown tableau '{other}' (expected euler | midpoint | rk4)"
        ))),
    }
}

/// Resolves a built-in name, or else reads a tableau file.
pub fn resolve_tableau(name_or_path: &str) -> Result<ButcherTableau> {
    match builtin_tableau(name_or_path) {
        Ok(t) => Ok(t),
        Err(e) => {
            let p = Path::new(name_or_path);
            if p.is_file() {
                ButcherTableau::load(p)
            } else {
                Err(e)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next: AugmentedState,
    pub gradient_evals: usize,
}

/// One explicit RK step:
/// `gᵢ = y + h Σ_{j<i} a_ij F(g_j)`, `Φ_h(y) = y + h Σᵢ bᵢ F(gᵢ)`.
pub fn rk_step(
    tab: &ButcherTableau,
    params: &OdeParams,
    obj: &Objective,
    y: &AugmentedState,
    h: f64,
) -> Result<StepResult> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidInput(format!("step size must be positive, got {h}")));
    }
    let s = tab.stages();
    let mut ks: Vec<Tangent> = Vec::with_capacity(s);
    for (i, row) in tab.a.iter().enumerate() {
        let mut g = y.clone();
        for (k, &aij) in ks.iter().zip(row) {
            if aij != 0.0 {
                g.add_scaled(k, h * aij);
            }
        }
        if !g.is_finite() {
            return Err(Error::Diverged {
                iter: None,
                stage: Some(i),
                reason: "non-finite stage state".into(),
            });
        }
        let k = vector_field(params, obj, &g).map_err(|e| match e {
            Error::Diverged { iter, reason, .. } => Error::Diverged {
                iter,
                stage: Some(i),
                reason,
            },
            other => other,
        })?;
        ks.push(k);
    }
    let mut next = y.clone();
    for (k, &bi) in ks.iter().zip(&tab.b) {
        if bi != 0.0 {
            next.add_scaled(k, h * bi);
        }
    }
    if !next.is_finite() {
        return Err(Error::diverged("non-finite state after step"));
    }
    Ok(StepResult {
        next,
        gradient_evals: s,
    })
}

/// Fixed-step RK4 over `[y.t, y.t + horizon]` with `n` substeps.
fn rk4_fixed(
    params: &OdeParams,
    obj: &Objective,
    y0: &AugmentedState,
    horizon: f64,
    n: usize,
) -> Result<AugmentedState> {
    let tab = builtin_tableau("rk4")?;
    let h = horizon / n as f64;
    let mut y = y0.clone();
    for _ in 0..n {
        y = rk_step(&tab, params, obj, &y, h)?.next;
    }
    // Pin the clock to the exact endpoint; the t-dynamics are linear.
    y.t = y0.t + horizon;
    Ok(y)
}

pub const REFERENCE_MIN_SUBSTEPS: usize = 1 << 12;
pub const REFERENCE_MAX_SUBSTEPS: usize = 1 << 20;
pub const REFERENCE_TOL: f64 = 1e-12;

/// Self-converged approximation of the exact flow `φ_horizon(y0)`.
///
/// Starts with `2¹²` RK4 substeps and halves the substep until two
/// successive solutions agree to [`REFERENCE_TOL`] in max-norm, or `2²⁰`
/// substeps are reached.
pub fn reference_solve(
    params: &OdeParams,
    obj: &Objective,
    y0: &AugmentedState,
    horizon: f64,
) -> Result<AugmentedState> {
    Ok(reference_solve_detailed(params, obj, y0, horizon)?.0)
}

/// As [`reference_solve`], also returning the max-norm gap between the last
/// two refinements and the final substep count.
pub fn reference_solve_detailed(
    params: &OdeParams,
    obj: &Objective,
    y0: &AugmentedState,
    horizon: f64,
) -> Result<(AugmentedState, f64, usize)> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidInput(format!("horizon must be positive, got {horizon}")));
    }
    let mut n = REFERENCE_MIN_SUBSTEPS;
    let mut prev = rk4_fixed(params, obj, y0, horizon, n)?;
    loop {
        n *= 2;
        let next = rk4_fixed(params, obj, y0, horizon, n)?;
        let gap = next.max_dist(&prev);
        if gap < REFERENCE_TOL || n >= REFERENCE_MAX_SUBSTEPS {
            return Ok((next, gap, n));
        }
        prev = next;
    }
}

/// Noise floor for local errors: 100 machine epsilons relative to the state.
fn noise_floor(y: &AugmentedState) -> f64 {
    100.0 * f64::EPSILON * y.norm().max(1.0)
}

/// Empirical order `s` of a tableau from its one-step error `‖Φ_h − φ_h‖ = O(h^{s+1})`.
///
/// Fits `log e(h)` against `log h` by least squares and returns `slope − 1`.
pub fn estimate_order(
    tab: &ButcherTableau,
    params: &OdeParams,
    obj: &Objective,
    y0: &AugmentedState,
    h_list: &[f64],
) -> Result<f64> {
    if h_list.len() < 3 {
        return Err(Error::InvalidInput("need at least 3 step sizes".into()));
    }
    if h_list.iter().any(|h| !(*h > 0.0)) || h_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput("step sizes must be positive and decreasing".into()));
    }
    let floor = noise_floor(y0);
    let mut pts = Vec::with_capacity(h_list.len());
    for &h in h_list {
        let approx = rk_step(tab, params, obj, y0, h)?.next;
        let exact = reference_solve(params, obj, y0, h)?;
        let err = approx.dist(&exact);
        if !(err > floor) {
            return Err(Error::UnreliableEstimate(format!(
                "local error {err:e} at h={h:e} is below the noise floor {floor:e}"
            )));
        }
        pts.push((h.ln(), err.ln()));
    }
    let (slope, _) = least_squares_line(&pts);
    Ok(slope - 1.0)
}

/// Least-squares line `y = slope·x + intercept`.
pub(crate) fn least_squares_line(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Step sizes used when certifying a tableau's declared order.
pub const ORDER_CHECK_STEPS: [f64; 3] = [1e-2, 5e-3, 2.5e-3];

/// Runs [`estimate_order`] on the q = 2 dynamics of a fixed 10×10 quadratic
/// from `x₀ = 0` and returns the estimate.
pub fn empirical_order(tab: &ButcherTableau) -> Result<f64> {
    let obj = crate::objectives::builtin(crate::objectives::ObjectiveName::Quadratic, 10, 7)?;
    let y0 = crate::dynamics::initial_state(&nalgebra::DVector::zeros(obj.dim()))?;
    estimate_order(tab, &OdeParams::new(2)?, &obj, &y0, &ORDER_CHECK_STEPS)
}

/// Largest accepted gap between declared and measured order.
pub const ORDER_TOLERANCE: f64 = 0.3;

/// Accepts a tableau only if its empirical order is within
/// [`ORDER_TOLERANCE`] of the declared one.
pub fn certify(tab: &ButcherTableau) -> Result<f64> {
    let est = empirical_order(tab)?;
    if (est - tab.declared_order as f64).abs() <= ORDER_TOLERANCE {
        Ok(est)
    } else {
        Err(Error::InvalidInput(format!(
            "tableau '{}' declares order {} but measures {est:.3}",
            tab.name, tab.declared_order
        )))
    }
}
