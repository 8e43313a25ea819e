//! Energy function of the accelerated dynamics and the audits built on it.
//!
//! With `p = q`,
//!
//! ```text
//! E(y) = t²/(4p²)·‖v‖² + ‖x + (t/2p)·v − x*‖² + t^p·(f(x) − f*)
//! ```
//!
//! is non-increasing along exact trajectories when the friction is `2p+1`,
//! and a stable discretization keeps it below `e·E₀ + 1`.

use nalgebra::DVector;

use crate::dynamics::{AugmentedState, OdeParams};
use crate::error::{Error, Result};
use crate::integrators::reference_solve;
use crate::objectives::Objective;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReading {
    pub value: f64,
    pub kinetic_term: f64,
    pub mixing_term: f64,
    pub potential_term: f64,
}

/// Where the energy is centred: `f*` and the point used in the mixing term.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyAnchor {
    pub value: f64,
    pub point: DVector<f64>,
}

impl EnergyAnchor {
    /// The objective's own optimum, if it has one.
    pub fn from_objective(obj: &Objective) -> Result<Self> {
        match (obj.optimum_value(), obj.optimum_point()) {
            (Some(value), Some(point)) => Ok(Self {
                value,
                point: point.clone(),
            }),
            _ => Err(Error::Unsupported(format!(
                "objective '{}' has no optimum point; configure an energy anchor",
                obj.name()
            ))),
        }
    }

    /// Infimum value `f*` with a surrogate point `x̃` in the mixing term.
    pub fn surrogate(obj: &Objective, point: DVector<f64>) -> Result<Self> {
        let value = obj.optimum_value().ok_or_else(|| {
            Error::Unsupported(format!("objective '{}' has no optimum value", obj.name()))
        })?;
        Ok(Self { value, point })
    }
}

/// Evaluates `E(y)` against `anchor`.
pub fn energy_with(params: &OdeParams, obj: &Objective, anchor: &EnergyAnchor, y: &AugmentedState) -> EnergyReading {
    let p = params.q as f64;
    let kinetic_term = y.t * y.t / (4.0 * p * p) * y.v.norm_squared();
    let mut mix = y.x.clone();
    mix.axpy(y.t / (2.0 * p), &y.v, 1.0);
    mix -= &anchor.point;
    let mixing_term = mix.norm_squared();
    let potential_term = y.t.powi(params.q as i32) * (obj.eval(&y.x) - anchor.value);
    EnergyReading {
        value: kinetic_term + mixing_term + potential_term,
        kinetic_term,
        mixing_term,
        potential_term,
    }
}

/// Evaluates `E(y)` against the objective's optimum.
pub fn energy(params: &OdeParams, obj: &Objective, y: &AugmentedState) -> Result<EnergyReading> {
    let anchor = EnergyAnchor::from_objective(obj)?;
    Ok(energy_with(params, obj, &anchor, y))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBudget {
    pub e0: f64,
    pub ceiling: f64,
}

impl EnergyBudget {
    pub fn new(e0: f64) -> Self {
        Self {
            e0,
            ceiling: std::f64::consts::E * e0 + 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetStatus {
    Within,
    Exceeded,
}

/// `Within` iff `E ≤ e·E₀ + 1`. A NaN energy is `Exceeded`.
pub fn check_budget(budget: &EnergyBudget, reading: &EnergyReading) -> BudgetStatus {
    if reading.value <= budget.ceiling {
        BudgetStatus::Within
    } else {
        BudgetStatus::Exceeded
    }
}

/// Energy along a near-exact trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct DecreaseAudit {
    /// Energies at `t₀ + k·horizon/samples`, `k = 0..=samples`.
    pub energies: Vec<f64>,
    /// `max_k (E_{k+1} − E_k)`, clamped below at 0.
    pub max_increment: f64,
}

impl DecreaseAudit {
    pub fn e0(&self) -> f64 {
        self.energies[0]
    }

    /// Whether every increment is at most `rel_tol·E(y₀)`.
    pub fn is_monotone(&self, rel_tol: f64) -> bool {
        self.max_increment <= rel_tol * self.e0()
    }
}

/// Samples `E` at `samples + 1` evenly spaced checkpoints of the reference
/// flow over `[t₀, t₀ + horizon]` and reports the largest increase.
///
/// Friction other than `2q+1` is allowed, so the same audit can document
/// where monotone decrease fails.
pub fn audit_continuous_decrease(
    params: &OdeParams,
    obj: &Objective,
    anchor: &EnergyAnchor,
    y0: &AugmentedState,
    horizon: f64,
    samples: usize,
) -> Result<DecreaseAudit> {
    if samples == 0 {
        return Err(Error::InvalidInput("need at least one checkpoint".into()));
    }
    let seg = horizon / samples as f64;
    let mut y = y0.clone();
    let mut energies = Vec::with_capacity(samples + 1);
    energies.push(energy_with(params, obj, anchor, &y).value);
    for k in 1..=samples {
        y = reference_solve(params, obj, &y, seg)?;
        y.t = y0.t + k as f64 * seg;
        energies.push(energy_with(params, obj, anchor, &y).value);
    }
    let max_increment = energies
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0_f64, f64::max);
    Ok(DecreaseAudit {
        energies,
        max_increment,
    })
}

/// `dE/dt` along the flow at `y`, from the closed-form derivative
/// `−(t/p)‖v‖² + p·t^{p−1}·(f − f* − ⟨x − x*, ∇f⟩)`, valid for the default
/// friction `2p+1`, forcing `p²t^{p−2}`.
pub fn energy_rate(params: &OdeParams, obj: &Objective, anchor: &EnergyAnchor, y: &AugmentedState) -> f64 {
    let p = params.q as f64;
    let g = obj.grad(&y.x);
    let gap = obj.eval(&y.x) - anchor.value;
    -(y.t / p) * y.v.norm_squared()
        + p * y.t.powi(params.q as i32 - 1) * (gap - (&y.x - &anchor.point).dot(&g))
}
