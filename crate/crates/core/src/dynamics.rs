//! The damped second-order ODE
//!
//! ```text
//! ẍ + (c/t)·ẋ + a·t^e·∇f(x) = 0
//! ```
//!
//! written as the autonomous first-order system `ẏ = F(y)` on the augmented
//! state `y = [v; x; t]`. With `q` the exponent, the defaults `c = 2q+1`,
//! `a = q²`, `e = q−2` give the accelerated dynamics used throughout the
//! crate; `c = q+1` gives the time-dilated family and `q = 2, c = 3, a = 1,
//! e = 0` the limit ODE of Nesterov's method.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::objectives::Objective;

/// Position, velocity and time.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub v: DVector<f64>,
    pub x: DVector<f64>,
    pub t: f64,
}

/// Time derivative of an [`AugmentedState`]; `dt` is identically 1 for `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tangent {
    pub dv: DVector<f64>,
    pub dx: DVector<f64>,
    pub dt: f64,
}

impl AugmentedState {
    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.v.iter().all(|c| c.is_finite())
            && self.x.iter().all(|c| c.is_finite())
    }

    /// `self + scale·tangent`.
    pub fn advanced(&self, tangent: &Tangent, scale: f64) -> AugmentedState {
        let mut next = self.clone();
        next.add_scaled(tangent, scale);
        next
    }

    pub fn add_scaled(&mut self, tangent: &Tangent, scale: f64) {
        self.v.axpy(scale, &tangent.dv, 1.0);
        self.x.axpy(scale, &tangent.dx, 1.0);
        self.t += scale * tangent.dt;
    }

    /// Max-norm distance over all `2d + 1` components.
    pub fn max_dist(&self, other: &AugmentedState) -> f64 {
        let dv = (&self.v - &other.v).amax();
        let dx = (&self.x - &other.x).amax();
        dv.max(dx).max((self.t - other.t).abs())
    }

    /// Euclidean distance over all `2d + 1` components.
    pub fn dist(&self, other: &AugmentedState) -> f64 {
        ((&self.v - &other.v).norm_squared()
            + (&self.x - &other.x).norm_squared()
            + (self.t - other.t).powi(2))
        .sqrt()
    }

    /// Euclidean norm over all components.
    pub fn norm(&self) -> f64 {
        (self.v.norm_squared() + self.x.norm_squared() + self.t * self.t).sqrt()
    }
}

/// `y₀ = [0; x₀; 1]`.
pub fn initial_state(x0: &DVector<f64>) -> Result<AugmentedState> {
    initial_state_at(x0, 1.0)
}

/// `[0; x₀; t₀]` for an arbitrary positive start time.
pub fn initial_state_at(x0: &DVector<f64>, t0: f64) -> Result<AugmentedState> {
    if !x0.iter().all(|c| c.is_finite()) {
        return Err(Error::InvalidInput("x0 has non-finite entries".into()));
    }
    if !(t0 > 0.0 && t0.is_finite()) {
        return Err(Error::Domain(format!("start time must be positive, got {t0}")));
    }
    Ok(AugmentedState {
        v: DVector::zeros(x0.len()),
        x: x0.clone(),
        t: t0,
    })
}

/// Coefficients of the ODE family.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OdeParams {
    pub q: u32,
    pub friction_coeff: f64,
    pub forcing_coeff: f64,
    pub forcing_exponent: f64,
}

impl OdeParams {
    /// The accelerated ODE: friction `2q+1`, forcing `q²·t^{q−2}`.
    pub fn new(q: u32) -> Result<Self> {
        if q < 1 {
            return Err(Error::InvalidInput("ODE exponent q must be >= 1".into()));
        }
        let qf = q as f64;
        Ok(Self {
            q,
            friction_coeff: 2.0 * qf + 1.0,
            forcing_coeff: qf * qf,
            forcing_exponent: qf - 2.0,
        })
    }

    /// Time-dilated family with friction `q+1`.
    pub fn time_dilated(q: u32) -> Result<Self> {
        let mut p = Self::new(q)?;
        p.friction_coeff = q as f64 + 1.0;
        Ok(p)
    }

    /// `ẍ + (3/t)ẋ + ∇f = 0`.
    pub fn nesterov_limit() -> Self {
        Self {
            q: 2,
            friction_coeff: 3.0,
            forcing_coeff: 1.0,
            forcing_exponent: 0.0,
        }
    }

    /// `t^{forcing_exponent}`; repeated multiplication for small integer exponents.
    pub fn time_power(&self, t: f64) -> f64 {
        let e = self.forcing_exponent;
        if e == e.trunc() && e.abs() <= 16.0 {
            t.powi(e as i32)
        } else {
            (e * t.ln()).exp()
        }
    }
}

/// `F(y) = [−(c/t)·v − a·t^e·∇f(x); v; 1]`, one gradient evaluation.
pub fn vector_field(params: &OdeParams, obj: &Objective, y: &AugmentedState) -> Result<Tangent> {
    if !y.is_finite() {
        return Err(Error::diverged("non-finite state passed to vector field"));
    }
    if y.t <= 0.0 {
        return Err(Error::Domain(format!("vector field requires t > 0, got {}", y.t)));
    }
    let g = obj.grad(&y.x);
    let mut dv = g * (-params.forcing_coeff * params.time_power(y.t));
    dv.axpy(-params.friction_coeff / y.t, &y.v, 1.0);
    Ok(Tangent {
        dv,
        dx: y.v.clone(),
        dt: 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::make_quadratic;
    use nalgebra::DMatrix;

    fn unit_quadratic(d: usize) -> Objective {
        make_quadratic(DMatrix::identity(d, d), DVector::zeros(d)).unwrap()
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_vec(xs.to_vec())
    }

    #[test]
    fn defaults_match_accelerated_ode() {
        let p = OdeParams::new(3).unwrap();
        assert_eq!(p.friction_coeff, 7.0);
        assert_eq!(p.forcing_coeff, 9.0);
        assert_eq!(p.forcing_exponent, 1.0);
        let td = OdeParams::time_dilated(3).unwrap();
        assert_eq!(td.friction_coeff, 4.0);
        let nl = OdeParams::nesterov_limit();
        assert_eq!((nl.friction_coeff, nl.forcing_coeff, nl.forcing_exponent), (3.0, 1.0, 0.0));
    }

    #[test]
    fn q2_at_rest_scales_gradient_by_four() {
        let obj = unit_quadratic(2);
        let y = initial_state(&v(&[0.3, -1.2])).unwrap();
        let f = vector_field(&OdeParams::new(2).unwrap(), &obj, &y).unwrap();
        assert_eq!(f.dv, obj.grad(&y.x) * -4.0);
        assert_eq!(f.dx, v(&[0.0, 0.0]));
        assert_eq!(f.dt, 1.0);
    }

    #[test]
    fn q4_at_rest_scales_gradient_by_sixteen() {
        let obj = unit_quadratic(2);
        let y = initial_state(&v(&[0.5, 2.0])).unwrap();
        let f = vector_field(&OdeParams::new(4).unwrap(), &obj, &y).unwrap();
        assert_eq!(f.dv, obj.grad(&y.x) * -16.0);
    }

    #[test]
    fn hand_evaluated_field() {
        let obj = unit_quadratic(2);
        let y = AugmentedState {
            v: v(&[0.0, 1.0]),
            x: v(&[1.0, 0.0]),
            t: 2.0,
        };
        let f = vector_field(&OdeParams::new(2).unwrap(), &obj, &y).unwrap();
        assert_eq!(f.dv, v(&[-8.0, -2.5]));
        assert_eq!(f.dx, v(&[0.0, 1.0]));
    }

    #[test]
    fn initial_state_layout() {
        let y = initial_state(&v(&[1.0, 2.0])).unwrap();
        assert_eq!(y.v, v(&[0.0, 0.0]));
        assert_eq!(y.x, v(&[1.0, 2.0]));
        assert_eq!(y.t, 1.0);
    }

    #[test]
    fn rest_at_centered_optimum_has_zero_field() {
        let obj = unit_quadratic(3);
        let y = initial_state(&DVector::zeros(3)).unwrap();
        let f = vector_field(&OdeParams::new(2).unwrap(), &obj, &y).unwrap();
        assert_eq!(f.dv, DVector::zeros(3));
    }

    #[test]
    fn rejects_bad_time_and_nonfinite_state() {
        let obj = unit_quadratic(1);
        let p = OdeParams::new(2).unwrap();
        let mut y = initial_state(&v(&[1.0])).unwrap();
        y.t = 0.0;
        assert!(matches!(vector_field(&p, &obj, &y), Err(Error::Domain(_))));
        y.t = 1.0;
        y.v[0] = f64::NAN;
        assert!(matches!(vector_field(&p, &obj, &y), Err(Error::Diverged { .. })));
        assert!(initial_state_at(&v(&[1.0]), -1.0).is_err());
        assert!(initial_state(&v(&[f64::INFINITY])).is_err());
    }

    #[test]
    fn time_power_paths_agree() {
        let mut p = OdeParams::new(5).unwrap();
        let direct = p.time_power(1.7);
        assert!((direct - (3.0 * 1.7f64.ln()).exp()).abs() < 1e-14);
        p.forcing_exponent = 2.5;
        assert!((p.time_power(4.0) - 32.0).abs() < 1e-12);
    }
}
