//! Gradient descent and Nesterov's accelerated gradient.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::objectives::Objective;

fn check_step(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("step size must be positive, got {h}")))
    }
}

fn finite(x: &DVector<f64>) -> bool {
    x.iter().all(|c| c.is_finite())
}

/// `x − h∇f(x)`.
pub fn gd_step(obj: &Objective, x: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    check_step(h)?;
    let mut next = x.clone();
    next.axpy(-h, &obj.grad(x), 1.0);
    if !finite(&next) {
        return Err(Error::diverged("gradient descent produced a non-finite iterate"));
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NagState {
    pub x_prev: DVector<f64>,
    pub x_curr: DVector<f64>,
    pub y_curr: DVector<f64>,
    /// Number of updates applied so far.
    pub k: usize,
}

impl NagState {
    pub fn new(x0: &DVector<f64>) -> Self {
        Self {
            x_prev: x0.clone(),
            x_curr: x0.clone(),
            y_curr: x0.clone(),
            k: 0,
        }
    }
}

/// `(k−1)/(k+2)`.
pub fn momentum_factor(k: usize) -> f64 {
    (k as f64 - 1.0) / (k as f64 + 2.0)
}

/// `x_k = y_{k−1} − h∇f(y_{k−1})`, `y_k = x_k + (k−1)/(k+2)·(x_k − x_{k−1})`.
pub fn nag_step(obj: &Objective, state: &NagState, h: f64) -> Result<NagState> {
    nag_step_with(obj, state, h, momentum_factor)
}

/// NAG update with a caller-supplied momentum schedule.
pub fn nag_step_with(
    obj: &Objective,
    state: &NagState,
    h: f64,
    momentum: impl Fn(usize) -> f64,
) -> Result<NagState> {
    let x_next = gd_step(obj, &state.y_curr, h)?;
    let k = state.k + 1;
    let mut y_next = x_next.clone();
    y_next.axpy(momentum(k), &(&x_next - &state.x_curr), 1.0);
    if !finite(&y_next) {
        return Err(Error::diverged("NAG produced a non-finite extrapolation"));
    }
    Ok(NagState {
        x_prev: state.x_curr.clone(),
        x_curr: x_next,
        y_curr: y_next,
        k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{builtin, make_quadratic, ObjectiveName};
    use nalgebra::DMatrix;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_vec(xs.to_vec())
    }

    #[test]
    fn gd_closed_form_step() {
        let obj = make_quadratic(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        assert_eq!(gd_step(&obj, &v(&[1.0, 0.0]), 0.25).unwrap(), v(&[0.5, 0.0]));
    }

    #[test]
    fn gd_fixed_point_at_optimum() {
        let obj = make_quadratic(DMatrix::identity(2, 2), v(&[1.0, -2.0])).unwrap();
        let xs = obj.optimum_point().unwrap().clone();
        assert_eq!(gd_step(&obj, &xs, 0.3).unwrap(), xs);
    }

    #[test]
    fn gd_geometric_decay_on_scalar_square() {
        let obj = make_quadratic(DMatrix::identity(1, 1), DVector::zeros(1)).unwrap();
        let mut x = v(&[1.0]);
        for _ in 0..100 {
            x = gd_step(&obj, &x, 0.1).unwrap();
        }
        let expected = 0.8f64.powi(100);
        assert!((x[0] - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn gd_reports_divergence_and_bad_step() {
        let obj = make_quadratic(DMatrix::identity(1, 1), DVector::zeros(1)).unwrap();
        assert!(matches!(gd_step(&obj, &v(&[1e308]), 10.0), Err(Error::Diverged { .. })));
        assert!(matches!(gd_step(&obj, &v(&[1.0]), 0.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn first_nag_step_is_plain_gradient_step() {
        let obj = builtin(ObjectiveName::Quadratic, 5, 2).unwrap();
        let x0 = DVector::from_element(5, 0.3);
        let s1 = nag_step(&obj, &NagState::new(&x0), 0.01).unwrap();
        assert_eq!(momentum_factor(1), 0.0);
        assert_eq!(s1.k, 1);
        assert_eq!(s1.y_curr, s1.x_curr);
        assert_eq!(s1.x_curr, gd_step(&obj, &x0, 0.01).unwrap());
    }

    #[test]
    fn nag_stays_at_optimum() {
        let obj = make_quadratic(DMatrix::identity(3, 3), v(&[1.0, 2.0, 3.0])).unwrap();
        let mut s = NagState::new(obj.optimum_point().unwrap());
        for _ in 0..10 {
            s = nag_step(&obj, &s, 0.2).unwrap();
        }
        assert_eq!(&s.x_curr, obj.optimum_point().unwrap());
    }

    #[test]
    fn zero_momentum_is_gradient_descent_bitwise() {
        let obj = builtin(ObjectiveName::L4, 6, 3).unwrap();
        let mut s = NagState::new(&DVector::zeros(6));
        let mut x = DVector::zeros(6);
        for _ in 0..50 {
            s = nag_step_with(&obj, &s, 1e-3, |_| 0.0).unwrap();
            x = gd_step(&obj, &x, 1e-3).unwrap();
            assert_eq!(s.x_curr, x);
        }
    }

    #[test]
    fn extrapolation_invariant_holds() {
        let obj = builtin(ObjectiveName::Quadratic, 4, 8).unwrap();
        let mut s = NagState::new(&DVector::zeros(4));
        for _ in 0..20 {
            s = nag_step(&obj, &s, 1e-2).unwrap();
            let expected = &s.x_curr + (&s.x_curr - &s.x_prev) * momentum_factor(s.k);
            assert!((&s.y_curr - expected).amax() <= 1e-15);
        }
    }

    #[test]
    fn momentum_schedule_is_increasing_and_below_one() {
        let mut prev = -1.0;
        for k in 1..10_000 {
            let m = momentum_factor(k);
            assert!(m > prev && m < 1.0);
            prev = m;
        }
    }
}
