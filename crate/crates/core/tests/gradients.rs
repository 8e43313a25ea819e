//! Central finite differences against the analytic gradients.

use nalgebra::DVector;
use odeaccel::objectives::{builtin, generate_separable_data, make_logistic, Objective, ObjectiveName};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const FD_STEP: f64 = 1e-6;
const REL_TOL: f64 = 1e-5;
const POINTS: usize = 20;

fn fd_grad(obj: &Objective, x: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |j, _| {
        let mut p = x.clone();
        let mut m = x.clone();
        p[j] += FD_STEP;
        m[j] -= FD_STEP;
        (obj.eval(&p) - obj.eval(&m)) / (2.0 * FD_STEP)
    })
}

/// Uniform samples from the unit ball around `x0`.
fn ball_points(x0: &DVector<f64>, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = x0.len();
    (0..POINTS)
        .map(|_| {
            let g = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            let r: f64 = rng.random::<f64>().powf(1.0 / d as f64);
            x0 + g.normalize() * r
        })
        .collect()
}

fn worst_rel_error(obj: &Objective, seed: u64) -> f64 {
    let x0 = DVector::zeros(obj.dim());
    ball_points(&x0, seed)
        .iter()
        .map(|x| {
            let g = obj.grad(x);
            (fd_grad(obj, x) - &g).norm() / g.norm().max(1e-8)
        })
        .fold(0.0, f64::max)
}

#[test]
fn every_builtin_matches_finite_differences() {
    let cases = [
        (ObjectiveName::Quadratic, 7),
        (ObjectiveName::L4, 7),
        (ObjectiveName::Logistic, 3),
        (ObjectiveName::Composite, 5),
    ];
    for (name, seed) in cases {
        let obj = builtin(name, 10, seed).unwrap();
        let err = worst_rel_error(&obj, seed);
        assert!(err <= REL_TOL, "{name}: relative error {err:e}");
    }
}

#[test]
fn other_seeds_and_dimensions() {
    for name in [ObjectiveName::Quadratic, ObjectiveName::L4, ObjectiveName::Logistic, ObjectiveName::Composite] {
        for (dim, seed) in [(3, 11), (6, 12)] {
            let obj = builtin(name, dim, seed).unwrap();
            let err = worst_rel_error(&obj, seed);
            assert!(err <= REL_TOL, "{name} dim {dim}: relative error {err:e}");
        }
    }
}

#[test]
fn logistic_is_finite_at_extreme_margins() {
    let data = generate_separable_data(10, 10, 3).unwrap();
    let obj = make_logistic(&data).unwrap();
    let w0 = data.signed_features().row(0).transpose();
    for target in [1e4, -1e4] {
        let x = &w0 * (target / w0.norm_squared());
        let f = obj.eval(&x);
        assert!(f.is_finite() && f >= 0.0, "f = {f} at wᵀx = {target}");
        assert!(obj.grad(&x).iter().all(|g| g.is_finite()));
    }
}
