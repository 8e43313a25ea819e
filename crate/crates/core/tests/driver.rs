//! End-to-end behaviour of the run loop and the step-size search.

use odeaccel::driver::{
    probe, run_algorithm1, run_fixed, search_step_size, search_with_diagnostics, Method, Problem, RunConfig,
    StepMode, TraceStride,
};
use odeaccel::objectives::{builtin, ObjectiveName};
use odeaccel::trace::{Outcome, RunTrace};

fn cfg(objective: ObjectiveName, method: Method, tableau: &str, q: u32, n: usize) -> RunConfig {
    RunConfig {
        objective,
        method,
        tableau: tableau.into(),
        q,
        n_iters: n,
        ..Default::default()
    }
}

#[test]
fn identical_configs_give_identical_traces() {
    for c in [
        cfg(ObjectiveName::Quadratic, Method::Ode, "rk4", 2, 5_000),
        cfg(ObjectiveName::Logistic, Method::Ode, "midpoint", 2, 2_000),
        cfg(ObjectiveName::Composite, Method::Nag, "rk4", 2, 2_000),
    ] {
        let a = run_algorithm1(&c).unwrap();
        let b = run_algorithm1(&c).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
    }
}

#[test]
fn gradient_accounting_and_clock() {
    for (tab, s) in [("euler", 1), ("midpoint", 2), ("rk4", 4)] {
        let c = RunConfig {
            step: StepMode::Fixed(1e-3),
            stride: TraceStride::Every(7),
            ..cfg(ObjectiveName::Quadratic, Method::Ode, tab, 2, 1000)
        };
        let tr = run_algorithm1(&c).unwrap();
        assert_eq!(tr.outcome, Outcome::BudgetExhausted);
        assert_eq!(tr.last().unwrap().iter, 1000);
        assert_eq!(tr.last().unwrap().grad_evals, 1000 * s);
        for w in tr.rows.windows(2) {
            assert_eq!(w[1].grad_evals, w[1].iter * s);
            assert!(w[1].t > w[0].t);
            let expected = 1.0 + w[1].iter as f64 * 1e-3;
            assert!((w[1].t - expected).abs() <= 1e-12 * expected);
        }
    }
}

#[test]
fn start_at_optimum_is_at_rest() {
    let obj = builtin(ObjectiveName::Quadratic, 10, 7).unwrap();
    let xs: Vec<f64> = obj.optimum_point().unwrap().iter().cloned().collect();
    let c = RunConfig {
        x0: Some(xs),
        step: StepMode::Fixed(0.1),
        ..Default::default()
    };
    let tr = run_algorithm1(&c).unwrap();
    assert!(tr.rows.iter().all(|r| r.f_gap.abs() <= 1e-12));
    assert!(tr.rows.iter().all(|r| r.energy.unwrap().abs() <= 1e-12));
}

#[test]
fn euler_searches_no_larger_step_than_rk4() {
    let he = search_step_size(&cfg(ObjectiveName::Quadratic, Method::Ode, "euler", 2, 1), 1000).unwrap();
    let hr = search_step_size(&cfg(ObjectiveName::Quadratic, Method::Ode, "rk4", 2, 1), 1000).unwrap();
    assert!(he <= hr, "{he} vs {hr}");
}

#[test]
fn searched_step_is_maximal() {
    for c in [
        cfg(ObjectiveName::Quadratic, Method::Ode, "rk4", 2, 1),
        cfg(ObjectiveName::L4, Method::Ode, "midpoint", 4, 1),
        cfg(ObjectiveName::Quadratic, Method::Gd, "rk4", 2, 1),
    ] {
        let pb = Problem::from_config(&c).unwrap();
        let (h, probes) = search_with_diagnostics(&pb, 1000).unwrap();
        assert!(probe(&pb, h, 1000).unwrap().stable);
        if h < 1.0 {
            assert!(!probe(&pb, h * 10.0, 1000).unwrap().stable);
        }
        assert!(probes[..probes.len() - 1].iter().all(|p| !p.stable));
    }
}

#[test]
fn diverged_rows_stop_before_detection() {
    let c = RunConfig {
        step: StepMode::Fixed(0.1),
        stride: TraceStride::Every(1),
        ..cfg(ObjectiveName::Quadratic, Method::Ode, "rk4", 4, 1000)
    };
    let tr = run_algorithm1(&c).unwrap();
    let Outcome::Diverged(k) = tr.outcome else { panic!("{:?}", tr.outcome) };
    assert!(tr.rows.iter().all(|r| r.iter < k));
    assert_eq!(tr.last().unwrap().iter, k - 1);
}

fn tail_ripple(tr: &RunTrace) -> f64 {
    let n = tr.rows.len();
    tr.rows[n - n / 10..]
        .windows(2)
        .map(|w| w[1].f_gap / w[0].f_gap)
        .fold(0.0, f64::max)
}

/// Peak gap of the last 5% of rows over the peak of the 5% before them.
fn tail_envelope_ratio(tr: &RunTrace) -> f64 {
    let n = tr.rows.len();
    let peak = |rows: &[odeaccel::trace::TraceRow]| rows.iter().map(|r| r.f_gap).fold(0.0, f64::max);
    peak(&tr.rows[n - n / 20..]) / peak(&tr.rows[n - n / 10..n - n / 20])
}

#[test]
fn stable_runs_decrease_in_the_tail() {
    let l4 = run_algorithm1(&cfg(ObjectiveName::L4, Method::Ode, "midpoint", 4, 100_000)).unwrap();
    assert!(!l4.outcome.is_diverged());
    let r = tail_ripple(&l4);
    assert!(r <= 1.05, "l4: tail ripple {r}");

    // The slowest quadratic mode is underdamped, so the gap oscillates row to
    // row; only its envelope decreases.
    let quad = run_algorithm1(&cfg(ObjectiveName::Quadratic, Method::Ode, "rk4", 2, 100_000)).unwrap();
    assert!(!quad.outcome.is_diverged());
    let e = tail_envelope_ratio(&quad);
    assert!(e <= 1.05, "quadratic: envelope ratio {e}");
}

#[test]
fn fixed_runs_match_algorithm1() {
    let c = RunConfig {
        step: StepMode::Fixed(0.01),
        ..cfg(ObjectiveName::L4, Method::Ode, "midpoint", 2, 3_000)
    };
    let pb = Problem::from_config(&c).unwrap();
    assert_eq!(run_fixed(&pb, 0.01, 3_000, c.stride).unwrap(), run_algorithm1(&c).unwrap());
}
