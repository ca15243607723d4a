mod common;

use std::f64::consts::PI;

use common::{constant, expm, mat, max_abs_diff, system, term};
use ltv_core::gramian::{default_starts, smallest_passing_sigma};
use ltv_core::{
    catalog, check_injection_invariance, check_uco, observability_gramian, CoefficientFunction, IntegratorSettings, LtvSystem, Wave,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn settings() -> IntegratorSettings {
    IntegratorSettings::default()
}

#[test]
fn scalar_closed_form() {
    let sys = system(1, &[-1.0], &[1.0]);
    let m = observability_gramian(&sys, 0.0, 1.0, &settings()).unwrap();
    assert!((m[(0, 0)] - (1.0 - (-2f64).exp()) / 2.0).abs() <= 1e-6);
}

#[test]
fn rotating_output_over_a_period() {
    let sys = catalog::get("rotating_output").unwrap().build().unwrap();
    let expected = DMatrix::identity(2, 2) * PI;
    for i in 0..8 {
        let t0 = 0.37 * i as f64 + 0.1;
        let m = observability_gramian(&sys, t0, t0 + 2.0 * PI, &settings()).unwrap();
        assert!(max_abs_diff(&m, &expected) <= 1e-5, "t0 = {t0}");
    }
}

#[test]
fn constant_pair_against_quadrature_of_exponentials() {
    let a = mat(2, 2, &[0.0, 1.0, -2.0, -0.5]);
    let c = mat(1, 2, &[1.0, 0.0]);
    let sys = system(2, &[0.0, 1.0, -2.0, -0.5], &[1.0, 0.0]);
    // Reference by fine midpoint quadrature of Φᵀ Cᵀ C Φ, Φ = e^{A s}.
    let (steps, sigma) = (20_000, 3.0);
    let h = sigma / steps as f64;
    let mut reference = DMatrix::zeros(2, 2);
    for i in 0..steps {
        let phi = expm(&(&a * ((i as f64 + 0.5) * h)));
        let cphi = &c * phi;
        reference += cphi.transpose() * cphi * h;
    }
    let m = observability_gramian(&sys, 5.0, 5.0 + sigma, &settings()).unwrap();
    assert!(max_abs_diff(&m, &reference) <= 1e-6);
}

#[test]
fn additivity_over_split_windows() {
    let sys = catalog::get("periodic_triangular").unwrap().build().unwrap();
    let (t0, t1, t2) = (1.0, 2.3, 4.0);
    let whole = observability_gramian(&sys, t0, t2, &settings()).unwrap();
    let first = observability_gramian(&sys, t0, t1, &settings()).unwrap();
    let second = observability_gramian(&sys, t1, t2, &settings()).unwrap();
    let phi =
        ltv_core::propagate::propagate_linear(sys.a(), &DMatrix::identity(2, 2), t0, t1, &settings().integrator(sys.bound_a())).unwrap();
    let split = first + phi.transpose() * second * phi;
    assert!(max_abs_diff(&whole, &split) <= 1e-8 * whole.amax());
}

#[test]
fn jumps_inside_the_window() {
    // a = 0 on [0, 1), -1 afterwards; M(2, 0) = 1 + (1 - e^{-2}) / 2
    let a = CoefficientFunction::piecewise_constant(vec![1.0], vec![mat(1, 1, &[0.0]), mat(1, 1, &[-1.0])]).unwrap();
    let sys = LtvSystem::new(a, constant(1, 1, &[1.0])).unwrap();
    let m = observability_gramian(&sys, 0.0, 2.0, &settings()).unwrap();
    assert!((m[(0, 0)] - 1.0 - (1.0 - (-2f64).exp()) / 2.0).abs() <= 1e-10);
}

#[test]
fn lambda_min_grows_with_the_window() {
    let sys = catalog::get("rotating_output").unwrap().build().unwrap();
    let mut previous = 0.0;
    for sigma in [0.5, 1.0, 2.0, 4.0] {
        let report = check_uco(&sys, sigma, &[0.0, 1.0, 2.0], None, &settings()).unwrap();
        assert!(report.beta1 > previous);
        previous = report.beta1;
    }
}

#[test]
fn blind_output_is_never_observable() {
    let sys = catalog::get("blind").unwrap().build().unwrap();
    let starts = |sigma| default_starts(0.0, 20.0, sigma, 8);
    let (passing, reports) = smallest_passing_sigma(&sys, &[1.0, 2.0, 4.0], starts, None, &settings()).unwrap();
    assert_eq!(passing, None);
    assert_eq!(reports.len(), 3);
    assert!(reports.iter().all(|r| !r.uco && r.beta1 == 0.0));
}

#[test]
fn smallest_window_is_reported() {
    let sys = catalog::get("saddle_observed").unwrap().build().unwrap();
    let starts = |sigma| default_starts(0.0, 20.0, sigma, 8);
    let (passing, _) = smallest_passing_sigma(&sys, &[4.0, 1.0, 2.0], starts, None, &settings()).unwrap();
    assert_eq!(passing, None, "a single output cannot see both saddle modes");

    let sys = catalog::get("rotating_output").unwrap().build().unwrap();
    let (passing, reports) = smallest_passing_sigma(&sys, &[4.0, 1.0, 2.0], starts, None, &settings()).unwrap();
    assert_eq!(passing, Some(1.0));
    assert_eq!(reports.len(), 1);
}

/// Bounded random gain with a constant part and one harmonic per entry.
fn random_gain(rng: &mut ChaCha8Rng, n: usize, p: usize) -> CoefficientFunction {
    let offset = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
    let terms = (0..n)
        .flat_map(|i| (0..p).map(move |j| (i, j)))
        .map(|(i, j)| {
            let wave = if rng.random_bool(0.5) { Wave::Sin } else { Wave::Cos };
            term(i, j, rng.random_range(-1.0..1.0), rng.random_range(0.2..2.0), wave)
        })
        .collect();
    CoefficientFunction::periodic(offset, terms).unwrap()
}

#[test]
fn output_injection_preserves_observability() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let pairs = ["saddle_observed", "saddle_hidden", "rotating_output", "blind"];
    let starts = default_starts(0.0, 10.0, 2.0, 8).unwrap();
    let mut agreements = 0;
    for name in pairs {
        let sys = catalog::get(name).unwrap().build().unwrap();
        for _ in 0..20 {
            let l = random_gain(&mut rng, sys.n(), sys.p());
            let (open, injected) = check_injection_invariance(&sys, &l, 2.0, &starts, None, &settings()).unwrap();
            assert_eq!(open.uco, injected.uco, "{name}: {} vs {}", open.beta1, injected.beta1);
            agreements += 1;
        }
    }
    assert_eq!(agreements, 80);
}
