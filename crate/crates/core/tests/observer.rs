use ltv_core::observer::{certify_error_decay, solve_filter_riccati, synthesize_gain, DecayGrid, RiccatiWeights};
use ltv_core::{CoefficientFunction, IntegratorSettings, LtvSystem};
use nalgebra::DMatrix;

fn constant(rows: usize, cols: usize, data: &[f64]) -> CoefficientFunction {
    CoefficientFunction::constant(DMatrix::from_row_slice(rows, cols, data)).unwrap()
}

#[test]
fn scalar_riccati_gain_decays_at_root_two() {
    let settings = IntegratorSettings::default();
    let one = CoefficientFunction::scalar(1.0);
    let ric = solve_filter_riccati(&one, &one, &RiccatiWeights::default(), 60.0, &settings).unwrap();
    assert!((ric.p_at(10.0)[(0, 0)] - (1.0 + 2.0_f64.sqrt())).abs() <= 1e-4);
    let l = synthesize_gain(1, &ric).unwrap();
    let sys = LtvSystem::new(one.clone(), one).unwrap();
    let grid = DecayGrid::default_for(ric.burn_in, 60.0).unwrap();
    let cert = certify_error_decay(&sys, &l, &grid, 1e-3, &settings).unwrap();
    assert!(cert.valid);
    assert!((1.40..=1.42).contains(&cert.mu), "mu = {}", cert.mu);
    assert!((cert.k_e - 1.0).abs() <= 1e-3, "K = {}", cert.k_e);
    assert!((cert.gain_bound - (1.0 + 2.0_f64.sqrt())).abs() <= 1e-3);
}

#[test]
fn stable_error_without_gain() {
    let sys = LtvSystem::new(constant(2, 2, &[-1.0, 0.0, 0.0, -1.0]), constant(1, 2, &[1.0, 0.0])).unwrap();
    let grid = DecayGrid::default_for(0.0, 40.0).unwrap();
    let cert = certify_error_decay(&sys, &CoefficientFunction::zeros(2, 1), &grid, 1e-3, &IntegratorSettings::default()).unwrap();
    assert!(cert.valid);
    assert!((cert.mu - 1.0).abs() <= 1e-3 && (cert.k_e - 1.0).abs() <= 1e-3);
}

#[test]
fn stable_measured_riccati_value() {
    let b = CoefficientFunction::scalar(-1.0);
    let c = CoefficientFunction::scalar(0.0);
    let ric = solve_filter_riccati(&b, &c, &RiccatiWeights::default(), 20.0, &IntegratorSettings::default()).unwrap();
    assert!((ric.p_at(20.0)[(0, 0)] - 0.5).abs() <= 1e-6);
}

#[test]
fn unobservable_unstable_mode_keeps_growing() {
    // A = diag(1, -1), C = [0, 1]: injection only reaches the stable state
    let sys = LtvSystem::new(constant(2, 2, &[1.0, 0.0, 0.0, -1.0]), constant(1, 2, &[0.0, 1.0])).unwrap();
    let l = constant(2, 1, &[3.0, 2.0]);
    let grid = DecayGrid::default_for(0.0, 40.0).unwrap();
    let cert = certify_error_decay(&sys, &l, &grid, 1e-3, &IntegratorSettings::default()).unwrap();
    assert!(!cert.valid);
    assert!(cert.mu <= 0.0);
}

#[test]
fn two_outputs_give_two_gain_columns() {
    let b = CoefficientFunction::scalar(1.0);
    let c = constant(2, 1, &[1.0, 0.5]);
    let ric = solve_filter_riccati(&b, &c, &RiccatiWeights::default(), 10.0, &IntegratorSettings::default()).unwrap();
    assert_eq!(synthesize_gain(3, &ric).unwrap().shape(), (3, 2));
}

#[test]
fn symmetric_solution() {
    let b = constant(2, 2, &[1.0, 2.0, -0.5, 0.3]);
    let c = constant(1, 2, &[1.0, 1.0]);
    let ric = solve_filter_riccati(&b, &c, &RiccatiWeights::default(), 10.0, &IntegratorSettings::default()).unwrap();
    for p in &ric.p {
        assert!((p - p.transpose()).amax() <= 1e-10);
    }
    assert!(ric.lambda_sup.is_finite() && ric.lambda_inf > 0.0);
}
