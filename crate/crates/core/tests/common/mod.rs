//! Independent reference values and fixtures shared by the integration tests.
#![allow(dead_code)]

use ltv_core::{CoefficientFunction, LtvSystem, TrigTerm, Wave};
use nalgebra::DMatrix;

/// `e^M` by scaling and squaring of a truncated Taylor series.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm = m.abs().row_sum().max();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = m / 2f64.powi(squarings);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for j in 1..=24 {
        term = &term * &scaled / j as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

pub fn mat(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

pub fn constant(rows: usize, cols: usize, data: &[f64]) -> CoefficientFunction {
    CoefficientFunction::constant(mat(rows, cols, data)).unwrap()
}

pub fn system(n: usize, a: &[f64], c: &[f64]) -> LtvSystem {
    LtvSystem::new(constant(n, n, a), constant(c.len() / n, n, c)).unwrap()
}

pub fn term(row: usize, col: usize, amplitude: f64, frequency: f64, wave: Wave) -> TrigTerm {
    TrigTerm {
        row,
        col,
        amplitude,
        frequency,
        phase: 0.0,
        wave,
    }
}

/// `A = [[0, -ω], [ω, 0]]`.
pub fn rotation(omega: f64) -> LtvSystem {
    system(2, &[0.0, -omega, omega, 0.0], &[1.0, 0.0])
}

/// `[[cos ωt, -sin ωt], [sin ωt, cos ωt]]`.
pub fn rotation_matrix(omega: f64, t: f64) -> DMatrix<f64> {
    let (s, c) = (omega * t).sin_cos();
    mat(2, 2, &[c, -s, s, c])
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
