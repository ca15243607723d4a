//! Continuous QR decomposition `X(t) = Q(t) R(t)` of a fundamental solution.
//!
//! `Q' = Q S` with `S` skew-symmetric keeps `Q` orthogonal; `B = QᵀAQ - S` is
//! upper triangular and `R' = B R`. Only `Q`, `B` and the log-diagonal
//! `ν_i(t) = log r_ii(t)` are kept, so nothing here grows exponentially.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{modified_gram_schmidt, orthogonality_defect, qr_positive, strictly_lower_max, zero_strictly_lower};
use crate::propagate::{inside, rk4_step, segments, steps_in, IntegratorSettings};
use crate::system::{CoefficientFunction, LtvSystem};

/// Skew-symmetric generator with `s_ij = q_iᵀ A q_j` for `i > j`.
pub fn skew_generator(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "skew generator needs square A and Q of equal size, got {:?} and {:?}",
            a.shape(),
            q.shape()
        )));
    }
    Ok(skew_from_projection(&(q.transpose() * a * q)))
}

fn skew_from_projection(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut s = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in (j + 1)..n {
            s[(i, j)] = m[(i, j)];
            s[(j, i)] = -m[(i, j)];
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QrSettings {
    pub integrator: IntegratorSettings,
    /// Re-orthonormalize every this many steps.
    pub reortho_every: usize,
    /// ... and whenever `‖QᵀQ - I‖` exceeds this.
    pub drift_tol: f64,
    /// A re-orthonormalization moving `Q` further than this is a failure.
    pub max_correction: f64,
}

impl Default for QrSettings {
    fn default() -> Self {
        QrSettings {
            integrator: IntegratorSettings::default(),
            reortho_every: 100,
            drift_tol: 1e-9,
            max_correction: 1e-3,
        }
    }
}

/// Output of [`run_qr_flow`]. Times are nondecreasing; a repeated time marks a
/// coefficient jump (left limit first).
#[derive(Debug, Clone)]
pub struct QrFlowResult {
    pub times: Vec<f64>,
    pub q: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub nu: Vec<DVector<f64>>,
    pub ortho_residual: Vec<f64>,
    /// Largest strictly-lower entry of `QᵀAQ - S` before it was zeroed.
    pub max_lower_before_zeroing: f64,
    pub reorthonormalizations: usize,
    /// Times at which coefficients were evaluated for each sample (nudged to the jump side).
    eval_times: Vec<f64>,
}

impl QrFlowResult {
    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("nonempty flow")
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn dim(&self) -> usize {
        self.q[0].nrows()
    }

    pub fn max_ortho_residual(&self) -> f64 {
        self.ortho_residual.iter().copied().fold(0.0, f64::max)
    }

    /// Index of the last sample at or before `t`.
    pub fn index_at(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t).saturating_sub(1)
    }

    /// `ν(t)` by linear interpolation.
    pub fn nu_at(&self, t: f64) -> DVector<f64> {
        let idx = self.times.partition_point(|&s| s <= t);
        if idx == 0 {
            return self.nu[0].clone();
        }
        if idx == self.times.len() {
            return self.nu[idx - 1].clone();
        }
        let j = idx - 1;
        let w = (t - self.times[j]) / (self.times[idx] - self.times[j]);
        &self.nu[j] * (1.0 - w) + &self.nu[idx] * w
    }

    /// `diag B(t_j)` at every sample.
    pub fn diagonal(&self, j: usize) -> DVector<f64> {
        self.b[j].diagonal()
    }
}

/// Integrates the orthogonal flow from `X(0) = X0` (identity when `None`) over `[start, horizon]`.
pub fn run_qr_flow(sys: &LtvSystem, x0: Option<&DMatrix<f64>>, horizon: f64, settings: &QrSettings) -> Result<QrFlowResult> {
    settings.integrator.validate()?;
    let n = sys.n();
    let start = sys.domain_start();
    if !(horizon > start) || horizon > sys.domain_end() + 1e-9 * horizon.abs().max(1.0) {
        return Err(Error::Domain {
            t: horizon,
            start,
            end: sys.domain_end(),
        });
    }
    let x0 = x0.cloned().unwrap_or_else(|| DMatrix::identity(n, n));
    if x0.shape() != (n, n) {
        return Err(Error::Dimension(format!("X0 must be {n}x{n}")));
    }
    let (q0, r0) = qr_positive(&x0)?;
    let nu0 = DVector::from_fn(n, |i, _| r0[(i, i)].ln());

    let a = sys.a();
    let h = settings.integrator.step_for(sys.bound_a());
    let rhs = |t: f64, y: &DMatrix<f64>| -> DMatrix<f64> {
        let q = y.columns(0, n);
        let av = a.value_at(t);
        let m = q.transpose() * &av * q;
        let s = skew_from_projection(&m);
        let mut dy = DMatrix::zeros(n, n + 1);
        dy.columns_mut(0, n).copy_from(&(q * s));
        for i in 0..n {
            dy[(i, n)] = m[(i, i)];
        }
        dy
    };

    let mut out = QrFlowResult {
        times: Vec::new(),
        q: Vec::new(),
        b: Vec::new(),
        nu: Vec::new(),
        ortho_residual: Vec::new(),
        max_lower_before_zeroing: 0.0,
        reorthonormalizations: 0,
        eval_times: Vec::new(),
    };
    let record = |out: &mut QrFlowResult, t: f64, t_eval: f64, y: &DMatrix<f64>| {
        let q = y.columns(0, n).clone_owned();
        let av = a.value_at(t_eval);
        let m = q.transpose() * &av * &q;
        let mut b = &m - skew_from_projection(&m);
        out.max_lower_before_zeroing = out.max_lower_before_zeroing.max(strictly_lower_max(&b));
        zero_strictly_lower(&mut b);
        out.ortho_residual.push(orthogonality_defect(&q));
        out.nu.push(y.column(n).clone_owned());
        out.times.push(t);
        out.eval_times.push(t_eval);
        out.q.push(q);
        out.b.push(b);
    };

    let mut y = DMatrix::zeros(n, n + 1);
    y.columns_mut(0, n).copy_from(&q0);
    y.column_mut(n).copy_from(&nu0);

    let breaks = sys.breakpoints_in(start, horizon);
    let segs = segments(start, horizon, &breaks);
    let mut since_reortho = 0usize;
    for &(sa, sb) in &segs {
        let seg = (sa, sb);
        // right limit at the segment start (a jump point after the first segment)
        record(&mut out, sa, inside(sa, seg), &y);
        let count = steps_in(sa, sb, h);
        let step = (sb - sa) / count as f64;
        for i in 0..count {
            let t = sa + step * i as f64;
            y = rk4_step(&rhs, t, &y, step, seg);
            let t_end = if i + 1 == count { sb } else { t + step };
            if !y.iter().all(|v| v.is_finite()) {
                return Err(Error::Overflow { time: t_end });
            }
            since_reortho += 1;
            let q = y.columns(0, n).clone_owned();
            let drift = orthogonality_defect(&q);
            if since_reortho >= settings.reortho_every || drift > settings.drift_tol {
                let fixed = modified_gram_schmidt(&q).map_err(|_| Error::Flow {
                    time: t_end,
                    change: f64::INFINITY,
                })?;
                let change = (&fixed - &q).norm();
                if change > settings.max_correction {
                    return Err(Error::Flow { time: t_end, change });
                }
                y.columns_mut(0, n).copy_from(&fixed);
                since_reortho = 0;
                out.reorthonormalizations += 1;
            }
            // at a jump this is the left limit; the right limit opens the next segment
            record(&mut out, t_end, inside(t_end, seg), &y);
        }
    }
    // the first record duplicated the start point with the same values; drop it
    if out.times.len() > 1 && out.times[0] == out.times[1] && out.eval_times[0] == out.eval_times[1] {
        for v in [&mut out.times, &mut out.eval_times, &mut out.ortho_residual] {
            v.remove(0);
        }
        out.q.remove(0);
        out.b.remove(0);
        out.nu.remove(0);
    }
    Ok(out)
}

/// The system `(B(t), C(t) Q(t))` in the coordinates `z = Qᵀ x`, sampled on the flow grid.
pub fn triangularized_system(sys: &LtvSystem, flow: &QrFlowResult) -> Result<LtvSystem> {
    if flow.dim() != sys.n() {
        return Err(Error::Dimension("flow and system dimensions differ".into()));
    }
    let a = CoefficientFunction::sampled_at(flow.times.clone(), flow.b.clone())?;
    let cq = flow.eval_times.iter().zip(&flow.q).map(|(&t, q)| sys.c().value_at(t) * q).collect();
    let c = CoefficientFunction::sampled_at(flow.times.clone(), cq)?;
    let name = if sys.name().is_empty() {
        "triangularized".to_string()
    } else {
        format!("{} (triangularized)", sys.name())
    };
    Ok(LtvSystem::new(a, c)?.with_name(name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::spectral_norm;
    use approx::assert_relative_eq;

    fn constant(rows: usize, cols: usize, data: &[f64]) -> CoefficientFunction {
        CoefficientFunction::constant(DMatrix::from_row_slice(rows, cols, data)).unwrap()
    }

    #[test]
    fn generator_vanishes_for_triangular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 5.0, 0.0, -2.0]);
        let s = skew_generator(&a, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(s, DMatrix::zeros(2, 2));
    }

    #[test]
    fn generator_of_rotation() {
        let w = 0.7;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -w, w, 0.0]);
        let s = skew_generator(&a, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(s, a);
    }

    #[test]
    fn generator_shape_check() {
        assert!(skew_generator(&DMatrix::zeros(2, 2), &DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn triangular_input_keeps_identity() {
        let sys = LtvSystem::new(constant(2, 2, &[0.5, 2.0, 0.0, -1.5]), constant(1, 2, &[1.0, 0.0])).unwrap();
        let flow = run_qr_flow(&sys, None, 5.0, &QrSettings::default()).unwrap();
        for (j, &t) in flow.times.iter().enumerate().step_by(500) {
            assert_relative_eq!(flow.q[j].clone(), DMatrix::identity(2, 2), epsilon = 1e-12);
            assert_relative_eq!(flow.b[j].clone(), sys.a().value_at(t), epsilon = 1e-12);
            assert_relative_eq!(flow.nu[j][0], 0.5 * t, epsilon = 1e-10);
            assert_relative_eq!(flow.nu[j][1], -1.5 * t, epsilon = 1e-10);
        }
    }

    #[test]
    fn rotation_flow_is_the_rotation() {
        let sys = LtvSystem::new(constant(2, 2, &[0.0, -1.0, 1.0, 0.0]), constant(1, 2, &[1.0, 0.0])).unwrap();
        let flow = run_qr_flow(&sys, None, 10.0, &QrSettings::default()).unwrap();
        for (j, &t) in flow.times.iter().enumerate().step_by(250) {
            let rot = DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
            assert!(spectral_norm(&(&flow.q[j] - rot)) < 1e-6, "t = {t}");
            assert!(spectral_norm(&flow.b[j]) < 1e-7);
            assert!(flow.nu[j].amax() < 1e-7);
        }
        let tri = triangularized_system(&sys, &flow).unwrap();
        let c = tri.c().value_at(2.0);
        assert_relative_eq!(c[(0, 0)], 2.0_f64.cos(), epsilon = 1e-6);
        assert_relative_eq!(c[(0, 1)], -(2.0_f64.sin()), epsilon = 1e-6);
    }

    #[test]
    fn decoupled_growth_rates() {
        let sys = LtvSystem::new(constant(2, 2, &[1.0, 0.0, 0.0, -1.0]), constant(1, 2, &[1.0, 0.0])).unwrap();
        let flow = run_qr_flow(&sys, None, 3.0, &QrSettings::default()).unwrap();
        let nu = flow.nu_at(3.0);
        assert_relative_eq!(nu[0], 3.0, epsilon = 1e-10);
        assert_relative_eq!(nu[1], -3.0, epsilon = 1e-10);
    }

    #[test]
    fn initial_log_diagonal_from_x0() {
        let sys = LtvSystem::new(constant(2, 2, &[0.0, 0.0, 0.0, 0.0]), constant(1, 2, &[1.0, 0.0])).unwrap();
        let x0 = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, -3.0]);
        let flow = run_qr_flow(&sys, Some(&x0), 1.0, &QrSettings::default()).unwrap();
        assert_relative_eq!(flow.nu[0][0], 2.0_f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(flow.nu[0][1], 3.0_f64.ln(), epsilon = 1e-14);
        assert!(run_qr_flow(&sys, Some(&DMatrix::zeros(2, 2)), 1.0, &QrSettings::default()).is_err());
    }

    #[test]
    fn piecewise_jump_is_recorded_twice() {
        let a = CoefficientFunction::piecewise_constant(
            vec![1.0],
            vec![
                DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
                DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, -3.0]),
            ],
        )
        .unwrap();
        let sys = LtvSystem::new(a, constant(1, 2, &[1.0, 0.0])).unwrap();
        let flow = run_qr_flow(&sys, None, 2.0, &QrSettings::default()).unwrap();
        let at_jump: Vec<usize> = (0..flow.times.len()).filter(|&j| flow.times[j] == 1.0).collect();
        assert_eq!(at_jump.len(), 2);
        assert_eq!(flow.b[at_jump[0]][(0, 0)], 1.0);
        assert_eq!(flow.b[at_jump[1]][(0, 0)], 2.0);
        let tri = triangularized_system(&sys, &flow).unwrap();
        assert_relative_eq!(tri.a().value_at(0.999_999)[(0, 0)], 1.0, epsilon = 1e-9);
        assert_relative_eq!(tri.a().value_at(1.0)[(0, 0)], 2.0, epsilon = 1e-12);
    }
}
