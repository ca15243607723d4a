//! Observability Gramians and uniform complete observability checks.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigenvalues, symmetrize, to_rows};
use crate::propagate::{inside, rk4_step, segments, steps_in, IntegratorSettings};
use crate::system::{linspace, CoefficientFunction, LtvSystem};

/// Default number of window starts.
pub const DEFAULT_STARTS: usize = 32;

/// `M(t1, t0) = ∫ Φᵀ(s, t0) Cᵀ(s) C(s) Φ(s, t0) ds` by composite Simpson on the RK4 grid.
///
/// Each smooth segment between coefficient breakpoints gets an even number of
/// substeps, so the quadrature never straddles a jump.
pub fn observability_gramian(sys: &LtvSystem, t0: f64, t1: f64, settings: &IntegratorSettings) -> Result<DMatrix<f64>> {
    if !(t1 > t0) {
        return Err(Error::Argument(format!("Gramian window needs t1 > t0, got [{t0}, {t1}]")));
    }
    let (start, end) = (sys.domain_start(), sys.domain_end());
    for t in [t0, t1] {
        if !sys.a().in_domain(t) || !sys.c().in_domain(t) {
            return Err(Error::Domain { t, start, end });
        }
    }
    settings.validate()?;
    let n = sys.n();
    let (a, c) = (sys.a(), sys.c());
    let h = settings.step_for(sys.bound_a().max(sys.bound_c()));
    let rhs = |t: f64, x: &DMatrix<f64>| a.value_at(t) * x;
    let integrand = |t: f64, phi: &DMatrix<f64>| {
        let cphi = c.value_at(t) * phi;
        cphi.transpose() * cphi
    };

    let mut phi = DMatrix::<f64>::identity(n, n);
    let mut total = DMatrix::<f64>::zeros(n, n);
    for seg in segments(t0, t1, &sys.breakpoints_in(t0, t1)) {
        let count = steps_in(seg.0, seg.1, h).next_multiple_of(2);
        let step = (seg.1 - seg.0) / count as f64;
        let mut acc = integrand(inside(seg.0, seg), &phi);
        for i in 0..count {
            let t = seg.0 + step * i as f64;
            phi = rk4_step(&rhs, t, &phi, step, seg);
            let t_next = if i + 1 == count { seg.1 } else { t + step };
            let weight = if i + 1 == count {
                1.0
            } else if i % 2 == 0 {
                4.0
            } else {
                2.0
            };
            acc += integrand(inside(t_next, seg), &phi) * weight;
        }
        if !phi.iter().all(|v| v.is_finite()) {
            return Err(Error::Overflow { time: seg.1 });
        }
        total += acc * (step / 3.0);
    }
    Ok(symmetrize(&total))
}

#[derive(Debug, Clone, Serialize)]
pub struct GramianReport {
    pub sigma: f64,
    pub starts: Vec<f64>,
    #[serde(skip)]
    pub gramians: Vec<DMatrix<f64>>,
    pub lambda_min: Vec<f64>,
    pub lambda_max: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub threshold: f64,
    pub uco: bool,
}

impl GramianReport {
    /// Start index attaining `beta1`.
    pub fn weakest_start(&self) -> usize {
        self.lambda_min
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(i, _)| i)
    }

    /// Per-start Gramians as nested row arrays, for reports.
    pub fn gramian_rows(&self) -> Vec<Vec<Vec<f64>>> {
        self.gramians.iter().map(to_rows).collect()
    }
}

/// `1e-6 σ (boundC)²`.
pub fn default_threshold(sigma: f64, bound_c: f64) -> f64 {
    1e-6 * sigma * bound_c * bound_c
}

/// `count` starts evenly spread over `[start, horizon - σ]`.
pub fn default_starts(start: f64, horizon: f64, sigma: f64, count: usize) -> Result<Vec<f64>> {
    if !(horizon - sigma >= start) {
        return Err(Error::Argument(format!("window {sigma} does not fit in [{start}, {horizon}]")));
    }
    Ok(linspace(start, horizon - sigma, count.max(1)))
}

/// Uniform complete observability over the sampled starts: `β1 ≥ threshold`.
///
/// `threshold` defaults to [`default_threshold`].
pub fn check_uco(
    sys: &LtvSystem,
    sigma: f64,
    starts: &[f64],
    threshold: Option<f64>,
    settings: &IntegratorSettings,
) -> Result<GramianReport> {
    if starts.is_empty() {
        return Err(Error::Argument("no window starts given".into()));
    }
    if !(sigma > 0.0) {
        return Err(Error::Argument(format!("window length must be positive, got {sigma}")));
    }
    let threshold = threshold.unwrap_or_else(|| default_threshold(sigma, sys.bound_c()));
    let mut gramians = Vec::with_capacity(starts.len());
    let mut lambda_min = Vec::with_capacity(starts.len());
    let mut lambda_max = Vec::with_capacity(starts.len());
    for &t0 in starts {
        let m = observability_gramian(sys, t0, t0 + sigma, settings)?;
        let ev = symmetric_eigenvalues(&m);
        lambda_min.push(ev[0].max(0.0));
        lambda_max.push(ev[ev.len() - 1].max(0.0));
        gramians.push(m);
    }
    let beta1 = lambda_min.iter().copied().fold(f64::INFINITY, f64::min);
    let beta2 = lambda_max.iter().copied().fold(0.0, f64::max);
    Ok(GramianReport {
        sigma,
        starts: starts.to_vec(),
        gramians,
        lambda_min,
        lambda_max,
        beta1,
        beta2,
        threshold,
        uco: beta1 > 0.0 && beta1 >= threshold,
    })
}

/// Tries each window length in ascending order and stops at the first passing one.
/// Returns every report computed; the last is the passing one when any passed.
pub fn smallest_passing_sigma<F>(
    sys: &LtvSystem,
    sigmas: &[f64],
    starts_for: F,
    threshold: Option<f64>,
    settings: &IntegratorSettings,
) -> Result<(Option<f64>, Vec<GramianReport>)>
where
    F: Fn(f64) -> Result<Vec<f64>>,
{
    if sigmas.is_empty() {
        return Err(Error::Argument("no window lengths given".into()));
    }
    let mut sorted = sigmas.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut reports = Vec::new();
    for sigma in sorted {
        let report = check_uco(sys, sigma, &starts_for(sigma)?, threshold, settings)?;
        let pass = report.uco;
        reports.push(report);
        if pass {
            return Ok((Some(sigma), reports));
        }
    }
    Ok((None, reports))
}

/// UCO reports for `(A, C)` and `(A - L C, C)` with the same threshold.
pub fn check_injection_invariance(
    sys: &LtvSystem,
    l: &CoefficientFunction,
    sigma: f64,
    starts: &[f64],
    threshold: Option<f64>,
    settings: &IntegratorSettings,
) -> Result<(GramianReport, GramianReport)> {
    if l.shape() != (sys.n(), sys.p()) {
        return Err(Error::Dimension(format!(
            "injection gain must be {}x{}, got {}x{}",
            sys.n(),
            sys.p(),
            l.rows(),
            l.cols()
        )));
    }
    let threshold = threshold.unwrap_or_else(|| default_threshold(sigma, sys.bound_c()));
    let closed = LtvSystem::new(sys.a().minus_product(l, sys.c())?, sys.c().clone())?;
    let open = check_uco(sys, sigma, starts, Some(threshold), settings)?;
    let injected = check_uco(&closed, sigma, starts, Some(threshold), settings)?;
    Ok((open, injected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(a: f64, c: f64) -> LtvSystem {
        LtvSystem::new(CoefficientFunction::scalar(a), CoefficientFunction::scalar(c)).unwrap()
    }

    #[test]
    fn constant_integrand() {
        let m = observability_gramian(&scalar(0.0, 1.0), 2.0, 5.0, &IntegratorSettings::default()).unwrap();
        assert_relative_eq!(m[(0, 0)], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn scalar_decay() {
        let m = observability_gramian(&scalar(-1.0, 1.0), 0.0, 1.0, &IntegratorSettings::default()).unwrap();
        assert_relative_eq!(m[(0, 0)], (1.0 - (-2.0_f64).exp()) / 2.0, epsilon = 1e-10);
    }

    #[test]
    fn threshold_and_starts() {
        assert_relative_eq!(default_threshold(2.0, 3.0), 1.8e-5, epsilon = 1e-18);
        let s = default_starts(0.0, 10.0, 2.0, 5).unwrap();
        assert_eq!(s, vec![0.0, 2.0, 4.0, 6.0, 8.0]);
        assert!(default_starts(0.0, 1.0, 2.0, 5).is_err());
    }

    #[test]
    fn empty_starts_rejected() {
        let err = check_uco(&scalar(1.0, 1.0), 1.0, &[], None, &IntegratorSettings::default()).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn injection_gain_shape_checked() {
        let bad = CoefficientFunction::zeros(2, 1);
        let err = check_injection_invariance(&scalar(1.0, 1.0), &bad, 1.0, &[0.0], None, &IntegratorSettings::default());
        assert!(matches!(err, Err(Error::Dimension(_))));
    }
}
