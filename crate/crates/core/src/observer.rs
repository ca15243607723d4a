//! Observer gains from the filter Riccati equation and empirical decay of the
//! estimation error `e' = (A - L C) e`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::dichotomy::{bound_residual, fit_decay, ALPHA_STEP};
use crate::error::{Error, Result};
use crate::linalg::{guarded_inverse, spectral_norm, symmetric_eigenvalues, symmetrize};
use crate::propagate::{default_spacing, rk4_step, segments, steps_in, IntegratorSettings, TransitionCache};
use crate::system::{linspace, CoefficientFunction, LtvSystem};

/// Largest eigenvalue of `P` treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

/// Weights of the filter Riccati equation; identities when `None`.
#[derive(Debug, Clone, Default)]
pub struct RiccatiWeights {
    pub process: Option<DMatrix<f64>>,
    pub measurement: Option<DMatrix<f64>>,
    pub initial: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RiccatiSolution {
    #[serde(skip)]
    pub times: Vec<f64>,
    #[serde(skip)]
    pub p: Vec<DMatrix<f64>>,
    #[serde(serialize_with = "crate::linalg::serialize_rows")]
    pub q_w: DMatrix<f64>,
    #[serde(serialize_with = "crate::linalg::serialize_rows")]
    pub r_v: DMatrix<f64>,
    pub burn_in: f64,
    /// Extreme eigenvalues of `P(t)` for `t ≥ burn_in`.
    pub lambda_inf: f64,
    pub lambda_sup: f64,
    #[serde(skip)]
    c1: CoefficientFunction,
    #[serde(skip)]
    r_inv: DMatrix<f64>,
}

impl RiccatiSolution {
    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// `P(t)` interpolated between steps.
    pub fn p_function(&self) -> Result<CoefficientFunction> {
        CoefficientFunction::sampled_at(self.times.clone(), self.p.clone())
    }

    /// `L1(t) = P(t) C1ᵀ(t) R⁻¹`.
    pub fn gain(&self) -> Result<CoefficientFunction> {
        let p = self.p_function()?;
        let c1 = self.c1.clone();
        let r_inv = self.r_inv.clone();
        let sup_p = self.p.iter().map(spectral_norm).fold(0.0, f64::max);
        let bound = sup_p * c1.bound() * spectral_norm(&r_inv);
        Ok(CoefficientFunction::derived(
            p.rows(),
            c1.rows(),
            bound,
            vec![p.clone(), c1.clone()],
            move |t| p.value_at(t) * c1.value_at(t).transpose() * &r_inv,
        ))
    }

    /// `P(t)` at the last step at or before `t`.
    pub fn p_at(&self, t: f64) -> &DMatrix<f64> {
        let idx = self.times.partition_point(|&s| s <= t).saturating_sub(1);
        &self.p[idx]
    }
}

fn require_spd(m: &DMatrix<f64>, size: usize, what: &str) -> Result<()> {
    if m.shape() != (size, size) {
        return Err(Error::Dimension(format!("{what} must be {size}x{size}")));
    }
    if spectral_norm(&(m - m.transpose())) > 1e-12 * spectral_norm(m).max(1.0) {
        return Err(Error::Argument(format!("{what} must be symmetric")));
    }
    if size > 0 && !(symmetric_eigenvalues(m)[0] > 0.0) {
        return Err(Error::Argument(format!("{what} must be positive definite")));
    }
    Ok(())
}

/// Integrates `P' = B P + P Bᵀ - P Cᵀ R⁻¹ C P + Q` forward from `P0` over `[start, horizon]`.
pub fn solve_filter_riccati(
    b: &CoefficientFunction,
    c: &CoefficientFunction,
    weights: &RiccatiWeights,
    horizon: f64,
    settings: &IntegratorSettings,
) -> Result<RiccatiSolution> {
    let n = b.rows();
    if b.cols() != n || c.cols() != n {
        return Err(Error::Dimension(format!(
            "Riccati needs square B and C with {n} columns, got {}x{} and {}x{}",
            b.rows(),
            b.cols(),
            c.rows(),
            c.cols()
        )));
    }
    let p_out = c.rows();
    let q_w = weights.process.clone().unwrap_or_else(|| DMatrix::identity(n, n));
    let r_v = weights.measurement.clone().unwrap_or_else(|| DMatrix::identity(p_out, p_out));
    let p0 = weights.initial.clone().unwrap_or_else(|| DMatrix::identity(n, n));
    require_spd(&q_w, n, "process weight")?;
    require_spd(&r_v, p_out, "measurement weight")?;
    require_spd(&p0, n, "initial covariance")?;
    settings.validate()?;
    let start = b.domain().0.max(c.domain().0);
    for t in [start, horizon] {
        if !b.in_domain(t) || !c.in_domain(t) {
            return Err(Error::Domain {
                t,
                start,
                end: b.domain().1.min(c.domain().1),
            });
        }
    }
    if !(horizon > start) {
        return Err(Error::Argument(format!("Riccati horizon {horizon} must exceed the start {start}")));
    }
    let r_inv = guarded_inverse(&r_v, settings.cond_cap, "measurement weight")?;
    let rhs = |t: f64, p: &DMatrix<f64>| {
        let bt = b.value_at(t);
        let ct = c.value_at(t);
        let pct = p * ct.transpose();
        &bt * p + p * bt.transpose() - &pct * &r_inv * pct.transpose() + &q_w
    };
    let bc = c.bound();
    let h = settings.step_for(b.bound().max(bc * bc * spectral_norm(&r_inv)).max(1.0));
    let mut times = vec![start];
    let mut ps = vec![p0.clone()];
    let mut p = p0;
    let mut breaks = b.breakpoints_in(start, horizon);
    breaks.extend(c.breakpoints_in(start, horizon));
    for seg in segments(start, horizon, &breaks) {
        let count = steps_in(seg.0, seg.1, h);
        let step = (seg.1 - seg.0) / count as f64;
        for i in 0..count {
            let t = seg.0 + step * i as f64;
            p = symmetrize(&rk4_step(&rhs, t, &p, step, seg));
            let t_end = if i + 1 == count { seg.1 } else { t + step };
            let ev = symmetric_eigenvalues(&p);
            let top = if n == 0 { 0.0 } else { ev[n - 1] };
            if !(top <= DIVERGENCE_LIMIT) {
                return Err(Error::Divergence {
                    time: t_end,
                    lambda_max: top,
                });
            }
            times.push(t_end);
            ps.push(p.clone());
        }
    }
    let burn_in = start + (10.0_f64).min((horizon - start) / 4.0);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for (t, p) in times.iter().zip(&ps) {
        if *t >= burn_in && n > 0 {
            let ev = symmetric_eigenvalues(p);
            lo = lo.min(ev[0]);
            hi = hi.max(ev[n - 1]);
        }
    }
    Ok(RiccatiSolution {
        times,
        p: ps,
        q_w,
        r_v,
        burn_in,
        lambda_inf: lo,
        lambda_sup: hi,
        c1: c.clone(),
        r_inv,
    })
}

/// `L = [L1; 0]`: the Riccati gain on the leading `lead` states, zero on the remaining `n - lead`.
pub fn synthesize_gain(n: usize, ric: &RiccatiSolution) -> Result<CoefficientFunction> {
    let l1 = ric.gain()?;
    let (lead, p) = l1.shape();
    if lead > n {
        return Err(Error::Dimension(format!("gain has {lead} rows but the state dimension is {n}")));
    }
    if lead == n {
        return Ok(l1);
    }
    let src = l1.clone();
    Ok(CoefficientFunction::derived(n, p, l1.bound(), vec![l1], move |t| {
        let mut out = DMatrix::zeros(n, p);
        out.view_mut((0, 0), (lead, p)).copy_from(&src.value_at(t));
        out
    }))
}

/// Pairs `(t0, t0 + lag)` sampled for the decay fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayGrid {
    pub starts: Vec<f64>,
    pub lags: Vec<f64>,
}

impl DecayGrid {
    /// `count` starts evenly spaced over `[from, to - max lag]`.
    pub fn new(from: f64, to: f64, count: usize, lags: Vec<f64>) -> Result<Self> {
        if count == 0 || lags.is_empty() || lags.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::Argument("decay grid needs starts and positive lags".into()));
        }
        let max_lag = lags.iter().copied().fold(0.0, f64::max);
        if !(to - max_lag >= from) {
            return Err(Error::Argument(format!(
                "decay window [{from}, {to}] too short for lags up to {max_lag}"
            )));
        }
        Ok(DecayGrid {
            starts: linspace(from, to - max_lag, count),
            lags,
        })
    }

    /// 20 starts with the default lags.
    pub fn default_for(from: f64, to: f64) -> Result<Self> {
        Self::new(from, to, 20, crate::dichotomy::DEFAULT_LAGS.to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecaySample {
    pub t0: f64,
    pub t: f64,
    pub norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayCertificate {
    #[serde(rename = "K_e")]
    pub k_e: f64,
    pub mu: f64,
    pub residual: f64,
    pub tolerance: f64,
    /// `sup ‖L(t)‖` over the sampled span.
    pub gain_bound: f64,
    pub valid: bool,
    /// Pair limiting the rate.
    pub worst: Option<DecaySample>,
    pub grid: DecayGrid,
    /// Lags below this were left out of the fit.
    pub burn_in_lag: f64,
    #[serde(skip)]
    pub samples: Vec<DecaySample>,
}

/// Fits `‖Φ_e(t, t0)‖ ≤ K_e e^{-μ (t - t0)}` for `e' = (A - L C) e` on the grid.
///
/// A non-decaying error is reported through `valid = false`, not as an error.
pub fn certify_error_decay(
    sys: &LtvSystem,
    l: &CoefficientFunction,
    grid: &DecayGrid,
    tol: f64,
    settings: &IntegratorSettings,
) -> Result<DecayCertificate> {
    if l.shape() != (sys.n(), sys.p()) {
        return Err(Error::Dimension(format!(
            "gain must be {}x{}, got {}x{}",
            sys.n(),
            sys.p(),
            l.rows(),
            l.cols()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Argument(format!("tolerance must be positive, got {tol}")));
    }
    let error_a = sys.a().minus_product(l, sys.c())?;
    let max_lag = grid.lags.iter().copied().fold(0.0, f64::max);
    let first = grid.starts.iter().copied().fold(f64::INFINITY, f64::min);
    let last = grid.starts.iter().copied().fold(f64::NEG_INFINITY, f64::max) + max_lag;
    let cache = TransitionCache::build(&error_a, first, last, default_spacing(error_a.bound()), settings)?;
    let burn_in_lag = if sys.bound_a() > 0.0 { 1.0 / sys.bound_a() } else { 0.0 };
    let mut samples = Vec::new();
    for &t0 in &grid.starts {
        samples.push(DecaySample { t0, t: t0, norm: 1.0 });
        for &lag in &grid.lags {
            let phi = cache.transition(t0 + lag, t0)?;
            samples.push(DecaySample {
                t0,
                t: t0 + lag,
                norm: spectral_norm(&phi),
            });
        }
    }
    let fitted: Vec<&DecaySample> = samples.iter().filter(|s| s.t == s.t0 || s.t - s.t0 >= burn_in_lag).collect();
    let pairs: Vec<(f64, f64)> = fitted.iter().map(|s| (s.t - s.t0, s.norm)).collect();
    let fit = fit_decay(&pairs, tol);
    let valid_rate = fit.alpha >= ALPHA_STEP;
    let mu = if valid_rate { fit.alpha } else { fit.raw_alpha.min(fit.alpha) };
    let k_e = if valid_rate {
        fit.k
    } else {
        pairs.iter().map(|p| p.1).fold(1.0, f64::max)
    };
    let (residual, _) = bound_residual(&pairs, k_e, mu.max(0.0));
    let gain_bound = linspace(first, last, 400)
        .iter()
        .map(|&t| spectral_norm(&l.value_at(t)))
        .fold(0.0, f64::max);
    let residual = residual.max(0.0);
    Ok(DecayCertificate {
        k_e,
        mu,
        residual,
        tolerance: tol,
        gain_bound,
        valid: valid_rate && residual <= tol,
        worst: fitted.get(fit.binding).map(|s| **s),
        grid: grid.clone(),
        burn_in_lag,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn stationary_scalar_riccati() {
        let one = CoefficientFunction::scalar(1.0);
        let ric = solve_filter_riccati(&one, &one, &RiccatiWeights::default(), 10.0, &IntegratorSettings::default()).unwrap();
        assert_relative_eq!(ric.p_at(10.0)[(0, 0)], 1.0 + 2.0_f64.sqrt(), epsilon = 1e-4);
    }

    #[test]
    fn unmeasured_unstable_state_diverges() {
        let b = CoefficientFunction::scalar(1.0);
        let c = CoefficientFunction::scalar(0.0);
        let err = solve_filter_riccati(&b, &c, &RiccatiWeights::default(), 20.0, &IntegratorSettings::default()).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn weights_must_be_positive_definite() {
        let one = CoefficientFunction::scalar(1.0);
        let weights = RiccatiWeights {
            measurement: Some(DMatrix::from_element(1, 1, 0.0)),
            ..Default::default()
        };
        assert!(solve_filter_riccati(&one, &one, &weights, 1.0, &IntegratorSettings::default()).is_err());
    }

    #[test]
    fn structured_gain_pads_with_zeros() {
        let one = CoefficientFunction::scalar(1.0);
        let ric = solve_filter_riccati(&one, &one, &RiccatiWeights::default(), 5.0, &IntegratorSettings::default()).unwrap();
        let l = synthesize_gain(3, &ric).unwrap();
        assert_eq!(l.shape(), (3, 1));
        let v = l.value_at(5.0);
        assert!(v[(0, 0)] > 2.0 && v[(1, 0)] == 0.0 && v[(2, 0)] == 0.0);
        assert_eq!(synthesize_gain(1, &ric).unwrap().shape(), (1, 1));
    }
}
