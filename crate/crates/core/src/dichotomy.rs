//! Exponential dichotomy: exponent estimates from the QR flow and numerical
//! certification of the dichotomy bounds on a finite grid of `(t, t0)` pairs.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{condition_number, orthonormal_basis, spectral_norm};
use crate::propagate::{IntegratorSettings, TransitionCache};
use crate::qrflow::QrFlowResult;
use crate::system::{linspace, BlockPartition, LtvSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Growth {
    Stable,
    Unstable,
    Marginal,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExponentEstimate {
    pub window: f64,
    pub gap: f64,
    pub starts: Vec<f64>,
    /// `averages[i][j]`: window average of state `i` starting at `starts[j]`.
    pub averages: Vec<Vec<f64>>,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    pub classes: Vec<Growth>,
    /// Number of stable states, when they are exactly the trailing coordinates.
    pub proposed_k: Option<usize>,
}

impl ExponentEstimate {
    pub fn ordered(&self) -> bool {
        self.proposed_k.is_some()
    }
}

/// Default gap: a twentieth of the coefficient bound.
pub fn default_gap(bound_a: f64) -> f64 {
    0.05 * bound_a
}

/// Window averages `(ν_i(t0 + H) - ν_i(t0)) / H` over all admissible starts.
pub fn estimate_exponents(flow: &QrFlowResult, window: f64, gap: f64) -> Result<ExponentEstimate> {
    let est = exponent_table(flow, window, gap)?;
    if let Some(i) = est.classes.iter().position(|&c| c == Growth::Marginal) {
        return Err(Error::NoGap {
            state: i,
            low: est.low[i],
            high: est.high[i],
            gap,
        });
    }
    Ok(est)
}

/// Like [`estimate_exponents`] but reports marginal states instead of failing.
pub fn exponent_table(flow: &QrFlowResult, window: f64, gap: f64) -> Result<ExponentEstimate> {
    if !(window > 0.0) || !(gap >= 0.0) {
        return Err(Error::Argument(format!("window {window} and gap {gap} must be positive")));
    }
    let (t_start, t_end) = (flow.start(), flow.horizon());
    if t_end - t_start < 2.0 * window * (1.0 - 1e-12) {
        return Err(Error::Argument(format!(
            "flow horizon {} is shorter than twice the window {window}",
            t_end - t_start
        )));
    }
    let n = flow.dim();
    let count = (((t_end - window - t_start) / (window / 20.0)).round() as usize).max(1) + 1;
    let starts = linspace(t_start, t_end - window, count);
    let mut averages = vec![Vec::with_capacity(count); n];
    for &t0 in &starts {
        let d = (flow.nu_at(t0 + window) - flow.nu_at(t0)) / window;
        for i in 0..n {
            averages[i].push(d[i]);
        }
    }
    let low: Vec<f64> = averages.iter().map(|v| v.iter().copied().fold(f64::INFINITY, f64::min)).collect();
    let high: Vec<f64> = averages
        .iter()
        .map(|v| v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let classes: Vec<Growth> = (0..n)
        .map(|i| {
            if high[i] < -gap {
                Growth::Stable
            } else if low[i] > gap {
                Growth::Unstable
            } else {
                Growth::Marginal
            }
        })
        .collect();
    let k = classes.iter().filter(|&&c| c == Growth::Stable).count();
    let trailing = classes[n - k..].iter().all(|&c| c == Growth::Stable);
    let proposed_k = (trailing && !classes.contains(&Growth::Marginal)).then_some(k);
    Ok(ExponentEstimate {
        window,
        gap,
        starts,
        averages,
        low,
        high,
        classes,
        proposed_k,
    })
}

/// Sampled `(t0, t0 ± lag)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertGrid {
    pub starts: Vec<f64>,
    pub lags: Vec<f64>,
    /// End of the transition cache; the stable subspace is resolved backwards from here.
    pub horizon: f64,
}

pub const DEFAULT_LAGS: [f64; 5] = [0.5, 1.0, 2.0, 5.0, 10.0];
pub const DEFAULT_HORIZON: f64 = 60.0;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;
/// Slack kept between the last stable pair and the horizon.
const BACKWARD_MARGIN: f64 = 10.0;

impl CertGrid {
    /// 20 starts and the default lags over `[0, horizon]`.
    pub fn default_for(horizon: f64) -> Result<Self> {
        Self::new(horizon, 20, DEFAULT_LAGS.to_vec())
    }

    /// `count` starts evenly spaced in the admissible range.
    pub fn new(horizon: f64, count: usize, lags: Vec<f64>) -> Result<Self> {
        if count == 0 || lags.is_empty() || lags.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::Argument("certification grid needs starts and positive lags".into()));
        }
        let max_lag = lags.iter().copied().fold(0.0, f64::max);
        let (lo, hi) = (max_lag, horizon - max_lag - BACKWARD_MARGIN);
        if !(hi >= lo) {
            return Err(Error::Argument(format!(
                "horizon {horizon} too short for lags up to {max_lag}; need at least {}",
                2.0 * max_lag + BACKWARD_MARGIN
            )));
        }
        let starts = if count == 1 { vec![lo] } else { linspace(lo, hi, count) };
        Ok(CertGrid { starts, lags, horizon })
    }

    /// Twice as many starts, and lag midpoints added.
    pub fn refined(&self) -> Self {
        let mut starts = Vec::with_capacity(2 * self.starts.len());
        for w in self.starts.windows(2) {
            starts.push(w[0]);
            starts.push(0.5 * (w[0] + w[1]));
        }
        starts.extend(self.starts.last());
        let mut lags = self.lags.clone();
        lags.sort_by(f64::total_cmp);
        let mut refined = vec![lags[0]];
        for w in lags.windows(2) {
            refined.push(0.5 * (w[0] + w[1]));
            refined.push(w[1]);
        }
        CertGrid {
            starts,
            lags: refined,
            horizon: self.horizon,
        }
    }
}

/// One bound sample `‖Φ(t, t0) Π‖` (stable) or `‖Φ(t, t0)(I - Π)‖` (unstable).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairSample {
    pub t0: f64,
    pub t: f64,
    pub stable: bool,
    pub norm: f64,
}

impl PairSample {
    pub fn lag(&self) -> f64 {
        (self.t - self.t0).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WorstPair {
    pub t0: f64,
    pub t: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DichotomyCertificate {
    pub k: usize,
    /// Normal form `diag(0, I_k)`.
    #[serde(serialize_with = "crate::linalg::serialize_rows")]
    pub p: DMatrix<f64>,
    #[serde(rename = "K")]
    pub k_const: f64,
    pub alpha: f64,
    pub stable_residual: f64,
    pub unstable_residual: f64,
    pub tolerance: f64,
    pub worst: Option<WorstPair>,
    pub grid: CertGrid,
    /// Condition number of `[U | S]`, the basis splitting unstable and stable subspaces.
    pub splitting_condition: f64,
    #[serde(skip)]
    pub samples: Vec<PairSample>,
}

impl DichotomyCertificate {
    pub fn is_valid(&self) -> bool {
        self.alpha > 0.0 && self.k_const >= 1.0 && self.stable_residual <= self.tolerance && self.unstable_residual <= self.tolerance
    }
}

/// Result of fitting `m ≤ K e^{-α τ}` to sampled `(τ, m)` pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct DecayFit {
    pub k: f64,
    pub alpha: f64,
    /// Largest admissible rate before snapping to the grid.
    pub raw_alpha: f64,
    /// Index of the sample that limited the rate.
    pub binding: usize,
}

/// Rate resolution of the fit.
pub(crate) const ALPHA_STEP: f64 = 1e-3;

/// Picks the rate (on a `1e-3` grid) at which the norms fall from their peak:
/// with `m*` the largest sample and `τ*` the longest lag within `(1 + tol)` of it,
/// every later sample must satisfy `m ≤ m* (1 + tol) e^{-α (τ - τ*)}`. `K` is then
/// the largest intercept. `samples` are `(τ, m)` with `τ ≥ 0`.
pub(crate) fn fit_decay(samples: &[(f64, f64)], tol: f64) -> DecayFit {
    let peak = samples.iter().map(|s| s.1).fold(0.0, f64::max);
    let tau_peak = samples
        .iter()
        .filter(|s| s.1 * (1.0 + tol) >= peak)
        .map(|s| s.0)
        .fold(0.0, f64::max);
    let mut raw_alpha = f64::INFINITY;
    let mut binding = 0;
    for (i, &(tau, m)) in samples.iter().enumerate() {
        if tau <= tau_peak {
            continue;
        }
        let rate = if m <= f64::MIN_POSITIVE {
            f64::INFINITY
        } else {
            (peak * (1.0 + tol) / m).ln() / (tau - tau_peak)
        };
        if rate < raw_alpha {
            raw_alpha = rate;
            binding = i;
        }
    }
    if peak <= f64::MIN_POSITIVE {
        // nothing constrains the rate (all norms vanish)
        raw_alpha = 1.0 / ALPHA_STEP;
    } else if samples.iter().all(|s| s.0 <= tau_peak) {
        // the norms never fall below their peak
        raw_alpha = 0.0;
    } else if !raw_alpha.is_finite() {
        raw_alpha = 1.0 / ALPHA_STEP;
    }
    let alpha = (raw_alpha / ALPHA_STEP + 1e-9).floor() * ALPHA_STEP;
    let k = samples.iter().map(|&(tau, m)| m * (alpha * tau).exp()).fold(1.0, f64::max);
    DecayFit {
        k,
        alpha,
        raw_alpha,
        binding,
    }
}

/// Largest `m e^{α τ} / K - 1` over the samples, with the index attaining it.
pub(crate) fn bound_residual(samples: &[(f64, f64)], k: f64, alpha: f64) -> (f64, usize) {
    let mut worst = (f64::NEG_INFINITY, 0);
    for (i, &(tau, m)) in samples.iter().enumerate() {
        let r = m * (alpha * tau).exp() / k - 1.0;
        if r > worst.0 {
            worst = (r, i);
        }
    }
    worst
}

/// Unstable and stable subspaces tracked on the cache grid.
struct Splitting {
    cache: TransitionCache,
    /// Orthonormal basis of `Φ(t, t_start) span(e_1..e_{n-k})` at each grid node.
    unstable: Vec<DMatrix<f64>>,
    /// Orthonormal basis of the stable subspace at each grid node.
    stable: Vec<DMatrix<f64>>,
    k: usize,
}

impl Splitting {
    fn new(cache: TransitionCache, k: usize) -> Result<Self> {
        let n = cache.dim();
        let nodes = cache.grid().len();
        let mut unstable = Vec::with_capacity(nodes);
        let mut basis = DMatrix::<f64>::identity(n, n).columns(0, n - k).clone_owned();
        unstable.push(basis.clone());
        for i in 0..nodes - 1 {
            basis = orthonormal_basis(&(cache.factor(i) * &basis));
            unstable.push(basis.clone());
        }
        // start the backward sweep from the orthogonal complement of the unstable subspace
        let mut full = DMatrix::<f64>::identity(n, n);
        full.columns_mut(0, n - k).copy_from(&unstable[nodes - 1]);
        let q = full.qr().q();
        let mut basis = q.columns(n - k, k).clone_owned();
        let mut stable = vec![DMatrix::zeros(n, k); nodes];
        stable[nodes - 1] = basis.clone();
        for i in (0..nodes - 1).rev() {
            basis = orthonormal_basis(&(cache.inverse_factor(i) * &basis));
            stable[i] = basis.clone();
        }
        Ok(Splitting {
            cache,
            unstable,
            stable,
            k,
        })
    }

    /// Projector onto the stable subspace along the unstable one at `t0`.
    fn projector(&self, t0: f64, cap: f64) -> Result<(DMatrix<f64>, f64)> {
        let n = self.cache.dim();
        let k = self.k;
        if k == 0 {
            return Ok((DMatrix::zeros(n, n), 1.0));
        }
        if k == n {
            return Ok((DMatrix::identity(n, n), 1.0));
        }
        let g = self.cache.grid();
        let below = g.partition_point(|&s| s <= t0).saturating_sub(1);
        let above = g.partition_point(|&s| s < t0).min(g.len() - 1);
        let u = orthonormal_basis(&(self.cache.transition(t0, g[below])? * &self.unstable[below]));
        let s = orthonormal_basis(&(self.cache.transition(t0, g[above])? * &self.stable[above]));
        let mut m = DMatrix::zeros(n, n);
        m.columns_mut(0, n - k).copy_from(&u);
        m.columns_mut(n - k, k).copy_from(&s);
        let cond = condition_number(&m);
        let inv = match m.clone().try_inverse() {
            Some(inv) if cond <= cap => inv,
            _ => {
                return Err(Error::Certification {
                    k,
                    reason: format!("stable and unstable subspaces nearly coincide (condition {cond:e})"),
                    t0,
                    t: t0,
                })
            }
        };
        let normal = BlockPartition::new(n, k)?.projector();
        Ok((&m * normal * inv, cond))
    }
}

/// Certifies an exponential dichotomy of rank `k` on `grid`.
///
/// The stable subspace is found by backward iteration from the grid horizon and
/// the unstable one by forward iteration of `span(e_1..e_{n-k})`, so the
/// projector need not be axis aligned.
pub fn certify_dichotomy(
    sys: &LtvSystem,
    k: usize,
    grid: &CertGrid,
    tol: f64,
    settings: &IntegratorSettings,
) -> Result<DichotomyCertificate> {
    let n = sys.n();
    BlockPartition::new(n, k)?;
    if !(tol > 0.0) {
        return Err(Error::Argument(format!("tolerance must be positive, got {tol}")));
    }
    let start = sys.domain_start();
    let cache = TransitionCache::for_system(sys, start, grid.horizon, settings)?;
    let splitting = Splitting::new(cache, k)?;
    let cert = evaluate(&splitting, grid, tol, settings.cond_cap, None)?;
    if !cert.is_valid() {
        let w = cert.worst.unwrap_or(WorstPair {
            t0: grid.starts[0],
            t: grid.starts[0],
            residual: f64::NAN,
        });
        return Err(Error::Certification {
            k,
            reason: format!(
                "no positive rate fits the sampled bounds (largest admissible rate {:.4})",
                cert.alpha
            ),
            t0: w.t0,
            t: w.t,
        });
    }
    Ok(cert)
}

/// Re-evaluates the bounds of `cert` (same `K`, `α`) on another grid, returning
/// `(stable_residual, unstable_residual)`.
pub fn recheck_dichotomy(
    sys: &LtvSystem,
    cert: &DichotomyCertificate,
    grid: &CertGrid,
    settings: &IntegratorSettings,
) -> Result<(f64, f64)> {
    let cache = TransitionCache::for_system(sys, sys.domain_start(), grid.horizon, settings)?;
    let splitting = Splitting::new(cache, cert.k)?;
    let out = evaluate(
        &splitting,
        grid,
        cert.tolerance,
        settings.cond_cap,
        Some((cert.k_const, cert.alpha)),
    )?;
    Ok((out.stable_residual, out.unstable_residual))
}

fn evaluate(splitting: &Splitting, grid: &CertGrid, tol: f64, cap: f64, fixed: Option<(f64, f64)>) -> Result<DichotomyCertificate> {
    let cache = &splitting.cache;
    let n = cache.dim();
    let k = splitting.k;
    let mut samples = Vec::new();
    let mut worst_condition = 1.0_f64;
    for &t0 in &grid.starts {
        let (pi, cond) = splitting.projector(t0, cap)?;
        worst_condition = worst_condition.max(cond);
        let complement = DMatrix::identity(n, n) - &pi;
        if k > 0 {
            samples.push(PairSample {
                t0,
                t: t0,
                stable: true,
                norm: spectral_norm(&pi),
            });
        }
        if k < n {
            samples.push(PairSample {
                t0,
                t: t0,
                stable: false,
                norm: spectral_norm(&complement),
            });
        }
        for &lag in &grid.lags {
            if k > 0 {
                let phi = cache.transition(t0 + lag, t0)?;
                samples.push(PairSample {
                    t0,
                    t: t0 + lag,
                    stable: true,
                    norm: spectral_norm(&(phi * &pi)),
                });
            }
            if k < n {
                let phi = cache.transition(t0 - lag, t0)?;
                samples.push(PairSample {
                    t0,
                    t: t0 - lag,
                    stable: false,
                    norm: spectral_norm(&(phi * &complement)),
                });
            }
        }
    }
    let all: Vec<(f64, f64)> = samples.iter().map(|s| (s.lag(), s.norm)).collect();
    let (k_const, alpha, binding) = match fixed {
        Some((kc, a)) => (kc, a, None),
        None => {
            let fit = fit_decay(&all, tol);
            let b = Some(samples[fit.binding]);
            if fit.alpha < ALPHA_STEP {
                (fit.k, fit.raw_alpha.min(0.0), b)
            } else {
                (fit.k, fit.alpha, b)
            }
        }
    };
    let side = |stable: bool| -> (f64, Option<WorstPair>) {
        let picked: Vec<&PairSample> = samples.iter().filter(|s| s.stable == stable).collect();
        if picked.is_empty() {
            return (0.0, None);
        }
        let pairs: Vec<(f64, f64)> = picked.iter().map(|s| (s.lag(), s.norm)).collect();
        let (r, i) = bound_residual(&pairs, k_const, alpha.max(0.0));
        (
            r,
            Some(WorstPair {
                t0: picked[i].t0,
                t: picked[i].t,
                residual: r,
            }),
        )
    };
    let (stable_residual, ws) = side(true);
    let (unstable_residual, wu) = side(false);
    let worst = match binding {
        Some(b) if alpha <= 0.0 => Some(WorstPair {
            t0: b.t0,
            t: b.t,
            residual: f64::INFINITY,
        }),
        _ => match (ws, wu) {
            (Some(a), Some(b)) => Some(if a.residual >= b.residual { a } else { b }),
            (a, b) => a.or(b),
        },
    };
    Ok(DichotomyCertificate {
        k,
        p: BlockPartition::new(n, k)?.projector(),
        k_const,
        alpha,
        stable_residual: stable_residual.max(0.0),
        unstable_residual: unstable_residual.max(0.0),
        tolerance: tol,
        worst,
        grid: grid.clone(),
        splitting_condition: worst_condition,
        samples,
    })
}
