//! Block-diagonal reduction `x = S(t) z` of a system with an exponential dichotomy.
//!
//! [`coppel_transform`] works from sampled fundamental-solution values;
//! [`triangular_reduction`] builds the transformation directly for block
//! upper-triangular systems with an anti-stable leading and a stable trailing block.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{block, psd_sqrt, spectral_norm, symmetric_eigenvalues};
use crate::propagate::{Integrator, IntegratorSettings};
use crate::system::{upper_block_triangular, BlockPartition, CoefficientFunction, LtvSystem};

/// Largest tolerated off-diagonal block of `D`.
pub const OFFDIAG_TOL: f64 = 1e-6;
/// Largest tolerated change of `S` when the truncation horizon is doubled.
pub const TRUNCATION_TOL: f64 = 1e-6;
/// Grid spacing of [`triangular_reduction`].
pub const GRID_SPACING: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct BlockDiagReduction {
    #[serde(skip)]
    pub times: Vec<f64>,
    #[serde(skip)]
    pub s: Vec<DMatrix<f64>>,
    #[serde(skip)]
    pub sinv: Vec<DMatrix<f64>>,
    /// Block-diagonal coefficient, off-diagonal blocks zeroed.
    #[serde(skip)]
    pub d: Vec<DMatrix<f64>>,
    pub k: usize,
    pub sup_s: f64,
    pub sup_sinv: f64,
    pub sup_sdot: f64,
    /// Largest off-diagonal block norm of `D` before zeroing.
    pub max_offdiag: f64,
    /// Largest `‖S Sinv - I‖`.
    pub max_inverse_defect: f64,
    /// `sup ‖D1 - B11‖` when a leading block was prescribed.
    pub d1_error: Option<f64>,
    /// Change of `S` under doubling of the truncation horizon.
    pub truncation_change: Option<f64>,
    pub truncation_horizon: Option<f64>,
    /// Per-sample off-diagonal norms before zeroing.
    #[serde(skip)]
    pub offdiag: Vec<f64>,
}

impl BlockDiagReduction {
    fn partition(&self) -> BlockPartition {
        BlockPartition::new(self.s[0].nrows(), self.k).expect("valid partition")
    }

    pub fn s_function(&self) -> Result<CoefficientFunction> {
        CoefficientFunction::sampled_at(self.times.clone(), self.s.clone())
    }

    pub fn sinv_function(&self) -> Result<CoefficientFunction> {
        CoefficientFunction::sampled_at(self.times.clone(), self.sinv.clone())
    }

    pub fn d_function(&self) -> Result<CoefficientFunction> {
        CoefficientFunction::sampled_at(self.times.clone(), self.d.clone())
    }

    /// Leading `(n-k) x (n-k)` block of `D`.
    pub fn d1(&self) -> Result<CoefficientFunction> {
        let lead = self.partition().lead();
        self.block_function(0, lead)
    }

    /// Trailing `k x k` block of `D`.
    pub fn d2(&self) -> Result<CoefficientFunction> {
        let part = self.partition();
        self.block_function(part.lead(), part.k())
    }

    fn block_function(&self, at: usize, size: usize) -> Result<CoefficientFunction> {
        if size == 0 {
            return Ok(CoefficientFunction::zeros(0, 0));
        }
        CoefficientFunction::sampled_at(self.times.clone(), self.d.iter().map(|d| block(d, at, at, size, size)).collect())
    }

    /// The reduced system `(D, C S)` on the reduction grid.
    pub fn reduced_system(&self, c: &CoefficientFunction) -> Result<LtvSystem> {
        if c.cols() != self.s[0].nrows() {
            return Err(Error::Dimension("output map does not match the reduction".into()));
        }
        let cs = self.times.iter().zip(&self.s).map(|(&t, s)| c.value_at(t) * s).collect();
        LtvSystem::new(self.d_function()?, CoefficientFunction::sampled_at(self.times.clone(), cs)?)
    }
}

/// Three-point derivative of sampled values, one-sided next to jumps of the coefficient.
fn derivative(times: &[f64], values: &[DMatrix<f64>], jumps: &[f64]) -> Vec<DMatrix<f64>> {
    let len = times.len();
    let jump_between = |lo: f64, hi: f64| jumps.iter().any(|&b| b > lo && b < hi);
    let centered = |i: usize| {
        let (h1, h2) = (times[i] - times[i - 1], times[i + 1] - times[i]);
        &values[i - 1] * (-h2 / (h1 * (h1 + h2))) + &values[i] * ((h2 - h1) / (h1 * h2)) + &values[i + 1] * (h1 / (h2 * (h1 + h2)))
    };
    let forward = |i: usize| {
        let (h1, h2) = (times[i + 1] - times[i], times[i + 2] - times[i + 1]);
        &values[i] * (-(2.0 * h1 + h2) / (h1 * (h1 + h2))) + &values[i + 1] * ((h1 + h2) / (h1 * h2))
            - &values[i + 2] * (h1 / (h2 * (h1 + h2)))
    };
    let backward = |i: usize| {
        let (h1, h2) = (times[i - 1] - times[i - 2], times[i] - times[i - 1]);
        &values[i - 2] * (h2 / (h1 * (h1 + h2))) - &values[i - 1] * ((h1 + h2) / (h1 * h2))
            + &values[i] * ((2.0 * h2 + h1) / (h2 * (h1 + h2)))
    };
    (0..len)
        .map(|i| {
            let has_left = i >= 1;
            let has_right = i + 1 < len;
            if has_left && has_right && !jump_between(times[i - 1], times[i + 1]) {
                centered(i)
            } else if i + 2 < len && !jump_between(times[i], times[i + 2]) {
                forward(i)
            } else if i >= 2 && !jump_between(times[i - 2], times[i]) {
                backward(i)
            } else if has_right {
                (&values[i + 1] - &values[i]) / (times[i + 1] - times[i])
            } else {
                (&values[i] - &values[i - 1]) / (times[i] - times[i - 1])
            }
        })
        .collect()
}

fn offdiag_norm(d: &DMatrix<f64>, part: &BlockPartition) -> f64 {
    let (lead, k) = (part.lead(), part.k());
    if lead == 0 || k == 0 {
        return 0.0;
    }
    spectral_norm(&block(d, 0, lead, lead, k)).max(spectral_norm(&block(d, lead, 0, k, lead)))
}

fn zero_offdiag(d: &mut DMatrix<f64>, part: &BlockPartition) {
    let (lead, k) = (part.lead(), part.k());
    d.view_mut((0, lead), (lead, k)).fill(0.0);
    d.view_mut((lead, 0), (k, lead)).fill(0.0);
}

/// Recovers `D = Sinv (A S - S')` and assembles the reduction record.
fn finish(
    times: Vec<f64>,
    s: Vec<DMatrix<f64>>,
    sinv: Vec<DMatrix<f64>>,
    a: &CoefficientFunction,
    part: &BlockPartition,
) -> Result<BlockDiagReduction> {
    let jumps = a.jumps_in(times[0], times[times.len() - 1]);
    let sdot = derivative(&times, &s, &jumps);
    let n = part.n();
    let mut d = Vec::with_capacity(times.len());
    let mut offdiag = Vec::with_capacity(times.len());
    let (mut sup_s, mut sup_sinv, mut sup_sdot, mut defect) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for (j, &t) in times.iter().enumerate() {
        let mut dj = &sinv[j] * (a.value_at(t) * &s[j] - &sdot[j]);
        let off = offdiag_norm(&dj, part);
        if !(off <= OFFDIAG_TOL) {
            return Err(Error::Reduction {
                time: t,
                what: "off-diagonal block of D".into(),
                value: off,
            });
        }
        zero_offdiag(&mut dj, part);
        offdiag.push(off);
        sup_s = sup_s.max(spectral_norm(&s[j]));
        sup_sinv = sup_sinv.max(spectral_norm(&sinv[j]));
        sup_sdot = sup_sdot.max(spectral_norm(&sdot[j]));
        defect = defect.max(spectral_norm(&(&s[j] * &sinv[j] - DMatrix::identity(n, n))));
        d.push(dj);
    }
    Ok(BlockDiagReduction {
        times,
        s,
        sinv,
        d,
        k: part.k(),
        sup_s,
        sup_sinv,
        sup_sdot,
        max_offdiag: offdiag.iter().copied().fold(0.0, f64::max),
        max_inverse_defect: defect,
        d1_error: None,
        truncation_change: None,
        truncation_horizon: None,
        offdiag,
    })
}

/// `T² = P XᵀX P + (I-P) XᵀX (I-P)`, `S = X T⁻¹`, with `P = diag(0, I_k)`.
///
/// `x` holds fundamental-solution values at `times` (increasing); `a` is the
/// coefficient they solve.
pub fn coppel_transform(times: &[f64], x: &[DMatrix<f64>], k: usize, a: &CoefficientFunction) -> Result<BlockDiagReduction> {
    if times.len() != x.len() || times.len() < 3 {
        return Err(Error::Argument("need at least three samples with matching times".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Argument("sample times must increase".into()));
    }
    let n = a.rows();
    let part = BlockPartition::new(n, k)?;
    let p = part.projector();
    let q = DMatrix::identity(n, n) - &p;
    let mut s = Vec::with_capacity(x.len());
    let mut sinv = Vec::with_capacity(x.len());
    for (&t, xj) in times.iter().zip(x) {
        if xj.shape() != (n, n) {
            return Err(Error::Dimension(format!("fundamental solution must be {n}x{n}")));
        }
        let g = xj.transpose() * xj;
        let t2 = &p * &g * &p + &q * &g * &q;
        for (at, size) in [(0, part.lead()), (part.lead(), k)] {
            if size == 0 {
                continue;
            }
            let ev = symmetric_eigenvalues(&block(&t2, at, at, size, size));
            let (lo, hi) = (ev[0], ev[size - 1]);
            if !(lo >= 1e-12 * hi) || !(hi > 0.0) {
                return Err(Error::Conditioning {
                    condition: hi / lo.max(0.0),
                    cap: 1e12,
                    context: format!("in T(t)² at t = {t}"),
                });
            }
        }
        let tm = psd_sqrt(&t2);
        let tinv = tm.clone().try_inverse().ok_or_else(|| Error::Conditioning {
            condition: f64::INFINITY,
            cap: 1e12,
            context: format!("in T(t) at t = {t}"),
        })?;
        let xinv = xj.clone().try_inverse().ok_or_else(|| Error::Conditioning {
            condition: f64::INFINITY,
            cap: 1e12,
            context: format!("fundamental solution singular at t = {t}"),
        })?;
        s.push(xj * &tinv);
        sinv.push(&tm * xinv);
    }
    finish(times.to_vec(), s, sinv, a, &part)
}

/// `T_trunc = horizon + 10 / α`.
pub fn default_truncation(horizon: f64, alpha: f64) -> f64 {
    horizon + 10.0 / alpha
}

/// Reduction of `[[B11, B12], [0, B22]]` on `[start, horizon]`.
///
/// With `G = X12 X22⁻¹`, which solves `G' = B11 G - G B22 + B12` and vanishes at
/// infinity (truncated to `G(T_trunc) = 0`), and `N = (X22ᵀ (I + GᵀG) X22)^{1/2}`:
/// `S = [[I, G X22 N⁻¹], [0, X22 N⁻¹]]` and `S⁻¹ = [[I, -G], [0, N X22⁻¹]]`.
pub fn triangular_reduction(
    b11: &CoefficientFunction,
    b12: &CoefficientFunction,
    b22: &CoefficientFunction,
    part: &BlockPartition,
    horizon: f64,
    truncation: f64,
    settings: &IntegratorSettings,
) -> Result<BlockDiagReduction> {
    let (lead, k) = (part.lead(), part.k());
    if !part.is_proper() {
        return Err(Error::Argument("triangular reduction needs 0 < k < n".into()));
    }
    if b11.shape() != (lead, lead) || b12.shape() != (lead, k) || b22.shape() != (k, k) {
        return Err(Error::Dimension("blocks do not match the partition".into()));
    }
    let start = b11.domain().0.max(b12.domain().0).max(b22.domain().0);
    if !(horizon > start) || !(truncation >= horizon) {
        return Err(Error::Argument(format!(
            "need start < horizon <= truncation, got {start}, {horizon}, {truncation}"
        )));
    }
    for f in [b11, b12, b22] {
        if !f.in_domain(2.0 * truncation) {
            let (s, e) = f.domain();
            return Err(Error::Domain {
                t: 2.0 * truncation,
                start: s,
                end: e,
            });
        }
    }
    settings.validate()?;
    let count = ((horizon - start) / GRID_SPACING).ceil().max(2.0) as usize;
    let times: Vec<f64> = (0..=count)
        .map(|i| {
            if i == count {
                horizon
            } else {
                start + (horizon - start) * i as f64 / count as f64
            }
        })
        .collect();
    let bound = b11.bound() + b12.bound() + b22.bound();
    let step = settings.step_for(bound).min(GRID_SPACING);
    let integrator = Integrator::rk4(step);

    // X22 forward, rescaled at every node (S is invariant under positive scaling)
    let jumps22 = b22.jumps_in(start, horizon);
    let mut x22 = Vec::with_capacity(times.len());
    let mut current = DMatrix::<f64>::identity(k, k);
    x22.push(current.clone());
    for w in times.windows(2) {
        current = integrator.integrate(|t, x| b22.value_at(t) * x, &current, w[0], w[1], &jumps22)?;
        let scale = current.norm();
        current /= scale;
        x22.push(current.clone());
    }

    let g = solve_coupling(b11, b12, b22, &times, truncation, &integrator)?;
    let (s, sinv) = assemble(&g, &x22)?;
    let (s_check, _) = assemble(&solve_coupling(b11, b12, b22, &times, 2.0 * truncation, &integrator)?, &x22)?;
    let change = s.iter().zip(&s_check).map(|(a, b)| spectral_norm(&(a - b))).fold(0.0, f64::max);
    if !(change <= TRUNCATION_TOL) {
        return Err(Error::Truncation { change });
    }

    let a = upper_block_triangular(b11, b12, b22)?;
    let mut out = finish(times, s, sinv, &a, part)?;
    let d1_error = out
        .times
        .iter()
        .zip(&out.d)
        .map(|(&t, d)| spectral_norm(&(block(d, 0, 0, lead, lead) - b11.value_at(t))))
        .fold(0.0, f64::max);
    if !(d1_error <= OFFDIAG_TOL) {
        return Err(Error::Reduction {
            time: f64::NAN,
            what: "leading block of D minus B11".into(),
            value: d1_error,
        });
    }
    out.d1_error = Some(d1_error);
    out.truncation_change = Some(change);
    out.truncation_horizon = Some(truncation);
    Ok(out)
}

/// `G` on `times`, integrated backwards from `G(truncation) = 0`.
fn solve_coupling(
    b11: &CoefficientFunction,
    b12: &CoefficientFunction,
    b22: &CoefficientFunction,
    times: &[f64],
    truncation: f64,
    integrator: &Integrator,
) -> Result<Vec<DMatrix<f64>>> {
    let rhs = |t: f64, g: &DMatrix<f64>| b11.value_at(t) * g - g * b22.value_at(t) + b12.value_at(t);
    let last = times[times.len() - 1];
    let mut jumps = b11.jumps_in(times[0], truncation);
    jumps.extend(b12.jumps_in(times[0], truncation));
    jumps.extend(b22.jumps_in(times[0], truncation));
    let mut g = DMatrix::zeros(b12.rows(), b12.cols());
    if truncation > last {
        g = integrator.integrate(rhs, &g, truncation, last, &jumps)?;
    }
    let mut out = vec![DMatrix::zeros(0, 0); times.len()];
    out[times.len() - 1] = g.clone();
    for i in (0..times.len() - 1).rev() {
        g = integrator.integrate(rhs, &g, times[i + 1], times[i], &jumps)?;
        out[i] = g.clone();
    }
    Ok(out)
}

/// `(S, S⁻¹)` at every node.
type Frames = (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>);

fn assemble(g: &[DMatrix<f64>], x22: &[DMatrix<f64>]) -> Result<Frames> {
    let (lead, k) = g[0].shape();
    let n = lead + k;
    let mut s_all = Vec::with_capacity(g.len());
    let mut sinv_all = Vec::with_capacity(g.len());
    for (gj, xj) in g.iter().zip(x22) {
        let m = DMatrix::identity(k, k) + gj.transpose() * gj;
        let nm = psd_sqrt(&(xj.transpose() * m * xj));
        let ninv = nm.clone().try_inverse().ok_or_else(|| Error::Conditioning {
            condition: f64::INFINITY,
            cap: 0.0,
            context: "in the trailing normalization N(t)".into(),
        })?;
        let xinv = xj.clone().try_inverse().ok_or_else(|| Error::Conditioning {
            condition: f64::INFINITY,
            cap: 0.0,
            context: "trailing fundamental solution singular".into(),
        })?;
        let s22 = xj * &ninv;
        let mut s = DMatrix::identity(n, n);
        s.view_mut((0, lead), (lead, k)).copy_from(&(gj * &s22));
        s.view_mut((lead, lead), (k, k)).copy_from(&s22);
        let mut sinv = DMatrix::identity(n, n);
        sinv.view_mut((0, lead), (lead, k)).copy_from(&(-gj));
        sinv.view_mut((lead, lead), (k, k)).copy_from(&(nm * xinv));
        s_all.push(s);
        sinv_all.push(sinv);
    }
    Ok((s_all, sinv_all))
}
