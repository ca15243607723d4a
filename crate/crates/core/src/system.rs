//! Time-varying coefficient matrices and the linear systems assembled from them.
//!
//! A [`CoefficientFunction`] is immutable and cheap to clone (the data sits
//! behind an `Arc`), so systems can be shared freely between analyses.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, spectral_norm};

/// Shape of a single trigonometric term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wave {
    Sin,
    Cos,
}

/// `amplitude * wave(frequency * t + phase)` added to entry `(row, col)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub row: usize,
    pub col: usize,
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
    pub wave: Wave,
}

impl TrigTerm {
    fn value(&self, t: f64) -> f64 {
        let arg = self.frequency * t + self.phase;
        self.amplitude
            * match self.wave {
                Wave::Sin => arg.sin(),
                Wave::Cos => arg.cos(),
            }
    }
}

type DerivedFn = dyn Fn(f64) -> DMatrix<f64> + Send + Sync;

enum Kind {
    Constant(DMatrix<f64>),
    Periodic {
        offset: DMatrix<f64>,
        terms: Vec<TrigTerm>,
    },
    /// `values[i]` holds on `[breakpoints[i-1], breakpoints[i])`.
    PiecewiseConstant {
        breakpoints: Vec<f64>,
        values: Vec<DMatrix<f64>>,
    },
    /// Nondecreasing sample times, linear interpolation in between. A repeated
    /// time stores a jump: the first copy is the left limit, the last the value.
    Sampled {
        times: Vec<f64>,
        values: Vec<DMatrix<f64>>,
    },
    /// Programmatic combination of other coefficients (not expressible in a
    /// system file). `parts` supply breakpoints and the domain.
    Derived {
        f: Box<DerivedFn>,
        parts: Vec<CoefficientFunction>,
    },
}

struct Inner {
    rows: usize,
    cols: usize,
    start: f64,
    end: f64,
    bound: f64,
    kind: Kind,
}

/// A bounded matrix-valued function of time.
#[derive(Clone)]
pub struct CoefficientFunction(Arc<Inner>);

impl fmt::Debug for CoefficientFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.0.kind {
            Kind::Constant(_) => "constant",
            Kind::Periodic { .. } => "periodic",
            Kind::PiecewiseConstant { .. } => "piecewise-constant",
            Kind::Sampled { .. } => "sampled",
            Kind::Derived { .. } => "derived",
        };
        f.debug_struct("CoefficientFunction")
            .field("kind", &kind)
            .field("rows", &self.0.rows)
            .field("cols", &self.0.cols)
            .field("domain", &(self.0.start, self.0.end))
            .field("bound", &self.0.bound)
            .finish()
    }
}

fn entrywise_bound(offset: &DMatrix<f64>, terms: &[TrigTerm]) -> f64 {
    let mut env = offset.abs();
    for term in terms {
        env[(term.row, term.col)] += term.amplitude.abs();
    }
    spectral_norm(&env)
}

impl CoefficientFunction {
    fn from_parts(rows: usize, cols: usize, start: f64, end: f64, bound: f64, kind: Kind) -> Self {
        CoefficientFunction(Arc::new(Inner {
            rows,
            cols,
            start,
            end,
            bound,
            kind,
        }))
    }

    pub fn constant(value: DMatrix<f64>) -> Result<Self> {
        check_finite(&value)?;
        let bound = spectral_norm(&value);
        Ok(Self::from_parts(
            value.nrows(),
            value.ncols(),
            0.0,
            f64::INFINITY,
            bound,
            Kind::Constant(value),
        ))
    }

    pub fn scalar(value: f64) -> Self {
        Self::constant(DMatrix::from_element(1, 1, value)).expect("finite scalar")
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(DMatrix::zeros(rows, cols)).expect("zeros are finite")
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(DMatrix::identity(n, n)).expect("identity is finite")
    }

    /// Constant offset plus a finite sum of per-entry sine/cosine terms.
    pub fn periodic(offset: DMatrix<f64>, terms: Vec<TrigTerm>) -> Result<Self> {
        check_finite(&offset)?;
        for term in &terms {
            if term.row >= offset.nrows() || term.col >= offset.ncols() {
                return Err(Error::Dimension(format!(
                    "trigonometric term at ({}, {}) outside a {}x{} matrix",
                    term.row,
                    term.col,
                    offset.nrows(),
                    offset.ncols()
                )));
            }
            if ![term.amplitude, term.frequency, term.phase].iter().all(|v| v.is_finite()) {
                return Err(Error::Argument("non-finite trigonometric term".into()));
            }
        }
        let bound = entrywise_bound(&offset, &terms);
        Ok(Self::from_parts(
            offset.nrows(),
            offset.ncols(),
            0.0,
            f64::INFINITY,
            bound,
            Kind::Periodic { offset, terms },
        ))
    }

    /// `values.len()` must be `breakpoints.len() + 1`; the last value extends to infinity.
    pub fn piecewise_constant(breakpoints: Vec<f64>, values: Vec<DMatrix<f64>>) -> Result<Self> {
        if values.len() != breakpoints.len() + 1 {
            return Err(Error::Dimension(format!(
                "{} breakpoints need {} values, got {}",
                breakpoints.len(),
                breakpoints.len() + 1,
                values.len()
            )));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) || breakpoints.iter().any(|b| !(*b > 0.0)) {
            return Err(Error::Argument("breakpoints must be positive and strictly increasing".into()));
        }
        let (rows, cols) = values[0].shape();
        let mut bound = 0.0_f64;
        for v in &values {
            if v.shape() != (rows, cols) {
                return Err(Error::Dimension("piecewise values differ in shape".into()));
            }
            check_finite(v)?;
            bound = bound.max(spectral_norm(v));
        }
        Ok(Self::from_parts(
            rows,
            cols,
            0.0,
            f64::INFINITY,
            bound,
            Kind::PiecewiseConstant { breakpoints, values },
        ))
    }

    /// Uniform grid `start + i * step`, linear interpolation.
    pub fn sampled(start: f64, step: f64, values: Vec<DMatrix<f64>>) -> Result<Self> {
        if !(step > 0.0) || !start.is_finite() {
            return Err(Error::Argument("sample step must be positive".into()));
        }
        let times = (0..values.len()).map(|i| start + step * i as f64).collect();
        Self::sampled_at(times, values)
    }

    /// Nonuniform sample times (nondecreasing; a repeated time encodes a jump).
    pub fn sampled_at(times: Vec<f64>, values: Vec<DMatrix<f64>>) -> Result<Self> {
        if times.len() != values.len() || times.len() < 2 {
            return Err(Error::Dimension(
                "sampled coefficient needs at least two samples and one time per sample".into(),
            ));
        }
        if times.windows(2).any(|w| w[1] < w[0]) || !times.iter().all(|t| t.is_finite()) {
            return Err(Error::Argument("sample times must be nondecreasing".into()));
        }
        let (rows, cols) = values[0].shape();
        let mut bound = 0.0_f64;
        for v in &values {
            if v.shape() != (rows, cols) {
                return Err(Error::Dimension("sampled values differ in shape".into()));
            }
            check_finite(v)?;
            bound = bound.max(spectral_norm(v));
        }
        let (start, end) = (times[0], times[times.len() - 1]);
        Ok(Self::from_parts(rows, cols, start, end, bound, Kind::Sampled { times, values }))
    }

    /// Combination of other coefficients. `bound` must dominate `sup ‖f(t)‖`.
    pub fn derived<F>(rows: usize, cols: usize, bound: f64, parts: Vec<CoefficientFunction>, f: F) -> Self
    where
        F: Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
    {
        let start = parts.iter().map(|p| p.0.start).fold(f64::NEG_INFINITY, f64::max);
        let end = parts.iter().map(|p| p.0.end).fold(f64::INFINITY, f64::min);
        let start = if start.is_finite() { start } else { 0.0 };
        Self::from_parts(rows, cols, start, end, bound, Kind::Derived { f: Box::new(f), parts })
    }

    /// Restrict the domain end (constant/periodic/piecewise kinds default to infinity).
    pub fn with_domain_end(&self, end: f64) -> Result<Self> {
        if !(end > self.0.start) {
            return Err(Error::Argument(format!("domain end {end} must exceed the start")));
        }
        let me = self.clone();
        let rows = self.rows();
        let cols = self.cols();
        let bound = self.bound();
        let mut out = Self::derived(rows, cols, bound, vec![me.clone()], move |t| me.value_at(t));
        Arc::get_mut(&mut out.0).expect("fresh").end = end.min(self.0.end);
        Ok(out)
    }

    pub fn rows(&self) -> usize {
        self.0.rows
    }

    pub fn cols(&self) -> usize {
        self.0.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.0.rows, self.0.cols)
    }

    /// Closed domain `[start, end]`.
    pub fn domain(&self) -> (f64, f64) {
        (self.0.start, self.0.end)
    }

    /// Uniform bound on the spectral norm over the whole domain.
    pub fn bound(&self) -> f64 {
        self.0.bound
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.0.kind, Kind::Constant(_))
    }

    pub fn in_domain(&self, t: f64) -> bool {
        let slack = 1e-9 * t.abs().max(1.0);
        t >= self.0.start - slack && t <= self.0.end + slack
    }

    pub fn evaluate(&self, t: f64) -> Result<DMatrix<f64>> {
        if !t.is_finite() || !self.in_domain(t) {
            return Err(Error::Domain {
                t,
                start: self.0.start,
                end: self.0.end,
            });
        }
        Ok(self.value_at(t))
    }

    /// Evaluation without the domain check; `t` is clamped into the domain.
    pub fn value_at(&self, t: f64) -> DMatrix<f64> {
        let t = t.clamp(self.0.start, self.0.end);
        match &self.0.kind {
            Kind::Constant(m) => m.clone(),
            Kind::Periodic { offset, terms } => {
                let mut m = offset.clone();
                for term in terms {
                    m[(term.row, term.col)] += term.value(t);
                }
                m
            }
            Kind::PiecewiseConstant { breakpoints, values } => values[breakpoints.partition_point(|&b| b <= t)].clone(),
            Kind::Sampled { times, values } => {
                let idx = times.partition_point(|&s| s <= t);
                if idx == 0 {
                    values[0].clone()
                } else if idx == times.len() {
                    values[times.len() - 1].clone()
                } else {
                    let j = idx - 1;
                    let w = (t - times[j]) / (times[idx] - times[j]);
                    &values[j] * (1.0 - w) + &values[idx] * w
                }
            }
            Kind::Derived { f, .. } => f(t),
        }
    }

    /// Discontinuity / sample points strictly inside `(min(a,b), max(a,b))`, ascending.
    pub fn breakpoints_in(&self, a: f64, b: f64) -> Vec<f64> {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let mut out = Vec::new();
        self.collect_breakpoints(lo, hi, &mut out);
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    fn collect_breakpoints(&self, lo: f64, hi: f64, out: &mut Vec<f64>) {
        match &self.0.kind {
            Kind::Constant(_) | Kind::Periodic { .. } => {}
            Kind::PiecewiseConstant { breakpoints, .. } => {
                out.extend(breakpoints.iter().copied().filter(|&b| b > lo && b < hi));
            }
            Kind::Sampled { times, .. } => {
                let from = times.partition_point(|&s| s <= lo);
                let to = times.partition_point(|&s| s < hi);
                if from < to {
                    out.extend_from_slice(&times[from..to]);
                }
            }
            Kind::Derived { parts, .. } => {
                for p in parts {
                    p.collect_breakpoints(lo, hi, out);
                }
            }
        }
    }

    /// Points strictly inside `(min(a,b), max(a,b))` where the coefficient jumps, ascending.
    /// Unlike [`CoefficientFunction::breakpoints_in`], sample points of continuous
    /// interpolants are left out.
    pub fn jumps_in(&self, a: f64, b: f64) -> Vec<f64> {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let mut out = Vec::new();
        self.collect_jumps(lo, hi, &mut out);
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    fn collect_jumps(&self, lo: f64, hi: f64, out: &mut Vec<f64>) {
        match &self.0.kind {
            Kind::Constant(_) | Kind::Periodic { .. } => {}
            Kind::PiecewiseConstant { breakpoints, .. } => {
                out.extend(breakpoints.iter().copied().filter(|&b| b > lo && b < hi));
            }
            Kind::Sampled { times, .. } => {
                out.extend(times.windows(2).filter(|w| w[0] == w[1] && w[0] > lo && w[0] < hi).map(|w| w[0]));
            }
            Kind::Derived { parts, .. } => {
                for p in parts {
                    p.collect_jumps(lo, hi, out);
                }
            }
        }
    }

    /// Sub-block `rows x cols` starting at `(r0, c0)`, keeping the kind where possible.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Result<Self> {
        if r0 + rows > self.rows() || c0 + cols > self.cols() {
            return Err(Error::Dimension(format!(
                "block ({r0},{c0})+{rows}x{cols} outside a {}x{} coefficient",
                self.rows(),
                self.cols()
            )));
        }
        if (r0, c0, rows, cols) == (0, 0, self.rows(), self.cols()) {
            return Ok(self.clone());
        }
        let cut = |m: &DMatrix<f64>| linalg::block(m, r0, c0, rows, cols);
        let out = match &self.0.kind {
            Kind::Constant(m) => Self::constant(cut(m))?,
            Kind::Periodic { offset, terms } => {
                let kept = terms
                    .iter()
                    .filter(|t| t.row >= r0 && t.row < r0 + rows && t.col >= c0 && t.col < c0 + cols)
                    .map(|t| TrigTerm {
                        row: t.row - r0,
                        col: t.col - c0,
                        ..*t
                    })
                    .collect();
                Self::periodic(cut(offset), kept)?
            }
            Kind::PiecewiseConstant { breakpoints, values } => {
                Self::piecewise_constant(breakpoints.clone(), values.iter().map(cut).collect())?
            }
            Kind::Sampled { times, values } => {
                if rows == 0 || cols == 0 {
                    Self::zeros(rows, cols)
                } else {
                    Self::sampled_at(times.clone(), values.iter().map(cut).collect())?
                }
            }
            Kind::Derived { .. } => {
                let me = self.clone();
                Self::derived(rows, cols, self.bound(), vec![me.clone()], move |t| {
                    linalg::block(&me.value_at(t), r0, c0, rows, cols)
                })
            }
        };
        if out.0.end > self.0.end || out.0.start < self.0.start {
            return out.with_domain_end(self.0.end);
        }
        Ok(out)
    }

    /// `self(t) - lhs(t) * rhs(t)`, the output-injection form `A - L C`.
    pub fn minus_product(&self, lhs: &CoefficientFunction, rhs: &CoefficientFunction) -> Result<Self> {
        if lhs.cols() != rhs.rows() || (lhs.rows(), rhs.cols()) != self.shape() {
            return Err(Error::Dimension(format!(
                "cannot form {}x{} - ({}x{})({}x{})",
                self.rows(),
                self.cols(),
                lhs.rows(),
                lhs.cols(),
                rhs.rows(),
                rhs.cols()
            )));
        }
        let (a, l, c) = (self.clone(), lhs.clone(), rhs.clone());
        let bound = a.bound() + l.bound() * c.bound();
        Ok(Self::derived(
            self.rows(),
            self.cols(),
            bound,
            vec![a.clone(), l.clone(), c.clone()],
            move |t| a.value_at(t) - l.value_at(t) * c.value_at(t),
        ))
    }

    /// `self(t) * rhs(t)`.
    pub fn times(&self, rhs: &CoefficientFunction) -> Result<Self> {
        if self.cols() != rhs.rows() {
            return Err(Error::Dimension("inner dimensions differ".into()));
        }
        let (a, b) = (self.clone(), rhs.clone());
        let bound = a.bound() * b.bound();
        Ok(Self::derived(
            self.rows(),
            rhs.cols(),
            bound,
            vec![a.clone(), b.clone()],
            move |t| a.value_at(t) * b.value_at(t),
        ))
    }

    /// Largest spectral norm over the given times.
    pub fn sup_norm_on(&self, times: &[f64]) -> f64 {
        times.iter().map(|&t| spectral_norm(&self.value_at(t))).fold(0.0, f64::max)
    }
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Argument("coefficient matrix has non-finite entries".into()))
    }
}

/// `(A(t), C(t))` with `A: n x n` and `C: p x n`.
#[derive(Clone, Debug)]
pub struct LtvSystem {
    name: String,
    a: CoefficientFunction,
    c: CoefficientFunction,
}

impl LtvSystem {
    pub fn new(a: CoefficientFunction, c: CoefficientFunction) -> Result<Self> {
        if a.rows() != a.cols() || a.rows() == 0 {
            return Err(Error::Dimension(format!(
                "A must be square and nonempty, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        if c.cols() != a.rows() {
            return Err(Error::Dimension(format!(
                "C has {} columns but the state dimension is {}",
                c.cols(),
                a.rows()
            )));
        }
        Ok(LtvSystem { name: String::new(), a, c })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn p(&self) -> usize {
        self.c.rows()
    }

    pub fn a(&self) -> &CoefficientFunction {
        &self.a
    }

    pub fn c(&self) -> &CoefficientFunction {
        &self.c
    }

    pub fn bound_a(&self) -> f64 {
        self.a.bound()
    }

    pub fn bound_c(&self) -> f64 {
        self.c.bound()
    }

    /// End of the common domain of `A` and `C` (may be infinite).
    pub fn domain_end(&self) -> f64 {
        self.a.domain().1.min(self.c.domain().1)
    }

    pub fn domain_start(&self) -> f64 {
        self.a.domain().0.max(self.c.domain().0)
    }

    /// Union of the coefficient breakpoints inside the interval.
    pub fn breakpoints_in(&self, a: f64, b: f64) -> Vec<f64> {
        let mut out = self.a.breakpoints_in(a, b);
        out.extend(self.c.breakpoints_in(a, b));
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    /// Largest `|a_ij(t)|` with `i >= n-k`, `j < n-k` over the given times.
    pub fn lower_left_max(&self, k: usize, times: &[f64]) -> f64 {
        let n = self.n();
        let lead = n - k.min(n);
        times
            .iter()
            .map(|&t| {
                let a = self.a.value_at(t);
                let mut worst = 0.0_f64;
                for j in 0..lead {
                    for i in lead..n {
                        worst = worst.max(a[(i, j)].abs());
                    }
                }
                worst
            })
            .fold(0.0, f64::max)
    }

    /// Largest strictly-lower entry of `A(t)` over the given times.
    pub fn strictly_lower_max(&self, times: &[f64]) -> f64 {
        times
            .iter()
            .map(|&t| linalg::strictly_lower_max(&self.a.value_at(t)))
            .fold(0.0, f64::max)
    }
}

/// Split of the state into a leading block of size `n-k` and a trailing block of size `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    n: usize,
    k: usize,
}

impl BlockPartition {
    /// Admits the degenerate partitions `k = 0` and `k = n`; block assembly
    /// additionally requires both blocks to be nonempty.
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if n == 0 || k > n {
            return Err(Error::Argument(format!("invalid partition k = {k} of n = {n}")));
        }
        Ok(BlockPartition { n, k })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Dimension of the trailing (stable) block.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Dimension of the leading (anti-stable) block.
    pub fn lead(&self) -> usize {
        self.n - self.k
    }

    pub fn is_proper(&self) -> bool {
        self.k >= 1 && self.k < self.n
    }

    /// Normal-form projector `diag(0_{n-k}, I_k)`.
    pub fn projector(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| if i == j && i >= self.lead() { 1.0 } else { 0.0 })
    }

    pub fn lead_range(&self) -> std::ops::Range<usize> {
        0..self.lead()
    }

    pub fn trail_range(&self) -> std::ops::Range<usize> {
        self.lead()..self.n
    }
}

fn lift_periodic(f: &CoefficientFunction) -> Option<(DMatrix<f64>, Vec<TrigTerm>)> {
    match &f.0.kind {
        Kind::Constant(m) => Some((m.clone(), Vec::new())),
        Kind::Periodic { offset, terms } => Some((offset.clone(), terms.clone())),
        _ => None,
    }
}

/// Stack equally shaped grid of blocks; `None` entries are exact zeros.
/// `[[B11, B12], [0, B22]]` as one coefficient.
pub fn upper_block_triangular(
    b11: &CoefficientFunction,
    b12: &CoefficientFunction,
    b22: &CoefficientFunction,
) -> Result<CoefficientFunction> {
    let (lead, k) = (b11.rows(), b22.rows());
    if b12.shape() != (lead, k) || b11.cols() != lead || b22.cols() != k {
        return Err(Error::Dimension("blocks of a block-triangular coefficient do not fit".into()));
    }
    assemble(&[vec![Some(b11), Some(b12)], vec![None, Some(b22)]], &[lead, k], &[lead, k])
}

fn assemble(blocks: &[Vec<Option<&CoefficientFunction>>], row_dims: &[usize], col_dims: &[usize]) -> Result<CoefficientFunction> {
    let rows: usize = row_dims.iter().sum();
    let cols: usize = col_dims.iter().sum();
    let offsets = |dims: &[usize]| -> Vec<usize> {
        dims.iter()
            .scan(0, |acc, d| {
                let o = *acc;
                *acc += d;
                Some(o)
            })
            .collect()
    };
    let (ro, co) = (offsets(row_dims), offsets(col_dims));
    let present: Vec<(usize, usize, &CoefficientFunction)> = blocks
        .iter()
        .enumerate()
        .flat_map(|(bi, row)| row.iter().enumerate().filter_map(move |(bj, b)| b.map(|f| (bi, bj, f))))
        .collect();

    let lifted: Option<Vec<_>> = present.iter().map(|(_, _, f)| lift_periodic(f)).collect();
    if let Some(lifted) = lifted {
        let mut offset = DMatrix::zeros(rows, cols);
        let mut terms = Vec::new();
        for ((bi, bj, _), (m, ts)) in present.iter().zip(lifted) {
            offset.view_mut((ro[*bi], co[*bj]), (m.nrows(), m.ncols())).copy_from(&m);
            terms.extend(ts.into_iter().map(|t| TrigTerm {
                row: t.row + ro[*bi],
                col: t.col + co[*bj],
                ..t
            }));
        }
        return if terms.is_empty() {
            CoefficientFunction::constant(offset)
        } else {
            CoefficientFunction::periodic(offset, terms)
        };
    }

    let mut norms = DMatrix::zeros(row_dims.len(), col_dims.len());
    for (bi, bj, f) in &present {
        norms[(*bi, *bj)] = f.bound();
    }
    let bound = spectral_norm(&norms);
    let placed: Vec<(usize, usize, CoefficientFunction)> = present.iter().map(|(bi, bj, f)| (ro[*bi], co[*bj], (*f).clone())).collect();
    let parts = placed.iter().map(|(_, _, f)| f.clone()).collect();
    Ok(CoefficientFunction::derived(rows, cols, bound, parts, move |t| {
        let mut m = DMatrix::zeros(rows, cols);
        for (r, c, f) in &placed {
            let v = f.value_at(t);
            m.view_mut((*r, *c), (v.nrows(), v.ncols())).copy_from(&v);
        }
        m
    }))
}

/// Builds `A = [[B11, B12], [0, B22]]`, `C = [C1, C2]`; the lower-left block is exactly zero.
pub fn assemble_block_triangular(
    b11: &CoefficientFunction,
    b12: &CoefficientFunction,
    b22: &CoefficientFunction,
    c1: &CoefficientFunction,
    c2: &CoefficientFunction,
    part: BlockPartition,
) -> Result<LtvSystem> {
    if !part.is_proper() {
        return Err(Error::Dimension(format!(
            "block-triangular assembly needs 1 <= k <= n-1, got k = {} of n = {}",
            part.k(),
            part.n()
        )));
    }
    let (lead, k) = (part.lead(), part.k());
    let p = c1.rows();
    let expect = [
        ("B11", b11.shape(), (lead, lead)),
        ("B12", b12.shape(), (lead, k)),
        ("B22", b22.shape(), (k, k)),
        ("C1", c1.shape(), (p, lead)),
        ("C2", c2.shape(), (p, k)),
    ];
    for (name, got, want) in expect {
        if got != want {
            return Err(Error::Dimension(format!(
                "{name} is {}x{}, expected {}x{}",
                got.0, got.1, want.0, want.1
            )));
        }
    }
    let a = upper_block_triangular(b11, b12, b22)?;
    let c = assemble(&[vec![Some(c1), Some(c2)]], &[p], &[lead, k])?;
    LtvSystem::new(a, c)
}

/// Evenly spaced times `start..=end` (`count >= 2`).
pub fn linspace(start: f64, end: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![start];
    }
    let step = (end - start) / (count - 1) as f64;
    (0..count).map(|i| start + step * i as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn constant_evaluates_everywhere() {
        let f = CoefficientFunction::identity(2);
        assert_eq!(f.evaluate(3.7).unwrap(), DMatrix::identity(2, 2));
    }

    #[test]
    fn periodic_sine_entry() {
        let f = CoefficientFunction::periodic(
            DMatrix::zeros(1, 1),
            vec![TrigTerm {
                row: 0,
                col: 0,
                amplitude: 1.0,
                frequency: 1.0,
                phase: 0.0,
                wave: Wave::Sin,
            }],
        )
        .unwrap();
        assert_relative_eq!(f.evaluate(FRAC_PI_2).unwrap()[(0, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn sampled_interpolates_linearly() {
        let f = CoefficientFunction::sampled(0.0, 1.0, vec![DMatrix::from_element(1, 1, 0.0), DMatrix::from_element(1, 1, 2.0)]).unwrap();
        assert_relative_eq!(f.evaluate(0.5).unwrap()[(0, 0)], 1.0);
        assert!(matches!(f.evaluate(1.5), Err(Error::Domain { .. })));
        assert!(matches!(f.evaluate(-0.1), Err(Error::Domain { .. })));
    }

    #[test]
    fn sampled_jump_is_right_continuous() {
        let v = |x: f64| DMatrix::from_element(1, 1, x);
        let f = CoefficientFunction::sampled_at(vec![0.0, 1.0, 1.0, 2.0], vec![v(0.0), v(1.0), v(5.0), v(5.0)]).unwrap();
        assert_relative_eq!(f.value_at(1.0 - 1e-9)[(0, 0)], 1.0, epsilon = 1e-8);
        assert_relative_eq!(f.value_at(1.0)[(0, 0)], 5.0);
        assert_eq!(f.breakpoints_in(0.0, 2.0), vec![1.0]);
    }

    #[test]
    fn piecewise_reports_breakpoints() {
        let f = CoefficientFunction::piecewise_constant(
            vec![1.0, 2.0],
            vec![
                DMatrix::from_element(1, 1, 1.0),
                DMatrix::from_element(1, 1, -3.0),
                DMatrix::from_element(1, 1, 2.0),
            ],
        )
        .unwrap();
        assert_eq!(f.breakpoints_in(0.5, 3.0), vec![1.0, 2.0]);
        assert_eq!(f.breakpoints_in(3.0, 0.5), vec![1.0, 2.0]);
        assert_eq!(f.value_at(1.0)[(0, 0)], -3.0);
        assert_eq!(f.bound(), 3.0);
    }

    #[test]
    fn scalar_block_assembly() {
        let one = CoefficientFunction::scalar(1.0);
        let zero = CoefficientFunction::scalar(0.0);
        let minus = CoefficientFunction::scalar(-1.0);
        let part = BlockPartition::new(2, 1).unwrap();
        let sys = assemble_block_triangular(&one, &zero, &minus, &one, &zero, part).unwrap();
        assert_eq!(
            sys.a().evaluate(0.0).unwrap(),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])
        );
        assert_eq!(sys.c().evaluate(0.0).unwrap(), DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
    }

    #[test]
    fn sinusoidal_coupling_block() {
        let b12 = CoefficientFunction::periodic(
            DMatrix::zeros(1, 1),
            vec![TrigTerm {
                row: 0,
                col: 0,
                amplitude: 1.0,
                frequency: 1.0,
                phase: 0.0,
                wave: Wave::Sin,
            }],
        )
        .unwrap();
        let part = BlockPartition::new(2, 1).unwrap();
        let sys = assemble_block_triangular(
            &CoefficientFunction::scalar(1.0),
            &b12,
            &CoefficientFunction::scalar(-1.0),
            &CoefficientFunction::scalar(1.0),
            &CoefficientFunction::scalar(0.0),
            part,
        )
        .unwrap();
        for t in linspace(0.0, 10.0, 41) {
            let a = sys.a().value_at(t);
            assert_relative_eq!(a[(0, 1)], t.sin(), epsilon = 1e-15);
            assert_eq!(a[(1, 0)], 0.0);
        }
    }

    #[test]
    fn boundary_partition_three_states() {
        let part = BlockPartition::new(3, 2).unwrap();
        assert_eq!(part.lead(), 1);
        let sys = assemble_block_triangular(
            &CoefficientFunction::scalar(2.0),
            &CoefficientFunction::zeros(1, 2),
            &CoefficientFunction::constant(-DMatrix::identity(2, 2)).unwrap(),
            &CoefficientFunction::scalar(1.0),
            &CoefficientFunction::zeros(1, 2),
            part,
        )
        .unwrap();
        assert_eq!(sys.n(), 3);
        assert_eq!(sys.lower_left_max(2, &linspace(0.0, 1.0, 5)), 0.0);
    }

    #[test]
    fn assembly_rejects_bad_shapes() {
        let part = BlockPartition::new(2, 1).unwrap();
        let err = assemble_block_triangular(
            &CoefficientFunction::identity(2),
            &CoefficientFunction::scalar(0.0),
            &CoefficientFunction::scalar(-1.0),
            &CoefficientFunction::scalar(1.0),
            &CoefficientFunction::scalar(0.0),
            part,
        );
        assert!(matches!(err, Err(Error::Dimension(_))));
        assert!(BlockPartition::new(2, 3).is_err());
    }

    #[test]
    fn system_rejects_mismatched_output() {
        let err = LtvSystem::new(CoefficientFunction::identity(2), CoefficientFunction::identity(3));
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn block_of_periodic_keeps_terms() {
        let f = CoefficientFunction::periodic(
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 3.0]),
            vec![TrigTerm {
                row: 1,
                col: 1,
                amplitude: 0.5,
                frequency: 2.0,
                phase: 0.1,
                wave: Wave::Cos,
            }],
        )
        .unwrap();
        let b = f.block(1, 1, 1, 1).unwrap();
        assert_relative_eq!(b.value_at(0.7)[(0, 0)], 3.0 + 0.5 * (1.4_f64 + 0.1).cos(), epsilon = 1e-15);
    }

    #[test]
    fn injection_combination() {
        let a = CoefficientFunction::scalar(1.0);
        let l = CoefficientFunction::scalar(3.0);
        let c = CoefficientFunction::scalar(1.0);
        let e = a.minus_product(&l, &c).unwrap();
        assert_eq!(e.value_at(2.0)[(0, 0)], -2.0);
        assert!(e.bound() >= 2.0);
    }
}
