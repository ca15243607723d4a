//! Matrix ODE integration and cached state-transition matrices.
//!
//! Steps are always aligned to coefficient breakpoints, and stage times are
//! kept strictly inside the current segment so piecewise-constant and sampled
//! coefficients are evaluated on the correct side of a jump.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{condition_number, guarded_inverse};
use crate::system::{CoefficientFunction, LtvSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Classical fixed-step Runge-Kutta of order 4.
    #[default]
    Rk4,
    /// Dormand-Prince 5(4) with error control.
    Adaptive,
}

/// User-facing integrator configuration. The step is resolved against the
/// coefficient bound when not given explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegratorSettings {
    pub method: Method,
    pub step: Option<f64>,
    pub rtol: f64,
    pub atol: f64,
    /// Largest admissible condition number when inverting transition factors.
    pub cond_cap: f64,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        IntegratorSettings {
            method: Method::Rk4,
            step: None,
            rtol: 1e-10,
            atol: 1e-12,
            cond_cap: 1e8,
        }
    }
}

/// `1e-3` characteristic times (`1 / bound`), clamped to `[1e-5, 1e-1]`.
pub fn default_step(bound: f64) -> f64 {
    if bound <= 0.0 || !bound.is_finite() {
        return 0.1;
    }
    (1e-3 / bound).clamp(1e-5, 0.1)
}

impl IntegratorSettings {
    pub fn with_step(mut self, step: f64) -> Self {
        self.step = Some(step);
        self
    }

    pub fn step_for(&self, bound: f64) -> f64 {
        self.step.unwrap_or_else(|| default_step(bound))
    }

    pub fn integrator(&self, bound: f64) -> Integrator {
        Integrator {
            method: self.method,
            step: self.step_for(bound),
            rtol: self.rtol,
            atol: self.atol,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.rtol) || !positive(self.atol) || !positive(self.cond_cap) || self.step.is_some_and(|h| !positive(h)) {
            return Err(Error::Argument("integrator settings must be positive".into()));
        }
        Ok(())
    }
}

/// A resolved integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integrator {
    pub method: Method,
    pub step: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl Integrator {
    pub fn rk4(step: f64) -> Self {
        Integrator {
            method: Method::Rk4,
            step,
            rtol: 1e-10,
            atol: 1e-12,
        }
    }

    pub fn integrate<F>(&self, rhs: F, x0: &DMatrix<f64>, t0: f64, t1: f64, breakpoints: &[f64]) -> Result<DMatrix<f64>>
    where
        F: Fn(f64, &DMatrix<f64>) -> DMatrix<f64>,
    {
        self.integrate_observed(rhs, x0, t0, t1, breakpoints, |_, _| {})
    }

    /// Like [`Integrator::integrate`], calling `observe(t, x)` after every accepted step.
    pub fn integrate_observed<F, G>(
        &self,
        rhs: F,
        x0: &DMatrix<f64>,
        t0: f64,
        t1: f64,
        breakpoints: &[f64],
        mut observe: G,
    ) -> Result<DMatrix<f64>>
    where
        F: Fn(f64, &DMatrix<f64>) -> DMatrix<f64>,
        G: FnMut(f64, &DMatrix<f64>),
    {
        if !(self.step > 0.0) {
            return Err(Error::Argument("integration step must be positive".into()));
        }
        let mut x = x0.clone();
        for (a, b) in segments(t0, t1, breakpoints) {
            x = match self.method {
                Method::Rk4 => {
                    let count = steps_in(a, b, self.step);
                    let h = (b - a) / count as f64;
                    for i in 0..count {
                        let t = a + h * i as f64;
                        x = rk4_step(&rhs, t, &x, h, (a, b));
                        let t_end = if i + 1 == count { b } else { t + h };
                        check_finite(&x, t_end)?;
                        observe(t_end, &x);
                    }
                    x
                }
                Method::Adaptive => self.dopri_segment(&rhs, x, a, b, &mut observe)?,
            };
        }
        Ok(x)
    }

    fn dopri_segment<F, G>(&self, rhs: &F, mut x: DMatrix<f64>, a: f64, b: f64, observe: &mut G) -> Result<DMatrix<f64>>
    where
        F: Fn(f64, &DMatrix<f64>) -> DMatrix<f64>,
        G: FnMut(f64, &DMatrix<f64>),
    {
        let dir = (b - a).signum();
        let mut t = a;
        let mut h = self.step.min((b - a).abs()) * dir;
        let seg = (a, b);
        let f = |s: f64, y: &DMatrix<f64>| rhs(inside(s, seg), y);
        let mut k1 = f(t, &x);
        while (b - t) * dir > 0.0 {
            if (t + h - b) * dir > 0.0 {
                h = b - t;
            }
            let k2 = f(t + C2 * h, &(&x + &k1 * (h * A21)));
            let k3 = f(t + C3 * h, &(&x + (&k1 * A31 + &k2 * A32) * h));
            let k4 = f(t + C4 * h, &(&x + (&k1 * A41 + &k2 * A42 + &k3 * A43) * h));
            let k5 = f(t + C5 * h, &(&x + (&k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h));
            let k6 = f(t + h, &(&x + (&k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h));
            let x_new = &x + (&k1 * B1 + &k3 * B3 + &k4 * B4 + &k5 * B5 + &k6 * B6) * h;
            let k7 = f(t + h, &x_new);
            let err = (&k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
            let mut ratio = 0.0_f64;
            for ((e, y0), y1) in err.iter().zip(x.iter()).zip(x_new.iter()) {
                let scale = self.atol + self.rtol * y0.abs().max(y1.abs());
                ratio = ratio.max(e.abs() / scale);
            }
            if !ratio.is_finite() {
                return Err(Error::Overflow { time: t + h });
            }
            if ratio <= 1.0 {
                t = if ((t + h) - b).abs() <= 1e-14 * b.abs().max(1.0) {
                    b
                } else {
                    t + h
                };
                x = x_new;
                k1 = k7;
                check_finite(&x, t)?;
                observe(t, &x);
            }
            let factor = if ratio == 0.0 {
                5.0
            } else {
                (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0)
            };
            h *= factor;
            if h.abs() < 1e-13 * t.abs().max(1.0) {
                return Err(Error::Stiffness { time: t, step: h.abs() });
            }
        }
        Ok(x)
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn check_finite(x: &DMatrix<f64>, time: f64) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Overflow { time })
    }
}

/// Number of fixed steps covering `[a, b]` with step at most `h`.
pub fn steps_in(a: f64, b: f64, h: f64) -> usize {
    (((b - a).abs() / h) - 1e-9).ceil().max(1.0) as usize
}

/// Splits `[t0, t1]` (either orientation) at the breakpoints, in integration order.
pub fn segments(t0: f64, t1: f64, breakpoints: &[f64]) -> Vec<(f64, f64)> {
    if t0 == t1 {
        return Vec::new();
    }
    let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
    let mut cuts: Vec<f64> = breakpoints.iter().copied().filter(|&b| b > lo && b < hi).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut points = Vec::with_capacity(cuts.len() + 2);
    points.push(t0);
    if t0 < t1 {
        points.extend(cuts);
    } else {
        points.extend(cuts.into_iter().rev());
    }
    points.push(t1);
    points.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Clamps a stage time strictly inside the segment.
pub fn inside(t: f64, seg: (f64, f64)) -> f64 {
    let (lo, hi) = if seg.0 <= seg.1 { seg } else { (seg.1, seg.0) };
    let eps = 1e-12 * lo.abs().max(hi.abs()).max(1.0);
    if hi - lo <= 4.0 * eps {
        return 0.5 * (lo + hi);
    }
    t.clamp(lo + eps, hi - eps)
}

/// One classical Runge-Kutta step of signed size `h` inside segment `seg`.
pub fn rk4_step<F>(rhs: &F, t: f64, x: &DMatrix<f64>, h: f64, seg: (f64, f64)) -> DMatrix<f64>
where
    F: Fn(f64, &DMatrix<f64>) -> DMatrix<f64>,
{
    let half = 0.5 * h;
    let k1 = rhs(inside(t, seg), x);
    let k2 = rhs(inside(t + half, seg), &(x + &k1 * half));
    let k3 = rhs(inside(t + half, seg), &(x + &k2 * half));
    let k4 = rhs(inside(t + h, seg), &(x + &k3 * h));
    x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
}

/// Solves `X' = rhs(t, X)`, `X(t0) = X0` up to `t1` (which may precede `t0`).
pub fn integrate_matrix_ode<F>(
    rhs: F,
    x0: &DMatrix<f64>,
    t0: f64,
    t1: f64,
    breakpoints: &[f64],
    integrator: &Integrator,
) -> Result<DMatrix<f64>>
where
    F: Fn(f64, &DMatrix<f64>) -> DMatrix<f64>,
{
    integrator.integrate(rhs, x0, t0, t1, breakpoints)
}

/// Solution of `X' = A(t) X` from `X(t0) = X0`.
pub fn propagate_linear(a: &CoefficientFunction, x0: &DMatrix<f64>, t0: f64, t1: f64, integrator: &Integrator) -> Result<DMatrix<f64>> {
    for t in [t0, t1] {
        if !a.in_domain(t) {
            let (start, end) = a.domain();
            return Err(Error::Domain { t, start, end });
        }
    }
    let breaks = a.breakpoints_in(t0, t1);
    integrator.integrate(|s, x| a.value_at(s) * x, x0, t0, t1, &breaks)
}

/// Values of the solution of `X' = A(t) X`, `X(times[0]) = X0`, at each of `times`.
pub fn fundamental_on_grid(
    a: &CoefficientFunction,
    x0: &DMatrix<f64>,
    times: &[f64],
    integrator: &Integrator,
) -> Result<Vec<DMatrix<f64>>> {
    let mut out = Vec::with_capacity(times.len());
    let Some(&first) = times.first() else {
        return Ok(out);
    };
    let mut x = x0.clone();
    let mut t = first;
    out.push(x.clone());
    for &next in &times[1..] {
        x = propagate_linear(a, &x, t, next, integrator)?;
        out.push(x.clone());
        t = next;
    }
    Ok(out)
}

/// State-transition matrices assembled from short-interval factors on a grid.
#[derive(Debug, Clone)]
pub struct TransitionCache {
    a: CoefficientFunction,
    integrator: Integrator,
    grid: Vec<f64>,
    /// `Φ(grid[i+1], grid[i])`
    factors: Vec<DMatrix<f64>>,
    /// `Φ(grid[i], grid[i+1])`
    inverses: Vec<DMatrix<f64>>,
}

/// Default factor spacing: one characteristic time, kept within `[0.05, 1]`.
pub fn default_spacing(bound: f64) -> f64 {
    if bound <= 0.0 {
        1.0
    } else {
        (1.0 / bound).clamp(0.05, 1.0)
    }
}

impl TransitionCache {
    pub fn for_system(sys: &LtvSystem, start: f64, end: f64, settings: &IntegratorSettings) -> Result<Self> {
        Self::build(sys.a(), start, end, default_spacing(sys.bound_a()), settings)
    }

    pub fn build(a: &CoefficientFunction, start: f64, end: f64, spacing: f64, settings: &IntegratorSettings) -> Result<Self> {
        settings.validate()?;
        if !(end > start) || !(spacing > 0.0) {
            return Err(Error::Argument(format!("invalid cache span [{start}, {end}] / spacing {spacing}")));
        }
        for t in [start, end] {
            if !a.in_domain(t) {
                let (s, e) = a.domain();
                return Err(Error::Domain { t, start: s, end: e });
            }
        }
        let integrator = settings.integrator(a.bound());
        let count = ((end - start) / spacing - 1e-9).ceil().max(1.0) as usize;
        let h = (end - start) / count as f64;
        let grid: Vec<f64> = (0..=count).map(|i| if i == count { end } else { start + h * i as f64 }).collect();
        let identity = DMatrix::identity(a.rows(), a.rows());
        let mut factors = Vec::with_capacity(count);
        let mut inverses = Vec::with_capacity(count);
        for w in grid.windows(2) {
            let f = propagate_linear(a, &identity, w[0], w[1], &integrator)?;
            let inv = guarded_inverse(&f, settings.cond_cap, &format!("in transition factor on [{}, {}]", w[0], w[1]))?;
            factors.push(f);
            inverses.push(inv);
        }
        Ok(TransitionCache {
            a: a.clone(),
            integrator,
            grid,
            factors,
            inverses,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn span(&self) -> (f64, f64) {
        (self.grid[0], self.grid[self.grid.len() - 1])
    }

    pub fn dim(&self) -> usize {
        self.a.rows()
    }

    pub fn integrator(&self) -> &Integrator {
        &self.integrator
    }

    pub fn factor(&self, i: usize) -> &DMatrix<f64> {
        &self.factors[i]
    }

    pub fn inverse_factor(&self, i: usize) -> &DMatrix<f64> {
        &self.inverses[i]
    }

    /// Largest condition number among the stored factors.
    pub fn max_factor_condition(&self) -> f64 {
        self.factors.iter().map(condition_number).fold(1.0, f64::max)
    }

    fn direct(&self, t: f64, t0: f64) -> Result<DMatrix<f64>> {
        let n = self.dim();
        if (t - t0).abs() <= self.tiny() {
            return Ok(DMatrix::identity(n, n));
        }
        propagate_linear(&self.a, &DMatrix::identity(n, n), t0, t, &self.integrator)
    }

    fn tiny(&self) -> f64 {
        let (s, e) = self.span();
        1e-12 * s.abs().max(e.abs()).max(1.0)
    }

    /// `Φ(t, t0)` for any `t`, `t0` in the cache span.
    pub fn transition(&self, t: f64, t0: f64) -> Result<DMatrix<f64>> {
        let (start, end) = self.span();
        let tiny = self.tiny();
        for s in [t, t0] {
            if !(s >= start - tiny && s <= end + tiny) {
                return Err(Error::Domain { t: s, start, end });
            }
        }
        let n = self.dim();
        if (t - t0).abs() <= tiny {
            return Ok(DMatrix::identity(n, n));
        }
        let g = &self.grid;
        if t > t0 {
            let i0 = g.partition_point(|&s| s < t0 - tiny);
            let i1 = g.partition_point(|&s| s <= t + tiny).saturating_sub(1);
            if i0 >= g.len() || i0 > i1 {
                return self.direct(t, t0);
            }
            let mut phi = self.direct(g[i0], t0)?;
            for f in &self.factors[i0..i1] {
                phi = f * phi;
            }
            Ok(self.direct(t, g[i1])? * phi)
        } else {
            let j0 = g.partition_point(|&s| s <= t0 + tiny).saturating_sub(1);
            let j1 = g.partition_point(|&s| s < t - tiny);
            if j1 >= g.len() || j1 > j0 {
                return self.direct(t, t0);
            }
            let mut phi = self.direct(g[j0], t0)?;
            for inv in self.inverses[j1..j0].iter().rev() {
                phi = inv * phi;
            }
            Ok(self.direct(t, g[j1])? * phi)
        }
    }
}
