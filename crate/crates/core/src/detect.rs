//! End-to-end detectability analysis.
//!
//! The system is brought to upper triangular form (continuous QR when needed),
//! the dichotomy rank `k` is read off the diagonal growth rates and certified,
//! and detectability is decided by observability of the leading anti-stable
//! block `(B11, C1)`. A Riccati-based observer then checks the positive verdict
//! by measuring the decay of the estimation error.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::dichotomy::{
    certify_dichotomy, default_gap, exponent_table, CertGrid, DichotomyCertificate, Growth, DEFAULT_HORIZON, DEFAULT_TOLERANCE,
};
use crate::error::{Error, Result};
use crate::gramian::{default_starts, smallest_passing_sigma, GramianReport, DEFAULT_STARTS};
use crate::linalg::{block, spectral_norm};
use crate::observer::{
    certify_error_decay, solve_filter_riccati, synthesize_gain, DecayCertificate, DecayGrid, RiccatiSolution, RiccatiWeights,
};
use crate::propagate::IntegratorSettings;
use crate::qrflow::{run_qr_flow, triangularized_system, QrFlowResult, QrSettings};
use crate::reduce::{triangular_reduction, BlockDiagReduction};
use crate::system::{linspace, BlockPartition, CoefficientFunction, LtvSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    /// Decide on the triangular form directly.
    #[default]
    Triangular,
    /// Additionally reduce to block-diagonal form and transform the output map.
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Detectable,
    NotDetectable,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Triangularization,
    Exponents,
    Dichotomy,
    Reduction,
    Observer,
    Decay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KSource {
    Pinned,
    Exponents,
}

#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    pub horizon: f64,
    pub settings: IntegratorSettings,
    /// Pinned dichotomy rank; proposed from the exponents when `None`.
    pub k: Option<usize>,
    pub route: Route,
    /// Exponent averaging window.
    pub window: f64,
    /// Exponent gap; `0.05 boundA` when `None`.
    pub gap: Option<f64>,
    pub tolerance: f64,
    /// Candidate observability windows, tried in ascending order.
    pub sigmas: Vec<f64>,
    pub gramian_starts: usize,
    pub threshold: Option<f64>,
    pub cert_starts: usize,
    pub lags: Vec<f64>,
    pub weights: RiccatiWeights,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            horizon: DEFAULT_HORIZON,
            settings: IntegratorSettings::default(),
            k: None,
            route: Route::Triangular,
            window: 10.0,
            gap: None,
            tolerance: DEFAULT_TOLERANCE,
            sigmas: vec![1.0, 2.0, 4.0, 8.0],
            gramian_starts: DEFAULT_STARTS,
            threshold: None,
            cert_starts: 20,
            lags: crate::dichotomy::DEFAULT_LAGS.to_vec(),
            weights: RiccatiWeights::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExponentSummary {
    pub window: f64,
    pub gap: f64,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    pub classes: Vec<Growth>,
    pub proposed_k: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransformedOutput {
    /// Largest change of the leading output block `C1` under the reduction (zero in exact arithmetic).
    pub c1_change: f64,
    /// `sup ‖C1 S12 + C2 S22‖`.
    pub c2_tilde_bound: f64,
    pub horizon: f64,
    pub reduction: BlockDiagReduction,
    #[serde(skip)]
    pub c2_tilde: Vec<(f64, DMatrix<f64>)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DetectabilityReport {
    pub system: String,
    pub n: usize,
    pub p: usize,
    pub route: Route,
    pub triangularized: bool,
    pub k: Option<usize>,
    pub k_source: Option<KSource>,
    pub exponents: Option<ExponentSummary>,
    pub dichotomy: Option<DichotomyCertificate>,
    pub transformed_output: Option<TransformedOutput>,
    /// Observability of `(B11, C1)`; `None` when not reached or vacuous (`k = n`).
    pub observable: Option<bool>,
    pub observability_window: Option<f64>,
    pub observability: Vec<GramianReport>,
    pub riccati: Option<RiccatiSolution>,
    /// Present exactly when the verdict is detectable.
    pub decay: Option<DecayCertificate>,
    pub verdict: Verdict,
    pub failed_stage: Option<Stage>,
    pub diagnostics: Vec<String>,
    /// Observer gain in the original coordinates.
    #[serde(skip)]
    pub gain_samples: Vec<(f64, DMatrix<f64>)>,
    /// Decay fit of the synthesized observer, including a failed one.
    #[serde(skip)]
    pub decay_attempt: Option<DecayCertificate>,
}

impl DetectabilityReport {
    fn new(sys: &LtvSystem, route: Route) -> Self {
        DetectabilityReport {
            system: sys.name().to_string(),
            n: sys.n(),
            p: sys.p(),
            route,
            triangularized: false,
            k: None,
            k_source: None,
            exponents: None,
            dichotomy: None,
            transformed_output: None,
            observable: None,
            observability_window: None,
            observability: Vec::new(),
            riccati: None,
            decay: None,
            verdict: Verdict::Inconclusive,
            failed_stage: None,
            diagnostics: Vec::new(),
            gain_samples: Vec::new(),
            decay_attempt: None,
        }
    }

    fn inconclusive(mut self, stage: Stage, why: impl Into<String>) -> Self {
        self.verdict = Verdict::Inconclusive;
        self.failed_stage = Some(stage);
        self.diagnostics.push(why.into());
        self
    }
}

fn check_options(sys: &LtvSystem, opts: &AnalysisOptions) -> Result<()> {
    opts.settings.validate()?;
    let start = sys.domain_start();
    if !(opts.horizon > start) || opts.horizon > sys.domain_end() {
        return Err(Error::Domain {
            t: opts.horizon,
            start,
            end: sys.domain_end(),
        });
    }
    if let Some(k) = opts.k {
        if k > sys.n() {
            return Err(Error::Argument(format!("k = {k} exceeds the state dimension {}", sys.n())));
        }
    }
    if !(opts.window > 0.0) || !(opts.tolerance > 0.0) {
        return Err(Error::Argument("window and tolerance must be positive".into()));
    }
    if opts.sigmas.is_empty() || opts.sigmas.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Argument("observability windows must be positive".into()));
    }
    Ok(())
}

/// Times at which structural zeros are checked.
fn probe_times(sys: &LtvSystem, horizon: f64) -> Vec<f64> {
    let mut times = linspace(sys.domain_start(), horizon, 2001);
    times.extend(sys.breakpoints_in(sys.domain_start(), horizon));
    times
}

#[derive(Debug, Clone)]
pub struct Triangular {
    pub system: LtvSystem,
    pub flow: QrFlowResult,
    /// Whether `system` differs from the input, i.e. the frame `Q(t)` is not the identity.
    pub transformed: bool,
}

/// Upper (block) triangular form of `sys` together with its QR flow. The
/// system is returned unchanged when `A` is already triangular (block
/// triangular for a pinned `k`) on the sampled times.
pub fn triangularize(sys: &LtvSystem, k: Option<usize>, opts: &AnalysisOptions) -> Result<Triangular> {
    let probes = probe_times(sys, opts.horizon);
    let already = match k {
        Some(k) => sys.lower_left_max(k, &probes) == 0.0,
        None => sys.strictly_lower_max(&probes) == 0.0,
    };
    let qr = QrSettings {
        integrator: opts.settings,
        ..QrSettings::default()
    };
    let flow = run_qr_flow(sys, None, opts.horizon, &qr)?;
    let system = if already { sys.clone() } else { triangularized_system(sys, &flow)? };
    Ok(Triangular {
        system,
        flow,
        transformed: !already,
    })
}

/// Runs the full detectability analysis. Stage failures yield an inconclusive
/// report; only invalid options are errors.
pub fn analyze(sys: &LtvSystem, opts: &AnalysisOptions) -> Result<DetectabilityReport> {
    check_options(sys, opts)?;
    let mut report = DetectabilityReport::new(sys, opts.route);
    let n = sys.n();
    let start = sys.domain_start();
    let Triangular {
        system: work,
        flow,
        transformed,
    } = match triangularize(sys, opts.k, opts) {
        Ok(t) => t,
        Err(e) => return Ok(report.inconclusive(Stage::Triangularization, format!("QR flow failed: {e}"))),
    };
    report.triangularized = transformed;

    let gap = opts.gap.unwrap_or_else(|| default_gap(sys.bound_a()));
    let k = match exponent_table(&flow, opts.window, gap) {
        Ok(est) => {
            let marginal = est.classes.iter().position(|&c| c == Growth::Marginal);
            report.exponents = Some(ExponentSummary {
                window: est.window,
                gap: est.gap,
                low: est.low.clone(),
                high: est.high.clone(),
                classes: est.classes.clone(),
                proposed_k: est.proposed_k,
            });
            match (opts.k, marginal, est.proposed_k) {
                (Some(k), _, _) => {
                    report.k_source = Some(KSource::Pinned);
                    k
                }
                (None, Some(i), _) => {
                    let why = format!(
                        "no exponential gap: state {i} has window averages in [{:.4}, {:.4}] within ±{gap:.4}",
                        est.low[i], est.high[i]
                    );
                    return Ok(report.inconclusive(Stage::Exponents, why));
                }
                (None, None, None) => {
                    return Ok(report.inconclusive(
                        Stage::Exponents,
                        "unordered diagonal: the stable growth rates are not the trailing ones",
                    ))
                }
                (None, None, Some(k)) => {
                    report.k_source = Some(KSource::Exponents);
                    k
                }
            }
        }
        Err(e) => match opts.k {
            Some(k) => {
                report.k_source = Some(KSource::Pinned);
                report.diagnostics.push(format!("exponents not estimated: {e}"));
                k
            }
            None => return Ok(report.inconclusive(Stage::Exponents, e.to_string())),
        },
    };
    report.k = Some(k);

    let cert = match CertGrid::new(opts.horizon, opts.cert_starts, opts.lags.clone())
        .and_then(|grid| certify_dichotomy(&work, k, &grid, opts.tolerance, &opts.settings))
    {
        Ok(cert) => cert,
        Err(e) => return Ok(report.inconclusive(Stage::Dichotomy, e.to_string())),
    };
    let alpha = cert.alpha;
    report.dichotomy = Some(cert);

    let part = BlockPartition::new(n, k)?;
    if opts.route == Route::Diagonal && part.is_proper() {
        match transformed_output(&work, &part, opts, alpha) {
            Ok(out) => report.transformed_output = Some(out),
            Err(e) => return Ok(report.inconclusive(Stage::Reduction, e.to_string())),
        }
    } else if opts.route == Route::Diagonal {
        report
            .diagnostics
            .push(format!("k = {k}: the system is already block diagonal, no reduction needed"));
    }

    let flow_ref = report.triangularized.then_some(&flow);
    Ok(decide(report, &work, &part, opts, start, flow_ref))
}

/// Analysis of a block-diagonal system `diag(D1, D2)` with output `[C1, C2]`.
pub fn analyze_diagonal(sys: &LtvSystem, k: usize, opts: &AnalysisOptions) -> Result<DetectabilityReport> {
    let opts = AnalysisOptions {
        k: Some(k),
        route: Route::Diagonal,
        ..opts.clone()
    };
    check_options(sys, &opts)?;
    let part = BlockPartition::new(sys.n(), k)?;
    let probes = probe_times(sys, opts.horizon);
    let lead = part.lead();
    let off = probes
        .iter()
        .map(|&t| {
            let a = sys.a().value_at(t);
            block(&a, 0, lead, lead, k).amax().max(block(&a, lead, 0, k, lead).amax())
        })
        .fold(0.0, f64::max);
    if lead > 0 && k > 0 && off != 0.0 {
        return Err(Error::Form(format!("off-diagonal blocks of A are nonzero (largest entry {off:e})")));
    }
    let mut report = DetectabilityReport::new(sys, Route::Diagonal);
    report.k = Some(k);
    report.k_source = Some(KSource::Pinned);
    let cert = match CertGrid::new(opts.horizon, opts.cert_starts, opts.lags.clone())
        .and_then(|grid| certify_dichotomy(sys, k, &grid, opts.tolerance, &opts.settings))
    {
        Ok(cert) => cert,
        Err(e) => return Ok(report.inconclusive(Stage::Dichotomy, e.to_string())),
    };
    report.dichotomy = Some(cert);
    Ok(decide(report, sys, &part, &opts, sys.domain_start(), None))
}

pub fn transformed_output(work: &LtvSystem, part: &BlockPartition, opts: &AnalysisOptions, alpha: f64) -> Result<TransformedOutput> {
    let (lead, k) = (part.lead(), part.k());
    let a = work.a();
    let (b11, b12, b22) = (a.block(0, 0, lead, lead)?, a.block(0, lead, lead, k)?, a.block(lead, lead, k, k)?);
    let start = work.domain_start();
    let tail = 10.0 / alpha;
    let horizon = opts.horizon.min(0.5 * a.domain().1 - tail);
    if !(horizon >= start + 1.0) {
        return Err(Error::Argument(format!(
            "coefficients end at {} which leaves no room for the truncated coupling integral",
            a.domain().1
        )));
    }
    let red = triangular_reduction(&b11, &b12, &b22, part, horizon, horizon + tail, &opts.settings)?;
    let p = work.p();
    let mut c1_change = 0.0_f64;
    let mut c2_tilde = Vec::new();
    let stride = (red.times.len() / 1000).max(1);
    for (j, (&t, s)) in red.times.iter().zip(&red.s).enumerate() {
        let c = work.c().value_at(t);
        let cs = &c * s;
        c1_change = c1_change.max((block(&cs, 0, 0, p, lead) - block(&c, 0, 0, p, lead)).amax());
        if j % stride == 0 || j + 1 == red.times.len() {
            c2_tilde.push((t, block(&cs, 0, lead, p, k)));
        }
    }
    let c2_tilde_bound = c2_tilde.iter().map(|(_, m)| spectral_norm(m)).fold(0.0, f64::max);
    Ok(TransformedOutput {
        c1_change,
        c2_tilde_bound,
        horizon,
        reduction: red,
        c2_tilde,
    })
}

/// Observability of `(B11, C1)`, observer synthesis and decay check.
fn decide(
    mut report: DetectabilityReport,
    work: &LtvSystem,
    part: &BlockPartition,
    opts: &AnalysisOptions,
    start: f64,
    flow: Option<&QrFlowResult>,
) -> DetectabilityReport {
    let (n, p, lead) = (part.n(), work.p(), part.lead());
    let gain = if lead == 0 {
        report
            .diagnostics
            .push("k = n: uniformly exponentially stable, no observability requirement".into());
        report.observable = None;
        CoefficientFunction::zeros(n, p)
    } else {
        let (b11, c1) = match (work.a().block(0, 0, lead, lead), work.c().block(0, 0, p, lead)) {
            (Ok(b), Ok(c)) => (b, c),
            (Err(e), _) | (_, Err(e)) => return report.inconclusive(Stage::Observer, e.to_string()),
        };
        let sub = match LtvSystem::new(b11.clone(), c1.clone()) {
            Ok(s) => s,
            Err(e) => return report.inconclusive(Stage::Observer, e.to_string()),
        };
        let starts_for = |sigma: f64| default_starts(start, opts.horizon, sigma, opts.gramian_starts);
        let (passing, reports) = match smallest_passing_sigma(&sub, &opts.sigmas, starts_for, opts.threshold, &opts.settings) {
            Ok(r) => r,
            Err(e) => return report.inconclusive(Stage::Observer, format!("Gramian evaluation failed: {e}")),
        };
        report.observability = reports;
        report.observability_window = passing;
        report.observable = Some(passing.is_some());
        if passing.is_none() {
            let last = report.observability.last().expect("at least one window");
            let w = last.weakest_start();
            report.verdict = Verdict::NotDetectable;
            report.diagnostics.push(format!(
                "(B11, C1) is not uniformly completely observable: smallest Gramian eigenvalue {:.3e}, threshold {:.3e} (window {} starting at t0 = {:.3})",
                last.beta1, last.threshold, last.sigma, last.starts[w]
            ));
            return report;
        }
        let ric = match solve_filter_riccati(&b11, &c1, &opts.weights, opts.horizon, &opts.settings) {
            Ok(r) => r,
            Err(e) => return report.inconclusive(Stage::Observer, format!("observable block but {e}")),
        };
        let gain = match synthesize_gain(n, &ric) {
            Ok(g) => g,
            Err(e) => return report.inconclusive(Stage::Observer, e.to_string()),
        };
        report.riccati = Some(ric);
        gain
    };

    let from = report.riccati.as_ref().map_or(start, |r| r.burn_in);
    let decay = match DecayGrid::new(from, opts.horizon, opts.cert_starts, opts.lags.clone())
        .and_then(|grid| certify_error_decay(work, &gain, &grid, opts.tolerance, &opts.settings))
    {
        Ok(d) => d,
        Err(e) => return report.inconclusive(Stage::Decay, e.to_string()),
    };

    report.gain_samples = linspace(start, opts.horizon, 601)
        .into_iter()
        .map(|t| {
            let l = gain.value_at(t);
            let l = match flow {
                Some(f) => &f.q[f.index_at(t)] * l,
                None => l,
            };
            (t, l)
        })
        .collect();
    if decay.valid {
        report.verdict = Verdict::Detectable;
        report.decay = Some(decay.clone());
    } else {
        let why = format!(
            "observer error does not certify decay: fitted rate {:.4}, residual {:.3e}",
            decay.mu, decay.residual
        );
        report = report.inconclusive(Stage::Decay, why);
    }
    report.decay_attempt = Some(decay);
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdicts_serialize_in_kebab_case() {
        assert_eq!(serde_json_like(Verdict::NotDetectable), "not-detectable");
        assert_eq!(serde_json_like(Stage::Exponents), "exponents");
    }

    fn serde_json_like<T: Serialize>(v: T) -> String {
        toml::Value::try_from(v).unwrap().as_str().unwrap().to_string()
    }

    #[test]
    fn options_are_checked() {
        let sys = LtvSystem::new(CoefficientFunction::scalar(1.0), CoefficientFunction::scalar(1.0)).unwrap();
        let bad = AnalysisOptions {
            k: Some(2),
            ..AnalysisOptions::default()
        };
        assert!(analyze(&sys, &bad).is_err());
    }
}
