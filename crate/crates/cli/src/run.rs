use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use ltv_core::detect::{transformed_output, triangularize};
use ltv_core::dichotomy::exponent_table;
use ltv_core::gramian::default_starts;
use ltv_core::linalg::spectral_norm;
use ltv_core::{
    analyze, catalog, certify_dichotomy, check_injection_invariance, check_uco, run_qr_flow, AnalysisOptions, BlockPartition, CertGrid,
    CoefficientFunction, DetectabilityReport, IntegratorSettings, LtvSystem, QrSettings, SystemFile, TrigTerm, Wave,
};

use crate::args::{Command, Global, Source};
use crate::output::{header, matrix_cells, matrix_columns, num, Metadata, Outputs, Report, Settings, SystemInfo};

pub struct Loaded {
    pub system: LtvSystem,
    pub file: SystemFile,
    pub source: String,
}

pub fn load(source: &Source) -> Result<Loaded> {
    let (file, source) = match (&source.system, &source.example) {
        (Some(path), _) => (SystemFile::load(path)?, path.display().to_string()),
        (None, Some(name)) => (catalog::get(name)?, format!("example:{name}")),
        (None, None) => bail!("pass --system FILE or --example NAME"),
    };
    let system = file.build()?;
    Ok(Loaded { system, file, source })
}

fn settings(global: &Global) -> IntegratorSettings {
    IntegratorSettings {
        method: global.method.into(),
        step: global.step,
        rtol: global.rtol,
        atol: global.atol,
        ..IntegratorSettings::default()
    }
}

fn horizon(global: &Global, loaded: &Loaded) -> Result<f64> {
    let h = global
        .horizon
        .or(loaded.file.horizon)
        .unwrap_or_else(|| ltv_core::dichotomy::DEFAULT_HORIZON.min(loaded.system.domain_end()));
    if !(h > loaded.system.domain_start()) || !h.is_finite() {
        bail!("horizon must be positive and finite, got {h}");
    }
    Ok(h)
}

/// Executes one subcommand: prints its JSON result and writes the report and CSV curves.
pub fn run(global: &Global, command: &Command) -> Result<Value> {
    let loaded = load(command.source())?;
    let settings = settings(global);
    settings.validate()?;
    let horizon = horizon(global, &loaded)?;
    let mut out = Outputs::new(&global.out_dir)?;
    let opts = AnalysisOptions {
        horizon,
        settings,
        ..AnalysisOptions::default()
    };
    let sys = &loaded.system;
    let pinned = |k: &Option<usize>| k.or(loaded.file.partition.map(|p| p.k));

    let result = match command {
        Command::Qr { .. } => qr(sys, &opts, &mut out)?,
        Command::Dichotomy { k, starts, lags, tol, .. } => {
            let k = resolve_k(sys, pinned(k), &opts)?;
            let grid = CertGrid::new(horizon, *starts, lags.clone())?;
            let cert = certify_dichotomy(sys, k, &grid, *tol, &settings)?;
            out.csv(
                "dichotomy.csv",
                &header(&["t0", "t", "side", "lag", "norm", "bound"]),
                cert.samples.iter().map(|s| {
                    let bound = cert.k_const * (-cert.alpha * s.lag()).exp();
                    let side = if s.stable { "stable" } else { "unstable" };
                    vec![num(s.t0), num(s.t), side.to_string(), num(s.lag()), num(s.norm), num(bound)]
                }),
            )?;
            serde_json::to_value(&cert)?
        }
        Command::Gramian {
            sigma,
            starts,
            threshold,
            injection_trials,
            ..
        } => gramian(sys, sigma, *starts, *threshold, *injection_trials, global.seed, &opts, &mut out)?,
        Command::Reduce { k, .. } => reduce(sys, pinned(k), &opts, &mut out)?,
        Command::Observe { k, .. } => {
            let opts = AnalysisOptions { k: pinned(k), ..opts };
            let report = analyze(sys, &opts)?;
            write_observer_curves(&report, &mut out)?;
            json!({
                "verdict": report.verdict,
                "k": report.k,
                "observable": report.observable,
                "riccati": report.riccati,
                "decay": report.decay_attempt,
                "diagnostics": report.diagnostics,
            })
        }
        Command::Analyze { k, route, sigma, tol, .. } => {
            let opts = AnalysisOptions {
                k: pinned(k),
                route: (*route).into(),
                sigmas: sigma.clone(),
                tolerance: *tol,
                ..opts
            };
            let report = analyze(sys, &opts)?;
            write_observer_curves(&report, &mut out)?;
            write_observability(&report.observability, &mut out)?;
            if let Some(t) = &report.transformed_output {
                write_reduction(&t.reduction, &mut out)?;
                let p = sys.p();
                let k = t.reduction.k;
                let mut cols = vec!["t".to_string()];
                cols.extend(matrix_columns("c2", p, k));
                out.csv(
                    "transformed_output.csv",
                    &cols,
                    t.c2_tilde
                        .iter()
                        .map(|(time, m)| std::iter::once(num(*time)).chain(matrix_cells(m)).collect::<Vec<_>>()),
                )?;
            }
            serde_json::to_value(&report)?
        }
    };

    let report = Report {
        schema_version: crate::output::SCHEMA_VERSION,
        command: command.name(),
        seed: global.seed,
        system: SystemInfo {
            name: sys.name().to_string(),
            source: loaded.source.clone(),
            n: sys.n(),
            p: sys.p(),
        },
        settings: Settings {
            method: settings.method,
            step: settings.step,
            rtol: settings.rtol,
            atol: settings.atol,
            horizon,
        },
        result: result.clone(),
        files: Vec::new(),
        metadata: Metadata::now(),
    };
    out.finish(report)?;
    Ok(result)
}

/// Pinned `k`, or the rank proposed by the QR-flow exponents.
fn resolve_k(sys: &LtvSystem, k: Option<usize>, opts: &AnalysisOptions) -> Result<usize> {
    if let Some(k) = k {
        return Ok(k);
    }
    let qr = QrSettings {
        integrator: opts.settings,
        ..QrSettings::default()
    };
    let flow = run_qr_flow(sys, None, opts.horizon, &qr)?;
    let gap = ltv_core::dichotomy::default_gap(sys.bound_a());
    let est = exponent_table(&flow, opts.window, gap)?;
    est.proposed_k
        .context("the exponents do not determine k (no gap or unordered growth rates); pass --k")
}

fn qr(sys: &LtvSystem, opts: &AnalysisOptions, out: &mut Outputs) -> Result<Value> {
    let qr = QrSettings {
        integrator: opts.settings,
        ..QrSettings::default()
    };
    let flow = run_qr_flow(sys, None, opts.horizon, &qr)?;
    let n = sys.n();
    let mut cols = header(&["t"]);
    cols.extend((1..=n).map(|i| format!("nu_{i}")));
    cols.extend((1..=n).map(|i| format!("b_{i}{i}")));
    cols.push("ortho_residual".into());
    let stride = (flow.times.len() / 5000).max(1);
    let rows = (0..flow.times.len())
        .filter(|j| j % stride == 0 || j + 1 == flow.times.len())
        .map(|j| {
            let mut row = vec![num(flow.times[j])];
            row.extend(flow.nu[j].iter().map(|v| num(*v)));
            row.extend(flow.b[j].diagonal().iter().map(|v| num(*v)));
            row.push(num(flow.ortho_residual[j]));
            row
        });
    out.csv("qr.csv", &cols, rows)?;
    let span = flow.horizon() - flow.start();
    let nu_end = flow.nu_at(flow.horizon());
    let nu_start = flow.nu_at(flow.start());
    let averages: Vec<f64> = (0..n).map(|i| (nu_end[i] - nu_start[i]) / span).collect();
    Ok(json!({
        "horizon": flow.horizon(),
        "samples": flow.times.len(),
        "average_growth": averages,
        "max_ortho_residual": flow.max_ortho_residual(),
        "max_lower_before_zeroing": flow.max_lower_before_zeroing,
        "reorthonormalizations": flow.reorthonormalizations,
    }))
}

/// Bounded random gain: a constant part plus one harmonic per entry, all amplitudes in [-1, 1].
fn random_gain(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Result<CoefficientFunction> {
    let offset = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
    let mut terms = Vec::with_capacity(n * p);
    for row in 0..n {
        for col in 0..p {
            terms.push(TrigTerm {
                row,
                col,
                amplitude: rng.random_range(-1.0..1.0),
                frequency: rng.random_range(0.2..2.0),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
                wave: Wave::Sin,
            });
        }
    }
    Ok(CoefficientFunction::periodic(offset, terms)?)
}

#[allow(clippy::too_many_arguments)]
fn gramian(
    sys: &LtvSystem,
    sigmas: &[f64],
    count: usize,
    threshold: Option<f64>,
    trials: usize,
    seed: u64,
    opts: &AnalysisOptions,
    out: &mut Outputs,
) -> Result<Value> {
    if sigmas.is_empty() {
        bail!("--sigma needs at least one window length");
    }
    let start = sys.domain_start();
    let mut reports = Vec::new();
    for &sigma in sigmas {
        let starts = default_starts(start, opts.horizon, sigma, count)?;
        reports.push(check_uco(sys, sigma, &starts, threshold, &opts.settings)?);
    }
    write_observability(&reports, out)?;

    let mut injection = Vec::new();
    if trials > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        for trial in 0..trials {
            let l = random_gain(&mut rng, sys.n(), sys.p())?;
            for &sigma in sigmas {
                let starts = default_starts(start, opts.horizon, sigma, count)?;
                let (open, injected) = check_injection_invariance(sys, &l, sigma, &starts, threshold, &opts.settings)?;
                rows.push(vec![
                    trial.to_string(),
                    num(sigma),
                    open.uco.to_string(),
                    injected.uco.to_string(),
                    num(open.beta1),
                    num(injected.beta1),
                ]);
                injection.push(json!({
                    "trial": trial,
                    "sigma": sigma,
                    "open_uco": open.uco,
                    "injected_uco": injected.uco,
                    "agree": open.uco == injected.uco,
                }));
            }
        }
        out.csv(
            "injection.csv",
            &header(&["trial", "sigma", "open_uco", "injected_uco", "open_beta1", "injected_beta1"]),
            rows,
        )?;
    }
    let verdicts: Vec<Value> = reports
        .iter()
        .map(|r| {
            json!({
                "sigma": r.sigma,
                "uco": r.uco,
                "beta1": r.beta1,
                "beta2": r.beta2,
                "threshold": r.threshold,
                "weakest_start": r.starts[r.weakest_start()],
            })
        })
        .collect();
    let agreements = injection.iter().filter(|v| v["agree"] == true).count();
    Ok(json!({
        "windows": verdicts,
        "injection": {
            "trials": trials,
            "checks": injection.len(),
            "agreements": agreements,
            "cases": injection,
        },
    }))
}

fn reduce(sys: &LtvSystem, k: Option<usize>, opts: &AnalysisOptions, out: &mut Outputs) -> Result<Value> {
    let k = resolve_k(sys, k, opts)?;
    let part = BlockPartition::new(sys.n(), k)?;
    if !part.is_proper() {
        bail!(
            "reduce needs 0 < k < n (got k = {k}, n = {}): the system is already block diagonal",
            sys.n()
        );
    }
    let tri = triangularize(sys, Some(k), opts)?;
    let grid = CertGrid::new(opts.horizon, opts.cert_starts, opts.lags.clone())?;
    let cert = certify_dichotomy(&tri.system, k, &grid, opts.tolerance, &opts.settings)?;
    let t = transformed_output(&tri.system, &part, opts, cert.alpha)?;
    write_reduction(&t.reduction, out)?;
    Ok(json!({
        "k": k,
        "alpha": cert.alpha,
        "triangularized": tri.transformed,
        "horizon": t.horizon,
        "c1_change": t.c1_change,
        "c2_tilde_bound": t.c2_tilde_bound,
        "reduction": t.reduction,
    }))
}

fn write_reduction(red: &ltv_core::BlockDiagReduction, out: &mut Outputs) -> Result<()> {
    let stride = (red.times.len() / 5000).max(1);
    let rows = (0..red.times.len())
        .filter(|j| j % stride == 0 || j + 1 == red.times.len())
        .map(|j| {
            vec![
                num(red.times[j]),
                num(spectral_norm(&red.s[j])),
                num(spectral_norm(&red.sinv[j])),
                num(red.offdiag[j]),
            ]
        });
    out.csv("reduce.csv", &header(&["t", "s_norm", "sinv_norm", "offdiag_norm"]), rows)
}

fn write_observability(reports: &[ltv_core::GramianReport], out: &mut Outputs) -> Result<()> {
    let rows = reports.iter().flat_map(|r| {
        r.starts
            .iter()
            .zip(r.lambda_min.iter().zip(&r.lambda_max))
            .map(move |(t0, (lo, hi))| vec![num(r.sigma), num(*t0), num(*lo), num(*hi)])
    });
    out.csv("gramian.csv", &header(&["sigma", "t0", "lambda_min", "lambda_max"]), rows)
}

fn write_observer_curves(report: &DetectabilityReport, out: &mut Outputs) -> Result<()> {
    if let Some((_, first)) = report.gain_samples.first() {
        let mut cols = vec!["t".to_string()];
        cols.extend(matrix_columns("l", first.nrows(), first.ncols()));
        out.csv(
            "gain.csv",
            &cols,
            report
                .gain_samples
                .iter()
                .map(|(t, l)| std::iter::once(num(*t)).chain(matrix_cells(l)).collect::<Vec<_>>()),
        )?;
    }
    if let Some(decay) = &report.decay_attempt {
        out.csv(
            "decay.csv",
            &header(&["t0", "t", "lag", "norm", "bound"]),
            decay.samples.iter().map(|s| {
                let lag = s.t - s.t0;
                vec![num(s.t0), num(s.t), num(lag), num(s.norm), num(decay.k_e * (-decay.mu * lag).exp())]
            }),
        )?;
    }
    Ok(())
}
