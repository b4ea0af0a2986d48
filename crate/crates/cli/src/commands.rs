//! The four subcommands. Each `cmd_*` function prints to the given streams
//! and returns the process exit code.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Result;
use hyfit_core::baselines::{bench_scaling, gradient_run, BenchOptions, BenchReport, GradientConfig, Method};
use hyfit_core::estimator::{convergence_time, estimation_error, run, ErrorSample, HybridArc, Mode};
use hyfit_core::excitation::{check_design_conditions, excitation_level, ExcitationReport};
use hyfit_core::robustness::{verify_bound, BoundKind, BoundReport, GainBound, NoiseBoundInputs};
use hyfit_core::signals::{sup_norm_bound, ParamSchedule, SignalSpec};

use crate::config::{Scenario, OUT_ENV};
use crate::exit;
use crate::output::{ensure_dir, file_in, write_arc, write_columns, write_jumps, write_text};
use crate::scenarios;

/// Output directory for commands without a scenario file.
pub fn default_out_dir(flag: Option<&Path>) -> PathBuf {
    if let Some(dir) = flag {
        return dir.to_path_buf();
    }
    match std::env::var_os(OUT_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => PathBuf::from("out"),
    }
}

/// Where a scenario's files go: the flag, then the environment, then the
/// scenario's own `output_dir`.
pub fn scenario_out_dir(s: &Scenario, flag: Option<&Path>) -> PathBuf {
    match flag {
        Some(dir) => dir.to_path_buf(),
        None => s.config.output_dir(),
    }
}

fn load(path: &Path, err: &mut dyn Write) -> Option<Scenario> {
    match Scenario::load(path) {
        Ok(s) => Some(s),
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            None
        }
    }
}

/// Excitation analysis of the first window, with the persistence check
/// over the whole horizon when a window length is configured (or implied by
/// piecewise mode).
pub fn excitation_report(s: &Scenario) -> hyfit_core::Result<ExcitationReport> {
    let c = &s.config;
    let mu = match (c.pe_window, c.mode) {
        (Some(mu), _) => Some(mu),
        (None, Mode::Piecewise) => Some(c.delta.min(c.t_end)),
        (None, Mode::Constant) => None,
    };
    ExcitationReport::analyze(
        &s.regressor,
        c.gamma1,
        c.gamma2,
        c.delta,
        (0.0, c.delta - c.initial_timer),
        c.step,
        mu.map(|mu| (mu, c.t_end)),
        Some(s.truth()),
    )
}

pub fn cmd_check(path: &Path, dump: bool, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let Some(s) = load(path, err) else { return exit::CONFIG };
    if dump {
        let _ = write!(out, "{}", s.config.to_toml());
        return exit::OK;
    }
    let report = match excitation_report(&s) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "error: {}: {e}", path.display());
            return exit::CONFIG;
        }
    };
    let _ = writeln!(out, "scenario = {}", s.name());
    let _ = write!(out, "{}", report.to_text());
    let warnings = report.warnings();
    for w in &warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    if warnings.is_empty() {
        exit::OK
    } else {
        exit::WARNINGS
    }
}

/// Constants of the noise bounds for a scenario: excitation over the first
/// window, regressor bound over the whole horizon.
pub fn bound_inputs(s: &Scenario, gain_bound: GainBound) -> hyfit_core::Result<NoiseBoundInputs> {
    let c = &s.config;
    let cfg = c.estimator();
    let span = c.delta - c.initial_timer;
    let eta = excitation_level(&s.regressor, 0.0, span, c.step)?;
    let phi_m = sup_norm_bound(&s.regressor, 0.0, c.t_end, c.step)?;
    let design = check_design_conditions(eta, phi_m, c.gamma1, c.gamma2, span)?;
    let mut inputs = NoiseBoundInputs::new(&cfg, &design, eta, phi_m, &s.noise, c.t_end, c.step)?;
    inputs.gain_bound = gain_bound;
    Ok(inputs)
}

/// `(1 + κ₁κ₂)(γ₁ + γ₂) δ φ_M ∫₀ᵀ|w|`, the size of the noise-driven error
/// injected by one cancelling jump.
pub fn jump_noise_bound(p: &NoiseBoundInputs, horizon: f64) -> f64 {
    (1.0 + p.kappa1 * p.kappa2) * (p.gamma1 + p.gamma2) * p.delta * p.phi_m * p.integral_abs_noise(horizon)
}

pub struct Simulation {
    pub arc: HybridArc,
    pub errors: Vec<ErrorSample>,
    pub convergence: Option<(f64, usize)>,
    pub bound: Option<BoundReport>,
    /// Why a requested bound could not be evaluated.
    pub bound_error: Option<String>,
}

impl Simulation {
    pub fn max_error_after(&self, t: f64, min_j: usize) -> f64 {
        self.errors
            .iter()
            .filter(|e| e.t >= t && e.j >= min_j)
            .map(|e| e.err1.max(e.err2))
            .fold(0.0, f64::max)
    }

    pub fn exit_code(&self) -> i32 {
        if self.arc.failure.is_some() {
            exit::RUNTIME
        } else if self.bound_error.is_some() || self.bound.as_ref().is_some_and(|b| !b.passes) {
            exit::WARNINGS
        } else {
            exit::OK
        }
    }

    pub fn summary(&self, s: &Scenario) -> String {
        let c = &s.config;
        let mut out = String::new();
        let _ = writeln!(out, "scenario = {}", c.name);
        let _ = writeln!(out, "mode = {}", if c.mode == Mode::Piecewise { "piecewise" } else { "constant" });
        let _ = writeln!(out, "n = {}", c.n);
        let _ = writeln!(out, "t_end = {}", c.t_end);
        let _ = writeln!(out, "samples = {}", self.errors.len());
        let _ = writeln!(out, "jumps = {}", self.arc.jumps.len());
        if self.arc.jumps.is_empty() && self.arc.failure.is_none() {
            let _ = writeln!(out, "note = no jumps: t_end does not exceed the first window");
        }
        let fallbacks = self.arc.jumps.iter().filter(|j| j.fallback).count();
        if fallbacks > 0 {
            let _ = writeln!(out, "fallback_jumps = {fallbacks}");
        }
        if let Some(e) = self.errors.last() {
            let _ = writeln!(out, "final_t = {}", e.t);
            let _ = writeln!(out, "final_err1 = {:e}", e.err1);
            let _ = writeln!(out, "final_err2 = {:e}", e.err2);
        }
        let _ = writeln!(out, "convergence_tol = {:e}", c.convergence_tol);
        match self.convergence {
            Some((t, j)) => {
                let _ = writeln!(out, "converged_at = ({t}, {j})");
            }
            None => {
                let _ = writeln!(out, "converged_at = never");
            }
        }
        if let Some(f) = &self.arc.failure {
            let _ = writeln!(out, "failure = {f}");
        }
        if let Some(b) = &self.bound {
            let _ = writeln!(out, "bound = {}", kind_name(b.kind));
            let _ = writeln!(out, "bound_min_margin = {:e}", b.min_margin);
            let _ = writeln!(out, "bound_passes = {}", b.passes);
        }
        if let Some(e) = &self.bound_error {
            let _ = writeln!(out, "bound_error = {e}");
        }
        out
    }
}

fn kind_name(kind: BoundKind) -> &'static str {
    match kind {
        BoundKind::Iss => "iss",
        BoundKind::Iiss => "iiss",
    }
}

pub fn simulate(s: &Scenario, bounds: Option<BoundKind>, gain_bound: GainBound) -> hyfit_core::Result<Simulation> {
    let c = &s.config;
    let arc = run(&c.estimator(), &s.regressor, s.truth(), &s.noise, c.t_end)?;
    let errors = estimation_error(&arc, s.truth());
    let convergence = if arc.failure.is_none() { convergence_time(&errors, c.convergence_tol) } else { None };
    let (bound, bound_error) = match bounds {
        None => (None, None),
        Some(kind) => match bound_inputs(s, gain_bound).and_then(|p| verify_bound(&arc, s.truth(), kind, &p)) {
            Ok(b) => (Some(b), None),
            Err(e) => (None, Some(e.to_string())),
        },
    };
    Ok(Simulation { arc, errors, convergence, bound, bound_error })
}

/// Write `<name>_arc.csv`, `<name>_jumps.csv` and `<name>_summary.txt`.
pub fn write_simulation(sim: &Simulation, s: &Scenario, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let name = s.name();
    let arc = file_in(dir, name, "_arc.csv");
    let jumps = file_in(dir, name, "_jumps.csv");
    let summary = file_in(dir, name, "_summary.txt");
    write_arc(&arc, &sim.arc, &sim.errors, sim.bound.as_ref())?;
    write_jumps(&jumps, &sim.arc)?;
    write_text(&summary, &sim.summary(s))?;
    Ok(vec![arc, jumps, summary])
}

pub struct SimulateArgs<'a> {
    pub config: &'a Path,
    pub csv_dir: Option<&'a Path>,
    pub bounds: Option<BoundKind>,
    pub gain_bound: GainBound,
    pub dump_config: bool,
}

pub fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let Some(s) = load(args.config, err) else { return exit::CONFIG };
    if args.dump_config {
        let _ = write!(out, "{}", s.config.to_toml());
        return exit::OK;
    }
    let sim = match simulate(&s, args.bounds, args.gain_bound) {
        Ok(sim) => sim,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return exit::RUNTIME;
        }
    };
    let dir = scenario_out_dir(&s, args.csv_dir);
    let _ = write!(out, "{}", sim.summary(&s));
    match write_simulation(&sim, &s, &dir) {
        Ok(files) => {
            for f in files {
                let _ = writeln!(out, "wrote {}", f.display());
            }
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            return exit::RUNTIME;
        }
    }
    if let Some(f) = &sim.arc.failure {
        let _ = writeln!(err, "error: estimation failed: {f}");
    }
    if let Some(e) = &sim.bound_error {
        let _ = writeln!(err, "warning: bound not evaluated: {e}");
    }
    if let Some(b) = sim.bound.as_ref().filter(|b| !b.passes) {
        let _ = writeln!(err, "warning: {} bound violated by {:e}", kind_name(b.kind), b.max_violation);
    }
    sim.exit_code()
}

pub fn run_bench(opts: &BenchOptions, dir: &Path) -> Result<(BenchReport, Vec<PathBuf>)> {
    let report = bench_scaling(opts)?;
    ensure_dir(dir)?;
    let csv = dir.join("bench.csv");
    let txt = dir.join("bench.txt");
    write_text(&csv, &report.to_csv())?;
    write_text(&txt, &report.to_table())?;
    Ok((report, vec![csv, txt]))
}

pub fn cmd_bench(opts: &BenchOptions, dir: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    if opts.dims.is_empty() {
        let _ = writeln!(err, "error: --dims needs at least one dimension");
        return exit::CONFIG;
    }
    if opts.reps < 3 {
        let _ = writeln!(err, "warning: {} repetition(s); the reported medians are single timings", opts.reps);
    }
    match run_bench(opts, dir) {
        Ok((report, files)) => {
            let _ = write!(out, "{}", report.to_table());
            for f in files {
                let _ = writeln!(out, "wrote {}", f.display());
            }
            exit::OK
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            match e.downcast_ref::<hyfit_core::Error>() {
                Some(hyfit_core::Error::InvalidConfig(_)) => exit::CONFIG,
                _ => exit::RUNTIME,
            }
        }
    }
}

pub const REPRODUCTIONS: [&str; 3] = ["fig1", "fig2", "table1"];

/// One line of a findings file.
pub struct Finding {
    pub label: String,
    pub pass: bool,
    pub detail: String,
}

impl Finding {
    fn new(label: &str, pass: bool, detail: String) -> Self {
        Self { label: label.to_string(), pass, detail }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.label, self.detail)
    }
}

fn findings_text(title: &str, findings: &[Finding]) -> String {
    let mut s = format!("# {title}\n");
    for f in findings {
        s.push_str(&f.line());
        s.push('\n');
    }
    s
}

fn simulate_builtin(name: &str, bounds: Option<BoundKind>, dir: &Path) -> Result<(Scenario, Simulation)> {
    let s = scenarios::builtin(name).expect("known scenario");
    let sim = simulate(&s, bounds, GainBound::Stated)?;
    write_simulation(&sim, &s, dir)?;
    Ok((s, sim))
}

fn fig1(dir: &Path) -> Result<Vec<Finding>> {
    let (clean_s, clean) = simulate_builtin("constant", None, dir)?;
    let (noisy_s, noisy) = simulate_builtin("constant-noisy", Some(BoundKind::Iiss), dir)?;
    let mut findings = Vec::new();

    let tol = 1e-4;
    let worst = clean.max_error_after(clean_s.config.delta, 1);
    findings.push(Finding::new(
        "noise-free convergence in one window",
        clean.arc.failure.is_none() && worst <= tol,
        format!("max error for t >= delta, j >= 1 is {worst:.3e} (limit {tol:e}); converged at {:?}", clean.convergence),
    ));

    match &noisy.bound {
        Some(b) => findings.push(Finding::new(
            "noisy run within the iISS bound",
            b.passes,
            format!("min margin {:.4e}", b.min_margin),
        )),
        None => findings.push(Finding::new(
            "noisy run within the iISS bound",
            false,
            noisy.bound_error.clone().unwrap_or_default(),
        )),
    }
    let inputs = bound_inputs(&noisy_s, GainBound::Stated)?;
    let jump = jump_noise_bound(&inputs, noisy_s.config.t_end);
    let worst_noisy = noisy.max_error_after(noisy_s.config.delta, 1);
    findings.push(Finding::new(
        "noisy error after the first jump",
        worst_noisy <= 10.0 * jump,
        format!("max error {worst_noisy:.4} vs 10 x jump bound {:.4}", 10.0 * jump),
    ));

    let c = &clean_s.config;
    let mut g = GradientConfig::new(0.5, c.step);
    g.initial_theta = c.initial_theta.clone();
    g.record_every = c.record_every;
    let grad = gradient_run(&g, &clean_s.regressor, clean_s.truth(), &clean_s.noise, c.t_end)?;
    write_columns(
        &dir.join("constant_gradient.csv"),
        &grad.trajectory.times,
        &[("err".to_string(), grad.errors.clone())],
    )?;
    let hybrid_final = clean.errors.last().map_or(f64::NAN, |e| e.err1.max(e.err2));
    findings.push(Finding::new(
        "gradient descent fails where the hybrid estimator converges",
        grad.final_error() > 0.1 && hybrid_final <= tol,
        format!("final error gradient {:.4}, hybrid {hybrid_final:.3e}", grad.final_error()),
    ));
    Ok(findings)
}

/// Basis lists of an augmented regressor.
fn augmented_basis(spec: &SignalSpec) -> Option<&[Vec<hyfit_core::signals::BasisFn>]> {
    match spec {
        SignalSpec::Augmented { basis, .. } => Some(basis),
        _ => None,
    }
}

fn fig2(dir: &Path) -> Result<Vec<Finding>> {
    let mut findings = Vec::new();
    for name in ["timevarying-a", "timevarying-b"] {
        let (s, sim) = simulate_builtin(name, None, dir)?;
        let basis = augmented_basis(&s.regressor).expect("augmented regressor").to_vec();
        let truth_gamma = s.truth().value_at(0.0);
        let truth = ParamSchedule::Basis { coefficients: truth_gamma.iter().copied().collect(), basis: basis.clone() };
        let mut times = Vec::new();
        let m = basis.len();
        let mut cols: Vec<(String, Vec<f64>)> = (1..=m)
            .map(|i| (format!("theta_hat_{i}"), Vec::new()))
            .chain((1..=m).map(|i| (format!("theta_true_{i}"), Vec::new())))
            .collect();
        for (_, sample) in sim.arc.samples() {
            let est = ParamSchedule::Basis { coefficients: sample.theta1.iter().copied().collect(), basis: basis.clone() };
            let hat = est.value_at(sample.t);
            let tru = truth.value_at(sample.t);
            times.push(sample.t);
            for i in 0..m {
                cols[i].1.push(hat[i]);
                cols[m + i].1.push(tru[i]);
            }
        }
        write_columns(&dir.join(format!("{name}_reconstruction.csv")), &times, &cols)?;
        let worst = sim.max_error_after(s.config.delta, 1);
        findings.push(Finding::new(
            &format!("{name}: coefficients recovered after the first jump"),
            sim.arc.failure.is_none() && !sim.arc.jumps.is_empty() && worst <= 1e-3,
            format!("max coefficient error {worst:.3e} (limit 1e-3)"),
        ));
    }
    Ok(findings)
}

/// Trend checks on a benchmark report.
pub fn table1_findings(report: &BenchReport) -> Vec<Finding> {
    let dims = report.dims();
    let speedups: Vec<f64> = dims.iter().filter_map(|&n| report.speedup(n)).collect();
    let monotone = speedups.len() == dims.len() && speedups.windows(2).all(|w| w[1] > w[0]);
    let last = dims.last().copied().unwrap_or(0);
    let last_speedup = report.speedup(last).unwrap_or(f64::NAN);
    let gap = report.slope(Method::Drem).unwrap_or(f64::NAN) - report.slope(Method::Hybrid).unwrap_or(f64::NAN);
    let list = speedups.iter().map(|s| format!("{s:.1}")).collect::<Vec<_>>().join(", ");
    vec![
        Finding::new("speedup increases with n", monotone, format!("speedups [{list}] for n = {dims:?}")),
        Finding::new(
            &format!("speedup at n = {last} at least 10x"),
            last_speedup >= 10.0,
            format!("{last_speedup:.2}x"),
        ),
        Finding::new(
            "log-log slope gap at least 1",
            gap >= 1.0,
            format!(
                "slope drem {:.3} - slope hybrid {:.3} = {gap:.3}",
                report.slope(Method::Drem).unwrap_or(f64::NAN),
                report.slope(Method::Hybrid).unwrap_or(f64::NAN)
            ),
        ),
    ]
}

fn table1(dir: &Path) -> Result<Vec<Finding>> {
    let mut opts = BenchOptions::default();
    opts.dims.retain(|&n| n <= 200);
    let (report, _) = run_bench(&opts, dir)?;
    Ok(table1_findings(&report))
}

pub fn reproduce(name: &str, dir: &Path) -> Result<Option<(Vec<Finding>, PathBuf)>> {
    let findings = match name {
        "fig1" => {
            ensure_dir(dir)?;
            fig1(dir)?
        }
        "fig2" => {
            ensure_dir(dir)?;
            fig2(dir)?
        }
        "table1" => table1(dir)?,
        _ => return Ok(None),
    };
    let path = dir.join(format!("{name}_findings.txt"));
    write_text(&path, &findings_text(name, &findings))?;
    Ok(Some((findings, path)))
}

pub fn cmd_reproduce(name: &str, dir: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match reproduce(name, dir) {
        Ok(Some((findings, path))) => {
            for f in &findings {
                let _ = writeln!(out, "{}", f.line());
            }
            let _ = writeln!(out, "wrote {}", path.display());
            if findings.iter().all(|f| f.pass) {
                exit::OK
            } else {
                exit::WARNINGS
            }
        }
        Ok(None) => {
            let _ = writeln!(err, "error: unknown reproduction '{name}'; valid names: {}", REPRODUCTIONS.join(", "));
            exit::CONFIG
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            exit::RUNTIME
        }
    }
}
