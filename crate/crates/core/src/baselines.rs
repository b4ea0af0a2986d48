//! Reference estimators and the scaling benchmark.
//!
//! [`gradient_run`] is the classical single gradient flow. [`drem_run`] is a
//! dynamic regressor extension and mixing pipeline: `n − 1` first-order
//! filters extend the regressor to an `n × n` matrix, and multiplying by its
//! adjugate yields `n` scalar regressions `𝒴_k = Δ θ*_k` driven by the
//! determinant `Δ`. Forming `Δ` and the adjugate product costs `O(n³)` per
//! evaluation.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::estimator::{estimation_error, run, EstimatorConfig};
use crate::numerics::{rk4_gradient_step, steps_between, time_grid, Signal, StageSamples, Trajectory, Vector};
use crate::signals::{Measurement, NoiseSpec, ParamSchedule, SignalSpec};

/// Estimates of a baseline together with their error against the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRun {
    pub trajectory: Trajectory,
    pub errors: Vec<f64>,
    pub steps: usize,
    /// Per channel: the mixed determinant had vanished (or was not finite)
    /// at the end of the run, so that channel was frozen. Always `false`
    /// for the gradient baseline.
    pub degenerate: Vec<bool>,
    /// `∫ Δ²` over the run (DREM only).
    pub excitation_integral: Option<f64>,
}

impl BaselineRun {
    pub fn final_error(&self) -> f64 {
        self.errors.last().copied().unwrap_or(f64::NAN)
    }

    pub fn final_estimate(&self) -> Option<&Vector> {
        self.trajectory.values.last()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientConfig {
    pub gamma: f64,
    pub step: f64,
    pub initial_theta: Option<Vec<f64>>,
    pub record_every: usize,
}

impl GradientConfig {
    pub fn new(gamma: f64, step: f64) -> Self {
        Self { gamma, step, initial_theta: None, record_every: 1 }
    }
}

fn initial(theta: &Option<Vec<f64>>, n: usize) -> Result<Vector> {
    match theta {
        Some(v) if v.len() != n => Err(shape(format!("initial_theta has length {}, expected {n}", v.len()))),
        Some(v) => Ok(Vector::from_vec(v.clone())),
        None => Ok(Vector::zeros(n)),
    }
}

fn check_common(gamma: f64, step: f64, record_every: usize, t_end: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(invalid(format!("gamma must be positive (got {gamma})")));
    }
    if !(step > 0.0 && step.is_finite()) || !(t_end > 0.0 && t_end.is_finite()) {
        return Err(invalid("step and t_end must be positive"));
    }
    if record_every == 0 {
        return Err(invalid("record_every must be positive"));
    }
    Ok(())
}

struct Recorder<'a> {
    schedule: &'a ParamSchedule,
    every: usize,
    times: Vec<f64>,
    values: Vec<Vector>,
    errors: Vec<f64>,
}

impl<'a> Recorder<'a> {
    fn new(schedule: &'a ParamSchedule, every: usize) -> Self {
        Self { schedule, every, times: Vec::new(), values: Vec::new(), errors: Vec::new() }
    }

    fn push(&mut self, k: usize, last: bool, t: f64, theta: &Vector) {
        if k.is_multiple_of(self.every) || last {
            self.errors.push((theta - self.schedule.value_at(t)).norm());
            self.times.push(t);
            self.values.push(theta.clone());
        }
    }

    fn finish(self, steps: usize, degenerate: Vec<bool>, excitation_integral: Option<f64>) -> BaselineRun {
        BaselineRun {
            trajectory: Trajectory { times: self.times, values: self.values },
            errors: self.errors,
            steps,
            degenerate,
            excitation_integral,
        }
    }
}

/// `θ̇ = −γ φ (φᵀθ − y)` on `[0, t_end]`.
pub fn gradient_run(
    cfg: &GradientConfig,
    phi: &SignalSpec,
    schedule: &ParamSchedule,
    noise: &NoiseSpec,
    t_end: f64,
) -> Result<BaselineRun> {
    check_common(cfg.gamma, cfg.step, cfg.record_every, t_end)?;
    let meas = Measurement::new(phi, schedule, noise)?;
    let n = meas.dim();
    let mut theta = initial(&cfg.initial_theta, n)?;
    let grid = time_grid(0.0, t_end, cfg.step)?;
    let steps = grid.len() - 1;
    let mut stages = StageSamples::zeros(n);
    let mut rec = Recorder::new(schedule, cfg.record_every);
    rec.push(0, steps == 0, 0.0, &theta);
    for (k, w) in grid.windows(2).enumerate() {
        let (t, h) = (w[0], w[1] - w[0]);
        stages.fill(phi, t, h)?;
        let y = [
            meas.output_with(t, stages.start.as_slice())?,
            meas.output_with(t + 0.5 * h, stages.mid.as_slice())?,
            meas.output_with(w[1], stages.end.as_slice())?,
        ];
        rk4_gradient_step(&mut theta, cfg.gamma, &stages, y, h);
        if !theta.iter().all(|x| x.is_finite()) {
            return Err(Error::IntegrationDiverged { t: w[1] });
        }
        rec.push(k + 1, k + 1 == steps, w[1], &theta);
    }
    Ok(rec.finish(steps, vec![false; n], None))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DremConfig {
    pub gamma: f64,
    pub step: f64,
    pub initial_theta: Option<Vec<f64>>,
    /// Poles `a_k` of the filters `a_k / (s + a_k)`, one per extension
    /// row. Defaults to `a_k = k + 1`.
    pub filter_rates: Option<Vec<f64>>,
    /// `|Δ|` below this freezes the scalar channels.
    pub det_floor: f64,
    /// Divide the channel update by `1 + Δ²`.
    pub normalized: bool,
    pub record_every: usize,
}

impl DremConfig {
    pub fn new(gamma: f64, step: f64) -> Self {
        Self {
            gamma,
            step,
            initial_theta: None,
            filter_rates: None,
            det_floor: 1e-12,
            normalized: false,
            record_every: 1,
        }
    }

    pub fn rates(&self, n: usize) -> Result<Vec<f64>> {
        let rates = match &self.filter_rates {
            Some(r) => r.clone(),
            None => (1..n).map(|k| (k + 1) as f64).collect(),
        };
        if rates.len() != n.saturating_sub(1) {
            return Err(shape(format!("need {} filter rates, got {}", n.saturating_sub(1), rates.len())));
        }
        if rates.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(invalid("filter rates must be positive"));
        }
        let mut sorted = rates.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("filter rates must be distinct"));
        }
        Ok(rates)
    }
}

/// Layout of the flattened DREM state: `n − 1` filtered regressors
/// (row-wise), `n − 1` filtered outputs, then the `n` estimates.
struct DremSystem<'a> {
    n: usize,
    rates: Vec<f64>,
    gamma: f64,
    floor: f64,
    normalized: bool,
    ext: DMatrix<f64>,
    rhs: Vector,
    meas: Measurement<'a>,
    phi_buf: Vec<f64>,
}

impl<'a> DremSystem<'a> {
    fn len(&self) -> usize {
        let m = self.n - 1;
        m * self.n + m + self.n
    }

    fn theta_offset(&self) -> usize {
        let m = self.n - 1;
        m * self.n + m
    }

    /// Mixed determinant and `adj(A)·Y` for the current extended system, with
    /// the adjugate formed explicitly as `Δ·A⁻¹`.
    fn mix(&mut self, y: f64, x: &Vector) -> (f64, Vector) {
        let n = self.n;
        let m = n - 1;
        for c in 0..n {
            self.ext[(0, c)] = self.phi_buf[c];
        }
        for k in 0..m {
            for c in 0..n {
                self.ext[(k + 1, c)] = x[k * n + c];
            }
        }
        self.rhs[0] = y;
        for k in 0..m {
            self.rhs[k + 1] = x[m * n + k];
        }
        if n == 1 {
            return (self.ext[(0, 0)], self.rhs.clone());
        }
        let lu = self.ext.clone().lu();
        let det = lu.determinant();
        match lu.try_inverse() {
            Some(mut adj) => {
                adj *= det;
                (det, adj * &self.rhs)
            }
            None => (0.0, Vector::zeros(n)),
        }
    }

    fn eval(&mut self, t: f64, x: &Vector, dx: &mut Vector) -> Result<f64> {
        let n = self.n;
        let m = n - 1;
        self.meas.phi.sample_into(t, &mut self.phi_buf)?;
        let y = self.meas.output_with(t, &self.phi_buf)?;
        for k in 0..m {
            let a = self.rates[k];
            for c in 0..n {
                dx[k * n + c] = a * (self.phi_buf[c] - x[k * n + c]);
            }
            dx[m * n + k] = a * (y - x[m * n + k]);
        }
        let (det, mixed) = self.mix(y, x);
        let off = self.theta_offset();
        let frozen = !det.is_finite() || det.abs() < self.floor;
        let scale = if self.normalized { 1.0 / (1.0 + det * det) } else { 1.0 };
        for k in 0..n {
            dx[off + k] = if frozen { 0.0 } else { -self.gamma * det * (det * x[off + k] - mixed[k]) * scale };
        }
        Ok(det)
    }
}

/// DREM estimator on `[0, t_end]`, integrated with classical RK4.
pub fn drem_run(
    cfg: &DremConfig,
    phi: &SignalSpec,
    schedule: &ParamSchedule,
    noise: &NoiseSpec,
    t_end: f64,
) -> Result<BaselineRun> {
    check_common(cfg.gamma, cfg.step, cfg.record_every, t_end)?;
    let meas = Measurement::new(phi, schedule, noise)?;
    let n = meas.dim();
    let rates = cfg.rates(n)?;
    let mut sys = DremSystem {
        n,
        rates,
        gamma: cfg.gamma,
        floor: cfg.det_floor,
        normalized: cfg.normalized,
        ext: DMatrix::zeros(n, n),
        rhs: Vector::zeros(n),
        meas,
        phi_buf: vec![0.0; n],
    };
    let len = sys.len();
    let off = sys.theta_offset();
    let mut x = Vector::zeros(len);
    x.rows_mut(off, n).copy_from(&initial(&cfg.initial_theta, n)?);
    let mut ks: [Vector; 4] = std::array::from_fn(|_| Vector::zeros(len));
    let mut tmp = Vector::zeros(len);

    let grid = time_grid(0.0, t_end, cfg.step)?;
    let steps = grid.len() - 1;
    let mut rec = Recorder::new(schedule, cfg.record_every);
    rec.push(0, steps == 0, 0.0, &x.rows(off, n).into_owned());
    let mut det_sq_integral = 0.0;
    let mut last_det = 0.0;
    for (k, w) in grid.windows(2).enumerate() {
        let (t, h) = (w[0], w[1] - w[0]);
        let [k1, k2, k3, k4] = &mut ks;
        let d0 = sys.eval(t, &x, k1)?;
        tmp.copy_from(&x);
        tmp.axpy(0.5 * h, k1, 1.0);
        sys.eval(t + 0.5 * h, &tmp, k2)?;
        tmp.copy_from(&x);
        tmp.axpy(0.5 * h, k2, 1.0);
        sys.eval(t + 0.5 * h, &tmp, k3)?;
        tmp.copy_from(&x);
        tmp.axpy(h, k3, 1.0);
        sys.eval(w[1], &tmp, k4)?;
        x.axpy(h / 6.0, k1, 1.0);
        x.axpy(h / 3.0, k2, 1.0);
        x.axpy(h / 3.0, k3, 1.0);
        x.axpy(h / 6.0, k4, 1.0);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::IntegrationDiverged { t: w[1] });
        }
        if d0.is_finite() {
            det_sq_integral += h * d0 * d0;
        }
        last_det = d0;
        rec.push(k + 1, k + 1 == steps, w[1], &x.rows(off, n).into_owned());
    }
    if steps > 0 {
        let mut probe = Vector::zeros(len);
        last_det = sys.eval(t_end, &x, &mut probe)?;
    }
    let frozen = !last_det.is_finite() || last_det.abs() < cfg.det_floor;
    Ok(rec.finish(steps, vec![frozen; n], Some(det_sq_integral)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Hybrid,
    Gradient,
    Drem,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Hybrid, Method::Gradient, Method::Drem];

    pub fn name(self) -> &'static str {
        match self {
            Method::Hybrid => "hybrid",
            Method::Gradient => "gradient",
            Method::Drem => "drem",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub n: usize,
    pub method: Method,
    /// Median over repetitions.
    pub wall_seconds: f64,
    pub per_step_seconds: f64,
    pub final_error: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub dims: Vec<usize>,
    pub t_end: f64,
    pub delta: f64,
    pub step: f64,
    pub reps: usize,
    pub gamma1: f64,
    pub gamma2: f64,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        let pi = std::f64::consts::PI;
        Self {
            dims: vec![25, 50, 100, 200],
            t_end: 2.0 * pi,
            delta: pi,
            step: pi / 250.0,
            reps: 3,
            gamma1: 0.5,
            gamma2: 0.05,
            seed: 7,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub records: Vec<BenchRecord>,
    /// Least-squares slope of `log(time)` against `log(n)`, per method.
    pub slopes: Vec<(Method, f64)>,
}

/// Sinusoidal regressor `φ_k = sin(k t)`, `k = 1..n`, and a seeded truth in
/// `[−1, 1]ⁿ`.
pub fn bench_scenario(n: usize, seed: u64) -> (SignalSpec, ParamSchedule) {
    let phi = SignalSpec::sines((1..=n).map(|k| k as f64).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let truth = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
    (phi, ParamSchedule::constant(truth))
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

fn run_cell(n: usize, method: Method, opts: &BenchOptions) -> Result<BenchRecord> {
    let (phi, truth) = bench_scenario(n, opts.seed);
    let noise = NoiseSpec::Zero;
    let steps = steps_between(0.0, opts.t_end, opts.step);
    let mut times = Vec::with_capacity(opts.reps);
    let mut final_error = f64::NAN;
    for _ in 0..opts.reps.max(1) {
        let clock = Instant::now();
        final_error = match method {
            Method::Hybrid => {
                let mut cfg = EstimatorConfig::new(n, opts.delta, opts.gamma1, opts.gamma2, opts.step);
                cfg.record_every = steps.max(1);
                let arc = run(&cfg, &phi, &truth, &noise, opts.t_end)?;
                let elapsed = clock.elapsed().as_secs_f64();
                times.push(elapsed);
                if let Some(e) = arc.failure {
                    return Err(e);
                }
                estimation_error(&arc, &truth).last().map_or(f64::NAN, |e| e.err1.max(e.err2))
            }
            Method::Gradient => {
                let mut cfg = GradientConfig::new(opts.gamma1, opts.step);
                cfg.record_every = steps.max(1);
                let r = gradient_run(&cfg, &phi, &truth, &noise, opts.t_end)?;
                times.push(clock.elapsed().as_secs_f64());
                r.final_error()
            }
            Method::Drem => {
                let mut cfg = DremConfig::new(opts.gamma1, opts.step);
                cfg.normalized = true;
                cfg.record_every = steps.max(1);
                let r = drem_run(&cfg, &phi, &truth, &noise, opts.t_end)?;
                times.push(clock.elapsed().as_secs_f64());
                r.final_error()
            }
        };
    }
    let wall = median(times);
    Ok(BenchRecord {
        n,
        method,
        wall_seconds: wall,
        per_step_seconds: wall / steps.max(1) as f64,
        final_error,
        reps: opts.reps.max(1),
    })
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Time hybrid, gradient and DREM estimators on the sinusoidal scenario for
/// each dimension.
pub fn bench_scaling(opts: &BenchOptions) -> Result<BenchReport> {
    if opts.dims.is_empty() {
        return Err(invalid("bench needs at least one dimension"));
    }
    if opts.dims.windows(2).any(|w| w[0] >= w[1]) || opts.dims[0] == 0 {
        return Err(invalid("dims must be positive and strictly increasing"));
    }
    let cells: Vec<(usize, Method)> =
        opts.dims.iter().flat_map(|&n| Method::ALL.into_iter().map(move |m| (n, m))).collect();
    let records: Vec<BenchRecord> = if opts.parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = cells.iter().map(|&(n, m)| s.spawn(move || run_cell(n, m, opts))).collect();
            handles.into_iter().map(|h| h.join().expect("bench worker panicked")).collect::<Result<_>>()
        })?
    } else {
        cells.iter().map(|&(n, m)| run_cell(n, m, opts)).collect::<Result<_>>()?
    };
    let slopes = if opts.dims.len() >= 2 {
        Method::ALL
            .into_iter()
            .map(|m| {
                let (xs, ys): (Vec<f64>, Vec<f64>) = records
                    .iter()
                    .filter(|r| r.method == m)
                    .map(|r| ((r.n as f64).ln(), r.wall_seconds.ln()))
                    .unzip();
                (m, fit_slope(&xs, &ys))
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(BenchReport { records, slopes })
}

impl BenchReport {
    pub fn record(&self, n: usize, method: Method) -> Option<&BenchRecord> {
        self.records.iter().find(|r| r.n == n && r.method == method)
    }

    /// DREM time over hybrid time.
    pub fn speedup(&self, n: usize) -> Option<f64> {
        Some(self.record(n, Method::Drem)?.wall_seconds / self.record(n, Method::Hybrid)?.wall_seconds)
    }

    pub fn slope(&self, method: Method) -> Option<f64> {
        self.slopes.iter().find(|(m, _)| *m == method).map(|(_, s)| *s)
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.records.iter().map(|r| r.n).collect();
        d.dedup();
        d
    }

    pub const CSV_HEADER: &'static str = "n,method,median_time_s,per_step_s,speedup,final_error";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let speedup = match r.method {
                Method::Drem => self.speedup(r.n).map(|s| s.to_string()).unwrap_or_default(),
                _ => String::new(),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.n,
                r.method.name(),
                r.wall_seconds,
                r.per_step_seconds,
                speedup,
                r.final_error
            ));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:>6}  {:<9} {:>14} {:>14} {:>10} {:>12}\n",
            "n", "method", "median [s]", "per step [s]", "speedup", "final err"
        );
        for r in &self.records {
            let speedup = match r.method {
                Method::Drem => self.speedup(r.n).map(|s| format!("{s:.2}x")).unwrap_or_default(),
                _ => String::new(),
            };
            out.push_str(&format!(
                "{:>6}  {:<9} {:>14.6e} {:>14.6e} {:>10} {:>12.3e}\n",
                r.n,
                r.method.name(),
                r.wall_seconds,
                r.per_step_seconds,
                speedup,
                r.final_error
            ));
        }
        for (m, s) in &self.slopes {
            out.push_str(&format!("slope[{}] = {s:.3}\n", m.name()));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_and_decay() -> SignalSpec {
        SignalSpec::stack(vec![
            SignalSpec::PiecewiseConstant { switch_times: vec![2.0], values: vec![vec![4.0], vec![0.0]] },
            SignalSpec::DecayingExponential { amplitude: vec![4.0], rate: vec![10.0] },
        ])
    }

    fn sin_cos() -> SignalSpec {
        SignalSpec::Sinusoid {
            amplitude: vec![1.0, 1.0],
            frequency: vec![1.0, 1.0],
            phase: vec![0.0, std::f64::consts::FRAC_PI_2],
        }
    }

    #[test]
    fn gradient_at_truth_stays() {
        let truth = ParamSchedule::constant(vec![1.0, -2.0]);
        let mut cfg = GradientConfig::new(1.0, 1e-2);
        cfg.initial_theta = Some(vec![1.0, -2.0]);
        let r = gradient_run(&cfg, &sin_cos(), &truth, &NoiseSpec::Zero, 2.0).unwrap();
        assert!(r.errors.iter().all(|&e| e < 1e-15));
    }

    #[test]
    fn gradient_scalar_closed_form() {
        let mut cfg = GradientConfig::new(1.0, 1e-3);
        cfg.initial_theta = Some(vec![1.0]);
        let truth = ParamSchedule::constant(vec![0.0]);
        let r = gradient_run(&cfg, &SignalSpec::constant(vec![1.0]), &truth, &NoiseSpec::Zero, 2.0).unwrap();
        for (t, e) in r.trajectory.times.iter().zip(&r.errors) {
            assert!((e - (-t).exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn gradient_stalls_without_persistent_excitation() {
        let mut cfg = GradientConfig::new(0.5, 1e-3);
        cfg.initial_theta = Some(vec![7.0, 5.0]);
        let truth = ParamSchedule::constant(vec![1.0, 1.0]);
        let r = gradient_run(&cfg, &step_and_decay(), &truth, &NoiseSpec::Zero, 5.0).unwrap();
        assert!(r.final_error() > 0.1, "{}", r.final_error());
    }

    #[test]
    fn drem_scalar_is_gradient() {
        let truth = ParamSchedule::constant(vec![2.0]);
        let phi = SignalSpec::Sinusoid { amplitude: vec![1.0], frequency: vec![1.0], phase: vec![0.3] };
        let mut g = GradientConfig::new(0.7, 1e-2);
        g.initial_theta = Some(vec![-1.0]);
        let mut d = DremConfig::new(0.7, 1e-2);
        d.initial_theta = Some(vec![-1.0]);
        let a = gradient_run(&g, &phi, &truth, &NoiseSpec::Zero, 3.0).unwrap();
        let b = drem_run(&d, &phi, &truth, &NoiseSpec::Zero, 3.0).unwrap();
        for (x, y) in a.trajectory.values.iter().zip(&b.trajectory.values) {
            assert!((x[0] - y[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn drem_converges_under_persistent_excitation() {
        let truth = ParamSchedule::constant(vec![1.5, -0.5]);
        let cfg = DremConfig::new(5.0, 1e-3);
        let r = drem_run(&cfg, &sin_cos(), &truth, &NoiseSpec::Zero, 20.0).unwrap();
        assert!(r.final_error() < 1e-2, "{}", r.final_error());
        assert!(r.degenerate.iter().all(|d| !d));
    }

    #[test]
    fn drem_flags_vanishing_determinant() {
        let truth = ParamSchedule::constant(vec![1.0, 1.0]);
        let mut cfg = DremConfig::new(0.5, 1e-3);
        cfg.initial_theta = Some(vec![7.0, 5.0]);
        let r = drem_run(&cfg, &step_and_decay(), &truth, &NoiseSpec::Zero, 5.0).unwrap();
        assert!(r.degenerate.iter().all(|&d| d));
        assert!(r.final_error() > 0.1);
    }

    #[test]
    fn drem_rejects_bad_filters() {
        let truth = ParamSchedule::constant(vec![1.0, 1.0, 1.0]);
        let phi = SignalSpec::sines(vec![1.0, 2.0, 3.0]);
        let mut cfg = DremConfig::new(1.0, 1e-2);
        cfg.filter_rates = Some(vec![2.0, 2.0]);
        assert!(drem_run(&cfg, &phi, &truth, &NoiseSpec::Zero, 1.0).is_err());
        cfg.filter_rates = Some(vec![2.0]);
        assert!(drem_run(&cfg, &phi, &truth, &NoiseSpec::Zero, 1.0).is_err());
    }

    #[test]
    fn methods_agree_on_persistent_scenario() {
        let truth = ParamSchedule::constant(vec![0.8, -1.2]);
        let phi = sin_cos();
        let pi = std::f64::consts::PI;
        let step = 2.0 * pi / 2000.0;
        let hybrid = run(&EstimatorConfig::new(2, 2.0 * pi, 0.3, 0.01, step), &phi, &truth, &NoiseSpec::Zero, 40.0)
            .unwrap();
        let h = hybrid.last().unwrap().theta1.clone();
        let g = gradient_run(&GradientConfig::new(2.0, step), &phi, &truth, &NoiseSpec::Zero, 40.0).unwrap();
        let d = drem_run(&DremConfig::new(5.0, step), &phi, &truth, &NoiseSpec::Zero, 40.0).unwrap();
        let g = g.final_estimate().unwrap();
        let d = d.final_estimate().unwrap();
        assert!((&h - g).norm() < 1e-2 && (&h - d).norm() < 1e-2 && (g - d).norm() < 1e-2);
    }

    #[test]
    fn slope_fit() {
        let xs: Vec<f64> = [1.0f64, 2.0, 4.0, 8.0].iter().map(|x| x.ln()).collect();
        let ys: Vec<f64> = [1.0f64, 8.0, 64.0, 512.0].iter().map(|x| x.ln()).collect();
        assert!((fit_slope(&xs, &ys) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn small_bench_has_all_cells() {
        let opts = BenchOptions { dims: vec![2, 4], reps: 1, parallel: true, ..BenchOptions::default() };
        let rep = bench_scaling(&opts).unwrap();
        assert_eq!(rep.records.len(), 6);
        assert!(rep.records.iter().all(|r| r.wall_seconds > 0.0 && r.per_step_seconds > 0.0));
        assert!(rep.speedup(4).is_some());
        assert_eq!(rep.to_csv().lines().count(), 7);
        assert!(rep.to_table().contains("slope[drem]"));
    }

    #[test]
    fn bench_rejects_unsorted_dims() {
        let opts = BenchOptions { dims: vec![4, 2], ..BenchOptions::default() };
        assert!(bench_scaling(&opts).is_err());
    }
}
