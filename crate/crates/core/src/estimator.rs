//! The hybrid estimator: two gradient estimators with rates `γ₁ ≠ γ₂` flow
//! over windows of length `δ`, and at the end of a window both are reset to
//! `K₁θ₁ + K₂θ₂`.
//!
//! The transition matrices `Φ₁, Φ₂` that define the gains are integrated
//! alongside the estimates with the same discrete map, so the reset cancels
//! the estimation error up to roundoff rather than up to integration error.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::numerics::{
    invert_guarded, is_multiple_of, rk4_gradient_step, rk4_transition_step, steps_between, Matrix, StageSamples, Vector,
    DEFAULT_COND_MAX,
};
use crate::signals::{Measurement, NoiseSpec, ParamSchedule, SignalSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Gains from the first window only; identity resets afterwards.
    #[default]
    Constant,
    /// Gains recomputed from every elapsed window.
    Piecewise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub n: usize,
    pub delta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub mode: Mode,
    pub step: f64,
    pub cond_max: f64,
    /// Shared initial estimate. Zero when absent.
    pub initial_theta: Option<Vec<f64>>,
    /// Distinct initial estimate for the second estimator. In constant mode
    /// the cancelling reset then happens at the second jump.
    pub initial_theta2: Option<Vec<f64>>,
    /// Initial value of the window timer, in `[0, δ)`.
    pub initial_timer: f64,
    /// Keep every k-th flow sample (window endpoints are always kept).
    pub record_every: usize,
}

impl EstimatorConfig {
    pub fn new(n: usize, delta: f64, gamma1: f64, gamma2: f64, step: f64) -> Self {
        Self {
            n,
            delta,
            gamma1,
            gamma2,
            mode: Mode::Constant,
            step,
            cond_max: DEFAULT_COND_MAX,
            initial_theta: None,
            initial_theta2: None,
            initial_timer: 0.0,
            record_every: 1,
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_initial_theta(mut self, theta: Vec<f64>) -> Self {
        self.initial_theta = Some(theta);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("dimension n must be positive"));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(invalid(format!("delta must be positive (got {})", self.delta)));
        }
        if !(self.gamma1 > 0.0 && self.gamma2 > 0.0) || !self.gamma1.is_finite() || !self.gamma2.is_finite() {
            return Err(invalid("gamma1 and gamma2 must be positive"));
        }
        if self.gamma1 == self.gamma2 {
            return Err(invalid(format!("gamma1 and gamma2 must differ (both {})", self.gamma1)));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(invalid(format!("step must be positive (got {})", self.step)));
        }
        if !is_multiple_of(self.delta, self.step) {
            return Err(invalid(format!("delta {} is not an integer multiple of step {}", self.delta, self.step)));
        }
        if !(self.initial_timer >= 0.0 && self.initial_timer < self.delta) {
            return Err(invalid(format!("initial_timer must lie in [0, delta) (got {})", self.initial_timer)));
        }
        if !is_multiple_of(self.delta - self.initial_timer, self.step) {
            return Err(invalid("delta - initial_timer is not an integer multiple of step"));
        }
        if !(self.cond_max >= 1.0) {
            return Err(invalid(format!("cond_max must be at least 1 (got {})", self.cond_max)));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every must be positive"));
        }
        for (name, v) in [("initial_theta", &self.initial_theta), ("initial_theta2", &self.initial_theta2)] {
            if let Some(v) = v {
                if v.len() != self.n {
                    return Err(shape(format!("{name} has length {}, expected {}", v.len(), self.n)));
                }
            }
        }
        Ok(())
    }

    /// Counter value at which the cancelling reset is applied in constant
    /// mode.
    pub fn reset_jump(&self) -> usize {
        match (&self.initial_theta2, &self.initial_theta) {
            (Some(b), Some(a)) if a != b => 1,
            (Some(b), None) if b.iter().any(|&x| x != 0.0) => 1,
            _ => 0,
        }
    }

    /// Time of the `k`-th jump (`k ≥ 1`).
    pub fn jump_time(&self, k: usize) -> f64 {
        (self.delta - self.initial_timer) + (k - 1) as f64 * self.delta
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridState {
    pub theta1: Vector,
    pub theta2: Vector,
    pub tau_a: f64,
    /// Elapsed flow time; drives the regressor.
    pub tau_b: f64,
    pub q: usize,
    /// Transition matrices since the start of the current window, when
    /// tracked.
    pub phi: Option<(Matrix, Matrix)>,
}

impl HybridState {
    pub fn initial(cfg: &EstimatorConfig) -> Self {
        let theta1 = cfg.initial_theta.as_ref().map_or_else(|| Vector::zeros(cfg.n), |v| Vector::from_vec(v.clone()));
        let theta2 = cfg.initial_theta2.as_ref().map_or_else(|| theta1.clone(), |v| Vector::from_vec(v.clone()));
        Self { theta1, theta2, tau_a: cfg.initial_timer, tau_b: 0.0, q: 0, phi: None }
    }

    pub fn start_tracking(&mut self) {
        let n = self.theta1.len();
        self.phi = Some((Matrix::identity(n, n), Matrix::identity(n, n)));
    }

    fn sample(&self) -> Sample {
        Sample { t: self.tau_b, theta1: self.theta1.clone(), theta2: self.theta2.clone(), tau_a: self.tau_a }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub theta1: Vector,
    pub theta2: Vector,
    pub tau_a: f64,
}

/// Flow between jumps `j` and `j + 1`. The first sample is the post-jump
/// state, the last one the pre-jump state.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub j: usize,
    pub samples: Vec<Sample>,
    pub steps: usize,
    pub seconds: f64,
    pub tracked_phi: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResetGains {
    pub k1: Matrix,
    pub k2: Matrix,
    /// Condition estimate of `Φ₁ − Φ₂` when it was inverted.
    pub cond: Option<f64>,
}

impl ResetGains {
    pub fn identity(n: usize) -> Self {
        Self { k1: Matrix::identity(n, n), k2: Matrix::zeros(n, n), cond: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpRecord {
    pub t: f64,
    /// Counter before the jump.
    pub q: usize,
    pub pre_theta1: Vector,
    pub pre_theta2: Vector,
    pub post_theta: Vector,
    pub gains: ResetGains,
    /// Set when the gains could not be computed and `(I, 0)` was used.
    pub fallback: bool,
    pub phi: Option<(Matrix, Matrix)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HybridArc {
    pub segments: Vec<Segment>,
    pub jumps: Vec<JumpRecord>,
    /// Runtime failure that ended the arc early.
    pub failure: Option<Error>,
}

impl HybridArc {
    pub fn samples(&self) -> impl Iterator<Item = (usize, &Sample)> {
        self.segments.iter().flat_map(|s| s.samples.iter().map(move |x| (s.j, x)))
    }

    pub fn last(&self) -> Option<&Sample> {
        self.segments.last().and_then(|s| s.samples.last())
    }

    pub fn flow_steps(&self) -> usize {
        self.segments.iter().map(|s| s.steps).sum()
    }
}

fn gains_from_window(phi1: &Matrix, phi2: &Matrix, cond_max: f64) -> Result<ResetGains> {
    if phi1.shape() != phi2.shape() || !phi1.is_square() {
        return Err(shape("transition matrices must be square and of equal size"));
    }
    let n = phi1.nrows();
    let inv = invert_guarded(&(phi1 - phi2), cond_max).map_err(|e| match e {
        Error::NearSingular { cond } => Error::ExcitationFailure { t: None, cond },
        other => other,
    })?;
    let k1 = -(phi2 * &inv.inverse);
    let k2 = Matrix::identity(n, n) - &k1;
    Ok(ResetGains { k1, k2, cond: Some(inv.cond) })
}

/// `K₁ = −Φ₂(Φ₁ − Φ₂)⁻¹, K₂ = I − K₁` when `q = 0`, otherwise `(I, 0)`.
pub fn gains_constant(phi1: &Matrix, phi2: &Matrix, q: usize, cond_max: f64) -> Result<ResetGains> {
    if q == 0 {
        gains_from_window(phi1, phi2, cond_max)
    } else {
        Ok(ResetGains::identity(phi1.nrows()))
    }
}

/// Cancelling gains from the transition matrices of the elapsed window.
pub fn gains_piecewise(phi1: &Matrix, phi2: &Matrix, cond_max: f64) -> Result<ResetGains> {
    gains_from_window(phi1, phi2, cond_max)
}

/// Integrate the flow from the current time up to `until`, appending every
/// `record_every`-th sample to `out`. The final state is always recorded.
///
/// On divergence the samples computed so far stay in `out`.
pub fn flow_window(
    state: &mut HybridState,
    cfg: &EstimatorConfig,
    meas: &Measurement<'_>,
    until: f64,
    out: &mut Vec<Sample>,
) -> Result<usize> {
    let t0 = state.tau_b;
    let tau0 = state.tau_a;
    let span = until - t0;
    if span < 0.0 || span > (cfg.delta - tau0) * (1.0 + 1e-12) + 1e-12 {
        return Err(invalid(format!("cannot flow from t = {t0} to {until} with timer {tau0} and delta {}", cfg.delta)));
    }
    let n = state.theta1.len();
    let steps = if span > 0.0 { steps_between(t0, until, cfg.step) } else { 0 };
    let mut stages = StageSamples::zeros(n);
    let mut scratch: [Vector; 4] = std::array::from_fn(|_| Vector::zeros(n));
    let record_every = cfg.record_every.max(1);

    for k in 0..steps {
        let t = t0 + k as f64 * cfg.step;
        let t_next = if k + 1 == steps { until } else { t0 + (k + 1) as f64 * cfg.step };
        let h = t_next - t;
        stages.fill(meas.phi, t, h)?;
        let y = [
            meas.output_with(t, stages.start.as_slice())?,
            meas.output_with(t + 0.5 * h, stages.mid.as_slice())?,
            meas.output_with(t_next, stages.end.as_slice())?,
        ];
        rk4_gradient_step(&mut state.theta1, cfg.gamma1, &stages, y, h);
        rk4_gradient_step(&mut state.theta2, cfg.gamma2, &stages, y, h);
        if let Some((p1, p2)) = state.phi.as_mut() {
            rk4_transition_step(p1, cfg.gamma1, &stages, h, &mut scratch);
            rk4_transition_step(p2, cfg.gamma2, &stages, h, &mut scratch);
        }
        state.tau_b = t_next;
        state.tau_a = tau0 + (t_next - t0);
        if !(state.theta1.iter().all(|x| x.is_finite()) && state.theta2.iter().all(|x| x.is_finite())) {
            return Err(Error::IntegrationDiverged { t: t_next });
        }
        if (k + 1) % record_every == 0 || k + 1 == steps {
            out.push(state.sample());
        }
    }
    Ok(steps)
}

/// Apply the reset map: both estimates become `K₁θ₁ + K₂θ₂`, the window
/// timer restarts and the counter increments.
pub fn jump(state: &mut HybridState, gains: &ResetGains) {
    let reset = &gains.k1 * &state.theta1 + &gains.k2 * &state.theta2;
    state.theta2.copy_from(&reset);
    state.theta1 = reset;
    state.tau_a = 0.0;
    state.q += 1;
    if state.phi.is_some() {
        state.start_tracking();
    }
}

/// Simulate the hybrid estimator on `[0, t_end]`.
///
/// Configuration and dimension errors are returned as `Err`. Runtime
/// failures (divergence, or a singular `Φ₁ − Φ₂` in constant mode) end the
/// arc early and are stored in [`HybridArc::failure`].
pub fn run(
    cfg: &EstimatorConfig,
    phi: &SignalSpec,
    schedule: &ParamSchedule,
    noise: &NoiseSpec,
    t_end: f64,
) -> Result<HybridArc> {
    cfg.validate()?;
    let meas = Measurement::new(phi, schedule, noise)?;
    if meas.dim() != cfg.n {
        return Err(shape(format!("regressor has dimension {}, config n = {}", meas.dim(), cfg.n)));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(invalid(format!("t_end must be positive (got {t_end})")));
    }

    let reset_q = cfg.reset_jump();
    let mut state = HybridState::initial(cfg);
    let mut arc = HybridArc::default();
    let end_tol = 1e-9 * cfg.step;

    loop {
        let j = state.q;
        let track = match cfg.mode {
            Mode::Piecewise => true,
            Mode::Constant => j == reset_q,
        };
        if track {
            state.start_tracking();
        } else {
            state.phi = None;
        }
        let window_end = cfg.jump_time(j + 1);
        let until = window_end.min(t_end);

        let mut samples = vec![state.sample()];
        let clock = Instant::now();
        let flowed = flow_window(&mut state, cfg, &meas, until, &mut samples);
        let seconds = clock.elapsed().as_secs_f64();
        let (steps, failure) = match flowed {
            Ok(steps) => (steps, None),
            Err(e) => (samples.len() - 1, Some(e)),
        };
        arc.segments.push(Segment { j, samples, steps, seconds, tracked_phi: track });
        if let Some(e) = failure {
            arc.failure = Some(e);
            return Ok(arc);
        }

        if window_end >= t_end - end_tol {
            return Ok(arc);
        }

        // Snap the timer onto the jump set.
        state.tau_b = window_end;
        state.tau_a = cfg.delta;
        let window_phi = state.phi.take();
        let (gains, fallback) = match (&window_phi, cfg.mode) {
            (Some((p1, p2)), Mode::Piecewise) => match gains_piecewise(p1, p2, cfg.cond_max) {
                Ok(g) => (g, false),
                Err(_) => (ResetGains::identity(cfg.n), true),
            },
            (Some((p1, p2)), Mode::Constant) => match gains_constant(p1, p2, 0, cfg.cond_max) {
                Ok(g) => (g, false),
                Err(e) => {
                    arc.failure = Some(match e {
                        Error::ExcitationFailure { cond, .. } => Error::ExcitationFailure { t: Some(window_end), cond },
                        other => other,
                    });
                    return Ok(arc);
                }
            },
            (None, _) => (ResetGains::identity(cfg.n), false),
        };
        let pre_theta1 = state.theta1.clone();
        let pre_theta2 = state.theta2.clone();
        jump(&mut state, &gains);
        arc.jumps.push(JumpRecord {
            t: window_end,
            q: j,
            pre_theta1,
            pre_theta2,
            post_theta: state.theta1.clone(),
            gains,
            fallback,
            phi: window_phi,
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub t: f64,
    pub j: usize,
    pub err1: f64,
    pub err2: f64,
}

/// `‖θ_i(t, j) − θ*(t)‖` at every recorded sample.
pub fn estimation_error(arc: &HybridArc, schedule: &ParamSchedule) -> Vec<ErrorSample> {
    arc.samples()
        .map(|(j, s)| {
            let truth = schedule.value_at(s.t);
            ErrorSample { t: s.t, j, err1: (&s.theta1 - &truth).norm(), err2: (&s.theta2 - &truth).norm() }
        })
        .collect()
}

/// First hybrid time from which both errors stay at or below `tol` for the
/// rest of the arc.
pub fn convergence_time(errors: &[ErrorSample], tol: f64) -> Option<(f64, usize)> {
    let idx = errors.iter().rposition(|e| e.err1.max(e.err2) > tol).map_or(0, |i| i + 1);
    errors.get(idx).map(|e| (e.t, e.j))
}
