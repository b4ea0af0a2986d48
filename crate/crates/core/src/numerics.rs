//! Fixed-step integration of linear time-varying systems, transition
//! matrices and guarded inversion.
//!
//! Everything in the estimator is driven by the rank-one dynamics
//! `ẋ = −γ φ(t) φ(t)ᵀ x` (plus a forcing term for the estimates). The RK4
//! steppers here exploit that structure: every stage derivative is a
//! multiple of `φ` evaluated at the stage time, so one step of a vector costs
//! `O(n)` and one step of an `n × n` transition matrix costs `O(n²)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default upper limit on the condition estimate accepted by [`invert_guarded`].
pub const DEFAULT_COND_MAX: f64 = 1e12;

/// Anything that can be sampled as a vector-valued function of time.
pub trait Signal {
    fn dim(&self) -> usize;
    fn sample_into(&self, t: f64, out: &mut [f64]) -> Result<()>;

    fn sample_vec(&self, t: f64) -> Result<Vector> {
        let mut v = Vector::zeros(self.dim());
        self.sample_into(t, v.as_mut_slice())?;
        Ok(v)
    }
}

impl<F> Signal for (usize, F)
where
    F: Fn(f64, &mut [f64]),
{
    fn dim(&self) -> usize {
        self.0
    }

    fn sample_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        (self.1)(t, out);
        Ok(())
    }
}

/// Samples of a vector function on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub values: Vec<Vector>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<(f64, &Vector)> {
        self.times.last().copied().zip(self.values.last())
    }
}

/// Grid `t0, t0 + h, …, t1` where the final step is shortened so the last
/// point lands on `t1` exactly.
pub fn time_grid(t0: f64, t1: f64, step: f64) -> Result<Vec<f64>> {
    check_interval(t0, t1, step)?;
    let n = steps_between(t0, t1, step);
    let mut grid = Vec::with_capacity(n + 1);
    for k in 0..n {
        grid.push(t0 + k as f64 * step);
    }
    grid.push(t1);
    Ok(grid)
}

/// Number of steps of size `step` needed to cover `[t0, t1]`, the last one
/// possibly shorter. Ratios within 1e-9 of an integer are snapped to it.
pub fn steps_between(t0: f64, t1: f64, step: f64) -> usize {
    let ratio = (t1 - t0) / step;
    let nearest = ratio.round();
    if (ratio - nearest).abs() <= 1e-9 * ratio.max(1.0) {
        nearest as usize
    } else {
        ratio.ceil() as usize
    }
}

/// True when `span` is an integer multiple of `step` (to 1e-9 relative).
pub fn is_multiple_of(span: f64, step: f64) -> bool {
    let ratio = span / step;
    (ratio - ratio.round()).abs() <= 1e-9 * ratio.max(1.0)
}

fn check_interval(t0: f64, t1: f64, step: f64) -> Result<()> {
    if !(t1 > t0) {
        return Err(Error::InvalidConfig(format!("need t1 > t0 (got [{t0}, {t1}])")));
    }
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidConfig(format!("step must be positive (got {step})")));
    }
    Ok(())
}

/// Classical fixed-step RK4 for `ẋ = f(t, x)`.
///
/// `rhs(t, x, dx)` writes the derivative into `dx`. The returned trajectory
/// includes both endpoints.
pub fn integrate_ltv<F>(mut rhs: F, x0: &Vector, t0: f64, t1: f64, step: f64) -> Result<Trajectory>
where
    F: FnMut(f64, &Vector, &mut Vector),
{
    let grid = time_grid(t0, t1, step)?;
    let n = x0.len();
    let mut x = x0.clone();
    let mut k1 = Vector::zeros(n);
    let mut k2 = Vector::zeros(n);
    let mut k3 = Vector::zeros(n);
    let mut k4 = Vector::zeros(n);
    let mut tmp = Vector::zeros(n);
    let mut values = Vec::with_capacity(grid.len());
    values.push(x.clone());

    for w in grid.windows(2) {
        let (t, h) = (w[0], w[1] - w[0]);
        rhs(t, &x, &mut k1);
        tmp.copy_from(&x);
        tmp.axpy(0.5 * h, &k1, 1.0);
        rhs(t + 0.5 * h, &tmp, &mut k2);
        tmp.copy_from(&x);
        tmp.axpy(0.5 * h, &k2, 1.0);
        rhs(t + 0.5 * h, &tmp, &mut k3);
        tmp.copy_from(&x);
        tmp.axpy(h, &k3, 1.0);
        rhs(t + h, &tmp, &mut k4);

        x.axpy(h / 6.0, &k1, 1.0);
        x.axpy(h / 3.0, &k2, 1.0);
        x.axpy(h / 3.0, &k3, 1.0);
        x.axpy(h / 6.0, &k4, 1.0);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::IntegrationDiverged { t: w[1] });
        }
        values.push(x.clone());
    }

    Ok(Trajectory { times: grid, values })
}

/// Regressor samples at the three distinct RK4 stage times `t`, `t + h/2`,
/// `t + h`, together with the inner products the rank-one steppers need.
#[derive(Debug, Clone)]
pub struct StageSamples {
    pub start: Vector,
    pub mid: Vector,
    pub end: Vector,
    mid_start: f64,
    mid_mid: f64,
    end_mid: f64,
}

impl StageSamples {
    pub fn zeros(n: usize) -> Self {
        Self {
            start: Vector::zeros(n),
            mid: Vector::zeros(n),
            end: Vector::zeros(n),
            mid_start: 0.0,
            mid_mid: 0.0,
            end_mid: 0.0,
        }
    }

    /// Refill in place for the step `[t, t + h]`.
    pub fn fill<S: Signal + ?Sized>(&mut self, signal: &S, t: f64, h: f64) -> Result<()> {
        signal.sample_into(t, self.start.as_mut_slice())?;
        signal.sample_into(t + 0.5 * h, self.mid.as_mut_slice())?;
        signal.sample_into(t + h, self.end.as_mut_slice())?;
        self.mid_start = self.mid.dot(&self.start);
        self.mid_mid = self.mid.dot(&self.mid);
        self.end_mid = self.end.dot(&self.mid);
        Ok(())
    }
}

/// One RK4 step of `θ̇ = −γ φ (φᵀθ − y)`; `outputs` holds `y` at the three
/// stage times.
pub fn rk4_gradient_step(theta: &mut Vector, gamma: f64, phi: &StageSamples, outputs: [f64; 3], h: f64) {
    let s1 = -gamma * (phi.start.dot(theta) - outputs[0]);
    let b_theta = phi.mid.dot(theta);
    let s2 = -gamma * (b_theta + 0.5 * h * s1 * phi.mid_start - outputs[1]);
    let s3 = -gamma * (b_theta + 0.5 * h * s2 * phi.mid_mid - outputs[1]);
    let s4 = -gamma * (phi.end.dot(theta) + h * s3 * phi.end_mid - outputs[2]);
    theta.axpy(h / 6.0 * s1, &phi.start, 1.0);
    theta.axpy(h / 3.0 * (s2 + s3), &phi.mid, 1.0);
    theta.axpy(h / 6.0 * s4, &phi.end, 1.0);
}

/// One RK4 step of `Φ̇ = −γ φ φᵀ Φ`.
///
/// Each stage derivative is `φ_stage uᵀ`, so the step is three
/// matrix-vector products and three rank-one updates. `scratch` must hold
/// four vectors of length `n`.
pub fn rk4_transition_step(m: &mut Matrix, gamma: f64, phi: &StageSamples, h: f64, scratch: &mut [Vector; 4]) {
    let [u1, u2, u3, u4] = scratch;
    // u1 = −γ Φᵀa
    u1.gemv_tr(-gamma, m, &phi.start, 0.0);
    // u2 = −γ (Φᵀb + h/2 (b·a) u1)
    u2.gemv_tr(-gamma, m, &phi.mid, 0.0);
    u3.copy_from(u2);
    u2.axpy(-gamma * 0.5 * h * phi.mid_start, u1, 1.0);
    // u3 = −γ (Φᵀb + h/2 (b·b) u2)
    u3.axpy(-gamma * 0.5 * h * phi.mid_mid, u2, 1.0);
    // u4 = −γ (Φᵀc + h (c·b) u3)
    u4.gemv_tr(-gamma, m, &phi.end, 0.0);
    u4.axpy(-gamma * h * phi.end_mid, u3, 1.0);

    m.ger(h / 6.0, &phi.start, u1, 1.0);
    u2.axpy(1.0, u3, 1.0);
    m.ger(h / 3.0, &phi.mid, u2, 1.0);
    m.ger(h / 6.0, &phi.end, u4, 1.0);
}

/// State-transition matrix `Φ(t1, t0)` of `ẋ = −γ φ(t) φ(t)ᵀ x`.
pub fn transition_matrix<S: Signal + ?Sized>(regressor: &S, gamma: f64, t0: f64, t1: f64, step: f64) -> Result<Matrix> {
    let n = regressor.dim();
    if t1 == t0 {
        return Ok(Matrix::identity(n, n));
    }
    let grid = time_grid(t0, t1, step)?;
    let mut m = Matrix::identity(n, n);
    let mut stages = StageSamples::zeros(n);
    let mut scratch = [Vector::zeros(n), Vector::zeros(n), Vector::zeros(n), Vector::zeros(n)];
    for w in grid.windows(2) {
        let h = w[1] - w[0];
        stages.fill(regressor, w[0], h)?;
        rk4_transition_step(&mut m, gamma, &stages, h, &mut scratch);
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::IntegrationDiverged { t: w[1] });
        }
    }
    Ok(m)
}

/// An inverse together with the condition estimate that admitted it.
#[derive(Debug, Clone)]
pub struct GuardedInverse {
    pub inverse: Matrix,
    pub cond: f64,
}

/// Invert `m`, refusing when the 1-norm condition number
/// `‖m‖₁ ‖m⁻¹‖₁` exceeds `cond_max`.
pub fn invert_guarded(m: &Matrix, cond_max: f64) -> Result<GuardedInverse> {
    if !m.is_square() {
        return Err(Error::Shape(format!("cannot invert a {}x{} matrix", m.nrows(), m.ncols())));
    }
    let norm = one_norm(m);
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::NearSingular { cond: f64::INFINITY });
    }
    let inverse = match m.clone().lu().try_inverse() {
        Some(inv) => inv,
        None => return Err(Error::NearSingular { cond: f64::INFINITY }),
    };
    let cond = norm * one_norm(&inverse);
    if !cond.is_finite() || cond > cond_max {
        return Err(Error::NearSingular { cond });
    }
    Ok(GuardedInverse { inverse, cond })
}

/// Maximum absolute column sum.
pub fn one_norm(m: &Matrix) -> f64 {
    m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Largest singular value.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().iter().copied().fold(0.0, f64::max)
}
