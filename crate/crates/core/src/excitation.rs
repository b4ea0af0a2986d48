//! Excitation of a regressor over an interval, persistence of excitation,
//! the design inequalities on `(δ, γ₁, γ₂)` and the window bounds on the
//! transition matrix.

use std::fmt::Write as _;

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::{time_grid, Matrix, Signal};
use crate::signals::{sup_norm_bound, ParamSchedule, SignalSpec};

/// Relative floor below which the smallest Gram eigenvalue counts as zero.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Trapezoidal `∫_{t0}^{t1} φ φᵀ ds`, symmetrized.
pub fn gram<S: Signal + ?Sized>(phi: &S, t0: f64, t1: f64, step: f64) -> Result<Matrix> {
    let n = phi.dim();
    let grid = time_grid(t0, t1, step)?;
    let mut acc = Matrix::zeros(n, n);
    let mut prev = phi.sample_vec(grid[0])?;
    let mut cur = prev.clone();
    for w in grid.windows(2) {
        let h = w[1] - w[0];
        phi.sample_into(w[1], cur.as_mut_slice())?;
        acc.ger(0.5 * h, &prev, &prev, 1.0);
        acc.ger(0.5 * h, &cur, &cur, 1.0);
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok((&acc + acc.transpose()) * 0.5)
}

/// Smallest eigenvalue of a symmetric matrix, with eigenvalues below
/// [`RANK_TOLERANCE`] times the largest clamped to zero.
pub fn min_eigenvalue(m: &Matrix) -> f64 {
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let max = eig.iter().copied().fold(0.0f64, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= RANK_TOLERANCE * max {
        0.0
    } else {
        min
    }
}

/// The largest `η` with `∫ φφᵀ ≥ η I` over `[t0, t1]`.
pub fn excitation_level<S: Signal + ?Sized>(phi: &S, t0: f64, t1: f64, step: f64) -> Result<f64> {
    Ok(min_eigenvalue(&gram(phi, t0, t1, step)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeVerdict {
    pub window: f64,
    pub persistent: bool,
    pub worst_eta: f64,
    pub worst_start: f64,
}

/// Check `μ`-persistent excitation on the windows `[σ, σ + μ]` for
/// `σ = 0, stride, 2·stride, … ≤ horizon − μ`.
///
/// Only the sampled windows are certified.
pub fn check_pe<S: Signal + ?Sized>(phi: &S, mu: f64, horizon: f64, stride: f64, step: f64) -> Result<PeVerdict> {
    if !(mu > 0.0) || !(stride > 0.0) {
        return Err(invalid("window length and stride must be positive"));
    }
    if horizon < mu {
        return Err(invalid(format!("horizon {horizon} shorter than window {mu}")));
    }
    let last = horizon - mu;
    let count = ((last / stride) + 1e-9).floor() as usize;
    let mut worst = (f64::INFINITY, 0.0);
    for k in 0..=count {
        let sigma = k as f64 * stride;
        let eta = excitation_level(phi, sigma, sigma + mu, step)?;
        if eta < worst.0 {
            worst = (eta, sigma);
        }
    }
    Ok(PeVerdict { window: mu, persistent: worst.0 > 0.0, worst_eta: worst.0, worst_start: worst.1 })
}

/// Left-hand sides of the two design inequalities and the constants derived
/// from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignCheck {
    /// `φ_M² γ₂ δ`, must lie in `(0, 1)`.
    pub cond7_lhs: f64,
    /// `κ₁² κ₂²`, must lie in `(0, 1)`.
    pub cond8_lhs: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub lambda: f64,
    pub satisfied: bool,
}

impl DesignCheck {
    pub fn cond7_holds(&self) -> bool {
        self.cond7_lhs > 0.0 && self.cond7_lhs < 1.0
    }

    pub fn cond8_holds(&self) -> bool {
        self.cond8_lhs > 0.0 && self.cond8_lhs < 1.0
    }
}

fn contraction_factor(eta: f64, phi_m: f64, gamma: f64, span: f64) -> f64 {
    1.0 - 2.0 * eta * gamma / (1.0 + phi_m * phi_m * gamma * span).powi(2)
}

fn expansion_factor(phi_m: f64, gamma: f64, span: f64) -> f64 {
    let a = phi_m * phi_m * gamma * span;
    1.0 + 2.0 * a / (1.0 - a).powi(2)
}

/// Evaluate the sufficient conditions for `Φ₁(δ,0) − Φ₂(δ,0)` to be
/// invertible:
///
/// ```text
/// 0 < φ_M² γ₂ δ < 1
/// 0 < (1 − 2ηγ₁/(1 + φ_M²γ₁δ)²)(1 + 2γ₂φ_M²δ/(1 − φ_M²γ₂δ)²) < 1
/// ```
pub fn check_design_conditions(eta: f64, phi_m: f64, gamma1: f64, gamma2: f64, delta: f64) -> Result<DesignCheck> {
    if gamma1 == gamma2 {
        return Err(invalid("adaptation rates must differ (γ₁ ≠ γ₂)"));
    }
    if !(gamma1 > 0.0 && gamma2 > 0.0 && delta > 0.0) || eta < 0.0 || phi_m < 0.0 {
        return Err(invalid("η, φ_M must be non-negative and γ₁, γ₂, δ positive"));
    }
    let cond7_lhs = phi_m * phi_m * gamma2 * delta;
    let k1_sq = contraction_factor(eta, phi_m, gamma1, delta);
    let k2_sq = expansion_factor(phi_m, gamma2, delta);
    let cond8_lhs = k1_sq * k2_sq;
    let kappa1 = k1_sq.max(0.0).sqrt();
    let kappa2 = k2_sq.sqrt();
    let lambda = -k1_sq.ln() / (2.0 * delta);
    let mut check = DesignCheck { cond7_lhs, cond8_lhs, kappa1, kappa2, lambda, satisfied: false };
    check.satisfied = check.cond7_holds() && check.cond8_holds();
    Ok(check)
}

/// Bounds on one window of `ẋ = −γ φ φᵀ x` of length `span`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowBounds {
    /// Upper bound on `‖Φ(T, t0)‖`.
    pub phi_norm_bound: f64,
    /// Decay rate `−log(bound²) / (2·span)`.
    pub lambda: f64,
    /// Upper bound on `‖Φ⁻¹(T, t0)‖`, defined only when `φ_M² γ span < 1`.
    pub inv_norm_bound: Option<f64>,
}

pub fn lemma1_bounds(eta: f64, phi_m: f64, gamma: f64, span: f64) -> WindowBounds {
    let c = contraction_factor(eta, phi_m, gamma, span);
    let inv_norm_bound = (1.0 - phi_m * phi_m * gamma * span > 0.0).then(|| expansion_factor(phi_m, gamma, span).sqrt());
    WindowBounds { phi_norm_bound: c.max(0.0).sqrt(), lambda: -c.ln() / (2.0 * span), inv_norm_bound }
}

/// Dwell-time requirement for piecewise-constant parameters:
/// `0 < 2μ ≤ 2δ < min_k (d_{k+1} − d_k)`.
pub fn check_dwell(delta: f64, mu: f64, schedule: &ParamSchedule) -> bool {
    0.0 < mu && mu <= delta && 2.0 * delta < schedule.min_dwell()
}

/// Summary of every excitation-related check for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitationReport {
    pub t0: f64,
    pub t1: f64,
    pub eta: f64,
    pub phi_m: f64,
    pub design: DesignCheck,
    pub pe: Option<PeVerdict>,
    pub dwell: Option<bool>,
}

impl ExcitationReport {
    /// Build the report for the first window `[0, δ − initial_timer]`.
    ///
    /// `pe` is `(μ, horizon)` when persistence should be checked.
    #[allow(clippy::too_many_arguments)]
    pub fn analyze(
        phi: &SignalSpec,
        gamma1: f64,
        gamma2: f64,
        delta: f64,
        window: (f64, f64),
        step: f64,
        pe: Option<(f64, f64)>,
        schedule: Option<&ParamSchedule>,
    ) -> Result<Self> {
        let (t0, t1) = window;
        let eta = excitation_level(phi, t0, t1, step)?;
        let phi_m = sup_norm_bound(phi, t0, t1, step)?;
        let design = check_design_conditions(eta, phi_m, gamma1, gamma2, t1 - t0)?;
        let pe = match pe {
            Some((mu, horizon)) => Some(check_pe(phi, mu, horizon, mu / 4.0, step)?),
            None => None,
        };
        let dwell = match (schedule, pe) {
            (Some(s), Some(v)) if s.switch_times().len() > 1 => Some(check_dwell(delta, v.window, s)),
            _ => None,
        };
        Ok(Self { t0, t1, eta, phi_m, design, pe, dwell })
    }

    pub fn excited(&self) -> bool {
        self.eta > 0.0
    }

    /// Every check that was requested holds.
    pub fn satisfied(&self) -> bool {
        self.excited()
            && self.design.satisfied
            && self.pe.is_none_or(|v| v.persistent)
            && self.dwell.unwrap_or(true)
    }

    /// Human-readable warnings, one per failed check.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.excited() {
            out.push(format!("regressor not exciting on [{}, {}]", self.t0, self.t1));
        }
        if !self.design.cond7_holds() {
            out.push(format!("condition (7) violated: phi_m^2*gamma2*delta = {:.6} not in (0, 1)", self.design.cond7_lhs));
        }
        if !self.design.cond8_holds() {
            out.push(format!("condition (8) violated: lhs = {:.6} not in (0, 1)", self.design.cond8_lhs));
        }
        if let Some(v) = self.pe.filter(|v| !v.persistent) {
            out.push(format!("not persistently exciting: window [{}, {}] has eta = {:e}", v.worst_start, v.worst_start + v.window, v.worst_eta));
        }
        if self.dwell == Some(false) {
            out.push("dwell-time condition violated: need 2*mu <= 2*delta < min dwell".to_string());
        }
        out
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let d = &self.design;
        let mut s = String::new();
        let _ = writeln!(s, "interval = [{}, {}]", self.t0, self.t1);
        let _ = writeln!(s, "eta = {}", self.eta);
        let _ = writeln!(s, "phi_m = {}", self.phi_m);
        let _ = writeln!(s, "cond7_lhs = {}", d.cond7_lhs);
        let _ = writeln!(s, "cond8_lhs = {}", d.cond8_lhs);
        let _ = writeln!(s, "kappa1 = {}", d.kappa1);
        let _ = writeln!(s, "kappa2 = {}", d.kappa2);
        let _ = writeln!(s, "lambda = {}", d.lambda);
        let _ = writeln!(s, "conditions_satisfied = {}", d.satisfied);
        if let Some(v) = &self.pe {
            let _ = writeln!(s, "pe_window = {}", v.window);
            let _ = writeln!(s, "pe = {}", v.persistent);
            let _ = writeln!(s, "pe_worst_eta = {}", v.worst_eta);
            let _ = writeln!(s, "pe_worst_start = {}", v.worst_start);
        }
        if let Some(dw) = self.dwell {
            let _ = writeln!(s, "dwell = {dw}");
        }
        let _ = writeln!(s, "satisfied = {}", self.satisfied());
        s
    }

    pub const CSV_HEADER: &'static str =
        "t0,t1,eta,phi_m,cond7_lhs,cond8_lhs,kappa1,kappa2,lambda,conditions_satisfied,pe_window,pe,pe_worst_eta,dwell,satisfied";

    pub fn to_csv_row(&self) -> String {
        let d = &self.design;
        let opt = |v: Option<String>| v.unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.t0,
            self.t1,
            self.eta,
            self.phi_m,
            d.cond7_lhs,
            d.cond8_lhs,
            d.kappa1,
            d.kappa2,
            d.lambda,
            d.satisfied,
            opt(self.pe.map(|v| v.window.to_string())),
            opt(self.pe.map(|v| v.persistent.to_string())),
            opt(self.pe.map(|v| v.worst_eta.to_string())),
            opt(self.dwell.map(|v| v.to_string())),
            self.satisfied()
        )
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::signals::SignalSpec;

    fn step_and_decay() -> SignalSpec {
        SignalSpec::stack(vec![
            SignalSpec::PiecewiseConstant { switch_times: vec![2.0], values: vec![vec![4.0], vec![0.0]] },
            SignalSpec::DecayingExponential { amplitude: vec![4.0], rate: vec![10.0] },
        ])
    }

    fn sin_cos() -> SignalSpec {
        SignalSpec::Sinusoid { amplitude: vec![1.0, 1.0], frequency: vec![1.0, 1.0], phase: vec![0.0, PI / 2.0] }
    }

    // closed-form entries of ∫₀¹ φφᵀ for the step-and-decay regressor
    fn step_and_decay_gram() -> [[f64; 2]; 2] {
        let off = 1.6 * (1.0 - (-10.0f64).exp());
        [[16.0, off], [off, 0.8 * (1.0 - (-20.0f64).exp())]]
    }

    fn sym2_min_eig(m: [[f64; 2]; 2]) -> f64 {
        let tr = m[0][0] + m[1][1];
        let disc = ((m[0][0] - m[1][1]).powi(2) + 4.0 * m[0][1] * m[0][1]).sqrt();
        0.5 * (tr - disc)
    }

    #[test]
    fn gram_of_zero_is_zero() {
        let g = gram(&SignalSpec::zero(3), 0.0, 1.0, 1e-3).unwrap();
        assert_eq!(g, Matrix::zeros(3, 3));
        assert_eq!(excitation_level(&SignalSpec::zero(3), 0.0, 1.0, 1e-3).unwrap(), 0.0);
    }

    #[test]
    fn gram_of_unit_constant() {
        let g = gram(&SignalSpec::constant(vec![1.0]), 0.0, 1.0, 1e-3).unwrap();
        assert!((g[(0, 0)] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn gram_of_step_and_decay() {
        let g = gram(&step_and_decay(), 0.0, 1.0, 1e-4).unwrap();
        let exact = step_and_decay_gram();
        for i in 0..2 {
            for j in 0..2 {
                assert!((g[(i, j)] - exact[i][j]).abs() < 1e-6, "({i},{j}) {} vs {}", g[(i, j)], exact[i][j]);
            }
        }
        assert_eq!(g[(0, 1)], g[(1, 0)]);
    }

    #[test]
    fn eta_of_step_and_decay() {
        let expected = sym2_min_eig(step_and_decay_gram());
        assert!((expected - 0.633).abs() < 1e-3);
        let eta = excitation_level(&step_and_decay(), 0.0, 1.0, 1e-4).unwrap();
        assert!((eta - expected).abs() < 1e-6);
    }

    #[test]
    fn eta_of_sin_cos_over_period() {
        let eta = excitation_level(&sin_cos(), 0.0, 2.0 * PI, 1e-3).unwrap();
        assert!((eta - PI).abs() < 1e-6);
    }

    #[test]
    fn pe_examples() {
        let v = check_pe(&step_and_decay(), 1.0, 5.0, 0.25, 1e-3).unwrap();
        assert!(!v.persistent);
        assert_eq!(v.worst_eta, 0.0);
        assert!(v.worst_start > 1.0);

        let v = check_pe(&sin_cos(), 2.0 * PI, 20.0, PI / 2.0, 1e-3).unwrap();
        assert!(v.persistent);
        assert!((v.worst_eta - PI).abs() < 1e-6);

        assert!(!check_pe(&SignalSpec::zero(2), 1.0, 3.0, 0.25, 1e-2).unwrap().persistent);
    }

    #[test]
    fn pe_rejects_short_horizon() {
        assert!(check_pe(&sin_cos(), 2.0, 1.0, 0.5, 1e-2).is_err());
    }

    #[test]
    fn design_conditions_scalar_demo() {
        let d = check_design_conditions(0.1, 1.0, 4.0, 0.5, 0.1).unwrap();
        assert!((d.cond7_lhs - 0.05).abs() < 1e-15);
        let first = 1.0 - 0.8 / 1.4f64.powi(2);
        let second = 1.0 + 0.1 / 0.95f64.powi(2);
        assert!((first - 0.592).abs() < 1e-3);
        assert!((second - 1.1108).abs() < 1e-4);
        assert!((d.cond8_lhs - first * second).abs() < 1e-12);
        assert!((d.cond8_lhs - 0.658).abs() < 1e-3);
        assert!(d.satisfied);
        assert!((d.kappa1 - first.sqrt()).abs() < 1e-12);
        assert!((d.kappa2 - second.sqrt()).abs() < 1e-12);
        assert!((d.lambda + first.ln() / 0.2).abs() < 1e-12);
    }

    #[test]
    fn design_conditions_small_delta_limit() {
        let (eta, gamma1) = (0.3, 0.7);
        let d = check_design_conditions(eta, 1.0, gamma1, 0.2, 1e-12).unwrap();
        assert!((d.cond8_lhs - (1.0 - 2.0 * eta * gamma1)).abs() < 1e-9);
    }

    #[test]
    fn design_conditions_violated() {
        let d = check_design_conditions(1.0, 1.0, 0.5, 2.0, 1.0).unwrap();
        assert_eq!(d.cond7_lhs, 2.0);
        assert!(!d.satisfied);
    }

    #[test]
    fn equal_rates_rejected() {
        assert!(check_design_conditions(0.1, 1.0, 0.5, 0.5, 0.1).is_err());
    }

    #[test]
    fn window_bounds_examples() {
        let b = lemma1_bounds(0.1, 1.0, 4.0, 0.1);
        assert!((b.phi_norm_bound - 0.592f64.sqrt()).abs() < 1e-3);
        assert!((b.phi_norm_bound - 0.7694).abs() < 1e-3);
        assert!(b.lambda > 0.0);

        let b = lemma1_bounds(0.1, 1.0, 0.5, 0.1);
        assert!((b.inv_norm_bound.unwrap() - 1.0539).abs() < 1e-4);

        assert!(lemma1_bounds(0.1, 1.0, 10.0, 0.1).inv_norm_bound.is_none());
        assert!(lemma1_bounds(0.1, 2.0, 1.0, 0.5).inv_norm_bound.is_none());
    }

    #[test]
    fn dwell_examples() {
        let every = |gap: f64| ParamSchedule::Piecewise {
            starts: (0..6).map(|k| k as f64 * gap).collect(),
            values: (0..6).map(|k| vec![k as f64]).collect(),
        };
        assert!(check_dwell(2.0 * PI, 2.0 * PI, &every(15.0)));
        assert!(!check_dwell(1.0, 1.0, &every(1.5)));
        assert!(check_dwell(1.0, 1.0, &ParamSchedule::constant(vec![1.0])));
        assert!(!check_dwell(1.0, 2.0, &ParamSchedule::constant(vec![1.0])));
    }

    #[test]
    fn report_flags_condition_7_for_step_and_decay() {
        let r = ExcitationReport::analyze(&step_and_decay(), 0.05, 0.5, 1.0, (0.0, 1.0), 1e-4, None, None).unwrap();
        assert!(r.excited());
        assert!(!r.design.cond7_holds());
        assert!((r.design.cond7_lhs - 32.0 * 1.0201 * 0.5).abs() < 1e-6);
        assert!(!r.satisfied());
        assert!(r.warnings().iter().any(|w| w.contains("condition (7)")));
        let text = r.to_text();
        assert!(text.contains("eta = "));
        assert_eq!(r.to_csv_row().split(',').count(), ExcitationReport::CSV_HEADER.split(',').count());
    }
}
