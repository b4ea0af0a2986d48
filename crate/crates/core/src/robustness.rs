//! Noise robustness: the ISS and iISS bounds on the distance of the
//! estimates to the true parameter, their pointwise verification against
//! simulated arcs, and `(τ, ε)`-closeness of two arcs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{EstimatorConfig, HybridArc, Sample};
use crate::excitation::DesignCheck;
use crate::numerics::time_grid;
use crate::signals::{NoiseSpec, ParamSchedule};

/// Margin below which a bound counts as violated.
pub const MARGIN_TOLERANCE: f64 = 1e-6;

/// How the reset gains are bounded in the post-jump terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainBound {
    /// `‖K₁‖, ‖I − K₁‖ ≤ 1 + κ₁κ₂`, as the published bounds assume.
    #[default]
    Stated,
    /// `‖K₁‖ ≤ 1/(1 − κ₁κ₂)` and `‖K₂‖ ≤ κ₁κ₂/(1 − κ₁κ₂)`, from
    /// `K₁ = (I − Φ₁Φ₂⁻¹)⁻¹` and a Neumann series. Needs `κ₁κ₂ < 1`.
    Neumann,
}

/// Constants entering the noise bounds, together with the realized noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseBoundInputs {
    pub delta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub phi_m: f64,
    pub eta: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub lambda: f64,
    /// Overshoot of the window decay estimate.
    pub kappa: f64,
    pub gain_bound: GainBound,
    pub w_inf: f64,
    /// Grid times and the cumulative `∫₀ᵗ |w(s)| ds` on them.
    pub w_times: Vec<f64>,
    pub w_l1: Vec<f64>,
}

impl NoiseBoundInputs {
    /// Tabulate `|w|` on `[0, t_end]` and combine it with the excitation
    /// constants.
    pub fn new(
        cfg: &EstimatorConfig,
        design: &DesignCheck,
        eta: f64,
        phi_m: f64,
        noise: &NoiseSpec,
        t_end: f64,
        step: f64,
    ) -> Result<Self> {
        let grid = time_grid(0.0, t_end, step)?;
        let mut w_l1 = Vec::with_capacity(grid.len());
        let mut w_inf = 0.0f64;
        let mut acc = 0.0;
        let mut prev = noise.sample(grid[0])?.abs();
        w_inf = w_inf.max(prev);
        w_l1.push(0.0);
        for w in grid.windows(2) {
            let cur = noise.sample(w[1])?.abs();
            acc += 0.5 * (w[1] - w[0]) * (prev + cur);
            w_inf = w_inf.max(cur);
            w_l1.push(acc);
            prev = cur;
        }
        Ok(Self {
            delta: cfg.delta,
            gamma1: cfg.gamma1,
            gamma2: cfg.gamma2,
            phi_m,
            eta,
            kappa1: design.kappa1,
            kappa2: design.kappa2,
            lambda: design.lambda,
            kappa: 1.0,
            gain_bound: GainBound::Stated,
            w_inf,
            w_times: grid,
            w_l1,
        })
    }

    /// `∫₀ᵗ |w|`, linearly interpolated and clamped to the tabulated range.
    pub fn integral_abs_noise(&self, t: f64) -> f64 {
        let (times, vals) = (&self.w_times, &self.w_l1);
        if times.is_empty() || t <= times[0] {
            return 0.0;
        }
        let k = times.partition_point(|&s| s <= t);
        if k >= times.len() {
            return *vals.last().unwrap();
        }
        let (t0, t1) = (times[k - 1], times[k]);
        vals[k - 1] + (vals[k] - vals[k - 1]) * (t - t0) / (t1 - t0)
    }

    fn rho(j: usize) -> f64 {
        if j == 0 {
            1.0
        } else {
            0.0
        }
    }

    /// Bound on `‖K₁‖γ₁ + ‖K₂‖γ₂`.
    fn jump_factor(&self) -> Result<f64> {
        let k = self.kappa1 * self.kappa2;
        match self.gain_bound {
            GainBound::Stated => Ok((1.0 + k) * (self.gamma1 + self.gamma2)),
            GainBound::Neumann if k < 1.0 => Ok((self.gamma1 + k * self.gamma2) / (1.0 - k)),
            GainBound::Neumann => Err(Error::UndefinedBound(format!("kappa1*kappa2 = {k} must be below 1"))),
        }
    }

    fn beta(&self, s: f64, t: f64) -> f64 {
        (self.delta - t).exp() * s
    }
}

/// ISS bound `ρ(j)β(s, t) + α₁(|w|_∞) + (1 − ρ(j))α₂(|w|_∞)`.
pub fn iss_bound(t: f64, j: usize, inputs: &NoiseBoundInputs, initial_err: f64) -> Result<f64> {
    let p = inputs;
    if !(p.lambda > 0.0 && p.lambda.is_finite()) {
        return Err(Error::UndefinedBound(format!("decay rate lambda = {} must be positive", p.lambda)));
    }
    let rho = NoiseBoundInputs::rho(j);
    let alpha1 = p.gamma1.max(p.gamma2) * p.phi_m * p.delta * p.w_inf;
    let alpha2 = p.phi_m
        * (p.jump_factor()? * p.delta + p.gamma1 * (p.kappa / p.lambda + p.delta) + p.gamma2 * p.delta)
        * p.w_inf;
    Ok(rho * p.beta(initial_err, t) + alpha1 + (1.0 - rho) * alpha2)
}

/// iISS bound `ρ(j)β(s, t) + ∫α₁(|w|) + (1 − ρ(j))∫α₂(|w|)`.
///
/// With [`GainBound::Neumann`] the post-jump constant is
/// `(γ₁ + κ₁κ₂γ₂)/(1 − κ₁κ₂) + γ₁ + γ₂` in place of
/// `((1 + κ₁κ₂)δ + 1)(γ₁ + γ₂)`.
pub fn iiss_bound(t: f64, j: usize, inputs: &NoiseBoundInputs, initial_err: f64) -> Result<f64> {
    let p = inputs;
    let rho = NoiseBoundInputs::rho(j);
    let w = p.integral_abs_noise(t);
    let g_sum = p.gamma1 + p.gamma2;
    let int_alpha1 = p.gamma1.max(p.gamma2) * p.phi_m * w;
    let jump = match p.gain_bound {
        GainBound::Stated => p.jump_factor()? * p.delta,
        GainBound::Neumann => p.jump_factor()?,
    };
    let int_alpha2 = (jump + g_sum) * p.phi_m * w;
    Ok(rho * p.beta(initial_err, t) + int_alpha1 + (1.0 - rho) * int_alpha2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    Iss,
    Iiss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginSample {
    pub t: f64,
    pub j: usize,
    pub err: f64,
    pub bound: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub min_margin: f64,
    /// Largest amount by which the error exceeds the bound (0 if never).
    pub max_violation: f64,
    pub passes: bool,
    pub series: Vec<MarginSample>,
}

/// `max(‖θ̃₁‖, ‖θ̃₂‖)`, the quantity bounded component-wise.
pub fn estimate_error(sample: &Sample, truth: &ParamSchedule) -> f64 {
    let t = truth.value_at(sample.t);
    (&sample.theta1 - &t).norm().max((&sample.theta2 - &t).norm())
}

/// Evaluate `bound − error` at every sample of the arc.
pub fn verify_bound(
    arc: &HybridArc,
    schedule: &ParamSchedule,
    kind: BoundKind,
    inputs: &NoiseBoundInputs,
) -> Result<BoundReport> {
    let initial_err = arc.samples().next().map_or(0.0, |(_, s)| estimate_error(s, schedule));
    let mut series = Vec::new();
    let mut min_margin = f64::INFINITY;
    for (j, s) in arc.samples() {
        let err = estimate_error(s, schedule);
        let bound = match kind {
            BoundKind::Iss => iss_bound(s.t, j, inputs, initial_err)?,
            BoundKind::Iiss => iiss_bound(s.t, j, inputs, initial_err)?,
        };
        let margin = bound - err;
        min_margin = min_margin.min(margin);
        series.push(MarginSample { t: s.t, j, err, bound, margin });
    }
    Ok(BoundReport {
        kind,
        min_margin,
        max_violation: (-min_margin).max(0.0),
        passes: min_margin >= -MARGIN_TOLERANCE,
        series,
    })
}

fn state_distance(a: &Sample, b: &Sample) -> f64 {
    ((&a.theta1 - &b.theta1).norm_squared() + (&a.theta2 - &b.theta2).norm_squared()).sqrt()
}

fn by_jump(arc: &HybridArc) -> Vec<Vec<&Sample>> {
    let mut out: Vec<Vec<&Sample>> = Vec::new();
    for (j, s) in arc.samples() {
        if out.len() <= j {
            out.resize_with(j + 1, Vec::new);
        }
        out[j].push(s);
    }
    out
}

fn one_sided(a: &HybridArc, b: &[Vec<&Sample>], tau: f64, eps: f64) -> bool {
    a.samples().filter(|(j, s)| s.t + *j as f64 <= tau).all(|(j, s)| {
        let Some(cands) = b.get(j) else { return false };
        let lo = cands.partition_point(|c| c.t < s.t - eps);
        cands[lo..].iter().take_while(|c| c.t <= s.t + eps).any(|c| state_distance(s, c) <= eps)
    })
}

/// `(τ, ε)`-closeness of two arcs, comparing estimates only.
pub fn closeness(arc_a: &HybridArc, arc_b: &HybridArc, tau: f64, eps: f64) -> bool {
    one_sided(arc_a, &by_jump(arc_b), tau, eps) && one_sided(arc_b, &by_jump(arc_a), tau, eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::run;
    use crate::excitation::check_design_conditions;
    use crate::signals::SignalSpec;

    fn inputs(w_inf: f64) -> NoiseBoundInputs {
        NoiseBoundInputs {
            delta: 1.0,
            gamma1: 0.05,
            gamma2: 0.5,
            phi_m: 5.713,
            eta: 0.6,
            kappa1: 0.9,
            kappa2: 1.2,
            lambda: 0.1,
            kappa: 1.0,
            gain_bound: GainBound::Stated,
            w_inf,
            w_times: vec![0.0, 1.0, 2.0],
            w_l1: vec![0.0, w_inf, 2.0 * w_inf],
        }
    }

    #[test]
    fn noise_free_bounds() {
        assert_eq!(iss_bound(2.0, 1, &inputs(0.0), 3.0).unwrap(), 0.0);
        let b = iss_bound(0.5, 0, &inputs(0.0), 3.0).unwrap();
        assert!((b - (0.5f64).exp() * 3.0).abs() < 1e-14);
        assert_eq!(iiss_bound(2.0, 1, &inputs(0.0), 3.0).unwrap(), 0.0);
        assert!((iiss_bound(0.0, 0, &inputs(0.0), 3.0).unwrap() - 3.0 * 1f64.exp()).abs() < 1e-14);
    }

    #[test]
    fn iss_alpha1_term() {
        let p = inputs(6.0);
        let b = iss_bound(50.0, 0, &p, 0.0).unwrap();
        assert!((b - 17.139).abs() < 1e-3);
    }

    #[test]
    fn iss_requires_positive_lambda() {
        let mut p = inputs(1.0);
        p.lambda = 0.0;
        assert!(matches!(iss_bound(1.0, 1, &p, 1.0), Err(Error::UndefinedBound(_))));
    }

    #[test]
    fn iiss_linear_in_time_for_constant_noise() {
        let p = inputs(2.0);
        let t = 1.5;
        let expected = 0.5 * 5.713 * 2.0 * t + ((1.0 + 0.9 * 1.2) * 1.0 + 1.0) * 0.55 * 5.713 * 2.0 * t;
        assert!((iiss_bound(t, 1, &p, 10.0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn bounds_monotone_in_noise() {
        for (a, b) in [(0.0, 0.5), (0.5, 3.0)] {
            assert!(iss_bound(1.0, 1, &inputs(a), 1.0).unwrap() <= iss_bound(1.0, 1, &inputs(b), 1.0).unwrap());
            assert!(iiss_bound(1.0, 1, &inputs(a), 1.0).unwrap() <= iiss_bound(1.0, 1, &inputs(b), 1.0).unwrap());
        }
    }

    #[test]
    fn cumulative_noise_integral() {
        let cfg = EstimatorConfig::new(1, 1.0, 1.0, 2.0, 1e-3);
        let d = check_design_conditions(0.5, 1.0, 1.0, 2.0, 0.1).unwrap();
        let p = NoiseBoundInputs::new(&cfg, &d, 0.5, 1.0, &NoiseSpec::sinusoid(6.0, 10.0), 3.0, 1e-4).unwrap();
        assert!((p.w_inf - 6.0).abs() < 1e-3);
        // two half periods of |6 sin 10t|, each contributing 1.2
        assert!((p.integral_abs_noise(std::f64::consts::PI / 5.0) - 2.4).abs() < 1e-5);
        assert!((p.integral_abs_noise(100.0) - p.w_l1.last().unwrap()).abs() < 1e-15);
    }

    fn scalar_arc(noise: &NoiseSpec) -> HybridArc {
        let cfg = EstimatorConfig::new(1, 0.1, 4.0, 0.5, 1e-4).with_initial_theta(vec![0.0]);
        run(&cfg, &SignalSpec::constant(vec![1.0]), &ParamSchedule::constant(vec![1.0]), noise, 0.5).unwrap()
    }

    fn scalar_inputs(noise: &NoiseSpec) -> NoiseBoundInputs {
        let cfg = EstimatorConfig::new(1, 0.1, 4.0, 0.5, 1e-4);
        let d = check_design_conditions(0.1, 1.01, 4.0, 0.5, 0.1).unwrap();
        NoiseBoundInputs::new(&cfg, &d, 0.1, 1.01, noise, 0.5, 1e-4).unwrap()
    }

    #[test]
    fn noise_free_arc_satisfies_iss() {
        let arc = scalar_arc(&NoiseSpec::Zero);
        let r = verify_bound(&arc, &ParamSchedule::constant(vec![1.0]), BoundKind::Iss, &scalar_inputs(&NoiseSpec::Zero))
            .unwrap();
        assert!(r.passes);
        assert_eq!(r.series.len(), arc.samples().count());
        assert!(r.series[0].margin.abs() < 1e-12 || r.series[0].margin > 0.0);
    }

    #[test]
    fn noisy_scalar_arc_against_each_bound() {
        let noise = NoiseSpec::sinusoid(0.5, 10.0);
        let arc = scalar_arc(&noise);
        let truth = ParamSchedule::constant(vec![1.0]);
        let mut p = scalar_inputs(&noise);
        assert!(verify_bound(&arc, &truth, BoundKind::Iss, &p).unwrap().passes);

        // K₁ ≈ 3.39 here, above the assumed 1 + κ₁κ₂ ≈ 1.81, and the stated
        // iISS bound is undercut right after the first jump.
        let stated = verify_bound(&arc, &truth, BoundKind::Iiss, &p).unwrap();
        assert!(!stated.passes);
        assert!(stated.series.iter().filter(|m| m.margin < 0.0).all(|m| m.j == 1));
        assert!(arc.jumps[0].gains.k1[(0, 0)] > 1.0 + p.kappa1 * p.kappa2);

        p.gain_bound = GainBound::Neumann;
        for kind in [BoundKind::Iss, BoundKind::Iiss] {
            assert!(verify_bound(&arc, &truth, kind, &p).unwrap().passes, "{kind:?}");
        }
    }

    #[test]
    fn neumann_gain_bound_needs_contraction() {
        let mut p = inputs(1.0);
        p.gain_bound = GainBound::Neumann;
        p.kappa2 = 2.0;
        assert!(matches!(iiss_bound(1.0, 1, &p, 1.0), Err(Error::UndefinedBound(_))));
    }

    #[test]
    fn understated_noise_is_caught() {
        let truth = ParamSchedule::constant(vec![1.0]);
        let arc = scalar_arc(&NoiseSpec::Sinusoid { amplitude: 200.0, frequency: 0.0, phase: std::f64::consts::FRAC_PI_2 });
        let declared = scalar_inputs(&NoiseSpec::sinusoid(1e-3, 10.0));
        let r = verify_bound(&arc, &truth, BoundKind::Iss, &declared).unwrap();
        assert!(!r.passes);
        assert!(r.max_violation > 0.0);
    }

    #[test]
    fn closeness_examples() {
        let clean = scalar_arc(&NoiseSpec::Zero);
        assert!(closeness(&clean, &clean, 10.0, 1e-9));
        let tiny = scalar_arc(&NoiseSpec::sinusoid(1e-6, 10.0));
        assert!(closeness(&clean, &tiny, 10.0, 1e-3));
        let loud = scalar_arc(&NoiseSpec::sinusoid(6.0, 10.0));
        assert!(!closeness(&clean, &loud, 10.0, 1e-3));
    }
}
