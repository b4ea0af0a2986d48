//! Declarative time signals: regressors, measurement noise and true
//! parameter trajectories.

use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::numerics::{time_grid, Signal, Vector};

/// Safety margin applied to sampled sup-norms.
pub const SUP_NORM_MARGIN: f64 = 1.01;

/// A known scalar function of time used to expand a time-varying parameter
/// component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BasisFn {
    Constant,
    Monomial { power: u32 },
    Exponential { rate: f64 },
    Gaussian { center: f64, width: f64 },
    Sigmoid { center: f64, slope: f64 },
}

impl BasisFn {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            BasisFn::Constant => 1.0,
            BasisFn::Monomial { power } => t.powi(power as i32),
            BasisFn::Exponential { rate } => (-rate * t).exp(),
            BasisFn::Gaussian { center, width } => (-((t - center) / width).powi(2)).exp(),
            BasisFn::Sigmoid { center, slope } => 1.0 / (1.0 + (-slope * (t - center)).exp()),
        }
    }

    /// `{t, t², …, t^m}`.
    pub fn monomials(m: u32) -> Vec<BasisFn> {
        (1..=m).map(|power| BasisFn::Monomial { power }).collect()
    }
}

/// A vector-valued signal of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SignalSpec {
    Constant {
        value: Vec<f64>,
    },
    /// `values[k]` holds on `[switch_times[k-1], switch_times[k])`, the first
    /// piece starting at 0 and the last extending forever.
    PiecewiseConstant {
        switch_times: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
    /// Component `i` is `amplitude[i]·sin(frequency[i]·t + phase[i])`.
    Sinusoid {
        amplitude: Vec<f64>,
        frequency: Vec<f64>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        phase: Vec<f64>,
    },
    /// Component `i` is `amplitude[i]·exp(−rate[i]·t)`.
    DecayingExponential {
        amplitude: Vec<f64>,
        rate: Vec<f64>,
    },
    /// Component `i` is `Σ_k coefficients[i][k]·t^k`.
    Polynomial {
        coefficients: Vec<Vec<f64>>,
    },
    /// Components of each part concatenated in order.
    Stack {
        parts: Vec<SignalSpec>,
    },
    /// Linear interpolation between rows; `values[k]` is the row at `times[k]`.
    Tabulated {
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
    /// `φ̄ = Diag(B₁, …, B_n) φ` where `B_i = (β_{1,i}, …, β_{M,i})ᵀ`.
    Augmented {
        base: Box<SignalSpec>,
        basis: Vec<Vec<BasisFn>>,
    },
}

impl SignalSpec {
    pub fn zero(n: usize) -> Self {
        SignalSpec::Constant { value: vec![0.0; n] }
    }

    pub fn constant(value: Vec<f64>) -> Self {
        SignalSpec::Constant { value }
    }

    pub fn stack(parts: Vec<SignalSpec>) -> Self {
        SignalSpec::Stack { parts }
    }

    /// Unit-amplitude sinusoids `sin(ω_k t)` for the given frequencies.
    pub fn sines(frequencies: Vec<f64>) -> Self {
        SignalSpec::Sinusoid {
            amplitude: vec![1.0; frequencies.len()],
            frequency: frequencies,
            phase: Vec::new(),
        }
    }

    /// Read a tabulated signal from CSV: header row, then `t, v1, v2, …`.
    pub fn tabulated_from_csv<R: Read>(reader: R) -> Result<Self> {
        let (times, values) = read_table(reader)?;
        let spec = SignalSpec::Tabulated { times, values };
        spec.validate()?;
        Ok(spec)
    }

    pub fn tabulated_from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        Self::tabulated_from_csv(file)
    }

    pub fn dimension(&self) -> usize {
        match self {
            SignalSpec::Constant { value } => value.len(),
            SignalSpec::PiecewiseConstant { values, .. } => values.first().map_or(0, Vec::len),
            SignalSpec::Sinusoid { amplitude, .. } => amplitude.len(),
            SignalSpec::DecayingExponential { amplitude, .. } => amplitude.len(),
            SignalSpec::Polynomial { coefficients } => coefficients.len(),
            SignalSpec::Stack { parts } => parts.iter().map(SignalSpec::dimension).sum(),
            SignalSpec::Tabulated { values, .. } => values.first().map_or(0, Vec::len),
            SignalSpec::Augmented { basis, .. } => basis.iter().map(Vec::len).sum(),
        }
    }

    /// Check the structural invariants of the spec.
    pub fn validate(&self) -> Result<()> {
        match self {
            SignalSpec::Constant { value } => nonempty(value.len(), "constant signal"),
            SignalSpec::PiecewiseConstant { switch_times, values } => {
                strictly_increasing(switch_times, "switch times")?;
                if switch_times.first().is_some_and(|&t| t <= 0.0) {
                    return Err(invalid("switch times must be positive"));
                }
                if values.len() != switch_times.len() + 1 {
                    return Err(shape(format!(
                        "{} switch times need {} pieces, got {}",
                        switch_times.len(),
                        switch_times.len() + 1,
                        values.len()
                    )));
                }
                uniform_rows(values, "piecewise-constant values")
            }
            SignalSpec::Sinusoid { amplitude, frequency, phase } => {
                nonempty(amplitude.len(), "sinusoid")?;
                same_len(amplitude.len(), frequency.len(), "sinusoid frequency")?;
                if !phase.is_empty() {
                    same_len(amplitude.len(), phase.len(), "sinusoid phase")?;
                }
                Ok(())
            }
            SignalSpec::DecayingExponential { amplitude, rate } => {
                nonempty(amplitude.len(), "exponential")?;
                same_len(amplitude.len(), rate.len(), "exponential rate")
            }
            SignalSpec::Polynomial { coefficients } => nonempty(coefficients.len(), "polynomial"),
            SignalSpec::Stack { parts } => {
                nonempty(parts.len(), "stack")?;
                parts.iter().try_for_each(SignalSpec::validate)
            }
            SignalSpec::Tabulated { times, values } => {
                nonempty(times.len(), "tabulated signal")?;
                strictly_increasing(times, "tabulated grid")?;
                same_len(times.len(), values.len(), "tabulated rows")?;
                uniform_rows(values, "tabulated values")
            }
            SignalSpec::Augmented { base, basis } => {
                base.validate()?;
                check_basis_shape(base.dimension(), basis)
            }
        }
    }

    fn write(&self, t: f64, out: &mut [f64]) -> Result<()> {
        match self {
            SignalSpec::Constant { value } => out.copy_from_slice(value),
            SignalSpec::PiecewiseConstant { switch_times, values } => {
                let k = switch_times.partition_point(|&s| s <= t);
                out.copy_from_slice(&values[k]);
            }
            SignalSpec::Sinusoid { amplitude, frequency, phase } => {
                for (i, o) in out.iter_mut().enumerate() {
                    let p = phase.get(i).copied().unwrap_or(0.0);
                    *o = amplitude[i] * (frequency[i] * t + p).sin();
                }
            }
            SignalSpec::DecayingExponential { amplitude, rate } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = amplitude[i] * (-rate[i] * t).exp();
                }
            }
            SignalSpec::Polynomial { coefficients } => {
                for (o, c) in out.iter_mut().zip(coefficients) {
                    *o = c.iter().rev().fold(0.0, |acc, &a| acc * t + a);
                }
            }
            SignalSpec::Stack { parts } => {
                let mut offset = 0;
                for part in parts {
                    let d = part.dimension();
                    part.write(t, &mut out[offset..offset + d])?;
                    offset += d;
                }
            }
            SignalSpec::Tabulated { times, values } => {
                let (lo, hi) = (times[0], times[times.len() - 1]);
                if t < lo || t > hi {
                    return Err(Error::OutOfRange { t, lo, hi });
                }
                let k = times.partition_point(|&s| s <= t);
                if k == times.len() {
                    out.copy_from_slice(&values[k - 1]);
                } else {
                    let (t0, t1) = (times[k - 1], times[k]);
                    let w = (t - t0) / (t1 - t0);
                    for (i, o) in out.iter_mut().enumerate() {
                        *o = (1.0 - w) * values[k - 1][i] + w * values[k][i];
                    }
                }
            }
            SignalSpec::Augmented { base, basis } => {
                let mut phi = vec![0.0; base.dimension()];
                base.write(t, &mut phi)?;
                let mut idx = 0;
                for (component, fns) in phi.iter().zip(basis) {
                    for f in fns {
                        out[idx] = f.eval(t) * component;
                        idx += 1;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn sample(&self, t: f64) -> Result<Vector> {
        self.sample_vec(t)
    }
}

impl Signal for SignalSpec {
    fn dim(&self) -> usize {
        self.dimension()
    }

    fn sample_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        if out.len() != self.dimension() {
            return Err(shape(format!("output buffer has {} slots, signal has {}", out.len(), self.dimension())));
        }
        self.write(t, out)
    }
}

/// Largest Euclidean norm of `spec` over a grid on `[t0, t1]`, inflated by
/// [`SUP_NORM_MARGIN`].
pub fn sup_norm_bound(spec: &SignalSpec, t0: f64, t1: f64, grid_step: f64) -> Result<f64> {
    let mut buf = vec![0.0; spec.dimension()];
    let mut sup = 0.0f64;
    for t in time_grid(t0, t1, grid_step)? {
        spec.sample_into(t, &mut buf)?;
        sup = sup.max(buf.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    Ok(sup * SUP_NORM_MARGIN)
}

/// Augment an `n`-dimensional regressor with `M` basis functions per
/// component, giving the `nM`-dimensional `φ̄ = Diag(B₁, …, B_n) φ`. The
/// coefficient ordering matches `Γ = Row(A₁, …, A_n)`.
pub fn basis_augment(phi: &SignalSpec, basis: &[Vec<BasisFn>]) -> Result<SignalSpec> {
    check_basis_shape(phi.dimension(), basis)?;
    Ok(SignalSpec::Augmented { base: Box::new(phi.clone()), basis: basis.to_vec() })
}

fn check_basis_shape(n: usize, basis: &[Vec<BasisFn>]) -> Result<()> {
    if basis.len() != n {
        return Err(shape(format!("{} basis lists for a {n}-dimensional regressor", basis.len())));
    }
    let m = basis.first().map_or(0, Vec::len);
    if m == 0 || basis.iter().any(|b| b.len() != m) {
        return Err(shape("every component needs the same non-zero number of basis functions"));
    }
    Ok(())
}

/// True parameter trajectory `θ*(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ParamSchedule {
    /// `values[k]` holds on `[starts[k], starts[k+1])`; `starts[0] = 0`.
    Piecewise { starts: Vec<f64>, values: Vec<Vec<f64>> },
    /// `θ*_i(t) = Σ_k Γ[iM + k] β_{k,i}(t)`.
    Basis { coefficients: Vec<f64>, basis: Vec<Vec<BasisFn>> },
}

impl ParamSchedule {
    pub fn constant(value: Vec<f64>) -> Self {
        ParamSchedule::Piecewise { starts: vec![0.0], values: vec![value] }
    }

    pub fn dimension(&self) -> usize {
        match self {
            ParamSchedule::Piecewise { values, .. } => values.first().map_or(0, Vec::len),
            ParamSchedule::Basis { basis, .. } => basis.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ParamSchedule::Piecewise { starts, values } => {
                nonempty(starts.len(), "parameter schedule")?;
                if starts[0] != 0.0 {
                    return Err(invalid("first parameter piece must start at t = 0"));
                }
                strictly_increasing(starts, "parameter switch times")?;
                same_len(starts.len(), values.len(), "parameter pieces")?;
                uniform_rows(values, "parameter values")
            }
            ParamSchedule::Basis { coefficients, basis } => {
                check_basis_shape(basis.len(), basis)?;
                let m = basis[0].len();
                same_len(basis.len() * m, coefficients.len(), "basis coefficients")
            }
        }
    }

    pub fn is_piecewise(&self) -> bool {
        matches!(self, ParamSchedule::Piecewise { .. })
    }

    /// Start times `d_k` of the constant pieces (only `[0]` for other forms).
    pub fn switch_times(&self) -> &[f64] {
        match self {
            ParamSchedule::Piecewise { starts, .. } => starts,
            ParamSchedule::Basis { .. } => &[0.0],
        }
    }

    /// Smallest gap between consecutive changes; infinite for a single piece.
    pub fn min_dwell(&self) -> f64 {
        self.switch_times().windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    pub fn value_at(&self, t: f64) -> Vector {
        match self {
            ParamSchedule::Piecewise { starts, values } => {
                let k = starts.partition_point(|&s| s <= t).max(1) - 1;
                Vector::from_column_slice(&values[k])
            }
            ParamSchedule::Basis { coefficients, basis } => {
                let m = basis[0].len();
                Vector::from_iterator(
                    basis.len(),
                    basis
                        .iter()
                        .enumerate()
                        .map(|(i, fns)| fns.iter().enumerate().map(|(k, f)| coefficients[i * m + k] * f.eval(t)).sum()),
                )
            }
        }
    }

    /// `θ*(t)ᵀ φ` without allocating.
    pub fn dot_at(&self, t: f64, phi: &[f64]) -> f64 {
        match self {
            ParamSchedule::Piecewise { starts, values } => {
                let k = starts.partition_point(|&s| s <= t).max(1) - 1;
                values[k].iter().zip(phi).map(|(a, b)| a * b).sum()
            }
            ParamSchedule::Basis { coefficients, basis } => {
                let m = basis[0].len();
                basis
                    .iter()
                    .enumerate()
                    .map(|(i, fns)| {
                        let theta_i: f64 = fns.iter().enumerate().map(|(k, f)| coefficients[i * m + k] * f.eval(t)).sum();
                        theta_i * phi[i]
                    })
                    .sum()
            }
        }
    }
}

/// Additive measurement noise `w(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseSpec {
    #[default]
    Zero,
    /// `amplitude·sin(frequency·t + phase)`, frequency in rad/s.
    Sinusoid {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Uniform on `[−amplitude, amplitude]`, held over each interval of
    /// length `dt`; the value on interval `k` depends only on `(seed, k)`.
    UniformRandom {
        amplitude: f64,
        #[serde(default)]
        seed: u64,
        dt: f64,
    },
    Tabulated { times: Vec<f64>, values: Vec<f64> },
}

impl NoiseSpec {
    pub fn sinusoid(amplitude: f64, frequency: f64) -> Self {
        NoiseSpec::Sinusoid { amplitude, frequency, phase: 0.0 }
    }

    pub fn tabulated_from_csv<R: Read>(reader: R) -> Result<Self> {
        let (times, rows) = read_table(reader)?;
        if rows.iter().any(|r| r.len() != 1) {
            return Err(shape("noise table must have exactly one value column"));
        }
        let spec = NoiseSpec::Tabulated { times, values: rows.into_iter().map(|r| r[0]).collect() };
        spec.validate()?;
        Ok(spec)
    }

    pub fn tabulated_from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        Self::tabulated_from_csv(file)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseSpec::Zero => Ok(()),
            NoiseSpec::Sinusoid { amplitude, .. } => non_negative(*amplitude, "noise amplitude"),
            NoiseSpec::UniformRandom { amplitude, dt, .. } => {
                non_negative(*amplitude, "noise amplitude")?;
                if !(*dt > 0.0) {
                    return Err(invalid("random noise hold interval must be positive"));
                }
                Ok(())
            }
            NoiseSpec::Tabulated { times, values } => {
                nonempty(times.len(), "noise table")?;
                strictly_increasing(times, "noise grid")?;
                same_len(times.len(), values.len(), "noise rows")
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            NoiseSpec::Zero => true,
            NoiseSpec::Sinusoid { amplitude, .. } | NoiseSpec::UniformRandom { amplitude, .. } => *amplitude == 0.0,
            NoiseSpec::Tabulated { values, .. } => values.iter().all(|&v| v == 0.0),
        }
    }

    pub fn sample(&self, t: f64) -> Result<f64> {
        Ok(match self {
            NoiseSpec::Zero => 0.0,
            NoiseSpec::Sinusoid { amplitude, frequency, phase } => amplitude * (frequency * t + phase).sin(),
            NoiseSpec::UniformRandom { amplitude, seed, dt } => {
                let index = (t / dt + 1e-9).floor().max(0.0) as u128;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_word_pos(2 * index);
                amplitude * (2.0 * rng.random::<f64>() - 1.0)
            }
            NoiseSpec::Tabulated { times, values } => {
                let (lo, hi) = (times[0], times[times.len() - 1]);
                if t < lo || t > hi {
                    return Err(Error::OutOfRange { t, lo, hi });
                }
                let k = times.partition_point(|&s| s <= t);
                if k == times.len() {
                    values[k - 1]
                } else {
                    let w = (t - times[k - 1]) / (times[k] - times[k - 1]);
                    (1.0 - w) * values[k - 1] + w * values[k]
                }
            }
        })
    }
}

/// `y(t) = θ*(t)ᵀ φ(t) + w(t)`.
pub fn regression_output(schedule: &ParamSchedule, phi: &SignalSpec, noise: &NoiseSpec, t: f64) -> Result<f64> {
    if schedule.dimension() != phi.dimension() {
        return Err(shape(format!(
            "parameter has dimension {}, regressor {}",
            schedule.dimension(),
            phi.dimension()
        )));
    }
    let p = phi.sample(t)?;
    Ok(schedule.dot_at(t, p.as_slice()) + noise.sample(t)?)
}

/// The measured regression problem seen by an estimator: regressor, true
/// parameter and noise.
#[derive(Debug, Clone, Copy)]
pub struct Measurement<'a> {
    pub phi: &'a SignalSpec,
    pub schedule: &'a ParamSchedule,
    pub noise: &'a NoiseSpec,
}

impl<'a> Measurement<'a> {
    pub fn new(phi: &'a SignalSpec, schedule: &'a ParamSchedule, noise: &'a NoiseSpec) -> Result<Self> {
        phi.validate()?;
        schedule.validate()?;
        noise.validate()?;
        if schedule.dimension() != phi.dimension() {
            return Err(shape(format!(
                "parameter has dimension {}, regressor {}",
                schedule.dimension(),
                phi.dimension()
            )));
        }
        Ok(Self { phi, schedule, noise })
    }

    pub fn dim(&self) -> usize {
        self.phi.dimension()
    }

    /// Output at `t` given the regressor already sampled there.
    pub fn output_with(&self, t: f64, phi_t: &[f64]) -> Result<f64> {
        Ok(self.schedule.dot_at(t, phi_t) + self.noise.sample(t)?)
    }
}

fn read_table<R: Read>(reader: R) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let mut times = Vec::new();
    let mut rows = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Data(e.to_string()))?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let parsed = parsed.map_err(|e| Error::Data(format!("row {}: {e}", line + 2)))?;
        if parsed.len() < 2 {
            return Err(Error::Data(format!("row {}: need a time column and at least one value", line + 2)));
        }
        times.push(parsed[0]);
        rows.push(parsed[1..].to_vec());
    }
    Ok((times, rows))
}

fn nonempty(len: usize, what: &str) -> Result<()> {
    if len == 0 {
        Err(shape(format!("{what} is empty")))
    } else {
        Ok(())
    }
}

fn same_len(expected: usize, got: usize, what: &str) -> Result<()> {
    if expected != got {
        Err(shape(format!("{what}: expected {expected} entries, got {got}")))
    } else {
        Ok(())
    }
}

fn uniform_rows(rows: &[Vec<f64>], what: &str) -> Result<()> {
    let d = rows.first().map_or(0, Vec::len);
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(shape(format!("{what}: rows must share a non-zero dimension")));
    }
    Ok(())
}

fn strictly_increasing(xs: &[f64], what: &str) -> Result<()> {
    if xs.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid(format!("{what} must be strictly increasing")));
    }
    Ok(())
}

fn non_negative(x: f64, what: &str) -> Result<()> {
    if x < 0.0 || !x.is_finite() {
        return Err(invalid(format!("{what} must be non-negative")));
    }
    Ok(())
}
