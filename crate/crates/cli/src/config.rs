//! Scenario files.
//!
//! A scenario is a TOML document: scalar settings at the top, then
//! `[regressor]`, `[truth]` and `[noise]` tables whose `kind` key selects the
//! signal family. A regressor or noise signal can instead be read from a CSV
//! file named by `regressor_csv` / `noise_csv`, resolved relative to the
//! scenario file.

use std::fmt;
use std::path::{Path, PathBuf};

use hyfit_core::estimator::{EstimatorConfig, Mode};
use hyfit_core::numerics::DEFAULT_COND_MAX;
use hyfit_core::signals::{NoiseSpec, ParamSchedule, SignalSpec};
use serde::{Deserialize, Serialize};

/// Environment variable that overrides every output directory.
pub const OUT_ENV: &str = "HYFIT_OUT";

fn default_step() -> f64 {
    1e-4
}

fn default_output() -> String {
    "out".into()
}

fn default_cond_max() -> f64 {
    DEFAULT_COND_MAX
}

fn default_record_every() -> usize {
    1
}

fn default_tol() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub n: usize,
    pub delta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_step")]
    pub step: f64,
    pub t_end: f64,
    /// Seed of the random noise realization.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_theta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_theta2: Option<Vec<f64>>,
    #[serde(default)]
    pub initial_timer: f64,
    #[serde(default = "default_cond_max")]
    pub cond_max: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// Error level used for the reported first-convergence time.
    #[serde(default = "default_tol")]
    pub convergence_tol: f64,
    /// Window length μ for the persistence-of-excitation check; the check is
    /// skipped when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pe_window: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regressor_csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regressor: Option<SignalSpec>,
    pub truth: ParamSchedule,
    #[serde(default, skip_serializing_if = "NoiseSpec::is_zero")]
    pub noise: NoiseSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub origin: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{line}: {}", self.origin, self.message),
            None => write!(f, "{}: {}", self.origin, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// A validated scenario with its signals resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub regressor: SignalSpec,
    pub noise: NoiseSpec,
}

/// Keys that validation messages may mention, most specific first.
const KEYS: &[&str] = &[
    "initial_theta2",
    "initial_theta",
    "initial_timer",
    "regressor_csv",
    "noise_csv",
    "convergence_tol",
    "record_every",
    "pe_window",
    "cond_max",
    "output_dir",
    "gamma1",
    "gamma2",
    "t_end",
    "delta",
    "step",
    "seed",
    "mode",
    "name",
    "regressor",
    "truth",
    "noise",
    "n",
];

/// 1-based line on which `key` is assigned or opens a table.
pub fn key_line(source: &str, key: &str) -> Option<usize> {
    source.lines().position(|line| {
        let l = line.trim_start();
        if let Some(rest) = l.strip_prefix('[') {
            let name = rest.trim_start_matches('[').split(']').next().unwrap_or("").trim();
            return name == key || name.starts_with(&format!("{key}."));
        }
        match l.strip_prefix(key) {
            Some(rest) => {
                let rest = rest.trim_start();
                rest.starts_with('=') || rest.starts_with('.')
            }
            None => false,
        }
    })
    .map(|i| i + 1)
}

fn mentioned_line(source: &str, message: &str) -> Option<usize> {
    KEYS.iter().filter(|k| mentions(message, k)).find_map(|k| key_line(source, k))
}

fn mentions(message: &str, key: &str) -> bool {
    let bytes = message.as_bytes();
    message.match_indices(key).any(|(i, _)| {
        let before = i.checked_sub(1).map(|j| bytes[j]);
        let after = bytes.get(i + key.len()).copied();
        let word = |c: Option<u8>| c.is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_');
        !word(before) && !word(after)
    })
}

impl ScenarioConfig {
    pub fn from_toml(source: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(source).map_err(|e| ConfigError {
            origin: origin.to_string(),
            line: e.span().map(|s| source.as_bytes()[..s.start.min(source.len())].iter().filter(|&&b| b == b'\n').count() + 1),
            message: e.message().trim().to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario configs always serialize")
    }

    pub fn estimator(&self) -> EstimatorConfig {
        EstimatorConfig {
            n: self.n,
            delta: self.delta,
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            mode: self.mode,
            step: self.step,
            cond_max: self.cond_max,
            initial_theta: self.initial_theta.clone(),
            initial_theta2: self.initial_theta2.clone(),
            initial_timer: self.initial_timer,
            record_every: self.record_every,
        }
    }

    /// Directory for results, honouring the environment override.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => PathBuf::from(&self.output_dir),
        }
    }

    /// Check every setting and load CSV-backed signals. `base` is the
    /// directory relative paths are resolved against.
    pub fn resolve(mut self, base: &Path) -> Result<Scenario, String> {
        if self.name.trim().is_empty() {
            return Err("name must not be empty".into());
        }
        if self.name.contains(['/', '\\']) {
            return Err("name must not contain path separators".into());
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(format!("t_end must be positive (got {})", self.t_end));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(format!("convergence_tol must be positive (got {})", self.convergence_tol));
        }
        if let Some(mu) = self.pe_window {
            if !(mu > 0.0 && mu <= self.t_end) {
                return Err(format!("pe_window must lie in (0, t_end] (got {mu})"));
            }
        }
        self.estimator().validate().map_err(|e| e.to_string())?;

        let regressor = match (&self.regressor, &self.regressor_csv) {
            (Some(_), Some(_)) => return Err("give either [regressor] or regressor_csv, not both".into()),
            (None, None) => return Err("missing [regressor] (or regressor_csv)".into()),
            (Some(spec), None) => spec.clone(),
            (None, Some(path)) => {
                SignalSpec::tabulated_from_path(&base.join(path)).map_err(|e| format!("regressor_csv: {e}"))?
            }
        };
        regressor.validate().map_err(|e| format!("regressor: {e}"))?;
        if regressor.dimension() != self.n {
            return Err(format!("regressor has dimension {}, but n = {}", regressor.dimension(), self.n));
        }
        self.truth.validate().map_err(|e| format!("truth: {e}"))?;
        if self.truth.dimension() != self.n {
            return Err(format!("truth has dimension {}, but n = {}", self.truth.dimension(), self.n));
        }

        if let NoiseSpec::UniformRandom { seed, .. } = &mut self.noise {
            if *seed != 0 && *seed != self.seed {
                return Err("noise: set the random seed with the top-level seed key".into());
            }
            *seed = self.seed;
        }
        let noise = match &self.noise_csv {
            Some(_) if !self.noise.is_zero() => return Err("give either [noise] or noise_csv, not both".into()),
            Some(path) => NoiseSpec::tabulated_from_path(&base.join(path)).map_err(|e| format!("noise_csv: {e}"))?,
            None => self.noise.clone(),
        };
        noise.validate().map_err(|e| format!("noise: {e}"))?;
        Ok(Scenario { config: self, regressor, noise })
    }
}

impl Scenario {
    /// Parse and validate scenario text. Errors carry the line of the
    /// offending key where one can be identified.
    pub fn parse(source: &str, origin: &str, base: &Path) -> Result<Self, ConfigError> {
        let config = ScenarioConfig::from_toml(source, origin)?;
        config.resolve(base).map_err(|message| ConfigError {
            origin: origin.to_string(),
            line: mentioned_line(source, &message),
            message,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let origin = path.display().to_string();
        let source = std::fs::read_to_string(path).map_err(|e| ConfigError {
            origin: origin.clone(),
            line: None,
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&source, &origin, base)
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn truth(&self) -> &ParamSchedule {
        &self.config.truth
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCALAR: &str = r#"
name = "scalar"
n = 1
delta = 0.1
gamma1 = 4.0
gamma2 = 0.5
step = 1e-3
t_end = 0.5

[regressor]
kind = "constant"
value = [1.0]

[truth]
kind = "piecewise"
starts = [0.0]
values = [[2.0]]
"#;

    fn parse(text: &str) -> Result<Scenario, ConfigError> {
        Scenario::parse(text, "test.toml", Path::new("."))
    }

    #[test]
    fn parses_with_defaults() {
        let s = parse(SCALAR).unwrap();
        assert_eq!(s.config.mode, Mode::Constant);
        assert_eq!(s.config.record_every, 1);
        assert_eq!(s.noise, NoiseSpec::Zero);
        assert_eq!(s.regressor.dimension(), 1);
    }

    #[test]
    fn dump_round_trips() {
        let s = parse(SCALAR).unwrap();
        let dumped = s.config.to_toml();
        let again = parse(&dumped).unwrap();
        assert_eq!(again.config, s.config);
        assert_eq!(again.config.to_toml(), dumped);
    }

    #[test]
    fn syntax_errors_name_the_line() {
        let broken = SCALAR.replace("gamma2 = 0.5", "gamma2 = ");
        let err = parse(&broken).unwrap_err();
        assert_eq!(err.line, key_line(SCALAR, "gamma2"));
    }

    #[test]
    fn validation_errors_name_the_line() {
        let err = parse(&SCALAR.replace("gamma2 = 0.5", "gamma2 = 4.0")).unwrap_err();
        assert!(err.message.contains("differ"), "{err}");
        assert_eq!(err.line, key_line(SCALAR, "gamma1"));

        let err = parse(&SCALAR.replace("value = [1.0]", "value = [1.0, 2.0]")).unwrap_err();
        assert_eq!(err.line, key_line(SCALAR, "regressor"), "{err}");

        let err = parse(&SCALAR.replace("step = 1e-3", "step = 0.03")).unwrap_err();
        assert!(err.message.contains("multiple"), "{err}");
        assert_eq!(err.line, key_line(SCALAR, "delta"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse(&SCALAR.replace("t_end = 0.5", "t_end = 0.5\ngama = 1")).unwrap_err();
        assert!(err.message.contains("gama"), "{err}");
        assert_eq!(err.line, Some(9));
    }

    #[test]
    fn random_noise_takes_the_scenario_seed() {
        let text = format!("seed = 9\n{SCALAR}\n[noise]\nkind = \"uniform-random\"\namplitude = 0.1\ndt = 0.01\n");
        let s = parse(&text).unwrap();
        assert!(matches!(s.noise, NoiseSpec::UniformRandom { seed: 9, .. }));
        let clash = text.replace("dt = 0.01", "dt = 0.01\nseed = 4");
        assert!(parse(&clash).is_err());
    }
}
