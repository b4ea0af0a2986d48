//! Scenario files shipped with the binary.

use std::path::Path;

use crate::config::{ConfigError, Scenario};

pub struct Builtin {
    pub name: &'static str,
    pub source: &'static str,
}

macro_rules! builtin {
    ($name:literal) => {
        Builtin { name: $name, source: include_str!(concat!("../scenarios/", $name, ".toml")) }
    };
}

pub const BUILTINS: &[Builtin] = &[
    builtin!("scalar"),
    builtin!("constant"),
    builtin!("constant-noisy"),
    builtin!("timevarying-a"),
    builtin!("timevarying-b"),
    builtin!("switching"),
];

pub fn source(name: &str) -> Option<&'static str> {
    BUILTINS.iter().find(|b| b.name == name).map(|b| b.source)
}

/// Parse a shipped scenario. Panics only if a shipped file is broken, which
/// the tests rule out.
pub fn builtin(name: &str) -> Option<Scenario> {
    source(name).map(|src| parse_builtin(name, src).unwrap_or_else(|e| panic!("shipped scenario {e}")))
}

fn parse_builtin(name: &str, src: &str) -> Result<Scenario, ConfigError> {
    Scenario::parse(src, &format!("{name}.toml"), Path::new("."))
}
