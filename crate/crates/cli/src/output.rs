//! CSV and text artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hyfit_core::estimator::{ErrorSample, HybridArc};
use hyfit_core::numerics::spectral_norm;
use hyfit_core::robustness::BoundReport;

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn num(x: f64) -> String {
    x.to_string()
}

/// One row per recorded sample: `t, j, θ₁, θ₂, ‖θ̃₁‖, ‖θ̃₂‖` and, when a bound
/// was checked, `bound, margin`.
pub fn write_arc(path: &Path, arc: &HybridArc, errors: &[ErrorSample], bound: Option<&BoundReport>) -> Result<()> {
    let n = arc.last().map_or(0, |s| s.theta1.len());
    let mut header = vec!["t".to_string(), "j".to_string()];
    header.extend((1..=n).map(|i| format!("theta1_{i}")));
    header.extend((1..=n).map(|i| format!("theta2_{i}")));
    header.extend(["err1".to_string(), "err2".to_string()]);
    if bound.is_some() {
        header.extend(["bound".to_string(), "margin".to_string()]);
    }
    let mut w = writer(path)?;
    w.write_record(&header)?;
    for (k, ((j, s), e)) in arc.samples().zip(errors).enumerate() {
        let mut row = vec![num(s.t), j.to_string()];
        row.extend(s.theta1.iter().copied().map(num));
        row.extend(s.theta2.iter().copied().map(num));
        row.extend([num(e.err1), num(e.err2)]);
        if let Some(b) = bound {
            let m = &b.series[k];
            row.extend([num(m.bound), num(m.margin)]);
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per jump, with the reset gains' norms and the post-jump estimate.
pub fn write_jumps(path: &Path, arc: &HybridArc) -> Result<()> {
    let n = arc.last().map_or(0, |s| s.theta1.len());
    let mut header: Vec<String> =
        ["jump", "t", "q", "cond", "k1_norm", "k2_norm", "fallback"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=n).map(|i| format!("theta_{i}")));
    let mut w = writer(path)?;
    w.write_record(&header)?;
    for (k, jr) in arc.jumps.iter().enumerate() {
        let mut row = vec![
            (k + 1).to_string(),
            num(jr.t),
            jr.q.to_string(),
            jr.gains.cond.map(num).unwrap_or_default(),
            num(spectral_norm(&jr.gains.k1)),
            num(spectral_norm(&jr.gains.k2)),
            jr.fallback.to_string(),
        ];
        row.extend(jr.post_theta.iter().copied().map(num));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns of `(name, values)` sharing one time axis.
pub fn write_columns(path: &Path, times: &[f64], columns: &[(String, Vec<f64>)]) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["t".to_string()];
    header.extend(columns.iter().map(|(name, _)| name.clone()));
    w.write_record(&header)?;
    for (k, t) in times.iter().enumerate() {
        let mut row = vec![num(*t)];
        row.extend(columns.iter().map(|(_, v)| num(v[k])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn file_in(dir: &Path, name: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{name}{suffix}"))
}
