//! Convergence-order measurements, reversal-loss implementation comparison,
//! and desk-scale sweeps. Every experiment returns plain rows plus a CSV view.

mod maxerror;
mod solver;
mod sweeps;

use std::fmt::Write as _;
use std::path::Path;

pub use maxerror::{maxerror_comparison, worst_case_errors, ComparisonCase, ComparisonResult, MicroConfig};
pub use solver::{solver_order_experiment, AnalyticSystem, ScalingPoint, ScalingResult, ScalingSpec};
pub use sweeps::{
    alpha_sweep, energy_csv, energy_curve, horizon_sweep, ratio_sweep, reversal_track, sweep_csv, track_csv, EnergyPoint,
    SweepRow, TrackRow,
    DEFAULT_ALPHAS, DEFAULT_LENGTHS,
};

use crate::dataio::format_f64;
use crate::model::ModelError;
use crate::physics::PhysicsError;
use crate::training::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error("invalid experiment setup: {0}")]
    Invalid(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Least-squares slope of `ln y` against `ln x` and the RMS residual.
/// `None` when fewer than four points, any non-positive value, or no
/// spread in either coordinate.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 4 || xs.iter().chain(ys).any(|v| !(*v > 0.0 && v.is_finite())) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    let slope = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / sxx;
    let icpt = my - slope * mx;
    let rss: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - icpt - slope * x).powi(2)).sum();
    Some((slope, (rss / n).sqrt()))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Csv {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(out, "{}", r.join(","));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), AnalysisError> {
        std::fs::write(path, self.render()).map_err(|source| AnalysisError::Io { path: path.display().to_string(), source })
    }
}

pub fn f(x: f64) -> String {
    format_f64(x)
}

pub fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, format_f64)
}
