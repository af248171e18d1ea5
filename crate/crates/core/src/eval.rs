//! Normal-error metrics and run reports.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::solver::{SolverConfig, SolverState};

/// Mean angle in degrees between two normal fields, after flipping both to
/// face the camera (`n₃ < 0`).
pub fn mean_angular_error(estimate: &[Vector3<f64>], truth: &[Vector3<f64>]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::mismatch(format!(
            "normal fields cover {} and {} pixels",
            estimate.len(),
            truth.len()
        )));
    }
    if estimate.is_empty() {
        return Err(Error::EmptyMask);
    }
    let total = par::sum(estimate.len(), |j| angle_degrees(&facing(estimate[j]), &facing(truth[j])));
    Ok(total / estimate.len() as f64)
}

fn facing(n: Vector3<f64>) -> Vector3<f64> {
    let n = n.normalize();
    if n.z > 0.0 {
        -n
    } else {
        n
    }
}

fn angle_degrees(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos().to_degrees()
}

/// JSON summary of a reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub final_energy: f64,
    pub iterations: usize,
    pub energy_history: Vec<(usize, f64)>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mae_degrees: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub initial_mae_degrees: Option<f64>,
    pub seconds: f64,
    pub config: SolverConfig,
}

impl Report {
    pub fn new(state: &SolverState, config: &SolverConfig, seconds: f64) -> Self {
        Report {
            final_energy: state.final_energy().unwrap_or(f64::NAN),
            iterations: state.iterations(),
            energy_history: state.energy_history.clone(),
            mae_degrees: None,
            initial_mae_degrees: None,
            seconds,
            config: config.clone(),
        }
    }

    pub fn with_mae(mut self, initial: f64, last: f64) -> Self {
        self.initial_mae_degrees = Some(initial);
        self.mae_degrees = Some(last);
        self
    }
}

/// `iteration,energy` rows with a header.
pub fn write_energy_csv(path: &Path, history: &[(usize, f64)]) -> Result<()> {
    let mut out = String::from("iteration,energy\n");
    for (k, e) in history {
        out.push_str(&format!("{k},{e:.17e}\n"));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}
