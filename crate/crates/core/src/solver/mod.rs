//! Lagged block coordinate descent on the robust photometric energy.
//!
//! Each outer iteration refreshes the normalization θ from the current depth,
//! then updates albedo, lighting and depth in turn. Albedo and lighting are
//! reweighted least-squares solves; depth takes a Gauss–Newton step on the
//! θ-lagged residual, accepted by backtracking on the energy. When that
//! direction does not lower the energy, the step is retried with the exact
//! linearization of the normalized residual, which always descends.

mod blocks;
mod robust;

use std::time::Instant;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SurfaceModel;
use crate::scene::{AlbedoMaps, DepthMap, ImageStack, LightingSet, Projection, SH_TERMS};

pub use blocks::{DepthJacobian, DepthStep, Energy};
pub use robust::{cauchy_loss, cauchy_weight, huber_loss, huber_weight};

/// Lighting every solve starts from.
pub const INITIAL_LIGHTING: [f64; SH_TERMS] = [0.2, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
/// Ridge added to a lighting system whose Cholesky factorization fails.
pub const LIGHTING_RIDGE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Cauchy scale.
    pub lambda: f64,
    /// Huber threshold.
    pub gamma: f64,
    /// Albedo smoothness weight.
    pub mu: f64,
    /// Outer iterations that estimate first-order lighting only.
    pub warmup_iters: usize,
    pub max_outer_iters: usize,
    /// Stop once the relative energy decrease falls below this.
    pub outer_tol: f64,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    /// Factor applied to the depth step on each backtrack.
    pub shrink: f64,
    pub max_backtracks: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: 0.15,
            gamma: 0.1,
            mu: 2e-6,
            warmup_iters: 8,
            max_outer_iters: 100,
            outer_tol: 1e-6,
            cg_tol: 1e-6,
            cg_max_iters: 500,
            shrink: 0.5,
            max_backtracks: 20,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("lambda", self.lambda), ("gamma", self.gamma), ("mu", self.mu), ("cg_tol", self.cg_tol)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.outer_tol >= 0.0) {
            return Err(Error::InvalidParameter(format!("outer_tol must be nonnegative, got {}", self.outer_tol)));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidParameter(format!("shrink must lie in (0, 1), got {}", self.shrink)));
        }
        if self.cg_max_iters == 0 {
            return Err(Error::InvalidParameter("cg_max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Unknowns of the problem plus the lagged normalization and the energy
/// after every outer iteration (entry 0 is the initial energy).
#[derive(Debug, Clone)]
pub struct SolverState {
    pub albedo: AlbedoMaps,
    pub lighting: LightingSet,
    pub depth: DepthMap,
    pub theta: Vec<f64>,
    pub energy_history: Vec<(usize, f64)>,
}

impl SolverState {
    pub fn iterations(&self) -> usize {
        self.energy_history.last().map_or(0, |e| e.0)
    }

    pub fn final_energy(&self) -> Option<f64> {
        self.energy_history.last().map(|e| e.1)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    pub energy: f64,
    pub first_order: bool,
    pub albedo_cg_iterations: usize,
    pub albedo_accepted: bool,
    pub lighting_accepted: bool,
    /// `(image, channel)` pairs whose lighting system needed the ridge.
    pub lighting_ridged: Vec<(usize, usize)>,
    pub depth_cg_iterations: usize,
    /// Linearization of the last depth solve; `exact` after the lagged
    /// direction failed to lower the energy.
    pub depth_jacobian: DepthJacobian,
    pub depth_step: f64,
    pub depth_accepted: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub state: SolverState,
    pub diagnostics: Vec<IterationDiagnostics>,
    /// The relative energy decrease fell below `outer_tol`.
    pub converged: bool,
}

/// A reconstruction problem: observations on a masked perspective camera.
pub struct Solver<'a> {
    images: &'a ImageStack,
    model: &'a SurfaceModel,
    config: SolverConfig,
}

impl<'a> Solver<'a> {
    pub fn new(images: &'a ImageStack, model: &'a SurfaceModel, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        if images.pixels() != model.len() {
            return Err(Error::mismatch(format!(
                "images have {} pixels, the mask has {}",
                images.pixels(),
                model.len()
            )));
        }
        Ok(Solver { images, model, config })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn images(&self) -> &ImageStack {
        self.images
    }

    pub fn model(&self) -> &SurfaceModel {
        self.model
    }

    /// Per-pixel median albedo, the fixed initial lighting, and θ of the
    /// given depth.
    pub fn initialize_state(&self, init_depth: &DepthMap) -> Result<SolverState> {
        if init_depth.projection() != Projection::Perspective {
            return Err(Error::InvalidParameter("initial depth must be a perspective depth".into()));
        }
        if init_depth.len() != self.model.len() {
            return Err(Error::mismatch("initial depth does not match the mask"));
        }
        let (m, channels, n) = (self.images.images(), self.images.channels(), self.model.len());
        let mut values = Vec::with_capacity(channels * n);
        let mut column = vec![0.0; m];
        for c in 0..channels {
            for j in 0..n {
                for (i, x) in column.iter_mut().enumerate() {
                    *x = self.images.get(i, c, j);
                }
                values.push(median(&mut column));
            }
        }
        let mut state = SolverState {
            albedo: AlbedoMaps::new(channels, n, values)?,
            lighting: LightingSet::uniform(m, channels, INITIAL_LIGHTING),
            depth: init_depth.clone(),
            theta: Vec::new(),
            energy_history: Vec::new(),
        };
        self.update_theta(&mut state);
        Ok(state)
    }

    /// Runs outer iterations until the relative energy decrease drops below
    /// `outer_tol` (not checked during warmup) or `max_outer_iters`.
    pub fn solve(&self, state: SolverState) -> SolveOutcome {
        self.solve_with_observer(state, |_, _| {})
    }

    pub fn solve_with_observer<F>(&self, mut state: SolverState, mut observer: F) -> SolveOutcome
    where
        F: FnMut(&IterationDiagnostics, &SolverState),
    {
        let cfg = &self.config;
        let mut energy = self.true_energy(&state.albedo, &state.lighting, state.depth.values()).total();
        state.energy_history = vec![(0, energy)];
        info!("initial energy {energy:.6e}");
        let mut diagnostics = Vec::new();
        let mut converged = false;
        for k in 1..=cfg.max_outer_iters {
            let clock = Instant::now();
            let previous = energy;
            let first_order = k <= cfg.warmup_iters;
            self.update_theta(&mut state);

            let backup = state.albedo.clone();
            let albedo_cg = self.update_albedo(&mut state);
            let after = self.true_energy(&state.albedo, &state.lighting, state.depth.values()).total();
            let albedo_accepted = after <= energy;
            if albedo_accepted {
                energy = after;
            } else {
                debug!("albedo update raised the energy ({after:e} > {energy:e}); reverted");
                state.albedo = backup;
            }

            let backup = state.lighting.clone();
            let lighting_ridged = self.update_lighting(&mut state, first_order);
            let after = self.true_energy(&state.albedo, &state.lighting, state.depth.values()).total();
            let lighting_accepted = after <= energy;
            if lighting_accepted {
                energy = after;
            } else {
                debug!("lighting update raised the energy ({after:e} > {energy:e}); reverted");
                state.lighting = backup;
            }

            let step = self.update_depth(&mut state, energy);
            energy = step.energy;
            state.energy_history.push((k, energy));

            let d = IterationDiagnostics {
                iteration: k,
                energy,
                first_order,
                albedo_cg_iterations: albedo_cg.iterations,
                albedo_accepted,
                lighting_accepted,
                lighting_ridged,
                depth_cg_iterations: step.cg.iterations,
                depth_jacobian: step.jacobian,
                depth_step: step.step,
                depth_accepted: step.accepted,
                seconds: clock.elapsed().as_secs_f64(),
            };
            info!(
                "iter {k:>3} energy {energy:.6e} step {:.3e}{} depth_cg {} albedo_cg {}{}",
                d.depth_step,
                if d.depth_jacobian == DepthJacobian::Exact { " (exact)" } else { "" },
                d.depth_cg_iterations,
                d.albedo_cg_iterations,
                if first_order { " (first order)" } else { "" }
            );
            observer(&d, &state);
            diagnostics.push(d);

            if !first_order && (previous - energy) <= cfg.outer_tol * previous.abs() {
                converged = true;
                break;
            }
        }
        SolveOutcome { state, diagnostics, converged }
    }
}

/// Median with the mean of the two central values for even lengths.
fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

/// Initializes from `init_depth` and runs the solver.
pub fn solve(
    images: &ImageStack,
    model: &SurfaceModel,
    init_depth: &DepthMap,
    config: SolverConfig,
) -> Result<SolveOutcome> {
    let solver = Solver::new(images, model, config)?;
    let state = solver.initialize_state(init_depth)?;
    Ok(solver.solve(state))
}
