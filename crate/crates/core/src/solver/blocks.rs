use nalgebra::{SMatrix, SVector, Vector3};

use super::robust::{cauchy_loss, cauchy_weight, huber_loss, huber_weight};
use super::{Solver, SolverState, LIGHTING_RIDGE};
use crate::geometry::{dot9, harmonic_basis, residuals, shading_gradient, NORM_FLOOR};
use crate::linalg::{conjugate_gradient, CgOutcome, CsrMatrix};
use crate::par;
use crate::scene::{AlbedoMaps, DepthMap, LightingSet, SH_FIRST_ORDER_TERMS, SH_TERMS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energy {
    /// Sum of Cauchy losses of the residuals.
    pub data: f64,
    /// `μ Σ_c Σ_j |(∇ρ_c)_j|_γ`.
    pub smoothness: f64,
}

impl Energy {
    pub fn total(&self) -> f64 {
        self.data + self.smoothness
    }
}

/// Linearization used for the depth system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthJacobian {
    /// `θ` held fixed: the residual is a quadratic in `z`.
    Lagged,
    /// Derivative of the normalized residual, i.e. the lagged one projected
    /// off the normal. Its Gauss–Newton direction descends the energy.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthStep {
    /// The last system solved.
    pub cg: CgOutcome,
    pub jacobian: DepthJacobian,
    /// Step length of the accepted update, 0 when rejected.
    pub step: f64,
    pub accepted: bool,
    /// Energy after the update (unchanged when rejected).
    pub energy: f64,
}

impl Solver<'_> {
    /// Energy with the normals `ñ[z] / θ` for the state's lagged θ.
    pub fn energy(&self, state: &SolverState) -> Energy {
        let normals = self.model.lagged_normals(state.depth.values(), &state.theta);
        self.energy_with_normals(&normals, &state.albedo, &state.lighting)
    }

    /// Energy with unit normals of `z` (θ = |ñ[z]|).
    pub fn true_energy(&self, albedo: &AlbedoMaps, lighting: &LightingSet, z: &[f64]) -> Energy {
        let normals = self.model.normals(z);
        self.energy_with_normals(normals.normals(), albedo, lighting)
    }

    fn energy_with_normals(&self, normals: &[Vector3<f64>], albedo: &AlbedoMaps, lighting: &LightingSet) -> Energy {
        let lambda = self.config.lambda;
        let r = residuals(normals, albedo, lighting, self.images);
        let data = par::sum(r.len(), |k| cauchy_loss(r[k], lambda));
        let smoothness = self.config.mu * self.tv(albedo);
        Energy { data, smoothness }
    }

    /// `Σ_c Σ_j |(∇ρ_c)_j|_γ`.
    fn tv(&self, albedo: &AlbedoMaps) -> f64 {
        let grad = self.model.gradient();
        let gamma = self.config.gamma;
        (0..albedo.channels())
            .map(|c| {
                let (gu, gv) = grad.apply(albedo.channel(c));
                par::sum(gu.len(), |j| huber_loss(gu[j].hypot(gv[j]), gamma))
            })
            .sum()
    }

    /// θ ← |ñ[z]|, floored.
    pub fn update_theta(&self, state: &mut SolverState) {
        let raw = self.model.unnormalized_normals(state.depth.values());
        state.theta = par::map(raw.len(), |j| raw[j].norm().max(NORM_FLOOR));
    }

    /// Cauchy weights of the residuals at the current state.
    fn data_weights(&self, state: &SolverState) -> (Vec<[f64; SH_TERMS]>, Vec<f64>) {
        let normals = self.model.lagged_normals(state.depth.values(), &state.theta);
        let h = par::map(normals.len(), |j| harmonic_basis(&normals[j]));
        let r = residuals(&normals, &state.albedo, &state.lighting, self.images);
        let lambda = self.config.lambda;
        let w = par::map(r.len(), |k| cauchy_weight(r[k], lambda));
        (h, w)
    }

    /// Per channel, solves `(Σ_i w s² + μ ∇ᵀQ∇) ρ_c = Σ_i w s I` by
    /// preconditioned CG from the current albedo. A channel whose CG breaks
    /// down keeps its previous values. Returns the summed CG statistics.
    pub fn update_albedo(&self, state: &mut SolverState) -> CgOutcome {
        let (h, w) = self.data_weights(state);
        let (m, channels, n) = (self.images.images(), self.images.channels(), self.model.len());
        let grad = self.model.gradient();
        let (mu, gamma, cfg) = (self.config.mu, self.config.gamma, &self.config);
        let mut total = CgOutcome { iterations: 0, relative_residual: 0.0, converged: true, breakdown: false };
        let mut values = state.albedo.values().to_vec();
        for c in 0..channels {
            let shading: Vec<Vec<f64>> = (0..m)
                .map(|i| {
                    let l = state.lighting.get(i, c);
                    par::map(n, |j| dot9(l, &h[j]))
                })
                .collect();
            let (diag_data, rhs): (Vec<f64>, Vec<f64>) = par::map(n, |j| {
                let (mut a, mut b) = (0.0, 0.0);
                for (i, s) in shading.iter().enumerate() {
                    let wk = w[(i * channels + c) * n + j];
                    a += wk * s[j] * s[j];
                    b += wk * s[j] * self.images.get(i, c, j);
                }
                (a, b)
            })
            .into_iter()
            .unzip();
            let rho = &mut values[c * n..(c + 1) * n];
            let (gu, gv) = grad.apply(rho);
            let q = par::map(n, |j| mu * huber_weight(gu[j].hypot(gv[j]), gamma));
            let lap = grad.weighted_laplacian(&q);
            let mut diag = lap.diagonal();
            par::for_each_mut(&mut diag, |j, d| *d += diag_data[j]);
            let previous = rho.to_vec();
            let out = conjugate_gradient(
                |x, y| {
                    lap.mul_vec_into(x, y);
                    par::for_each_mut(y, |j, v| *v += diag_data[j] * x[j]);
                },
                &rhs,
                rho,
                Some(&diag),
                cfg.cg_tol,
                cfg.cg_max_iters,
            );
            if out.breakdown || rho.iter().any(|x| !x.is_finite()) {
                rho.copy_from_slice(&previous);
            }
            total.iterations += out.iterations;
            total.relative_residual = total.relative_residual.max(out.relative_residual);
            total.converged &= out.converged;
            total.breakdown |= out.breakdown;
        }
        state.albedo = AlbedoMaps::from_unchecked(channels, n, values);
        total
    }

    /// Independent weighted normal equations per image and channel, over the
    /// first four coefficients when `first_order` (the rest set to zero).
    /// Returns the `(image, channel)` pairs that needed the ridge.
    pub fn update_lighting(&self, state: &mut SolverState, first_order: bool) -> Vec<(usize, usize)> {
        let (h, w) = self.data_weights(state);
        let (m, channels, n) = (self.images.images(), self.images.channels(), self.model.len());
        let albedo = &state.albedo;
        let previous = &state.lighting;
        let solved = par::map(m * channels, |ic| {
            let (i, c) = (ic / channels, ic % channels);
            let rho = albedo.channel(c);
            let obs = self.images.slice(i, c);
            let wk = &w[ic * n..(ic + 1) * n];
            if first_order {
                solve_lighting::<SH_FIRST_ORDER_TERMS>(&h, rho, obs, wk)
            } else {
                solve_lighting::<SH_TERMS>(&h, rho, obs, wk)
            }
            .unwrap_or((*previous.get(i, c), true))
        });
        let mut ridged = Vec::new();
        let mut lighting = previous.clone();
        for (ic, (l, ridge)) in solved.into_iter().enumerate() {
            let (i, c) = (ic / channels, ic % channels);
            if ridge {
                ridged.push((i, c));
            }
            lighting.set(i, c, l);
        }
        state.lighting = lighting;
        ridged
    }

    /// Gauss–Newton step on the θ-lagged residual, then backtracking from
    /// t = 1 until the energy with unit normals drops below `energy`.
    /// Candidates with a non-positive depth are rejected.
    pub fn update_depth(&self, state: &mut SolverState, energy: f64) -> DepthStep {
        let lagged = self.depth_step(state, energy, DepthJacobian::Lagged);
        if lagged.accepted {
            return lagged;
        }
        self.depth_step(state, energy, DepthJacobian::Exact)
    }

    /// One Gauss–Newton solve with backtracking on the energy.
    fn depth_step(&self, state: &mut SolverState, energy: f64, jacobian: DepthJacobian) -> DepthStep {
        let (system, rhs) = self.gauss_newton_system(state, jacobian);
        let mut delta = vec![0.0; rhs.len()];
        let diag = system.diagonal();
        let cg = conjugate_gradient(
            |x, y| system.mul_vec_into(x, y),
            &rhs,
            &mut delta,
            Some(&diag),
            self.config.cg_tol,
            self.config.cg_max_iters,
        );
        let z = state.depth.values();
        let mut t = 1.0;
        if delta.iter().all(|d| d.is_finite()) && delta.iter().any(|&d| d != 0.0) {
            for _ in 0..=self.config.max_backtracks {
                let candidate: Vec<f64> = z.iter().zip(&delta).map(|(a, d)| a + t * d).collect();
                if candidate.iter().all(|&x| x > 0.0 && x.is_finite()) {
                    let e = self.true_energy(&state.albedo, &state.lighting, &candidate).total();
                    if e.is_finite() && e < energy {
                        state.depth = DepthMap::perspective(candidate).expect("checked positive");
                        return DepthStep { cg, jacobian, step: t, accepted: true, energy: e };
                    }
                }
                t *= self.config.shrink;
            }
        }
        DepthStep { cg, jacobian, step: 0.0, accepted: false, energy }
    }

    /// `(JᵀWJ, −JᵀWr)` at the current state, assembled from per-pixel
    /// stencil blocks. The exact variant assumes θ matches the depth.
    pub fn gauss_newton_system(&self, state: &SolverState, jacobian: DepthJacobian) -> (CsrMatrix, Vec<f64>) {
        let (m, channels, n) = (self.images.images(), self.images.channels(), self.model.len());
        let z = state.depth.values();
        let normals = self.model.lagged_normals(z, &state.theta);
        let r = residuals(&normals, &state.albedo, &state.lighting, self.images);
        let lambda = self.config.lambda;
        let blocks = par::map(n, |j| {
            let stencil = self.model.stencil(j);
            let len = stencil.len();
            let mut block = [[0.0; 3]; 3];
            let mut grad = [0.0; 3];
            if state.theta[j] <= NORM_FLOOR {
                return (block, grad);
            }
            for i in 0..m {
                for c in 0..channels {
                    let k = (i * channels + c) * n + j;
                    let mut g = shading_gradient(state.lighting.get(i, c), &normals[j]) * (state.albedo.get(c, j) / state.theta[j]);
                    if jacobian == DepthJacobian::Exact {
                        g -= normals[j] * g.dot(&normals[j]);
                    }
                    let mut a = [0.0; 3];
                    for (s, coef) in stencil.coefficients().iter().enumerate() {
                        a[s] = g.dot(coef);
                    }
                    let wk = cauchy_weight(r[k], lambda);
                    for p in 0..len {
                        grad[p] += wk * r[k] * a[p];
                        for q in 0..len {
                            block[p][q] += wk * a[p] * a[q];
                        }
                    }
                }
            }
            (block, grad)
        });
        let mut triplets = Vec::with_capacity(9 * n);
        let mut rhs = vec![0.0; n];
        for (j, (block, grad)) in blocks.iter().enumerate() {
            let idx = self.model.stencil(j).indices();
            for (p, &a) in idx.iter().enumerate() {
                rhs[a] -= grad[p];
                for (q, &b) in idx.iter().enumerate() {
                    triplets.push((a, b, block[p][q]));
                }
            }
        }
        (CsrMatrix::from_triplets(n, n, &triplets), rhs)
    }
}

/// Solves `(Σ w ρ² h hᵀ) l = Σ w ρ I h` over the first `K` coefficients.
/// Returns `None` when even the ridged system cannot be factorized, else
/// the coefficients and whether the ridge was used.
fn solve_lighting<const K: usize>(
    h: &[[f64; SH_TERMS]],
    rho: &[f64],
    obs: &[f64],
    w: &[f64],
) -> Option<([f64; SH_TERMS], bool)> {
    let mut a = SMatrix::<f64, K, K>::zeros();
    let mut b = SVector::<f64, K>::zeros();
    for j in 0..h.len() {
        let hj = SVector::<f64, K>::from_fn(|k, _| h[j][k]);
        let s = w[j] * rho[j];
        a += (s * rho[j]) * hj * hj.transpose();
        b += (s * obs[j]) * hj;
    }
    let (x, ridged) = match a.cholesky() {
        Some(ch) => (ch.solve(&b), false),
        None => {
            let ridged = a + SMatrix::<f64, K, K>::identity() * LIGHTING_RIDGE;
            (ridged.cholesky()?.solve(&b), true)
        }
    };
    if x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut l = [0.0; SH_TERMS];
    l[..K].copy_from_slice(x.as_slice());
    Some((l, ridged))
}
