//! Depth initialization. A volume-constrained minimal surface is inflated
//! under orthographic projection, its normals are reinterpreted as
//! perspective normals and integrated in log-depth. A simpler sphere-based
//! initializer is provided for comparison.

use log::warn;
use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{GradientOperator, NormalField};
use crate::linalg::{conjugate_gradient, CgOutcome};
use crate::par;
use crate::scene::{CameraIntrinsics, DepthMap, PixelDomain};
use crate::synthetic::ray_sphere_depth;

/// Default relative-change tolerance of the balloon iterations.
pub const BALLOON_TOL: f64 = 1e-6;
/// Default iteration cap of the balloon iterations.
pub const BALLOON_MAX_ITERS: usize = 2000;
/// Denominators of the log-gradient below this are treated as grazing.
pub const GRAZING_FLOOR: f64 = 1e-6;

const POWER_TOL: f64 = 1e-6;
const POWER_MAX_ITERS: usize = 20_000;
const INTEGRATION_TOL: f64 = 1e-12;

/// Largest singular value of `∇ = (D_u; D_v)` by power iteration on `∇ᵀ∇`,
/// stopped when the estimate changes by less than 1e-6 (relative).
pub fn spectral_norm_gradient(grad: &GradientOperator) -> f64 {
    let n = grad.len();
    if n == 0 {
        return 0.0;
    }
    // a fixed, non-smooth start so no eigenvector is missed by symmetry
    let mut x: Vec<f64> = (0..n).map(|j| 1.0 + 0.5 * ((j as f64) * 1.618_033_988_75).fract()).collect();
    let mut estimate = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let nx = par::norm(&x);
        if nx == 0.0 {
            return 0.0;
        }
        x.iter_mut().for_each(|v| *v /= nx);
        let y = grad.normal_apply(&x);
        let next = par::norm(&y).sqrt();
        x = y;
        if (next - estimate).abs() <= POWER_TOL * next {
            return next;
        }
        estimate = next;
    }
    estimate
}

/// Discrete surface area `Σ_j sqrt(1 + |(∇z)_j|²)`, one term per gradient
/// row pair; extra boundary rows of a Dirichlet operator are counted as
/// one-sided terms.
pub fn surface_area(grad: &GradientOperator, z: &[f64]) -> f64 {
    let (gu, gv) = grad.apply(z);
    let n = gu.len().max(gv.len());
    par::sum(n, |r| {
        let a = gu.get(r).copied().unwrap_or(0.0);
        let b = gv.get(r).copied().unwrap_or(0.0);
        (1.0 + a * a + b * b).sqrt()
    })
}

/// `0.8 · 2 / ‖∇‖²`. The area gradient is `‖∇‖²`-Lipschitz, so any step
/// below `2 / ‖∇‖²` decreases the area; longer steps let checkerboard modes
/// grow on flat regions.
pub fn default_step(grad: &GradientOperator) -> f64 {
    let s = spectral_norm_gradient(grad);
    1.6 / (s * s)
}

/// Projected-gradient minimal-surface iterations for a fixed volume:
/// a gradient step on the surface area, then a constant shift restoring
/// `Σ z = V`.
#[derive(Debug, Clone)]
pub struct Balloon {
    grad: GradientOperator,
    volume: f64,
    tau: f64,
    z: Vec<f64>,
}

impl Balloon {
    /// Starts from the flat field `V / N` with the Dirichlet gradient and
    /// the default step.
    pub fn new(domain: &PixelDomain, volume: f64) -> Result<Self> {
        let grad = GradientOperator::dirichlet(domain);
        let tau = default_step(&grad);
        Self::with_operator(grad, volume, tau)
    }

    pub fn with_operator(grad: GradientOperator, volume: f64, tau: f64) -> Result<Self> {
        if !(volume > 0.0 && volume.is_finite()) {
            return Err(Error::InvalidParameter(format!("volume must be positive, got {volume}")));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("step must be positive, got {tau}")));
        }
        let n = grad.len();
        if n == 0 {
            return Err(Error::EmptyMask);
        }
        Ok(Balloon { volume, tau, z: vec![volume / n as f64; n], grad })
    }

    /// Replaces the current iterate (projected onto the volume constraint).
    pub fn set_iterate(&mut self, z: Vec<f64>) -> Result<()> {
        if z.len() != self.z.len() {
            return Err(Error::mismatch("balloon iterate has the wrong length"));
        }
        self.z = z;
        self.project();
        Ok(())
    }

    pub fn step_size(&self) -> f64 {
        self.tau
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn iterate(&self) -> &[f64] {
        &self.z
    }

    pub fn operator(&self) -> &GradientOperator {
        &self.grad
    }

    pub fn area(&self) -> f64 {
        surface_area(&self.grad, &self.z)
    }

    fn project(&mut self) {
        let shift = (self.volume - par::sum(self.z.len(), |j| self.z[j])) / self.z.len() as f64;
        par::for_each_mut(&mut self.z, |_, x| *x += shift);
    }

    /// One gradient step and projection; returns `|Δz| / |z|`.
    pub fn step(&mut self) -> f64 {
        let (mut gu, mut gv) = self.grad.apply(&self.z);
        let rows = gu.len().max(gv.len());
        // per-row weight 1/sqrt(1 + |∇z|²), pairing the u and v rows of index r
        let w = par::map(rows, |r| {
            let a = gu.get(r).copied().unwrap_or(0.0);
            let b = gv.get(r).copied().unwrap_or(0.0);
            1.0 / (1.0 + a * a + b * b).sqrt()
        });
        par::for_each_mut(&mut gu, |r, x| *x *= w[r]);
        par::for_each_mut(&mut gv, |r, x| *x *= w[r]);
        let descent = self.grad.apply_transpose(&gu, &gv);
        let before = self.z.clone();
        let tau = self.tau;
        par::for_each_mut(&mut self.z, |j, x| *x -= tau * descent[j]);
        self.project();
        let change = par::sum(before.len(), |j| (self.z[j] - before[j]).powi(2)).sqrt();
        change / par::norm(&self.z).max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone)]
pub struct BalloonOutcome {
    pub depth: DepthMap,
    pub iterations: usize,
    /// `false` when the iteration cap was reached first.
    pub converged: bool,
}

/// Runs [`Balloon`] from the flat start until the relative change drops
/// below `tol` or `max_iters` is reached.
pub fn balloon(domain: &PixelDomain, volume: f64, tol: f64, max_iters: usize) -> Result<BalloonOutcome> {
    let mut b = Balloon::new(domain, volume)?;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        if b.step() < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("balloon stopped after {iterations} iterations without reaching tol {tol:e}");
    }
    Ok(BalloonOutcome { depth: DepthMap::orthographic(b.z)?, iterations, converged })
}

/// `(∇z, −1) / sqrt(1 + |∇z|²)` using the first `N` rows of each difference.
pub fn orthographic_normals(z: &[f64], grad: &GradientOperator) -> NormalField {
    let (gu, gv) = grad.apply(z);
    let normals = par::map(z.len(), |j| Vector3::new(gu[j], gv[j], -1.0).normalize());
    NormalField::from_unit(normals)
}

/// Per-pixel gradient of the log of a perspective depth, with pixels where
/// the view is grazing reported and zeroed.
#[derive(Debug, Clone, PartialEq)]
pub struct LogGradient {
    pub du: Vec<f64>,
    pub dv: Vec<f64>,
    pub degenerate: Vec<usize>,
}

/// `g = −(n₁/f_u, n₂/f_v) / (ũ n₁/f_u + ṽ n₂/f_v + n₃)`.
pub fn log_perspective_gradient(normals: &[Vector3<f64>], k: &CameraIntrinsics, domain: &PixelDomain) -> Result<LogGradient> {
    if normals.len() != domain.len() {
        return Err(Error::mismatch("normals and domain differ in length"));
    }
    let (mut du, mut dv, mut degenerate) = (Vec::with_capacity(normals.len()), Vec::with_capacity(normals.len()), Vec::new());
    for (j, n) in normals.iter().enumerate() {
        let (u, v) = domain.pixel(j);
        let (ut, vt) = k.centered(u as f64, v as f64);
        let (a, b) = (n.x / k.f_u, n.y / k.f_v);
        let den = ut * a + vt * b + n.z;
        if den.abs() < GRAZING_FLOOR {
            degenerate.push(j);
            du.push(0.0);
            dv.push(0.0);
        } else {
            du.push(-a / den);
            dv.push(-b / den);
        }
    }
    Ok(LogGradient { du, dv, degenerate })
}

/// Least-squares integration result with zero mean.
#[derive(Debug, Clone)]
pub struct Integrated {
    pub values: Vec<f64>,
    pub cg: CgOutcome,
}

/// `argmin_x |D_u x − g_u|² + |D_v x − g_v|²` by conjugate gradient on the
/// normal equations; the returned field has zero mean on every connected
/// component.
pub fn integrate_gradient(gu: &[f64], gv: &[f64], grad: &GradientOperator) -> Result<Integrated> {
    if gu.len() != grad.du().nrows() || gv.len() != grad.dv().nrows() {
        return Err(Error::mismatch("gradient field does not match the operator"));
    }
    if gu.iter().chain(gv).any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("gradient field is not finite".into()));
    }
    let n = grad.len();
    let rhs = grad.apply_transpose(gu, gv);
    // diag(DᵀD) = column sums of squares
    let mut diag = vec![0.0; n];
    for d in [grad.du(), grad.dv()] {
        for r in 0..d.nrows() {
            let (cols, vals) = d.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                diag[c] += v * v;
            }
        }
    }
    let mut x = vec![0.0; n];
    let cg = conjugate_gradient(
        |p, out| out.copy_from_slice(&grad.normal_apply(p)),
        &rhs,
        &mut x,
        Some(&diag),
        INTEGRATION_TOL,
        20 * n + 100,
    );
    if !cg.converged {
        warn!("integration stopped at relative residual {:e} after {} iterations", cg.relative_residual, cg.iterations);
    }
    let mean = par::sum(n, |j| x[j]) / n as f64;
    par::for_each_mut(&mut x, |_, v| *v -= mean);
    Ok(Integrated { values: x, cg })
}

/// Everything the balloon pipeline produced, for previews and diagnostics.
#[derive(Debug, Clone)]
pub struct BalloonInit {
    pub depth: DepthMap,
    /// The orthographic height field `z_o`.
    pub height: Vec<f64>,
    pub normals: NormalField,
    pub balloon_converged: bool,
    pub balloon_iterations: usize,
    pub integration: CgOutcome,
    pub degenerate: Vec<usize>,
}

/// Balloon with `V = κN`, orthographic normals of the height field (which
/// bulges towards the camera), log-gradient, integration and
/// exponentiation with `mean(z) = κ`.
pub fn init_depth_balloon(domain: &PixelDomain, k: &CameraIntrinsics, kappa: f64) -> Result<BalloonInit> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
    }
    k.validate()?;
    let outcome = balloon(domain, kappa * domain.len() as f64, BALLOON_TOL, BALLOON_MAX_ITERS)?;
    let height = outcome.depth.into_values();
    let grad = GradientOperator::new(domain);
    // height points towards the camera, depth away from it
    let depth_like: Vec<f64> = height.iter().map(|h| -h).collect();
    let normals = orthographic_normals(&depth_like, &grad);
    let g = log_perspective_gradient(normals.normals(), k, domain)?;
    let log_depth = integrate_gradient(&g.du, &g.dv, &grad)?;
    let depth = exponentiate_with_mean(&log_depth.values, kappa)?;
    Ok(BalloonInit {
        depth,
        height,
        normals,
        balloon_converged: outcome.converged,
        balloon_iterations: outcome.iterations,
        integration: log_depth.cg,
        degenerate: g.degenerate,
    })
}

/// `exp(x + c)` with `c` chosen so the mean is `mean`.
fn exponentiate_with_mean(log_depth: &[f64], mean: f64) -> Result<DepthMap> {
    let peak = log_depth.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = log_depth.iter().map(|x| (x - peak).exp()).collect();
    let s = mean * e.len() as f64 / par::sum(e.len(), |j| e[j]);
    DepthMap::perspective(e.into_iter().map(|x| x * s).collect())
}

/// Near half of a sphere whose silhouette circumscribes the mask.
///
/// The mask's bounding circle (centred on the bounding box) is back-projected
/// to a cone; a sphere of radius `radius_scale` times the cone-inscribed
/// radius is centred on the cone axis at unit distance. Rays missing the
/// sphere get the depth of closest approach.
pub fn init_depth_hemisphere(domain: &PixelDomain, k: &CameraIntrinsics, radius_scale: f64) -> Result<DepthMap> {
    if !(radius_scale > 0.0 && radius_scale.is_finite()) {
        return Err(Error::InvalidParameter(format!("radius_scale must be positive, got {radius_scale}")));
    }
    k.validate()?;
    let px = domain.pixels();
    let (mut u_lo, mut u_hi, mut v_lo, mut v_hi) = (usize::MAX, 0, usize::MAX, 0);
    for &(u, v) in px {
        u_lo = u_lo.min(u);
        u_hi = u_hi.max(u);
        v_lo = v_lo.min(v);
        v_hi = v_hi.max(v);
    }
    let (cu, cv) = ((u_lo + u_hi) as f64 / 2.0, (v_lo + v_hi) as f64 / 2.0);
    let reach = px
        .iter()
        .map(|&(u, v)| ((u as f64 - cu) / k.f_u).hypot((v as f64 - cv) / k.f_v))
        .fold(0.0, f64::max)
        + 0.5 / k.f_u.min(k.f_v);
    let axis = Vector3::new((cu - k.u_0) / k.f_u, (cv - k.v_0) / k.f_v, 1.0).normalize();
    let centre = axis / axis.z;
    let radius = radius_scale * centre.norm() * reach.atan().sin();
    let z = px.iter().map(|&(u, v)| ray_sphere_depth(k, u as f64, v as f64, centre, radius)).collect();
    DepthMap::perspective(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn row_domain(w: usize) -> PixelDomain {
        PixelDomain::full(w, 1).unwrap()
    }

    fn dense_norm(g: &GradientOperator) -> f64 {
        let a = g.du().to_dense();
        let b = g.dv().to_dense();
        let mut m = DMatrix::zeros(a.nrows() + b.nrows(), g.len());
        m.rows_mut(0, a.nrows()).copy_from(&a);
        m.rows_mut(a.nrows(), b.nrows()).copy_from(&b);
        m.singular_values().max()
    }

    #[test]
    fn spectral_norm_small_cases() {
        let one = PixelDomain::full(1, 1).unwrap();
        assert_eq!(spectral_norm_gradient(&GradientOperator::new(&one)), 0.0);
        // mixed stencil on 1×2: both rows are (−1, 1), so σ = 2
        let s = spectral_norm_gradient(&GradientOperator::new(&row_domain(2)));
        assert!((s - 2.0).abs() < 1e-6, "{s}");
        // a single forward row (−1, 1) has σ = √2
        let single = GradientOperator::new(&row_domain(2));
        let row = single.du().to_dense().rows(0, 1).into_owned();
        assert!((row.singular_values().max() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_matches_dense_svd() {
        let d = PixelDomain::disk(14, 12, 6.5, 5.5, 5.2).unwrap();
        for g in [GradientOperator::new(&d), GradientOperator::dirichlet(&d)] {
            let (s, oracle) = (spectral_norm_gradient(&g), dense_norm(&g));
            assert!((s - oracle).abs() < 1e-4 * oracle, "{s} vs {oracle}");
        }
    }

    #[test]
    fn spectral_norm_of_a_large_rectangle_approaches_sqrt8() {
        let g = GradientOperator::dirichlet(&PixelDomain::full(48, 40).unwrap());
        let s = spectral_norm_gradient(&g);
        assert!(s < 8f64.sqrt() + 1e-9 && s > 2.8, "{s}");
    }

    #[test]
    fn volume_is_exact_after_every_step() {
        let d = PixelDomain::disk(24, 24, 11.5, 11.5, 10.0).unwrap();
        let v = 3.0 * d.len() as f64;
        let mut b = Balloon::new(&d, v).unwrap();
        b.set_iterate((0..d.len()).map(|j| (j as f64 * 0.37).sin()).collect()).unwrap();
        for _ in 0..50 {
            b.step();
            let s: f64 = b.iterate().iter().sum();
            assert!((s - v).abs() <= 1e-10 * v);
        }
    }

    #[test]
    fn area_never_increases() {
        let d = PixelDomain::disk(40, 36, 19.5, 17.5, 16.0).unwrap();
        let mut b = Balloon::new(&d, 8.0 * d.len() as f64).unwrap();
        let mut prev = b.area();
        for _ in 0..600 {
            b.step();
            let a = b.area();
            assert!(a <= prev * (1.0 + 1e-13), "{a} > {prev}");
            prev = a;
        }
    }

    #[test]
    fn the_longer_step_oscillates() {
        // 0.8 / ‖∇‖ exceeds 2 / ‖∇‖² once ‖∇‖ > 2.5
        let d = PixelDomain::disk(40, 36, 19.5, 17.5, 16.0).unwrap();
        let g = GradientOperator::dirichlet(&d);
        let tau = 0.8 / spectral_norm_gradient(&g);
        let mut b = Balloon::with_operator(g, 8.0 * d.len() as f64, tau).unwrap();
        let mut change = 0.0;
        for _ in 0..3000 {
            change = b.step();
        }
        assert!(change > 1e-3, "{change}");
    }

    #[test]
    fn flat_field_is_stationary_in_the_interior() {
        // with the mixed stencil nothing is pinned, so a flat field is exact
        let d = PixelDomain::disk(16, 16, 7.5, 7.5, 6.0).unwrap();
        let g = GradientOperator::new(&d);
        let mut b = Balloon::with_operator(g, 2.0 * d.len() as f64, 0.2).unwrap();
        assert_eq!(b.step(), 0.0);
        assert!(b.iterate().iter().all(|&x| (x - 2.0).abs() < 1e-12));
    }

    #[test]
    fn nonpositive_volume_is_rejected() {
        let d = PixelDomain::full(3, 3).unwrap();
        assert!(Balloon::new(&d, 0.0).is_err());
        assert!(init_depth_balloon(&d, &CameraIntrinsics::new(10.0, 10.0, 1.0, 1.0).unwrap(), -1.0).is_err());
    }

    #[test]
    fn orthographic_normal_examples() {
        let d = row_domain(3);
        let g = GradientOperator::new(&d);
        let flat = orthographic_normals(&[2.0, 2.0, 2.0], &g);
        assert!(flat.normals().iter().all(|n| *n == Vector3::new(0.0, 0.0, -1.0)));
        let ramp = orthographic_normals(&[0.0, 1.0, 2.0], &g);
        let s = 0.5f64.sqrt();
        for n in ramp.normals() {
            assert!((n - Vector3::new(s, 0.0, -s)).norm() < 1e-15);
        }
    }

    #[test]
    fn log_gradient_examples() {
        let d = PixelDomain::full(5, 5).unwrap();
        let k = CameraIntrinsics::new(40.0, 30.0, 2.0, 2.0).unwrap();
        let frontal = vec![Vector3::new(0.0, 0.0, -1.0); d.len()];
        let g = log_perspective_gradient(&frontal, &k, &d).unwrap();
        assert!(g.du.iter().chain(&g.dv).all(|&x| x == 0.0));

        let n = Vector3::new(0.3, -0.2, -0.9).normalize();
        let g = log_perspective_gradient(&vec![n; d.len()], &k, &d).unwrap();
        let centre = d.index(2, 2).unwrap();
        assert!((g.du[centre] - n.x / (40.0 * -n.z)).abs() < 1e-15);
        assert!((g.dv[centre] - n.y / (30.0 * -n.z)).abs() < 1e-15);

        // a normal perpendicular to the viewing ray is grazing
        let (ut, vt) = k.centered(4.0, 4.0);
        let ray = Vector3::new(ut / 40.0, vt / 30.0, 1.0);
        let graze = Vector3::new(1.0, 0.0, 0.0).cross(&ray).normalize();
        let mut normals = frontal.clone();
        let j = d.index(4, 4).unwrap();
        normals[j] = graze;
        let g = log_perspective_gradient(&normals, &k, &d).unwrap();
        assert_eq!(g.degenerate, vec![j]);
        assert_eq!((g.du[j], g.dv[j]), (0.0, 0.0));
    }

    #[test]
    fn log_gradient_of_analytic_normals_is_grad_log_depth() {
        // smooth positive depth with analytic derivatives
        let k = CameraIntrinsics::new(50.0, 45.0, 10.0, 8.0).unwrap();
        let d = PixelDomain::full(21, 17).unwrap();
        let z = |u: f64, v: f64| 6.0 + 0.8 * (0.13 * u).sin() * (0.11 * v).cos();
        let zu = |u: f64, v: f64| 0.8 * 0.13 * (0.13 * u).cos() * (0.11 * v).cos();
        let zv = |u: f64, v: f64| -0.8 * 0.11 * (0.13 * u).sin() * (0.11 * v).sin();
        let normals: Vec<Vector3<f64>> = d
            .pixels()
            .iter()
            .map(|&(u, v)| {
                let (u, v) = (u as f64, v as f64);
                let (ut, vt) = k.centered(u, v);
                let (a, b) = (zu(u, v), zv(u, v));
                Vector3::new(k.f_u * a, k.f_v * b, -z(u, v) - ut * a - vt * b).normalize()
            })
            .collect();
        let g = log_perspective_gradient(&normals, &k, &d).unwrap();
        for (j, &(u, v)) in d.pixels().iter().enumerate() {
            let (u, v) = (u as f64, v as f64);
            let (eu, ev) = (zu(u, v) / z(u, v), zv(u, v) / z(u, v));
            assert!((g.du[j] - eu).abs() <= 1e-9 * eu.abs().max(1e-3));
            assert!((g.dv[j] - ev).abs() <= 1e-9 * ev.abs().max(1e-3));
        }
    }

    #[test]
    fn integration_recovers_a_consistent_field() {
        let d = PixelDomain::disk(30, 26, 14.0, 12.5, 11.7).unwrap();
        let g = GradientOperator::new(&d);
        let f: Vec<f64> = d.pixels().iter().map(|&(u, v)| (0.2 * u as f64).sin() + 0.01 * (v * v) as f64).collect();
        let (gu, gv) = g.apply(&f);
        let out = integrate_gradient(&gu, &gv, &g).unwrap();
        let mean = f.iter().sum::<f64>() / f.len() as f64;
        let rms = (out.values.iter().zip(&f).map(|(a, b)| (a - (b - mean)).powi(2)).sum::<f64>() / f.len() as f64).sqrt();
        assert!(rms < 1e-6, "{rms}");

        let zero = integrate_gradient(&vec![0.0; d.len()], &vec![0.0; d.len()], &g).unwrap();
        assert!(zero.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn integration_matches_dense_least_squares() {
        let d = PixelDomain::disk(20, 18, 9.5, 8.5, 8.3).unwrap();
        let g = GradientOperator::new(&d);
        // an inconsistent field: the least-squares residual is not zero
        let gu: Vec<f64> = (0..d.len()).map(|j| (j as f64 * 0.7).sin()).collect();
        let gv: Vec<f64> = (0..d.len()).map(|j| (j as f64 * 0.3).cos()).collect();
        let out = integrate_gradient(&gu, &gv, &g).unwrap();

        let (a, b) = (g.du().to_dense(), g.dv().to_dense());
        let mut m = DMatrix::zeros(2 * d.len(), d.len());
        m.rows_mut(0, d.len()).copy_from(&a);
        m.rows_mut(d.len(), d.len()).copy_from(&b);
        let rhs = nalgebra::DVector::from_iterator(2 * d.len(), gu.iter().chain(&gv).copied());
        let x = m.clone().svd(true, true).solve(&rhs, 1e-10).unwrap();
        let mean = x.mean();
        for (p, q) in out.values.iter().zip(x.iter()) {
            assert!((p - (q - mean)).abs() < 1e-7, "{p} {q}");
        }
    }

    #[test]
    fn balloon_init_is_a_positive_dome_with_mean_kappa() {
        let d = PixelDomain::disk(32, 32, 15.5, 15.5, 13.0).unwrap();
        let k = CameraIntrinsics::new(48.0, 48.0, 15.5, 15.5).unwrap();
        let init = init_depth_balloon(&d, &k, 3.0).unwrap();
        let z = init.depth.values();
        assert!(z.iter().all(|&x| x > 0.0));
        assert!((init.depth.mean() - 3.0).abs() < 1e-10 * 3.0);
        // closest to the camera at the centre, farther towards the rim
        let centre = d.index(15, 15).unwrap();
        let zmin = z.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(z[centre] - zmin < 1e-3 * 3.0);
        let rim = d.index(15, 3).unwrap();
        assert!(z[rim] > z[centre]);
    }

    #[test]
    fn hemisphere_init_examples() {
        let d = PixelDomain::disk(33, 33, 16.0, 16.0, 12.0).unwrap();
        let k = CameraIntrinsics::new(60.0, 60.0, 16.0, 16.0).unwrap();
        let z = init_depth_hemisphere(&d, &k, 1.0).unwrap();
        let v = z.values();
        assert!(v.iter().all(|&x| x > 0.0));
        let centre = d.index(16, 16).unwrap();
        assert!(v.iter().all(|&x| x >= v[centre]));
        // every pixel lies on one sphere centred on the optical axis
        let r = (1.0 - v[centre]).abs();
        for (j, &(u, w)) in d.pixels().iter().enumerate() {
            let p = k.backproject(u as f64, w as f64, v[j]);
            let dist = (p[0] * p[0] + p[1] * p[1] + (p[2] - 1.0).powi(2)).sqrt();
            assert!((dist - r).abs() < 1e-9);
        }
        assert!(init_depth_hemisphere(&d, &k, 0.0).is_err());
    }
}
