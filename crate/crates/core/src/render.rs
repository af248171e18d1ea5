//! Forward image formation: the exact Lambertian environment integral (by
//! sphere quadrature), the harmonic model, and least-squares harmonic fits.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{dot9, harmonic_basis};
use crate::par;
use crate::scene::{AlbedoMaps, EnvironmentMap, ImageStack, LightingSet, SH_FIRST_ORDER_TERMS, SH_TERMS};

/// Equal-area quadrature on the unit sphere from a Fibonacci lattice.
#[derive(Debug, Clone)]
pub struct SphereQuadrature {
    directions: Vec<[f64; 3]>,
    weight: f64,
}

impl SphereQuadrature {
    /// Smallest accepted `samples per great circle`.
    pub const MIN_RESOLUTION: usize = 16;

    /// A lattice whose spacing gives roughly `resolution` samples along any
    /// great circle, i.e. `⌈resolution² / π⌉` points.
    pub fn new(resolution: usize) -> Result<Self> {
        if resolution < Self::MIN_RESOLUTION {
            return Err(Error::InvalidParameter(format!(
                "quadrature resolution must be at least {}, got {resolution}",
                Self::MIN_RESOLUTION
            )));
        }
        let r = resolution as f64;
        Ok(Self::fibonacci((r * r / std::f64::consts::PI).ceil() as usize))
    }

    pub fn fibonacci(count: usize) -> Self {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let directions = (0..count)
            .map(|k| {
                let y = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                let r = (1.0 - y * y).max(0.0).sqrt();
                let phi = golden * k as f64;
                [r * phi.cos(), y, r * phi.sin()]
            })
            .collect();
        SphereQuadrature { directions, weight: 4.0 * std::f64::consts::PI / count as f64 }
    }

    pub fn directions(&self) -> &[[f64; 3]] {
        &self.directions
    }

    /// Weight of every node; all weights are equal and sum to 4π.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

/// Irradiance `Σ_k w ℓ_c(ω_k) max(ω_k · n, 0)` at each normal, channel-major.
pub fn environment_irradiance(normals: &[Vector3<f64>], env: &EnvironmentMap, quad: &SphereQuadrature) -> Vec<Vec<f64>> {
    let channels = env.channels();
    let radiance: Vec<f64> = quad
        .directions()
        .iter()
        .flat_map(|&w| {
            let mut out = vec![0.0; channels];
            env.radiance(w, &mut out);
            out
        })
        .collect();
    let per_pixel = par::map(normals.len(), |j| {
        let n = normals[j];
        let mut acc = vec![0.0; channels];
        for (k, w) in quad.directions().iter().enumerate() {
            let cos = w[0] * n.x + w[1] * n.y + w[2] * n.z;
            if cos > 0.0 {
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += radiance[k * channels + c] * cos;
                }
            }
        }
        acc.iter().map(|a| a * quad.weight()).collect::<Vec<f64>>()
    });
    (0..channels).map(|c| per_pixel.iter().map(|e| e[c]).collect()).collect()
}

/// Renders one image under an environment map with attached shadows.
///
/// The albedo and the map must have the same channel count, or one of them a
/// single channel (which is then broadcast).
pub fn render_environment(
    normals: &[Vector3<f64>],
    albedo: &AlbedoMaps,
    env: &EnvironmentMap,
    resolution: usize,
) -> Result<ImageStack> {
    let quad = SphereQuadrature::new(resolution)?;
    let irr = environment_irradiance(normals, env, &quad);
    let channels = broadcast_channels(albedo.channels(), env.channels())?;
    if albedo.pixels() != normals.len() {
        return Err(Error::mismatch("albedo and normals differ in pixel count"));
    }
    let mut values = Vec::with_capacity(channels * normals.len());
    for c in 0..channels {
        let e = &irr[c.min(irr.len() - 1)];
        let rho = albedo.channel(c.min(albedo.channels() - 1));
        values.extend(rho.iter().zip(e).map(|(r, x)| r * x));
    }
    ImageStack::new(1, channels, normals.len(), values)
}

fn broadcast_channels(a: usize, b: usize) -> Result<usize> {
    match (a, b) {
        _ if a == b => Ok(a),
        (1, _) => Ok(b),
        (_, 1) => Ok(a),
        _ => Err(Error::mismatch(format!("cannot broadcast {a} and {b} channels"))),
    }
}

/// `ρ_c (lⁱ_c · h[n])` for every image; no clamping, so the output can be
/// negative if the lighting is.
pub fn render_sh(albedo: &AlbedoMaps, lighting: &LightingSet, normals: &[Vector3<f64>]) -> Vec<f64> {
    let n = normals.len();
    assert_eq!(albedo.pixels(), n);
    assert_eq!(albedo.channels(), lighting.channels());
    let h: Vec<[f64; SH_TERMS]> = par::map(n, |j| harmonic_basis(&normals[j]));
    let c_count = lighting.channels();
    let mut out = vec![0.0; lighting.images() * c_count * n];
    par::for_each_chunk_mut(&mut out, n, |ic, chunk| {
        let (i, c) = (ic / c_count, ic % c_count);
        let l = lighting.get(i, c);
        let rho = albedo.channel(c);
        for (j, o) in chunk.iter_mut().enumerate() {
            *o = rho[j] * dot9(l, &h[j]);
        }
    });
    out
}

/// Harmonic truncation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShOrder {
    First,
    Second,
}

impl ShOrder {
    pub fn terms(self) -> usize {
        match self {
            ShOrder::First => SH_FIRST_ORDER_TERMS,
            ShOrder::Second => SH_TERMS,
        }
    }
}

/// Smallest accepted ratio of extreme singular values in a fit.
pub const FIT_CONDITION_FLOOR: f64 = 1e-10;

/// Least-squares lighting for known normals and albedo:
/// `l = argmin Σ_p (ρ(p) l · h[n](p) − I(p))²`, with entries 5–9 fixed at
/// zero for a first-order fit.
pub fn fit_sh_lighting(
    images: &ImageStack,
    normals: &[Vector3<f64>],
    albedo: &AlbedoMaps,
    order: ShOrder,
) -> Result<LightingSet> {
    let n = normals.len();
    if images.pixels() != n || albedo.pixels() != n {
        return Err(Error::mismatch("images, normals and albedo differ in pixel count"));
    }
    if albedo.channels() != images.channels() {
        return Err(Error::mismatch("albedo and images differ in channel count"));
    }
    let k = order.terms();
    let h: Vec<[f64; SH_TERMS]> = normals.iter().map(harmonic_basis).collect();
    let mut coefficients = Vec::with_capacity(images.images() * images.channels());
    for i in 0..images.images() {
        for c in 0..images.channels() {
            let rho = albedo.channel(c);
            let design = DMatrix::from_fn(n, k, |j, t| rho[j] * h[j][t]);
            let target = DVector::from_column_slice(images.slice(i, c));
            let svd = design.svd(true, true);
            let sv = &svd.singular_values;
            let (smax, smin) = (sv.max(), sv.min());
            if !(smin > FIT_CONDITION_FLOOR * smax) {
                return Err(Error::IllConditioned { image: i, channel: c });
            }
            let x = svd.solve(&target, 0.0).map_err(|_| Error::IllConditioned { image: i, channel: c })?;
            let mut l = [0.0; SH_TERMS];
            l[..k].copy_from_slice(x.as_slice());
            coefficients.push(l);
        }
    }
    LightingSet::new(images.images(), images.channels(), coefficients)
}

/// `sqrt(Σ (a − b)²) / sqrt(Σ b²)`.
pub fn relative_rms(approx: &[f64], reference: &[f64]) -> f64 {
    assert_eq!(approx.len(), reference.len());
    let num: f64 = approx.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = reference.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn weights_sum_to_four_pi() {
        for r in [16, 64, 200] {
            let q = SphereQuadrature::new(r).unwrap();
            assert!((q.weight() * q.len() as f64 - 4.0 * PI).abs() < 1e-12);
        }
        assert!(SphereQuadrature::new(15).is_err());
    }

    #[test]
    fn uniform_environment_gives_pi() {
        let env = EnvironmentMap::uniform(32, 16, 1, 1.0);
        let normals: Vec<Vector3<f64>> = SphereQuadrature::fibonacci(40)
            .directions()
            .iter()
            .map(|d| Vector3::new(d[0], d[1], d[2]))
            .collect();
        let albedo = AlbedoMaps::constant(1, normals.len(), 1.0);
        let img = render_environment(&normals, &albedo, &env, 512).unwrap();
        for &x in img.values() {
            assert!((x - PI).abs() < 1e-3, "{x}");
        }
    }

    #[test]
    fn zero_albedo_or_dark_environment_render_black() {
        let normals = vec![Vector3::new(0.0, 0.0, -1.0), Vector3::new(0.0, 1.0, 0.0)];
        let env = EnvironmentMap::uniform(8, 4, 3, 2.0);
        let img = render_environment(&normals, &AlbedoMaps::constant(3, 2, 0.0), &env, 16).unwrap();
        assert!(img.values().iter().all(|&x| x == 0.0));
        let dark = EnvironmentMap::uniform(8, 4, 3, 0.0);
        let img = render_environment(&normals, &AlbedoMaps::constant(3, 2, 0.7), &dark, 16).unwrap();
        assert!(img.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn refinement_converges() {
        // error against a fine reference shrinks as the lattice is refined
        let env = EnvironmentMap::new(8, 4, 1, (0..32).map(|k| 0.2 + (k % 5) as f64 * 0.3).collect()).unwrap();
        let normals = vec![Vector3::new(0.3, -0.4, -0.866).normalize(), Vector3::new(-0.8, 0.1, 0.59).normalize()];
        let albedo = AlbedoMaps::constant(1, 2, 1.0);
        let reference = render_environment(&normals, &albedo, &env, 2048).unwrap();
        let err = |r: usize| {
            let img = render_environment(&normals, &albedo, &env, r).unwrap();
            relative_rms(img.values(), reference.values())
        };
        let (e1, e2, e3) = (err(32), err(128), err(512));
        assert!(e2 < e1 && e3 < e2, "{e1} {e2} {e3}");
    }

    #[test]
    fn render_sh_examples() {
        let normals = vec![Vector3::new(0.0, 0.0, -1.0)];
        let l = LightingSet::uniform(1, 1, [0.2, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let out = render_sh(&AlbedoMaps::constant(1, 1, 0.5), &l, &normals);
        assert!((out[0] - 0.6).abs() < 1e-15);

        let e1 = LightingSet::uniform(1, 1, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(render_sh(&AlbedoMaps::constant(1, 1, 1.0), &e1, &normals), vec![1.0]);

        let a = AlbedoMaps::new(1, 1, vec![0.3]).unwrap();
        let once = render_sh(&a, &l, &normals);
        let twice = render_sh(&a.scaled(2.0), &l, &normals);
        assert_eq!(twice[0], 2.0 * once[0]);
    }
}
