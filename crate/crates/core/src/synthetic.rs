//! Synthetic scenes for ground-truth experiments: analytic shapes, albedo
//! patterns, random lightings and the dataset builder.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dot9, harmonic_basis, NormalField, SurfaceModel};
use crate::render::{environment_irradiance, render_sh, SphereQuadrature};
use crate::scene::{AlbedoMaps, CameraIntrinsics, DepthMap, EnvironmentMap, ImageStack, LightingSet, PixelDomain, SH_TERMS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    /// A Gaussian bump bulging towards the camera over a disk mask.
    GaussianBump,
    /// The visible cap of a sphere, slightly eroded away from its silhouette.
    Hemisphere,
}

/// A perspective depth map with the camera and mask it lives on.
#[derive(Debug, Clone)]
pub struct SyntheticShape {
    pub domain: PixelDomain,
    pub intrinsics: CameraIntrinsics,
    pub depth: DepthMap,
}

/// Depth of the base plane of every synthetic shape.
pub const BASE_DEPTH: f64 = 10.0;

/// Square `size × size` camera with focal length `1.5·size` and the
/// principal point at the image centre.
pub fn default_camera(size: usize) -> CameraIntrinsics {
    let c = (size as f64 - 1.0) / 2.0;
    CameraIntrinsics { f_u: 1.5 * size as f64, f_v: 1.5 * size as f64, u_0: c, v_0: c }
}

pub fn make_shape(shape: Shape, size: usize) -> Result<SyntheticShape> {
    match shape {
        Shape::GaussianBump => gaussian_bump(size),
        Shape::Hemisphere => hemisphere(size),
    }
}

/// `z = BASE_DEPTH − A exp(−(ũ² + ṽ²) / 2σ²)` with σ = 0.18·size over a disk
/// of radius 0.45·size; the amplitude gives roughly 50° of peak tilt.
pub fn gaussian_bump(size: usize) -> Result<SyntheticShape> {
    if size < 8 {
        return Err(Error::InvalidParameter("synthetic shapes need size >= 8".into()));
    }
    let k = default_camera(size);
    let domain = PixelDomain::disk(size, size, k.u_0, k.v_0, 0.45 * size as f64)?;
    let sigma = 0.18 * size as f64;
    let amplitude = 0.24 * BASE_DEPTH;
    let depth = domain
        .pixels()
        .iter()
        .map(|&(u, v)| {
            let (ut, vt) = k.centered(u as f64, v as f64);
            BASE_DEPTH - amplitude * (-(ut * ut + vt * vt) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    Ok(SyntheticShape { domain, intrinsics: k, depth: DepthMap::perspective(depth)? })
}

/// Sphere centred on the optical axis at `BASE_DEPTH` whose silhouette spans
/// about 0.9 of the image; the mask keeps the central 90% (in radius) of the
/// silhouette.
pub fn hemisphere(size: usize) -> Result<SyntheticShape> {
    if size < 8 {
        return Err(Error::InvalidParameter("synthetic shapes need size >= 8".into()));
    }
    let k = default_camera(size);
    // silhouette half-angle α with tan α = 0.45·size / f
    let tan_a = 0.45 * size as f64 / k.f_u;
    let sin_a = tan_a / (1.0 + tan_a * tan_a).sqrt();
    let radius = BASE_DEPTH * sin_a;
    let domain = PixelDomain::disk(size, size, k.u_0, k.v_0, 0.9 * 0.45 * size as f64)?;
    let depth = domain
        .pixels()
        .iter()
        .map(|&(u, v)| ray_sphere_depth(&k, u as f64, v as f64, Vector3::new(0.0, 0.0, BASE_DEPTH), radius))
        .collect();
    Ok(SyntheticShape { domain, intrinsics: k, depth: DepthMap::perspective(depth)? })
}

/// Depth of the near intersection of the ray through `(u, v)` with a sphere;
/// rays that miss get the depth of closest approach.
pub(crate) fn ray_sphere_depth(k: &CameraIntrinsics, u: f64, v: f64, centre: Vector3<f64>, radius: f64) -> f64 {
    let d = Vector3::new((u - k.u_0) / k.f_u, (v - k.v_0) / k.f_v, 1.0);
    let c = centre;
    // |t d − c|² = r²
    let a = d.norm_squared();
    let b = d.dot(&c);
    let disc = (b * b - a * (c.norm_squared() - radius * radius)).max(0.0);
    (b - disc.sqrt()) / a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlbedoPattern {
    Constant,
    /// Vertical two-colour bars.
    Bars,
    Checker,
    /// Random-colour Voronoi cells.
    Voronoi,
}

/// A three-channel albedo on `domain`, deterministic given `seed`.
pub fn make_albedo(pattern: AlbedoPattern, domain: &PixelDomain, seed: u64) -> AlbedoMaps {
    let n = domain.len();
    let size = domain.width().max(domain.height()) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let colour = |rng: &mut ChaCha8Rng| -> [f64; 3] {
        [rng.random_range(0.3..0.95), rng.random_range(0.3..0.95), rng.random_range(0.3..0.95)]
    };
    let per_pixel: Vec<[f64; 3]> = match pattern {
        AlbedoPattern::Constant => vec![[0.8, 0.75, 0.7]; n],
        AlbedoPattern::Bars => {
            let (a, b) = ([0.85, 0.6, 0.4], [0.35, 0.55, 0.8]);
            let period = (size / 8.0).max(2.0);
            domain.pixels().iter().map(|&(u, _)| if ((u as f64 / period) as usize) % 2 == 0 { a } else { b }).collect()
        }
        AlbedoPattern::Checker => {
            let (a, b) = ([0.9, 0.9, 0.85], [0.4, 0.45, 0.5]);
            let period = (size / 6.0).max(2.0);
            domain
                .pixels()
                .iter()
                .map(|&(u, v)| if ((u as f64 / period) as usize + (v as f64 / period) as usize) % 2 == 0 { a } else { b })
                .collect()
        }
        AlbedoPattern::Voronoi => {
            let sites: Vec<([f64; 2], [f64; 3])> = (0..12)
                .map(|_| {
                    let p = [rng.random_range(0.0..domain.width() as f64), rng.random_range(0.0..domain.height() as f64)];
                    (p, colour(&mut rng))
                })
                .collect();
            domain
                .pixels()
                .iter()
                .map(|&(u, v)| {
                    let d2 = |s: &[f64; 2]| (s[0] - u as f64).powi(2) + (s[1] - v as f64).powi(2);
                    sites.iter().min_by(|a, b| d2(&a.0).total_cmp(&d2(&b.0))).expect("sites").1
                })
                .collect()
        }
    };
    let values = (0..3).flat_map(|c| per_pixel.iter().map(move |p| p[c])).collect();
    AlbedoMaps::new(3, n, values).expect("pattern colours are positive")
}

/// Bound on each second-order coefficient of [`random_sh_lighting`].
pub const SECOND_ORDER: f64 = 0.08;

/// Random first+second-order lighting that stays positive on `normals`.
///
/// Each image has an ambient term, a dominant direction on the camera side,
/// second-order terms up to [`SECOND_ORDER`] and a per-channel tint; draws that would shade
/// any normal below 0.05 are rejected.
pub fn random_sh_lighting(rng: &mut impl Rng, images: usize, channels: usize, normals: &[Vector3<f64>]) -> LightingSet {
    let h: Vec<[f64; SH_TERMS]> = normals.iter().map(harmonic_basis).collect();
    let mut coefficients = Vec::with_capacity(images * channels);
    for _ in 0..images {
        let base = loop {
            let dir = loop {
                let d = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..-0.25));
                if d.norm() <= 1.0 {
                    break d.normalize();
                }
            };
            let ambient = rng.random_range(0.35..0.6);
            let strength = rng.random_range(0.35..0.6);
            let mut l = [0.0; SH_TERMS];
            l[0] = ambient;
            l[1] = strength * dir.x;
            l[2] = strength * dir.y;
            l[3] = strength * dir.z;
            for x in &mut l[4..] {
                *x = rng.random_range(-SECOND_ORDER..SECOND_ORDER);
            }
            if h.iter().all(|hj| dot9(&l, hj) >= 0.05) {
                break l;
            }
        };
        for _ in 0..channels {
            let tint = rng.random_range(0.85..1.15);
            coefficients.push(base.map(|x| x * tint));
        }
    }
    LightingSet::new(images, channels, coefficients).expect("finite")
}

/// A smooth outdoor-like radiance map: sky/ground gradient plus a few broad
/// lobes, with channel tints.
pub fn random_environment(rng: &mut impl Rng, width: usize, height: usize, channels: usize) -> EnvironmentMap {
    struct Lobe {
        axis: Vector3<f64>,
        sharpness: f64,
        power: Vec<f64>,
    }
    let tint = |rng: &mut dyn rand::RngCore, lo: f64, hi: f64| -> Vec<f64> {
        (0..channels).map(|_| rng.random_range(lo..hi)).collect()
    };
    let sky = tint(rng, 0.3, 0.8);
    let ground = tint(rng, 0.05, 0.3);
    let lobes: Vec<Lobe> = (0..rng.random_range(1..=3))
        .map(|_| {
            let z: f64 = rng.random_range(-1.0..1.0);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let r = (1.0 - z * z).sqrt();
            Lobe {
                axis: Vector3::new(r * phi.cos(), -z.abs() * 0.5 - 0.2 * r, r * phi.sin() + z).normalize(),
                sharpness: rng.random_range(2.0..8.0),
                power: tint(rng, 0.5, 2.0),
            }
        })
        .collect();
    let mut values = Vec::with_capacity(width * height * channels);
    for row in 0..height {
        let theta = std::f64::consts::PI * (row as f64 + 0.5) / height as f64;
        for col in 0..width {
            let phi = std::f64::consts::TAU * (col as f64 + 0.5) / width as f64;
            let w = EnvironmentMap::direction(theta, phi);
            let w = Vector3::new(w[0], w[1], w[2]);
            let up = -w.y;
            let blend = 0.5 + 0.5 * (4.0 * up).tanh();
            for c in 0..channels {
                let mut x = blend * sky[c] * (0.6 + 0.4 * up.max(0.0)) + (1.0 - blend) * ground[c];
                for lobe in &lobes {
                    x += lobe.power[c] * (lobe.sharpness * (w.dot(&lobe.axis) - 1.0)).exp();
                }
                values.push(x);
            }
        }
    }
    EnvironmentMap::new(width, height, channels, values).expect("radiance is positive")
}

/// What lights a synthetic dataset.
#[derive(Debug, Clone)]
pub enum Lighting {
    Environment { maps: Vec<EnvironmentMap>, resolution: usize },
    Harmonic(LightingSet),
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub images: ImageStack,
    /// Ground-truth normals of the depth map under the discrete gradient.
    pub normals: NormalField,
    /// The harmonic lighting the images were rendered with (after the
    /// normalization scale), when known.
    pub lighting: Option<LightingSet>,
    /// Factor applied so the brightest intensity is at most 1.
    pub scale: f64,
}

/// Renders one image per lighting. If any intensity exceeds 1, every image
/// (and the returned lighting) is scaled down so the maximum is exactly 1.
pub fn make_synthetic_dataset(
    model: &SurfaceModel,
    depth: &DepthMap,
    albedo: &AlbedoMaps,
    lighting: &Lighting,
) -> Result<SyntheticDataset> {
    let n = model.len();
    if depth.len() != n || albedo.pixels() != n {
        return Err(Error::mismatch("depth/albedo do not match the surface model"));
    }
    let normals = model.normals(depth.values());
    let (m, channels, mut values, mut sh) = match lighting {
        Lighting::Harmonic(l) => {
            if l.channels() != albedo.channels() {
                return Err(Error::mismatch("lighting and albedo differ in channel count"));
            }
            (l.images(), l.channels(), render_sh(albedo, l, normals.normals()), Some(l.clone()))
        }
        Lighting::Environment { maps, resolution } => {
            let quad = SphereQuadrature::new(*resolution)?;
            let channels = albedo.channels();
            let mut values = Vec::with_capacity(maps.len() * channels * n);
            for env in maps {
                if env.channels() != channels && env.channels() != 1 {
                    return Err(Error::mismatch("environment map and albedo differ in channel count"));
                }
                let irr = environment_irradiance(normals.normals(), env, &quad);
                for c in 0..channels {
                    let e = &irr[c.min(irr.len() - 1)];
                    values.extend(albedo.channel(c).iter().zip(e).map(|(r, x)| r * x));
                }
            }
            (maps.len(), channels, values, None)
        }
    };
    if let Some(bad) = values.iter().find(|x| **x < 0.0) {
        return Err(Error::InvalidParameter(format!("lighting produces a negative intensity ({bad})")));
    }
    let peak = values.iter().cloned().fold(0.0, f64::max);
    let scale = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    if scale != 1.0 {
        values.iter_mut().for_each(|x| *x = (*x * scale).min(1.0));
        sh = sh.map(|l| l.scaled(scale));
    }
    Ok(SyntheticDataset { images: ImageStack::new(m, channels, n, values)?, normals, lighting: sh, scale })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_are_positive_and_bulge_towards_the_camera() {
        for shape in [Shape::GaussianBump, Shape::Hemisphere] {
            let s = make_shape(shape, 32).unwrap();
            let z = s.depth.values();
            assert!(z.iter().all(|&x| x > 0.0));
            // the pixel nearest the principal point is the closest to the camera
            let centre = s.domain.index(16, 16).or(s.domain.index(15, 15)).unwrap();
            let zmin = z.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!((z[centre] - zmin).abs() < 0.05 * (BASE_DEPTH - zmin).max(1e-9), "{shape:?}");
            let model = SurfaceModel::new(s.domain.clone(), s.intrinsics);
            assert!(model.normals(z).normals().iter().all(|n| n.z < 0.0));
        }
    }

    #[test]
    fn hemisphere_points_lie_on_the_sphere() {
        let s = hemisphere(40).unwrap();
        let tan_a = 0.45 * 40.0 / s.intrinsics.f_u;
        let radius = BASE_DEPTH * tan_a / (1.0 + tan_a * tan_a).sqrt();
        for (j, &(u, v)) in s.domain.pixels().iter().enumerate() {
            let p = s.intrinsics.backproject(u as f64, v as f64, s.depth.values()[j]);
            let d = (p[0] * p[0] + p[1] * p[1] + (p[2] - BASE_DEPTH).powi(2)).sqrt();
            assert!((d - radius).abs() < 1e-9);
        }
    }

    #[test]
    fn albedo_patterns_are_deterministic() {
        let d = PixelDomain::disk(24, 24, 11.5, 11.5, 10.0).unwrap();
        for p in [AlbedoPattern::Constant, AlbedoPattern::Bars, AlbedoPattern::Checker, AlbedoPattern::Voronoi] {
            let a = make_albedo(p, &d, 7);
            assert_eq!(a, make_albedo(p, &d, 7));
            assert!(a.values().iter().all(|&x| x > 0.0 && x <= 1.0));
        }
    }

    #[test]
    fn random_lighting_is_positive_on_the_scene() {
        let s = gaussian_bump(32).unwrap();
        let model = SurfaceModel::new(s.domain.clone(), s.intrinsics);
        let normals = model.normals(s.depth.values());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = random_sh_lighting(&mut rng, 6, 3, normals.normals());
        assert!(!l.is_first_order());
        let out = render_sh(&AlbedoMaps::constant(3, model.len(), 1.0), &l, normals.normals());
        assert!(out.iter().all(|&x| x >= 0.05 * 0.85));
    }

    #[test]
    fn dataset_shape_and_linearity() {
        let s = gaussian_bump(24).unwrap();
        let model = SurfaceModel::new(s.domain.clone(), s.intrinsics);
        let albedo = AlbedoMaps::constant(3, model.len(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let env = random_environment(&mut rng, 32, 16, 3);
        let lighting = Lighting::Environment { maps: vec![env.clone(), env.scaled(0.5)], resolution: 48 };
        let ds = make_synthetic_dataset(&model, &s.depth, &albedo, &lighting).unwrap();
        assert_eq!(ds.images.images(), 2);
        for c in 0..3 {
            for (a, b) in ds.images.slice(0, c).iter().zip(ds.images.slice(1, c)) {
                assert!((0.5 * a - b).abs() < 1e-12);
            }
        }

        let same = Lighting::Environment { maps: vec![env.clone(), env], resolution: 48 };
        let ds = make_synthetic_dataset(&model, &s.depth, &albedo, &same).unwrap();
        assert_eq!(ds.images.slice(0, 1), ds.images.slice(1, 1));
        assert!(ds.images.values().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }
}
