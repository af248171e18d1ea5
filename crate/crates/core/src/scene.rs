//! Core domain types: camera, masked pixel domain, and the per-pixel maps the
//! reconstruction reads and writes.
//!
//! Pixel coordinates follow the image convention: `u` runs along columns
//! (x to the right), `v` along rows (y downwards); the camera looks along +z.
//! Masked pixels are indexed in row-major order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics `K = [[f_u, 0, u_0], [0, f_v, v_0], [0, 0, 1]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub f_u: f64,
    pub f_v: f64,
    pub u_0: f64,
    pub v_0: f64,
}

impl CameraIntrinsics {
    pub fn new(f_u: f64, f_v: f64, u_0: f64, v_0: f64) -> Result<Self> {
        let k = CameraIntrinsics { f_u, f_v, u_0, v_0 };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_u > 0.0 && self.f_v > 0.0 && self.f_u.is_finite() && self.f_v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be positive and finite, got ({}, {})",
                self.f_u, self.f_v
            )));
        }
        if !(self.u_0.is_finite() && self.v_0.is_finite()) {
            return Err(Error::InvalidParameter("principal point must be finite".into()));
        }
        Ok(())
    }

    /// Pixel coordinates relative to the principal point.
    #[inline]
    pub fn centered(&self, u: f64, v: f64) -> (f64, f64) {
        (u - self.u_0, v - self.v_0)
    }

    /// `z · K⁻¹ [u, v, 1]ᵀ`.
    #[inline]
    pub fn backproject(&self, u: f64, v: f64, z: f64) -> [f64; 3] {
        [z * (u - self.u_0) / self.f_u, z * (v - self.v_0) / self.f_v, z]
    }

    /// Inverse of [`backproject`](Self::backproject): returns `(u, v)`.
    #[inline]
    pub fn project(&self, p: [f64; 3]) -> (f64, f64) {
        (self.f_u * p[0] / p[2] + self.u_0, self.f_v * p[1] / p[2] + self.v_0)
    }
}

const UNMASKED: u32 = u32::MAX;

/// The set Ω of masked pixels together with the pixel ↔ index bijection.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelDomain {
    width: usize,
    height: usize,
    mask: Vec<bool>,
    pixels: Vec<(usize, usize)>,
    lookup: Vec<u32>,
}

impl PixelDomain {
    /// `mask` is row-major, `width * height` long.
    pub fn from_mask(width: usize, height: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != width * height {
            return Err(Error::mismatch(format!(
                "mask has {} entries, expected {width}x{height}",
                mask.len()
            )));
        }
        let mut pixels = Vec::new();
        let mut lookup = vec![UNMASKED; mask.len()];
        for v in 0..height {
            for u in 0..width {
                if mask[v * width + u] {
                    lookup[v * width + u] = pixels.len() as u32;
                    pixels.push((u, v));
                }
            }
        }
        if pixels.is_empty() {
            return Err(Error::EmptyMask);
        }
        Ok(PixelDomain { width, height, mask, pixels, lookup })
    }

    pub fn full(width: usize, height: usize) -> Result<Self> {
        Self::from_mask(width, height, vec![true; width * height])
    }

    /// Pixels whose centre lies strictly within `radius` of `(cu, cv)`.
    pub fn disk(width: usize, height: usize, cu: f64, cv: f64, radius: f64) -> Result<Self> {
        let mask = (0..height)
            .flat_map(|v| (0..width).map(move |u| (u, v)))
            .map(|(u, v)| (u as f64 - cu).hypot(v as f64 - cv) < radius)
            .collect();
        Self::from_mask(width, height, mask)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number N of masked pixels.
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// `(u, v)` of masked pixel `j`.
    #[inline]
    pub fn pixel(&self, j: usize) -> (usize, usize) {
        self.pixels[j]
    }

    pub fn pixels(&self) -> &[(usize, usize)] {
        &self.pixels
    }

    /// Linear index of pixel `(u, v)`, if it is inside the image and masked.
    #[inline]
    pub fn index(&self, u: isize, v: isize) -> Option<usize> {
        if u < 0 || v < 0 || u as usize >= self.width || v as usize >= self.height {
            return None;
        }
        match self.lookup[v as usize * self.width + u as usize] {
            UNMASKED => None,
            j => Some(j as usize),
        }
    }

    /// Spreads masked values onto the full grid, filling the rest with `fill`.
    pub fn scatter(&self, values: &[f64], fill: f64) -> Vec<f64> {
        assert_eq!(values.len(), self.len());
        let mut grid = vec![fill; self.width * self.height];
        for (&(u, v), &x) in self.pixels.iter().zip(values) {
            grid[v * self.width + u] = x;
        }
        grid
    }

    /// Picks masked values out of a full row-major grid.
    pub fn gather(&self, grid: &[f64]) -> Vec<f64> {
        assert_eq!(grid.len(), self.width * self.height);
        self.pixels.iter().map(|&(u, v)| grid[v * self.width + u]).collect()
    }

    pub fn same_shape(&self, other: &PixelDomain) -> bool {
        self.width == other.width && self.height == other.height && self.mask == other.mask
    }
}

/// `M × C × N` observed intensities, normalized to `[0, 1]` at load time.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    images: usize,
    channels: usize,
    pixels: usize,
    values: Vec<f64>,
}

impl ImageStack {
    /// `values` is laid out image-major, then channel, then pixel.
    pub fn new(images: usize, channels: usize, pixels: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != images * channels * pixels {
            return Err(Error::mismatch(format!(
                "image stack expects {images}x{channels}x{pixels} values, got {}",
                values.len()
            )));
        }
        if images == 0 || channels == 0 {
            return Err(Error::InvalidParameter("image stack needs at least one image and channel".into()));
        }
        if let Some(bad) = values.iter().position(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "intensities must be finite and nonnegative (entry {bad} is {})",
                values[bad]
            )));
        }
        Ok(ImageStack { images, channels, pixels, values })
    }

    pub fn images(&self) -> usize {
        self.images
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.pixels
    }

    #[inline]
    pub fn get(&self, i: usize, c: usize, j: usize) -> f64 {
        self.values[(i * self.channels + c) * self.pixels + j]
    }

    /// The N intensities of image `i`, channel `c`.
    pub fn slice(&self, i: usize, c: usize) -> &[f64] {
        let start = (i * self.channels + c) * self.pixels;
        &self.values[start..start + self.pixels]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Every value multiplied by `s >= 0`.
    pub fn scaled(&self, s: f64) -> ImageStack {
        ImageStack { values: self.values.iter().map(|x| x * s).collect(), ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    Orthographic,
    Perspective,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    projection: Projection,
    values: Vec<f64>,
}

impl DepthMap {
    pub fn perspective(values: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, z)| !(**z > 0.0) || !z.is_finite()) {
            return Err(Error::NonPositiveDepth { index, value });
        }
        Ok(DepthMap { projection: Projection::Perspective, values })
    }

    pub fn orthographic(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidParameter("orthographic depth must be finite".into()));
        }
        Ok(DepthMap { projection: Projection::Orthographic, values })
    }

    pub fn projection(&self) -> Projection {
        self.projection
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Per-channel reflectance, channel-major.
///
/// Loaded and synthesized albedos are nonnegative. The solver's albedo block is
/// an unconstrained least-squares update, so intermediate iterates may dip
/// below zero; exporters clamp.
#[derive(Debug, Clone, PartialEq)]
pub struct AlbedoMaps {
    channels: usize,
    pixels: usize,
    values: Vec<f64>,
}

impl AlbedoMaps {
    pub fn new(channels: usize, pixels: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != channels * pixels {
            return Err(Error::mismatch(format!(
                "albedo expects {channels}x{pixels} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::InvalidParameter("albedo must be nonnegative".into()));
        }
        Ok(AlbedoMaps { channels, pixels, values })
    }

    pub fn constant(channels: usize, pixels: usize, value: f64) -> Self {
        AlbedoMaps { channels, pixels, values: vec![value; channels * pixels] }
    }

    pub(crate) fn from_unchecked(channels: usize, pixels: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), channels * pixels);
        AlbedoMaps { channels, pixels, values }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.pixels
    }

    #[inline]
    pub fn get(&self, c: usize, j: usize) -> f64 {
        self.values[c * self.pixels + j]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c * self.pixels..(c + 1) * self.pixels]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled(&self, s: f64) -> AlbedoMaps {
        AlbedoMaps { values: self.values.iter().map(|x| x * s).collect(), ..self.clone() }
    }
}

/// Number of second-order harmonic coefficients.
pub const SH_TERMS: usize = 9;
/// Number of first-order harmonic coefficients.
pub const SH_FIRST_ORDER_TERMS: usize = 4;

/// One 9-vector per image and channel, in the basis order
/// `[1, n₁, n₂, n₃, n₁n₂, n₁n₃, n₂n₃, n₁²−n₂², 3n₃²−1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightingSet {
    images: usize,
    channels: usize,
    coefficients: Vec<[f64; SH_TERMS]>,
}

impl LightingSet {
    pub fn new(images: usize, channels: usize, coefficients: Vec<[f64; SH_TERMS]>) -> Result<Self> {
        if coefficients.len() != images * channels {
            return Err(Error::mismatch(format!(
                "lighting expects {images}x{channels} vectors, got {}",
                coefficients.len()
            )));
        }
        if coefficients.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("lighting coefficients must be finite".into()));
        }
        Ok(LightingSet { images, channels, coefficients })
    }

    pub fn uniform(images: usize, channels: usize, l: [f64; SH_TERMS]) -> Self {
        LightingSet { images, channels, coefficients: vec![l; images * channels] }
    }

    pub fn images(&self) -> usize {
        self.images
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn get(&self, i: usize, c: usize) -> &[f64; SH_TERMS] {
        &self.coefficients[i * self.channels + c]
    }

    pub fn set(&mut self, i: usize, c: usize, l: [f64; SH_TERMS]) {
        self.coefficients[i * self.channels + c] = l;
    }

    pub fn coefficients(&self) -> &[[f64; SH_TERMS]] {
        &self.coefficients
    }

    /// True when every vector has zero second-order entries (5–9).
    pub fn is_first_order(&self) -> bool {
        self.coefficients.iter().all(|l| l[SH_FIRST_ORDER_TERMS..].iter().all(|&x| x == 0.0))
    }

    pub fn scaled(&self, s: f64) -> LightingSet {
        let coefficients = self.coefficients.iter().map(|l| l.map(|x| x * s)).collect();
        LightingSet { coefficients, ..self.clone() }
    }
}

/// Latitude-longitude radiance map covering the whole sphere.
///
/// Row `r` sits at polar angle `θ = π (r + ½) / height` measured from the
/// "up" direction `(0, −1, 0)` (image up in camera coordinates), column `k` at
/// azimuth `φ = 2π (k + ½) / width`; the direction is
/// `(sin θ cos φ, −cos θ, sin θ sin φ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentMap {
    width: usize,
    height: usize,
    channels: usize,
    values: Vec<f64>,
}

impl EnvironmentMap {
    /// `values` is row-major with interleaved channels.
    pub fn new(width: usize, height: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if width < 2 || height < 2 || channels == 0 {
            return Err(Error::InvalidParameter("environment map must be at least 2x2 with one channel".into()));
        }
        if values.len() != width * height * channels {
            return Err(Error::mismatch(format!(
                "environment map expects {width}x{height}x{channels} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidParameter("radiance must be finite and nonnegative".into()));
        }
        Ok(EnvironmentMap { width, height, channels, values })
    }

    pub fn uniform(width: usize, height: usize, channels: usize, radiance: f64) -> Self {
        EnvironmentMap { width, height, channels, values: vec![radiance; width * height * channels] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn direction(theta: f64, phi: f64) -> [f64; 3] {
        [theta.sin() * phi.cos(), -theta.cos(), theta.sin() * phi.sin()]
    }

    /// Radiance in direction `w` (unit), bilinear in (θ, φ) with wrap-around
    /// in azimuth.
    pub fn radiance(&self, w: [f64; 3], out: &mut [f64]) {
        use std::f64::consts::PI;
        let theta = (-w[1]).clamp(-1.0, 1.0).acos();
        let mut phi = w[2].atan2(w[0]);
        if phi < 0.0 {
            phi += 2.0 * PI;
        }
        let y = (theta / PI * self.height as f64 - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x = phi / (2.0 * PI) * self.width as f64 - 0.5;
        let y0 = y.floor() as usize;
        let y1 = (y0 + 1).min(self.height - 1);
        let fy = y - y0 as f64;
        let xf = x.floor();
        let fx = x - xf;
        let wrap = |k: isize| k.rem_euclid(self.width as isize) as usize;
        let x0 = wrap(xf as isize);
        let x1 = wrap(xf as isize + 1);
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            let at = |r: usize, k: usize| self.values[(r * self.width + k) * self.channels + c];
            *o = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1))
                + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1));
        }
    }

    pub fn scaled(&self, s: f64) -> EnvironmentMap {
        EnvironmentMap { values: self.values.iter().map(|x| x * s).collect(), ..self.clone() }
    }
}
