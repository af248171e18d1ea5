//! Finite differences on the masked grid, the perspective depth → normal map,
//! second-order harmonic images and the depth Jacobian of the shading
//! residual.

use nalgebra::Vector3;

use crate::linalg::CsrMatrix;
use crate::par;
use crate::scene::{AlbedoMaps, CameraIntrinsics, ImageStack, LightingSet, PixelDomain, SH_TERMS};

/// Floor applied to `|ñ|` before dividing.
pub const NORM_FLOOR: f64 = 1e-9;

/// How a difference is formed when the forward neighbour is outside Ω.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Forward difference if the `+1` neighbour is masked, otherwise backward
    /// if the `−1` neighbour is, otherwise a zero row.
    Mixed,
    /// The function is taken as zero outside Ω: one forward-difference row
    /// per masked pixel, plus a row for every masked pixel whose backward
    /// neighbour is outside. Has more rows than unknowns.
    Dirichlet,
}

/// The discrete gradient `∇ = (D_u, D_v)` as two sparse `N × N` maps.
#[derive(Debug, Clone)]
pub struct GradientOperator {
    boundary: Boundary,
    du: CsrMatrix,
    dv: CsrMatrix,
    du_t: CsrMatrix,
    dv_t: CsrMatrix,
}

impl GradientOperator {
    /// Mixed forward/backward stencil; every masked pixel stays an unknown.
    pub fn new(domain: &PixelDomain) -> Self {
        Self::with_boundary(domain, Boundary::Mixed)
    }

    pub fn dirichlet(domain: &PixelDomain) -> Self {
        Self::with_boundary(domain, Boundary::Dirichlet)
    }

    pub fn with_boundary(domain: &PixelDomain, boundary: Boundary) -> Self {
        let n = domain.len();
        let mut tu = Vec::with_capacity(2 * n);
        let mut tv = Vec::with_capacity(2 * n);
        for j in 0..n {
            let (u, v) = domain.pixel(j);
            let (u, v) = (u as isize, v as isize);
            push_difference(&mut tu, boundary, j, domain.index(u + 1, v), domain.index(u - 1, v));
            push_difference(&mut tv, boundary, j, domain.index(u, v + 1), domain.index(u, v - 1));
        }
        let (mut ru, mut rv) = (n, n);
        if boundary == Boundary::Dirichlet {
            for j in 0..n {
                let (u, v) = domain.pixel(j);
                let (u, v) = (u as isize, v as isize);
                if domain.index(u - 1, v).is_none() {
                    tu.push((ru, j, 1.0));
                    ru += 1;
                }
                if domain.index(u, v - 1).is_none() {
                    tv.push((rv, j, 1.0));
                    rv += 1;
                }
            }
        }
        let du = CsrMatrix::from_triplets(ru, n, &tu);
        let dv = CsrMatrix::from_triplets(rv, n, &tv);
        GradientOperator { boundary, du_t: du.transpose(), dv_t: dv.transpose(), du, dv }
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Number of unknowns.
    pub fn len(&self) -> usize {
        self.du.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn du(&self) -> &CsrMatrix {
        &self.du
    }

    pub fn dv(&self) -> &CsrMatrix {
        &self.dv
    }

    /// `(D_u x, D_v x)`.
    pub fn apply(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (self.du.mul_vec(x), self.dv.mul_vec(x))
    }

    /// `D_uᵀ gu + D_vᵀ gv`.
    pub fn apply_transpose(&self, gu: &[f64], gv: &[f64]) -> Vec<f64> {
        let mut out = self.du_t.mul_vec(gu);
        let tmp = self.dv_t.mul_vec(gv);
        par::for_each_mut(&mut out, |i, o| *o += tmp[i]);
        out
    }

    /// `∇ᵀ∇ x`.
    pub fn normal_apply(&self, x: &[f64]) -> Vec<f64> {
        let (gu, gv) = self.apply(x);
        self.apply_transpose(&gu, &gv)
    }

    /// Assembles `D_uᵀ diag(q) D_u + D_vᵀ diag(q) D_v`; `q` has one entry per
    /// row, so this needs the square (mixed) operator.
    pub fn weighted_laplacian(&self, q: &[f64]) -> CsrMatrix {
        let n = self.len();
        assert!(self.du.nrows() == n && self.dv.nrows() == n, "weighted_laplacian needs a square operator");
        assert_eq!(q.len(), n);
        let mut t = Vec::with_capacity(8 * n);
        for d in [&self.du, &self.dv] {
            for (j, &qj) in q.iter().enumerate() {
                let (cols, vals) = d.row(j);
                for (&a, &va) in cols.iter().zip(vals) {
                    for (&b, &vb) in cols.iter().zip(vals) {
                        t.push((a, b, qj * va * vb));
                    }
                }
            }
        }
        CsrMatrix::from_triplets(n, n, &t)
    }
}

fn push_difference(
    t: &mut Vec<(usize, usize, f64)>,
    boundary: Boundary,
    j: usize,
    forward: Option<usize>,
    backward: Option<usize>,
) {
    match (boundary, forward, backward) {
        (_, Some(k), _) => t.extend([(j, j, -1.0), (j, k, 1.0)]),
        (Boundary::Mixed, None, Some(k)) => t.extend([(j, k, -1.0), (j, j, 1.0)]),
        (Boundary::Mixed, None, None) => {}
        (Boundary::Dirichlet, None, _) => t.push((j, j, -1.0)),
    }
}

/// Unit normals with the norms they were normalized by.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalField {
    normals: Vec<Vector3<f64>>,
    norms: Vec<f64>,
    raw: Vec<Vector3<f64>>,
    flagged: Vec<usize>,
}

impl NormalField {
    /// `n_j = ñ_j / θ_j` with `θ_j = |ñ_j|` floored at [`NORM_FLOOR`]; floored
    /// pixels are reported by [`flagged`](Self::flagged) and get the normal
    /// `(0, 0, −1)`.
    pub fn normalize(raw: Vec<Vector3<f64>>) -> Self {
        let mut flagged = Vec::new();
        let mut normals = Vec::with_capacity(raw.len());
        let mut norms = Vec::with_capacity(raw.len());
        for (j, r) in raw.iter().enumerate() {
            let theta = r.norm();
            if theta < NORM_FLOOR || !theta.is_finite() {
                flagged.push(j);
                norms.push(NORM_FLOOR);
                normals.push(Vector3::new(0.0, 0.0, -1.0));
            } else {
                norms.push(theta);
                normals.push(r / theta);
            }
        }
        NormalField { normals, norms, raw, flagged }
    }

    /// Wraps normals that are already unit length (θ = 1).
    pub fn from_unit(normals: Vec<Vector3<f64>>) -> Self {
        Self::normalize(normals)
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    /// θ.
    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    /// ñ.
    pub fn raw(&self) -> &[Vector3<f64>] {
        &self.raw
    }

    pub fn flagged(&self) -> &[usize] {
        &self.flagged
    }

    pub fn into_normals(self) -> Vec<Vector3<f64>> {
        self.normals
    }
}

/// `∂ñ_j/∂z` restricted to the (at most three) depths pixel `j` reads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    len: usize,
    index: [usize; 3],
    coef: [Vector3<f64>; 3],
}

impl Stencil {
    fn add(&mut self, m: usize, c: Vector3<f64>) {
        if let Some(k) = self.index[..self.len].iter().position(|&i| i == m) {
            self.coef[k] += c;
        } else {
            self.index[self.len] = m;
            self.coef[self.len] = c;
            self.len += 1;
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn indices(&self) -> &[usize] {
        &self.index[..self.len]
    }

    pub fn coefficients(&self) -> &[Vector3<f64>] {
        &self.coef[..self.len]
    }
}

/// Everything needed to turn a perspective depth map into normals: the
/// domain, the intrinsics and the mixed-boundary gradient.
#[derive(Debug, Clone)]
pub struct SurfaceModel {
    domain: PixelDomain,
    intrinsics: CameraIntrinsics,
    grad: GradientOperator,
    centered: Vec<(f64, f64)>,
    stencils: Vec<Stencil>,
}

impl SurfaceModel {
    pub fn new(domain: PixelDomain, intrinsics: CameraIntrinsics) -> Self {
        let grad = GradientOperator::new(&domain);
        let centered: Vec<(f64, f64)> =
            domain.pixels().iter().map(|&(u, v)| intrinsics.centered(u as f64, v as f64)).collect();
        let stencils = (0..domain.len())
            .map(|j| {
                let (ut, vt) = centered[j];
                let mut s = Stencil { len: 0, index: [j; 3], coef: [Vector3::zeros(); 3] };
                s.add(j, Vector3::new(0.0, 0.0, -1.0));
                let (cols, vals) = grad.du().row(j);
                for (&m, &d) in cols.iter().zip(vals) {
                    s.add(m, Vector3::new(intrinsics.f_u * d, 0.0, -ut * d));
                }
                let (cols, vals) = grad.dv().row(j);
                for (&m, &d) in cols.iter().zip(vals) {
                    s.add(m, Vector3::new(0.0, intrinsics.f_v * d, -vt * d));
                }
                s
            })
            .collect();
        SurfaceModel { domain, intrinsics, grad, centered, stencils }
    }

    pub fn domain(&self) -> &PixelDomain {
        &self.domain
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn gradient(&self) -> &GradientOperator {
        &self.grad
    }

    pub fn len(&self) -> usize {
        self.domain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domain.is_empty()
    }

    /// `(ũ, ṽ)` of pixel `j`.
    pub fn centered(&self, j: usize) -> (f64, f64) {
        self.centered[j]
    }

    pub fn stencil(&self, j: usize) -> &Stencil {
        &self.stencils[j]
    }

    /// `ñ[z] = (f_u ∂_u z, f_v ∂_v z, −z − ũ ∂_u z − ṽ ∂_v z)`, linear in `z`.
    pub fn unnormalized_normals(&self, z: &[f64]) -> Vec<Vector3<f64>> {
        assert_eq!(z.len(), self.len());
        let (gu, gv) = self.grad.apply(z);
        let k = &self.intrinsics;
        par::map(z.len(), |j| {
            let (ut, vt) = self.centered[j];
            Vector3::new(k.f_u * gu[j], k.f_v * gv[j], -z[j] - ut * gu[j] - vt * gv[j])
        })
    }

    pub fn normals(&self, z: &[f64]) -> NormalField {
        NormalField::normalize(self.unnormalized_normals(z))
    }

    /// `ñ[z] / θ` for a lagged θ (not unit length unless θ = |ñ[z]|).
    pub fn lagged_normals(&self, z: &[f64], theta: &[f64]) -> Vec<Vector3<f64>> {
        let raw = self.unnormalized_normals(z);
        raw.iter().zip(theta).map(|(r, &t)| r / t).collect()
    }
}

/// `h[n] = [1, n₁, n₂, n₃, n₁n₂, n₁n₃, n₂n₃, n₁²−n₂², 3n₃²−1]`.
#[inline]
pub fn harmonic_basis(n: &Vector3<f64>) -> [f64; SH_TERMS] {
    let (a, b, c) = (n.x, n.y, n.z);
    [1.0, a, b, c, a * b, a * c, b * c, a * a - b * b, 3.0 * c * c - 1.0]
}

/// `∂h/∂n`, one row per basis function.
#[inline]
pub fn harmonic_jacobian(n: &Vector3<f64>) -> [[f64; 3]; SH_TERMS] {
    let (a, b, c) = (n.x, n.y, n.z);
    [
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [b, a, 0.0],
        [c, 0.0, a],
        [0.0, c, b],
        [2.0 * a, -2.0 * b, 0.0],
        [0.0, 0.0, 6.0 * c],
    ]
}

/// `lᵀ ∂h/∂n`, the gradient of the shading `l · h[n]` with respect to `n`.
#[inline]
pub fn shading_gradient(l: &[f64; SH_TERMS], n: &Vector3<f64>) -> Vector3<f64> {
    let jac = harmonic_jacobian(n);
    let mut g = Vector3::zeros();
    for (lk, row) in l.iter().zip(&jac) {
        g += *lk * Vector3::new(row[0], row[1], row[2]);
    }
    g
}

#[inline]
pub fn dot9(l: &[f64; SH_TERMS], h: &[f64; SH_TERMS]) -> f64 {
    l.iter().zip(h).map(|(a, b)| a * b).sum()
}

/// The `N × 9` harmonic images of a normal field.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicImages(Vec<[f64; SH_TERMS]>);

impl HarmonicImages {
    pub fn new(normals: &[Vector3<f64>]) -> Self {
        HarmonicImages(par::map(normals.len(), |j| harmonic_basis(&normals[j])))
    }

    pub fn rows(&self) -> &[[f64; SH_TERMS]] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-pixel `l · h_j`.
pub fn shading(l: &[f64; SH_TERMS], h: &HarmonicImages) -> Vec<f64> {
    par::map(h.len(), |j| dot9(l, &h.0[j]))
}

/// Jacobian of `z ↦ r_{i,c,j} = ρ_{c,j} lⁱ_c · h[ñ_j[z]/θ_j] − Iⁱ_{c,j}` with θ
/// held fixed, as an `(M·C·N) × N` matrix with row index `(i·C + c)·N + j`.
///
/// Pixels whose θ sits at the normalization floor get zero rows.
pub fn residual_jacobian_z(
    model: &SurfaceModel,
    albedo: &AlbedoMaps,
    lighting: &LightingSet,
    z: &[f64],
    theta: &[f64],
) -> CsrMatrix {
    let n = model.len();
    let (m, c_count) = (lighting.images(), lighting.channels());
    let normals = model.lagged_normals(z, theta);
    let mut t = Vec::with_capacity(m * c_count * n * 3);
    for i in 0..m {
        for c in 0..c_count {
            let l = lighting.get(i, c);
            for j in 0..n {
                if theta[j] <= NORM_FLOOR {
                    continue;
                }
                let row = (i * c_count + c) * n + j;
                let g = shading_gradient(l, &normals[j]) * (albedo.get(c, j) / theta[j]);
                let s = model.stencil(j);
                for (&col, coef) in s.indices().iter().zip(s.coefficients()) {
                    t.push((row, col, g.dot(coef)));
                }
            }
        }
    }
    CsrMatrix::from_triplets(m * c_count * n, n, &t)
}

/// `r_{i,c,j}` for every image, channel and pixel, using the normals `ñ[z]/θ`.
pub fn residuals(
    normals: &[Vector3<f64>],
    albedo: &AlbedoMaps,
    lighting: &LightingSet,
    images: &ImageStack,
) -> Vec<f64> {
    let n = normals.len();
    let h = HarmonicImages::new(normals);
    let c_count = images.channels();
    let mut out = vec![0.0; images.values().len()];
    par::for_each_chunk_mut(&mut out, n, |ic, chunk| {
        let (i, c) = (ic / c_count, ic % c_count);
        let l = lighting.get(i, c);
        let rho = albedo.channel(c);
        let obs = images.slice(i, c);
        for (j, r) in chunk.iter_mut().enumerate() {
            *r = rho[j] * dot9(l, &h.rows()[j]) - obs[j];
        }
    });
    out
}
