//! File formats: PFM float maps, PNG images and masks, JSON intrinsics and
//! lighting, OBJ meshes.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{AlbedoMaps, CameraIntrinsics, DepthMap, ImageStack, LightingSet, PixelDomain, Projection, SH_TERMS};

/// A dense float image, row-major from the top row, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FloatImage {
    pub fn from_grid(width: usize, height: usize, grid: &[f64]) -> Self {
        assert_eq!(grid.len(), width * height);
        FloatImage { width, height, channels: 1, data: grid.iter().map(|&x| x as f32).collect() }
    }

    /// Channel `c` as f64, row-major.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(self.channels).map(|&x| x as f64).collect()
    }
}

/// Writes a little-endian PFM (`Pf` for one channel, `PF` for three).
pub fn write_pfm(path: &Path, img: &FloatImage) -> Result<()> {
    let tag = match img.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::InvalidParameter(format!("PFM supports 1 or 3 channels, got {c}"))),
    };
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let row_len = img.width * img.channels;
    let mut write = || -> std::io::Result<()> {
        write!(w, "{tag}\n{} {}\n-1.0\n", img.width, img.height)?;
        // PFM stores the bottom row first
        for row in img.data.chunks(row_len).rev() {
            for x in row {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<FloatImage> {
    let bad = |reason: &str| Error::Format { format: "PFM", reason: format!("{}: {reason}", path.display()) };
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut tokens = Vec::new();
    let mut line = String::new();
    while tokens.len() < 4 {
        line.clear();
        if r.read_line(&mut line).map_err(|e| Error::io(path, e))? == 0 {
            return Err(bad("truncated header"));
        }
        tokens.extend(line.split_whitespace().map(str::to_owned));
    }
    let channels = match tokens[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(bad("unknown magic")),
    };
    let width: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = tokens[3].parse().map_err(|_| bad("bad scale"))?;
    let little = scale < 0.0;

    let count = width * height * channels;
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes).map_err(|_| bad("truncated pixel data"))?;
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| {
            let b = [b[0], b[1], b[2], b[3]];
            if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    let row_len = width * channels;
    let data = values.chunks(row_len).rev().flatten().copied().collect();
    Ok(FloatImage { width, height, channels, data })
}

/// A decoded image normalized by its white level (255 or 65535; float
/// formats are taken as-is). Alpha is dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Channel-major planes, each row-major.
    pub planes: Vec<Vec<f64>>,
}

pub fn load_image(path: &Path) -> Result<LoadedImage> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.into(), source })?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let (channels, raw, white): (usize, Vec<f64>, f64) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw().into_iter().map(f64::from).collect(), 255.0),
        DynamicImage::ImageLumaA8(_) => {
            (1, img.to_luma8().into_raw().into_iter().map(f64::from).collect(), 255.0)
        }
        DynamicImage::ImageLuma16(b) => (1, b.into_raw().into_iter().map(f64::from).collect(), 65535.0),
        DynamicImage::ImageLumaA16(_) => {
            (1, img.to_luma16().into_raw().into_iter().map(f64::from).collect(), 65535.0)
        }
        DynamicImage::ImageRgb16(b) => (3, b.into_raw().into_iter().map(f64::from).collect(), 65535.0),
        DynamicImage::ImageRgba16(_) => {
            (3, img.to_rgb16().into_raw().into_iter().map(f64::from).collect(), 65535.0)
        }
        DynamicImage::ImageRgb32F(_) | DynamicImage::ImageRgba32F(_) => {
            (3, img.to_rgb32f().into_raw().into_iter().map(f64::from).collect(), 1.0)
        }
        _ => (3, img.to_rgb8().into_raw().into_iter().map(f64::from).collect(), 255.0),
    };
    let planes = (0..channels)
        .map(|c| raw.iter().skip(c).step_by(channels).map(|x| x / white).collect())
        .collect();
    Ok(LoadedImage { width, height, channels, planes })
}

/// Nonzero pixels of the first channel are inside the mask.
pub fn load_mask(path: &Path) -> Result<PixelDomain> {
    let img = load_image(path)?;
    let mask = img.planes[0].iter().map(|&x| x > 0.0).collect();
    PixelDomain::from_mask(img.width, img.height, mask)
}

pub fn write_mask(path: &Path, domain: &PixelDomain) -> Result<()> {
    let buf: Vec<u8> = domain.mask().iter().map(|&m| if m { 255 } else { 0 }).collect();
    let img = ImageBuffer::<Luma<u8>, _>::from_raw(domain.width() as u32, domain.height() as u32, buf)
        .expect("mask buffer size");
    img.save(path).map_err(|source| Error::Image { path: path.into(), source })
}

/// Writes a 16-bit PNG from channel-major `[0, 1]` planes (values are
/// clamped). One plane gives grayscale, three give RGB.
pub fn write_png16(path: &Path, width: usize, height: usize, planes: &[Vec<f64>]) -> Result<()> {
    let q = |x: f64| (x.clamp(0.0, 1.0) * 65535.0).round() as u16;
    let result = match planes.len() {
        1 => {
            let buf: Vec<u16> = planes[0].iter().map(|&x| q(x)).collect();
            ImageBuffer::<Luma<u16>, _>::from_raw(width as u32, height as u32, buf).expect("buffer size").save(path)
        }
        3 => {
            let buf: Vec<u16> = (0..width * height).flat_map(|p| planes.iter().map(move |pl| q(pl[p]))).collect();
            ImageBuffer::<Rgb<u16>, _>::from_raw(width as u32, height as u32, buf).expect("buffer size").save(path)
        }
        c => return Err(Error::InvalidParameter(format!("PNG export supports 1 or 3 channels, got {c}"))),
    };
    result.map_err(|source| Error::Image { path: path.into(), source })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.into(), source })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json { path: path.into(), source })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    let k: CameraIntrinsics = read_json(path)?;
    k.validate()?;
    Ok(k)
}

pub fn write_intrinsics(path: &Path, k: &CameraIntrinsics) -> Result<()> {
    write_json(path, k)
}

/// `coefficients[i][c]` is the 9-vector of image `i`, channel `c`.
#[derive(Debug, Serialize, Deserialize)]
struct LightingFile {
    coefficients: Vec<Vec<[f64; SH_TERMS]>>,
}

pub fn write_lighting(path: &Path, l: &LightingSet) -> Result<()> {
    let coefficients = (0..l.images()).map(|i| (0..l.channels()).map(|c| *l.get(i, c)).collect()).collect();
    write_json(path, &LightingFile { coefficients })
}

pub fn read_lighting(path: &Path) -> Result<LightingSet> {
    let f: LightingFile = read_json(path)?;
    let images = f.coefficients.len();
    let channels = f.coefficients.first().map_or(0, Vec::len);
    if f.coefficients.iter().any(|row| row.len() != channels) {
        return Err(Error::Format { format: "lighting JSON", reason: "ragged channel lists".into() });
    }
    LightingSet::new(images, channels, f.coefficients.into_iter().flatten().collect())
}

/// Loads a multi-image observation set sharing one mask.
pub fn load_scene(
    image_paths: &[PathBuf],
    mask_path: &Path,
    intrinsics_path: &Path,
) -> Result<(ImageStack, PixelDomain, CameraIntrinsics)> {
    if image_paths.is_empty() {
        return Err(Error::InvalidParameter("no input images".into()));
    }
    let domain = load_mask(mask_path)?;
    let intrinsics = read_intrinsics(intrinsics_path)?;
    let mut channels = None;
    let mut values = Vec::new();
    for p in image_paths {
        let img = load_image(p)?;
        if img.width != domain.width() || img.height != domain.height() {
            return Err(Error::mismatch(format!(
                "{} is {}x{}, mask is {}x{}",
                p.display(),
                img.width,
                img.height,
                domain.width(),
                domain.height()
            )));
        }
        if *channels.get_or_insert(img.channels) != img.channels {
            return Err(Error::mismatch(format!("{} has {} channels", p.display(), img.channels)));
        }
        for plane in &img.planes {
            values.extend(domain.gather(plane));
        }
    }
    let stack = ImageStack::new(image_paths.len(), channels.unwrap_or(1), domain.len(), values)?;
    Ok((stack, domain, intrinsics))
}

/// Saves a masked scalar map as a one-channel PFM; pixels outside the mask
/// are NaN.
pub fn save_masked_pfm(path: &Path, domain: &PixelDomain, values: &[f64]) -> Result<()> {
    let grid = domain.scatter(values, f64::NAN);
    write_pfm(path, &FloatImage::from_grid(domain.width(), domain.height(), &grid))
}

pub fn load_masked_pfm(path: &Path, domain: &PixelDomain) -> Result<Vec<f64>> {
    let img = read_pfm(path)?;
    if img.width != domain.width() || img.height != domain.height() {
        return Err(Error::mismatch(format!(
            "{} is {}x{}, mask is {}x{}",
            path.display(),
            img.width,
            img.height,
            domain.width(),
            domain.height()
        )));
    }
    Ok(domain.gather(&img.channel(0)))
}

pub fn load_perspective_depth(path: &Path, domain: &PixelDomain) -> Result<DepthMap> {
    DepthMap::perspective(load_masked_pfm(path, domain)?)
}

/// Saves unit normals as a three-channel PFM (zero outside the mask).
pub fn save_normals(path: &Path, domain: &PixelDomain, normals: &[Vector3<f64>]) -> Result<()> {
    let mut data = vec![0f32; domain.width() * domain.height() * 3];
    for (&(u, v), n) in domain.pixels().iter().zip(normals) {
        let p = (v * domain.width() + u) * 3;
        data[p..p + 3].copy_from_slice(&[n.x as f32, n.y as f32, n.z as f32]);
    }
    write_pfm(path, &FloatImage { width: domain.width(), height: domain.height(), channels: 3, data })
}

pub fn load_normals(path: &Path, domain: &PixelDomain) -> Result<Vec<Vector3<f64>>> {
    let img = read_pfm(path)?;
    if img.channels != 3 || img.width != domain.width() || img.height != domain.height() {
        return Err(Error::mismatch(format!("{} is not a {}x{} normal map", path.display(), domain.width(), domain.height())));
    }
    Ok(domain
        .pixels()
        .iter()
        .map(|&(u, v)| {
            let p = (v * domain.width() + u) * 3;
            Vector3::new(img.data[p] as f64, img.data[p + 1] as f64, img.data[p + 2] as f64)
        })
        .collect())
}

/// Triangulated surface: vertex `j` is pixel `j` back-projected at its depth;
/// each pixel quad contributes the triangles whose three corners are masked.
/// Triangles are wound counter-clockwise as seen from the camera.
pub fn write_obj(
    path: &Path,
    domain: &PixelDomain,
    intrinsics: &CameraIntrinsics,
    depth: &[f64],
    albedo: Option<&AlbedoMaps>,
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let color = |j: usize| -> Option<[f64; 3]> {
        let a = albedo?;
        let g = |c: usize| a.get(c.min(a.channels() - 1), j).clamp(0.0, 1.0);
        Some([g(0), g(1), g(2)])
    };
    let mut write = || -> std::io::Result<()> {
        for (j, &(u, v)) in domain.pixels().iter().enumerate() {
            let [x, y, z] = intrinsics.backproject(u as f64, v as f64, depth[j]);
            match color(j) {
                Some([r, g, b]) => writeln!(w, "v {x} {y} {z} {r} {g} {b}")?,
                None => writeln!(w, "v {x} {y} {z}")?,
            }
        }
        for tri in mesh_faces(domain) {
            writeln!(w, "f {} {} {}", tri[0] + 1, tri[1] + 1, tri[2] + 1)?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Zero-based vertex triples of the pixel-grid triangulation.
pub fn mesh_faces(domain: &PixelDomain) -> Vec<[usize; 3]> {
    let mut faces = Vec::new();
    for &(u, v) in domain.pixels() {
        let (u, v) = (u as isize, v as isize);
        let p00 = domain.index(u, v);
        let p10 = domain.index(u + 1, v);
        let p01 = domain.index(u, v + 1);
        let p11 = domain.index(u + 1, v + 1);
        // with y pointing down, (p00, p01, p10) is counter-clockwise on screen
        if let (Some(a), Some(b), Some(c)) = (p00, p01, p10) {
            faces.push([a, b, c]);
        }
        if let (Some(a), Some(b), Some(c)) = (p10, p01, p11) {
            faces.push([a, b, c]);
        }
    }
    faces
}

/// Where [`save_outputs`] put each artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputPaths {
    pub depth: PathBuf,
    pub albedo: Vec<PathBuf>,
    pub albedo_png: PathBuf,
    pub lighting: PathBuf,
    pub mesh: PathBuf,
}

/// Writes depth (PFM), per-channel albedo (PFM plus a PNG preview), lighting
/// (JSON) and the textured mesh (OBJ) into `out_dir`.
pub fn save_outputs(
    out_dir: &Path,
    depth: &DepthMap,
    albedo: &AlbedoMaps,
    lighting: &LightingSet,
    domain: &PixelDomain,
    intrinsics: &CameraIntrinsics,
) -> Result<OutputPaths> {
    if depth.len() != domain.len() || albedo.pixels() != domain.len() {
        return Err(Error::mismatch("depth/albedo do not match the pixel domain"));
    }
    if depth.projection() == Projection::Perspective {
        DepthMap::perspective(depth.values().to_vec())?;
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let paths = OutputPaths {
        depth: out_dir.join("depth.pfm"),
        albedo: (0..albedo.channels()).map(|c| out_dir.join(format!("albedo_{c}.pfm"))).collect(),
        albedo_png: out_dir.join("albedo.png"),
        lighting: out_dir.join("lighting.json"),
        mesh: out_dir.join("mesh.obj"),
    };
    save_masked_pfm(&paths.depth, domain, depth.values())?;
    for (c, p) in paths.albedo.iter().enumerate() {
        save_masked_pfm(p, domain, albedo.channel(c))?;
    }
    // preview normalized to max 1: albedo is only defined up to a global scale
    let peak = albedo.values().iter().cloned().fold(0.0, f64::max);
    let s = if peak > 0.0 { 1.0 / peak } else { 1.0 };
    let planes: Vec<Vec<f64>> = match albedo.channels() {
        3 => (0..3).map(|c| domain.scatter(&albedo.scaled(s).channel(c).to_vec(), 0.0)).collect(),
        _ => vec![domain.scatter(albedo.scaled(s).channel(0), 0.0)],
    };
    write_png16(&paths.albedo_png, domain.width(), domain.height(), &planes)?;
    write_lighting(&paths.lighting, lighting)?;
    write_obj(&paths.mesh, domain, intrinsics, depth.values(), Some(albedo))?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let img = FloatImage { width: 3, height: 2, channels: 3, data: (0..18).map(|x| x as f32 * 0.37 - 2.0).collect() };
        let p = dir.path().join("a.pfm");
        write_pfm(&p, &img).unwrap();
        assert_eq!(read_pfm(&p).unwrap(), img);
    }

    #[test]
    fn sixteen_bit_white_is_one() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.png");
        let buf: Vec<u16> = vec![65535, 0, 32768, 65535];
        ImageBuffer::<Luma<u16>, _>::from_raw(2, 2, buf).unwrap().save(&p).unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.channels, 1);
        assert_eq!(img.planes[0][0], 1.0);
        assert_eq!(img.planes[0][1], 0.0);
    }

    #[test]
    fn all_false_mask_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        ImageBuffer::<Luma<u8>, _>::from_raw(4, 4, vec![0u8; 16]).unwrap().save(&p).unwrap();
        assert!(matches!(load_mask(&p), Err(Error::EmptyMask)));
    }

    #[test]
    fn mesh_faces_only_on_masked_triples() {
        // 2x2 block plus one isolated pixel
        let mask = vec![true, true, false, true, true, false, false, false, true];
        let d = PixelDomain::from_mask(3, 3, mask).unwrap();
        let faces = mesh_faces(&d);
        assert_eq!(faces.len(), 2);
        assert!(faces.iter().flatten().all(|&j| j < 4));
        // L-shaped triple gives one triangle
        let d = PixelDomain::from_mask(2, 2, vec![true, true, true, false]).unwrap();
        assert_eq!(mesh_faces(&d), vec![[0, 2, 1]]);
    }

    #[test]
    fn save_outputs_writes_everything() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let d = PixelDomain::full(2, 2).unwrap();
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let depth = DepthMap::perspective(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let alb = AlbedoMaps::constant(3, 4, 0.5);
        let l = LightingSet::uniform(2, 3, [0.2, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let paths = save_outputs(&out, &depth, &alb, &l, &d, &k).unwrap();
        assert_eq!(load_masked_pfm(&paths.depth, &d).unwrap(), depth.values());
        assert_eq!(read_lighting(&paths.lighting).unwrap(), l);
        let obj = fs::read_to_string(&paths.mesh).unwrap();
        assert!(obj.starts_with("v 0 0 1 0.5 0.5 0.5\n"));
        assert_eq!(obj.lines().filter(|l| l.starts_with("v ")).count(), 4);
        assert_eq!(obj.lines().filter(|l| l.starts_with("f ")).count(), 2);
    }

    #[test]
    fn nonpositive_perspective_depth_never_reaches_the_writer() {
        assert!(matches!(DepthMap::perspective(vec![1.0, 0.0]), Err(Error::NonPositiveDepth { index: 1, .. })));
    }
}
