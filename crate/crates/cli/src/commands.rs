use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::info;
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use ucps::balloon::{init_depth_balloon, init_depth_hemisphere};
use ucps::eval::{mean_angular_error, write_energy_csv, Report};
use ucps::geometry::SurfaceModel;
use ucps::io;
use ucps::scene::{CameraIntrinsics, DepthMap, PixelDomain};
use ucps::solver::solve;
use ucps::synthetic::{make_albedo, make_shape, make_synthetic_dataset, random_environment, random_sh_lighting, Lighting};

use crate::args::{EvaluateArgs, InitArg, InitArgs, LightingArg, ReconstructArgs, RenderArgs};

pub fn render(a: &RenderArgs) -> Result<()> {
    if a.images == 0 {
        bail!("--images must be at least 1");
    }
    let shape = make_shape(a.shape.into(), a.size)?;
    let (domain, k) = (&shape.domain, shape.intrinsics);
    let model = SurfaceModel::new(domain.clone(), k);
    let truth = model.normals(shape.depth.values());
    let albedo = make_albedo(a.albedo.into(), domain, a.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let lighting = match a.lighting {
        LightingArg::Sh => Lighting::Harmonic(random_sh_lighting(&mut rng, a.images, albedo.channels(), truth.normals())),
        LightingArg::Environment => Lighting::Environment {
            maps: (0..a.images)
                .map(|_| random_environment(&mut rng, 2 * a.env_resolution, a.env_resolution, albedo.channels()))
                .collect(),
            resolution: a.env_resolution,
        },
    };
    let data = make_synthetic_dataset(&model, &shape.depth, &albedo, &lighting)?;

    let images_dir = a.out.join("images");
    fs::create_dir_all(&images_dir).with_context(|| format!("creating {}", images_dir.display()))?;
    let width = a.size;
    for i in 0..a.images {
        let planes: Vec<Vec<f64>> = (0..data.images.channels()).map(|c| domain.scatter(data.images.slice(i, c), 0.0)).collect();
        io::write_png16(&images_dir.join(format!("img_{i:03}.png")), width, width, &planes)?;
    }
    io::write_mask(&a.out.join("mask.png"), domain)?;
    io::write_intrinsics(&a.out.join("intrinsics.json"), &k)?;
    io::save_masked_pfm(&a.out.join("gt_depth.pfm"), domain, shape.depth.values())?;
    io::save_normals(&a.out.join("gt_normals.pfm"), domain, truth.normals())?;
    let planes: Vec<Vec<f64>> = (0..albedo.channels()).map(|c| domain.scatter(albedo.channel(c), 0.0)).collect();
    io::write_png16(&a.out.join("gt_albedo.png"), width, width, &planes)?;
    if let Some(l) = &data.lighting {
        io::write_lighting(&a.out.join("gt_lighting.json"), l)?;
    }
    io::write_json(
        &a.out.join("dataset.json"),
        &json!({
            "shape": ucps::synthetic::Shape::from(a.shape),
            "albedo": ucps::synthetic::AlbedoPattern::from(a.albedo),
            "lighting": format!("{:?}", a.lighting).to_lowercase(),
            "size": a.size,
            "images": a.images,
            "seed": a.seed,
            "intensity_scale": data.scale,
        }),
    )?;
    info!("wrote {} images and ground truth to {}", a.images, a.out.display());
    Ok(())
}

fn load_camera(mask: &Path, intrinsics: &Path) -> Result<(PixelDomain, CameraIntrinsics)> {
    let domain = io::load_mask(mask)?;
    let k = io::read_intrinsics(intrinsics)?;
    Ok((domain, k))
}

fn initial_depth(
    init: InitArg,
    domain: &PixelDomain,
    k: &CameraIntrinsics,
    kappa: Option<f64>,
    radius_scale: f64,
    file: Option<&Path>,
) -> Result<DepthMap> {
    Ok(match init {
        InitArg::Balloon => {
            let kappa = kappa.context("balloon initialization needs --kappa")?;
            init_depth_balloon(domain, k, kappa)?.depth
        }
        InitArg::Hemisphere => init_depth_hemisphere(domain, k, radius_scale)?,
        InitArg::File => {
            let path = file.context("--init file needs --init-depth")?;
            io::load_perspective_depth(path, domain)?
        }
    })
}

pub fn init(a: &InitArgs) -> Result<()> {
    if a.init == InitArg::File {
        bail!("init computes a depth; `--init file` only applies to reconstruct");
    }
    let (domain, k) = load_camera(&a.mask, &a.intrinsics)?;
    let depth = initial_depth(a.init, &domain, &k, a.kappa, a.radius_scale, None)?;
    io::save_masked_pfm(&a.out, &domain, depth.values())?;
    println!("mean depth {:.6} over {} pixels", depth.mean(), depth.len());
    Ok(())
}

/// PNG files of a directory in name order.
fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no PNG images in {}", dir.display());
    }
    Ok(paths)
}

pub fn reconstruct(a: &ReconstructArgs) -> Result<()> {
    let paths = list_images(&a.images_dir)?;
    let (images, domain, k) = io::load_scene(&paths, &a.mask, &a.intrinsics)?;
    let model = SurfaceModel::new(domain.clone(), k);
    let init = a.init.unwrap_or(if a.init_depth.is_some() { InitArg::File } else { InitArg::Balloon });
    let depth = initial_depth(init, &domain, &k, a.kappa, a.radius_scale, a.init_depth.as_deref())?;
    let config = a.solver.config();
    info!("{} images, {} channels, {} pixels", images.images(), images.channels(), domain.len());

    let clock = Instant::now();
    let outcome = solve(&images, &model, &depth, config.clone())?;
    let seconds = clock.elapsed().as_secs_f64();
    let state = &outcome.state;

    io::save_outputs(&a.out, &state.depth, &state.albedo, &state.lighting, &domain, &k)?;
    let normals = model.normals(state.depth.values());
    io::save_normals(&a.out.join("normals.pfm"), &domain, normals.normals())?;
    write_energy_csv(&a.out.join("energy.csv"), &state.energy_history)?;
    let mut report = Report::new(state, &config, seconds);
    if let Some(gt) = &a.ground_truth {
        let truth = io::load_normals(gt, &domain)?;
        let before = mean_angular_error(model.normals(depth.values()).normals(), &truth)?;
        let after = mean_angular_error(normals.normals(), &truth)?;
        println!("mean angular error {before:.2}° → {after:.2}°");
        report = report.with_mae(before, after);
    }
    io::write_json(&a.out.join("report.json"), &report)?;
    println!(
        "{} iterations, energy {:.6e}, {}converged, {seconds:.1} s",
        state.iterations(),
        state.final_energy().unwrap_or(f64::NAN),
        if outcome.converged { "" } else { "not " }
    );
    Ok(())
}

/// Normals from a three-channel PFM, or derived from a one-channel depth.
fn normals_from(path: &Path, model: &SurfaceModel) -> Result<Vec<Vector3<f64>>> {
    let domain = model.domain();
    match io::read_pfm(path)?.channels {
        3 => Ok(io::load_normals(path, domain)?),
        _ => {
            let depth = io::load_perspective_depth(path, domain)?;
            Ok(model.normals(depth.values()).into_normals())
        }
    }
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let (domain, k) = load_camera(&a.mask, &a.intrinsics)?;
    let model = SurfaceModel::new(domain, k);
    let est = normals_from(&a.estimate, &model)?;
    let gt = normals_from(&a.ground_truth, &model)?;
    let mae = mean_angular_error(&est, &gt)?;
    println!("MAE: {mae:.2}°");
    io::write_json(
        &a.report,
        &json!({
            "mae_degrees": mae,
            "pixels": model.len(),
            "estimate": a.estimate,
            "ground_truth": a.ground_truth,
        }),
    )?;
    Ok(())
}
