use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ucps::solver::SolverConfig;
use ucps::synthetic::{AlbedoPattern, Shape};

#[derive(Debug, Parser)]
#[command(name = "ucps", version, about = "Uncalibrated perspective photometric stereo under general lighting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset with ground truth.
    Render(RenderArgs),
    /// Compute an initial perspective depth for a mask.
    Init(InitArgs),
    /// Recover depth, albedo and lighting from a set of images.
    Reconstruct(ReconstructArgs),
    /// Mean angular error between two normal or depth maps.
    Evaluate(EvaluateArgs),
    /// Run the volume-ratio tuning service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShapeArg {
    GaussianBump,
    Hemisphere,
}

impl From<ShapeArg> for Shape {
    fn from(s: ShapeArg) -> Shape {
        match s {
            ShapeArg::GaussianBump => Shape::GaussianBump,
            ShapeArg::Hemisphere => Shape::Hemisphere,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlbedoArg {
    Constant,
    Bars,
    Checker,
    Voronoi,
}

impl From<AlbedoArg> for AlbedoPattern {
    fn from(a: AlbedoArg) -> AlbedoPattern {
        match a {
            AlbedoArg::Constant => AlbedoPattern::Constant,
            AlbedoArg::Bars => AlbedoPattern::Bars,
            AlbedoArg::Checker => AlbedoPattern::Checker,
            AlbedoArg::Voronoi => AlbedoPattern::Voronoi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LightingArg {
    /// Random first- plus second-order harmonic lighting.
    Sh,
    /// Random environment maps, integrated with attached shadows.
    Environment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Balloon,
    Hemisphere,
    File,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long, value_enum, default_value_t = ShapeArg::GaussianBump)]
    pub shape: ShapeArg,
    #[arg(long, value_enum, default_value_t = AlbedoArg::Voronoi)]
    pub albedo: AlbedoArg,
    #[arg(long, value_enum, default_value_t = LightingArg::Sh)]
    pub lighting: LightingArg,
    /// Image width and height in pixels.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    /// Number of images.
    #[arg(long, default_value_t = 20)]
    pub images: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Polar resolution of the environment-map quadrature.
    #[arg(long, default_value_t = 48)]
    pub env_resolution: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long)]
    pub mask: PathBuf,
    /// Camera intrinsics JSON (`f_u`, `f_v`, `u_0`, `v_0`).
    #[arg(long)]
    pub intrinsics: PathBuf,
    #[arg(long, value_enum, default_value_t = InitArg::Balloon)]
    pub init: InitArg,
    /// Volume ratio of the balloon; also the mean of the output depth.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Sphere radius relative to the one circumscribing the mask.
    #[arg(long, default_value_t = 1.0)]
    pub radius_scale: f64,
    /// Output depth (PFM).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = SolverConfig::default().mu)]
    pub mu: f64,
    #[arg(long, default_value_t = SolverConfig::default().lambda)]
    pub lambda: f64,
    #[arg(long, default_value_t = SolverConfig::default().gamma)]
    pub gamma: f64,
    #[arg(long, default_value_t = SolverConfig::default().warmup_iters)]
    pub warmup_iters: usize,
    #[arg(long, default_value_t = SolverConfig::default().max_outer_iters)]
    pub max_iters: usize,
    #[arg(long, default_value_t = SolverConfig::default().cg_tol)]
    pub cg_tol: f64,
}

impl SolverArgs {
    pub fn config(&self) -> SolverConfig {
        SolverConfig {
            mu: self.mu,
            lambda: self.lambda,
            gamma: self.gamma,
            warmup_iters: self.warmup_iters,
            max_outer_iters: self.max_iters,
            cg_tol: self.cg_tol,
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Directory of input PNG images, read in file-name order.
    pub images_dir: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub intrinsics: PathBuf,
    /// Initializer; `file` when `--init-depth` is given, else `balloon`.
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub init_depth: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub radius_scale: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Ground-truth normals (PFM) to put the angular error into the report.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Estimated normals (three-channel PFM) or depth (one-channel PFM).
    #[arg(long)]
    pub estimate: PathBuf,
    #[arg(long)]
    pub ground_truth: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub intrinsics: PathBuf,
    #[arg(long, default_value = "evaluation.json")]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub intrinsics: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Where an accepted volume ratio is written.
    #[arg(long, default_value = "kappa.json")]
    pub accept_file: PathBuf,
    /// Static front-end files served at `/`.
    #[arg(long)]
    pub assets: Option<PathBuf>,
}
