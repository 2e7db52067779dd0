//! `grainlight`: scattering tables, method comparisons, particle clouds and
//! rendering from the command line.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "grainlight", version, about = "Light scattering by particles and rendering of grainy media")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scattering amplitudes log10|S1|, log10|S2| on a theta grid.
    Amplitudes(AmplitudesArgs),
    /// Cross sections C_t, C_s, C_a over a radius range.
    Xsec(XsecArgs),
    /// GOA against Mie: RelMSE and runtime ratio per radius.
    Compare(CompareArgs),
    /// Generate a particle cloud.
    Gen(GenArgs),
    /// Radius histogram of the particles in a region.
    Psd(PsdArgs),
    /// Render a scene to PFM and PNG.
    Render(RenderArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Mie,
    Goa,
    Hybrid,
}

/// Particle and host optics shared by the single-particle commands.
#[derive(Debug, Args)]
pub struct OpticsArgs {
    /// Vacuum wavelength (µm).
    #[arg(long, default_value_t = 0.6)]
    pub wavelength: f64,
    /// Real part of the particle index relative to the host.
    #[arg(long, default_value_t = 1.33)]
    pub eta: f64,
    /// Imaginary part of the relative index.
    #[arg(long, default_value_t = 0.0)]
    pub eta_im: f64,
    /// Real refractive index of the host.
    #[arg(long, default_value_t = 1.0)]
    pub eta_medium: f64,
}

#[derive(Debug, Args)]
pub struct AmplitudesArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Hybrid)]
    pub method: MethodArg,
    /// Particle radius (µm).
    #[arg(long)]
    pub radius: f64,
    #[command(flatten)]
    pub optics: OpticsArgs,
    /// Theta step (degrees).
    #[arg(long, default_value_t = 0.1)]
    pub theta_step: f64,
    /// Highest GOA ray order.
    #[arg(long, default_value_t = 3)]
    pub p_max: usize,
    /// Radius (µm) at which the hybrid method switches from Mie to GOA.
    #[arg(long, default_value_t = 2.0)]
    pub r_switch: f64,
    /// Output CSV (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Spacing {
    Log,
    Linear,
}

#[derive(Debug, Args)]
pub struct XsecArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Hybrid)]
    pub method: MethodArg,
    /// Smallest radius (µm).
    #[arg(long)]
    pub r_min: f64,
    /// Largest radius (µm).
    #[arg(long)]
    pub r_max: f64,
    /// Number of radii.
    #[arg(long, default_value_t = 500)]
    pub count: usize,
    #[arg(long, value_enum, default_value_t = Spacing::Log)]
    pub spacing: Spacing,
    #[command(flatten)]
    pub optics: OpticsArgs,
    /// Odd ray orders summed in the GOA extinction, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub p_set: Vec<usize>,
    #[arg(long, default_value_t = 2.0)]
    pub r_switch: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Radii (µm), comma separated; overrides the range flags.
    #[arg(long, value_delimiter = ',')]
    pub radii: Vec<f64>,
    #[arg(long, default_value_t = 2.0)]
    pub r_min: f64,
    #[arg(long, default_value_t = 100.0)]
    pub r_max: f64,
    /// Log-spaced radii between r_min and r_max.
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[command(flatten)]
    pub optics: OpticsArgs,
    #[arg(long, default_value_t = 0.1)]
    pub theta_step: f64,
    /// Half width (degrees) of the band dropped around each caustic.
    #[arg(long, default_value_t = 0.5)]
    pub exclusion: f64,
    #[arg(long, default_value_t = 3)]
    pub p_max: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PsdArg {
    Lognormal,
    Bimodal,
    Uniform,
    Mono,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub psd: PsdArg,
    /// Particle count (first mode for bimodal).
    #[arg(long)]
    pub n: u64,
    /// Geometric mean radius (µm).
    #[arg(long)]
    pub rg: Option<f64>,
    /// Geometric standard deviation.
    #[arg(long)]
    pub sg: Option<f64>,
    /// Second mode of a bimodal distribution.
    #[arg(long)]
    pub rg2: Option<f64>,
    #[arg(long)]
    pub sg2: Option<f64>,
    #[arg(long)]
    pub n2: Option<u64>,
    /// Radius of a monodisperse cloud (µm).
    #[arg(long)]
    pub r: Option<f64>,
    /// Uniform distribution range (µm).
    #[arg(long)]
    pub r_min: Option<f64>,
    #[arg(long)]
    pub r_max: Option<f64>,
    /// Clip range (µm) applied to every draw.
    #[arg(long)]
    pub clip_min: Option<f64>,
    #[arg(long)]
    pub clip_max: Option<f64>,
    /// Box min and max corners in meters: x0,y0,z0,x1,y1,z1.
    #[arg(long, value_delimiter = ',', default_value = "0,0,0,1,1,1")]
    pub bounds: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; a .csv extension writes the text form.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PsdArgs {
    /// Particle file (binary or .csv).
    #[arg(long)]
    pub particles: PathBuf,
    /// Region x0,y0,z0,x1,y1,z1 in meters; the cloud bounds when absent.
    #[arg(long, value_delimiter = ',')]
    pub region: Option<Vec<f64>>,
    #[arg(long, default_value_t = 32)]
    pub bins: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RenderMode {
    /// The scene's medium as described.
    Discrete,
    /// A discrete medium replaced by its bulk coefficients.
    Continuous,
    /// Both, plus the mean relative L1 difference.
    Compare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CaptureArg {
    CaptureArea,
    AxisArea,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Scene file (TOML).
    pub scene: PathBuf,
    /// Output prefix; writes <prefix>.pfm and <prefix>.png.
    #[arg(long, default_value = "render")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = RenderMode::Discrete)]
    pub mode: RenderMode,
    /// Footprint factor; repeat for a series of renders.
    #[arg(long)]
    pub k: Vec<f64>,
    #[arg(long)]
    pub spp: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_bounces: Option<u32>,
    #[arg(long, value_enum)]
    pub capture: Option<CaptureArg>,
    /// Folder for cached phase tables.
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<grainlight::Error>() {
        Some(e) if e.is_domain() => 3,
        Some(grainlight::Error::InvalidInput(_)) => 2,
        _ => match err.downcast_ref::<commands::UsageError>() {
            Some(_) => 2,
            None => 1,
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(&cli, &commands::provenance(std::env::args_os().skip(1))) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
