//! The `silcarve` command line: argument parsing, config resolution, run
//! manifests and the pipeline subcommands.

pub mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use silcarve::{Error, ErrorClass};

use crate::config::{LogLevel, Metric, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "silcarve", version, about = "Category shape models from silhouettes, keypoints and cameras")]
pub struct Cli {
    /// JSON run config (or a previous run manifest); flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; falls back to SILCARVE_THREADS. Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub log: Option<LogArg>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum LogArg {
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

impl From<LogArg> for LogLevel {
    fn from(l: LogArg) -> Self {
        match l {
            LogArg::Error => LogLevel::Error,
            LogArg::Warn => LogLevel::Warn,
            LogArg::Info => LogLevel::Info,
            LogArg::Debug => LogLevel::Debug,
            LogArg::Trace => LogLevel::Trace,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from a scene spec.
    Synth(SynthArgs),
    /// Fit cameras and a deformable keypoint model.
    Nrsfm(NrsfmArgs),
    /// Learn visual-hull prototypes, one per cluster of instances.
    LearnProto(LearnProtoArgs),
    /// Dense volume for one silhouette from the prototypes.
    InferProto(InferProtoArgs),
    /// Learn a mean point cloud and deformation bases.
    LearnBasis(LearnBasisArgs),
    /// Fit a basis model to one silhouette.
    Fit(FitArgs),
    /// Extract an isosurface from a volume.
    Mesh(MeshArgs),
    /// Compare predicted shapes with ground truth.
    Eval(EvalArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Nrsfm(_) => "nrsfm",
            Command::LearnProto(_) => "learn-proto",
            Command::InferProto(_) => "infer-proto",
            Command::LearnBasis(_) => "learn-basis",
            Command::Fit(_) => "fit",
            Command::Mesh(_) => "mesh",
            Command::Eval(_) => "eval",
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NrsfmArgs {
    /// Dataset directory.
    #[arg(long)]
    pub input: PathBuf,
    /// Number of deformation bases.
    #[arg(long)]
    pub bases: Option<usize>,
    #[arg(long)]
    pub mask_penalty: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Do not add mirrored copies of the instances.
    #[arg(long)]
    pub no_mirror: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LearnProtoArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Keypoint model from `nrsfm`.
    #[arg(long)]
    pub model: PathBuf,
    /// Number of visual clusters.
    #[arg(short = 'K', long = "clusters")]
    pub k: Option<usize>,
    /// Lower truncation in voxels.
    #[arg(long)]
    pub neg_trunc: Option<f64>,
    /// View grouping threshold in degrees.
    #[arg(long)]
    pub view_thresh: Option<f64>,
    #[arg(long)]
    pub grid_size: Option<usize>,
    /// Model directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferProtoArgs {
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    /// JSON array of deformation coefficients.
    #[arg(long)]
    pub alpha: PathBuf,
    /// Prototype model directory.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LearnBasisArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Number of deformation bases.
    #[arg(short = 'K', long = "bases")]
    pub k: Option<usize>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// Keypoint model whose 3D keypoints enter the keypoint energy.
    #[arg(long)]
    pub nrsfm: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Export {
    Points,
    Mesh,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the fitted shape as OBJ.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mesh")]
    pub export: Export,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub fixed_scale: bool,
    #[arg(long)]
    pub fixed_rotation: bool,
    #[arg(long)]
    pub fixed_translation: bool,
}

#[derive(Debug, Args)]
pub struct MeshArgs {
    /// Volume file (`.bin` with its `.json` header).
    pub volume: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub iso: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted OBJ, or a directory of `<id>.obj` files.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth OBJ, or a dataset directory when `--pred` is a directory.
    #[arg(long)]
    pub gt: PathBuf,
    /// Camera JSON; required for a single OBJ pair.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    /// Mask giving the image size for a single OBJ pair.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub metrics: Option<Vec<Metric>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Usage => EXIT_USAGE,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Numerical => EXIT_NUMERICAL,
    }
}

/// Arguments recorded in the manifest: everything but `--config` and
/// `--threads`.
fn recorded_args(raw: &[OsString]) -> Vec<String> {
    let mut out = Vec::new();
    let mut it = raw.iter().skip(1).map(|a| a.to_string_lossy().into_owned());
    while let Some(a) = it.next() {
        if a == "--config" || a == "--threads" {
            it.next();
        } else if !(a.starts_with("--config=") || a.starts_with("--threads=")) {
            out.push(a);
        }
    }
    out
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, Error> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("SILCARVE_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config { path: "SILCARVE_THREADS".into(), message: format!("not a thread count: {v:?}") }),
        Err(_) => Ok(None),
    }
}

/// Parses `argv`, runs the command and returns the process exit code. All
/// diagnostics go to standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let raw: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&raw) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, recorded_args(&raw)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: Cli, args: Vec<String>) -> Result<(), Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    if let Some(l) = cli.log {
        cfg.log = l.into();
    }
    let _ = env_logger::Builder::new().filter_level(cfg.log.filter()).target(env_logger::Target::Stderr).try_init();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads(cli.threads)? {
        if n == 0 {
            return Err(Error::Config { path: "--threads".into(), message: "must be at least 1".into() });
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::invalid(e.to_string()))?;
    pool.install(|| commands::dispatch(cli.command, cfg, args))
}
