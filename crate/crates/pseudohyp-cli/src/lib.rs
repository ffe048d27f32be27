//! Command-line front end: argument grammar, config merging, dispatch.
//!
//! Every subcommand follows the same shape: defaults are overlaid by the
//! `--config` JSON file, which is overlaid by explicit flags; the merged
//! config is hashed (sha256) and echoed into `manifest.json`, and every file
//! the run writes references that digest (`# manifest=` comment in CSV, a
//! `config_digest` field in JSON, a text chunk in PNG/PPM).

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod manifest;
pub mod verify;

pub use config::ConfigBag;
pub use manifest::RunManifest;

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation: exit 2.
    Usage(String),
    /// The computation itself failed: exit 1.
    Computation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Computation(_) => 1,
        }
    }

    pub fn usage(msg: impl Into<String>) -> CliError {
        CliError::Usage(msg.into())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Computation(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<pseudohyp::Error> for CliError {
    fn from(e: pseudohyp::Error) -> Self {
        use pseudohyp::Error as E;
        match &e {
            E::UnknownSystem(_)
            | E::UnknownParameter { .. }
            | E::NonFiniteParameter { .. }
            | E::InvalidArgument(_) => CliError::Usage(e.to_string()),
            _ => CliError::Computation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Computation(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Computation(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "pseudohyp",
    version,
    about = "Numerical pseudohyperbolicity verification for flows and maps",
    propagate_version = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Lyapunov spectrum and the necessary pseudohyperbolicity conditions
    Lyapunov(LyapunovArgs),
    /// Invariant tangent fields along an orbit sample
    Fields(FieldsArgs),
    /// (rho, phi) continuity clouds and their classification
    Continuity(ContinuityArgs),
    /// Full verification chain: spectrum, conditions, fields, both clouds
    Verify(VerifyArgs),
    /// Cross-section geometry: crossings, traces, containment, boundary
    Section(SectionArgs),
    /// Kneading symbols of one orbit, or a two-parameter kneading diagram
    Kneading(KneadingArgs),
    /// Two-parameter sweep driven by a JSON job file, resumable via journal
    Sweep(SweepArgs),
    /// Re-render a CSV output (kneading/sweep/cloud) or re-encode an image
    Render(RenderArgs),
}

/// Flags shared by the system-driven subcommands.
#[derive(Args, Clone, Debug, Default)]
pub struct CommonArgs {
    /// System name: lorenz3d, lorenz4d, henon2d, lozi, anosov_linear,
    /// anosov_perturbed, henon3d
    #[arg(long)]
    pub system: Option<String>,

    /// Override one system parameter, e.g. --param r=25 (repeatable)
    #[arg(long = "param", value_name = "NAME=VALUE")]
    pub param: Vec<String>,

    /// JSON config file; explicit flags take precedence over its entries
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Directory for result files and manifest.json
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,

    /// Cap the worker thread count (env: PSEUDOHYP_THREADS)
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,

    /// Initial state, comma-separated (default depends on the system)
    #[arg(
        long,
        value_name = "X1,...,XN",
        value_delimiter = ',',
        allow_hyphen_values = true
    )]
    pub x0: Option<Vec<f64>>,

    /// Relative integrator tolerance
    #[arg(long)]
    pub rtol: Option<f64>,

    /// Absolute integrator tolerance
    #[arg(long)]
    pub atol: Option<f64>,
}

#[derive(Args, Debug)]
pub struct LyapunovArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Transient discarded before accumulation (time units, or iterations
    /// for maps)
    #[arg(long)]
    pub transient: Option<f64>,

    /// Accumulation span (time units, or iterations for maps)
    #[arg(long)]
    pub span: Option<f64>,

    /// QR renormalization interval for flows
    #[arg(long)]
    pub renorm: Option<f64>,

    /// Contracting-split index k for the necessary conditions (default n-1)
    #[arg(long)]
    pub k: Option<u64>,
}

#[derive(Args, Debug)]
pub struct FieldsArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Transient before sampling starts (time units / iterations)
    #[arg(long)]
    pub transient: Option<f64>,

    /// Number of orbit samples kept
    #[arg(long)]
    pub samples: Option<u64>,

    /// Sampling interval for flows
    #[arg(long)]
    pub sample_dt: Option<f64>,

    /// Samples trimmed at the start before emitting field vectors
    #[arg(long)]
    pub m1: Option<u64>,

    /// Samples trimmed at the end before emitting field vectors
    #[arg(long)]
    pub m2: Option<u64>,

    /// RNG seed for the tangent seed vectors
    #[arg(long)]
    pub seed: Option<u64>,

    /// Build the oriented unstable field instead of the (ss, s-cu) pair
    #[arg(long)]
    pub eu: bool,

    /// Write the sampled trajectory to a binary cache file
    #[arg(long, value_name = "FILE")]
    pub cache: Option<PathBuf>,

    /// Load the trajectory from a binary cache file instead of integrating
    #[arg(long = "from-cache", value_name = "FILE")]
    pub from_cache: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ContinuityArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Transient before sampling starts (time units / iterations)
    #[arg(long)]
    pub transient: Option<f64>,

    /// Number of orbit samples kept
    #[arg(long)]
    pub samples: Option<u64>,

    /// Sampling interval for flows
    #[arg(long)]
    pub sample_dt: Option<f64>,

    /// Samples trimmed at the start
    #[arg(long)]
    pub m1: Option<u64>,

    /// Samples trimmed at the end
    #[arg(long)]
    pub m2: Option<u64>,

    /// RNG seed for tangent seeds and pair sampling
    #[arg(long)]
    pub seed: Option<u64>,

    /// Field to measure: ess, ncu, eu, or both (= ess + ncu)
    #[arg(long)]
    pub field: Option<String>,

    /// Maximum number of sample pairs per cloud
    #[arg(long)]
    pub pair_budget: Option<u64>,

    /// Number of log-spaced rho bins used by the classifier
    #[arg(long)]
    pub rho_bins: Option<u64>,

    /// Angle-gap threshold separating continuous from discontinuous
    #[arg(long)]
    pub phi_gap: Option<f64>,

    /// Near-zero distance limit (default: 1% of the cloud diameter)
    #[arg(long)]
    pub rho_limit: Option<f64>,

    /// Load the trajectory from a binary cache file instead of integrating
    #[arg(long = "from-cache", value_name = "FILE")]
    pub from_cache: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Transient before the field-sampling trajectory (time units / iters)
    #[arg(long)]
    pub transient: Option<f64>,

    /// Number of orbit samples for the tangent fields
    #[arg(long)]
    pub samples: Option<u64>,

    /// Sampling interval for flows
    #[arg(long)]
    pub sample_dt: Option<f64>,

    /// Transient before spectrum accumulation
    #[arg(long)]
    pub spectrum_transient: Option<f64>,

    /// Spectrum accumulation span
    #[arg(long)]
    pub spectrum_span: Option<f64>,

    /// QR renormalization interval for flows
    #[arg(long)]
    pub renorm: Option<f64>,

    /// Contracting-split index k (default n-1)
    #[arg(long)]
    pub k: Option<u64>,

    /// Samples trimmed at the start
    #[arg(long)]
    pub m1: Option<u64>,

    /// Samples trimmed at the end
    #[arg(long)]
    pub m2: Option<u64>,

    /// RNG seed for tangent seeds and pair sampling
    #[arg(long)]
    pub seed: Option<u64>,

    /// Maximum number of sample pairs per cloud
    #[arg(long)]
    pub pair_budget: Option<u64>,

    /// Number of log-spaced rho bins used by the classifier
    #[arg(long)]
    pub rho_bins: Option<u64>,

    /// Angle-gap threshold separating continuous from discontinuous
    #[arg(long)]
    pub phi_gap: Option<f64>,

    /// Near-zero distance limit (default: 1% of the cloud diameter)
    #[arg(long)]
    pub rho_limit: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SectionArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// crossings | trace | containment | boundary | separatrix
    #[arg(long, default_value = "crossings")]
    pub mode: String,

    /// Section name: lorenz4d_sigma | lorenz_plane (default per system)
    #[arg(long)]
    pub section: Option<String>,

    /// Counted crossings (crossings/trace) or the return index n
    /// (containment)
    #[arg(long)]
    pub count: Option<u64>,

    /// Leading crossings dropped from a trace
    #[arg(long)]
    pub discard: Option<u64>,

    /// Grid resolution nx,ny,nw (containment/boundary)
    #[arg(long, value_name = "NX,NY,NW", value_delimiter = ',')]
    pub grid: Option<Vec<u64>>,

    /// Crossing direction override: up | down | both
    #[arg(long)]
    pub direction: Option<String>,

    /// Time budget per return
    #[arg(long)]
    pub budget: Option<f64>,

    /// Transient before the scan starts (crossings/trace)
    #[arg(long)]
    pub transient: Option<f64>,

    /// Separatrix branch: plus | minus
    #[arg(long)]
    pub branch: Option<String>,

    /// Separatrix start offset along the unstable eigendirection
    #[arg(long)]
    pub offset: Option<f64>,

    /// Separatrix integration span
    #[arg(long)]
    pub span: Option<f64>,

    /// Separatrix sampling interval
    #[arg(long)]
    pub sample_dt: Option<f64>,
}

#[derive(Args, Debug)]
pub struct KneadingArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Number of kneading symbols per orbit
    #[arg(long)]
    pub q: Option<u64>,

    /// Separatrix start offset (used when --x0 is not given)
    #[arg(long)]
    pub offset: Option<f64>,

    /// Integration time budget per orbit
    #[arg(long)]
    pub budget: Option<f64>,

    /// Seed for the green color channel of diagram cells
    #[arg(long)]
    pub green_seed: Option<u64>,

    /// Diagram axis 1 as name:lo:hi:n — with --axis2 switches to diagram
    /// mode
    #[arg(long, value_name = "NAME:LO:HI:N")]
    pub axis1: Option<String>,

    /// Diagram axis 2 as name:lo:hi:n
    #[arg(long, value_name = "NAME:LO:HI:N")]
    pub axis2: Option<String>,

    /// Diagram image file name inside --out (.png or .ppm)
    #[arg(long, value_name = "FILE")]
    pub image: Option<String>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Sweep job description (JSON)
    #[arg(long, value_name = "FILE")]
    pub job: PathBuf,

    /// Directory for manifest.json (job output paths are used as given)
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,

    /// Cap the worker thread count (env: PSEUDOHYP_THREADS)
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Input file: a kneading/sweep/cloud CSV, or a PNG to re-encode
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,

    /// Output image path (.png or .ppm); default: input stem + .png
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,

    /// Input kind: auto | kneading | sweep | continuity | cloud | image
    #[arg(long, default_value = "auto")]
    pub kind: String,

    /// Seed for the green color channel of kneading cells
    #[arg(long)]
    pub green_seed: Option<u64>,

    /// Canvas width for cloud scatter plots
    #[arg(long)]
    pub width: Option<u64>,

    /// Canvas height for cloud scatter plots
    #[arg(long)]
    pub height: Option<u64>,

    /// Directory for manifest.json
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

/// Resolves the worker-thread cap (`--threads` wins over `PSEUDOHYP_THREADS`)
/// and installs the global pool. The first initialization in a process wins;
/// later calls with a different cap are ignored, matching rayon's global-pool
/// semantics.
pub fn init_threads(cap: Option<usize>) -> CliResult<()> {
    let env_cap = std::env::var("PSEUDOHYP_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok());
    if let Some(n) = cap.or(env_cap) {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Lyapunov(args) => commands::lyapunov::run(args),
        Command::Fields(args) => commands::fields::run(args),
        Command::Continuity(args) => commands::continuity::run(args),
        Command::Verify(args) => commands::verify::run(args),
        Command::Section(args) => commands::section::run(args),
        Command::Kneading(args) => commands::kneading::run(args),
        Command::Sweep(args) => commands::sweep::run(args),
        Command::Render(args) => commands::render::run(args),
    }
}
