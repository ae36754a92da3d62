mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "cylfit", version, about = "Extrusion-cylinder decomposition of oriented point clouds")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Base seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Format of the summary printed on stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    Polygon,
    Star,
    Rounded,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic sketch-extrude models with ground truth.
    Gen {
        #[arg(long, default_value_t = 1)]
        models: usize,
        /// Segments per model; drawn per model when omitted.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 8192)]
        points: usize,
        /// Half-width of uniform displacement along the normals.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, value_enum)]
        family: Option<Family>,
    },
    /// Fit cylinders to labelled clouds.
    Fit {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Labels JSON for a single unlabelled input.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Estimate normals by PCA when the file has none.
        #[arg(long)]
        estimate_normals: bool,
        #[arg(long, default_value_t = 16)]
        neighbours: usize,
        /// Skip segments with an ambiguous axis instead of failing.
        #[arg(long)]
        allow_degenerate: bool,
    },
    /// Hough-voting decomposition of unlabelled clouds.
    Decompose {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        /// Mean-shift bandwidth in radians.
        #[arg(long, default_value_t = 0.15)]
        bandwidth: f64,
        #[arg(long, default_value_t = 8)]
        tangent_samples: usize,
        #[arg(long, default_value_t = 2048)]
        directions: usize,
        /// Neighbour-vote and DBSCAN clean-up of the labels, then refit.
        #[arg(long)]
        refine: bool,
    },
    /// Score predictions against ground truth.
    Eval { pred: PathBuf, gt: PathBuf },
    /// Extract closed sketch profiles from cylinder files.
    Sketch {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 256)]
        resolution: usize,
    },
    /// Export cylinders as OBJ meshes.
    Recon {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Grid resolution for point sketches.
        #[arg(long, default_value_t = 256)]
        resolution: usize,
    },
    /// Axis error of closed-form recovery under Gaussian normal noise.
    NoiseSweep {
        /// Labelled cloud; the L-profile fixture when omitted.
        model: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,0.02,0.05,0.1,0.15,0.2")]
        sigmas: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Re-run the command recorded in a run manifest.
    Replay { manifest: PathBuf },
}

fn run(args: Vec<String>) -> Result<(), CliError> {
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            return Err(CliError::Usage(e.to_string()));
        }
    };
    if let Command::Replay { manifest } = &cli.command {
        let recorded = manifest::RunManifest::load(manifest)?;
        if recorded.argv.get(1).map(String::as_str) == Some("replay") {
            return Err(CliError::Usage("a replay manifest cannot be replayed".into()));
        }
        return run(recorded.argv);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} workers: {e}", cli.global.jobs)))?;
    pool.install(|| commands::dispatch(&cli, &args))
}

fn main() -> ExitCode {
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
