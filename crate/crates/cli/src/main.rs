//! `foldover` command-line front end.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use foldover::config::SCHEMA;
use foldover::PipelineConfig;
use sha2::{Digest, Sha256};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, bad config values, malformed inputs. Exit code 1.
    Invalid(String),
    /// Files that cannot be read or written. Exit code 2.
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "foldover", about = "Foldover features for tiny moving objects in microscopic video")]
pub struct Cli {
    /// Worker threads for per-frame and per-track stages (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,

    /// `key = value` config file; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(flatten)]
    pub overrides: ConfigFlags,

    #[command(subcommand)]
    pub command: Command,
}

/// One flag per config key.
#[derive(Args, Debug, Default)]
pub struct ConfigFlags {
    #[arg(long, global = true, value_name = "otsu|fixed:T")]
    threshold: Option<String>,
    #[arg(long, global = true, value_name = "bright-object|dark-object")]
    polarity: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    min_area: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    gate: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    miss_tolerance: Option<String>,
    /// Lock radius around each barycenter.
    #[arg(long = "r", global = true, allow_hyphen_values = true)]
    r: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    nu_x: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    nu_y: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    nu_z: Option<String>,
    /// Mean-filter kernel side.
    #[arg(long = "e", global = true, allow_hyphen_values = true)]
    e: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    passes: Option<String>,
    /// Descriptor side length.
    #[arg(long = "d", global = true, allow_hyphen_values = true)]
    d: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    um_per_px: Option<String>,
    #[arg(long, global = true, value_name = "auto|FPS")]
    fps: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    min_displacement: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    min_track_len: Option<String>,
}

impl ConfigFlags {
    fn pairs(&self) -> Vec<(&'static str, &str)> {
        let all = [
            ("threshold", &self.threshold),
            ("polarity", &self.polarity),
            ("min_area", &self.min_area),
            ("gate", &self.gate),
            ("miss_tolerance", &self.miss_tolerance),
            ("r", &self.r),
            ("nu_x", &self.nu_x),
            ("nu_y", &self.nu_y),
            ("nu_z", &self.nu_z),
            ("e", &self.e),
            ("passes", &self.passes),
            ("d", &self.d),
            ("um_per_px", &self.um_per_px),
            ("fps", &self.fps),
            ("min_displacement", &self.min_displacement),
            ("min_track_len", &self.min_track_len),
        ];
        all.into_iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
            .collect()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Single,
    Benchmark,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    X,
    Y,
    Z,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write seeded synthetic videos with ground truth and labels.
    Simulate {
        #[arg(long, value_enum, default_value_t = Preset::Benchmark)]
        preset: Preset,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Noise sigma override.
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Threshold every frame; write masks and detections.
    Segment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Link detections into tracks.
    Track {
        #[arg(long)]
        detections: PathBuf,
        /// Frame count, when trailing frames have no detections.
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accumulate, rotate and project foldovers.
    Foldover {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Kinematics and descriptors from tracks and foldover PGMs.
    Features {
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        foldovers: PathBuf,
        /// Adds a label column from a `track_id,label` file.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Nearest-centroid predictions for a test feature file.
    Classify {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Labels for the training rows, if the train file has none.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = AxisArg::Z)]
        axis: AxisArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Seeded 50/50 split, nearest centroid per axis, metrics table.
    Eval {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the reports as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// All stages from frames to features (and metrics when labels are known).
    Pipeline {
        /// Image directory, raw file, or directory of `.fold` files.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth tracks for scoring the tracker.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Ground-truth labels; recovered tracks inherit them.
        #[arg(long, requires = "gt")]
        gt_labels: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

pub fn schema_hash() -> String {
    let mut h = Sha256::new();
    for (k, t) in SCHEMA {
        h.update(k.as_bytes());
        h.update(b"=");
        h.update(t.as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text)
            .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    }
    for (k, v) in cli.overrides.pairs() {
        cfg.set(k, v).map_err(|e| CliError::Invalid(e.to_string()))?;
    }
    cfg.validate().map_err(|e| CliError::Invalid(e.to_string()))?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let version: &'static str = Box::leak(
        format!("{} (config schema sha256:{})", env!("CARGO_PKG_VERSION"), schema_hash()).into_boxed_str(),
    );
    let matches = match Cli::command().version(version).try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let result = load_config(&cli).and_then(|cfg| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build()
            .map_err(|e| CliError::Invalid(e.to_string()))?;
        pool.install(|| commands::run(&cli.command, &cfg))
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
