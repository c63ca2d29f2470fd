use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tangram_core::dataset::TaskMode;

#[derive(Debug, Parser)]
#[command(name = "tangram", version, about = "Continuous-pose Tangram benchmark")]
pub struct Cli {
    /// Log verbosity: repeat for more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a dataset: seeded synthetic scenes, or SVG files fitted to templates.
    Generate(GenerateArgs),
    /// Single-shot evaluation of a backend over a directory of scenes.
    Eval(EvalArgs),
    /// Evaluation with the reward-guided refinement loop.
    Refine(RefineArgs),
    /// Sweep loop, threshold, window and temperature settings.
    Ablate(AblateArgs),
    /// Find the oracle noise level that yields a target single-shot IoU.
    Calibrate(CalibrateArgs),
    /// Summarize metrics JSONL and ablation CSV files as tables.
    Report(ReportArgs),
    /// Print the canonical piece templates as JSON.
    DumpTemplates(DumpArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Single,
    TwoPiece,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Remote,
    Oracle,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Pos,
    Angle,
    Size,
    All,
    TwoPos,
    TwoAngle,
    TwoPosAngle,
}

impl From<ModeArg> for TaskMode {
    fn from(m: ModeArg) -> TaskMode {
        match m {
            ModeArg::Pos => TaskMode::Pos,
            ModeArg::Angle => TaskMode::Angle,
            ModeArg::Size => TaskMode::Size,
            ModeArg::All => TaskMode::All,
            ModeArg::TwoPos => TaskMode::TwoPos,
            ModeArg::TwoAngle => TaskMode::TwoAngle,
            ModeArg::TwoPosAngle => TaskMode::TwoPosAngle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
    Both,
}

impl Toggle {
    pub fn values(self) -> Vec<bool> {
        match self {
            Toggle::On => vec![true],
            Toggle::Off => vec![false],
            Toggle::Both => vec![true, false],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Settings 1-6: window, loop and temperature toggles.
    Settings,
    /// Settings 1 and 7-17: loop count and threshold.
    Loops,
    /// Cartesian product of the --k/--loops/--tau/--temperature lists.
    Grid,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output directory; annotations go to `gt/`, silhouettes to `images/`.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Number of synthetic scenes.
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    /// One-piece or two-piece scenes.
    #[arg(long, value_enum, default_value_t = SplitArg::Single)]
    pub split: SplitArg,
    /// Comma-separated piece kinds to draw from (default: all seven).
    #[arg(long, value_delimiter = ',')]
    pub pieces: Vec<String>,
    /// Generator seed; equal seeds give identical scenes.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Side length in pixels of the rendered silhouettes.
    #[arg(long, default_value_t = 512)]
    pub resolution: u32,
    /// Also write each scene as SVG under `svg/`.
    #[arg(long)]
    pub svg: bool,
    /// Import SVG files (or directories of them) instead of sampling scenes.
    #[arg(long, num_args = 1..)]
    pub import: Vec<PathBuf>,
    /// Directory of aligned outline annotations (`<stem>.json`); reports the
    /// union IoU of each imported scene against its outline.
    #[arg(long, requires = "import")]
    pub verify_outline: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct BackendArgs {
    /// Proposal source: a chat-completions endpoint, the noisy oracle, or a recorded trace.
    #[arg(long, value_enum, default_value_t = BackendKind::Oracle)]
    pub backend: BackendKind,
    /// Chat-completions URL for the remote backend.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Remote model name; also the label stored in metric records.
    #[arg(long)]
    pub model: Option<String>,
    /// Environment variable holding the remote API key.
    #[arg(long)]
    pub api_key_env: Option<String>,
    /// Trace JSONL: read by the replay backend, appended to by the remote one.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Directory for raw remote request/response logs.
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
    /// Oracle positional noise (canvas units).
    #[arg(long, default_value_t = 0.0)]
    pub sigma_pos: f64,
    /// Oracle angle noise (degrees).
    #[arg(long, default_value_t = 0.0)]
    pub sigma_angle: f64,
    /// Oracle relative size noise.
    #[arg(long, default_value_t = 0.0)]
    pub sigma_size: f64,
    /// Oracle per-iteration shrink of positional noise once a hint is given.
    #[arg(long, default_value_t = 0.7)]
    pub gamma: f64,
}

#[derive(Debug, Args, Clone)]
pub struct ScoringArgs {
    /// Requested mode; scenes with the other piece count use the matching
    /// one- or two-piece mode.
    #[arg(long, value_enum, default_value_t = ModeArg::Pos)]
    pub mode: ModeArg,
    /// Position penalty weight in the reward.
    #[arg(long = "lambda", default_value_t = 0.1)]
    pub lambda: f64,
    /// Dilation radius in pixels applied to both masks before IoU.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(0..=2))]
    pub dilation: u32,
    /// Raster side length in pixels for IoU and rendering.
    #[arg(long, default_value_t = 512)]
    pub resolution: u32,
    /// Seed for exemplar sampling and oracle noise.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Parallel scenes (default: CPU count, or the rate limit for remote).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Score raw angle differences instead of symmetry-aware ones.
    #[arg(long)]
    pub raw_angles: bool,
    /// Send exemplar answers without their images.
    #[arg(long)]
    pub text_only_exemplars: bool,
}

#[derive(Debug, Args)]
pub struct RunDirs {
    /// Directory of `<stem>.json` annotations.
    #[arg(long)]
    pub gt_dir: PathBuf,
    /// Directory of `<stem>.png` silhouettes (rendered from annotations when omitted).
    #[arg(long)]
    pub in_dir: Option<PathBuf>,
    /// Run output: per-scene predictions and PNGs, metrics, traces, manifest.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub dirs: RunDirs,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    /// Number of in-context exemplars.
    #[arg(long, default_value_t = 15)]
    pub k: usize,
    /// Sampling temperature sent to the remote backend.
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    /// Maximum proposals per scene.
    #[arg(long, default_value_t = 6)]
    pub loops: u32,
    /// Early-stop IoU threshold.
    #[arg(long, default_value_t = 0.9)]
    pub tau: f64,
    /// Skip the positional grid search after the loop.
    #[arg(long)]
    pub no_local_search: bool,
    /// Consecutive unparseable answers tolerated before stopping.
    #[arg(long, default_value_t = 3)]
    pub parse_failure_budget: u32,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Directory of `<stem>.json` annotations.
    #[arg(long)]
    pub gt_dir: PathBuf,
    /// Where `ablation.csv`, `ablation.json` and `ablation.txt` are written.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Which cells to run.
    #[arg(long, value_enum, default_value_t = Preset::Settings)]
    pub preset: Preset,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    /// Exemplar window sizes (grid preset).
    #[arg(long, value_delimiter = ',', default_value = "15")]
    pub k: Vec<usize>,
    /// Loop counts (grid preset).
    #[arg(long, value_delimiter = ',', default_value = "6")]
    pub loops: Vec<u32>,
    /// Thresholds (grid preset).
    #[arg(long, value_delimiter = ',', default_value = "0.9")]
    pub tau: Vec<f64>,
    /// Temperatures (grid preset).
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub temperature: Vec<f64>,
    /// Include cells with exemplars, without, or both (grid preset).
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    pub icl: Toggle,
    /// Include cells with the refinement loop, single-shot cells, or both (grid preset).
    #[arg(long = "loop", value_enum, default_value_t = Toggle::On)]
    pub refine: Toggle,
    /// Grid search after the loop: on, off, or both (grid preset).
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    pub local_search: Toggle,
    /// Runs per cell; replication r uses seed + r in every cell.
    #[arg(long, default_value_t = 1)]
    pub replications: usize,
    /// Calibrate the oracle to this single-shot mean IoU before sweeping.
    #[arg(long)]
    pub calibrate_to: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Directory of `<stem>.json` annotations.
    #[arg(long)]
    pub gt_dir: PathBuf,
    /// Optional directory for `calibration.json`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Single-shot mean IoU to reach.
    #[arg(long, default_value_t = 0.65)]
    pub target: f64,
    /// Accepted distance from the target.
    #[arg(long, default_value_t = 0.03)]
    pub tolerance: f64,
    /// Lower bound of the searched positional noise.
    #[arg(long, default_value_t = 0.0)]
    pub sigma_min: f64,
    /// Upper bound of the searched positional noise.
    #[arg(long, default_value_t = 5.0)]
    pub sigma_max: f64,
    /// Exemplars per single-shot query.
    #[arg(long, default_value_t = 0)]
    pub k: usize,
    #[command(flatten)]
    pub scoring: ScoringArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metrics JSONL files or run directories (searched for `metrics.jsonl`).
    pub inputs: Vec<PathBuf>,
    /// Ablation CSV files to render.
    #[arg(long)]
    pub ablation: Vec<PathBuf>,
    /// Also write `report.txt` and `report.csv` here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    /// Write `templates.json` here instead of printing.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}
