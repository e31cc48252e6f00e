//! `seann`: train deep submodular functions on attribution heatmaps and
//! re-attribute features by their marginal gains.
//!
//! Exit codes: 0 on success, 1 on invalid arguments or inputs, 2 on IO or
//! file-format errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "seann", version, about = "Submodular ensembling of attribution maps")]
pub struct Cli {
    /// Seed for every random choice (overrides seeds in --config).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Suppress progress lines on standard error.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a DSF on heatmap files and write it as SEADF1.
    TrainDsf(TrainDsfArgs),
    /// Attribute every feature of a trained DSF by marginal gain.
    Attribute(AttributeArgs),
    /// Baselines, DSF training and attribution for one image.
    Pipeline(PipelineArgs),
    /// One baseline attribution map (or their mean) for one image.
    Baseline(BaselineArgs),
    /// Evaluation drivers emitting image_id,method,metric,value CSV.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Print the greedy top-k feature set of a DSF.
    Topk(TopkArgs),
    /// Render a heatmap as PGM, or as a PPM overlay.
    Render(RenderArgs),
    /// Write a synthetic dataset directory.
    MakeDataset(MakeDatasetArgs),
    /// Train an MLP classifier and write it as SEACL1.
    TrainClassifier(TrainClassifierArgs),
}

#[derive(Args, Debug)]
pub struct TrainDsfArgs {
    /// Heatmap files (SEAHM1 or CSV), all of the same size.
    #[arg(long, num_args = 1.., required = true)]
    pub heatmaps: Vec<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch report CSV; defaults to `<out>.report.csv`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AttributeArgs {
    #[arg(long)]
    pub dsf: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Map height; defaults to a square map, else a single row.
    #[arg(long)]
    pub height: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    #[arg(long)]
    pub classifier: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Comma-separated baseline methods; defaults to the config's list.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    #[arg(long)]
    pub classifier: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// vg, ig, sg, ixg, or aggmean (mean of the config's methods).
    #[arg(long)]
    pub method: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum EvalCommand {
    /// Area under the perturbation curve.
    Aupc(AupcArgs),
    /// Jaccard overlap of two maps' top-k sets.
    Jaccard(JaccardArgs),
    /// Top-set IoU of a method's map before and after input noise.
    Robustness(RobustnessArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Patch,
    Topk,
}

#[derive(Args, Debug)]
pub struct OutputArgs {
    /// Write CSV here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "0")]
    pub image_id: String,
    /// Method name recorded in the CSV.
    #[arg(long, default_value = "unknown")]
    pub method_name: String,
}

#[derive(Args, Debug)]
pub struct AupcArgs {
    #[arg(long)]
    pub classifier: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub attribution: PathBuf,
    #[arg(long, value_enum, default_value = "patch")]
    pub mode: ModeArg,
    /// Patch side (patch mode); defaults to side · 8 / 28.
    #[arg(long)]
    pub size: Option<usize>,
    /// Pixels per step (topk mode); defaults to n / 28.
    #[arg(long)]
    pub per_step: Option<usize>,
    #[arg(long, default_value_t = 8)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.0)]
    pub perturb_value: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct JaccardArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct RobustnessArgs {
    #[arg(long)]
    pub classifier: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// sea, vg, ig, sg, ixg or aggmean.
    #[arg(long)]
    pub method: String,
    #[arg(long, default_value_t = 0.02)]
    pub noise_amp: f64,
    /// Top-set size; defaults to 5000 pixels per 224² rescaled to the image.
    #[arg(long)]
    pub top: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct TopkArgs {
    #[arg(long)]
    pub dsf: PathBuf,
    #[arg(long)]
    pub k: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PaletteArg {
    Gray,
    Red,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Base image for a PPM overlay.
    #[arg(long)]
    pub overlay: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "gray")]
    pub palette: PaletteArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SyntheticKind {
    Planted,
}

#[derive(Args, Debug)]
pub struct MakeDatasetArgs {
    #[arg(long, value_enum)]
    pub synthetic: SyntheticKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub n_images: usize,
    #[arg(long, default_value_t = 16)]
    pub side: usize,
    #[arg(long, default_value_t = 3)]
    pub patch_side: usize,
    #[arg(long, default_value_t = 0.6)]
    pub intensity: f64,
    #[arg(long, default_value_t = 0.4)]
    pub background: f64,
}

#[derive(Args, Debug)]
pub struct TrainClassifierArgs {
    /// Dataset directory written by make-dataset.
    #[arg(long, conflicts_with_all = ["idx_images", "idx_labels"], required_unless_present = "idx_images")]
    pub dataset: Option<PathBuf>,
    #[arg(long, requires = "idx_labels")]
    pub idx_images: Option<PathBuf>,
    #[arg(long, requires = "idx_images")]
    pub idx_labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "32")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value = "tanh")]
    pub activation: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let mut logger = env_logger::Builder::new();
    if cli.quiet {
        logger.filter_level(log::LevelFilter::Warn);
    } else {
        logger.filter_level(log::LevelFilter::Info).parse_default_env();
    }
    logger.format_timestamp(None).init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io_or_format() { 2 } else { 1 })
        }
    }
}
