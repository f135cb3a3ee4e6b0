mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hst_core::ablation::AblationGrid;
use hst_core::ctc::DecodeMode;
use hst_core::search::Granularity;
use hst_core::HstError;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or input data. Exit code 2.
    Validation(String),
    /// Valid input that failed to process. Exit code 1.
    Runtime(String),
}

impl From<HstError> for CliError {
    fn from(e: HstError) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "hst", version, about = "Hierarchical sub-action tree tools for continuous sign language recognition")]
struct Cli {
    /// JSON pipeline config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every stochastic step (tree building, training, synthesis).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// More logging on stderr (-v info, -vv debug). RUST_LOG also works.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cluster a description corpus into a tree.
    BuildTree(BuildTreeArgs),
    /// Pick the best root-to-leaf chain for each frame (or the whole video).
    SearchPath(SearchPathArgs),
    /// Rescale per-frame gloss scores along a searched path.
    Refine(RefineArgs),
    /// Turn per-frame probabilities into a gloss sequence.
    Decode(DecodeArgs),
    /// CTC negative log-likelihood of a label sequence.
    CtcLoss(CtcLossArgs),
    /// Layer-wise contrastive loss between features and tree nodes.
    ContrastiveLoss(ContrastiveLossArgs),
    /// Word error rate of hypotheses against references.
    EvalWer(EvalWerArgs),
    /// Train the linear model on a data directory.
    Train(TrainArgs),
    /// Run a trained model over a feature file.
    Predict(PredictArgs),
    /// Finite-difference check of every analytic gradient.
    GradCheck(GradCheckArgs),
    /// Write a synthetic corpus with train/dev/eval videos.
    GenSynth(GenSynthArgs),
    /// Sweep updating scale, tree depth and decode input on synthetic data.
    Ablate(AblateArgs),
    /// Summarize and validate a tree file.
    InspectTree(InspectTreeArgs),
}

#[derive(Args, Debug)]
pub struct BuildTreeArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Level-1 cluster count (default: ceil(sqrt(statements))).
    #[arg(long)]
    pub n1: Option<usize>,
    #[arg(long)]
    pub depth: Option<u8>,
    /// `sqrt` or a fixed cluster count for level 2.
    #[arg(long)]
    pub branching: Option<String>,
}

#[derive(Args, Debug)]
pub struct SearchPathArgs {
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Feature matrix (TSV) already in the tree's embedding space.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub granularity: Option<Granularity>,
    #[arg(long)]
    pub radius: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RefineArgs {
    #[arg(long)]
    pub logits: PathBuf,
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Path report written by `search-path`.
    #[arg(long)]
    pub path: PathBuf,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Keep the raw products instead of renormalizing each row.
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[arg(long)]
    pub logits: PathBuf,
    #[arg(long)]
    pub mode: Option<DecodeMode>,
    #[arg(long)]
    pub beam_width: Option<usize>,
    /// Output label file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CtcLossArgs {
    #[arg(long)]
    pub logits: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Also write the gradient with respect to the pre-softmax logits.
    #[arg(long)]
    pub grad_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ContrastiveLossArgs {
    #[arg(long)]
    pub tree: Option<PathBuf>,
    #[arg(long)]
    pub features: PathBuf,
    /// Probabilities whose per-frame argmax gives the pseudo labels.
    #[arg(long)]
    pub logits: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalWerArgs {
    /// Reference sequences, one per line.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Hypothesis sequences, one per line.
    #[arg(long)]
    pub hyp: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Directory of `*.feat.tsv` / `*.labels.txt` pairs, or a synthetic
    /// benchmark directory (its `train` split is used).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda_c: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON report with the effective config and loss trace; stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub features: PathBuf,
    /// Per-frame class probabilities (TSV).
    #[arg(long)]
    pub logits_out: PathBuf,
    /// Projected features (TSV), the input for `search-path`.
    #[arg(long)]
    pub aligned_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    #[arg(long)]
    pub fixtures: Option<usize>,
    /// JSON report; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenSynthArgs {
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// JSON grid (`alphas`, `depths`, `inputs`).
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Text tables; stdout when absent.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InspectTreeArgs {
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Also check the tree against this corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

pub fn load_grid(path: &std::path::Path) -> Result<AblationGrid, CliError> {
    let text = std::fs::read_to_string(config::require(path)?)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => config::PipelineConfig::load(p)?,
        None => config::PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    match cli.command {
        Command::BuildTree(a) => commands::build_tree(a, cfg),
        Command::SearchPath(a) => commands::search_path(a, cfg),
        Command::Refine(a) => commands::refine(a, cfg),
        Command::Decode(a) => commands::decode(a, cfg),
        Command::CtcLoss(a) => commands::ctc_loss(a),
        Command::ContrastiveLoss(a) => commands::contrastive_loss(a, cfg),
        Command::EvalWer(a) => commands::eval_wer(a),
        Command::Train(a) => commands::train(a, cfg),
        Command::Predict(a) => commands::predict(a, cfg),
        Command::GradCheck(a) => commands::grad_check(a, cfg),
        Command::GenSynth(a) => commands::gen_synth(a, cfg),
        Command::Ablate(a) => commands::ablate(a, cfg),
        Command::InspectTree(a) => commands::inspect_tree(a, cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new()
        .filter_level(match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        })
        .parse_default_env()
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
