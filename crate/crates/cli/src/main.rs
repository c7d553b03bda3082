mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::Overrides;

#[derive(Parser, Debug)]
#[command(
    name = "viewrefer",
    version,
    about = "Multi-view 3D grounding on a synthetic benchmark: data, text expansion, training and diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a train/test dataset into a directory.
    Gen(GenArgs),
    /// Expand every utterance of a dataset into M texts.
    Expand(ExpandArgs),
    /// Train one model and write history, checkpoints and plots.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Train the ablation rows over several seeds.
    Ablate(AblateArgs),
    /// Report how the canonical view's score evolves through the fusion blocks.
    Trend(TrendArgs),
    /// Dump texts, per-block view scores and the prediction for one sample.
    Inspect(InspectArgs),
    /// Render SVG plots from the CSV files of a run directory.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Training samples.
    #[arg(long)]
    pub n: Option<usize>,
    /// Test samples.
    #[arg(long)]
    pub test_n: Option<usize>,
    /// Dataset seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Backend {
    /// Offline dictionary rewriting and template paraphrases.
    Fallback,
    /// JSON-over-HTTP text generation service.
    Http,
}

#[derive(Args, Debug)]
pub struct ExpandArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Backend::Fallback)]
    pub backend: Backend,
    #[arg(long, env = "VIEWREFER_LLM_URL")]
    pub endpoint: Option<String>,
    /// Bearer token for the HTTP backend.
    #[arg(long, env = "VIEWREFER_LLM_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Skip per-epoch test evaluation.
    #[arg(long)]
    pub no_eval: bool,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    /// Write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Seeds 0..n.
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated row subset; all rows by default.
    #[arg(long, value_delimiter = ',')]
    pub rows: Option<Vec<usize>>,
    /// Parallel training runs; defaults to the number of cores.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args, Debug)]
pub struct TrendArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    /// Output directory; the checkpoint directory by default.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Sample index within the split.
    #[arg(long)]
    pub sample: usize,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[arg(long)]
    pub run: PathBuf,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Gen(a) => commands::gen(&a),
        Command::Expand(a) => commands::expand(&a),
        Command::Train(a) => commands::train_cmd(&a),
        Command::Eval(a) => commands::eval_cmd(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::Trend(a) => commands::trend(&a),
        Command::Inspect(a) => commands::inspect_cmd(&a),
        Command::Plot(a) => {
            for path in commands::emit_plots(&a.run)? {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // clap exits 2 on usage errors and 0 for --help/--version
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let usage = matches!(
                err.downcast_ref::<viewrefer::Error>(),
                Some(viewrefer::Error::Usage(_))
            );
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
