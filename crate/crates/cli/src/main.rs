use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(
    name = "trigger-rec",
    version,
    about = "Trigger-induced CTR models: data, training, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset with a known click process and split it 80/10/10.
    Generate(GenerateArgs),
    /// Attach triggers to raw display/click logs and split them by time.
    Mine(MineArgs),
    /// Train one variant and write a checkpoint plus per-epoch history.
    Train(TrainArgs),
    /// Score a split with a checkpoint.
    Eval(EvalArgs),
    /// Train a grid of variants over several seeds and report mean ± std AUC.
    Ablate(AblateArgs),
    /// Compare tape gradients with finite differences on a 4-sample batch.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Generator settings (TOML); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub impressions: Option<usize>,
}

#[derive(Args)]
pub struct MineArgs {
    /// Tab-separated `user, item, category, timestamp, clicked`, sorted by user and time.
    #[arg(long)]
    pub logs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Seconds before an impression in which a click counts as its trigger.
    #[arg(long, default_value_t = trigger_rec::data::DEFAULT_WINDOW_SECS)]
    pub window: i64,
    #[arg(long, default_value_t = 20)]
    pub max_behaviors: usize,
}

#[derive(Args, Clone)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub decay: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset directory holding train.tsv and val.tsv.
    #[arg(long)]
    pub data: PathBuf,
    /// Schema file; defaults to `<data>/schema.toml`.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "dihn")]
    pub variant: String,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Which split file of the dataset directory to score.
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated variant names.
    #[arg(
        long,
        default_value = "dihn_no_hsm,dihn_scalar,dihn_no_ssm_mean,dihn_no_ssm_target,dihn_no_ssm_trigger,dihn_no_ssm_concat,dihn"
    )]
    pub variants: String,
    #[arg(long, default_value_t = 10)]
    pub seeds: usize,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "dihn")]
    pub variant: String,
    /// Take the batch from `<data>/train.tsv` instead of a fresh synthetic one.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Mine(a) => commands::mine(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
