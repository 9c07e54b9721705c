//! `geomeld`: data generation, captioning, pretraining, evaluation and
//! self-checks over synthetic multimodal tiles.

mod commands;
mod error;
mod reference;
mod run_manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "geomeld", version = version_string(), about = "Multimodal geospatial pretraining at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

fn version_string() -> &'static str {
    concat!(env!("CARGO_PKG_VERSION"), " (", env!("GEOMELD_DESCRIBE"), ")")
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic aligned tiles, captions and a manifest index.
    GenData(GenDataArgs),
    /// Re-run the caption pipeline over a dataset and write audit records.
    Caption(CaptionArgs),
    /// Pretrain from a key=value configuration file.
    Pretrain(PretrainArgs),
    /// Evaluate a checkpoint: linear probe, retrieval and reconstruction.
    Eval(EvalArgs),
    /// Run the gradient, loss, mask and caption self-checks.
    Selfcheck(SelfcheckArgs),
    /// Print the flag and configuration-key reference page.
    Reference(ReferenceArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Number of tiles.
    #[arg(long, default_value_t = 512)]
    pub n: usize,
    /// Tile side in pixels.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Geomorphon search radius in pixels.
    #[arg(long, default_value_t = 8)]
    pub radius: usize,
    /// Generator seed; tile ids and contents follow from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; receives `tiles/`, `manifest.tsv` and the run manifest.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CaptionArgs {
    /// Dataset manifest (`manifest.tsv`).
    #[arg(long)]
    pub data: PathBuf,
    /// Candidates generated per tile.
    #[arg(long, default_value_t = 4)]
    pub candidates: usize,
    /// Output directory for `captions.tsv` and `caption_audit.txt`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    /// Zero every reconstruction weight.
    Mp,
    /// Zero the latent-prediction weight (alpha).
    Jepa,
    /// Zero the contrastive weight (beta).
    Itc,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    /// Configuration file of `key=value` lines.
    #[arg(long)]
    pub config: PathBuf,
    /// Drop one loss branch; repeat to drop several.
    #[arg(long, value_enum)]
    pub ablate: Vec<Ablation>,
    /// Overrides `train.seed` and `model.init_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Build and differentiate one step's graph, then exit without training.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint written by `pretrain`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset manifest; split into probe-train and held-out tiles.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for `report.txt`.
    #[arg(long)]
    pub out: PathBuf,
    /// Retrieval cutoff.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Seed of the train/held-out split and the probe optimizer.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of tiles used to fit the probe.
    #[arg(long, default_value_t = 0.75)]
    pub train_fraction: f64,
    /// Retrieval gallery size drawn from the held-out tiles.
    #[arg(long, default_value_t = 64)]
    pub gallery: usize,
    /// Linear-probe training epochs.
    #[arg(long, default_value_t = 100)]
    pub probe_epochs: usize,
    /// Linear-probe learning rate.
    #[arg(long, default_value_t = 0.1)]
    pub probe_lr: f64,
    /// Mask seeds averaged by the reconstruction report.
    #[arg(long, default_value_t = 2)]
    pub recon_seeds: u64,
}

#[derive(Args, Debug)]
pub struct SelfcheckArgs {
    #[arg(long, hide = true)]
    pub corrupt_loss: bool,
}

#[derive(Args, Debug)]
pub struct ReferenceArgs {
    /// Write the page here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(error::Status::Usage as u8) } else { ExitCode::SUCCESS };
        }
    };
    let result: Result<(), CliError> = match &cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Caption(a) => commands::caption(a),
        Command::Pretrain(a) => commands::pretrain(a),
        Command::Eval(a) => commands::eval(a),
        Command::Selfcheck(a) => commands::selfcheck(a),
        Command::Reference(a) => commands::reference(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.status as u8)
        }
    }
}
