//! Reference page generated from the argument parser and the canonical
//! configuration.

use std::fmt::Write as _;

use clap::CommandFactory;
use geomeld_core::trainer::TrainConfig;

use crate::Cli;

/// Descriptions of configuration keys. Model keys share one line per group.
pub fn describe(key: &str) -> Option<&'static str> {
    let d = match key {
        "train.manifest" => "dataset manifest (required); relative paths resolve against the config file",
        "train.out_dir" => "output directory (required); relative paths resolve against the config file",
        "train.steps" => "optimizer steps",
        "train.batch_size" => "tiles per step",
        "train.lr" => "peak learning rate",
        "train.weight_decay" => "decoupled AdamW weight decay",
        "train.mask_ratio" => "fraction of patches hidden from the context encoder",
        "train.target_fraction" => "fraction of patches given to the target encoder",
        "train.ema" => "target-encoder EMA momentum",
        "train.seed" => "shuffling and mask seed",
        "train.warmup_steps" => "linear warmup steps (default 5% of train.steps)",
        "train.clip_norm" => "global gradient-norm clip; 0 disables",
        "train.norm_pix_loss" => "standardize each target patch before the reconstruction loss",
        "train.failure_budget" => "unreadable tiles tolerated before aborting",
        "train.checkpoint_each_epoch" => "rewrite last.gmck at every epoch boundary",
        "loss.alpha" => "weight of the latent-prediction loss",
        "loss.beta" => "weight of the contrastive loss",
        "loss.temperature" => "contrastive temperature",
        "model.init_seed" => "parameter initialization seed",
        "model.tile_height" | "model.tile_width" | "model.patch" => "tile geometry in pixels",
        k if k.starts_with("loss.lambda.") => "reconstruction weight of one modality",
        k if k.starts_with("model.text_") || k == "model.max_caption_len" => "caption encoder size",
        k if k.starts_with("model.pred_") => "latent predictor size",
        k if k.starts_with("model.dec_") => "reconstruction decoder size",
        "model.proj_hidden" | "model.shared_dim" => "projection heads into the shared embedding space",
        "model.dim" | "model.depth" | "model.heads" | "model.mlp_hidden" => "patch encoder size",
        _ => return None,
    };
    Some(d)
}

pub fn page() -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# geomeld reference\n");
    let _ = writeln!(s, "Generated by `geomeld reference`.\n");
    let _ = writeln!(s, "Exit codes: 0 success, 1 usage or configuration error, 2 data error, 3 numeric failure.\n");
    let _ = writeln!(s, "## Commands\n");
    let cmd = Cli::command();
    for sub in cmd.get_subcommands() {
        let _ = writeln!(s, "### `geomeld {}`\n", sub.get_name());
        if let Some(about) = sub.get_about() {
            let _ = writeln!(s, "{about}\n");
        }
        let args: Vec<_> = sub.get_arguments().filter(|a| !a.is_hide_set() && a.get_long().is_some()).collect();
        if args.is_empty() {
            continue;
        }
        let _ = writeln!(s, "| flag | default | description |");
        let _ = writeln!(s, "|---|---|---|");
        for a in args {
            let defaults: Vec<String> = a.get_default_values().iter().map(|v| v.to_string_lossy().into_owned()).collect();
            let default = if defaults.is_empty() {
                if a.is_required_set() { "required".to_string() } else { String::new() }
            } else {
                defaults.join(", ")
            };
            let values: Vec<String> = a.get_possible_values().iter().map(|v| v.get_name().to_string()).collect();
            let mut help = a.get_help().map(|h| h.to_string()).unwrap_or_default();
            if !values.is_empty() && !matches!(a.get_action(), clap::ArgAction::SetTrue) {
                let _ = write!(help, "; one of: {}", values.join(", "));
            }
            let _ = writeln!(s, "| `--{}` | {default} | {} |", a.get_long().unwrap_or_default(), help.trim());
        }
        let _ = writeln!(s);
    }
    let _ = writeln!(s, "## Configuration keys\n");
    let _ = writeln!(s, "`geomeld pretrain --config FILE` reads `key=value` lines. Blank lines and lines starting with `#` are ignored. Unknown keys are errors.\n");
    let _ = writeln!(s, "| key | default | description |");
    let _ = writeln!(s, "|---|---|---|");
    for line in TrainConfig::new("", "").to_text().lines() {
        let (key, value) = line.split_once('=').expect("canonical lines are key=value");
        let value = if key == "train.manifest" || key == "train.out_dir" { "required" } else { value };
        let _ = writeln!(s, "| `{key}` | {value} | {} |", describe(key).unwrap_or(""));
    }
    s
}
