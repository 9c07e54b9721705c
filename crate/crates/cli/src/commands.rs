use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use geomeld_core::caption::caption_tile;
use geomeld_core::eval::{format_report, EvalError, probe_encoder, reconstruction_report, retrieval_recall, ProbeConfig};
use geomeld_core::kv::KvWriter;
use geomeld_core::model::{read_checkpoint, Modality};
use geomeld_core::selfcheck::{run_all, SelfCheckOptions};
use geomeld_core::synth::{
    dataset_tile_id, generate_tile, read_manifest, read_tile, write_dataset, AcquisitionMeta, GeneratorConfig,
    GeomorphonParams,
};
use geomeld_core::trainer::{
    load_dataset, train, TrainConfig, Trainer, FINAL_CHECKPOINT, LAST_CHECKPOINT, METRICS_FILE,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::CliError;
use crate::run_manifest::RunManifest;
use crate::{Ablation, CaptionArgs, EvalArgs, GenDataArgs, PretrainArgs, ReferenceArgs, SelfcheckArgs};

pub const CAPTIONS_FILE: &str = "captions.tsv";
pub const AUDIT_FILE: &str = "caption_audit.txt";
pub const CONFIG_FILE: &str = "config.txt";
pub const REPORT_FILE: &str = "report.txt";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn gen_data(a: &GenDataArgs) -> Result<(), CliError> {
    if a.n == 0 {
        return Err(CliError::usage("--n must be positive"));
    }
    let cfg = GeneratorConfig {
        height: a.size,
        width: a.size,
        geomorphon: GeomorphonParams { radius: a.radius, ..GeomorphonParams::default() },
        ..GeneratorConfig::default()
    };
    cfg.validate()?;
    create_dir(&a.out)?;
    let mut run = RunManifest::start("gen-data", a.seed);
    let mut tiles = Vec::with_capacity(a.n);
    let mut failed = 0;
    for i in 0..a.n {
        let id = dataset_tile_id(a.seed, i);
        match generate_tile(&id, &cfg, a.seed) {
            Ok(t) => tiles.push(t),
            Err(e) => {
                eprintln!("warning: tile {id} skipped: {e}");
                failed += 1;
            }
        }
    }
    if tiles.is_empty() {
        return Err(CliError::data("no tile could be generated"));
    }
    let manifest = write_dataset(&a.out, &tiles)?;
    let captions: String = tiles.iter().map(|t| format!("{}\t{}\n", t.tile_id, t.caption)).collect();
    let captions_path = a.out.join(CAPTIONS_FILE);
    write_file(&captions_path, &captions)?;

    let acq = AcquisitionMeta::default();
    let mut w = KvWriter::default();
    w.put("gen.n", a.n)
        .put("gen.height", cfg.height)
        .put("gen.width", cfg.width)
        .put("gen.patch", cfg.patch)
        .put("gen.geomorphon_radius", cfg.geomorphon.radius)
        .put("gen.flat_threshold_deg", cfg.geomorphon.flat_threshold_deg)
        .put("gen.gsd_m", acq.gsd_m)
        .put("gen.roi_m", cfg.height as f64 * acq.gsd_m)
        .put("gen.window_days", acq.window_days)
        .put("gen.max_cloud_fraction", acq.max_cloud_fraction)
        .put("gen.failed", failed);
    run.config = w.finish();
    run.outputs = vec![manifest.clone(), captions_path];
    run.finish(&a.out)?;
    println!("wrote {} tiles to {} ({failed} skipped)", tiles.len(), manifest.display());
    Ok(())
}

pub fn caption(a: &CaptionArgs) -> Result<(), CliError> {
    if a.candidates == 0 {
        return Err(CliError::usage("--candidates must be positive"));
    }
    let entries = read_manifest(&a.data)?;
    create_dir(&a.out)?;
    let mut run = RunManifest::start("caption", 0);
    let (mut captions, mut audit) = (String::new(), String::new());
    let (mut revised, mut changed, mut failed) = (0, 0, 0);
    for e in &entries {
        let result = read_tile(&e.path).map_err(CliError::from).and_then(|t| {
            let a = caption_tile(&t, a.candidates)?;
            Ok((t, a))
        });
        match result {
            Ok((tile, au)) => {
                revised += au.revised as usize;
                changed += (au.final_caption != tile.caption) as usize;
                let _ = writeln!(captions, "{}\t{}", tile.tile_id, au.final_caption);
                audit.push_str(&au.to_record(&tile.tile_id));
                audit.push('\n');
            }
            Err(err) => {
                eprintln!("warning: {} skipped: {err}", e.path.display());
                failed += 1;
            }
        }
    }
    let (cp, ap) = (a.out.join(CAPTIONS_FILE), a.out.join(AUDIT_FILE));
    write_file(&cp, &captions)?;
    write_file(&ap, &audit)?;
    let mut w = KvWriter::default();
    w.put("caption.data", a.data.display()).put("caption.candidates", a.candidates).put("caption.failed", failed);
    run.config = w.finish();
    run.outputs = vec![cp, ap];
    run.finish(&a.out)?;
    println!(
        "captioned {} tiles: {revised} revised by verification, {changed} differ from the stored caption, {failed} skipped",
        entries.len() - failed
    );
    Ok(())
}

/// Reads a run configuration. Relative paths in it resolve against the
/// directory holding the file.
pub fn load_config(path: &Path) -> Result<TrainConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("config {}: {e}", path.display())))?;
    let mut cfg = TrainConfig::from_text(&text)
        .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &PathBuf| if p.is_relative() { base.join(p) } else { p.clone() };
    cfg.manifest = resolve(&cfg.manifest);
    cfg.out_dir = resolve(&cfg.out_dir);
    Ok(cfg)
}

pub fn apply_overrides(cfg: &mut TrainConfig, seed: Option<u64>, ablate: &[Ablation]) -> Result<(), CliError> {
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.model.init_seed = s;
    }
    for a in ablate {
        match a {
            Ablation::Mp => cfg.weights.lambda.values_mut().for_each(|l| *l = 0.0),
            Ablation::Jepa => cfg.weights.alpha = 0.0,
            Ablation::Itc => cfg.weights.beta = 0.0,
        }
    }
    let w = &cfg.weights;
    if w.alpha == 0.0 && w.beta == 0.0 && !w.reconstruction_active() {
        return Err(CliError::usage("every loss branch is ablated; nothing to train"));
    }
    cfg.validate()?;
    Ok(())
}

pub fn pretrain(a: &PretrainArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&a.config)?;
    apply_overrides(&mut cfg, a.seed, &a.ablate)?;
    if a.dry_run {
        let data = load_dataset(&cfg.manifest, &cfg.model, cfg.failure_budget)?;
        let trainer = Trainer::new(cfg.clone(), &data.tiles)?;
        let (report, nodes) = trainer.dry_step()?;
        println!("dry run: {} tiles, {} trainable parameters, {nodes} graph nodes", data.tiles.len(), trainer.state.num_trainable_params());
        println!("{}", report.fields());
        return Ok(());
    }
    create_dir(&cfg.out_dir)?;
    let config_path = cfg.out_dir.join(CONFIG_FILE);
    write_file(&config_path, &cfg.to_text())?;
    let mut run = RunManifest::start("pretrain", cfg.seed);
    let total = cfg.steps;
    let out = train(&cfg, |r| {
        if r.step == 1 || r.step % 10 == 0 || r.step as usize == total {
            eprintln!("step {}/{total} lr {:.3e} total {:.4}", r.step, r.lr, r.report.total);
        }
    })?;
    for s in &out.skipped_tiles {
        eprintln!("warning: skipped {s}");
    }
    run.config = cfg.to_text();
    run.outputs = vec![config_path, cfg.out_dir.join(METRICS_FILE), cfg.out_dir.join(LAST_CHECKPOINT)];
    run.outputs.extend(out.final_checkpoint.clone());
    run.outputs.retain(|p| p.exists());
    run.finish(&cfg.out_dir)?;
    let first = out.records.first().map_or(f64::NAN, |r| r.report.total);
    let last = out.records.last().map_or(f64::NAN, |r| r.report.total);
    println!(
        "trained {} steps: total loss {first:.4} -> {last:.4}; checkpoint {}",
        out.records.len(),
        cfg.out_dir.join(FINAL_CHECKPOINT).display()
    );
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    if !(a.train_fraction > 0.0 && a.train_fraction < 1.0) {
        return Err(CliError::usage("--train-fraction must lie in (0, 1)"));
    }
    if a.k == 0 || a.gallery == 0 {
        return Err(CliError::usage("--k and --gallery must be positive"));
    }
    if !a.checkpoint.is_file() {
        return Err(CliError::data(format!("checkpoint {} does not exist", a.checkpoint.display())));
    }
    let ck = read_checkpoint(&a.checkpoint)
        .map_err(|e| CliError::data(format!("checkpoint {}: {e}", a.checkpoint.display())))?;
    let state = ck.model;
    let mask_ratio = TrainConfig::from_text(&ck.run_config).map(|c| c.mask_ratio).unwrap_or(0.7);
    let data = load_dataset(&a.data, &state.config, 8)?;
    for f in &data.failures {
        eprintln!("warning: skipped {f}");
    }
    let mut tiles = data.tiles;
    tiles.shuffle(&mut ChaCha8Rng::seed_from_u64(a.seed));
    let n_train = ((tiles.len() as f64 * a.train_fraction).round() as usize).clamp(1, tiles.len().saturating_sub(1));
    if tiles.len() < 2 {
        return Err(CliError::data("evaluation needs at least two tiles"));
    }
    let (train_t, test_t) = tiles.split_at(n_train);
    let gallery = &test_t[..a.gallery.min(test_t.len())];
    if a.k > gallery.len() {
        return Err(CliError::usage(format!("k = {} exceeds the gallery of {}", a.k, gallery.len())));
    }
    create_dir(&a.out)?;
    let mut run = RunManifest::start("eval", a.seed);

    let probe_cfg = ProbeConfig { epochs: a.probe_epochs, lr: a.probe_lr, batch_size: 32, seed: a.seed };
    let probe = match probe_encoder(&state, train_t, test_t, &probe_cfg) {
        Ok(p) => Some(p),
        Err(EvalError::Invalid(why)) => {
            eprintln!("warning: linear probe skipped: {why}");
            None
        }
        Err(e) => return Err(e.into()),
    };
    let retrieval = retrieval_recall(&state, gallery, a.k)?;
    if retrieval.duplicate_captions > 0 {
        eprintln!(
            "warning: {} gallery tiles share their caption with another tile; matches are counted by index",
            retrieval.duplicate_captions
        );
    }
    let seeds: Vec<u64> = (1..=a.recon_seeds).collect();
    let recon = reconstruction_report(&state, test_t, &seeds, mask_ratio)?;

    let mut w = KvWriter::default();
    w.put("checkpoint", a.checkpoint.display())
        .put("checkpoint.step", ck.step)
        .put("data", a.data.display())
        .put("tiles.train", train_t.len())
        .put("tiles.held_out", test_t.len())
        .put("retrieval.gallery", gallery.len())
        .put("retrieval.k", a.k)
        .put("recon.mask_ratio", mask_ratio)
        .put("recon.seeds", a.recon_seeds);
    let mut report = w.finish();
    report.push_str(&format_report(probe.as_ref(), Some(&retrieval), &recon));
    let path = a.out.join(REPORT_FILE);
    write_file(&path, &report)?;

    let mut c = KvWriter::default();
    c.put("eval.k", a.k)
        .put("eval.train_fraction", a.train_fraction)
        .put("eval.gallery", a.gallery)
        .put("eval.probe_epochs", a.probe_epochs)
        .put("eval.probe_lr", a.probe_lr)
        .put("eval.recon_seeds", a.recon_seeds);
    run.config = c.finish();
    run.outputs = vec![path.clone()];
    run.finish(&a.out)?;

    if let Some(p) = &probe {
        println!(
            "probe {:.3} (pixel means {:.3}, chance {:.3})",
            p.encoder.accuracy, p.pixel_baseline.accuracy, p.encoder.chance
        );
    }
    println!("R@{} i2t {:.3} t2i {:.3}", a.k, retrieval.image_to_text.recall, retrieval.text_to_image.recall);
    for e in &recon {
        match (e.l1, e.accuracy) {
            (Some(v), _) => println!("  {:<6} masked l1 {v:.4}", e.modality.key()),
            (_, Some(v)) => println!("  {:<6} masked accuracy {v:.4}", e.modality.key()),
            _ => {}
        }
    }
    println!("report written to {}", path.display());
    debug_assert_eq!(recon.len(), Modality::ALL.len());
    Ok(())
}

pub fn selfcheck(a: &SelfcheckArgs) -> Result<(), CliError> {
    let results = run_all(SelfCheckOptions { corrupt_loss: a.corrupt_loss });
    let mut failed = 0;
    for r in &results {
        println!("{:<18} {:>4}/{:<4} {}", r.name, r.passed, r.total, if r.ok() { "PASS" } else { "FAIL" });
        for n in &r.notes {
            println!("    {n}");
        }
        for f in r.failures.iter().take(5) {
            println!("    failed: {f}");
        }
        failed += !r.ok() as usize;
    }
    if failed > 0 {
        return Err(CliError::numeric(format!("{failed} of {} suites failed", results.len())));
    }
    println!("all {} suites passed", results.len());
    Ok(())
}

pub fn reference(a: &ReferenceArgs) -> Result<(), CliError> {
    let page = crate::reference::page();
    match &a.out {
        Some(p) => write_file(p, &page),
        None => {
            print!("{page}");
            Ok(())
        }
    }
}
