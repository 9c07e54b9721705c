//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each and exits non-zero if any fails.

use std::time::Instant;

use geomeld_autograd::{Graph, Tensor};
use geomeld_core::caption::{find_conflicts, generate_candidates, inject_contradiction, orchestrate, rank_candidates, verify_and_revise};
use geomeld_core::eval::{format_report, probe_encoder, reconstruction_report, retrieval_recall, ProbeConfig};
use geomeld_core::masking::{make_masks, PatchGrid};
use geomeld_core::model::{
    ema_update, encode_checkpoint, prepare_tile, read_checkpoint, ModelConfig, ModelState, PreparedTile, Tokenizer,
};
use geomeld_core::objectives::{loss_itc, LossWeights};
use geomeld_core::selfcheck::{gradient_suite, random_tiles, tiny_model_config, GRADIENT_TOLERANCE};
use geomeld_core::synth::{
    encode_tile, generate_dataset, geomorphon_classify, temporal_anchor, write_dataset, GeneratorConfig,
    GeomorphonParams, Landform, Raster,
};
use geomeld_core::trainer::{build_step, train, train_on, Batch, TrainConfig, TrainOutcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::oracle_score;

const TRAIN_TILES: usize = 512;
const PROBE_TEST_TILES: usize = 128;
const GALLERY: usize = 64;
const DATA_SEED: u64 = 2024;
const HELD_OUT_SEED: u64 = 2025;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Desk data: training tiles and a disjoint held-out set.
struct Desk {
    model: ModelConfig,
    train: Vec<PreparedTile>,
    held: Vec<PreparedTile>,
}

impl Desk {
    fn new() -> Self {
        let model = ModelConfig::default();
        let tok = Tokenizer::new();
        let gen = GeneratorConfig::square(model.tile_height);
        let prep = |n, seed| {
            generate_dataset(n, &gen, seed)
                .expect("generation")
                .iter()
                .map(|t| prepare_tile(t, &model, &tok).expect("prepare"))
                .collect::<Vec<_>>()
        };
        Self { train: prep(TRAIN_TILES, DATA_SEED), held: prep(PROBE_TEST_TILES, HELD_OUT_SEED), model }
    }

    fn config(&self, seed: u64, weights: LossWeights) -> TrainConfig {
        let mut c = TrainConfig::new("in-memory", "unused");
        c.model = self.model.clone();
        c.model.init_seed = seed;
        c.seed = seed;
        c.weights = weights;
        c
    }

    fn run(&self, seed: u64, weights: LossWeights) -> TrainOutcome {
        train_on(&self.config(seed, weights), &self.train, false, |_| {}).expect("training run")
    }

    fn probe_accuracy(&self, state: &ModelState) -> f64 {
        probe_encoder(state, &self.train, &self.held, &ProbeConfig::default()).expect("probe").encoder.accuracy
    }
}

fn mp_only() -> LossWeights {
    LossWeights { alpha: 0.0, beta: 0.0, ..LossWeights::default() }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let r = gradient_suite(7, false);
    let secs = start.elapsed().as_secs_f64();
    let pass = r.ok() && secs < 60.0;
    outcome(pass, format!("{} in {secs:.1}s, tolerance {GRADIENT_TOLERANCE:e}", r.notes.join(", ")))
}

fn criterion_2() -> Outcome {
    let itc = |v: Tensor, t: Tensor, tau: f64| {
        let mut g = Graph::new();
        let (v, t) = (g.constant(v), g.constant(t));
        let l = loss_itc(&mut g, v, t, tau).expect("itc");
        g.scalar(l)
    };
    let two = itc(Tensor::eye(2), Tensor::eye(2), 1.0);
    let want = (1.0 + (-1f64).exp()).ln();
    let one = itc(Tensor::new([1, 3], vec![0.0, 0.6, 0.8]).unwrap(), Tensor::new([1, 3], vec![1.0, 0.0, 0.0]).unwrap(), 1.0);
    outcome((two - want).abs() < 1e-6 && one == 0.0, format!("B=2: {two:.12} vs {want:.12}; B=1: {one}"))
}

fn criterion_3() -> Outcome {
    // Full objective on a small model; xi is bound with gradients enabled.
    let cfg = tiny_model_config(3);
    let mut state = ModelState::new(cfg.clone()).expect("model");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (_, t) in state.xi.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
    }
    let tiles = random_tiles(&cfg, 4, 5);
    let grid = PatchGrid::new(cfg.grid_rows(), cfg.grid_cols());
    let masks = (0..4).map(|i| make_masks(grid, 0.7, 0.25, i).expect("mask")).collect();
    let mut g = Graph::new();
    let bm = state.bind(&mut g);
    let batch = Batch { tiles: tiles.iter().collect(), masks };
    let sg = build_step(&mut g, &state, &bm, &batch, &LossWeights::default(), false).expect("step");
    g.backward(sg.total).expect("backward");
    let xi_zero = bm.xi.grads(&g).iter().all(|gr| gr.as_ref().is_none_or(|t| t.data().iter().all(|&v| v == 0.0)));
    let theta_live = bm.theta.grads(&g).iter().flatten().any(|t| t.norm() > 0.0);

    let (tau, k) = (0.996f64, 500);
    let (theta, xi0) = (1.25f64, -0.75f64);
    let mut xi = xi0;
    for _ in 0..k {
        xi = tau * xi + (1.0 - tau) * theta;
    }
    let scalar_err = ((xi - theta).abs() - tau.powi(k) * (xi0 - theta).abs()).abs();

    let before = state.xi.clone();
    let gap = |xi: &geomeld_core::model::ParamStore| {
        xi.iter().zip(state.theta.iter()).map(|((_, a), (_, b))| a.max_abs_diff(b)).fold(0.0, f64::max)
    };
    let mut store = before.clone();
    for _ in 0..k {
        ema_update(&state.theta, &mut store, tau).expect("ema");
    }
    let store_err = (gap(&store) - tau.powi(k) * gap(&before)).abs();
    let pass = xi_zero && theta_live && scalar_err < 1e-9 && store_err < 1e-9;
    outcome(
        pass,
        format!("xi grads zero: {xi_zero}; theta grads live: {theta_live}; scalar err {scalar_err:.2e}; store err {store_err:.2e}"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ok = 0;
    let draws = 1000;
    for i in 0..draws {
        // Half the draws use the desk grid, the rest random grids.
        let grid = if i % 2 == 0 { PatchGrid::new(8, 8) } else { PatchGrid::new(rng.random_range(2..20), rng.random_range(2..20)) };
        let n = grid.len();
        let m = make_masks(grid, 0.7, 0.25, rng.random()).expect("mask");
        let disjoint = m.tgt_visible.iter().all(|t| !m.ctx_visible.contains(t));
        let size = m.ctx_visible.len() == (0.3 * n as f64).round() as usize;
        ok += (disjoint && size) as usize;
    }
    outcome(ok == draws, format!("{ok}/{draws} draws disjoint with |ctx| = round(0.3 N)"))
}

fn criterion_5(first: &TrainOutcome, secs: f64) -> Outcome {
    let a = &first.records[0].report;
    let b = &first.records.last().expect("records").report;
    let drop = 1.0 - b.total / a.total;
    let rec_down: Vec<String> = a
        .rec
        .iter()
        .filter(|(m, v)| b.rec[m] >= **v)
        .map(|(m, v)| format!("{} {v:.3}->{:.3}", m.key(), b.rec[m]))
        .collect();
    let pass = first.records.len() == 200 && drop >= 0.5 && rec_down.is_empty() && secs < 1800.0;
    outcome(
        pass,
        format!(
            "total {:.3} -> {:.3} ({:.1}% drop), rec not decreasing: {:?}, {secs:.0}s",
            a.total,
            b.total,
            100.0 * drop,
            rec_down
        ),
    )
}

fn criterion_6(desk: &Desk, full: &ModelState, no_itc: &ModelState) -> Outcome {
    let probe = probe_encoder(full, &desk.train, &desk.held, &ProbeConfig::default()).expect("probe");
    let gallery = &desk.held[..GALLERY];
    let r = retrieval_recall(full, gallery, 5).expect("retrieval");
    let r0 = retrieval_recall(no_itc, gallery, 5).expect("retrieval");
    let chance = 5.0 / GALLERY as f64;
    let band = chance + 3.0 * (chance * (1.0 - chance) / GALLERY as f64).sqrt();
    let e = &probe.encoder;
    let probe_ok = e.classes >= 4 && e.accuracy >= 2.0 * e.chance;
    let ret_ok = r.image_to_text.recall >= 3.0 * chance && r.text_to_image.recall >= 3.0 * chance;
    let ablate_ok = r0.image_to_text.recall <= band && r0.text_to_image.recall <= band;
    outcome(
        probe_ok && ret_ok && ablate_ok,
        format!(
            "probe {:.3} vs chance {:.3} ({} classes, pixel-means {:.3}); R@5 i2t {:.3} t2i {:.3} (bar {:.3}); beta=0 R@5 i2t {:.3} t2i {:.3} (chance band <= {band:.3})",
            e.accuracy,
            e.chance,
            e.classes,
            probe.pixel_baseline.accuracy,
            r.image_to_text.recall,
            r.text_to_image.recall,
            3.0 * chance,
            r0.image_to_text.recall,
            r0.text_to_image.recall
        ),
    )
}

fn criterion_7(desk: &Desk, full_seed0: &ModelState) -> Outcome {
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 0..3u64 {
        let full = if seed == 0 { desk.probe_accuracy(full_seed0) } else { desk.probe_accuracy(&desk.run(seed, LossWeights::default()).state) };
        let mp = desk.probe_accuracy(&desk.run(seed, mp_only()).state);
        wins += (full >= mp) as usize;
        rows.push(format!("seed {seed}: full {full:.3} mp-only {mp:.3}"));
    }
    outcome(wins >= 2, format!("{}; full >= mp-only in {wins}/3", rows.join("; ")))
}

fn criterion_8() -> Outcome {
    let tiles = generate_dataset(100, &GeneratorConfig::square(32), 41).expect("generation");
    let (mut flagged, mut stable, mut ranked) = (0, 0, 0);
    for (i, t) in tiles.iter().enumerate() {
        let (bad, rule) = inject_contradiction(&t.attributes, &t.caption, i);
        if let Ok((fixed, conflicts)) = verify_and_revise(&t.attributes, &bad) {
            flagged += conflicts.iter().any(|c| c.rule == rule) as usize;
            let again = verify_and_revise(&t.attributes, &fixed);
            stable += (again.is_ok_and(|(a, c)| a == fixed && c.is_empty()) && find_conflicts(&fixed, &t.attributes).is_empty())
                as usize;
        }
        let texts: Vec<String> = generate_candidates(&orchestrate(t).expect("signals"), 4)
            .expect("candidates")
            .into_iter()
            .map(|c| c.0)
            .chain([bad])
            .collect();
        let (_, best) = rank_candidates(&t.attributes, &texts).expect("ranking");
        let oracle: Vec<f64> = texts.iter().map(|s| oracle_score(s, &t.attributes)).collect();
        ranked += oracle.iter().all(|&s| s <= oracle[best]) as usize;
    }
    outcome(
        flagged == 100 && stable == 100 && ranked == 100,
        format!("flagged {flagged}/100, idempotent {stable}/100, best ranked top by oracle {ranked}/100"),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let ids: Vec<String> = (0..10_000)
        .map(|i| format!("{}-{i}", (0..rng.random_range(1..24)).map(|_| rng.random_range(b'!'..=b'~') as char).collect::<String>()))
        .collect();
    let day15 = ids.iter().filter(|id| temporal_anchor(id).format("%d").to_string() == "15").count();

    // Generate, write, train from the manifest and evaluate, twice. Both runs
    // use the same directory because the checkpoint records the run's paths.
    let base = tempfile::tempdir().expect("tempdir");
    let end_to_end = || {
        let dir = base.path().join("work");
        let _ = std::fs::remove_dir_all(&dir);
        let model = ModelConfig::default();
        let tiles = generate_dataset(40, &GeneratorConfig::square(model.tile_height), 77).expect("generation");
        let bytes: Vec<u8> = tiles.iter().flat_map(encode_tile).collect();
        let manifest = write_dataset(&dir, &tiles).expect("write");
        let mut c = TrainConfig::new(manifest, dir.join("run"));
        c.model = model;
        c.steps = 6;
        c.batch_size = 8;
        let out = train(&c, |_| {}).expect("train");
        let ck = std::fs::read(out.final_checkpoint.as_ref().expect("checkpoint")).expect("read");
        let state = read_checkpoint(out.final_checkpoint.as_ref().unwrap()).expect("decode").model;
        let tok = Tokenizer::new();
        let prepared: Vec<PreparedTile> = tiles.iter().map(|t| prepare_tile(t, &state.config, &tok).unwrap()).collect();
        let probe = probe_encoder(&state, &prepared[..24], &prepared[24..], &ProbeConfig { epochs: 10, ..ProbeConfig::default() });
        let retrieval = retrieval_recall(&state, &prepared[24..], 5).expect("retrieval");
        let recon = reconstruction_report(&state, &prepared[24..], &[1, 2], 0.7).expect("recon");
        let report = format_report(probe.as_ref().ok(), Some(&retrieval), &recon);
        (bytes, ck, encode_checkpoint(&read_checkpoint(out.final_checkpoint.as_ref().unwrap()).unwrap()), report)
    };
    let (a, b) = (end_to_end(), end_to_end());
    let data_same = a.0 == b.0;
    let ck_same = a.1 == b.1 && a.2 == b.2;
    let report_same = a.3 == b.3 && !a.3.is_empty();
    outcome(
        day15 == ids.len() && data_same && ck_same && report_same,
        format!(
            "day 15 for {day15}/{}; datasets identical: {data_same}; checkpoints identical: {ck_same}; reports identical: {report_same}",
            ids.len()
        ),
    )
}

fn criterion_10() -> Outcome {
    let p = GeomorphonParams { radius: 4, flat_threshold_deg: 1.0 };
    let dem = |h: usize, w: usize, f: &dyn Fn(usize, usize) -> f32| {
        Raster::new(1, h, w, (0..h * w).map(|i| f(i / w, i % w)).collect()).expect("raster")
    };
    let flat = geomorphon_classify(&dem(20, 20, &|_, _| 250.0), p).expect("classify");
    let flat_ok = flat.data().iter().all(|&f| f == Landform::Flat as u8);
    let peak = geomorphon_classify(&dem(17, 17, &|y, x| if (y, x) == (8, 8) { 110.0 } else { 100.0 }), p).expect("classify");
    let peak_ok = peak.get(8, 8) == Landform::Peak as u8;
    let ramp = geomorphon_classify(&dem(24, 24, &|y, x| (3 * x + y) as f32), p).expect("classify");
    let slope_ok = (4..20).all(|y| (4..20).all(|x| ramp.get(y, x) == Landform::Slope as u8));
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let base_dem = dem(24, 24, &|y, x| 400.0 + 30.0 * ((x as f32 * 0.4).sin() + (y as f32 * 0.3).cos()) + (x * y) as f32 * 0.2);
    let base = geomorphon_classify(&base_dem, p).expect("classify");
    let invariant = (0..20).all(|_| {
        let a: f32 = rng.random_range(0.1..20.0);
        let b: f32 = rng.random_range(-2000.0..2000.0);
        geomorphon_classify(&base_dem.map(|z| a * z + b), p).is_ok_and(|m| m == base)
    });
    outcome(
        flat_ok && peak_ok && slope_ok && invariant,
        format!("flat: {flat_ok}; peak: {peak_ok}; ramp interior slope: {slope_ok}; affine invariant (20 draws): {invariant}"),
    )
}

/// Criteria to run: all, or the comma-separated numbers in
/// `GEOMELD_CRITERIA`.
fn selected() -> Vec<usize> {
    match std::env::var("GEOMELD_CRITERIA") {
        Ok(v) if !v.trim().is_empty() => {
            v.split(',').map(|n| n.trim().parse().expect("GEOMELD_CRITERIA holds criterion numbers")).collect()
        }
        _ => (1..=10).collect(),
    }
}

fn main() {
    let wanted = selected();
    let mut results: Vec<(usize, Outcome, f64)> = Vec::new();
    let mut timed = |n: usize, f: &mut dyn FnMut() -> Outcome| {
        if !wanted.contains(&n) {
            return;
        }
        let start = Instant::now();
        let o = f();
        let secs = start.elapsed().as_secs_f64();
        println!("criterion {n:>2}: {} ({secs:.1}s) {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o, secs));
    };
    timed(1, &mut criterion_1);
    timed(2, &mut criterion_2);
    timed(3, &mut criterion_3);
    timed(4, &mut criterion_4);

    if selected().iter().any(|n| (5..=7).contains(n)) {
        let desk = Desk::new();
        let mut full = None;
        let full_run = || {
            let start = Instant::now();
            let out = desk.run(0, LossWeights::default());
            (out, start.elapsed().as_secs_f64())
        };
        timed(5, &mut || {
            let (out, secs) = full_run();
            let o = criterion_5(&out, secs);
            full = Some(out);
            o
        });
        let full = full.unwrap_or_else(|| full_run().0);
        timed(6, &mut || {
            let no_itc = desk.run(0, LossWeights { beta: 0.0, ..LossWeights::default() });
            criterion_6(&desk, &full.state, &no_itc.state)
        });
        timed(7, &mut || criterion_7(&desk, &full.state));
    }
    timed(8, &mut criterion_8);
    timed(9, &mut criterion_9);
    timed(10, &mut criterion_10);

    let failed: Vec<usize> = results.iter().filter(|(_, o, _)| !o.pass).map(|(n, _, _)| *n).collect();
    println!("acceptance: {}/{} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
