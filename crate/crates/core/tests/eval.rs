use geomeld_autograd::Tensor;
use geomeld_core::eval::*;
use geomeld_core::model::{prepare_tile, Modality, ModelState, PreparedTile, Tokenizer};
use geomeld_core::synth::{generate_dataset, GeneratorConfig};
use geomeld_core::trainer::{train_on, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::small_config;

fn tiles(n: usize, seed: u64) -> Vec<PreparedTile> {
    let cfg = small_config();
    let tok = Tokenizer::new();
    generate_dataset(n, &GeneratorConfig::square(cfg.tile_height), seed)
        .unwrap()
        .iter()
        .map(|t| prepare_tile(t, &cfg, &tok).unwrap())
        .collect()
}

fn trained(data: &[PreparedTile], steps: usize) -> ModelState {
    let mut c = TrainConfig::new("unused", "unused");
    c.model = small_config();
    c.steps = steps;
    c.batch_size = 8;
    c.lr_base = 3e-3;
    train_on(&c, data, false, |_| {}).unwrap().state
}

/// Rank of the true match counted over every other gallery item, ties
/// broken toward the lower index; all pairs enumerated explicitly.
fn brute_force_recall(sim: &[Vec<f64>], k: usize, transpose: bool) -> usize {
    let n = sim.len();
    let s = |q: usize, j: usize| if transpose { sim[j][q] } else { sim[q][j] };
    let mut hits = 0;
    for q in 0..n {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| s(q, b).total_cmp(&s(q, a)).then(a.cmp(&b)));
        if order.iter().take(k).any(|&j| j == q) {
            hits += 1;
        }
    }
    hits
}

fn random_sim(n: usize, seed: u64, levels: u32) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect()).collect()
}

proptest! {
    #[test]
    fn recall_matches_brute_force(n in 1usize..30, seed in any::<u64>(), levels in 2u32..50) {
        let sim = random_sim(n, seed, levels);
        let t = Tensor::from_rows(&sim).unwrap();
        let mut prev = (0, 0);
        for k in 1..=n {
            let (i2t, t2i) = recall_from_similarity(&t, k).unwrap();
            prop_assert_eq!(i2t.hits, brute_force_recall(&sim, k, false));
            prop_assert_eq!(t2i.hits, brute_force_recall(&sim, k, true));
            prop_assert_eq!(i2t.recall, i2t.hits as f64 / n as f64);
            prop_assert!(i2t.hits >= prev.0 && t2i.hits >= prev.1);
            prev = (i2t.hits, t2i.hits);
        }
        prop_assert_eq!(prev, (n, n));
    }
}

#[test]
fn identity_similarity_gives_full_recall() {
    for n in [1, 5, 64] {
        let (i2t, t2i) = recall_from_similarity(&Tensor::eye(n), 1).unwrap();
        assert_eq!((i2t.recall, t2i.recall), (1.0, 1.0));
        assert_eq!((i2t.direction, t2i.direction), (Direction::ImageToText, Direction::TextToImage));
    }
}

#[test]
fn recall_rejects_bad_k_and_shapes() {
    let t = Tensor::eye(4);
    assert!(recall_from_similarity(&t, 0).is_err());
    assert!(recall_from_similarity(&t, 5).is_err());
    assert!(recall_from_similarity(&Tensor::zeros([2, 3]), 1).is_err());
}

#[test]
fn retrieval_on_model_embeddings() {
    let state = ModelState::new(small_config()).unwrap();
    let data = tiles(64, 1);
    let r = retrieval_recall(&state, &data, 5).unwrap();
    let chance: f64 = 5.0 / 64.0;
    let sd = (chance * (1.0 - chance) / 64.0).sqrt();
    for res in [&r.image_to_text, &r.text_to_image] {
        assert_eq!((res.k, res.queries), (5, 64));
        assert!(res.recall <= chance + 4.0 * sd, "{res:?}");
    }
    let single = retrieval_recall(&state, &data[..1], 1).unwrap();
    assert_eq!((single.image_to_text.recall, single.text_to_image.recall), (1.0, 1.0));
    assert!(retrieval_recall(&state, &data[..3], 5).is_err());

    let (v, t) = shared_embeddings(&state, &data[..10]).unwrap();
    for i in 0..10 {
        let nv: f64 = v.row(i).iter().map(|x| x * x).sum();
        let nt: f64 = t.row(i).iter().map(|x| x * x).sum();
        assert!((nv - 1.0).abs() < 1e-12 && (nt - 1.0).abs() < 1e-12);
    }
}

#[test]
fn duplicate_captions_are_counted() {
    let state = ModelState::new(small_config()).unwrap();
    let mut data = tiles(6, 2);
    data[3].tokens = data[0].tokens.clone();
    data[5].tokens = data[0].tokens.clone();
    let before = {
        let mut seen = std::collections::BTreeMap::new();
        for t in &data {
            *seen.entry(t.tokens.clone()).or_insert(0) += 1;
        }
        seen.values().filter(|&&c| c > 1).sum::<usize>()
    };
    assert!(before >= 3);
    assert_eq!(retrieval_recall(&state, &data, 2).unwrap().duplicate_captions, before);
}

fn gaussian_clusters(n: usize, classes: usize, d: usize, spread: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..classes).map(|c| (0..d).map(|j| if j % classes == c { 3.0 } else { 0.0 }).collect()).collect();
    let ys: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let xs = ys.iter().map(|&y| centers[y].iter().map(|c| c + spread * rng.random_range(-1.0..1.0)).collect()).collect();
    (xs, ys)
}

#[test]
fn probe_separates_clusters() {
    let (xtr, ytr) = gaussian_clusters(200, 4, 8, 1.0, 3);
    let (xte, yte) = gaussian_clusters(100, 4, 8, 1.0, 4);
    let r = linear_probe(&xtr, &ytr, &xte, &yte, &ProbeConfig::default()).unwrap();
    assert!(r.accuracy > 0.95, "{r:?}");
    assert_eq!((r.classes, r.chance, r.test_size), (4, 0.25, 100));
    assert_eq!(r.accuracy, r.correct as f64 / 100.0);
}

#[test]
fn probe_on_permuted_labels_is_at_chance() {
    let (xtr, mut ytr) = gaussian_clusters(400, 4, 8, 1.0, 5);
    let (xte, yte) = gaussian_clusters(400, 4, 8, 1.0, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    use rand::seq::SliceRandom;
    ytr.shuffle(&mut rng);
    let r = linear_probe(&xtr, &ytr, &xte, &yte, &ProbeConfig::default()).unwrap();
    let ci = 3.0 * (0.25f64 * 0.75 / 400.0).sqrt();
    assert!((r.accuracy - 0.25).abs() < ci, "{r:?}");
}

#[test]
fn probe_needs_two_classes_per_split() {
    let x = vec![vec![0.0, 1.0]; 6];
    assert!(matches!(linear_probe(&x, &[1; 6], &x, &[0, 1, 0, 1, 0, 1], &ProbeConfig::default()), Err(EvalError::Invalid(_))));
    assert!(matches!(linear_probe(&x, &[0, 1, 0, 1, 0, 1], &x, &[1; 6], &ProbeConfig::default()), Err(EvalError::Invalid(_))));
    assert!(linear_probe(&x, &[0, 1, 0, 1, 0, 1], &x[..2], &[0, 1], &ProbeConfig::default()).is_ok());
}

#[test]
fn probing_leaves_the_encoder_untouched_and_reports_baseline() {
    let state = ModelState::new(small_config()).unwrap();
    let before = state.clone();
    let data = tiles(40, 8);
    let cfg = ProbeConfig { epochs: 5, ..ProbeConfig::default() };
    let r = probe_encoder(&state, &data[..30], &data[30..], &cfg).unwrap();
    assert_eq!(state, before);
    assert_eq!(r.encoder.test_size, 10);
    assert_eq!(r.pixel_baseline.test_size, 10);
    assert_eq!(r, probe_encoder(&state, &data[..30], &data[30..], &cfg).unwrap());
    let report = format_report(Some(&r), None, &[]);
    assert!(report.contains("probe.pixel_means.accuracy="));
}

#[test]
fn training_lowers_reconstruction_error() {
    let data = tiles(64, 9);
    let held = tiles(16, 10);
    let untrained = ModelState::new(small_config()).unwrap();
    let state = trained(&data, 200);
    let before = reconstruction_report(&untrained, &held, &[1, 2], 0.7).unwrap();
    let after = reconstruction_report(&state, &held, &[1, 2], 0.7).unwrap();
    assert_eq!(after, reconstruction_report(&state, &held, &[1, 2], 0.7).unwrap());
    assert_eq!(before.len(), 6);
    for (b, a) in before.iter().zip(&after) {
        assert_eq!(a.patches, 16 * 2 * 11);
        if a.modality.is_continuous() {
            assert!(a.l1.unwrap() < b.l1.unwrap(), "{a:?} vs {b:?}");
        } else {
            assert!(a.accuracy.unwrap() >= 0.0 && a.accuracy.unwrap() <= 1.0);
        }
    }
}

#[test]
fn constant_modality_is_learned_almost_exactly() {
    let flatten = |mut ts: Vec<PreparedTile>| {
        for t in &mut ts {
            let c = t.continuous.get_mut(&Modality::Canopy).unwrap();
            c.data_mut().iter_mut().for_each(|v| *v = 0.4);
        }
        ts
    };
    let data = flatten(tiles(32, 11));
    let held = flatten(tiles(8, 12));
    let state = trained(&data, 60);
    let report = reconstruction_report(&state, &held, &[3], 0.7).unwrap();
    let canopy = report.iter().find(|e| e.modality == Modality::Canopy).unwrap();
    let s2 = report.iter().find(|e| e.modality == Modality::S2).unwrap();
    assert!(canopy.l1.unwrap() < 0.05, "{canopy:?}");
    assert!(canopy.l1.unwrap() < s2.l1.unwrap());
}
