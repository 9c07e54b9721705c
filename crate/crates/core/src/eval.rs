//! Frozen-checkpoint evaluation: linear probing, caption/tile retrieval and
//! masked reconstruction error.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use geomeld_autograd::{Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::masking::{make_masks, MaskError, PatchGrid};
use crate::model::{
    decode_head, decode_trunk, encode_caption, encode_visible, pool_and_project, Modality, ModelError, ModelState,
    PreparedTile,
};

const EMBED_CHUNK: usize = 32;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("evaluation error: {0}")]
    Invalid(String),
}

impl From<geomeld_autograd::TensorError> for EvalError {
    fn from(e: geomeld_autograd::TensorError) -> Self {
        EvalError::Model(e.into())
    }
}

/// Mean-pooled online-encoder latent of every tile, all patches visible.
pub fn pooled_latents(state: &ModelState, tiles: &[PreparedTile]) -> Result<Vec<Vec<f64>>, EvalError> {
    let cfg = &state.config;
    let n = cfg.num_patches();
    let mut out = Vec::with_capacity(tiles.len());
    for chunk in tiles.chunks(EMBED_CHUNK) {
        let mut g = Graph::new();
        let theta = state.theta.bind(&mut g, false);
        let data: Vec<f64> = chunk.iter().flat_map(|t| t.s2().data().iter().copied()).collect();
        let x = g.constant(Tensor::new(vec![chunk.len() * n, cfg.patch_dim()], data)?);
        let positions: Vec<usize> = (0..chunk.len() * n).map(|i| i % n).collect();
        let z = encode_visible(&mut g, &theta, cfg, x, &positions, chunk.len())?;
        let pooled = g.group_mean(z, n, None)?;
        let p = g.value(pooled);
        out.extend((0..chunk.len()).map(|i| p.row(i).to_vec()));
    }
    Ok(out)
}

/// Unit-norm image and caption embeddings in the shared space, one row per
/// tile. Tiles are encoded with every patch visible.
pub fn shared_embeddings(state: &ModelState, tiles: &[PreparedTile]) -> Result<(Tensor, Tensor), EvalError> {
    let cfg = &state.config;
    let n = cfg.num_patches();
    let (mut vs, mut ts) = (Vec::new(), Vec::new());
    for chunk in tiles.chunks(EMBED_CHUNK) {
        let b = chunk.len();
        let mut g = Graph::new();
        let theta = state.theta.bind(&mut g, false);
        let psi = state.psi.bind(&mut g, false);
        let pv = state.proj_v.bind(&mut g, false);
        let pt = state.proj_t.bind(&mut g, false);
        let data: Vec<f64> = chunk.iter().flat_map(|t| t.s2().data().iter().copied()).collect();
        let x = g.constant(Tensor::new(vec![b * n, cfg.patch_dim()], data)?);
        let positions: Vec<usize> = (0..b * n).map(|i| i % n).collect();
        let z = encode_visible(&mut g, &theta, cfg, x, &positions, b)?;
        let tokens: Vec<u32> = chunk.iter().flat_map(|t| t.tokens.iter().copied()).collect();
        let t = encode_caption(&mut g, &psi, cfg, &tokens, b)?;
        let (v, t) = pool_and_project(&mut g, &pv, &pt, z, t, b)?;
        vs.extend_from_slice(g.value(v).data());
        ts.extend_from_slice(g.value(t).data());
    }
    let d = cfg.shared_dim;
    Ok((Tensor::new(vec![tiles.len(), d], vs)?, Tensor::new(vec![tiles.len(), d], ts)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    ImageToText,
    TextToImage,
}

impl Direction {
    pub fn key(self) -> &'static str {
        match self {
            Direction::ImageToText => "i2t",
            Direction::TextToImage => "t2i",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalResult {
    pub direction: Direction,
    pub k: usize,
    pub hits: usize,
    pub queries: usize,
    pub recall: f64,
}

/// Recall@k in both directions from a square similarity matrix whose
/// diagonal holds the true matches. A query's rank counts gallery items
/// scoring strictly higher, plus equal-scoring items with a lower index.
pub fn recall_from_similarity(sim: &Tensor, k: usize) -> Result<(RetrievalResult, RetrievalResult), EvalError> {
    let n = sim.rows();
    if sim.shape().len() != 2 || sim.cols() != n || n == 0 {
        return Err(EvalError::Invalid(format!("similarity matrix {:?} is not square", sim.shape())));
    }
    if k == 0 || k > n {
        return Err(EvalError::Invalid(format!("k = {k} must lie in 1..={n}")));
    }
    let at = |i: usize, j: usize| sim.data()[i * n + j];
    let count = |score: &dyn Fn(usize, usize) -> f64| {
        (0..n)
            .filter(|&q| {
                let own = score(q, q);
                let rank = (0..n).filter(|&j| j != q && (score(q, j) > own || (score(q, j) == own && j < q))).count();
                rank < k
            })
            .count()
    };
    let i2t = count(&|q, j| at(q, j));
    let t2i = count(&|q, j| at(j, q));
    let make = |direction, hits: usize| RetrievalResult { direction, k, hits, queries: n, recall: hits as f64 / n as f64 };
    Ok((make(Direction::ImageToText, i2t), make(Direction::TextToImage, t2i)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalReport {
    pub image_to_text: RetrievalResult,
    pub text_to_image: RetrievalResult,
    /// Tiles whose caption text also belongs to another tile. Matches are
    /// still counted by index.
    pub duplicate_captions: usize,
}

pub fn retrieval_recall(state: &ModelState, tiles: &[PreparedTile], k: usize) -> Result<RetrievalReport, EvalError> {
    if tiles.len() < k {
        return Err(EvalError::Invalid(format!("gallery of {} is smaller than k = {k}", tiles.len())));
    }
    let (v, t) = shared_embeddings(state, tiles)?;
    let n = tiles.len();
    let d = v.cols();
    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sim[i * n + j] = (0..d).map(|c| v.row(i)[c] * t.row(j)[c]).sum();
        }
    }
    let (i2t, t2i) = recall_from_similarity(&Tensor::new(vec![n, n], sim)?, k)?;
    let mut seen = BTreeMap::new();
    for t in tiles {
        *seen.entry(&t.tokens).or_insert(0usize) += 1;
    }
    let duplicate_captions = seen.values().filter(|&&c| c > 1).sum();
    Ok(RetrievalReport { image_to_text: i2t, text_to_image: t2i, duplicate_captions })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { epochs: 100, lr: 0.1, batch_size: 32, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub correct: usize,
    pub test_size: usize,
    pub classes: usize,
    /// `1 / classes`.
    pub chance: f64,
    /// Accuracy of always predicting the most frequent training label.
    pub majority: f64,
}

/// Softmax-regression probe trained with plain mini-batch SGD on features
/// standardized with training statistics. Labels are compacted to the
/// classes seen in training.
pub fn linear_probe(
    train_x: &[Vec<f64>],
    train_y: &[usize],
    test_x: &[Vec<f64>],
    test_y: &[usize],
    cfg: &ProbeConfig,
) -> Result<ProbeResult, EvalError> {
    if train_x.len() != train_y.len() || test_x.len() != test_y.len() || train_x.is_empty() || test_x.is_empty() {
        return Err(EvalError::Invalid("probe needs non-empty, aligned splits".into()));
    }
    let classes: Vec<usize> = {
        let mut c = train_y.to_vec();
        c.sort_unstable();
        c.dedup();
        c
    };
    let distinct_test = test_y.iter().collect::<std::collections::BTreeSet<_>>().len();
    if classes.len() < 2 || distinct_test < 2 {
        return Err(EvalError::Invalid("probe needs at least two classes in each split".into()));
    }
    let k = classes.len();
    let index = |y: usize| classes.binary_search(&y).ok();
    let d = train_x[0].len();
    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for x in train_x {
        mean.iter_mut().zip(x).for_each(|(m, v)| *m += v / train_x.len() as f64);
    }
    for x in train_x {
        sd.iter_mut().zip(x).zip(&mean).for_each(|((s, v), m)| *s += (v - m).powi(2) / train_x.len() as f64);
    }
    sd.iter_mut().for_each(|s| *s = s.sqrt().max(1e-8));
    let standardize = |x: &[f64]| -> Vec<f64> { x.iter().zip(&mean).zip(&sd).map(|((v, m), s)| (v - m) / s).collect() };
    let xs: Vec<Vec<f64>> = train_x.iter().map(|x| standardize(x)).collect();
    let ys: Vec<usize> = train_y.iter().map(|&y| index(y).expect("train label is listed")).collect();

    let mut w = Tensor::zeros([d, k]);
    let mut b = Tensor::zeros([k]);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let mut g = Graph::new();
            let data: Vec<f64> = batch.iter().flat_map(|&i| xs[i].iter().copied()).collect();
            let x = g.constant(Tensor::new(vec![batch.len(), d], data)?);
            let wv = g.param(w.clone());
            let bv = g.param(b.clone());
            let logits = g.linear(x, wv, Some(bv))?;
            let targets: Vec<usize> = batch.iter().map(|&i| ys[i]).collect();
            let loss = g.softmax_cross_entropy(logits, &targets)?;
            g.backward(loss)?;
            for (p, v) in [(&mut w, wv), (&mut b, bv)] {
                let grad = g.grad(v).expect("parameter reached");
                p.data_mut().iter_mut().zip(grad.data()).for_each(|(x, gr)| *x -= cfg.lr * gr);
            }
        }
    }
    let mut correct = 0;
    for (x, &y) in test_x.iter().zip(test_y) {
        let x = standardize(x);
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for c in 0..k {
            let s = b.data()[c] + (0..d).map(|j| x[j] * w.data()[j * k + c]).sum::<f64>();
            if s > best_score {
                best_score = s;
                best = c;
            }
        }
        if Some(best) == index(y) {
            correct += 1;
        }
    }
    let mut counts = vec![0usize; k];
    ys.iter().for_each(|&y| counts[y] += 1);
    let top = counts.iter().enumerate().max_by_key(|(i, c)| (**c, std::cmp::Reverse(*i))).map(|(i, _)| classes[i]);
    let majority = test_y.iter().filter(|&&y| Some(y) == top).count() as f64 / test_y.len() as f64;
    Ok(ProbeResult {
        accuracy: correct as f64 / test_y.len() as f64,
        correct,
        test_size: test_y.len(),
        classes: k,
        chance: 1.0 / k as f64,
        majority,
    })
}

/// Probe on frozen pooled latents, alongside the same probe on per-band
/// pixel means.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub encoder: ProbeResult,
    pub pixel_baseline: ProbeResult,
}

pub fn probe_encoder(
    state: &ModelState,
    train: &[PreparedTile],
    test: &[PreparedTile],
    cfg: &ProbeConfig,
) -> Result<ProbeReport, EvalError> {
    let labels = |ts: &[PreparedTile]| ts.iter().map(|t| t.dominant_class).collect::<Vec<_>>();
    let (ytr, yte) = (labels(train), labels(test));
    let encoder = linear_probe(&pooled_latents(state, train)?, &ytr, &pooled_latents(state, test)?, &yte, cfg)?;
    let means = |ts: &[PreparedTile]| ts.iter().map(|t| t.pixel_means.clone()).collect::<Vec<_>>();
    let pixel_baseline = linear_probe(&means(train), &ytr, &means(test), &yte, cfg)?;
    Ok(ProbeReport { encoder, pixel_baseline })
}

/// Mean masked error of one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityError {
    pub modality: Modality,
    /// Mean absolute error in standardized units (continuous modalities).
    pub l1: Option<f64>,
    /// Fraction of masked patches whose label is predicted (categorical).
    pub accuracy: Option<f64>,
    pub patches: usize,
}

/// Masked reconstruction error per modality, averaged over every tile and
/// every mask seed.
pub fn reconstruction_report(
    state: &ModelState,
    tiles: &[PreparedTile],
    seeds: &[u64],
    mask_ratio: f64,
) -> Result<Vec<ModalityError>, EvalError> {
    let cfg = &state.config;
    let n = cfg.num_patches();
    let grid = PatchGrid::new(cfg.grid_rows(), cfg.grid_cols());
    let mut sums: BTreeMap<Modality, (f64, usize)> = BTreeMap::new();
    for &seed in seeds {
        for (c, chunk) in tiles.chunks(EMBED_CHUNK).enumerate() {
            let b = chunk.len();
            let masks = (0..b)
                .map(|i| make_masks(grid, mask_ratio, mask_ratio.min(0.25), seed ^ ((c * EMBED_CHUNK + i) as u64) << 20))
                .collect::<Result<Vec<_>, _>>()?;
            let mut g = Graph::new();
            let theta = state.theta.bind(&mut g, false);
            let dec = state.dec.bind(&mut g, false);
            let ctx: Vec<usize> = masks.iter().flat_map(|m| m.ctx_visible.iter().copied()).collect();
            let mut data = Vec::new();
            for (t, m) in chunk.iter().zip(&masks) {
                m.ctx_visible.iter().for_each(|&p| data.extend_from_slice(t.s2().row(p)));
            }
            let x = g.constant(Tensor::new(vec![ctx.len(), cfg.patch_dim()], data)?);
            let z = encode_visible(&mut g, &theta, cfg, x, &ctx, b)?;
            let trunk = decode_trunk(&mut g, &dec, cfg, z, &ctx, b)?;
            let masked: Vec<Vec<usize>> = masks.iter().map(|m| m.masked()).collect();
            let rows: Vec<usize> =
                masked.iter().enumerate().flat_map(|(i, ms)| ms.iter().map(move |&p| i * n + p)).collect();
            for m in Modality::ALL {
                let head = state.decoders[&m].bind(&mut g, false);
                let out = decode_head(&mut g, &head, trunk, &rows)?;
                let out = g.value(out);
                let entry = sums.entry(m).or_insert((0.0, 0));
                let mut r = 0;
                for (t, ms) in chunk.iter().zip(&masked) {
                    for &p in ms {
                        let pred = out.row(r);
                        if m.is_continuous() {
                            let target = t.continuous[&m].row(p);
                            entry.0 += pred.iter().zip(target).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len() as f64;
                        } else {
                            let arg = (0..pred.len()).fold(0, |best, c| if pred[c] > pred[best] { c } else { best });
                            entry.0 += (arg == t.labels[&m][p]) as usize as f64;
                        }
                        entry.1 += 1;
                        r += 1;
                    }
                }
            }
        }
    }
    Ok(sums
        .into_iter()
        .map(|(m, (s, count))| {
            let mean = s / count.max(1) as f64;
            let (l1, accuracy) = if m.is_continuous() { (Some(mean), None) } else { (None, Some(mean)) };
            ModalityError { modality: m, l1, accuracy, patches: count }
        })
        .collect())
}

/// `key=value` lines for an evaluation report.
pub fn format_report(
    probe: Option<&ProbeReport>,
    retrieval: Option<&RetrievalReport>,
    recon: &[ModalityError],
) -> String {
    let mut s = String::new();
    if let Some(p) = probe {
        for (name, r) in [("probe.encoder", &p.encoder), ("probe.pixel_means", &p.pixel_baseline)] {
            let _ = writeln!(s, "{name}.accuracy={:.6}", r.accuracy);
            let _ = writeln!(s, "{name}.correct={}", r.correct);
            let _ = writeln!(s, "{name}.test_size={}", r.test_size);
        }
        let _ = writeln!(s, "probe.classes={}", p.encoder.classes);
        let _ = writeln!(s, "probe.chance={:.6}", p.encoder.chance);
        let _ = writeln!(s, "probe.majority={:.6}", p.encoder.majority);
    }
    if let Some(r) = retrieval {
        for res in [&r.image_to_text, &r.text_to_image] {
            let key = res.direction.key();
            let _ = writeln!(s, "retrieval.{key}.recall_at_{}={:.6}", res.k, res.recall);
            let _ = writeln!(s, "retrieval.{key}.hits={}", res.hits);
            let _ = writeln!(s, "retrieval.{key}.queries={}", res.queries);
        }
        let _ = writeln!(s, "retrieval.duplicate_captions={}", r.duplicate_captions);
    }
    for e in recon {
        let key = e.modality.key();
        if let Some(v) = e.l1 {
            let _ = writeln!(s, "recon.{key}.masked_l1={v:.6}");
        }
        if let Some(v) = e.accuracy {
            let _ = writeln!(s, "recon.{key}.masked_accuracy={v:.6}");
        }
    }
    s
}
