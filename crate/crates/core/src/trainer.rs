//! Joint pretraining loop: batching, masking, forward over every active
//! branch, AdamW with decoupled weight decay, cosine schedule and EMA.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use geomeld_autograd::{Graph, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kv::{check, ConfigError, KvDoc, KvWriter};
use crate::masking::{make_masks, MaskError, MaskPair, PatchGrid};
use crate::model::{
    decode_head, decode_trunk, ema_update, encode_caption, encode_visible, jepa_predict, pool_and_project,
    prepare_tile, write_checkpoint, Checkpoint, Modality, ModelConfig, ModelError, ModelState, OptimizerSnapshot,
    PreparedTile, Tokenizer,
};
use crate::objectives::{
    loss_itc, loss_jepa, loss_mpmae, loss_rec_ce, loss_rec_l1, loss_total, normalize_patch_rows, LossReport,
    LossWeights, ObjectiveError,
};
use crate::synth::{read_manifest, read_tile, FormatError};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("non-finite gradient for {param} at step {step}")]
    NonFiniteGradient { param: String, step: u64 },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("{failed} tiles failed to load, over the budget of {budget}")]
    FailureBudget { failed: usize, budget: usize },
    #[error("data error: {0}")]
    Data(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl TrainError {
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            TrainError::NonFiniteGradient { .. }
                | TrainError::NonFiniteLoss { .. }
                | TrainError::Model(ModelError::Tensor(geomeld_autograd::TensorError::NonFinite { .. }))
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub steps: usize,
    pub batch_size: usize,
    pub lr_base: f64,
    pub weight_decay: f64,
    pub mask_ratio: f64,
    pub target_fraction: f64,
    pub ema_momentum: f64,
    pub weights: LossWeights,
    pub seed: u64,
    /// `None` means 5% of `steps`.
    pub warmup_steps: Option<usize>,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub norm_pix_loss: bool,
    pub failure_budget: usize,
    pub checkpoint_each_epoch: bool,
    pub model: ModelConfig,
}

impl TrainConfig {
    pub fn new(manifest: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            manifest: manifest.into(),
            out_dir: out_dir.into(),
            steps: 200,
            batch_size: 32,
            lr_base: 2e-3,
            weight_decay: 0.05,
            mask_ratio: 0.7,
            target_fraction: 0.25,
            ema_momentum: 0.996,
            weights: LossWeights::default(),
            seed: 0,
            warmup_steps: None,
            clip_norm: None,
            norm_pix_loss: false,
            failure_budget: 8,
            checkpoint_each_epoch: true,
            model: ModelConfig::default(),
        }
    }

    pub fn warmup(&self) -> usize {
        self.warmup_steps.unwrap_or_else(|| (self.steps as f64 * 0.05).round() as usize)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check(self.steps > 0, "train.steps", "must be positive")?;
        check(self.batch_size > 0, "train.batch_size", "must be positive")?;
        check(self.lr_base.is_finite() && self.lr_base > 0.0, "train.lr", "must be > 0")?;
        check(self.weight_decay.is_finite() && self.weight_decay >= 0.0, "train.weight_decay", "must be >= 0")?;
        check(self.mask_ratio > 0.0 && self.mask_ratio < 1.0, "train.mask_ratio", "must lie in (0, 1)")?;
        check(
            self.target_fraction > 0.0 && self.target_fraction <= self.mask_ratio,
            "train.target_fraction",
            "must lie in (0, train.mask_ratio]",
        )?;
        check((0.0..=1.0).contains(&self.ema_momentum), "train.ema", "must lie in [0, 1]")?;
        check(self.warmup() <= self.steps, "train.warmup_steps", "must not exceed train.steps")?;
        if let Some(c) = self.clip_norm {
            check(c.is_finite() && c > 0.0, "train.clip_norm", "must be > 0 (0 disables)")?;
        }
        let w = &self.weights;
        for (v, key) in [(w.alpha, "loss.alpha"), (w.beta, "loss.beta")] {
            check(v.is_finite() && v >= 0.0, key, "must be >= 0")?;
        }
        check(w.temperature.is_finite() && w.temperature > 0.0, "loss.temperature", "must be > 0")?;
        for (m, &l) in &w.lambda {
            check(l.is_finite() && l >= 0.0, &format!("loss.lambda.{}", m.key()), "must be >= 0")?;
        }
        self.model.validate()
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut doc = KvDoc::parse(text)?;
        let manifest: String = doc.require("train.manifest", "path")?;
        let out_dir: String = doc.require("train.out_dir", "path")?;
        let mut c = Self::new(manifest, out_dir);
        c.steps = doc.take_or("train.steps", "positive integer", c.steps)?;
        c.batch_size = doc.take_or("train.batch_size", "positive integer", c.batch_size)?;
        c.lr_base = doc.take_or("train.lr", "number", c.lr_base)?;
        c.weight_decay = doc.take_or("train.weight_decay", "number", c.weight_decay)?;
        c.mask_ratio = doc.take_or("train.mask_ratio", "number", c.mask_ratio)?;
        c.target_fraction = doc.take_or("train.target_fraction", "number", c.target_fraction)?;
        c.ema_momentum = doc.take_or("train.ema", "number", c.ema_momentum)?;
        c.seed = doc.take_or("train.seed", "non-negative integer", c.seed)?;
        c.warmup_steps = doc.take("train.warmup_steps", "non-negative integer")?;
        let clip: f64 = doc.take_or("train.clip_norm", "number", 0.0)?;
        c.clip_norm = (clip != 0.0).then_some(clip);
        c.norm_pix_loss = doc.take_or("train.norm_pix_loss", "true or false", c.norm_pix_loss)?;
        c.failure_budget = doc.take_or("train.failure_budget", "non-negative integer", c.failure_budget)?;
        c.checkpoint_each_epoch =
            doc.take_or("train.checkpoint_each_epoch", "true or false", c.checkpoint_each_epoch)?;
        c.weights.alpha = doc.take_or("loss.alpha", "number", c.weights.alpha)?;
        c.weights.beta = doc.take_or("loss.beta", "number", c.weights.beta)?;
        c.weights.temperature = doc.take_or("loss.temperature", "number", c.weights.temperature)?;
        for m in Modality::ALL {
            let key = format!("loss.lambda.{}", m.key());
            let v = doc.take_or(&key, "number", c.weights.lambda(m))?;
            c.weights.lambda.insert(m, v);
        }
        c.model = ModelConfig::from_doc(&mut doc)?;
        doc.finish()?;
        c.validate()?;
        Ok(c)
    }

    /// Canonical form with every default materialized.
    pub fn to_text(&self) -> String {
        let mut w = KvWriter::default();
        w.put("train.manifest", self.manifest.display());
        w.put("train.out_dir", self.out_dir.display());
        w.put("train.steps", self.steps);
        w.put("train.batch_size", self.batch_size);
        w.put("train.lr", self.lr_base);
        w.put("train.weight_decay", self.weight_decay);
        w.put("train.mask_ratio", self.mask_ratio);
        w.put("train.target_fraction", self.target_fraction);
        w.put("train.ema", self.ema_momentum);
        w.put("train.seed", self.seed);
        w.put("train.warmup_steps", self.warmup());
        w.put("train.clip_norm", self.clip_norm.unwrap_or(0.0));
        w.put("train.norm_pix_loss", self.norm_pix_loss);
        w.put("train.failure_budget", self.failure_budget);
        w.put("train.checkpoint_each_epoch", self.checkpoint_each_epoch);
        w.put("loss.alpha", self.weights.alpha);
        w.put("loss.beta", self.weights.beta);
        w.put("loss.temperature", self.weights.temperature);
        for m in Modality::ALL {
            w.put(&format!("loss.lambda.{}", m.key()), self.weights.lambda(m));
        }
        self.model.write(&mut w);
        w.finish()
    }
}

/// Linear warmup to `lr_base`, then half-cosine decay to zero at
/// `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_base: f64, warmup_steps: usize) -> f64 {
    let step = step.min(total_steps);
    if step < warmup_steps {
        return lr_base * step as f64 / warmup_steps as f64;
    }
    let span = total_steps.saturating_sub(warmup_steps);
    if span == 0 {
        return lr_base;
    }
    let progress = (step - warmup_steps) as f64 / span as f64;
    lr_base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamWHyper {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self { lr, weight_decay, beta1: ADAM_BETA1, beta2: ADAM_BETA2, eps: ADAM_EPS }
    }
}

/// First and second moments per parameter name, plus the step count used
/// for bias correction.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamWState {
    pub t: u64,
    pub moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl AdamWState {
    pub fn snapshot(&self) -> OptimizerSnapshot {
        OptimizerSnapshot {
            t: self.t,
            moments: self.moments.iter().map(|(k, (m, v))| (k.clone(), m.clone(), v.clone())).collect(),
        }
    }

    pub fn from_snapshot(s: &OptimizerSnapshot) -> Self {
        Self { t: s.t, moments: s.moments.iter().map(|(k, m, v)| (k.clone(), (m.clone(), v.clone()))).collect() }
    }
}

/// One AdamW update. Parameters whose gradient is `None` are left alone,
/// including their decay. Every gradient is checked before anything is
/// modified.
pub fn adamw_step(
    params: &mut [(String, &mut Tensor, Option<Tensor>)],
    state: &mut AdamWState,
    h: &AdamWHyper,
) -> Result<(), TrainError> {
    for (name, p, g) in params.iter() {
        if let Some(g) = g {
            if g.shape() != p.shape() {
                return Err(TrainError::Data(format!("gradient shape mismatch for {name}")));
            }
            if !g.all_finite() {
                return Err(TrainError::NonFiniteGradient { param: name.clone(), step: state.t + 1 });
            }
        }
    }
    state.t += 1;
    let bc1 = 1.0 - h.beta1.powi(state.t as i32);
    let bc2 = 1.0 - h.beta2.powi(state.t as i32);
    for (name, p, g) in params.iter_mut() {
        let Some(g) = g else { continue };
        let (m, v) = state
            .moments
            .entry(name.clone())
            .or_insert_with(|| (Tensor::zeros(p.shape().to_vec()), Tensor::zeros(p.shape().to_vec())));
        let decay = 1.0 - h.lr * h.weight_decay;
        for (((x, &gi), mi), vi) in
            p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut()).zip(v.data_mut().iter_mut())
        {
            *x *= decay;
            *mi = h.beta1 * *mi + (1.0 - h.beta1) * gi;
            *vi = h.beta2 * *vi + (1.0 - h.beta2) * gi * gi;
            *x -= h.lr * (*mi / bc1) / ((*vi / bc2).sqrt() + h.eps);
        }
    }
    Ok(())
}

/// Scales every gradient so the global norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Tiles loaded from a manifest, with failed reads counted.
#[derive(Debug)]
pub struct LoadedData {
    pub tiles: Vec<PreparedTile>,
    pub failures: Vec<String>,
}

pub fn load_dataset(manifest: &Path, model: &ModelConfig, failure_budget: usize) -> Result<LoadedData, TrainError> {
    let entries = read_manifest(manifest)?;
    if entries.is_empty() {
        return Err(TrainError::Data(format!("manifest {} lists no tiles", manifest.display())));
    }
    let tokenizer = Tokenizer::new();
    let mut tiles = Vec::with_capacity(entries.len());
    let mut failures = Vec::new();
    for e in &entries {
        let loaded = read_tile(&e.path)
            .map_err(TrainError::from)
            .and_then(|t| prepare_tile(&t, model, &tokenizer).map_err(TrainError::from));
        match loaded {
            Ok(t) => tiles.push(t),
            Err(err) => {
                failures.push(format!("{}: {err}", e.path.display()));
                if failures.len() > failure_budget {
                    return Err(TrainError::FailureBudget { failed: failures.len(), budget: failure_budget });
                }
            }
        }
    }
    Ok(LoadedData { tiles, failures })
}

/// Seed of the mask drawn for sample `slot` of step `step`.
pub fn mask_seed(seed: u64, step: u64, slot: usize) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for x in [step, slot as u64] {
        h = (h ^ x).wrapping_mul(0x1000_0000_01b3).rotate_left(29) ^ x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    }
    h
}

/// Inputs of one step, gathered into flat batched tensors.
pub struct Batch<'a> {
    pub tiles: Vec<&'a PreparedTile>,
    pub masks: Vec<MaskPair>,
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn ctx_positions(&self) -> Vec<usize> {
        self.masks.iter().flat_map(|m| m.ctx_visible.iter().copied()).collect()
    }

    pub fn tgt_positions(&self) -> Vec<usize> {
        self.masks.iter().flat_map(|m| m.tgt_visible.iter().copied()).collect()
    }

    /// Optical patch rows at the given per-sample positions.
    pub fn s2_rows(&self, pick: impl Fn(&MaskPair) -> &[usize]) -> Tensor {
        stack_rows(self.tiles.iter().zip(&self.masks).map(|(t, m)| (t.s2(), pick(m))))
    }

    pub fn tokens(&self) -> Vec<u32> {
        self.tiles.iter().flat_map(|t| t.tokens.iter().copied()).collect()
    }
}

fn stack_rows<'t>(parts: impl Iterator<Item = (&'t Tensor, &'t [usize])>) -> Tensor {
    let mut data = Vec::new();
    let mut rows = 0;
    let mut cols = 0;
    for (t, idx) in parts {
        cols = t.cols();
        for &i in idx {
            data.extend_from_slice(t.row(i));
        }
        rows += idx.len();
    }
    Tensor::new(vec![rows, cols], data).expect("row sizes match")
}

/// Builds the combined objective for one batch on `g`. Returns the total
/// loss node and the per-part nodes.
pub struct StepGraph {
    pub total: Var,
    pub rec: BTreeMap<Modality, Var>,
    pub jepa: Option<Var>,
    pub itc: Option<Var>,
}

impl StepGraph {
    pub fn report(&self, g: &Graph, weights: &LossWeights) -> LossReport {
        LossReport {
            rec: self.rec.iter().map(|(m, &v)| (*m, g.scalar(v))).collect(),
            jepa: self.jepa.map_or(0.0, |v| g.scalar(v)),
            itc: self.itc.map_or(0.0, |v| g.scalar(v)),
            total: g.scalar(self.total),
            weights: weights.clone(),
        }
    }
}

pub fn build_step(
    g: &mut Graph,
    state: &ModelState,
    bm: &crate::model::BoundModel,
    batch: &Batch,
    weights: &LossWeights,
    norm_pix_loss: bool,
) -> Result<StepGraph, TrainError> {
    let cfg = &state.config;
    let b = batch.len();
    let n = cfg.num_patches();
    let ctx_pos = batch.ctx_positions();
    let x_ctx = g.constant(batch.s2_rows(|m| &m.ctx_visible));
    let z_ctx = encode_visible(g, &bm.theta, cfg, x_ctx, &ctx_pos, b)?;

    let mut rec = BTreeMap::new();
    if weights.reconstruction_active() {
        let trunk = decode_trunk(g, &bm.dec, cfg, z_ctx, &ctx_pos, b)?;
        let masked: Vec<Vec<usize>> = batch.masks.iter().map(MaskPair::masked).collect();
        let rows: Vec<usize> =
            masked.iter().enumerate().flat_map(|(i, ms)| ms.iter().map(move |&p| i * n + p)).collect();
        let all: Vec<usize> = (0..rows.len()).collect();
        for m in Modality::ALL {
            if weights.lambda(m) == 0.0 {
                continue;
            }
            let head = bm.decoders.get(&m).ok_or_else(|| ModelError::Config(format!("no decoder for {}", m.key())))?;
            let out = decode_head(g, head, trunk, &rows)?;
            let loss = if m.is_continuous() {
                let mut target =
                    stack_rows(batch.tiles.iter().zip(&masked).map(|(t, ms)| (&t.continuous[&m], ms.as_slice())));
                if norm_pix_loss {
                    target = normalize_patch_rows(&target);
                }
                let target = g.constant(target);
                loss_rec_l1(g, out, target, &all)?
            } else {
                let labels: Vec<usize> =
                    batch.tiles.iter().zip(&masked).flat_map(|(t, ms)| ms.iter().map(|&p| t.labels[&m][p])).collect();
                loss_rec_ce(g, out, &labels, &all)?
            };
            rec.insert(m, loss);
        }
    }
    let mpmae = loss_mpmae(g, &rec, &weights.lambda)?;

    let jepa = if weights.alpha > 0.0 {
        let tgt_pos = batch.tgt_positions();
        let x_tgt = g.constant(batch.s2_rows(|m| &m.tgt_visible));
        let z_tgt = encode_visible(g, &bm.xi, cfg, x_tgt, &tgt_pos, b)?;
        let pred = jepa_predict(g, &bm.phi, cfg, z_ctx, &ctx_pos, &tgt_pos, b)?;
        Some(loss_jepa(g, pred, z_tgt)?)
    } else {
        None
    };

    let itc = if weights.beta > 0.0 {
        let t = encode_caption(g, &bm.psi, cfg, &batch.tokens(), b)?;
        let (v, t) = pool_and_project(g, &bm.proj_v, &bm.proj_t, z_ctx, t, b)?;
        Some(loss_itc(g, v, t, weights.temperature)?)
    } else {
        None
    };

    let total = loss_total(g, mpmae, jepa, itc, weights.alpha, weights.beta)?;
    Ok(StepGraph { total, rec, jepa, itc })
}

/// Model, optimizer and schedule position of a run in progress.
pub struct Trainer<'d> {
    pub config: TrainConfig,
    pub state: ModelState,
    pub optim: AdamWState,
    pub step: u64,
    tiles: &'d [PreparedTile],
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    grid: PatchGrid,
}

/// Per-step record written to the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub report: LossReport,
    pub wall_ms: f64,
}

impl StepRecord {
    pub fn to_line(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "step={} lr={:.17e} {} wall_ms={:.3}", self.step, self.lr, self.report.fields(), self.wall_ms);
        s
    }
}

impl<'d> Trainer<'d> {
    pub fn new(config: TrainConfig, tiles: &'d [PreparedTile]) -> Result<Self, TrainError> {
        config.validate()?;
        if tiles.len() < config.batch_size {
            return Err(TrainError::Data(format!(
                "{} tiles cannot fill a batch of {}",
                tiles.len(),
                config.batch_size
            )));
        }
        let state = ModelState::new(config.model.clone())?;
        let grid = PatchGrid::new(config.model.grid_rows(), config.model.grid_cols());
        let mut t = Self {
            config,
            state,
            optim: AdamWState::default(),
            step: 0,
            tiles,
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
            grid,
        };
        t.shuffle();
        Ok(t)
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.tiles.len() / self.config.batch_size
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    fn shuffle(&mut self) {
        self.order = (0..self.tiles.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ self.epoch.wrapping_mul(0x9e37_79b9));
        self.order.shuffle(&mut rng);
        self.cursor = 0;
    }

    fn next_batch(&mut self) -> Result<Batch<'d>, TrainError> {
        let batch = self.batch_at(self.cursor)?;
        self.cursor += self.config.batch_size;
        Ok(batch)
    }

    fn batch_at(&self, cursor: usize) -> Result<Batch<'d>, TrainError> {
        let bs = self.config.batch_size;
        let idx = &self.order[cursor..cursor + bs];
        let tiles: Vec<&PreparedTile> = idx.iter().map(|&i| &self.tiles[i]).collect();
        let masks = (0..bs)
            .map(|slot| {
                make_masks(
                    self.grid,
                    self.config.mask_ratio,
                    self.config.target_fraction,
                    mask_seed(self.config.seed, self.step, slot),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Batch { tiles, masks })
    }

    /// Builds and differentiates the next step's graph without changing any
    /// state. Returns the loss values and the number of graph nodes.
    pub fn dry_step(&self) -> Result<(LossReport, usize), TrainError> {
        let batch = self.batch_at(self.cursor)?;
        let cfg = &self.config;
        let mut g = Graph::new();
        let bm = self.state.bind(&mut g);
        let sg = build_step(&mut g, &self.state, &bm, &batch, &cfg.weights, cfg.norm_pix_loss)?;
        let total = g.scalar(sg.total);
        if !total.is_finite() {
            return Err(TrainError::NonFiniteLoss { step: self.step + 1 });
        }
        g.backward(sg.total).map_err(ModelError::from)?;
        let report = sg.report(&g, &cfg.weights);
        Ok((report, g.len()))
    }

    /// Runs one optimization step. Returns the record and whether an epoch
    /// boundary was crossed.
    pub fn train_step(&mut self) -> Result<(StepRecord, bool), TrainError> {
        let start = Instant::now();
        let batch = self.next_batch()?;
        let cfg = &self.config;
        let mut g = Graph::new();
        let bm = self.state.bind(&mut g);
        let sg = build_step(&mut g, &self.state, &bm, &batch, &cfg.weights, cfg.norm_pix_loss)?;
        let step = self.step + 1;
        let total = g.scalar(sg.total);
        if !total.is_finite() {
            return Err(TrainError::NonFiniteLoss { step });
        }
        g.backward(sg.total).map_err(ModelError::from)?;
        let report = sg.report(&g, &cfg.weights);
        let mut grads: Vec<Vec<Option<Tensor>>> = vec![
            bm.theta.grads(&g),
            bm.phi.grads(&g),
            bm.dec.grads(&g),
        ];
        grads.extend(bm.decoders.values().map(|b| b.grads(&g)));
        grads.extend([bm.psi.grads(&g), bm.proj_v.grads(&g), bm.proj_t.grads(&g)]);
        drop(bm);
        drop(g);

        let mut flat: Vec<Option<Tensor>> = grads.into_iter().flatten().collect();
        if let Some(c) = cfg.clip_norm {
            clip_grad_norm(&mut flat, c);
        }
        let lr = cosine_lr(step as usize, cfg.steps, cfg.lr_base, cfg.warmup());
        let hyper = AdamWHyper::new(lr, cfg.weight_decay);
        let mut entries = Vec::with_capacity(flat.len());
        let mut flat = flat.into_iter();
        for (group, store) in self.state.trainable_groups_mut() {
            for (name, t) in store.iter_mut() {
                entries.push((format!("{group}/{name}"), t, flat.next().expect("one gradient per parameter")));
            }
        }
        adamw_step(&mut entries, &mut self.optim, &hyper)?;
        drop(entries);
        ema_update(&self.state.theta, &mut self.state.xi, self.config.ema_momentum)?;
        self.step = step;

        let mut boundary = false;
        if self.cursor + self.config.batch_size > self.tiles.len() {
            self.epoch += 1;
            self.shuffle();
            boundary = true;
        }
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok((StepRecord { step, lr, report, wall_ms }, boundary))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.step,
            run_config: self.config.to_text(),
            model: self.state.clone(),
            optimizer: Some(self.optim.snapshot()),
        }
    }
}

/// Result of a full run.
pub struct TrainOutcome {
    pub state: ModelState,
    pub records: Vec<StepRecord>,
    pub final_checkpoint: Option<PathBuf>,
    pub skipped_tiles: Vec<String>,
}

pub const METRICS_FILE: &str = "metrics.log";
pub const LAST_CHECKPOINT: &str = "last.gmck";
pub const FINAL_CHECKPOINT: &str = "final.gmck";

/// Trains on already prepared tiles. With `write_files` the metrics log and
/// checkpoints go under `config.out_dir`.
pub fn train_on(
    config: &TrainConfig,
    tiles: &[PreparedTile],
    write_files: bool,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainOutcome, TrainError> {
    let mut trainer = Trainer::new(config.clone(), tiles)?;
    let io = |p: &Path| {
        let path = p.display().to_string();
        move |source| TrainError::Io { path: path.clone(), source }
    };
    let mut log = if write_files {
        fs::create_dir_all(&config.out_dir).map_err(io(&config.out_dir))?;
        let path = config.out_dir.join(METRICS_FILE);
        Some((fs::File::create(&path).map_err(io(&path))?, path))
    } else {
        None
    };
    let mut pending = String::new();
    let mut records = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let (rec, boundary) = trainer.train_step()?;
        on_step(&rec);
        pending.push_str(&rec.to_line());
        pending.push('\n');
        records.push(rec);
        if boundary {
            if let Some((f, path)) = log.as_mut() {
                f.write_all(pending.as_bytes()).map_err(io(path))?;
                pending.clear();
                if config.checkpoint_each_epoch {
                    write_checkpoint(&config.out_dir.join(LAST_CHECKPOINT), &trainer.checkpoint())?;
                }
            }
        }
    }
    let mut final_checkpoint = None;
    if let Some((f, path)) = log.as_mut() {
        f.write_all(pending.as_bytes()).map_err(io(path))?;
        f.sync_all().map_err(io(path))?;
        let ck = config.out_dir.join(FINAL_CHECKPOINT);
        write_checkpoint(&ck, &trainer.checkpoint())?;
        final_checkpoint = Some(ck);
    }
    Ok(TrainOutcome { state: trainer.state, records, final_checkpoint, skipped_tiles: Vec::new() })
}

/// Loads the manifest named in the config and trains, writing the metrics
/// log and checkpoints.
pub fn train(config: &TrainConfig, on_step: impl FnMut(&StepRecord)) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let data = load_dataset(&config.manifest, &config.model, config.failure_budget)?;
    let mut out = train_on(config, &data.tiles, true, on_step)?;
    out.skipped_tiles = data.failures;
    Ok(out)
}
