//! Fast correctness suites shared by the command-line self-check and the
//! acceptance tests: gradient oracles, closed-form loss values, mask
//! invariants and the caption-verifier injection harness.

use std::collections::BTreeMap;

use geomeld_autograd::{finite_diff_check_coords, numeric_gradient, Graph, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::caption::{find_conflicts, inject_contradiction, rank_candidates, verify_and_revise};
use crate::masking::{context_size, make_masks, MaskPair, PatchGrid};
use crate::model::{Modality, ModelConfig, ModelState, PreparedTile, Tokenizer};
use crate::objectives::{loss_itc, loss_jepa, loss_rec_ce, loss_rec_l1, loss_total, LossWeights};
use crate::synth::{generate_dataset, GeneratorConfig};
use crate::trainer::{build_step, Batch};

/// Outcome of one suite.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: usize,
    pub total: usize,
    pub failures: Vec<String>,
    pub notes: Vec<String>,
}

impl SuiteResult {
    fn new(name: &'static str) -> Self {
        Self { name, passed: 0, total: 0, failures: Vec::new(), notes: Vec::new() }
    }

    fn record(&mut self, ok: bool, what: impl Into<String>) {
        self.total += 1;
        if ok {
            self.passed += 1;
        } else {
            self.failures.push(what.into());
        }
    }

    pub fn ok(&self) -> bool {
        self.failures.is_empty() && self.total > 0
    }
}

/// Loss branches covered by the gradient oracle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossPart {
    Reconstruction,
    Jepa,
    Contrastive,
    Total,
}

impl LossPart {
    pub const ALL: [LossPart; 4] = [LossPart::Reconstruction, LossPart::Jepa, LossPart::Contrastive, LossPart::Total];

    pub fn key(self) -> &'static str {
        match self {
            LossPart::Reconstruction => "mpmae",
            LossPart::Jepa => "jepa",
            LossPart::Contrastive => "itc",
            LossPart::Total => "total",
        }
    }

    fn weights(self) -> LossWeights {
        let mut w = LossWeights::default();
        match self {
            LossPart::Reconstruction => {
                w.alpha = 0.0;
                w.beta = 0.0;
                // Distinct weights so the combination itself is exercised.
                for (k, m) in Modality::ALL.into_iter().enumerate() {
                    w.lambda.insert(m, 0.5 + 0.25 * k as f64);
                }
            }
            LossPart::Jepa => {
                w.lambda.values_mut().for_each(|v| *v = 0.0);
                w.alpha = 1.0;
                w.beta = 0.0;
            }
            LossPart::Contrastive => {
                w.lambda.values_mut().for_each(|v| *v = 0.0);
                w.alpha = 0.0;
                w.beta = 1.0;
                // A mild temperature keeps the oracle well conditioned.
                w.temperature = 0.5;
            }
            LossPart::Total => {}
        }
        w
    }
}

/// Small model used by the gradient oracle.
pub fn tiny_model_config(seed: u64) -> ModelConfig {
    ModelConfig {
        tile_height: 12,
        tile_width: 12,
        patch: 4,
        dim: 8,
        depth: 1,
        heads: 2,
        mlp_hidden: 12,
        pred_dim: 8,
        pred_depth: 1,
        pred_heads: 2,
        pred_hidden: 12,
        dec_dim: 8,
        dec_depth: 1,
        dec_heads: 2,
        dec_hidden: 12,
        text_width: 8,
        text_depth: 1,
        text_heads: 2,
        text_hidden: 12,
        text_dim: 10,
        max_caption_len: 8,
        proj_hidden: 12,
        shared_dim: 6,
        init_seed: seed,
    }
}

/// Random prepared tiles matching `cfg`, independent of the generator.
pub fn random_tiles(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<PreparedTile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tok = Tokenizer::new();
    let captions = ["forest with ridges", "cropland near water", "barrens on rugged peaks", "wetland plains"];
    let np = cfg.num_patches();
    (0..n)
        .map(|i| {
            let mut continuous = BTreeMap::new();
            let mut labels = BTreeMap::new();
            for m in Modality::ALL {
                match m.kind() {
                    crate::model::ModalityKind::Continuous { .. } => {
                        let d = m.output_dim(cfg.patch);
                        let data = (0..np * d).map(|_| rng.random_range(-1.5..1.5)).collect();
                        continuous.insert(m, Tensor::new(vec![np, d], data).expect("sizes"));
                    }
                    crate::model::ModalityKind::Categorical { classes } => {
                        labels.insert(m, (0..np).map(|_| rng.random_range(0..classes)).collect());
                    }
                }
            }
            PreparedTile {
                tile_id: format!("rand-{i}"),
                continuous,
                labels,
                tokens: tok.encode(captions[i % captions.len()], cfg.max_caption_len).ids,
                dominant_class: i % 9,
                pixel_means: vec![0.0; cfg.in_channels()],
            }
        })
        .collect()
}

/// Inputs of the gradient oracle: a perturbed model and one fixed batch.
pub struct OracleSetup {
    pub state: ModelState,
    pub tiles: Vec<PreparedTile>,
    pub masks: Vec<MaskPair>,
}

impl OracleSetup {
    pub fn new(seed: u64) -> Self {
        let cfg = tiny_model_config(seed);
        let mut state = ModelState::new(cfg.clone()).expect("tiny config is valid");
        // Move xi away from theta and lift zero biases so no term sits at a
        // special point.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        for (_, store) in state.trainable_groups_mut() {
            for (_, t) in store.iter_mut() {
                t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05));
            }
        }
        for (_, t) in state.xi.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.2..0.2));
        }
        let tiles = random_tiles(&cfg, 3, seed);
        let grid = PatchGrid::new(cfg.grid_rows(), cfg.grid_cols());
        let masks = (0..tiles.len()).map(|i| make_masks(grid, 0.7, 0.25, seed + i as u64).expect("valid")).collect();
        Self { state, tiles, masks }
    }

    fn batch(&self) -> Batch<'_> {
        Batch { tiles: self.tiles.iter().collect(), masks: self.masks.clone() }
    }

    /// Builds the chosen loss with every trainable parameter read from `flat`.
    pub fn loss(&self, g: &mut Graph, flat: Var, part: LossPart, corrupt: bool) -> Result<Var, TensorError> {
        let oracle = |e: String| TensorError::Oracle(e);
        let bm = self.state.bind_flat(g, flat).map_err(|e| oracle(e.to_string()))?;
        let w = part.weights();
        let sg = build_step(g, &self.state, &bm, &self.batch(), &w, false).map_err(|e| oracle(e.to_string()))?;
        let v = match part {
            LossPart::Reconstruction | LossPart::Total => sg.total,
            LossPart::Jepa => sg.jepa.ok_or_else(|| oracle("no latent branch".into()))?,
            LossPart::Contrastive => sg.itc.ok_or_else(|| oracle("no contrastive branch".into()))?,
        };
        if corrupt {
            // A term the backward pass never sees.
            let hidden = g.stop_gradient(flat);
            let sq = g.mul(hidden, hidden)?;
            let s = g.sum(sq)?;
            let s = g.scale(s, 0.1)?;
            return g.add(v, s);
        }
        Ok(v)
    }
}

/// Max relative error of the analytic gradient on one loss over a set of
/// coordinates with non-negligible gradient, plus the max absolute error on
/// a random sample of all coordinates.
pub fn gradient_error(setup: &OracleSetup, part: LossPart, corrupt: bool, seed: u64) -> Result<(f64, f64), TensorError> {
    let x = setup.state.flatten_trainable();
    let f = |g: &mut Graph, v: Var| setup.loss(g, v, part, corrupt);
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let y = f(&mut g, xv)?;
    g.backward(y)?;
    let grad = g.grad(xv).unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| grad.data()[b].abs().total_cmp(&grad.data()[a].abs()).then(a.cmp(&b)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords: Vec<usize> = order.iter().copied().take(24).collect();
    let live: Vec<usize> = order.iter().copied().filter(|&i| grad.data()[i].abs() > 1e-4).collect();
    for _ in 0..24 {
        if !live.is_empty() {
            coords.push(live[rng.random_range(0..live.len())]);
        }
    }
    coords.sort_unstable();
    coords.dedup();
    let eps = 1e-5;
    let rel = finite_diff_check_coords(f, &x, eps, &coords)?;
    let sample: Vec<usize> = (0..16).map(|_| rng.random_range(0..x.len())).collect();
    let num = numeric_gradient(&f, &x, eps, &sample)?;
    let abs = sample.iter().zip(&num).map(|(&i, n)| (grad.data()[i] - n).abs()).fold(0.0, f64::max);
    Ok((rel, abs))
}

pub const GRADIENT_TOLERANCE: f64 = 1e-3;

pub fn gradient_suite(seed: u64, corrupt: bool) -> SuiteResult {
    let mut r = SuiteResult::new("gradient-oracle");
    let setup = OracleSetup::new(seed);
    for part in LossPart::ALL {
        match gradient_error(&setup, part, corrupt, seed) {
            Ok((rel, abs)) => {
                r.notes.push(format!("{} max_rel={rel:.3e} max_abs={abs:.3e}", part.key()));
                r.record(rel < GRADIENT_TOLERANCE && abs < 1e-6, format!("{}: rel {rel:.3e} abs {abs:.3e}", part.key()));
            }
            Err(e) => r.record(false, format!("{}: {e}", part.key())),
        }
    }
    r
}

fn scalar_of(f: impl FnOnce(&mut Graph) -> Result<Var, String>) -> Result<f64, String> {
    let mut g = Graph::new();
    let v = f(&mut g)?;
    Ok(g.scalar(v))
}

/// ITC value for two orthonormal matched pairs at unit temperature.
pub fn itc_two_pairs(corrupt: bool) -> Result<f64, String> {
    scalar_of(|g| {
        let v = g.constant(Tensor::eye(2));
        let t = g.constant(Tensor::eye(2));
        let tau = if corrupt { 1.01 } else { 1.0 };
        loss_itc(g, v, t, tau).map_err(|e| e.to_string())
    })
}

pub fn loss_oracle_suite(corrupt: bool) -> SuiteResult {
    let mut r = SuiteResult::new("loss-closed-form");
    let close = |v: Result<f64, String>, want: f64, tol: f64| v.map(|x| (x - want).abs() <= tol).unwrap_or(false);

    let want = (1.0 + (-1.0f64).exp()).ln();
    let got = itc_two_pairs(corrupt);
    r.record(close(got.clone(), want, 1e-6), format!("itc B=2: {got:?} vs {want}"));

    let one = scalar_of(|g| {
        let v = g.constant(Tensor::from_rows(&[vec![0.6, 0.8]]).expect("row"));
        let t = g.constant(Tensor::from_rows(&[vec![1.0, 0.0]]).expect("row"));
        loss_itc(g, v, t, 0.07).map_err(|e| e.to_string())
    });
    r.record(one == Ok(0.0), format!("itc B=1: {one:?}"));

    let (rows, d) = (4usize, 5usize);
    let base: Vec<f64> = (0..rows * d).map(|i| (i as f64 * 0.3).cos()).collect();
    for (label, bump, want) in [("every coordinate", d, d as f64 / rows as f64), ("one coordinate", 1, 1.0 / rows as f64)] {
        let got = scalar_of(|g| {
            let mut shifted = base.clone();
            shifted.iter_mut().skip(2 * d).take(bump).for_each(|v| *v += 1.0);
            let p = g.constant(Tensor::new(vec![rows, d], shifted).expect("sizes"));
            let z = g.constant(Tensor::new(vec![rows, d], base.clone()).expect("sizes"));
            loss_jepa(g, p, z).map_err(|e| e.to_string())
        });
        r.record(close(got.clone(), want, 1e-12), format!("jepa {label}: {got:?} vs {want}"));
    }

    let got = scalar_of(|g| {
        let one = g.constant(Tensor::scalar(1.0));
        loss_total(g, one, Some(one), Some(one), 0.5, 0.4).map_err(|e| e.to_string())
    });
    r.record(close(got.clone(), 1.9, 1e-12), format!("total of unit parts: {got:?}"));

    let got = scalar_of(|g| {
        let t = Tensor::new(vec![3, 4], (0..12).map(|i| i as f64).collect()).expect("sizes");
        let shifted = Tensor::new(vec![3, 4], t.data().iter().map(|v| v - 0.75).collect()).expect("sizes");
        let (p, t) = (g.constant(shifted), g.constant(t));
        loss_rec_l1(g, p, t, &[0, 2]).map_err(|e| e.to_string())
    });
    r.record(close(got.clone(), 0.75, 1e-12), format!("l1 constant offset: {got:?}"));

    let got = scalar_of(|g| {
        let l = g.constant(Tensor::zeros([3, 9]));
        loss_rec_ce(g, l, &[1, 4, 8], &[0, 1, 2]).map_err(|e| e.to_string())
    });
    r.record(close(got.clone(), 9f64.ln(), 1e-12), format!("ce uniform logits: {got:?}"));
    r
}

/// Disjointness and context-size invariants over `draws` seeded masks.
pub fn mask_suite(draws: usize, ratio: f64, seed: u64) -> SuiteResult {
    let mut r = SuiteResult::new("mask-invariants");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..draws {
        let grid = PatchGrid::new(rng.random_range(2..17), rng.random_range(2..17));
        let s = rng.random::<u64>();
        let ok = match make_masks(grid, ratio, 0.25, s) {
            Ok(m) => {
                m.ctx_visible.len() == context_size(grid.len(), ratio)
                    && m.tgt_visible.iter().all(|t| !m.ctx_visible.contains(t))
                    && m.ctx_visible.iter().chain(&m.tgt_visible).all(|&i| i < grid.len())
            }
            Err(_) => false,
        };
        r.record(ok, format!("grid {}x{} seed {s}", grid.rows, grid.cols));
    }
    r
}

/// Injects one contradicting claim per tile and checks that the verifier
/// flags it and that revisions are fixed points. Also checks that the
/// ranked-best candidate has the top score.
pub fn caption_suite(tiles: usize, seed: u64) -> SuiteResult {
    let mut r = SuiteResult::new("caption-injection");
    let data = match generate_dataset(tiles, &GeneratorConfig::square(32), seed) {
        Ok(d) => d,
        Err(e) => {
            r.record(false, format!("generation failed: {e}"));
            return r;
        }
    };
    let mut flagged = 0;
    for (i, t) in data.iter().enumerate() {
        let (bad, rule) = inject_contradiction(&t.attributes, &t.caption, i);
        let ok = match verify_and_revise(&t.attributes, &bad) {
            Ok((fixed, conflicts)) => {
                let hit = conflicts.iter().any(|c| c.rule == rule);
                flagged += hit as usize;
                let stable = verify_and_revise(&t.attributes, &fixed).is_ok_and(|(again, c)| again == fixed && c.is_empty());
                hit && stable && find_conflicts(&fixed, &t.attributes).is_empty()
            }
            Err(_) => false,
        };
        r.record(ok, format!("{}: {bad}", t.tile_id));
        let candidates = [t.caption.clone(), bad.clone()];
        let ranked = rank_candidates(&t.attributes, &candidates).is_ok_and(|(s, b)| s.iter().all(|&x| x <= s[b]));
        r.record(ranked, format!("{}: ranking", t.tile_id));
    }
    r.notes.push(format!("flagged {flagged}/{tiles}"));
    r
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SelfCheckOptions {
    /// Test hook: corrupts the losses so the suites must fail.
    pub corrupt_loss: bool,
}

pub fn run_all(opts: SelfCheckOptions) -> Vec<SuiteResult> {
    vec![
        gradient_suite(7, opts.corrupt_loss),
        loss_oracle_suite(opts.corrupt_loss),
        mask_suite(1000, 0.7, 11),
        caption_suite(100, 41),
    ]
}
