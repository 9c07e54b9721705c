//! Learnable components: online and target encoders, latent predictor,
//! per-modality decoders, caption encoder and contrastive projection heads.

mod checkpoint;
mod config;
mod layers;
mod modality;
mod network;
mod params;
mod text;

use std::collections::BTreeMap;

use geomeld_autograd::{Graph, Tensor, TensorError, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kv::ConfigError;
use crate::masking::MaskError;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, OptimizerSnapshot,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::ModelConfig;
pub use layers::zero_block;
pub use modality::{patch_modes, prepare_tile, Modality, ModalityKind, ModalitySpec, PreparedTile};
pub use network::{
    decode_head, decode_modality, decode_trunk, encode_caption, encode_visible, jepa_predict, pool_and_project,
    unpatchify,
};
pub use params::{Bound, ParamStore};
pub use text::{TokenizedCaption, Tokenizer, BOS, EOS, PAD, UNK};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    ConfigFile(#[from] ConfigError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("index {index} outside {what} of size {size}")]
    Index { what: &'static str, index: usize, size: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("caption has no tokens besides padding")]
    EmptyCaption,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Every parameter group of the model. `xi` mirrors `theta` and is only ever
/// changed by [`ema_update`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub theta: ParamStore,
    pub xi: ParamStore,
    pub phi: ParamStore,
    /// Shared decoder trunk: input projection, mask token, positions, blocks.
    pub dec: ParamStore,
    /// Per-modality decoder heads.
    pub decoders: BTreeMap<Modality, ParamStore>,
    pub psi: ParamStore,
    pub proj_v: ParamStore,
    pub proj_t: ParamStore,
    pub vocab_size: usize,
}

/// The whole model placed on one graph.
pub struct BoundModel<'a> {
    pub theta: Bound<'a>,
    pub xi: Bound<'a>,
    pub phi: Bound<'a>,
    pub dec: Bound<'a>,
    pub decoders: BTreeMap<Modality, Bound<'a>>,
    pub psi: Bound<'a>,
    pub proj_v: Bound<'a>,
    pub proj_t: Bound<'a>,
}

impl ModelState {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let vocab_size = Tokenizer::new().vocab_size();
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut init = params::Init { rng: &mut rng };
        let c = &config;
        let n = c.num_patches();

        let mut theta = ParamStore::new();
        init.linear(&mut theta, "embed", c.patch_dim(), c.dim);
        theta.insert("pos", init.normal(&[n, c.dim], 0.02));
        for i in 0..c.depth {
            layers::init_block(&mut init, &mut theta, &format!("block{i}"), c.dim, c.mlp_hidden);
        }
        init.norm(&mut theta, "norm", c.dim);
        let xi = theta.clone();

        let mut phi = ParamStore::new();
        init.linear(&mut phi, "in", c.dim, c.pred_dim);
        phi.insert("mask", init.normal(&[1, c.pred_dim], 0.02));
        phi.insert("pos", init.normal(&[n, c.pred_dim], 0.02));
        for i in 0..c.pred_depth {
            layers::init_block(&mut init, &mut phi, &format!("block{i}"), c.pred_dim, c.pred_hidden);
        }
        init.norm(&mut phi, "norm", c.pred_dim);
        init.linear(&mut phi, "out", c.pred_dim, c.dim);

        let mut dec = ParamStore::new();
        init.linear(&mut dec, "in", c.dim, c.dec_dim);
        dec.insert("mask", init.normal(&[1, c.dec_dim], 0.02));
        dec.insert("pos", init.normal(&[n, c.dec_dim], 0.02));
        for i in 0..c.dec_depth {
            layers::init_block(&mut init, &mut dec, &format!("block{i}"), c.dec_dim, c.dec_hidden);
        }
        let mut decoders = BTreeMap::new();
        for m in Modality::ALL {
            let mut head = ParamStore::new();
            init.norm(&mut head, "norm", c.dec_dim);
            init.linear(&mut head, "mlp.fc1", c.dec_dim, c.dec_hidden);
            init.linear(&mut head, "mlp.fc2", c.dec_hidden, m.output_dim(c.patch));
            decoders.insert(m, head);
        }

        let mut psi = ParamStore::new();
        psi.insert("tok", init.normal(&[vocab_size, c.text_width], 0.02));
        psi.insert("pos", init.normal(&[c.max_caption_len, c.text_width], 0.02));
        for i in 0..c.text_depth {
            layers::init_block(&mut init, &mut psi, &format!("block{i}"), c.text_width, c.text_hidden);
        }
        init.norm(&mut psi, "norm", c.text_width);
        init.linear(&mut psi, "out", c.text_width, c.text_dim);

        let mut proj_v = ParamStore::new();
        init.linear(&mut proj_v, "mlp.fc1", c.dim, c.proj_hidden);
        init.linear(&mut proj_v, "mlp.fc2", c.proj_hidden, c.shared_dim);
        let mut proj_t = ParamStore::new();
        init.linear(&mut proj_t, "mlp.fc1", c.text_dim, c.proj_hidden);
        init.linear(&mut proj_t, "mlp.fc2", c.proj_hidden, c.shared_dim);

        Ok(Self { config, theta, xi, phi, dec, decoders, psi, proj_v, proj_t, vocab_size })
    }

    /// Named parameter groups in a fixed order. `xi` is included.
    pub fn groups(&self) -> Vec<(String, &ParamStore)> {
        let mut out = vec![
            ("theta".to_string(), &self.theta),
            ("xi".to_string(), &self.xi),
            ("phi".to_string(), &self.phi),
            ("dec".to_string(), &self.dec),
        ];
        for (m, p) in &self.decoders {
            out.push((format!("dec.{}", m.key()), p));
        }
        out.push(("psi".to_string(), &self.psi));
        out.push(("proj_v".to_string(), &self.proj_v));
        out.push(("proj_t".to_string(), &self.proj_t));
        out
    }

    /// Groups updated by the optimizer: everything except `xi`.
    pub fn trainable_groups_mut(&mut self) -> Vec<(String, &mut ParamStore)> {
        let mut out = vec![
            ("theta".to_string(), &mut self.theta),
            ("phi".to_string(), &mut self.phi),
            ("dec".to_string(), &mut self.dec),
        ];
        for (m, p) in self.decoders.iter_mut() {
            out.push((format!("dec.{}", m.key()), p));
        }
        out.push(("psi".to_string(), &mut self.psi));
        out.push(("proj_v".to_string(), &mut self.proj_v));
        out.push(("proj_t".to_string(), &mut self.proj_t));
        out
    }

    pub fn num_params(&self) -> usize {
        self.groups().iter().map(|(_, p)| p.num_params()).sum()
    }

    pub fn num_trainable_params(&self) -> usize {
        self.num_params() - self.xi.num_params()
    }

    /// Binds every group as gradient-tracking leaves. `xi` is bound too so
    /// tests can assert that no gradient ever reaches it.
    pub fn bind(&self, g: &mut Graph) -> BoundModel<'_> {
        BoundModel {
            theta: self.theta.bind(g, true),
            xi: self.xi.bind(g, true),
            phi: self.phi.bind(g, true),
            dec: self.dec.bind(g, true),
            decoders: self.decoders.iter().map(|(m, p)| (*m, p.bind(g, true))).collect(),
            psi: self.psi.bind(g, true),
            proj_v: self.proj_v.bind(g, true),
            proj_t: self.proj_t.bind(g, true),
        }
    }
}

impl ModelState {
    /// Every trainable value as a `[P, 1]` column, in the order used by
    /// [`ModelState::bind_flat`].
    pub fn flatten_trainable(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.num_trainable_params());
        for (name, store) in self.groups() {
            if name != "xi" {
                data.extend(store.flatten());
            }
        }
        let n = data.len();
        Tensor::new(vec![n, 1], data).expect("column length")
    }

    /// Binds trainable groups as slices of `flat` and `xi` as leaves. Used
    /// by gradient oracles that perturb the whole parameter vector.
    pub fn bind_flat(&self, g: &mut Graph, flat: Var) -> Result<BoundModel<'_>, ModelError> {
        let expected = self.num_trainable_params();
        if g.value(flat).len() != expected {
            return Err(ModelError::Contract(format!(
                "flat parameter vector has {} values, model has {expected}",
                g.value(flat).len()
            )));
        }
        let mut off = 0;
        let theta = self.theta.bind_slices(g, flat, &mut off)?;
        let xi = self.xi.bind(g, true);
        let phi = self.phi.bind_slices(g, flat, &mut off)?;
        let dec = self.dec.bind_slices(g, flat, &mut off)?;
        let mut decoders = BTreeMap::new();
        for (m, p) in &self.decoders {
            decoders.insert(*m, p.bind_slices(g, flat, &mut off)?);
        }
        let psi = self.psi.bind_slices(g, flat, &mut off)?;
        let proj_v = self.proj_v.bind_slices(g, flat, &mut off)?;
        let proj_t = self.proj_t.bind_slices(g, flat, &mut off)?;
        Ok(BoundModel { theta, xi, phi, dec, decoders, psi, proj_v, proj_t })
    }
}

/// `xi <- tau * xi + (1 - tau) * theta`, elementwise.
pub fn ema_update(theta: &ParamStore, xi: &mut ParamStore, tau: f64) -> Result<(), ModelError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(ModelError::Config(format!("EMA momentum {tau} outside [0, 1]")));
    }
    if !theta.same_layout(xi) {
        return Err(ModelError::Contract("target encoder layout differs from online encoder".into()));
    }
    for ((_, x), (_, t)) in xi.iter_mut().zip(theta.iter()) {
        for (a, b) in x.data_mut().iter_mut().zip(t.data()) {
            *a = tau * *a + (1.0 - tau) * b;
        }
    }
    Ok(())
}
