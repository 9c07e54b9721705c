//! Reconstruction, latent-prediction and contrastive losses and their
//! weighted combination.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use geomeld_autograd::{Graph, Tensor, TensorError, Var};
use thiserror::Error;

use crate::model::Modality;

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_BETA: f64 = 0.4;
pub const DEFAULT_TEMPERATURE: f64 = 0.07;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("label {label} outside {classes} classes")]
    Index { label: usize, classes: usize },
    #[error("contract violation: {0}")]
    Contract(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub temperature: f64,
    pub lambda: BTreeMap<Modality, f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            temperature: DEFAULT_TEMPERATURE,
            lambda: Modality::ALL.into_iter().map(|m| (m, 1.0)).collect(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.alpha) || !ok(self.beta) || self.lambda.values().any(|&l| !ok(l)) {
            return Err(ObjectiveError::Config("loss weights must be finite and >= 0".into()));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(ObjectiveError::Config(format!("temperature {} must be > 0", self.temperature)));
        }
        Ok(())
    }

    pub fn lambda(&self, m: Modality) -> f64 {
        self.lambda.get(&m).copied().unwrap_or(0.0)
    }

    pub fn reconstruction_active(&self) -> bool {
        self.lambda.values().any(|&l| l > 0.0)
    }
}

/// Scalar values of one evaluation of the combined objective.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub rec: BTreeMap<Modality, f64>,
    pub jepa: f64,
    pub itc: f64,
    pub total: f64,
    pub weights: LossWeights,
}

impl LossReport {
    /// Recomputes the weighted sum from the parts.
    pub fn recomputed_total(&self) -> f64 {
        let rec: f64 = self.rec.iter().map(|(m, v)| self.weights.lambda(*m) * v).sum();
        rec + self.weights.alpha * self.jepa + self.weights.beta * self.itc
    }

    /// `key=value` fields separated by spaces, reconstruction terms as
    /// `rec.<modality>`.
    pub fn fields(&self) -> String {
        let mut s = String::new();
        for (m, v) in &self.rec {
            let _ = write!(s, "rec.{}={v:.17e} ", m.key());
        }
        let _ = write!(s, "jepa={:.17e} itc={:.17e} total={:.17e}", self.jepa, self.itc, self.total);
        s
    }
}

fn select(g: &mut Graph, x: Var, positions: &[usize]) -> Result<Var, ObjectiveError> {
    let rows = g.value(x).rows();
    if let Some(&p) = positions.iter().find(|&&p| p >= rows) {
        return Err(ObjectiveError::Contract(format!("masked position {p} outside {rows} rows")));
    }
    Ok(g.gather_rows(x, positions)?)
}

/// Mean absolute error over the rows listed in `masked`. Each row is one
/// patch; the mean runs over channels and pixels too.
pub fn loss_rec_l1(g: &mut Graph, pred: Var, target: Var, masked: &[usize]) -> Result<Var, ObjectiveError> {
    if masked.is_empty() {
        return Err(ObjectiveError::Config("reconstruction needs at least one masked position".into()));
    }
    if g.value(pred).shape() != g.value(target).shape() {
        return Err(ObjectiveError::Contract(format!(
            "prediction {:?} and target {:?} differ in shape",
            g.value(pred).shape(),
            g.value(target).shape()
        )));
    }
    let p = select(g, pred, masked)?;
    let t = select(g, target, masked)?;
    Ok(g.l1(p, t)?)
}

/// Mean cross-entropy over the rows listed in `masked`. `labels` has one
/// entry per row of `logits`.
pub fn loss_rec_ce(g: &mut Graph, logits: Var, labels: &[usize], masked: &[usize]) -> Result<Var, ObjectiveError> {
    if masked.is_empty() {
        return Err(ObjectiveError::Config("reconstruction needs at least one masked position".into()));
    }
    let (rows, classes) = (g.value(logits).rows(), g.value(logits).cols());
    if labels.len() != rows {
        return Err(ObjectiveError::Contract(format!("{} labels for {rows} rows", labels.len())));
    }
    let l = select(g, logits, masked)?;
    let targets: Vec<usize> = masked.iter().map(|&i| labels[i]).collect();
    if let Some(&label) = targets.iter().find(|&&t| t >= classes) {
        return Err(ObjectiveError::Index { label, classes });
    }
    Ok(g.softmax_cross_entropy(l, &targets)?)
}

/// `sum_m lambda_m * L_m`. Modalities with zero weight may be absent.
pub fn loss_mpmae(
    g: &mut Graph,
    parts: &BTreeMap<Modality, Var>,
    lambda: &BTreeMap<Modality, f64>,
) -> Result<Var, ObjectiveError> {
    let mut terms = Vec::new();
    for (m, &w) in lambda {
        match parts.get(m) {
            Some(&v) => terms.push((v, w)),
            None if w == 0.0 => {}
            None => return Err(ObjectiveError::Config(format!("no reconstruction loss for {}", m.key()))),
        }
    }
    if terms.is_empty() {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    Ok(g.weighted_sum(&terms)?)
}

/// `(1/|targets|) * sum_j ||pred_j - sg(target_j)||^2`. The stop-gradient is
/// applied here so callers cannot forget it.
pub fn loss_jepa(g: &mut Graph, pred: Var, target: Var) -> Result<Var, ObjectiveError> {
    if g.value(pred).shape() != g.value(target).shape() || g.value(pred).rows() == 0 {
        return Err(ObjectiveError::Contract(format!(
            "predicted latents {:?} and targets {:?} differ in shape",
            g.value(pred).shape(),
            g.value(target).shape()
        )));
    }
    let count = g.value(pred).rows() as f64;
    let t = g.stop_gradient(target);
    let d = g.sub(pred, t)?;
    let sq = g.mul(d, d)?;
    let s = g.sum(sq)?;
    Ok(g.scale(s, 1.0 / count)?)
}

/// Symmetric InfoNCE over `s = v t^T / temperature` with matches on the
/// diagonal.
pub fn loss_itc(g: &mut Graph, v: Var, t: Var, temperature: f64) -> Result<Var, ObjectiveError> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(ObjectiveError::Config(format!("temperature {temperature} must be > 0")));
    }
    let b = g.value(v).rows();
    if b == 0 || g.value(v).shape() != g.value(t).shape() {
        return Err(ObjectiveError::Contract(format!(
            "image {:?} and text {:?} embeddings do not pair up",
            g.value(v).shape(),
            g.value(t).shape()
        )));
    }
    let tt = g.transpose(t)?;
    let s = g.matmul(v, tt)?;
    let s = g.scale(s, 1.0 / temperature)?;
    let diag: Vec<usize> = (0..b).collect();
    let i2t = g.softmax_cross_entropy(s, &diag)?;
    let st = g.transpose(s)?;
    let t2i = g.softmax_cross_entropy(st, &diag)?;
    Ok(g.weighted_sum(&[(i2t, 0.5), (t2i, 0.5)])?)
}

/// `mpmae + alpha * jepa + beta * itc`; absent branches contribute zero.
pub fn loss_total(
    g: &mut Graph,
    mpmae: Var,
    jepa: Option<Var>,
    itc: Option<Var>,
    alpha: f64,
    beta: f64,
) -> Result<Var, ObjectiveError> {
    let mut terms = vec![(mpmae, 1.0)];
    terms.extend(jepa.map(|j| (j, alpha)));
    terms.extend(itc.map(|i| (i, beta)));
    Ok(g.weighted_sum(&terms)?)
}

/// Standardizes each row to zero mean and unit variance, for per-patch
/// target normalization.
pub fn normalize_patch_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    let c = out.cols().max(1);
    for row in out.data_mut().chunks_mut(c) {
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = (var + 1e-6).sqrt();
        row.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    }
    out
}
