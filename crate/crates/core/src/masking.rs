//! Patch-grid masks shared by the reconstruction and latent-prediction
//! branches, plus patch gather/scatter.

use geomeld_autograd::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("patch index {index} outside grid of {size}")]
    Index { index: usize, size: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
}

impl PatchGrid {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    pub fn for_raster(height: usize, width: usize, patch: usize) -> Result<Self, MaskError> {
        if patch == 0 || !height.is_multiple_of(patch) || !width.is_multiple_of(patch) {
            return Err(MaskError::Config(format!("{height}x{width} is not divisible by patch {patch}")));
        }
        Ok(Self { rows: height / patch, cols: width / patch })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPair {
    pub grid: PatchGrid,
    /// Ascending indices seen by the context encoder.
    pub ctx_visible: Vec<usize>,
    /// Ascending indices whose latents the predictor must produce.
    pub tgt_visible: Vec<usize>,
    pub seed: u64,
}

impl MaskPair {
    /// Every patch not visible to the context encoder, ascending.
    pub fn masked(&self) -> Vec<usize> {
        let mut seen = vec![false; self.grid.len()];
        for &i in &self.ctx_visible {
            seen[i] = true;
        }
        (0..self.grid.len()).filter(|&i| !seen[i]).collect()
    }
}

pub fn context_size(n: usize, ratio: f64) -> usize {
    ((1.0 - ratio) * n as f64).round() as usize
}

pub fn target_size(n: usize, target_fraction: f64) -> usize {
    (target_fraction * n as f64).round() as usize
}

pub fn make_masks(grid: PatchGrid, ratio: f64, target_fraction: f64, seed: u64) -> Result<MaskPair, MaskError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(MaskError::Config(format!("mask ratio {ratio} outside (0, 1)")));
    }
    if !(target_fraction > 0.0 && target_fraction <= ratio) {
        return Err(MaskError::Config(format!(
            "target fraction {target_fraction} must lie in (0, mask ratio {ratio}]"
        )));
    }
    let n = grid.len();
    let n_ctx = context_size(n, ratio);
    let n_tgt = target_size(n, target_fraction);
    if n_ctx == 0 || n_tgt == 0 {
        return Err(MaskError::Config(format!(
            "grid of {n} patches gives {n_ctx} context and {n_tgt} target patches"
        )));
    }
    if n_ctx + n_tgt > n {
        return Err(MaskError::Config(format!("{n_ctx} context plus {n_tgt} target patches exceed {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut ctx_visible = order[..n_ctx].to_vec();
    let mut tgt_visible = order[n_ctx..n_ctx + n_tgt].to_vec();
    ctx_visible.sort_unstable();
    tgt_visible.sort_unstable();
    Ok(MaskPair { grid, ctx_visible, tgt_visible, seed })
}

/// Flattens the listed patches of a `[channels x height x width]` buffer into
/// rows of `channels * patch * patch` values, channel-major then raster order.
pub fn gather_visible(
    x: &[f64],
    channels: usize,
    height: usize,
    width: usize,
    visible: &[usize],
    patch: usize,
) -> Result<Tensor, MaskError> {
    let grid = PatchGrid::for_raster(height, width, patch)?;
    if x.len() != channels * height * width {
        return Err(MaskError::Config(format!(
            "buffer of {} values is not {channels}x{height}x{width}",
            x.len()
        )));
    }
    let dim = channels * patch * patch;
    let mut out = Vec::with_capacity(visible.len() * dim);
    for &p in visible {
        if p >= grid.len() {
            return Err(MaskError::Index { index: p, size: grid.len() });
        }
        let (r, c) = (p / grid.cols, p % grid.cols);
        for ch in 0..channels {
            for dy in 0..patch {
                let row = (ch * height + r * patch + dy) * width + c * patch;
                out.extend_from_slice(&x[row..row + patch]);
            }
        }
    }
    Ok(Tensor::new(vec![visible.len(), dim], out).expect("sizes match"))
}

/// Inverse of [`gather_visible`]: writes patch rows back into `out`.
pub fn scatter_visible(
    patches: &Tensor,
    out: &mut [f64],
    channels: usize,
    height: usize,
    width: usize,
    visible: &[usize],
    patch: usize,
) -> Result<(), MaskError> {
    let grid = PatchGrid::for_raster(height, width, patch)?;
    let dim = channels * patch * patch;
    if patches.rows() != visible.len() || (!visible.is_empty() && patches.cols() != dim) {
        return Err(MaskError::Config(format!(
            "patch tensor {:?} does not hold {} patches of {dim}",
            patches.shape(),
            visible.len()
        )));
    }
    if out.len() != channels * height * width {
        return Err(MaskError::Config("output buffer has the wrong size".into()));
    }
    for (k, &p) in visible.iter().enumerate() {
        if p >= grid.len() {
            return Err(MaskError::Index { index: p, size: grid.len() });
        }
        let (r, c) = (p / grid.cols, p % grid.cols);
        let src = patches.row(k);
        let mut j = 0;
        for ch in 0..channels {
            for dy in 0..patch {
                let row = (ch * height + r * patch + dy) * width + c * patch;
                out[row..row + patch].copy_from_slice(&src[j..j + patch]);
                j += patch;
            }
        }
    }
    Ok(())
}
