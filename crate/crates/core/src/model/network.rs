//! Forward passes. Every function works on a batch of `batch` samples laid
//! out as consecutive groups of rows, with one grid position per row.

use geomeld_autograd::{Graph, Tensor, Var};

use super::layers::{block, linear, mlp, norm};
use super::text::PAD;
use super::{Bound, BoundModel, ModalityKind, Modality, ModelConfig, ModelError};

fn check_positions(positions: &[usize], size: usize) -> Result<(), ModelError> {
    match positions.iter().find(|&&p| p >= size) {
        Some(&p) => Err(ModelError::Index { what: "patch grid", index: p, size }),
        None => Ok(()),
    }
}

fn group_len(rows: usize, batch: usize, what: &str) -> Result<usize, ModelError> {
    if batch == 0 || rows == 0 || !rows.is_multiple_of(batch) {
        return Err(ModelError::Contract(format!("{rows} {what} rows cannot be split into {batch} samples")));
    }
    Ok(rows / batch)
}

/// Online or target encoder over visible patches. `x` holds `[batch*n, C*p*p]`
/// patch rows and `positions` their grid cells.
pub fn encode_visible(
    g: &mut Graph,
    enc: &Bound,
    cfg: &ModelConfig,
    x: Var,
    positions: &[usize],
    batch: usize,
) -> Result<Var, ModelError> {
    let rows = g.value(x).rows();
    let seq = group_len(rows, batch, "patch")?;
    if positions.len() != rows {
        return Err(ModelError::Contract(format!("{} positions for {rows} patches", positions.len())));
    }
    check_positions(positions, cfg.num_patches())?;
    let h = linear(g, enc, "embed", x)?;
    let pos = g.gather_rows(enc.var("pos")?, positions)?;
    let mut h = g.add(h, pos)?;
    for i in 0..cfg.depth {
        h = block(g, enc, &format!("block{i}"), h, batch, seq, cfg.heads, None)?;
    }
    norm(g, enc, "norm", h)
}

/// Scatters context latents onto the full grid, fills the rest with the
/// learned mask token and mixes with the decoder trunk. Returns
/// `[batch*N, dec_dim]` in grid order.
pub fn decode_trunk(
    g: &mut Graph,
    dec: &Bound,
    cfg: &ModelConfig,
    z: Var,
    ctx_positions: &[usize],
    batch: usize,
) -> Result<Var, ModelError> {
    let n = cfg.num_patches();
    let rows = g.value(z).rows();
    let n_ctx = group_len(rows, batch, "latent")?;
    if ctx_positions.len() != rows {
        return Err(ModelError::Contract(format!("{} positions for {rows} latents", ctx_positions.len())));
    }
    check_positions(ctx_positions, n)?;
    let h = linear(g, dec, "in", z)?;
    let with_mask = g.concat_rows(h, dec.var("mask")?)?;
    let mut index = vec![rows; batch * n];
    for b in 0..batch {
        for k in 0..n_ctx {
            let slot = &mut index[b * n + ctx_positions[b * n_ctx + k]];
            if *slot != rows {
                return Err(ModelError::Contract("duplicate context position".into()));
            }
            *slot = b * n_ctx + k;
        }
    }
    let full = g.gather_rows(with_mask, &index)?;
    let grid: Vec<usize> = (0..batch * n).map(|i| i % n).collect();
    let pos = g.gather_rows(dec.var("pos")?, &grid)?;
    let mut h = g.add(full, pos)?;
    for i in 0..cfg.dec_depth {
        h = block(g, dec, &format!("block{i}"), h, batch, n, cfg.dec_heads, None)?;
    }
    Ok(h)
}

/// Per-patch head over the selected trunk rows: patch values for continuous
/// modalities, class logits for categorical ones.
pub fn decode_head(g: &mut Graph, head: &Bound, trunk: Var, rows: &[usize]) -> Result<Var, ModelError> {
    let h = g.gather_rows(trunk, rows)?;
    let h = norm(g, head, "norm", h)?;
    mlp(g, head, "mlp", h)
}

/// Full-grid decoding of one modality for a batch: `[batch*N, C*p*p]` patch
/// rows or `[batch*N, classes]` logits.
pub fn decode_modality(
    g: &mut Graph,
    model: &BoundModel,
    cfg: &ModelConfig,
    z: Var,
    ctx_positions: &[usize],
    batch: usize,
    modality: Modality,
) -> Result<Var, ModelError> {
    let head = model
        .decoders
        .get(&modality)
        .ok_or_else(|| ModelError::Config(format!("no decoder registered for {}", modality.key())))?;
    let trunk = decode_trunk(g, &model.dec, cfg, z, ctx_positions, batch)?;
    let all: Vec<usize> = (0..batch * cfg.num_patches()).collect();
    decode_head(g, head, trunk, &all)
}

/// Reassembles one sample's decoded patch rows into a `C x H x W` buffer.
pub fn unpatchify(rows: &Tensor, cfg: &ModelConfig, modality: Modality) -> Result<Vec<f64>, ModelError> {
    let ModalityKind::Continuous { channels } = modality.kind() else {
        return Err(ModelError::Config(format!("{} is categorical", modality.key())));
    };
    let (h, w) = (cfg.tile_height, cfg.tile_width);
    let mut out = vec![0.0; channels * h * w];
    let all: Vec<usize> = (0..cfg.num_patches()).collect();
    crate::masking::scatter_visible(rows, &mut out, channels, h, w, &all, cfg.patch)?;
    Ok(out)
}

/// Predicts target-position latents from context latents. Each sample's
/// sequence is its context tokens followed by one query per target.
#[allow(clippy::too_many_arguments)]
pub fn jepa_predict(
    g: &mut Graph,
    phi: &Bound,
    cfg: &ModelConfig,
    z_ctx: Var,
    ctx_positions: &[usize],
    tgt_positions: &[usize],
    batch: usize,
) -> Result<Var, ModelError> {
    let n = cfg.num_patches();
    let rows = g.value(z_ctx).rows();
    let n_ctx = group_len(rows, batch, "context")?;
    let n_tgt = group_len(tgt_positions.len(), batch, "target")?;
    if ctx_positions.len() != rows {
        return Err(ModelError::Contract(format!("{} positions for {rows} context latents", ctx_positions.len())));
    }
    check_positions(ctx_positions, n)?;
    check_positions(tgt_positions, n)?;
    for b in 0..batch {
        let ctx = &ctx_positions[b * n_ctx..(b + 1) * n_ctx];
        if let Some(p) = tgt_positions[b * n_tgt..(b + 1) * n_tgt].iter().find(|p| ctx.contains(p)) {
            return Err(ModelError::Contract(format!("target position {p} is also a context position")));
        }
    }
    let h = linear(g, phi, "in", z_ctx)?;
    let pos = g.gather_rows(phi.var("pos")?, ctx_positions)?;
    let ctx = g.add(h, pos)?;
    let q = g.gather_rows(phi.var("mask")?, &vec![0; tgt_positions.len()])?;
    let q_pos = g.gather_rows(phi.var("pos")?, tgt_positions)?;
    let q = g.add(q, q_pos)?;
    let both = g.concat_rows(ctx, q)?;
    let seq = n_ctx + n_tgt;
    let mut order = Vec::with_capacity(batch * seq);
    let mut queries = Vec::with_capacity(batch * n_tgt);
    for b in 0..batch {
        order.extend(b * n_ctx..(b + 1) * n_ctx);
        queries.extend((0..n_tgt).map(|j| b * seq + n_ctx + j));
        order.extend(rows + b * n_tgt..rows + (b + 1) * n_tgt);
    }
    let mut h = g.gather_rows(both, &order)?;
    for i in 0..cfg.pred_depth {
        h = block(g, phi, &format!("block{i}"), h, batch, seq, cfg.pred_heads, None)?;
    }
    let h = norm(g, phi, "norm", h)?;
    let h = g.gather_rows(h, &queries)?;
    linear(g, phi, "out", h)
}

/// Caption encoder. `tokens` holds `batch` padded sequences of equal length;
/// padding is excluded from attention keys and from the mean. Returns
/// `[batch, text_dim]`.
pub fn encode_caption(
    g: &mut Graph,
    psi: &Bound,
    cfg: &ModelConfig,
    tokens: &[u32],
    batch: usize,
) -> Result<Var, ModelError> {
    let seq = group_len(tokens.len(), batch, "token")?;
    if seq > cfg.max_caption_len {
        return Err(ModelError::Contract(format!("{seq} tokens exceed the limit of {}", cfg.max_caption_len)));
    }
    let vocab = g.value(psi.var("tok")?).rows();
    let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
    if let Some(&bad) = ids.iter().find(|&&t| t >= vocab) {
        return Err(ModelError::Index { what: "vocabulary", index: bad, size: vocab });
    }
    let valid: Vec<bool> = tokens.iter().map(|&t| t != PAD).collect();
    if valid.chunks(seq).any(|s| !s.iter().any(|&v| v)) {
        return Err(ModelError::EmptyCaption);
    }
    let h = g.gather_rows(psi.var("tok")?, &ids)?;
    let slots: Vec<usize> = (0..tokens.len()).map(|i| i % seq).collect();
    let pos = g.gather_rows(psi.var("pos")?, &slots)?;
    let mut h = g.add(h, pos)?;
    for i in 0..cfg.text_depth {
        h = block(g, psi, &format!("block{i}"), h, batch, seq, cfg.text_heads, Some(&valid))?;
    }
    let h = norm(g, psi, "norm", h)?;
    let h = linear(g, psi, "out", h)?;
    Ok(g.group_mean(h, seq, Some(&valid))?)
}

/// Mean-pools context latents per sample and maps both sides into the
/// shared space with unit-norm rows. Returns `([batch, d_c], [batch, d_c])`.
pub fn pool_and_project(
    g: &mut Graph,
    proj_v: &Bound,
    proj_t: &Bound,
    z_ctx: Var,
    t: Var,
    batch: usize,
) -> Result<(Var, Var), ModelError> {
    let seq = group_len(g.value(z_ctx).rows(), batch, "context")?;
    if g.value(t).rows() != batch {
        return Err(ModelError::Contract(format!("{} caption embeddings for {batch} tiles", g.value(t).rows())));
    }
    let v = g.group_mean(z_ctx, seq, None)?;
    let v = mlp(g, proj_v, "mlp", v)?;
    let t = mlp(g, proj_t, "mlp", t)?;
    Ok((g.l2_normalize(v)?, g.l2_normalize(t)?))
}
