//! Residual pre-norm blocks shared by every sequence network in the model.

use geomeld_autograd::{Graph, Var};
use rand::Rng;

use super::params::{Bound, Init, ParamStore};
use super::ModelError;

pub(crate) fn init_block<R: Rng>(init: &mut Init<'_, R>, store: &mut ParamStore, name: &str, width: usize, hidden: usize) {
    init.norm(store, &format!("{name}.ln1"), width);
    for proj in ["q", "k", "v", "o"] {
        init.linear(store, &format!("{name}.{proj}"), width, width);
    }
    init.norm(store, &format!("{name}.ln2"), width);
    init.linear(store, &format!("{name}.fc1"), width, hidden);
    init.linear(store, &format!("{name}.fc2"), hidden, width);
}

pub(crate) fn linear(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Result<Var, ModelError> {
    Ok(g.linear(x, p.var(&format!("{name}.w"))?, Some(p.var(&format!("{name}.b"))?))?)
}

pub(crate) fn norm(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Result<Var, ModelError> {
    Ok(g.layer_norm(x, p.var(&format!("{name}.g"))?, p.var(&format!("{name}.b"))?)?)
}

/// `x + attn(ln1(x))`, then `x + mlp(ln2(x))`, over `batch` sequences of
/// length `seq`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn block(
    g: &mut Graph,
    p: &Bound,
    name: &str,
    x: Var,
    batch: usize,
    seq: usize,
    heads: usize,
    key_mask: Option<&[bool]>,
) -> Result<Var, ModelError> {
    let h = norm(g, p, &format!("{name}.ln1"), x)?;
    let q = linear(g, p, &format!("{name}.q"), h)?;
    let k = linear(g, p, &format!("{name}.k"), h)?;
    let v = linear(g, p, &format!("{name}.v"), h)?;
    let a = g.attention(q, k, v, batch, seq, heads, key_mask)?;
    let o = linear(g, p, &format!("{name}.o"), a)?;
    let x = g.add(x, o)?;
    let h = norm(g, p, &format!("{name}.ln2"), x)?;
    let h = linear(g, p, &format!("{name}.fc1"), h)?;
    let h = g.gelu(h)?;
    let h = linear(g, p, &format!("{name}.fc2"), h)?;
    Ok(g.add(x, h)?)
}

/// Two-layer MLP head: `fc2(gelu(fc1(x)))`.
pub(crate) fn mlp(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Result<Var, ModelError> {
    let h = linear(g, p, &format!("{name}.fc1"), x)?;
    let h = g.gelu(h)?;
    linear(g, p, &format!("{name}.fc2"), h)
}

/// Sets the residual branch outputs of a block to zero so it acts as the
/// identity.
pub fn zero_block(store: &mut ParamStore, name: &str) -> Result<(), ModelError> {
    for key in ["o.w", "o.b", "fc2.w", "fc2.b"] {
        let full = format!("{name}.{key}");
        let t = store.get_mut(&full).ok_or(ModelError::MissingParam(full))?;
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(())
}
