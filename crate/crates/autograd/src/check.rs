//! Central-difference gradient oracle.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

fn eval<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let y = f(&mut g, xv)?;
    if g.value(y).len() != 1 {
        return Err(TensorError::Oracle("function is not scalar-valued".into()));
    }
    Ok(g.scalar(y))
}

fn analytic<F>(f: &F, x: &Tensor) -> Result<Tensor>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let y = f(&mut g, xv)?;
    if g.value(y).len() != 1 {
        return Err(TensorError::Oracle("function is not scalar-valued".into()));
    }
    if g.requires_grad(y) {
        g.backward(y)?;
    }
    Ok(g.grad(xv).unwrap_or_else(|| Tensor::zeros(x.shape().to_vec())))
}

/// Central-difference derivative of `f` along the given coordinates.
pub fn numeric_gradient<F>(f: &F, x: &Tensor, eps: f64, coords: &[usize]) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut probe = x.clone();
    coords
        .iter()
        .map(|&i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + eps;
            let plus = eval(f, &probe)?;
            probe.data_mut()[i] = orig - eps;
            let minus = eval(f, &probe)?;
            probe.data_mut()[i] = orig;
            Ok((plus - minus) / (2.0 * eps))
        })
        .collect()
}

/// Largest relative disagreement `|a - n| / max(|a|, |n|, 1e-8)` between the
/// analytic gradient of `f` at `x` and central differences, over all
/// coordinates of `x`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    finite_diff_check_coords(f, x, eps, &coords)
}

/// [`finite_diff_check`] restricted to a subset of coordinates.
pub fn finite_diff_check_coords<F>(f: F, x: &Tensor, eps: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(TensorError::Oracle(format!("eps must be positive, got {eps}")));
    }
    if let Some(&bad) = coords.iter().find(|&&i| i >= x.len()) {
        return Err(TensorError::Index { op: "finite_diff_check", index: bad, size: x.len() });
    }
    let first = eval(&f, x)?;
    let second = eval(&f, x)?;
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::Oracle(format!(
            "function is not deterministic: {first} vs {second}"
        )));
    }
    let a = analytic(&f, x)?;
    let n = numeric_gradient(&f, x, eps, coords)?;
    Ok(coords
        .iter()
        .zip(&n)
        .map(|(&i, &num)| {
            let ana = a.data()[i];
            (ana - num).abs() / ana.abs().max(num.abs()).max(1e-8)
        })
        .fold(0.0, f64::max))
}
