use std::collections::HashMap;

use geomeld_autograd::{Graph, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use super::ModelError;

/// Named tensors in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.tensors[i] = t,
            None => {
                self.index.insert(name.clone(), self.names.len());
                self.names.push(name);
                self.tensors.push(t);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.names == other.names && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.shape() == b.shape())
    }

    /// Concatenation of every tensor's values, in store order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Binds each tensor as a slice of the column vector `flat`, starting at
    /// `*offset`, so gradients with respect to `flat` cover the store.
    pub fn bind_slices(&self, g: &mut Graph, flat: Var, offset: &mut usize) -> Result<Bound<'_>, ModelError> {
        let mut vars = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let idx: Vec<usize> = (*offset..*offset + t.len()).collect();
            let rows = g.gather_rows(flat, &idx)?;
            vars.push(g.reshape(rows, t.shape())?);
            *offset += t.len();
        }
        Ok(Bound { store: self, vars })
    }

    /// Places every tensor on the graph as a leaf.
    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> Bound<'_> {
        let vars = self.tensors.iter().map(|t| g.leaf(t.clone(), requires_grad)).collect();
        Bound { store: self, vars }
    }
}

/// Graph handles for a bound [`ParamStore`].
pub struct Bound<'a> {
    store: &'a ParamStore,
    vars: Vec<Var>,
}

impl Bound<'_> {
    pub fn var(&self, name: &str) -> Result<Var, ModelError> {
        self.store
            .index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients of every bound tensor, in store order. `None` where no
    /// gradient reached the tensor.
    pub fn grads(&self, g: &Graph) -> Vec<Option<Tensor>> {
        self.vars.iter().map(|&v| g.grad(v)).collect()
    }
}

pub(crate) struct Init<'r, R: Rng> {
    pub rng: &'r mut R,
}

impl<R: Rng> Init<'_, R> {
    pub fn normal(&mut self, shape: &[usize], std: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| std * self.rng.sample::<f64, _>(StandardNormal)).collect();
        Tensor::new(shape.to_vec(), data).expect("shape product")
    }

    /// Glorot-scaled weight for a `[fan_in x fan_out]` matrix.
    pub fn weight(&mut self, fan_in: usize, fan_out: usize) -> Tensor {
        self.normal(&[fan_in, fan_out], (2.0 / (fan_in + fan_out) as f64).sqrt())
    }

    pub fn linear(&mut self, store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) {
        store.insert(format!("{name}.w"), self.weight(fan_in, fan_out));
        store.insert(format!("{name}.b"), Tensor::zeros([fan_out]));
    }

    pub fn norm(&mut self, store: &mut ParamStore, name: &str, width: usize) {
        store.insert(format!("{name}.g"), Tensor::full([width], 1.0));
        store.insert(format!("{name}.b"), Tensor::zeros([width]));
    }
}
