use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors of one model.
///
/// Parameters flagged `sparse` are row tables (embeddings) whose gradients
/// arrive as touched rows only.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    sparse: Vec<bool>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
            sparse: Vec::new(),
        }
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.push(name.into(), tensor, false)
    }

    pub fn add_sparse(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.push(name.into(), tensor, true)
    }

    fn push(&mut self, name: String, tensor: Tensor<T>, sparse: bool) -> ParamId {
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        self.sparse.push(sparse);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn is_sparse(&self, id: ParamId) -> bool {
        self.sparse[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Result<ParamId> {
        self.find(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.tensors
            .iter()
            .enumerate()
            .map(move |(i, t)| (ParamId(i), self.names[i].as_str(), t))
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            sparse: self.sparse.clone(),
        }
    }
}

/// Gradient for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamGrad<T> {
    Dense(Vec<T>),
    /// Row-sparse gradient of a `rows × width` table.
    Rows {
        width: usize,
        rows: BTreeMap<usize, Vec<T>>,
    },
}

impl<T: Scalar> ParamGrad<T> {
    pub fn all_finite(&self) -> bool {
        match self {
            ParamGrad::Dense(g) => g.iter().all(|v| v.is_finite()),
            ParamGrad::Rows { rows, .. } => rows.values().flatten().all(|v| v.is_finite()),
        }
    }

    /// Materialise as a dense buffer of `len` elements.
    pub fn to_dense(&self, len: usize) -> Vec<T> {
        match self {
            ParamGrad::Dense(g) => g.clone(),
            ParamGrad::Rows { width, rows } => {
                let mut out = vec![T::zero(); len];
                for (&r, g) in rows {
                    out[r * width..(r + 1) * width].copy_from_slice(g);
                }
                out
            }
        }
    }
}

/// Gradients of a scalar loss with respect to every parameter of a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub(crate) grads: Vec<Option<ParamGrad<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn empty(n: usize) -> Self {
        Gradients { grads: vec![None; n] }
    }

    /// `None` when the loss does not depend on the parameter.
    pub fn get(&self, id: ParamId) -> Option<&ParamGrad<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn dense(&self, id: ParamId, len: usize) -> Vec<T> {
        self.get(id)
            .map(|g| g.to_dense(len))
            .unwrap_or_else(|| vec![T::zero(); len])
    }
}
