use indexmap::IndexMap;

use crate::error::{DiffError, Result};
use crate::tensor::Tensor;

/// Named trainable arrays, iterated in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    entries: IndexMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<usize> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(DiffError::DuplicateParameter(name));
        }
        let (idx, _) = self.entries.insert_full(name, value);
        Ok(idx)
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.entries
            .get_index_of(name)
            .ok_or_else(|| DiffError::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn by_index(&self, idx: usize) -> &Tensor {
        &self.entries[idx]
    }

    pub fn by_index_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.entries[idx]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// One gradient array per parameter, aligned with a [`ParameterSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(params: &ParameterSet) -> Self {
        Self {
            grads: params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub(crate) fn from_vec(grads: Vec<Tensor>) -> Self {
        Self { grads }
    }

    pub(crate) fn into_vec(self) -> Vec<Tensor> {
        self.grads
    }

    pub fn get(&self, idx: usize) -> &Tensor {
        &self.grads[idx]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.grads.iter()
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .fold(0.0, |acc, g| acc + g.sum_squares())
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(Tensor::is_finite)
    }

    /// Rescales all gradients so their joint L2 norm is at most `max_norm`.
    /// Returns the norm before clipping and whether clipping happened.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> (f64, bool) {
        let norm = self.global_norm();
        if norm > max_norm && norm.is_finite() {
            let scale = max_norm / norm;
            for g in &mut self.grads {
                for v in g.data_mut() {
                    *v *= scale;
                }
            }
            (norm, true)
        } else {
            (norm, false)
        }
    }
}
