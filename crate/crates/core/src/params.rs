//! Named parameter tensors and the mutable normalization state that travels
//! with them.

use std::collections::BTreeMap;

use crate::autodiff::{NormState, Tape, Var};
use crate::error::{Error, Result};
use crate::layers::WhiteningState;
use crate::tensor::Tensor;

/// Learnable tensors keyed by slash-separated path, e.g. `video/netvlad/centers`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, value: Tensor) {
        self.tensors.insert(path.into(), value);
    }

    pub fn get(&self, path: &str) -> Result<&Tensor> {
        self.tensors
            .get(path)
            .ok_or_else(|| Error::config(format!("missing parameter {path:?}")))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(path)
            .ok_or_else(|| Error::config(format!("missing parameter {path:?}")))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.tensors.contains_key(path)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Records every parameter on `tape` as a named leaf. Returns the leaves
    /// in path order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<(String, Var)> {
        self.tensors
            .iter()
            .map(|(path, value)| (path.clone(), tape.bind_leaf(path.clone(), value.clone())))
            .collect()
    }
}

/// Running statistics owned by a model: batch-norm sites and whitening sites.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelState {
    pub norms: BTreeMap<String, NormState>,
    pub whitening: BTreeMap<String, WhiteningState>,
}

impl ModelState {
    pub fn norm_mut(&mut self, path: &str) -> Result<&mut NormState> {
        self.norms
            .get_mut(path)
            .ok_or_else(|| Error::config(format!("missing batch-norm state {path:?}")))
    }

    pub fn whitening_mut(&mut self, path: &str) -> Result<&mut WhiteningState> {
        self.whitening
            .get_mut(path)
            .ok_or_else(|| Error::config(format!("missing whitening state {path:?}")))
    }
}

/// Whether a forward pass trains (batch statistics, state updates) or infers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn is_training(self) -> bool {
        self == Mode::Train
    }
}
