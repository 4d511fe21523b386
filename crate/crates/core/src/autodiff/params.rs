use std::collections::BTreeMap;

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub trainable: bool,
}

/// Named parameters with a per-entry trainable flag. Iteration order is the
/// lexicographic order of names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    entries: BTreeMap<String, Parameter>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor, trainable: bool) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Argument(format!(
                "duplicate parameter name {name:?}"
            )));
        }
        self.entries
            .insert(name.to_string(), Parameter { value, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.entries.get(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Argument(format!("unknown parameter {name:?}")))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::Argument(format!("unknown parameter {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Scalar counts `(trainable, frozen)`.
    pub fn counts(&self) -> (usize, usize) {
        self.entries.values().fold((0, 0), |(t, f), p| {
            if p.trainable {
                (t + p.value.len(), f)
            } else {
                (t, f + p.value.len())
            }
        })
    }

    /// Places every parameter on the tape. With `track_grads`, trainable
    /// entries become gradient-tracked leaves; frozen entries are always constants.
    pub fn bind(&self, tape: &mut Tape, track_grads: bool) -> BoundParams {
        let vars = self
            .entries
            .iter()
            .map(|(name, p)| {
                let var = tape.leaf(p.value.clone(), track_grads && p.trainable);
                (name.clone(), var)
            })
            .collect();
        BoundParams { vars }
    }
}

/// Tape handles for the entries of a [`ParameterStore`].
#[derive(Debug, Clone, Default)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Argument(format!("parameter {name:?} is not bound")))
    }

    /// Replaces the handle for `name`, e.g. with a leaf under finite-difference test.
    pub fn replace(&mut self, name: &str, var: Var) {
        self.vars.insert(name.to_string(), var);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}
