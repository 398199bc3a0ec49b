use std::collections::HashMap;

use crate::error::{config_err, shape_err, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    /// Batchnorm scale.
    Gamma,
    /// Batchnorm shift.
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    /// Running statistics are state, not learned parameters.
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor<T>,
}

/// Named model state: learned parameters plus batchnorm running statistics.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(config_err!("duplicate parameter name '{name}'"));
        }
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        self.entries.push(ParamEntry { name, kind, tensor });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<T>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Number of learned scalars (weights, biases, batchnorm scale and shift).
    pub fn count_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.kind.trainable()).map(|e| e.tensor.numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry { name: e.name.clone(), kind: e.kind, tensor: e.tensor.cast() })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Overwrites the value of `id`, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let slot = &mut self.entries[id.0];
        if slot.tensor.shape() != value.shape() {
            return Err(shape_err!(
                "parameter '{}' has shape {:?}, got {:?}",
                slot.name,
                slot.tensor.shape(),
                value.shape()
            ));
        }
        slot.tensor = value;
        Ok(())
    }

    /// Copies every value from `other`, matching entries by name.
    pub fn assign_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.len() != self.len() {
            return Err(config_err!("parameter count mismatch: {} vs {}", self.len(), other.len()));
        }
        for (_, e) in other.iter() {
            let id = self.id(&e.name).ok_or_else(|| config_err!("unknown parameter '{}'", e.name))?;
            self.set(id, e.tensor.clone())?;
        }
        Ok(())
    }
}
