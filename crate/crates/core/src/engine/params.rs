use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{dim_err, Error, Result};

/// Index of a parameter inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    name: String,
    tensor: Tensor,
    /// Rows of a 2-D table that the optimizer never touches (PAD, frozen
    /// pre-trained embeddings).
    frozen_rows: Vec<bool>,
}

/// Named collection of trainable tensors.
///
/// Once training stops a `ParamSet` is treated as an immutable snapshot;
/// forward passes only borrow it, so it can be shared across threads.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<Entry>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.entries.len());
        let rows = tensor.rows();
        self.by_name.insert(name.clone(), id);
        self.entries.push(Entry {
            name,
            tensor: tensor.with_requires_grad(true),
            frozen_rows: vec![false; rows],
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn freeze_row(&mut self, id: ParamId, row: usize) {
        self.entries[id.0].frozen_rows[row] = true;
    }

    pub fn frozen_rows(&self, id: ParamId) -> &[bool] {
        &self.entries[id.0].frozen_rows
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    /// Scalar count of parameters whose name starts with `prefix`.
    pub fn num_scalars_with_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(|e| e.tensor.numel())
            .sum()
    }

    /// Copies values from `other` for every name present in both sets.
    pub fn copy_matching(&mut self, other: &ParamSet) -> Result<usize> {
        let mut copied = 0;
        for e in &mut self.entries {
            if let Some(src) = other.by_name(&e.name) {
                if src.shape() != e.tensor.shape() {
                    return Err(dim_err!(
                        "parameter {} has shape {:?}, source has {:?}",
                        e.name,
                        e.tensor.shape(),
                        src.shape()
                    ));
                }
                e.tensor.data_mut().copy_from_slice(src.data());
                copied += 1;
            }
        }
        Ok(copied)
    }

    /// Writes accumulated gradients into each tensor's `grad` slot.
    pub fn attach_grads(&mut self, grads: &Gradients) {
        for (i, e) in self.entries.iter_mut().enumerate() {
            match grads.get(ParamId(i)) {
                Some(g) => e.tensor.set_grad(g.to_vec()).expect("gradient length"),
                None => e.tensor.clear_grad(),
            }
        }
    }
}

/// Gradients keyed by [`ParamId`]; a `None` slot means the parameter was
/// not reached.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    slots: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn new(num_params: usize) -> Self {
        Gradients {
            slots: vec![None; num_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.slots.get(id.0).and_then(|s| s.as_deref())
    }

    pub fn slot_mut(&mut self, id: ParamId, len: usize) -> &mut Vec<f64> {
        if self.slots.len() <= id.0 {
            self.slots.resize(id.0 + 1, None);
        }
        self.slots[id.0].get_or_insert_with(|| vec![0.0; len])
    }

    /// `self += other`, slot by slot.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (i, slot) in other.slots.iter().enumerate() {
            if let Some(g) = slot {
                let dst = self.slot_mut(ParamId(i), g.len());
                for (d, s) in dst.iter_mut().zip(g) {
                    *d += s;
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.slots.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.slots
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_deref().map(|g| (ParamId(i), g)))
    }
}
