use std::collections::HashMap;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Whether a stored tensor is optimised or only carried along (e.g. running statistics).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    Buffer,
}

/// Named tensors of a model, in insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Scalar = f64> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    kinds: Vec<ParamKind>,
    index: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            kinds: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, mut tensor: Tensor<T>, kind: ParamKind) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        tensor.set_requires_grad(kind == ParamKind::Trainable);
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        self.kinds.push(kind);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| &self.tensors[id.0])
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.kinds[id.0]
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

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>, ParamKind)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .zip(&self.kinds)
            .map(|((n, t), &k)| (n.as_str(), t, k))
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.iter()
            .filter(|(_, _, k)| *k == ParamKind::Trainable)
            .map(|(_, t, _)| t.numel())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Replaces the values of an existing entry, keeping its gradient state.
    pub fn set_values(&mut self, id: ParamId, values: &[T]) -> Result<()> {
        let t = &mut self.tensors[id.0];
        if t.numel() != values.len() {
            return Err(Error::shape(format!(
                "`{}` holds {} values, got {}",
                self.names[id.0],
                t.numel(),
                values.len()
            )));
        }
        t.data_mut().copy_from_slice(values);
        Ok(())
    }

    /// Converts every tensor to another precision (gradients dropped).
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (name, t, kind) in self.iter() {
            out.insert(name, t.cast(), kind).expect("names are unique");
        }
        out
    }
}
