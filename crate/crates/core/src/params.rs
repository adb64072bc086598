//! Named parameter storage shared by the network modules.

use std::collections::HashMap;

use crate::error::{MstError, Result};
use crate::rng::{self, Rng64};
use crate::tensor::{Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Insertion-ordered map from parameter name to tensor.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Kaiming-uniform style initialisation, U(−1/√fan_in, 1/√fan_in).
    pub fn add_uniform(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut Rng64) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        self.add(name, rng::uniform(rng, shape, -bound, bound))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.id(name).map(|id| self.get_mut(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.values.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Places every parameter on `tape`, trainable or frozen.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Binding {
        let vars = self
            .values
            .iter()
            .map(|v| if trainable { tape.param(v.clone()) } else { tape.constant(v.clone()) })
            .collect();
        Binding { vars }
    }

    /// Replaces all values from `(name, tensor)` pairs that must match this
    /// store's names and shapes exactly.
    pub fn replace_all(&mut self, entries: Vec<(String, Tensor<T>)>) -> Result<()> {
        let mut incoming: HashMap<String, Tensor<T>> = HashMap::with_capacity(entries.len());
        for (name, t) in entries {
            if !self.index.contains_key(&name) {
                return Err(MstError::Integrity(format!("unexpected tensor {name}")));
            }
            if incoming.insert(name.clone(), t).is_some() {
                return Err(MstError::Integrity(format!("duplicate tensor {name}")));
            }
        }
        let mut staged = Vec::with_capacity(self.values.len());
        for (name, current) in self.names.iter().zip(&self.values) {
            let t = incoming.remove(name).ok_or_else(|| MstError::Integrity(format!("missing tensor {name}")))?;
            if t.shape() != current.shape() {
                return Err(MstError::Integrity(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    current.shape()
                )));
            }
            staged.push(t);
        }
        self.values = staged;
        Ok(())
    }
}

/// Tape handles for every parameter of a store.
#[derive(Debug, Clone)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    /// Handles for a store's parameters in insertion order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
