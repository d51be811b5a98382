use crate::error::{shape_err, Result};
use crate::tensor::{Element, ParamId, Tensor};

#[derive(Debug, Clone)]
pub struct ParamEntry<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    /// Buffers such as batch-norm running statistics are not trainable.
    pub trainable: bool,
}

/// Named tensors owned by a model, addressed by [`ParamId`].
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>, trainable: bool) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            tensor,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn num_trainable_elements(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.len())
            .sum()
    }

    /// Adds collected tape gradients into the matching parameters.
    pub fn accumulate_grads(&mut self, grads: Vec<(ParamId, Vec<T>)>) {
        for (id, g) in grads {
            self.entries[id.0].tensor.accumulate_grad(&g);
        }
    }

    pub fn zero_grads(&mut self) {
        self.entries.iter_mut().for_each(|e| e.tensor.zero_grad());
    }

    /// Overwrites the value of `name`, checking the shape.
    pub fn set(&mut self, name: &str, data: &Tensor<T>) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| shape_err!("no parameter named {name:?}"))?;
        let t = &mut self.entries[id.0].tensor;
        if t.shape() != data.shape() {
            return Err(shape_err!(
                "{name}: expected shape {:?}, got {:?}",
                t.shape(),
                data.shape()
            ));
        }
        t.data_mut().copy_from_slice(data.data());
        Ok(())
    }
}
