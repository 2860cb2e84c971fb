use super::{Gradients, Real, Tape, Tensor, TensorError, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Ordered collection of named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor.with_grad());
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Total number of trainable scalars.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Records every parameter as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t)).collect()
    }

    /// Records every parameter as a constant (inference).
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }

    /// Moves gradients for `bound` out of `grads` into each tensor's `grad`.
    pub fn collect_grads(&mut self, bound: &[Var], grads: &mut Gradients<T>) {
        for (t, &v) in self.tensors.iter_mut().zip(bound) {
            t.grad = grads.take(v);
        }
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad = None;
        }
    }

    /// Replaces parameter values, checking names and shapes.
    pub fn load_values(&mut self, other: &[(String, Tensor<T>)]) -> Result<(), TensorError> {
        if other.len() != self.tensors.len() {
            return Err(TensorError::invalid(
                "load_values",
                format!("expected {} parameters, got {}", self.tensors.len(), other.len()),
            ));
        }
        for ((name, t), (oname, o)) in self.names.iter().zip(&self.tensors).zip(other) {
            if name != oname || t.shape() != o.shape() {
                return Err(TensorError::invalid(
                    "load_values",
                    format!("parameter {name} {:?} does not match {oname} {:?}", t.shape(), o.shape()),
                ));
            }
        }
        for (t, (_, o)) in self.tensors.iter_mut().zip(other) {
            t.data_mut().copy_from_slice(o.data());
            t.grad = None;
        }
        Ok(())
    }
}

impl<T: Real> ParamStore<T> {
    /// Copies values for every name present in both stores (shapes must
    /// agree); returns how many were copied.
    pub fn copy_matching_from(&mut self, other: &ParamStore<T>) -> Result<usize, TensorError> {
        let mut copied = 0;
        for (name, src) in other.iter() {
            if let Some(id) = self.find(name) {
                let dst = self.get_mut(id);
                if dst.shape() != src.shape() {
                    return Err(TensorError::ShapeMismatch {
                        op: "copy_matching_from",
                        expected: dst.shape().to_vec(),
                        got: src.shape().to_vec(),
                    });
                }
                dst.data_mut().copy_from_slice(src.data());
                copied += 1;
            }
        }
        Ok(copied)
    }
}
