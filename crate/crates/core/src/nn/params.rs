use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::nn::tensor::Tensor;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(i: usize) -> Self {
        Self(i)
    }
}

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Ordered collection of named parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: Vec<NamedTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> ParamId {
        self.entries.push(NamedTensor {
            name: name.to_string(),
            tensor,
        });
        ParamId(self.entries.len() - 1)
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

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[NamedTensor] {
        &self.entries
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    /// Replaces every tensor with the same-named, same-shaped tensor from
    /// `entries`. Used when restoring checkpoints.
    pub fn load_entries(&mut self, entries: &[NamedTensor]) -> Result<()> {
        if entries.len() != self.entries.len() {
            return Err(Error::Checkpoint(alloc::format!(
                "expected {} tensors, found {}",
                self.entries.len(),
                entries.len()
            )));
        }
        for (mine, theirs) in self.entries.iter_mut().zip(entries) {
            if mine.name != theirs.name || mine.tensor.shape() != theirs.tensor.shape() {
                return Err(Error::Checkpoint(alloc::format!(
                    "tensor `{}` {:?} does not match `{}` {:?}",
                    mine.name,
                    mine.tensor.shape(),
                    theirs.name,
                    theirs.tensor.shape()
                )));
            }
            if !theirs.tensor.is_finite() {
                return Err(Error::NonFinite(theirs.name.clone()));
            }
            mine.tensor = theirs.tensor.clone();
        }
        Ok(())
    }
}

/// Gradient buffers shaped like a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    grads: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store.entries.iter().map(|e| vec![0.0; e.tensor.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub(crate) fn add_to(&mut self, id: ParamId, g: &[f64]) {
        for (o, v) in self.grads[id.0].iter_mut().zip(g) {
            *o += v;
        }
    }

    /// Adds another accumulator elementwise.
    pub fn add(&mut self, other: &ParamGrads) -> Result<()> {
        if self.grads.len() != other.grads.len() {
            return Err(shape_err!("gradient sets of different arity"));
        }
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.grads.iter_mut().flatten().for_each(|v| *v *= s);
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.grads.iter().map(|g| g.as_slice())
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|v| v.is_finite())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Uniform(−a, a) with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(
    rng: &mut R,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Tensor {
    let a = math::sqrt(6.0 / (fan_in + fan_out) as f64);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive extents")
}
