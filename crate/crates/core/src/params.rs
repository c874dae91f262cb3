//! Named parameter storage shared by every trainable model.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which L2 coefficient applies to a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegGroup {
    /// Matrix-factorization embeddings (`l2_mf`).
    Mf,
    /// Convolutional branch: its embeddings, filters and biases (`l2_cnn`).
    Cnn,
    /// Unregularized.
    Free,
}

impl RegGroup {
    pub(crate) fn tag(self) -> u8 {
        match self {
            RegGroup::Mf => 0,
            RegGroup::Cnn => 1,
            RegGroup::Free => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(RegGroup::Mf),
            1 => Some(RegGroup::Cnn),
            2 => Some(RegGroup::Free),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub group: RegGroup,
    /// Embedding tables are row-gathered; everything else is used whole.
    pub is_embedding: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, group: RegGroup) -> ParamId {
        self.push(name.into(), tensor, group, false)
    }

    pub fn add_embedding(&mut self, name: impl Into<String>, tensor: Tensor, group: RegGroup) -> ParamId {
        self.push(name.into(), tensor, group, true)
    }

    fn push(&mut self, name: String, tensor: Tensor, group: RegGroup, is_embedding: bool) -> ParamId {
        self.params.push(Param {
            name,
            tensor,
            group,
            is_embedding,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.clear_grad();
        }
    }

    /// Adds per-parameter gradient buffers (as produced by a tape) into the
    /// gradient slots.
    pub fn accumulate_grads(&mut self, grads: &[Option<Vec<f64>>]) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::invalid(
                "accumulate_grads",
                format!("{} gradient slots for {} parameters", grads.len(), self.params.len()),
            ));
        }
        for (p, g) in self.params.iter_mut().zip(grads) {
            let Some(g) = g else { continue };
            if g.len() != p.tensor.len() {
                return Err(Error::Shape {
                    op: "accumulate_grads",
                    lhs: p.tensor.shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
            for (a, b) in p.tensor.grad_mut().iter_mut().zip(g) {
                *a += b;
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.tensor.is_finite())
    }

    /// Same names, shapes and groups in the same order.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.name == b.name && a.tensor.shape() == b.tensor.shape() && a.group == b.group
            })
    }
}

pub fn uniform_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    let dist = Uniform::new(-bound, bound).expect("bound must be positive");
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect())
}

/// He-style normal init with standard deviation `sqrt(2 / fan_in)`.
pub fn kaiming_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect())
}
