//! Shared building blocks: activation tags, one-hidden-layer MLPs, layer-norm
//! affine pairs, and the naming helpers used to address parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Gelu => x.gelu(),
            Activation::Relu => x.relu(),
        }
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn uniform<R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> Result<Tensor> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-bound..=bound)).collect())
}

/// Uniform samples in `[-bound, bound]` from a fresh generator seeded with `seed`.
pub fn seeded_uniform(seed: u64, shape: &[usize], bound: f64) -> Result<Tensor> {
    uniform(&mut ChaCha8Rng::seed_from_u64(seed), shape, bound)
}

/// `act(x W1 + b1) W2 + b2`, applied to the last axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
    pub activation: Activation,
}

impl Mlp<Tensor> {
    /// Fan-in scaled uniform weights, zero biases.
    pub fn init<R: Rng>(rng: &mut R, input: usize, hidden: usize, output: usize, activation: Activation) -> Result<Self> {
        Ok(Mlp {
            w1: uniform(rng, &[input, hidden], 1.0 / (input as f64).sqrt())?,
            b1: Tensor::zeros([hidden])?,
            w2: uniform(rng, &[hidden, output], 1.0 / (hidden as f64).sqrt())?,
            b2: Tensor::zeros([output])?,
            activation,
        })
    }

    pub fn output_width(&self) -> usize {
        self.w2.last_dim()
    }
}

impl<T> Mlp<T> {
    pub fn map_named<U>(&self, prefix: &str, f: &mut impl FnMut(&str, &T) -> Result<U>) -> Result<Mlp<U>> {
        Ok(Mlp {
            w1: f(&join(prefix, "w1"), &self.w1)?,
            b1: f(&join(prefix, "b1"), &self.b1)?,
            w2: f(&join(prefix, "w2"), &self.w2)?,
            b2: f(&join(prefix, "b2"), &self.b2)?,
            activation: self.activation,
        })
    }
}

impl<'t> Mlp<Var<'t>> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let hidden = self.activation.apply(x.matmul(self.w1)?.add_row_vector(self.b1)?);
        hidden.matmul(self.w2)?.add_row_vector(self.b2)
    }
}

/// LayerNorm affine parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Norm<T> {
    pub gamma: T,
    pub beta: T,
}

impl Norm<Tensor> {
    pub fn init(width: usize) -> Result<Self> {
        Ok(Norm {
            gamma: Tensor::ones([width])?,
            beta: Tensor::zeros([width])?,
        })
    }
}

impl<T> Norm<T> {
    pub fn map_named<U>(&self, prefix: &str, f: &mut impl FnMut(&str, &T) -> Result<U>) -> Result<Norm<U>> {
        Ok(Norm {
            gamma: f(&join(prefix, "gamma"), &self.gamma)?,
            beta: f(&join(prefix, "beta"), &self.beta)?,
        })
    }
}
