use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::ops::{self, ConvGrads, LayerNormCache};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

/// Named parameters in registration order, with optional gradients.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Invalid(format!("duplicate parameter name {name:?}")));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value,
            grad: None,
        });
        Ok(ParamId(id))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// A zeroed gradient buffer matching every parameter.
    pub fn zero_grads(&self) -> Gradients {
        Gradients(self.params.iter().map(|p| p.value.zeros_like()).collect())
    }

    pub fn set_grads(&mut self, grads: Gradients) -> Result<()> {
        if grads.0.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                grads.0.len(),
                self.params.len()
            )));
        }
        for (p, g) in self.params.iter_mut().zip(grads.0) {
            if g.shape() != p.value.shape() {
                return Err(Error::Shape(format!(
                    "gradient of {} has shape {:?}, parameter {:?}",
                    p.name,
                    g.shape(),
                    p.value.shape()
                )));
            }
            p.grad = Some(g);
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }
}

/// Gradient accumulator laid out like a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn accumulate(&mut self, id: ParamId, g: &Tensor) {
        self.0[id.0].add_assign(g);
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.0[id.0]
    }

    /// Element-wise sum, in the order given.
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.0 {
            for v in t.data_mut() {
                *v *= s;
            }
        }
    }
}

/// Seeded generator for parameter initialization.
pub type InitRng = Xoshiro256PlusPlus;

pub fn init_rng(seed: u64) -> InitRng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Kaiming-uniform: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform(rng: &mut InitRng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

/// Fully connected layer `y = x W + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut InitRng, name: &str, input: usize, output: usize) -> Result<Self> {
        Ok(Linear {
            w: store.register(format!("{name}.weight"), kaiming_uniform(rng, &[input, output], input))?,
            b: store.register(format!("{name}.bias"), Tensor::zeros(&[output]))?,
        })
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        ops::linear(x, store.get(self.w), store.get(self.b))
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&self, store: &ParamStore, x: &Tensor, dy: &Tensor, grads: &mut Gradients) -> Tensor {
        let g = ops::linear_backward(x, store.get(self.w), dy);
        grads.accumulate(self.w, &g.dw);
        grads.accumulate(self.b, &g.db);
        g.dx
    }
}

/// 2-D convolution with bias.
#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut InitRng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        pad: usize,
    ) -> Result<Self> {
        let fan_in = in_ch * kernel * kernel;
        Ok(Conv2d {
            w: store.register(
                format!("{name}.weight"),
                kaiming_uniform(rng, &[out_ch, in_ch, kernel, kernel], fan_in),
            )?,
            b: store.register(format!("{name}.bias"), Tensor::zeros(&[out_ch]))?,
            stride: 1,
            pad,
        })
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        ops::conv2d(x, store.get(self.w), Some(store.get(self.b)), self.stride, self.pad)
    }

    pub fn backward(&self, store: &ParamStore, x: &Tensor, dy: &Tensor, grads: &mut Gradients) -> Tensor {
        let ConvGrads { dx, dw, db } = ops::conv2d_backward(x, store.get(self.w), self.stride, self.pad, dy);
        grads.accumulate(self.w, &dw);
        grads.accumulate(self.b, &db);
        dx
    }

    /// Parameter gradients only, for a layer fed directly by input data.
    pub fn backward_params(&self, store: &ParamStore, x: &Tensor, dy: &Tensor, grads: &mut Gradients) {
        let g = ops::conv2d_backward_params(x, store.get(self.w), self.stride, self.pad, dy);
        grads.accumulate(self.w, &g.dw);
        grads.accumulate(self.b, &g.db);
    }
}

/// Layer normalization over the last axis with affine parameters.
#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.register(format!("{name}.gamma"), Tensor::full(&[dim], 1.0))?,
            beta: store.register(format!("{name}.beta"), Tensor::zeros(&[dim]))?,
        })
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<(Tensor, LayerNormCache)> {
        ops::layer_norm(x, store.get(self.gamma), store.get(self.beta))
    }

    pub fn backward(&self, store: &ParamStore, cache: &LayerNormCache, dy: &Tensor, grads: &mut Gradients) -> Tensor {
        let g = ops::layer_norm_backward(cache, store.get(self.gamma), dy);
        grads.accumulate(self.gamma, &g.dgamma);
        grads.accumulate(self.beta, &g.dbeta);
        g.dx
    }
}
