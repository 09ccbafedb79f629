//! Stateful wrappers around the primitives. A layer keeps what its backward
//! needs from the most recent forward; backward consumes that context, so a
//! second backward (or one without a forward) is a [`Error::State`] error.

use super::ops::{self, Activation};
use super::{Param, ParamKind, Tensor};
use crate::error::{Error, Result};
use rand::Rng;

pub(crate) const LEAKY_SLOPE: f64 = 1e-2;

fn take<T>(slot: &mut Option<T>, layer: &str) -> Result<T> {
    slot.take()
        .ok_or_else(|| Error::State(format!("{layer}: backward called without a preceding forward")))
}

/// Uniform initialization with a He-style bound for leaky-ReLU networks.
pub fn fan_in_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in as f64)).sqrt();
    uniform(shape, bound, rng)
}

pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and length agree")
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub pad: usize,
    saved: Option<Tensor>,
}

impl Conv2d {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = fan_in_uniform(&[out_channels, in_channels, kernel, kernel], fan_in, rng);
        let bias = uniform(&[out_channels], 1.0 / (fan_in as f64).sqrt(), rng);
        Conv2d {
            weight: Param::new(format!("{name}.weight"), weight, ParamKind::Weight),
            bias: Param::new(format!("{name}.bias"), bias, ParamKind::Bias),
            stride,
            pad,
            saved: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = ops::conv2d(x, &self.weight.value, &self.bias.value, self.stride, self.pad)?;
        self.saved = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = take(&mut self.saved, &self.weight.name)?;
        let (dx, dw, db) = ops::conv2d_backward(&x, &self.weight.value, grad, self.stride, self.pad)?;
        self.weight.value.accumulate_grad(dw.data());
        self.bias.value.accumulate_grad(db.data());
        Ok(dx)
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    saved: Option<Tensor>,
}

impl Linear {
    pub fn new(name: &str, in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let weight = fan_in_uniform(&[out_features, in_features], in_features, rng);
        let bias = uniform(&[out_features], 1.0 / (in_features as f64).sqrt(), rng);
        Self::from_tensors(name, weight, bias)
    }

    pub fn zeros(name: &str, in_features: usize, out_features: usize) -> Self {
        Self::from_tensors(name, Tensor::zeros(&[out_features, in_features]), Tensor::zeros(&[out_features]))
    }

    pub fn from_tensors(name: &str, weight: Tensor, bias: Tensor) -> Self {
        Linear {
            weight: Param::new(format!("{name}.weight"), weight, ParamKind::Weight),
            bias: Param::new(format!("{name}.bias"), bias, ParamKind::Bias),
            saved: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = ops::linear(x, &self.weight.value, &self.bias.value)?;
        self.saved = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = take(&mut self.saved, &self.weight.name)?;
        let (dx, dw, db) = ops::linear_backward(&x, &self.weight.value, grad)?;
        self.weight.value.accumulate_grad(dw.data());
        self.bias.value.accumulate_grad(db.data());
        Ok(dx)
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[0]
    }
}

/// Pointwise activation layer (leaky ReLU or sigmoid).
#[derive(Clone, Debug)]
pub struct Act {
    kind: Activation,
    saved: Option<(Tensor, Tensor)>,
}

pub type LeakyRelu = Act;

impl Act {
    pub fn leaky_relu() -> Self {
        Act { kind: Activation::LeakyRelu(LEAKY_SLOPE), saved: None }
    }

    pub fn sigmoid() -> Self {
        Act { kind: Activation::Sigmoid, saved: None }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = ops::activation(self.kind, x)?;
        self.saved = Some((x.clone(), y.clone()));
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let (x, y) = take(&mut self.saved, "activation")?;
        ops::activation_backward(self.kind, &x, &y, grad)
    }
}

#[derive(Clone, Debug)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    saved: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize) -> Self {
        MaxPool2d { kernel, stride, saved: None }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let pooled = ops::max_pool2d(x, self.kernel, self.stride)?;
        self.saved = Some((pooled.argmax, x.shape().to_vec()));
        Ok(pooled.output)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let (argmax, shape) = take(&mut self.saved, "max_pool2d")?;
        ops::max_pool_backward(grad, &argmax, &shape)
    }
}
