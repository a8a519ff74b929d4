//! Named layers bound to entries of a [`ParamSet`].

use super::conv::{self, GradRequest};
use super::{init, ops, ConvLayerSpec, GradSet, ParamSet, Tensor};
use crate::error::Result;

/// A convolution whose weights live under `name` in a parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub name: String,
    pub in_channels: usize,
    pub spec: ConvLayerSpec,
}

/// Saved tensors needed by [`Conv::backward`].
#[derive(Debug, Clone)]
pub struct ConvCache {
    input: Tensor,
    output: Tensor,
}

impl ConvCache {
    pub fn input_shape(&self) -> &[usize] {
        self.input.shape()
    }

    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

impl Conv {
    pub fn new(name: impl Into<String>, in_channels: usize, spec: ConvLayerSpec) -> Self {
        Self {
            name: name.into(),
            in_channels,
            spec,
        }
    }

    /// He-uniform weights, zero bias.
    pub fn init(&self, params: &mut ParamSet, seed: u64) -> Result<()> {
        let shape = self.spec.weight_shape(self.in_channels);
        let fan_in = self.in_channels * self.spec.kernel.0 * self.spec.kernel.1;
        let w = init::he_uniform(&shape, fan_in, &mut init::rng_for(seed, &self.name));
        params.insert(&self.name, w, Tensor::zeros(&[self.spec.out_channels]))
    }

    pub fn param_count(&self) -> usize {
        self.spec.out_channels * (self.in_channels * self.spec.kernel.0 * self.spec.kernel.1 + 1)
    }

    pub fn forward(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        let p = params.get(&self.name)?;
        conv::conv2d_forward(x, &self.spec, &p.weight, &p.bias)
    }

    pub fn forward_train(&self, params: &ParamSet, x: &Tensor) -> Result<(Tensor, ConvCache)> {
        let y = self.forward(params, x)?;
        let cache = ConvCache {
            input: x.clone(),
            output: y.clone(),
        };
        Ok((y, cache))
    }

    /// Back-propagates `grad` (w.r.t. the activated output). Parameter
    /// gradients are accumulated into `grads` when it is given; the input
    /// gradient is returned when `want_input` is set.
    pub fn backward(
        &self,
        params: &ParamSet,
        cache: &ConvCache,
        mut grad: Tensor,
        grads: Option<&mut GradSet>,
        want_input: bool,
    ) -> Result<Option<Tensor>> {
        self.spec.activation.backward(&cache.output, &mut grad);
        let p = params.get(&self.name)?;
        let want = GradRequest {
            input: want_input,
            params: grads.is_some(),
        };
        let g = conv::conv2d_backward(&grad, &cache.input, &p.weight, &self.spec, want)?;
        if let (Some(grads), Some(gw), Some(gb)) = (grads, g.weights, g.bias) {
            grads.accumulate(&self.name, gw, gb)?;
        }
        Ok(g.input)
    }
}

/// Fully connected layer on a rank-1 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new(name: impl Into<String>, inputs: usize, outputs: usize) -> Self {
        Self {
            name: name.into(),
            inputs,
            outputs,
        }
    }

    pub fn init(&self, params: &mut ParamSet, seed: u64) -> Result<()> {
        let w = init::he_uniform(
            &[self.outputs, self.inputs],
            self.inputs,
            &mut init::rng_for(seed, &self.name),
        );
        params.insert(&self.name, w, Tensor::zeros(&[self.outputs]))
    }

    pub fn param_count(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }

    pub fn forward(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        let p = params.get(&self.name)?;
        ops::dense(x, &p.weight, &p.bias)
    }

    pub fn backward(
        &self,
        params: &ParamSet,
        x: &Tensor,
        grad: &Tensor,
        grads: Option<&mut GradSet>,
    ) -> Result<Tensor> {
        let p = params.get(&self.name)?;
        let (gx, gw, gb) = ops::dense_backward(grad, x, &p.weight)?;
        if let Some(grads) = grads {
            grads.accumulate(&self.name, gw, gb)?;
        }
        Ok(gx)
    }
}
