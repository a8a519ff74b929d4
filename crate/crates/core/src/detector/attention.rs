//! Channel and spatial attention gates.

use crate::error::Result;
use crate::tensor::layer::{Conv, ConvCache, Dense};
use crate::tensor::{ops, Activation, ConvLayerSpec, GradSet, ParamSet, Tensor};

/// Channel gate: global average pool, two dense layers with a ReLU in
/// between (reduction 4), sigmoid; the input is scaled per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAttention {
    pub fc1: Dense,
    pub fc2: Dense,
}

#[derive(Debug, Clone)]
pub struct CaCache {
    f: Tensor,
    pooled: Tensor,
    hidden: Tensor,
    gate: Tensor,
}

impl ChannelAttention {
    pub const REDUCTION: usize = 4;

    pub fn new(prefix: &str, channels: usize) -> Self {
        let hidden = (channels / Self::REDUCTION).max(1);
        Self {
            fc1: Dense::new(format!("{prefix}.fc1"), channels, hidden),
            fc2: Dense::new(format!("{prefix}.fc2"), hidden, channels),
        }
    }

    pub fn init(&self, params: &mut ParamSet, seed: u64) -> Result<()> {
        self.fc1.init(params, seed)?;
        self.fc2.init(params, seed)
    }

    pub fn param_count(&self) -> usize {
        self.fc1.param_count() + self.fc2.param_count()
    }

    fn gate_parts(&self, params: &ParamSet, f: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let pooled = ops::global_avg_pool(f)?;
        let mut hidden = self.fc1.forward(params, &pooled)?;
        ops::relu_in_place(&mut hidden);
        let mut gate = self.fc2.forward(params, &hidden)?;
        ops::sigmoid_in_place(&mut gate);
        Ok((pooled, hidden, gate))
    }

    /// Per-channel gate values in `(0, 1)`.
    pub fn gate(&self, params: &ParamSet, f: &Tensor) -> Result<Tensor> {
        Ok(self.gate_parts(params, f)?.2)
    }

    /// Returns the gated features and the gate.
    pub fn forward(&self, params: &ParamSet, f: &Tensor) -> Result<(Tensor, Tensor)> {
        let gate = self.gate(params, f)?;
        Ok((ops::scale_channels(f, &gate)?, gate))
    }

    pub fn forward_train(&self, params: &ParamSet, f: &Tensor) -> Result<(Tensor, CaCache)> {
        let (pooled, hidden, gate) = self.gate_parts(params, f)?;
        let out = ops::scale_channels(f, &gate)?;
        let cache = CaCache {
            f: f.clone(),
            pooled,
            hidden,
            gate,
        };
        Ok((out, cache))
    }

    /// Gradient w.r.t. the gated input, through both the scaling and the gate.
    pub fn backward(
        &self,
        params: &ParamSet,
        cache: &CaCache,
        grad: &Tensor,
        mut grads: Option<&mut GradSet>,
    ) -> Result<Tensor> {
        let (mut gf, mut gg) = ops::scale_channels_backward(grad, &cache.f, &cache.gate)?;
        ops::sigmoid_backward_in_place(&cache.gate, &mut gg);
        let mut gh = self.fc2.backward(params, &cache.hidden, &gg, grads.as_deref_mut())?;
        ops::relu_backward_in_place(&cache.hidden, &mut gh);
        let gp = self.fc1.backward(params, &cache.pooled, &gh, grads)?;
        let (_, h, w) = cache.f.chw()?;
        gf.add_assign(&ops::global_avg_pool_backward(&gp, h, w)?)?;
        Ok(gf)
    }
}

/// Spatial gate computed from high-level context: two separable branches
/// (`k×1` then `1×k`, and `1×k` then `k×1`) summed and squashed into a
/// one-channel mask that scales the low-level features.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialAttention {
    pub a1: Conv,
    pub a2: Conv,
    pub b1: Conv,
    pub b2: Conv,
}

#[derive(Debug, Clone)]
pub struct SaCache {
    a1: ConvCache,
    a2: ConvCache,
    b1: ConvCache,
    b2: ConvCache,
    low: Tensor,
    mask: Tensor,
}

impl SpatialAttention {
    pub const KERNEL: usize = 9;

    pub fn new(prefix: &str, in_channels: usize, mid: usize) -> Self {
        let k = Self::KERNEL;
        let first = |kh, kw| ConvLayerSpec::new(mid, 1).kernel(kh, kw);
        let second = |kh, kw| {
            ConvLayerSpec::new(1, 1)
                .kernel(kh, kw)
                .activation(Activation::None)
        };
        Self {
            a1: Conv::new(format!("{prefix}.a1"), in_channels, first(k, 1)),
            a2: Conv::new(format!("{prefix}.a2"), mid, second(1, k)),
            b1: Conv::new(format!("{prefix}.b1"), in_channels, first(1, k)),
            b2: Conv::new(format!("{prefix}.b2"), mid, second(k, 1)),
        }
    }

    fn convs(&self) -> [&Conv; 4] {
        [&self.a1, &self.a2, &self.b1, &self.b2]
    }

    pub fn init(&self, params: &mut ParamSet, seed: u64) -> Result<()> {
        self.convs().iter().try_for_each(|c| c.init(params, seed))
    }

    pub fn param_count(&self) -> usize {
        self.convs().iter().map(|c| c.param_count()).sum()
    }

    /// Mask `[1, H, W]` in `(0, 1)`.
    pub fn mask(&self, params: &ParamSet, high: &Tensor) -> Result<Tensor> {
        let a = self.a2.forward(params, &self.a1.forward(params, high)?)?;
        let mut m = self.b2.forward(params, &self.b1.forward(params, high)?)?;
        m.add_assign(&a)?;
        ops::sigmoid_in_place(&mut m);
        Ok(m)
    }

    /// Returns the gated low-level features and the mask.
    pub fn forward(&self, params: &ParamSet, low: &Tensor, high: &Tensor) -> Result<(Tensor, Tensor)> {
        let m = self.mask(params, high)?;
        Ok((ops::scale_spatial(low, &m)?, m))
    }

    pub fn forward_train(
        &self,
        params: &ParamSet,
        low: &Tensor,
        high: &Tensor,
    ) -> Result<(Tensor, SaCache)> {
        let (ha, a1) = self.a1.forward_train(params, high)?;
        let (a, a2) = self.a2.forward_train(params, &ha)?;
        let (hb, b1) = self.b1.forward_train(params, high)?;
        let (mut m, b2) = self.b2.forward_train(params, &hb)?;
        m.add_assign(&a)?;
        ops::sigmoid_in_place(&mut m);
        let out = ops::scale_spatial(low, &m)?;
        let cache = SaCache {
            a1,
            a2,
            b1,
            b2,
            low: low.clone(),
            mask: m,
        };
        Ok((out, cache))
    }

    /// Returns `(grad_low, grad_high)`.
    pub fn backward(
        &self,
        params: &ParamSet,
        cache: &SaCache,
        grad: &Tensor,
        mut grads: Option<&mut GradSet>,
    ) -> Result<(Tensor, Tensor)> {
        let (g_low, mut gm) = ops::scale_spatial_backward(grad, &cache.low, &cache.mask)?;
        ops::sigmoid_backward_in_place(&cache.mask, &mut gm);
        let mut g_high = Tensor::zeros(cache.a1.input_shape());
        for (c1, k1, c2, k2) in [
            (&self.a1, &cache.a1, &self.a2, &cache.a2),
            (&self.b1, &cache.b1, &self.b2, &cache.b2),
        ] {
            let g = c2
                .backward(params, k2, gm.clone(), grads.as_deref_mut(), true)?
                .expect("input gradient");
            let g = c1
                .backward(params, k1, g, grads.as_deref_mut(), true)?
                .expect("input gradient");
            g_high.add_assign(&g)?;
        }
        Ok((g_low, g_high))
    }
}
