//! Feature extraction and encoding: five convolutions that turn a
//! micro-lens image into a 3-channel map at half the spatial resolution.
//!
//! The first layer uses a 9×9 kernel with stride 9, so each of its outputs
//! sees exactly one angular block, i.e. one spatial position across all
//! views.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::tensor::conv::{self, GradRequest};
use crate::tensor::layer::{Conv, ConvCache};
use crate::tensor::{Activation, ConvLayerSpec, GradSet, Padding, ParamSet, Tensor};

/// Angular block size the encoder is built for.
pub const BLOCK: usize = 9;

/// Names of the five layers inside a parameter set.
pub const LAYER_NAMES: [&str; 5] = ["fee.L1", "fee.L2", "fee.L3", "fee.L4", "fee.L5"];

/// FEE weights live in an ordinary [`ParamSet`] under `fee.*`.
pub type FeeParams = ParamSet;

/// The layer stack.
pub fn layers() -> [Conv; 5] {
    [
        Conv::new(
            LAYER_NAMES[0],
            3,
            ConvLayerSpec::new(128, BLOCK)
                .stride(BLOCK, BLOCK)
                .padding(Padding::Valid),
        ),
        Conv::new(LAYER_NAMES[1], 128, ConvLayerSpec::new(64, 3)),
        Conv::new(LAYER_NAMES[2], 64, ConvLayerSpec::new(32, 3)),
        Conv::new(LAYER_NAMES[3], 32, ConvLayerSpec::new(32, 3).stride(2, 2)),
        Conv::new(
            LAYER_NAMES[4],
            32,
            ConvLayerSpec::new(3, 1).activation(Activation::None),
        ),
    ]
}

/// Closed-form parameter count, `Σ C_out·(C_in·k_h·k_w + 1)`.
pub fn param_count() -> usize {
    layers().iter().map(Conv::param_count).sum()
}

/// Seeded He-uniform initialisation.
pub fn build_fee(seed: u64) -> FeeParams {
    let mut params = ParamSet::new();
    for layer in layers() {
        layer.init(&mut params, seed).expect("fresh parameter set");
    }
    params
}

fn check_input(x: &Tensor) -> Result<()> {
    let (c, h, w) = x.chw()?;
    if c != 3 || h % BLOCK != 0 || w % BLOCK != 0 {
        return Err(Error::dim(format!(
            "encoder input must be [3, 9·T, 9·S], got {:?}",
            x.shape()
        )));
    }
    Ok(())
}

/// Output of every layer, first to last.
pub fn fee_activations(x: &Tensor, params: &FeeParams) -> Result<Vec<Tensor>> {
    check_input(x)?;
    let mut outs: Vec<Tensor> = Vec::with_capacity(5);
    for layer in layers() {
        let y = layer.forward(params, outs.last().unwrap_or(x))?;
        outs.push(y);
    }
    Ok(outs)
}

pub fn fee_forward(x: &Tensor, params: &FeeParams) -> Result<Tensor> {
    check_input(x)?;
    let mut h = x.clone();
    for layer in layers() {
        h = layer.forward(params, &h)?;
    }
    Ok(h)
}

/// Forward pass that also returns each layer's output shape.
pub fn fee_forward_traced(x: &Tensor, params: &FeeParams) -> Result<(Tensor, Vec<Vec<usize>>)> {
    check_input(x)?;
    let mut shapes = Vec::with_capacity(5);
    let mut h = x.clone();
    for layer in layers() {
        h = layer.forward(params, &h)?;
        shapes.push(h.shape().to_vec());
    }
    Ok((h, shapes))
}

/// Saved activations for [`fee_backward`].
#[derive(Debug, Clone)]
pub struct FeeCache {
    caches: Vec<ConvCache>,
}

pub fn fee_forward_train(x: &Tensor, params: &FeeParams) -> Result<(Tensor, FeeCache)> {
    check_input(x)?;
    let mut caches = Vec::with_capacity(5);
    let mut h = x.clone();
    for layer in layers() {
        let (y, cache) = layer.forward_train(params, &h)?;
        caches.push(cache);
        h = y;
    }
    Ok((h, FeeCache { caches }))
}

/// Back-propagates through all five layers. Parameter gradients go into
/// `grads` when given; the input gradient is returned when `want_input`.
pub fn fee_backward(
    params: &FeeParams,
    cache: &FeeCache,
    grad: Tensor,
    mut grads: Option<&mut GradSet>,
    want_input: bool,
) -> Result<Option<Tensor>> {
    let layers = layers();
    let mut g = grad;
    for (i, (layer, c)) in layers.iter().zip(&cache.caches).enumerate().rev() {
        let need_input = i > 0 || want_input;
        match layer.backward(params, c, g, grads.as_deref_mut(), need_input)? {
            Some(gi) => g = gi,
            None => return Ok(None),
        }
    }
    Ok(Some(g))
}

/// Result of the block-locality probe on the first layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceptiveReport {
    /// First-layer output positions probed.
    pub locations: usize,
    /// Positions whose input footprint differs from their own 9×9 block.
    pub violations: Vec<(usize, usize)>,
}

impl ReceptiveReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

fn l1() -> Conv {
    layers()[0].clone()
}

/// Input pixels `(y, x)` with a nonzero gradient of the first layer's
/// pre-activation output at `(oy, ox)`, summed over channels.
pub fn l1_footprint(
    params: &FeeParams,
    in_hw: (usize, usize),
    at: (usize, usize),
) -> Result<BTreeSet<(usize, usize)>> {
    let layer = l1();
    let (h, w) = in_hw;
    let (oh, ow) = layer.spec.output_hw(h, w)?;
    if at.0 >= oh || at.1 >= ow {
        return Err(Error::dim(format!("probe {at:?} outside {oh}x{ow}")));
    }
    let p = params.get(&layer.name)?;
    let mut go = Tensor::zeros(&[layer.spec.out_channels, oh, ow]);
    for c in 0..layer.spec.out_channels {
        let i = go.idx3(c, at.0, at.1);
        go.data_mut()[i] = 1.0;
    }
    let x = Tensor::zeros(&[3, h, w]);
    let want = GradRequest {
        input: true,
        params: false,
    };
    let gx = conv::conv2d_backward(&go, &x, &p.weight, &layer.spec, want)?
        .input
        .expect("input gradient requested");
    let mut set = BTreeSet::new();
    for c in 0..3 {
        for y in 0..h {
            for xx in 0..w {
                if gx.at3(c, y, xx) != 0.0 {
                    set.insert((y, xx));
                }
            }
        }
    }
    Ok(set)
}

/// First-layer output positions `(oy, ox)` whose value changes when the
/// listed input samples `(c, y, x)` are perturbed.
pub fn l1_affected(
    params: &FeeParams,
    x: &Tensor,
    pixels: &[(usize, usize, usize)],
) -> Result<BTreeSet<(usize, usize)>> {
    check_input(x)?;
    let layer = l1();
    let p = params.get(&layer.name)?;
    let base = conv::conv2d_linear(x, &layer.spec, &p.weight, &p.bias)?;
    let mut moved = x.clone();
    for &(c, y, xx) in pixels {
        let i = moved.idx3(c, y, xx);
        moved.data_mut()[i] += 0.5;
    }
    let out = conv::conv2d_linear(&moved, &layer.spec, &p.weight, &p.bias)?;
    let (oc, oh, ow) = out.chw()?;
    let mut set = BTreeSet::new();
    for c in 0..oc {
        for y in 0..oh {
            for xx in 0..ow {
                if out.at3(c, y, xx) != base.at3(c, y, xx) {
                    set.insert((y, xx));
                }
            }
        }
    }
    Ok(set)
}

/// Verifies by gradient probing that every first-layer output on a
/// `9·rows × 9·cols` input depends on exactly its own angular block.
pub fn fee_receptive_check(params: &FeeParams, rows: usize, cols: usize) -> Result<ReceptiveReport> {
    let mut violations = Vec::new();
    for oy in 0..rows {
        for ox in 0..cols {
            let fp = l1_footprint(params, (rows * BLOCK, cols * BLOCK), (oy, ox))?;
            let expected: BTreeSet<_> = (0..BLOCK)
                .flat_map(|dy| (0..BLOCK).map(move |dx| (oy * BLOCK + dy, ox * BLOCK + dx)))
                .collect();
            if fp != expected {
                violations.push((oy, ox));
            }
        }
    }
    Ok(ReceptiveReport {
        locations: rows * cols,
        violations,
    })
}

/// Analytic multiply-accumulate count per layer for a `h × w` input.
pub fn layer_macs(h: usize, w: usize) -> Result<Vec<u64>> {
    let mut out = Vec::with_capacity(5);
    let (mut hh, mut ww) = (h, w);
    for layer in layers() {
        out.push(conv::conv_macs(&layer.spec, layer.in_channels, hh, ww)?);
        (hh, ww) = layer.spec.output_hw(hh, ww)?;
    }
    Ok(out)
}
