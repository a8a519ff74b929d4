//! 2-D convolution via banded im2col + GEMM.
//!
//! The output is processed in bands of rows so the column buffer stays
//! bounded (a full im2col of a 4608×4608 input would not fit in memory).
//! Bands are independent in the forward pass and are evaluated with rayon;
//! every output element is produced by the same arithmetic regardless of
//! the thread count, so results are bit-stable across pool sizes.

use std::cell::Cell;

use rayon::prelude::*;

use super::{ops, Tensor};
use crate::error::{Error, Result};

/// Column-buffer budget per band, in elements.
const BAND_BUDGET: usize = 1 << 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Valid,
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

impl Activation {
    pub fn apply(self, mut t: Tensor) -> Tensor {
        match self {
            Activation::Relu => ops::relu_in_place(&mut t),
            Activation::Sigmoid => ops::sigmoid_in_place(&mut t),
            Activation::None => {}
        }
        t
    }

    /// Maps a gradient w.r.t. the activated output to one w.r.t. the
    /// pre-activation, given the activated output.
    pub fn backward(self, output: &Tensor, grad: &mut Tensor) {
        match self {
            Activation::Relu => ops::relu_backward_in_place(output, grad),
            Activation::Sigmoid => ops::sigmoid_backward_in_place(output, grad),
            Activation::None => {}
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: Padding,
    pub activation: Activation,
}

impl ConvLayerSpec {
    /// Square `k×k` kernel, stride 1, no dilation, `same` padding, ReLU.
    pub fn new(out_channels: usize, k: usize) -> Self {
        Self {
            out_channels,
            kernel: (k, k),
            stride: (1, 1),
            dilation: (1, 1),
            padding: Padding::Same,
            activation: Activation::Relu,
        }
    }

    pub fn kernel(mut self, kh: usize, kw: usize) -> Self {
        self.kernel = (kh, kw);
        self
    }

    pub fn stride(mut self, sh: usize, sw: usize) -> Self {
        self.stride = (sh, sw);
        self
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = (d, d);
        self
    }

    pub fn padding(mut self, p: Padding) -> Self {
        self.padding = p;
        self
    }

    pub fn activation(mut self, a: Activation) -> Self {
        self.activation = a;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (dh, dw) = self.dilation;
        if self.out_channels == 0 || kh == 0 || kw == 0 || sh == 0 || sw == 0 || dh == 0 || dw == 0
        {
            return Err(Error::dim(format!("degenerate conv spec {self:?}")));
        }
        Ok(())
    }

    /// Output spatial extent for an `h×w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let g = Geometry::new(self, 1, h, w)?;
        Ok((g.out_h, g.out_w))
    }

    pub fn weight_shape(&self, in_channels: usize) -> [usize; 4] {
        [self.out_channels, in_channels, self.kernel.0, self.kernel.1]
    }
}

/// Fully resolved convolution arithmetic for one input extent.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    dh: usize,
    dw: usize,
    pad_top: usize,
    pad_left: usize,
    out_h: usize,
    out_w: usize,
}

fn axis_geometry(
    len: usize,
    k: usize,
    s: usize,
    d: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    let ek = (k - 1) * d + 1;
    match padding {
        Padding::Valid => {
            if len < ek {
                return Err(Error::dim(format!(
                    "input extent {len} smaller than effective kernel {ek}"
                )));
            }
            Ok(((len - ek) / s + 1, 0))
        }
        Padding::Same => {
            let out = len.div_ceil(s);
            let total = ((out - 1) * s + ek).saturating_sub(len);
            Ok((out, total / 2))
        }
    }
}

impl Geometry {
    pub(crate) fn new(spec: &ConvLayerSpec, c_in: usize, h: usize, w: usize) -> Result<Self> {
        spec.validate()?;
        let (kh, kw) = spec.kernel;
        let (sh, sw) = spec.stride;
        let (dh, dw) = spec.dilation;
        let (out_h, pad_top) = axis_geometry(h, kh, sh, dh, spec.padding)?;
        let (out_w, pad_left) = axis_geometry(w, kw, sw, dw, spec.padding)?;
        Ok(Self {
            c_in,
            h,
            w,
            kh,
            kw,
            sh,
            sw,
            dh,
            dw,
            pad_top,
            pad_left,
            out_h,
            out_w,
        })
    }

    fn k(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn bands(&self) -> Vec<(usize, usize)> {
        let per_row = self.k() * self.out_w;
        let rows = (BAND_BUDGET / per_row.max(1)).clamp(1, self.out_h);
        (0..self.out_h)
            .step_by(rows)
            .map(|r0| (r0, (r0 + rows).min(self.out_h)))
            .collect()
    }
}

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

/// Multiply-accumulates performed by forward convolutions on this thread
/// since the last [`reset_mac_counter`].
pub fn mac_counter() -> u64 {
    MACS.with(Cell::get)
}

pub fn reset_mac_counter() {
    MACS.with(|m| m.set(0));
}

pub(crate) fn count_macs(n: u64) {
    MACS.with(|m| m.set(m.get() + n));
}

/// `C = alpha * A·B + beta * C` on strided row-major views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    assert!(k == 0 || last(m, k, rsa, csa) < a.len());
    assert!(k == 0 || last(k, n, rsb, csb) < b.len());
    assert!(last(m, n, rsc, csc) < c.len());
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

fn im2col_band(x: &[f64], g: &Geometry, r0: usize, r1: usize, col: &mut [f64]) {
    let n = (r1 - r0) * g.out_w;
    for ci in 0..g.c_in {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * n..(row + 1) * n];
                let off = (kx * g.dw) as isize - g.pad_left as isize;
                for (bi, oy) in (r0..r1).enumerate() {
                    let d = &mut dst[bi * g.out_w..(bi + 1) * g.out_w];
                    let iy = (oy * g.sh + ky * g.dh) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.h as isize {
                        d.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in d.iter_mut().enumerate() {
                        let ix = (ox * g.sw) as isize + off;
                        *v = if ix >= 0 && (ix as usize) < g.w {
                            src[ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im_band(col: &[f64], g: &Geometry, r0: usize, r1: usize, gx: &mut [f64]) {
    let n = (r1 - r0) * g.out_w;
    for ci in 0..g.c_in {
        let plane = &mut gx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let srcrow = &col[row * n..(row + 1) * n];
                let off = (kx * g.dw) as isize - g.pad_left as isize;
                for (bi, oy) in (r0..r1).enumerate() {
                    let iy = (oy * g.sh + ky * g.dh) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let s = &srcrow[bi * g.out_w..(bi + 1) * g.out_w];
                    for (ox, v) in s.iter().enumerate() {
                        let ix = (ox * g.sw) as isize + off;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn check_params(
    input: &Tensor,
    spec: &ConvLayerSpec,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<Geometry> {
    let (c_in, h, w) = input.chw()?;
    let expect = spec.weight_shape(c_in);
    if weights.shape() != expect {
        return Err(Error::dim(format!(
            "conv weights have shape {:?}, expected {expect:?}",
            weights.shape()
        )));
    }
    if bias.shape() != [spec.out_channels] {
        return Err(Error::dim(format!(
            "conv bias has shape {:?}, expected [{}]",
            bias.shape(),
            spec.out_channels
        )));
    }
    Geometry::new(spec, c_in, h, w)
}

/// Convolution without the activation: `W ⋆ x + b`.
pub fn conv2d_linear(
    input: &Tensor,
    spec: &ConvLayerSpec,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<Tensor> {
    let g = check_params(input, spec, weights, bias)?;
    let c_out = spec.out_channels;
    let k = g.k();
    let plane = g.out_h * g.out_w;
    let x = input.data();
    let wd = weights.data();

    let bands: Vec<(usize, usize, Vec<f64>)> = g
        .bands()
        .into_par_iter()
        .map(|(r0, r1)| {
            let n = (r1 - r0) * g.out_w;
            let mut col = vec![0.0; k * n];
            im2col_band(x, &g, r0, r1, &mut col);
            let mut out = vec![0.0; c_out * n];
            gemm(c_out, k, n, wd, (k, 1), &col, (n, 1), 0.0, &mut out, (n, 1));
            (r0, r1, out)
        })
        .collect();

    let mut data = vec![0.0; c_out * plane];
    for (r0, r1, out) in bands {
        let n = (r1 - r0) * g.out_w;
        for co in 0..c_out {
            let b = bias.data()[co];
            let dst = &mut data[co * plane + r0 * g.out_w..co * plane + r1 * g.out_w];
            for (d, s) in dst.iter_mut().zip(&out[co * n..(co + 1) * n]) {
                *d = s + b;
            }
        }
    }
    count_macs((c_out * k * plane) as u64);
    Tensor::new(vec![c_out, g.out_h, g.out_w], data)
}

/// Convolution followed by the spec's activation.
pub fn conv2d_forward(
    input: &Tensor,
    spec: &ConvLayerSpec,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<Tensor> {
    let out = spec
        .activation
        .apply(conv2d_linear(input, spec, weights, bias)?);
    out.ensure_finite("conv2d output")?;
    Ok(out)
}

/// Which gradients a backward pass should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradRequest {
    pub input: bool,
    pub params: bool,
}

impl GradRequest {
    pub const ALL: Self = Self {
        input: true,
        params: true,
    };
}

#[derive(Debug, Clone, Default)]
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weights: Option<Tensor>,
    pub bias: Option<Tensor>,
}

/// Backward pass of [`conv2d_linear`]; `grad_out` is w.r.t. the linear
/// (pre-activation) output.
pub fn conv2d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weights: &Tensor,
    spec: &ConvLayerSpec,
    want: GradRequest,
) -> Result<ConvGrads> {
    let (c_in, h, w) = input.chw()?;
    if weights.shape() != spec.weight_shape(c_in) {
        return Err(Error::dim(format!(
            "conv weights have shape {:?}, expected {:?}",
            weights.shape(),
            spec.weight_shape(c_in)
        )));
    }
    let g = Geometry::new(spec, c_in, h, w)?;
    let c_out = spec.out_channels;
    if grad_out.shape() != [c_out, g.out_h, g.out_w] {
        return Err(Error::dim(format!(
            "grad_out shape {:?} does not match conv output [{c_out}, {}, {}]",
            grad_out.shape(),
            g.out_h,
            g.out_w
        )));
    }
    let k = g.k();
    let plane = g.out_h * g.out_w;
    let go = grad_out.data();
    let wd = weights.data();

    let mut grads = ConvGrads::default();
    let mut gw = want.params.then(|| vec![0.0; c_out * k]);
    let mut gx = want.input.then(|| vec![0.0; c_in * h * w]);

    if want.params {
        let gb = (0..c_out)
            .map(|co| go[co * plane..(co + 1) * plane].iter().sum())
            .collect();
        grads.bias = Some(Tensor::new(vec![c_out], gb)?);
    }

    let mut col = Vec::new();
    for (r0, r1) in g.bands() {
        let n = (r1 - r0) * g.out_w;
        let go_band = &go[r0 * g.out_w..];
        if let Some(gw) = gw.as_mut() {
            col.resize(k * n, 0.0);
            im2col_band(input.data(), &g, r0, r1, &mut col);
            // gW[c_out, K] += gO[c_out, n] · colᵀ[n, K]
            gemm(c_out, n, k, go_band, (plane, 1), &col, (1, n), 1.0, gw, (k, 1));
        }
        if let Some(gx) = gx.as_mut() {
            col.resize(k * n, 0.0);
            // gcol[K, n] = Wᵀ[K, c_out] · gO[c_out, n]
            gemm(k, c_out, n, wd, (1, k), go_band, (plane, 1), 0.0, &mut col, (n, 1));
            col2im_band(&col, &g, r0, r1, gx);
        }
    }

    if let Some(gw) = gw {
        grads.weights = Some(Tensor::new(weights.shape().to_vec(), gw)?);
    }
    if let Some(gx) = gx {
        grads.input = Some(Tensor::new(vec![c_in, h, w], gx)?);
    }
    Ok(grads)
}

/// Multiply-accumulate count of one convolution: `C_out·C_in·k_h·k_w·H'·W'`.
pub fn conv_macs(spec: &ConvLayerSpec, c_in: usize, h: usize, w: usize) -> Result<u64> {
    let (oh, ow) = spec.output_hw(h, w)?;
    Ok((spec.out_channels * c_in * spec.kernel.0 * spec.kernel.1 * oh * ow) as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct nested-loop convolution used as the reference.
    fn naive(x: &Tensor, spec: &ConvLayerSpec, w: &Tensor, b: &Tensor) -> Tensor {
        let (c_in, h, wd) = x.chw().unwrap();
        let g = Geometry::new(spec, c_in, h, wd).unwrap();
        let mut out = Tensor::zeros(&[spec.out_channels, g.out_h, g.out_w]);
        for co in 0..spec.out_channels {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let mut acc = b.data()[co];
                    for ci in 0..c_in {
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                let iy = (oy * g.sh + ky * g.dh) as isize - g.pad_top as isize;
                                let ix = (ox * g.sw + kx * g.dw) as isize - g.pad_left as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    let wi = ((co * c_in + ci) * g.kh + ky) * g.kw + kx;
                                    acc += w.data()[wi] * x.at3(ci, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    let i = out.idx3(co, oy, ox);
                    out.data_mut()[i] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn output_extents_follow_conv_arithmetic() {
        let l1 = ConvLayerSpec::new(128, 9).stride(9, 9).padding(Padding::Valid);
        assert_eq!(l1.output_hw(4608, 4608).unwrap(), (512, 512));
        let same = ConvLayerSpec::new(4, 3);
        assert_eq!(same.output_hw(17, 10).unwrap(), (17, 10));
        let s2 = ConvLayerSpec::new(4, 3).stride(2, 2);
        assert_eq!(s2.output_hw(512, 511).unwrap(), (256, 256));
        let dil = ConvLayerSpec::new(4, 3).dilation(7);
        assert_eq!(dil.output_hw(64, 64).unwrap(), (64, 64));
        let sep = ConvLayerSpec::new(4, 1).kernel(9, 1);
        assert_eq!(sep.output_hw(20, 30).unwrap(), (20, 30));
    }

    #[test]
    fn matches_naive_across_configurations() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let specs = [
            ConvLayerSpec::new(3, 3),
            ConvLayerSpec::new(2, 3).stride(2, 2),
            ConvLayerSpec::new(4, 3).dilation(3),
            ConvLayerSpec::new(2, 1).kernel(5, 1),
            ConvLayerSpec::new(2, 1).kernel(1, 4),
            ConvLayerSpec::new(5, 3).stride(3, 3).padding(Padding::Valid),
            ConvLayerSpec::new(1, 2).stride(1, 2).padding(Padding::Valid),
        ];
        for spec in specs {
            let spec = spec.activation(Activation::None);
            let x = random(&[2, 9, 12], &mut rng);
            let w = random(&spec.weight_shape(2), &mut rng);
            let b = random(&[spec.out_channels], &mut rng);
            let got = conv2d_forward(&x, &spec, &w, &b).unwrap();
            let want = naive(&x, &spec, &w, &b);
            assert_eq!(got.shape(), want.shape(), "{spec:?}");
            for (a, e) in got.data().iter().zip(want.data()) {
                assert!((a - e).abs() < 1e-12, "{spec:?}: {a} vs {e}");
            }
        }
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[1, 5, 6], &mut rng);
        let spec = ConvLayerSpec::new(1, 1).activation(Activation::None);
        let w = Tensor::full(&[1, 1, 1, 1], 1.0);
        let y = conv2d_forward(&x, &spec, &w, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_filter_sums_the_window() {
        let x = Tensor::full(&[1, 3, 3], 1.0);
        let spec = ConvLayerSpec::new(1, 3)
            .padding(Padding::Valid)
            .activation(Activation::None);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d_forward(&x, &spec, &w, &Tensor::full(&[1], 0.5)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[9.5]);
    }

    #[test]
    fn rejects_mismatched_weights() {
        let x = Tensor::zeros(&[2, 4, 4]);
        let spec = ConvLayerSpec::new(3, 3);
        let w = Tensor::zeros(&[3, 1, 3, 3]);
        let err = conv2d_forward(&x, &spec, &w, &Tensor::zeros(&[3])).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
        let w = Tensor::zeros(&[3, 2, 3, 3]);
        assert!(conv2d_forward(&x, &spec, &w, &Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn non_finite_output_is_numeric_error() {
        let x = Tensor::full(&[1, 2, 2], f64::MAX);
        let spec = ConvLayerSpec::new(1, 1).activation(Activation::None);
        let w = Tensor::full(&[1, 1, 1, 1], 10.0);
        let err = conv2d_forward(&x, &spec, &w, &Tensor::zeros(&[1])).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[2, 5, 5], &mut rng);
        let spec = ConvLayerSpec::new(3, 3);
        let w = random(&spec.weight_shape(2), &mut rng);
        let g = conv2d_backward(&Tensor::zeros(&[3, 5, 5]), &x, &w, &spec, GradRequest::ALL)
            .unwrap();
        assert_eq!(g.input.unwrap().max_abs(), 0.0);
        assert_eq!(g.weights.unwrap().max_abs(), 0.0);
        assert_eq!(g.bias.unwrap().max_abs(), 0.0);
    }

    #[test]
    fn scalar_weight_grad_is_input_times_grad_out() {
        let x = Tensor::full(&[1, 1, 1], 1.75);
        let spec = ConvLayerSpec::new(1, 1).activation(Activation::None);
        let w = Tensor::full(&[1, 1, 1, 1], -0.3);
        let g = conv2d_backward(&Tensor::full(&[1, 1, 1], 2.0), &x, &w, &spec, GradRequest::ALL)
            .unwrap();
        assert_eq!(g.weights.unwrap().data(), &[3.5]);
        assert_eq!(g.bias.unwrap().data(), &[2.0]);
        assert_eq!(g.input.unwrap().data(), &[-0.6]);
    }

    #[test]
    fn backward_passes_finite_difference_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let specs = [
            ConvLayerSpec::new(3, 3),
            ConvLayerSpec::new(3, 3).stride(2, 2),
            ConvLayerSpec::new(2, 3).dilation(2),
            ConvLayerSpec::new(2, 3).stride(3, 3).padding(Padding::Valid),
            ConvLayerSpec::new(2, 1).kernel(5, 1),
        ];
        for spec in specs {
            let spec = spec.activation(Activation::None);
            let x = random(&[2, 5, 5], &mut rng);
            let w = random(&spec.weight_shape(2), &mut rng);
            let b = random(&[spec.out_channels], &mut rng);
            let (oh, ow) = spec.output_hw(5, 5).unwrap();
            let r = random(&[spec.out_channels, oh, ow], &mut rng);
            let g = conv2d_backward(&r, &x, &w, &spec, GradRequest::ALL).unwrap();
            let objective = |x: &Tensor, w: &Tensor, b: &Tensor| {
                let y = conv2d_forward(x, &spec, w, b).unwrap();
                y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            let ex = gradcheck::max_relative_error(
                &x,
                g.input.as_ref().unwrap(),
                |t| objective(t, &w, &b),
                1e-3,
                20,
                1,
            );
            let ew = gradcheck::max_relative_error(
                &w,
                g.weights.as_ref().unwrap(),
                |t| objective(&x, t, &b),
                1e-3,
                20,
                2,
            );
            let eb = gradcheck::max_relative_error(
                &b,
                g.bias.as_ref().unwrap(),
                |t| objective(&x, &w, t),
                1e-3,
                20,
                3,
            );
            assert!(ex < 1e-7 && ew < 1e-7 && eb < 1e-7, "{spec:?}: {ex} {ew} {eb}");
        }
    }

    #[test]
    fn mac_counter_tracks_forward_work() {
        reset_mac_counter();
        let spec = ConvLayerSpec::new(4, 3).stride(2, 2);
        let x = Tensor::zeros(&[2, 8, 8]);
        let w = Tensor::zeros(&spec.weight_shape(2));
        conv2d_forward(&x, &spec, &w, &Tensor::zeros(&[4])).unwrap();
        assert_eq!(mac_counter(), 4 * 2 * 9 * 4 * 4);
        assert_eq!(conv_macs(&spec, 2, 8, 8).unwrap(), mac_counter());
    }

    #[test]
    fn banding_does_not_change_results() {
        // Large enough that the column buffer is split into several bands.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = ConvLayerSpec::new(4, 3).activation(Activation::None);
        let x = random(&[64, 40, 1100], &mut rng);
        let g = Geometry::new(&spec, 64, 40, 1100).unwrap();
        assert!(g.bands().len() > 1);
        let w = random(&spec.weight_shape(64), &mut rng);
        let b = random(&[4], &mut rng);
        let got = conv2d_forward(&x, &spec, &w, &b).unwrap();
        for _ in 0..50 {
            let (co, y, xx) = (rng.gen_range(0..4), rng.gen_range(0..40), rng.gen_range(0..1100));
            let mut acc = b.data()[co];
            for ci in 0..64 {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let iy = y as isize + ky as isize - 1;
                        let ix = xx as isize + kx as isize - 1;
                        if iy >= 0 && ix >= 0 && iy < 40 && ix < 1100 {
                            acc += w.data()[((co * 64 + ci) * 3 + ky) * 3 + kx]
                                * x.at3(ci, iy as usize, ix as usize);
                        }
                    }
                }
            }
            assert!((got.at3(co, y, xx) - acc).abs() < 1e-10);
        }
    }
}
