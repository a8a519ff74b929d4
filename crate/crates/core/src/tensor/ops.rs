//! Non-convolution layers with their backward passes.

use std::cell::RefCell;

use super::Tensor;
use crate::error::{Error, Result};

enum Branches {
    /// Fingerprint of the decisions taken.
    Hash(u64),
    Record(Vec<u8>),
    /// Decisions to impose, with the read position.
    Replay(Vec<u8>, usize),
}

thread_local! {
    static BRANCHES: RefCell<Option<Branches>> = const { RefCell::new(None) };
}

fn mix(h: u64, v: u64) -> u64 {
    (h ^ v).wrapping_mul(0x0100_0000_01b3).rotate_left(5)
}

/// Reports the `n` natural decisions of a piecewise op (ReLU side,
/// max-pool winner) to the active scope. Returns the decisions to use
/// instead when a replay scope is active.
fn branches(n: usize, natural: impl Fn(usize) -> u8) -> Option<Vec<u8>> {
    BRANCHES.with(|b| match b.borrow_mut().as_mut() {
        None => None,
        Some(Branches::Hash(h)) => {
            for i in 0..n {
                *h = mix(*h, u64::from(natural(i)));
            }
            None
        }
        Some(Branches::Record(v)) => {
            v.extend((0..n).map(natural));
            None
        }
        Some(Branches::Replay(v, pos)) => {
            let end = *pos + n;
            assert!(end <= v.len(), "replayed branch pattern is too short");
            let out = v[*pos..end].to_vec();
            *pos = end;
            Some(out)
        }
    })
}

fn scoped<T>(mode: Branches, f: impl FnOnce() -> T) -> (T, Option<Branches>) {
    let prev = BRANCHES.with(|b| b.borrow_mut().replace(mode));
    let out = f();
    let mode = BRANCHES.with(|b| std::mem::replace(&mut *b.borrow_mut(), prev));
    (out, mode)
}

/// Runs `f` and returns its result together with a fingerprint of every
/// piecewise branch taken inside it. Two evaluations with equal
/// fingerprints lie on the same smooth piece of the function.
pub fn with_kink_trace<T>(f: impl FnOnce() -> T) -> (T, u64) {
    match scoped(Branches::Hash(0xcbf2_9ce4_8422_2325), f) {
        (out, Some(Branches::Hash(h))) => (out, h),
        (out, _) => (out, 0),
    }
}

/// Runs `f` and returns the branch decisions it took, in order.
pub fn record_branches<T>(f: impl FnOnce() -> T) -> (T, Vec<u8>) {
    match scoped(Branches::Record(Vec::new()), f) {
        (out, Some(Branches::Record(v))) => (out, v),
        (out, _) => (out, Vec::new()),
    }
}

/// Runs `f` with every piecewise op forced onto the decisions recorded by
/// [`record_branches`], which extends each smooth piece past its kinks.
pub fn with_branches<T>(pattern: &[u8], f: impl FnOnce() -> T) -> T {
    scoped(Branches::Replay(pattern.to_vec(), 0), f).0
}

pub fn relu_in_place(t: &mut Tensor) {
    let forced = {
        let d = t.data();
        branches(d.len(), |i| u8::from(d[i] > 0.0))
    };
    match forced {
        Some(active) => {
            for (v, a) in t.data_mut().iter_mut().zip(active) {
                if a == 0 {
                    *v = 0.0;
                }
            }
        }
        None => {
            for v in t.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }
}

pub fn relu(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    relu_in_place(&mut out);
    out
}

/// `grad *= [output > 0]`.
pub fn relu_backward_in_place(output: &Tensor, grad: &mut Tensor) {
    for (g, &o) in grad.data_mut().iter_mut().zip(output.data()) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_in_place(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = sigmoid_scalar(*v);
    }
}

pub fn sigmoid(t: &Tensor) -> Tensor {
    t.map(sigmoid_scalar)
}

/// `grad *= s(1 - s)` where `s` is the sigmoid output.
pub fn sigmoid_backward_in_place(output: &Tensor, grad: &mut Tensor) {
    for (g, &s) in grad.data_mut().iter_mut().zip(output.data()) {
        *g *= s * (1.0 - s);
    }
}

#[derive(Debug, Clone)]
pub struct MaxPoolCache {
    in_shape: [usize; 3],
    argmax: Vec<u8>,
}

/// 2×2 max pooling with stride 2. Requires even spatial extents.
pub fn maxpool2x2(x: &Tensor) -> Result<(Tensor, MaxPoolCache)> {
    let (c, h, w) = x.chw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(format!("maxpool2x2 needs even extents, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    let d = x.data();
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = (ci * h + 2 * oy) * w + 2 * ox;
                let cand = [d[base], d[base + 1], d[base + w], d[base + w + 1]];
                let mut best = 0;
                for k in 1..4 {
                    if cand[k] > cand[best] {
                        best = k;
                    }
                }
                out.push(cand[best]);
                argmax.push(best as u8);
            }
        }
    }
    if let Some(forced) = branches(argmax.len(), |i| argmax[i]) {
        let plane = oh * ow;
        for (i, &k) in forced.iter().enumerate() {
            let (ci, r) = (i / plane, i % plane);
            let base = (ci * h + 2 * (r / ow)) * w + 2 * (r % ow);
            out[i] = d[base + (k as usize / 2) * w + k as usize % 2];
        }
        argmax = forced;
    }
    let cache = MaxPoolCache {
        in_shape: [c, h, w],
        argmax,
    };
    Ok((Tensor::new(vec![c, oh, ow], out)?, cache))
}

pub fn maxpool2x2_backward(grad: &Tensor, cache: &MaxPoolCache) -> Result<Tensor> {
    let [c, h, w] = cache.in_shape;
    if grad.shape() != [c, h / 2, w / 2] {
        return Err(Error::dim(format!(
            "maxpool grad shape {:?} does not match cache {:?}",
            grad.shape(),
            cache.in_shape
        )));
    }
    let mut gx = vec![0.0; c * h * w];
    let (oh, ow) = (h / 2, w / 2);
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = (ci * oh + oy) * ow + ox;
                let a = cache.argmax[o] as usize;
                let i = (ci * h + 2 * oy + a / 2) * w + 2 * ox + a % 2;
                gx[i] += grad.data()[o];
            }
        }
    }
    Tensor::new(vec![c, h, w], gx)
}

/// Per-output-index source pair and blend factor along one axis, with
/// half-pixel centres and edge clamping.
fn bilinear_axis(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            if in_len == out_len {
                return (o, o, 0.0);
            }
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resampling of each channel plane to `out_h × out_w`.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::dim("resize target must be non-empty"));
    }
    let ay = bilinear_axis(h, out_h);
    let ax = bilinear_axis(w, out_w);
    let d = x.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ci in 0..c {
        let plane = &d[ci * h * w..(ci + 1) * h * w];
        for &(y0, y1, fy) in &ay {
            let r0 = &plane[y0 * w..(y0 + 1) * w];
            let r1 = &plane[y1 * w..(y1 + 1) * w];
            for &(x0, x1, fx) in &ax {
                let top = (1.0 - fx) * r0[x0] + fx * r0[x1];
                let bot = (1.0 - fx) * r1[x0] + fx * r1[x1];
                out.push((1.0 - fy) * top + fy * bot);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// Adjoint of [`resize_bilinear`] for an input of extent `h × w`.
pub fn resize_bilinear_backward(grad: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (c, out_h, out_w) = grad.chw()?;
    let ay = bilinear_axis(h, out_h);
    let ax = bilinear_axis(w, out_w);
    let mut gx = vec![0.0; c * h * w];
    let g = grad.data();
    for ci in 0..c {
        let plane = &mut gx[ci * h * w..(ci + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ay.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in ax.iter().enumerate() {
                let v = g[(ci * out_h + oy) * out_w + ox];
                plane[y0 * w + x0] += (1.0 - fy) * (1.0 - fx) * v;
                plane[y0 * w + x1] += (1.0 - fy) * fx * v;
                plane[y1 * w + x0] += fy * (1.0 - fx) * v;
                plane[y1 * w + x1] += fy * fx * v;
            }
        }
    }
    Tensor::new(vec![c, h, w], gx)
}

pub fn upsample_bilinear(x: &Tensor, factor: usize) -> Result<Tensor> {
    let (_, h, w) = x.chw()?;
    resize_bilinear(x, h * factor, w * factor)
}

pub fn upsample_bilinear_backward(grad: &Tensor, factor: usize) -> Result<Tensor> {
    let (_, h, w) = grad.chw()?;
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::dim(format!(
            "gradient extent {h}x{w} is not a multiple of factor {factor}"
        )));
    }
    resize_bilinear_backward(grad, h / factor, w / factor)
}

/// Stacks `[C_i, H, W]` tensors along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let (_, h, w) = parts
        .first()
        .ok_or_else(|| Error::dim("concat of zero tensors"))?
        .chw()?;
    let mut c_total = 0;
    let mut data = Vec::new();
    for p in parts {
        let (c, ph, pw) = p.chw()?;
        if (ph, pw) != (h, w) {
            return Err(Error::dim(format!(
                "concat spatial mismatch: {ph}x{pw} vs {h}x{w}"
            )));
        }
        c_total += c;
        data.extend_from_slice(p.data());
    }
    Tensor::new(vec![c_total, h, w], data)
}

/// Splits a channel-concatenated gradient back into pieces of the given widths.
pub fn split_channels(grad: &Tensor, widths: &[usize]) -> Result<Vec<Tensor>> {
    let (c, h, w) = grad.chw()?;
    if widths.iter().sum::<usize>() != c {
        return Err(Error::dim(format!(
            "split widths {widths:?} do not sum to {c} channels"
        )));
    }
    let plane = h * w;
    let mut offset = 0;
    widths
        .iter()
        .map(|&cw| {
            let t = Tensor::new(
                vec![cw, h, w],
                grad.data()[offset * plane..(offset + cw) * plane].to_vec(),
            );
            offset += cw;
            t
        })
        .collect()
}

/// Mean of each channel plane: `[C, H, W] → [C]`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    let plane = h * w;
    let m = (0..c)
        .map(|ci| x.data()[ci * plane..(ci + 1) * plane].iter().sum::<f64>() / plane as f64)
        .collect();
    Tensor::new(vec![c], m)
}

pub fn global_avg_pool_backward(grad: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let c = grad.len();
    let plane = h * w;
    let mut gx = Vec::with_capacity(c * plane);
    for &g in grad.data() {
        gx.extend(std::iter::repeat_n(g / plane as f64, plane));
    }
    Tensor::new(vec![c, h, w], gx)
}

/// Affine map `W·x + b` with `W: [out, in]`.
pub fn dense(x: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [o, i] = weights.shape() else {
        return Err(Error::dim(format!(
            "dense weights must be rank 2, got {:?}",
            weights.shape()
        )));
    };
    let (o, i) = (*o, *i);
    if x.len() != i || bias.shape() != [o] {
        return Err(Error::dim(format!(
            "dense: input {:?}, weights {:?}, bias {:?}",
            x.shape(),
            weights.shape(),
            bias.shape()
        )));
    }
    let y = (0..o)
        .map(|r| {
            let row = &weights.data()[r * i..(r + 1) * i];
            bias.data()[r] + row.iter().zip(x.data()).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    super::conv::count_macs((o * i) as u64);
    Tensor::new(vec![o], y)
}

/// Returns `(grad_x, grad_w, grad_b)` for [`dense`].
pub fn dense_backward(
    grad: &Tensor,
    x: &Tensor,
    weights: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let [o, i] = weights.shape() else {
        return Err(Error::dim("dense weights must be rank 2"));
    };
    let (o, i) = (*o, *i);
    if grad.len() != o || x.len() != i {
        return Err(Error::dim("dense backward shape mismatch"));
    }
    let mut gx = vec![0.0; i];
    let mut gw = vec![0.0; o * i];
    for r in 0..o {
        let g = grad.data()[r];
        let row = &weights.data()[r * i..(r + 1) * i];
        for k in 0..i {
            gx[k] += row[k] * g;
            gw[r * i + k] = g * x.data()[k];
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), gx)?,
        Tensor::new(vec![o, i], gw)?,
        grad.clone(),
    ))
}

/// `out[c, y, x] = gate[c] · f[c, y, x]`.
pub fn scale_channels(f: &Tensor, gate: &Tensor) -> Result<Tensor> {
    let (c, h, w) = f.chw()?;
    if gate.len() != c {
        return Err(Error::dim(format!(
            "channel gate has {} entries for {c} channels",
            gate.len()
        )));
    }
    let plane = h * w;
    let mut out = f.clone();
    for (ci, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let g = gate.data()[ci];
        chunk.iter_mut().for_each(|v| *v *= g);
    }
    Ok(out)
}

/// Returns `(grad_f, grad_gate)` for [`scale_channels`].
pub fn scale_channels_backward(grad: &Tensor, f: &Tensor, gate: &Tensor) -> Result<(Tensor, Tensor)> {
    f.check_same_shape(grad)?;
    let gf = scale_channels(grad, gate)?;
    let (c, h, w) = f.chw()?;
    let plane = h * w;
    let gg = (0..c)
        .map(|ci| {
            let a = &grad.data()[ci * plane..(ci + 1) * plane];
            let b = &f.data()[ci * plane..(ci + 1) * plane];
            a.iter().zip(b).map(|(x, y)| x * y).sum()
        })
        .collect();
    Ok((gf, Tensor::new(vec![c], gg)?))
}

/// `out[c, y, x] = mask[0, y, x] · f[c, y, x]`.
pub fn scale_spatial(f: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let (_, h, w) = f.chw()?;
    if mask.shape() != [1, h, w] {
        return Err(Error::dim(format!(
            "spatial mask shape {:?} does not match [1, {h}, {w}]",
            mask.shape()
        )));
    }
    let mut out = f.clone();
    for chunk in out.data_mut().chunks_mut(h * w) {
        for (v, m) in chunk.iter_mut().zip(mask.data()) {
            *v *= m;
        }
    }
    Ok(out)
}

/// Returns `(grad_f, grad_mask)` for [`scale_spatial`].
pub fn scale_spatial_backward(grad: &Tensor, f: &Tensor, mask: &Tensor) -> Result<(Tensor, Tensor)> {
    f.check_same_shape(grad)?;
    let gf = scale_spatial(grad, mask)?;
    let (_, h, w) = f.chw()?;
    let mut gm = vec![0.0; h * w];
    for (gc, fc) in grad.data().chunks(h * w).zip(f.data().chunks(h * w)) {
        for ((m, a), b) in gm.iter_mut().zip(gc).zip(fc) {
            *m += a * b;
        }
    }
    Ok((gf, Tensor::new(vec![1, h, w], gm)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::max_relative_error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let t = Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 2.0]);
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        assert_eq!(sigmoid_scalar(-800.0), 0.0);
        assert_eq!(sigmoid_scalar(800.0), 1.0);
    }

    #[test]
    fn relu_backward_fd() {
        // Keep samples away from the kink.
        let x = random(&[2, 3, 3], 1).map(|v| if v.abs() < 0.05 { 0.3 } else { v });
        let r = random(&[2, 3, 3], 2);
        let y = relu(&x);
        let mut g = r.clone();
        relu_backward_in_place(&y, &mut g);
        let err = max_relative_error(&x, &g, |t| dot(&relu(t), &r), 1e-3, 18, 0);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn sigmoid_backward_fd_at_zero() {
        let x = Tensor::zeros(&[1]);
        let mut g = Tensor::full(&[1], 1.0);
        sigmoid_backward_in_place(&sigmoid(&x), &mut g);
        assert_eq!(g.data(), &[0.25]);
        let err = max_relative_error(&x, &g, |t| sigmoid(t).sum(), 1e-3, 1, 0);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn maxpool_requires_even_extents() {
        assert!(matches!(
            maxpool2x2(&Tensor::zeros(&[1, 3, 4])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn maxpool_forward_and_backward() {
        let x = Tensor::new(vec![1, 2, 4], vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 9.0, 1.0]).unwrap();
        let (y, cache) = maxpool2x2(&x).unwrap();
        assert_eq!(y.data(), &[5.0, 9.0]);
        let gx = maxpool2x2_backward(&Tensor::new(vec![1, 1, 2], vec![1.0, 2.0]).unwrap(), &cache)
            .unwrap();
        assert_eq!(gx.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);

        // Distinct values so no probe sits on a tie.
        let x = random(&[2, 4, 6], 3);
        let r = random(&[2, 2, 3], 4);
        let (_, cache) = maxpool2x2(&x).unwrap();
        let g = maxpool2x2_backward(&r, &cache).unwrap();
        let err = max_relative_error(&x, &g, |t| dot(&maxpool2x2(t).unwrap().0, &r), 1e-3, 20, 5);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn upsample_x4_shape() {
        let y = upsample_bilinear(&Tensor::zeros(&[2, 64, 64]), 4).unwrap();
        assert_eq!(y.shape(), &[2, 256, 256]);
    }

    #[test]
    fn resize_identity_is_exact_and_middle_column_blends() {
        let x = random(&[3, 5, 7], 9);
        assert_eq!(resize_bilinear(&x, 5, 7).unwrap(), x);
        let x = Tensor::new(vec![1, 2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let y = resize_bilinear(&x, 2, 3).unwrap();
        assert_eq!(y.data(), &[0.0, 0.5, 1.0, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn resize_backward_is_adjoint() {
        for (h, w, oh, ow) in [(4, 4, 8, 8), (3, 5, 7, 2), (8, 8, 2, 2), (16, 16, 64, 64)] {
            let x = random(&[2, h, w], 10);
            let r = random(&[2, oh, ow], 11);
            let lhs = dot(&resize_bilinear(&x, oh, ow).unwrap(), &r);
            let rhs = dot(&x, &resize_bilinear_backward(&r, h, w).unwrap());
            assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        }
        let x = random(&[1, 3, 3], 12);
        let r = random(&[1, 12, 12], 13);
        let g = upsample_bilinear_backward(&r, 4).unwrap();
        let err = max_relative_error(
            &x,
            &g,
            |t| dot(&upsample_bilinear(t, 4).unwrap(), &r),
            1e-3,
            9,
            0,
        );
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn concat_then_split_roundtrips() {
        let a = random(&[2, 3, 3], 1);
        let b = random(&[5, 3, 3], 2);
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[7, 3, 3]);
        let parts = split_channels(&c, &[2, 5]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
        assert!(concat_channels(&[&a, &random(&[1, 2, 3], 3)]).is_err());
    }

    #[test]
    fn dense_backward_fd() {
        let x = random(&[6], 1);
        let w = random(&[4, 6], 2);
        let b = random(&[4], 3);
        let r = random(&[4], 4);
        let (gx, gw, gb) = dense_backward(&r, &x, &w).unwrap();
        let f = |x: &Tensor, w: &Tensor, b: &Tensor| dot(&dense(x, w, b).unwrap(), &r);
        assert!(max_relative_error(&x, &gx, |t| f(t, &w, &b), 1e-3, 6, 0) < 1e-7);
        assert!(max_relative_error(&w, &gw, |t| f(&x, t, &b), 1e-3, 20, 1) < 1e-7);
        assert!(max_relative_error(&b, &gb, |t| f(&x, &w, t), 1e-3, 4, 2) < 1e-7);
    }

    #[test]
    fn gap_and_gating_backward_fd() {
        let f = random(&[3, 4, 5], 1);
        let r3 = random(&[3], 2);
        let g = global_avg_pool_backward(&r3, 4, 5).unwrap();
        assert!(
            max_relative_error(&f, &g, |t| dot(&global_avg_pool(t).unwrap(), &r3), 1e-3, 20, 0)
                < 1e-7
        );

        let gate = random(&[3], 3);
        let r = random(&[3, 4, 5], 4);
        let (gf, gg) = scale_channels_backward(&r, &f, &gate).unwrap();
        assert!(
            max_relative_error(&f, &gf, |t| dot(&scale_channels(t, &gate).unwrap(), &r), 1e-3, 20, 1)
                < 1e-7
        );
        assert!(
            max_relative_error(&gate, &gg, |t| dot(&scale_channels(&f, t).unwrap(), &r), 1e-3, 3, 2)
                < 1e-7
        );

        let mask = random(&[1, 4, 5], 5);
        let (gf, gm) = scale_spatial_backward(&r, &f, &mask).unwrap();
        assert!(
            max_relative_error(&f, &gf, |t| dot(&scale_spatial(t, &mask).unwrap(), &r), 1e-3, 20, 3)
                < 1e-7
        );
        assert!(
            max_relative_error(&mask, &gm, |t| dot(&scale_spatial(&f, t).unwrap(), &r), 1e-3, 20, 4)
                < 1e-7
        );
    }

    #[test]
    fn kink_trace_sees_relu_flips() {
        let x = Tensor::new(vec![2], vec![0.5, -0.5]).unwrap();
        let (_, a) = with_kink_trace(|| relu(&x));
        let (_, b) = with_kink_trace(|| relu(&x.map(|v| v + 0.1)));
        let (_, c) = with_kink_trace(|| relu(&x.map(|v| -v)));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
