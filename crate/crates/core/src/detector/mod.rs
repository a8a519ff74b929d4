//! Attention-based 2-D saliency detector.
//!
//! A VGG-style backbone exposes five taps. The three deepest go through a
//! multi-dilation context block and a channel gate, then a 1×1 conv and
//! ×4 upsampling. The two shallowest are fused by a 3×3 conv and gated by
//! a spatial mask computed from the high-level branch. Both paths are
//! concatenated and reduced to one sigmoid channel.
//!
//! Input extents must be multiples of 16; for a 256×256 input the taps are
//! 256, 128, 64, 32 and 16 pixels wide.

pub mod attention;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::conv;
use crate::tensor::layer::{Conv, ConvCache};
use crate::tensor::ops::{self, MaxPoolCache};
use crate::tensor::{Activation, ConvLayerSpec, GradSet, ParamSet, Tensor};

pub use attention::{CaCache, ChannelAttention, SaCache, SpatialAttention};

/// Channel widths of one detector configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Profile {
    pub name: &'static str,
    /// Output channels of backbone stages 1–5.
    pub backbone: [usize; 5],
    /// Channels per context branch; four branches per tap, three taps.
    pub cpfe_branch: usize,
    /// Width of the high and low fusion convs.
    pub fusion: usize,
    /// Width inside the spatial-attention branches.
    pub sa_mid: usize,
}

impl Profile {
    pub const TOY: Profile = Profile {
        name: "toy",
        backbone: [16, 32, 64, 64, 64],
        cpfe_branch: 8,
        fusion: 16,
        sa_mid: 8,
    };

    pub const FULL: Profile = Profile {
        name: "full",
        backbone: [64, 128, 256, 512, 512],
        cpfe_branch: 32,
        fusion: 64,
        sa_mid: 32,
    };

    pub fn cpfe_channels(&self) -> usize {
        12 * self.cpfe_branch
    }

    pub fn low_concat_channels(&self) -> usize {
        self.backbone[0] + self.backbone[1]
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "toy" => Ok(Profile::TOY),
            "full" => Ok(Profile::FULL),
            other => Err(Error::Format(format!("unknown profile `{other}`"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name)
    }
}

/// Convs per backbone stage.
const STAGE_DEPTH: [usize; 5] = [2, 2, 3, 3, 3];
/// Dilations of the context branches after the leading 1×1 branch.
pub const CPFE_DILATIONS: [usize; 3] = [3, 5, 7];
/// Names of the backbone taps.
pub const TAP_NAMES: [&str; 5] = ["conv1_2", "conv2_2", "conv3_3", "conv4_3", "conv5_3"];

/// Backbone feature maps at the five tap points.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneTaps {
    pub levels: [Tensor; 5],
}

/// The layer graph for one profile. Weights are kept separately in a
/// [`ParamSet`] under `det.*`.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub profile: Profile,
    pub backbone: Vec<Vec<Conv>>,
    /// Per deep tap: the 1×1 branch then the dilated branches.
    pub cpfe: Vec<[Conv; 4]>,
    pub ca: ChannelAttention,
    pub high: Conv,
    pub low: Conv,
    pub sa: SpatialAttention,
    pub head: Conv,
}

/// Named shapes recorded during a traced forward pass.
pub type ShapeTrace = Vec<(String, Vec<usize>)>;

#[derive(Debug, Clone)]
struct BackboneCache {
    convs: Vec<Vec<ConvCache>>,
    pools: Vec<MaxPoolCache>,
}

/// Everything [`Detector::backward`] needs from a training forward pass.
#[derive(Debug, Clone)]
pub struct DetectorCache {
    backbone: BackboneCache,
    tap_hw: [(usize, usize); 5],
    cpfe: Vec<[ConvCache; 4]>,
    ca: CaCache,
    high: ConvCache,
    low: ConvCache,
    sa: SaCache,
    head: ConvCache,
}

impl Detector {
    pub fn new(profile: Profile) -> Self {
        let mut backbone = Vec::with_capacity(5);
        let mut c_in = 3;
        for (stage, (&width, &depth)) in profile.backbone.iter().zip(&STAGE_DEPTH).enumerate() {
            let convs = (0..depth)
                .map(|i| {
                    let name = format!("det.backbone.conv{}_{}", stage + 1, i + 1);
                    
                    Conv::new(name, if i == 0 { c_in } else { width }, ConvLayerSpec::new(width, 3))
                })
                .collect();
            backbone.push(convs);
            c_in = width;
        }

        let bw = profile.cpfe_branch;
        let cpfe = (2..5)
            .map(|tap| {
                let c = profile.backbone[tap];
                let prefix = format!("det.cpfe.{}", TAP_NAMES[tap]);
                let dil = |d: usize| Conv::new(format!("{prefix}.d{d}"), c, ConvLayerSpec::new(bw, 3).dilation(d));
                [
                    Conv::new(format!("{prefix}.1x1"), c, ConvLayerSpec::new(bw, 1)),
                    dil(CPFE_DILATIONS[0]),
                    dil(CPFE_DILATIONS[1]),
                    dil(CPFE_DILATIONS[2]),
                ]
            })
            .collect();

        let cc = profile.cpfe_channels();
        let f = profile.fusion;
        Self {
            profile,
            backbone,
            cpfe,
            ca: ChannelAttention::new("det.ca", cc),
            high: Conv::new("det.head.high", cc, ConvLayerSpec::new(f, 1)),
            low: Conv::new("det.head.low", profile.low_concat_channels(), ConvLayerSpec::new(f, 3)),
            sa: SpatialAttention::new("det.sa", f, profile.sa_mid),
            head: Conv::new(
                "det.head.out",
                2 * f,
                ConvLayerSpec::new(1, 3).activation(Activation::Sigmoid),
            ),
        }
    }

    fn convs(&self) -> impl Iterator<Item = &Conv> {
        self.backbone
            .iter()
            .flatten()
            .chain(self.cpfe.iter().flatten())
            .chain([&self.high, &self.low, &self.head])
    }

    /// Seeded He-uniform weights, zero biases.
    pub fn init(&self, seed: u64) -> ParamSet {
        let mut p = ParamSet::new();
        for c in self.convs() {
            c.init(&mut p, seed).expect("unique layer names");
        }
        self.ca.init(&mut p, seed).expect("unique layer names");
        self.sa.init(&mut p, seed).expect("unique layer names");
        p
    }

    pub fn param_count(&self) -> usize {
        self.convs().map(Conv::param_count).sum::<usize>()
            + self.ca.param_count()
            + self.sa.param_count()
    }

    /// Closed-form multiply-accumulates per layer for an `h × w` input.
    pub fn layer_macs(&self, h: usize, w: usize) -> Result<Vec<(String, u64)>> {
        let mut out = Vec::new();
        let mut push = |c: &Conv, hh: usize, ww: usize| -> Result<()> {
            out.push((c.name.clone(), conv::conv_macs(&c.spec, c.in_channels, hh, ww)?));
            Ok(())
        };
        for (level, stage) in self.backbone.iter().enumerate() {
            for c in stage {
                push(c, h >> level, w >> level)?;
            }
        }
        for (k, branches) in self.cpfe.iter().enumerate() {
            for c in branches {
                push(c, h >> (2 + k), w >> (2 + k))?;
            }
        }
        push(&self.high, h / 4, w / 4)?;
        push(&self.low, h, w)?;
        for c in [&self.sa.a1, &self.sa.a2, &self.sa.b1, &self.sa.b2] {
            push(c, h, w)?;
        }
        push(&self.head, h, w)?;
        for d in [&self.ca.fc1, &self.ca.fc2] {
            out.push((d.name.clone(), (d.inputs * d.outputs) as u64));
        }
        Ok(out)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (c, h, w) = x.chw()?;
        if c != 3 || h % 16 != 0 || w % 16 != 0 {
            return Err(Error::dim(format!(
                "detector input must be [3, H, W] with H, W multiples of 16, got {:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn backbone_forward(&self, params: &ParamSet, x: &Tensor) -> Result<BackboneTaps> {
        self.check_input(x)?;
        let mut taps = Vec::with_capacity(5);
        let mut h = x.clone();
        for (i, stage) in self.backbone.iter().enumerate() {
            if i > 0 {
                h = ops::maxpool2x2(&h)?.0;
            }
            for conv in stage {
                h = conv.forward(params, &h)?;
            }
            taps.push(h.clone());
        }
        Ok(BackboneTaps {
            levels: taps.try_into().expect("five stages"),
        })
    }

    /// Context features on the conv3_3 grid.
    pub fn cpfe(&self, params: &ParamSet, taps: &BackboneTaps) -> Result<Tensor> {
        let (_, h3, w3) = taps.levels[2].chw()?;
        let mut parts = Vec::with_capacity(3);
        for (k, branches) in self.cpfe.iter().enumerate() {
            let tap = &taps.levels[2 + k];
            let outs = branches
                .iter()
                .map(|b| b.forward(params, tap))
                .collect::<Result<Vec<_>>>()?;
            let cat = ops::concat_channels(&outs.iter().collect::<Vec<_>>())?;
            parts.push(ops::resize_bilinear(&cat, h3, w3)?);
        }
        ops::concat_channels(&parts.iter().collect::<Vec<_>>())
    }

    pub fn forward(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        self.forward_traced(params, x, None)
    }

    /// Forward pass that optionally records intermediate shapes.
    pub fn forward_traced(
        &self,
        params: &ParamSet,
        x: &Tensor,
        mut trace: Option<&mut ShapeTrace>,
    ) -> Result<Tensor> {
        let mut rec = |name: &str, t: &Tensor| {
            if let Some(tr) = trace.as_deref_mut() {
                tr.push((name.to_string(), t.shape().to_vec()));
            }
        };
        let taps = self.backbone_forward(params, x)?;
        for (name, t) in TAP_NAMES.iter().zip(&taps.levels) {
            rec(name, t);
        }
        let f = self.cpfe(params, &taps)?;
        rec("cpfe", &f);
        let (f, _) = self.ca.forward(params, &f)?;
        rec("ca", &f);
        let hi = ops::upsample_bilinear(&self.high.forward(params, &f)?, 4)?;
        rec("high", &hi);
        let low_in = ops::concat_channels(&[
            &taps.levels[0],
            &ops::upsample_bilinear(&taps.levels[1], 2)?,
        ])?;
        rec("low_concat", &low_in);
        let lo = self.low.forward(params, &low_in)?;
        let (lo, _) = self.sa.forward(params, &lo, &hi)?;
        rec("low", &lo);
        let cat = ops::concat_channels(&[&hi, &lo])?;
        rec("fusion", &cat);
        let y = self.head.forward(params, &cat)?;
        rec("saliency", &y);
        Ok(y)
    }

    pub fn forward_train(&self, params: &ParamSet, x: &Tensor) -> Result<(Tensor, DetectorCache)> {
        self.check_input(x)?;
        // backbone
        let mut convs = Vec::with_capacity(5);
        let mut pools = Vec::with_capacity(4);
        let mut taps: Vec<Tensor> = Vec::with_capacity(5);
        let mut h = x.clone();
        for (i, stage) in self.backbone.iter().enumerate() {
            if i > 0 {
                let (p, c) = ops::maxpool2x2(&h)?;
                pools.push(c);
                h = p;
            }
            let mut caches = Vec::with_capacity(stage.len());
            for conv in stage {
                let (y, c) = conv.forward_train(params, &h)?;
                caches.push(c);
                h = y;
            }
            convs.push(caches);
            taps.push(h.clone());
        }
        let tap_hw: [(usize, usize); 5] =
            std::array::from_fn(|i| (taps[i].shape()[1], taps[i].shape()[2]));

        // context block
        let (h3, w3) = tap_hw[2];
        let mut cpfe_caches = Vec::with_capacity(3);
        let mut parts = Vec::with_capacity(3);
        for (k, branches) in self.cpfe.iter().enumerate() {
            let mut outs = Vec::with_capacity(4);
            let mut caches = Vec::with_capacity(4);
            for b in branches {
                let (y, c) = b.forward_train(params, &taps[2 + k])?;
                outs.push(y);
                caches.push(c);
            }
            let cat = ops::concat_channels(&outs.iter().collect::<Vec<_>>())?;
            parts.push(ops::resize_bilinear(&cat, h3, w3)?);
            cpfe_caches.push(caches.try_into().expect("four branches"));
        }
        let f = ops::concat_channels(&parts.iter().collect::<Vec<_>>())?;

        let (f, ca) = self.ca.forward_train(params, &f)?;
        let (hi, high) = self.high.forward_train(params, &f)?;
        let hi = ops::upsample_bilinear(&hi, 4)?;
        let low_in = ops::concat_channels(&[&taps[0], &ops::upsample_bilinear(&taps[1], 2)?])?;
        let (lo, low) = self.low.forward_train(params, &low_in)?;
        let (lo, sa) = self.sa.forward_train(params, &lo, &hi)?;
        let cat = ops::concat_channels(&[&hi, &lo])?;
        let (y, head) = self.head.forward_train(params, &cat)?;
        let cache = DetectorCache {
            backbone: BackboneCache { convs, pools },
            tap_hw,
            cpfe: cpfe_caches,
            ca,
            high,
            low,
            sa,
            head,
        };
        Ok((y, cache))
    }

    /// Back-propagates `grad` (w.r.t. the saliency output). Parameter
    /// gradients accumulate into `grads` when given; the input gradient is
    /// returned when `want_input` is set.
    pub fn backward(
        &self,
        params: &ParamSet,
        cache: &DetectorCache,
        grad: Tensor,
        mut grads: Option<&mut GradSet>,
        want_input: bool,
    ) -> Result<Option<Tensor>> {
        let f = self.profile.fusion;
        let g_cat = self
            .head
            .backward(params, &cache.head, grad, grads.as_deref_mut(), true)?
            .expect("input gradient");
        let [mut g_hi, g_lo] = <[Tensor; 2]>::try_from(ops::split_channels(&g_cat, &[f, f])?)
            .expect("two parts");

        // spatial gate and low path
        let (g_lo, g_hi_sa) = self.sa.backward(params, &cache.sa, &g_lo, grads.as_deref_mut())?;
        g_hi.add_assign(&g_hi_sa)?;
        let g_low_in = self
            .low
            .backward(params, &cache.low, g_lo, grads.as_deref_mut(), true)?
            .expect("input gradient");
        let [c1, c2, ..] = self.profile.backbone;
        let [g_tap1, g_tap2_up] = <[Tensor; 2]>::try_from(ops::split_channels(&g_low_in, &[c1, c2])?)
            .expect("two parts");
        let mut tap_grads: [Option<Tensor>; 5] = Default::default();
        tap_grads[0] = Some(g_tap1);
        tap_grads[1] = Some(ops::upsample_bilinear_backward(&g_tap2_up, 2)?);

        // high path
        let g_hi = ops::upsample_bilinear_backward(&g_hi, 4)?;
        let g_f = self
            .high
            .backward(params, &cache.high, g_hi, grads.as_deref_mut(), true)?
            .expect("input gradient");
        let g_f = self.ca.backward(params, &cache.ca, &g_f, grads.as_deref_mut())?;
        let bw = self.profile.cpfe_branch;
        let per_tap = ops::split_channels(&g_f, &[4 * bw; 3])?;
        for (k, (branches, caches)) in self.cpfe.iter().zip(&cache.cpfe).enumerate() {
            let (th, tw) = cache.tap_hw[2 + k];
            let g = ops::resize_bilinear_backward(&per_tap[k], th, tw)?;
            let parts = ops::split_channels(&g, &[bw; 4])?;
            let mut g_tap: Option<Tensor> = None;
            for ((b, c), gp) in branches.iter().zip(caches).zip(parts) {
                let gi = b
                    .backward(params, c, gp, grads.as_deref_mut(), true)?
                    .expect("input gradient");
                match g_tap.as_mut() {
                    Some(acc) => acc.add_assign(&gi)?,
                    None => g_tap = Some(gi),
                }
            }
            tap_grads[2 + k] = g_tap;
        }

        // backbone, deepest stage first
        let mut g: Option<Tensor> = None;
        for (stage_idx, stage) in self.backbone.iter().enumerate().rev() {
            let tap = tap_grads[stage_idx].take().expect("every tap has a gradient");
            let mut gs = match g.take() {
                Some(mut acc) => {
                    acc.add_assign(&tap)?;
                    acc
                }
                None => tap,
            };
            let caches = &cache.backbone.convs[stage_idx];
            for (i, (conv, c)) in stage.iter().zip(caches).enumerate().rev() {
                let need_input = stage_idx > 0 || i > 0 || want_input;
                match conv.backward(params, c, gs, grads.as_deref_mut(), need_input)? {
                    Some(gi) => gs = gi,
                    None => return Ok(None),
                }
            }
            if stage_idx > 0 {
                gs = ops::maxpool2x2_backward(&gs, &cache.backbone.pools[stage_idx - 1])?;
            }
            g = Some(gs);
        }
        Ok(g)
    }
}

/// Builds the layer graph and its seeded parameters.
pub fn build_detector(profile: Profile, seed: u64) -> (Detector, ParamSet) {
    let det = Detector::new(profile);
    let params = det.init(seed);
    (det, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn toy_taps_and_outputs() {
        let (det, p) = build_detector(Profile::TOY, 1);
        let x = random(&[3, 64, 48], 2);
        let taps = det.backbone_forward(&p, &x).unwrap();
        let shapes: Vec<_> = taps.levels.iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(
            shapes,
            vec![
                vec![16, 64, 48],
                vec![32, 32, 24],
                vec![64, 16, 12],
                vec![64, 8, 6],
                vec![64, 4, 3]
            ]
        );
        let mut trace = ShapeTrace::new();
        let y = det.forward_traced(&p, &x, Some(&mut trace)).unwrap();
        assert_eq!(y.shape(), &[1, 64, 48]);
        let get = |n: &str| trace.iter().find(|(k, _)| k == n).unwrap().1.clone();
        assert_eq!(get("cpfe"), vec![96, 16, 12]);
        assert_eq!(get("low_concat"), vec![48, 64, 48]);
        assert_eq!(get("fusion"), vec![32, 64, 48]);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn full_profile_channel_labels() {
        let det = Detector::new(Profile::FULL);
        assert_eq!(Profile::FULL.cpfe_channels(), 384);
        assert_eq!(Profile::FULL.low_concat_channels(), 192);
        assert_eq!(det.head.in_channels, 128);
        assert_eq!(det.low.in_channels, 192);
        assert_eq!(det.high.in_channels, 384);
    }

    #[test]
    fn zero_input_gives_zero_taps() {
        let (det, p) = build_detector(Profile::TOY, 3);
        let taps = det.backbone_forward(&p, &Tensor::zeros(&[3, 32, 32])).unwrap();
        assert!(taps.levels.iter().all(|t| t.max_abs() == 0.0));
        let z = det.cpfe(&p, &taps).unwrap();
        assert_eq!(z.shape(), &[96, 8, 8]);
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn forward_is_pure_and_rejects_bad_extents() {
        let (det, p) = build_detector(Profile::TOY, 4);
        let x = random(&[3, 32, 32], 5);
        assert_eq!(det.forward(&p, &x).unwrap(), det.forward(&p, &x).unwrap());
        assert!(matches!(
            det.forward(&p, &Tensor::zeros(&[3, 24, 32])),
            Err(Error::Dimension(_))
        ));
        assert!(det.forward(&p, &Tensor::zeros(&[1, 32, 32])).is_err());
    }

    #[test]
    fn train_forward_matches_inference() {
        let (det, p) = build_detector(Profile::TOY, 6);
        let x = random(&[3, 32, 16], 7);
        let (y, _) = det.forward_train(&p, &x).unwrap();
        assert_eq!(y, det.forward(&p, &x).unwrap());
    }

    #[test]
    fn dilation_seven_footprint() {
        // on a 64×64 grid a dilation-7 3×3 conv reaches ±7 pixels: 15×15
        let (det, p) = build_detector(Profile::TOY, 8);
        let branch = &det.cpfe[0][3];
        assert_eq!(branch.spec.dilation, (7, 7));
        let x = random(&[64, 64, 64], 9);
        let (y, cache) = branch.forward_train(&p, &x).unwrap();
        let mut g = Tensor::zeros(y.shape());
        for c in 0..8 {
            let i = g.idx3(c, 32, 32);
            g.data_mut()[i] = 1.0;
        }
        // linear probe: bypass the ReLU mask by using positive outputs only
        let gi = branch.backward(&p, &cache, g, None, true).unwrap().unwrap();
        let (mut ymin, mut ymax, mut xmin, mut xmax) = (64, 0, 64, 0);
        for c in 0..64 {
            for yy in 0..64 {
                for xx in 0..64 {
                    if gi.at3(c, yy, xx) != 0.0 {
                        (ymin, ymax) = (ymin.min(yy), ymax.max(yy));
                        (xmin, xmax) = (xmin.min(xx), xmax.max(xx));
                    }
                }
            }
        }
        assert_eq!((ymin, ymax, xmin, xmax), (25, 39, 25, 39));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (det, mut p) = build_detector(Profile::TOY, 10);
        // small random biases keep ReLUs away from exact zeros
        let names: Vec<String> = p.iter().map(|(n, _)| n.to_string()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in &names {
            for b in p.get_mut(n).unwrap().bias.data_mut() {
                *b = rng.gen_range(0.0..0.1);
            }
        }
        let x = random(&[3, 16, 16], 12);
        let w = random(&[1, 16, 16], 13);
        let obj = |x: &Tensor, p: &ParamSet| -> f64 {
            let y = det.forward(p, x).unwrap();
            y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = det.forward_train(&p, &x).unwrap();
        let mut grads = GradSet::new();
        let gx = det
            .backward(&p, &cache, w.clone(), Some(&mut grads), true)
            .unwrap()
            .unwrap();
        let r = gradcheck::check_gradient(&x, &gx, |t| obj(t, &p), 1e-3, 30, 1);
        assert!(r.probes >= 20 && r.max_relative_error < 1e-4, "input: {r:?}");
        assert_eq!(grads.len(), p.len());
        for name in ["det.backbone.conv1_1", "det.cpfe.conv5_3.d7", "det.ca.fc1", "det.sa.b1", "det.head.out"] {
            let g = grads.get(name).unwrap();
            let wt = p.get(name).unwrap().weight.clone();
            let r = gradcheck::check_gradient(
                &wt,
                &g.weight,
                |t| {
                    let mut q = p.clone();
                    q.get_mut(name).unwrap().weight = t.clone();
                    obj(&x, &q)
                },
                1e-3,
                20,
                2,
            );
            assert!(r.probes >= 20 && r.max_relative_error < 1e-4, "{name}: {r:?}");
        }
    }

    #[test]
    fn frozen_backward_collects_no_param_grads() {
        let (det, p) = build_detector(Profile::TOY, 14);
        let x = random(&[3, 16, 16], 15);
        let (y, cache) = det.forward_train(&p, &x).unwrap();
        let gx = det.backward(&p, &cache, Tensor::full(y.shape(), 1.0), None, true).unwrap();
        assert_eq!(gx.unwrap().shape(), &[3, 16, 16]);
    }

    #[test]
    fn analytic_macs_match_the_counter() {
        use crate::tensor::conv::{mac_counter, reset_mac_counter};
        for profile in [Profile::TOY, Profile::FULL] {
            let (det, params) = build_detector(profile, 1);
            let x = random(&[3, 32, 48], 2);
            reset_mac_counter();
            det.forward(&params, &x).unwrap();
            let total: u64 = det.layer_macs(32, 48).unwrap().iter().map(|(_, m)| m).sum();
            assert_eq!(mac_counter(), total, "{}", profile.name);
        }
        let (det, _) = build_detector(Profile::FULL, 0);
        let macs = det.layer_macs(256, 256).unwrap();
        let get = |n: &str| macs.iter().find(|(k, _)| k == n).unwrap().1;
        assert_eq!(get("det.backbone.conv1_1"), 64 * 3 * 9 * 256 * 256);
        assert_eq!(get("det.backbone.conv5_3"), 512 * 512 * 9 * 16 * 16);
        assert_eq!(get("det.cpfe.conv4_3.d5"), 32 * 512 * 9 * 32 * 32);
        assert_eq!(get("det.ca.fc1"), 384 * 96);
    }

    #[test]
    fn profiles_parse() {
        assert_eq!("toy".parse::<Profile>().unwrap(), Profile::TOY);
        assert_eq!("full".parse::<Profile>().unwrap(), Profile::FULL);
        assert!("huge".parse::<Profile>().is_err());
    }
}
