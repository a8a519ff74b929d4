//! Light field in, saliency map out.
//!
//! Every sub-aperture image is resized to `spatial × spatial`, the field is
//! packed into its micro-lens image, encoded, and passed to the detector.
//! The output is `spatial/2` pixels square. A center-view mode feeds the
//! detector the central view instead, resized to the same output size.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::detector::{Detector, DetectorCache, Profile, ShapeTrace};
use crate::error::{Error, Result};
use crate::fee::{self, FeeCache, BLOCK};
use crate::lightfield::{center_view, mla_from_sai, resize_spatial, LightField};
use crate::metrics::SaliencyMap;
use crate::tensor::checkpoint::Checkpoint;
use crate::tensor::{ops, GradSet, ParamSet, Tensor};

/// Sub-aperture resolution the encoder expects at full scale.
pub const FULL_SPATIAL: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    LightField,
    CenterView,
}

impl InputMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InputMode::LightField => "light-field",
            InputMode::CenterView => "center-view",
        }
    }
}

impl FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "light-field" | "lf" => Ok(InputMode::LightField),
            "center-view" | "center" => Ok(InputMode::CenterView),
            other => Err(Error::Format(format!("unknown input mode `{other}`"))),
        }
    }
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub detector: Detector,
    /// Side of the square sub-aperture images after resizing.
    pub spatial: usize,
    pub mode: InputMode,
}

/// Saved state of a training forward pass.
#[derive(Debug, Clone)]
pub struct PipelineCache {
    fee: Option<FeeCache>,
    det: DetectorCache,
}

impl Pipeline {
    /// `spatial` must be a multiple of 32 so the output side is a multiple of 16.
    pub fn new(profile: Profile, spatial: usize, mode: InputMode) -> Result<Self> {
        if spatial == 0 || !spatial.is_multiple_of(32) {
            return Err(Error::dim(format!(
                "spatial size {spatial} must be a positive multiple of 32"
            )));
        }
        Ok(Self {
            detector: Detector::new(profile),
            spatial,
            mode,
        })
    }

    pub fn output_size(&self) -> usize {
        self.spatial / 2
    }

    pub fn uses_fee(&self) -> bool {
        self.mode == InputMode::LightField
    }

    /// Fresh parameters for every layer this pipeline uses.
    pub fn init_params(&self, seed: u64) -> ParamSet {
        let mut p = self.detector.init(seed);
        if self.uses_fee() {
            p.extend(fee::build_fee(seed)).expect("disjoint prefixes");
        }
        p
    }

    /// Network input for a light field: the packed micro-lens image, or the
    /// resized center view.
    pub fn prepare(&self, lf: &LightField) -> Result<Tensor> {
        if lf.angular() != (BLOCK, BLOCK) {
            return Err(Error::dim(format!(
                "pipeline needs a 9x9 angular grid, got {:?}",
                lf.angular()
            )));
        }
        match self.mode {
            InputMode::LightField => {
                let lf = resize_spatial(lf, self.spatial, self.spatial)?;
                Ok(mla_from_sai(&lf).into_tensor())
            }
            InputMode::CenterView => {
                let v = center_view(lf).to_tensor();
                let n = self.output_size();
                Ok(ops::resize_bilinear(&v, n, n)?.map(|x| x.clamp(0.0, 1.0)))
            }
        }
    }

    pub fn forward_input(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        let encoded = if self.uses_fee() {
            fee::fee_forward(x, params)?
        } else {
            x.clone()
        };
        self.detector.forward(params, &encoded)
    }

    pub fn forward(&self, params: &ParamSet, lf: &LightField) -> Result<SaliencyMap> {
        SaliencyMap::from_tensor(&self.forward_input(params, &self.prepare(lf)?)?)
    }

    /// Forward pass recording the encoder and detector shapes.
    pub fn forward_traced(&self, params: &ParamSet, lf: &LightField) -> Result<(SaliencyMap, ShapeTrace)> {
        let x = self.prepare(lf)?;
        let mut trace = vec![("input".to_string(), x.shape().to_vec())];
        let encoded = if self.uses_fee() {
            let (y, shapes) = fee::fee_forward_traced(&x, params)?;
            for (name, s) in fee::LAYER_NAMES.iter().zip(shapes) {
                trace.push((name.to_string(), s));
            }
            y
        } else {
            x
        };
        let y = self.detector.forward_traced(params, &encoded, Some(&mut trace))?;
        Ok((SaliencyMap::from_tensor(&y)?, trace))
    }

    pub fn forward_train(&self, params: &ParamSet, x: &Tensor) -> Result<(Tensor, PipelineCache)> {
        let (encoded, fee) = if self.uses_fee() {
            let (y, c) = fee::fee_forward_train(x, params)?;
            (y, Some(c))
        } else {
            (x.clone(), None)
        };
        let (y, det) = self.detector.forward_train(params, &encoded)?;
        Ok((y, PipelineCache { fee, det }))
    }

    /// Accumulates gradients of the selected parts into `grads`.
    pub fn backward(
        &self,
        params: &ParamSet,
        cache: &PipelineCache,
        grad: Tensor,
        grads: &mut GradSet,
        train_fee: bool,
        train_detector: bool,
    ) -> Result<()> {
        let fee_cache = cache.fee.as_ref().filter(|_| train_fee);
        let det_grads = train_detector.then_some(&mut *grads);
        let g = self
            .detector
            .backward(params, &cache.det, grad, det_grads, fee_cache.is_some())?;
        if let (Some(fc), Some(g)) = (fee_cache, g) {
            fee::fee_backward(params, fc, g, Some(grads), false)?;
        }
        Ok(())
    }
}

/// A pipeline together with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub pipeline: Pipeline,
    pub params: ParamSet,
}

fn meta_scalar(ck: &Checkpoint, name: &str) -> Result<f64> {
    let t = ck
        .get(name)
        .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))?;
    match t.data() {
        [v] => Ok(*v),
        _ => Err(Error::Format(format!("{name} must hold one value"))),
    }
}

impl Model {
    pub fn new(profile: Profile, spatial: usize, mode: InputMode, seed: u64) -> Result<Self> {
        let pipeline = Pipeline::new(profile, spatial, mode)?;
        let params = pipeline.init_params(seed);
        Ok(Self { pipeline, params })
    }

    pub fn predict(&self, lf: &LightField) -> Result<SaliencyMap> {
        self.pipeline.forward(&self.params, lf)
    }

    /// Weights plus `meta.spatial`, `meta.profile` (0 toy, 1 full) and
    /// `meta.input_mode` (0 light field, 1 center view).
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_params(&self.params);
        let scalar = |v: f64| Tensor::new(vec![1], vec![v]).expect("scalar");
        ck.insert("meta.spatial", scalar(self.pipeline.spatial as f64));
        let profile = if self.pipeline.detector.profile == Profile::FULL { 1.0 } else { 0.0 };
        ck.insert("meta.profile", scalar(profile));
        let mode = match self.pipeline.mode {
            InputMode::LightField => 0.0,
            InputMode::CenterView => 1.0,
        };
        ck.insert("meta.input_mode", scalar(mode));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let spatial = meta_scalar(ck, "meta.spatial")?;
        let profile = match meta_scalar(ck, "meta.profile")? {
            0.0 => Profile::TOY,
            1.0 => Profile::FULL,
            v => return Err(Error::Format(format!("unknown profile code {v}"))),
        };
        let mode = match meta_scalar(ck, "meta.input_mode")? {
            0.0 => InputMode::LightField,
            1.0 => InputMode::CenterView,
            v => return Err(Error::Format(format!("unknown input mode code {v}"))),
        };
        if spatial < 1.0 || spatial.fract() != 0.0 {
            return Err(Error::Format(format!("bad meta.spatial {spatial}")));
        }
        let pipeline = Pipeline::new(profile, spatial as usize, mode)
            .map_err(|e| Error::Format(e.to_string()))?;
        let mut params = ck.params("det.")?;
        if pipeline.uses_fee() {
            params.extend(ck.params("fee.")?)?;
        }
        // every expected layer must be present with the right shapes
        let expected = pipeline.init_params(0);
        for (name, p) in expected.iter() {
            let got = params
                .get(name)
                .map_err(|_| Error::Format(format!("checkpoint lacks layer {name}")))?;
            if got.weight.shape() != p.weight.shape() || got.bias.shape() != p.bias.shape() {
                return Err(Error::Format(format!("layer {name} has the wrong shape")));
            }
        }
        Ok(Self { pipeline, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Full-resolution forward pass with the given weights.
pub fn pipeline_forward(lf: &LightField, params: &ParamSet, profile: Profile) -> Result<SaliencyMap> {
    Pipeline::new(profile, FULL_SPATIAL, InputMode::LightField)?.forward(params, lf)
}
