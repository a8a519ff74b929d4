//! Saliency evaluation: MAE, F-measure and weighted F-measure.

pub mod weighted;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use weighted::weighted_f_beta;

/// Precision weight used throughout.
pub const BETA2: f64 = 0.3;

/// A predicted saliency map with values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::dim(format!(
                "{width}x{height} map cannot hold {} values",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Numeric(format!("saliency value {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// From a `[1, H, W]` or `[H, W]` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [1, h, w] | [h, w] => Self::new(w, h, t.data().to_vec()),
            _ => Err(Error::dim(format!("expected a one-channel map, got {:?}", t.shape()))),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, self.height, self.width], self.values.clone()).expect("valid map")
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Values rounded to the nearest 1/255, as stored in an 8-bit PNG.
    pub fn quantized(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| (v * 255.0).round() / 255.0).collect(),
            ..self.clone()
        }
    }
}

/// A binary ground-truth mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
}

impl GroundTruth {
    pub fn new(width: usize, height: usize, mask: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || mask.len() != width * height {
            return Err(Error::dim(format!(
                "{width}x{height} mask cannot hold {} values",
                mask.len()
            )));
        }
        Ok(Self {
            width,
            height,
            mask,
        })
    }

    /// Pixels `≥ 0.5` are foreground.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [1, h, w] | [h, w] => Self::new(w, h, t.data().iter().map(|&v| v >= 0.5).collect()),
            _ => Err(Error::dim(format!("expected a one-channel mask, got {:?}", t.shape()))),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.mask.iter().map(|&m| f64::from(u8::from(m))).collect();
        Tensor::new(vec![1, self.height, self.width], data).expect("valid mask")
    }

    pub fn foreground(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub(crate) fn check_extent(p: &SaliencyMap, g: &GroundTruth) -> Result<()> {
    if (p.width, p.height) != (g.width, g.height) {
        return Err(Error::dim(format!(
            "map is {}x{}, ground truth {}x{}",
            p.width, p.height, g.width, g.height
        )));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(p: &SaliencyMap, g: &GroundTruth) -> Result<f64> {
    check_extent(p, g)?;
    let s: f64 = p
        .values
        .iter()
        .zip(&g.mask)
        .map(|(&v, &m)| (v - f64::from(u8::from(m))).abs())
        .sum();
    Ok(s / p.values.len() as f64)
}

/// How a map is turned into a binary mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Binarization {
    /// `τ = min(1, 2·mean)`.
    Adaptive,
    Fixed(f64),
}

pub fn adaptive_threshold(p: &SaliencyMap) -> f64 {
    (2.0 * p.mean()).min(1.0)
}

/// A pixel is salient iff its value exceeds the threshold.
pub fn binarize(p: &SaliencyMap, mode: Binarization) -> Vec<bool> {
    let tau = match mode {
        Binarization::Adaptive => adaptive_threshold(p),
        Binarization::Fixed(t) => t,
    };
    p.values.iter().map(|&v| v > tau).collect()
}

/// Threshold rule for [`f_beta`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMode {
    Adaptive,
    /// Best score over the thresholds `k/255` and the adaptive threshold.
    SweepMax,
}

impl ThresholdMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ThresholdMode::Adaptive => "adaptive",
            ThresholdMode::SweepMax => "sweep-max",
        }
    }
}

impl std::str::FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "adaptive" => Ok(ThresholdMode::Adaptive),
            "sweep-max" | "sweep" => Ok(ThresholdMode::SweepMax),
            other => Err(Error::Format(format!("unknown threshold mode `{other}`"))),
        }
    }
}

/// F-measure from precision and recall; zero when both are zero.
pub fn f_from_pr(precision: f64, recall: f64, beta2: f64) -> f64 {
    let den = beta2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + beta2) * precision * recall / den
    }
}

/// F-measure of a binary prediction. An empty prediction has precision 0;
/// if the ground truth is empty too the score is 1.
pub fn f_beta_binary(pred: &[bool], g: &GroundTruth, beta2: f64) -> Result<f64> {
    if pred.len() != g.mask.len() {
        return Err(Error::dim("prediction and ground truth differ in size"));
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(&g.mask) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    if tp + fp == 0 {
        return Ok(if tp + fneg == 0 { 1.0 } else { 0.0 });
    }
    if tp + fneg == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fneg) as f64;
    Ok(f_from_pr(precision, recall, beta2))
}

pub fn f_beta(p: &SaliencyMap, g: &GroundTruth, beta2: f64, mode: ThresholdMode) -> Result<f64> {
    check_extent(p, g)?;
    let adaptive = f_beta_binary(&binarize(p, Binarization::Adaptive), g, beta2)?;
    match mode {
        ThresholdMode::Adaptive => Ok(adaptive),
        ThresholdMode::SweepMax => (0..=255).try_fold(adaptive, |best, k| {
            let mask = binarize(p, Binarization::Fixed(f64::from(k) / 255.0));
            Ok(best.max(f_beta_binary(&mask, g, beta2)?))
        }),
    }
}

/// Scores for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMetrics {
    pub id: String,
    pub f_beta: f64,
    pub f_beta_w: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub threshold_mode: ThresholdMode,
    pub f_beta: f64,
    pub f_beta_w: f64,
    pub mae: f64,
    pub per_image: Vec<ImageMetrics>,
}

pub fn evaluate_image(
    id: &str,
    p: &SaliencyMap,
    g: &GroundTruth,
    mode: ThresholdMode,
) -> Result<ImageMetrics> {
    Ok(ImageMetrics {
        id: id.to_string(),
        f_beta: f_beta(p, g, BETA2, mode)?,
        f_beta_w: weighted_f_beta(p, g, BETA2)?,
        mae: mae(p, g)?,
    })
}

/// Scores matched `(id, map)` and `(id, mask)` lists. Ids must agree
/// position by position.
pub fn evaluate_dataset(
    preds: &[(String, SaliencyMap)],
    gts: &[(String, GroundTruth)],
    mode: ThresholdMode,
) -> Result<MetricsReport> {
    if preds.len() != gts.len() {
        return Err(Error::Pairing(format!(
            "{} predictions for {} ground-truth masks",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Pairing("nothing to evaluate".into()));
    }
    if let Some(((a, _), (b, _))) = preds.iter().zip(gts).find(|((a, _), (b, _))| a != b) {
        return Err(Error::Pairing(format!("prediction `{a}` paired with ground truth `{b}`")));
    }
    let per_image = preds
        .par_iter()
        .zip(gts)
        .map(|((id, p), (_, g))| evaluate_image(id, p, g, mode))
        .collect::<Result<Vec<_>>>()?;
    let n = per_image.len() as f64;
    let mean = |f: fn(&ImageMetrics) -> f64| per_image.iter().map(f).sum::<f64>() / n;
    Ok(MetricsReport {
        threshold_mode: mode,
        f_beta: mean(|m| m.f_beta),
        f_beta_w: mean(|m| m.f_beta_w),
        mae: mean(|m| m.mae),
        per_image,
    })
}

impl MetricsReport {
    /// One row per image followed by an `ALL` row with the means.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,f_beta,f_beta_w,mae,threshold_mode\n");
        let mode = self.threshold_mode.as_str();
        for m in &self.per_image {
            let _ = writeln!(s, "{},{:.9},{:.9},{:.9},{mode}", m.id, m.f_beta, m.f_beta_w, m.mae);
        }
        let _ = writeln!(
            s,
            "ALL,{:.9},{:.9},{:.9},{mode}",
            self.f_beta, self.f_beta_w, self.mae
        );
        s
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "threshold_mode = {}\nimages = {}\nf_beta = {:.9}\nf_beta_w = {:.9}\nmae = {:.9}\n",
            self.threshold_mode.as_str(),
            self.per_image.len(),
            self.f_beta,
            self.f_beta_w,
            self.mae
        )
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn write_key_values(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_key_values()).map_err(|e| Error::io(path, e))
    }
}
