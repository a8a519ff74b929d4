//! Three-stage training.
//!
//! 1. detector alone on plain RGB saliency images (optional);
//! 2. encoder only, detector frozen;
//! 3. both jointly.
//!
//! Per-sample gradients are computed in parallel and summed in sample order,
//! so results do not depend on the thread count.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{fit_ground_truth, synth, Sample};
use crate::detector::Profile;
use crate::error::{Error, Result};
use crate::lightfield::augment::{augment, AugmentSpec, Rotation};
use crate::metrics::{evaluate_dataset, GroundTruth, MetricsReport, SaliencyMap, ThresholdMode};
use crate::pipeline::{InputMode, Model};
use crate::tensor::loss::{weighted_bce_loss, ALPHA_S};
use crate::tensor::optim::Sgd;
use crate::tensor::{GradSet, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub stage3_epochs: usize,
    pub alpha_s: f64,
    pub seed: u64,
    pub profile: Profile,
    pub augment_rotation: bool,
    pub augment_photometric: bool,
    /// Sub-aperture side after resizing; the saliency map is half this.
    pub spatial: usize,
    pub input_mode: InputMode,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    /// Global gradient-norm ceiling per step; 0 disables clipping.
    pub clip_norm: f64,
    /// Size of the synthetic RGB set used by stage 1.
    pub stage1_images: usize,
    /// Shuffled passes over the training set per logged epoch.
    pub epoch_passes: usize,
    /// Stage-3 learning rate at the last epoch as a fraction of `lr`,
    /// reached by cosine decay; 1 keeps it constant.
    pub lr_final_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 8,
            stage1_epochs: 0,
            stage2_epochs: 10,
            stage3_epochs: 40,
            alpha_s: ALPHA_S,
            seed: 0,
            profile: Profile::TOY,
            augment_rotation: false,
            augment_photometric: false,
            spatial: 32,
            input_mode: InputMode::LightField,
            threads: 0,
            clip_norm: 0.0,
            stage1_images: 256,
            epoch_passes: 1,
            lr_final_ratio: 1.0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Format(format!("bad value `{value}` for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Format(format!("bad value `{value}` for {key}"))),
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 19] = [
        "lr",
        "momentum",
        "weight_decay",
        "batch_size",
        "stage1_epochs",
        "stage2_epochs",
        "stage3_epochs",
        "alpha_s",
        "seed",
        "profile",
        "augment_rotation",
        "augment_photometric",
        "spatial",
        "input_mode",
        "threads",
        "clip_norm",
        "stage1_images",
        "epoch_passes",
        "lr_final_ratio",
    ];

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "lr" => self.lr = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "stage1_epochs" => self.stage1_epochs = parse(key, v)?,
            "stage2_epochs" => self.stage2_epochs = parse(key, v)?,
            "stage3_epochs" => self.stage3_epochs = parse(key, v)?,
            "alpha_s" => self.alpha_s = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "profile" => self.profile = v.parse()?,
            "augment_rotation" => self.augment_rotation = parse_bool(key, v)?,
            "augment_photometric" => self.augment_photometric = parse_bool(key, v)?,
            "spatial" => self.spatial = parse(key, v)?,
            "input_mode" => self.input_mode = v.parse()?,
            "threads" => self.threads = parse(key, v)?,
            "clip_norm" => self.clip_norm = parse(key, v)?,
            "stage1_images" => self.stage1_images = parse(key, v)?,
            "epoch_passes" => self.epoch_passes = parse(key, v)?,
            "lr_final_ratio" => self.lr_final_ratio = parse(key, v)?,
            other => return Err(Error::Format(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults; `#` starts a comment.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "momentum = {}", self.momentum);
        let _ = writeln!(s, "weight_decay = {}", self.weight_decay);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "stage1_epochs = {}", self.stage1_epochs);
        let _ = writeln!(s, "stage2_epochs = {}", self.stage2_epochs);
        let _ = writeln!(s, "stage3_epochs = {}", self.stage3_epochs);
        let _ = writeln!(s, "alpha_s = {}", self.alpha_s);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "profile = {}", self.profile);
        let _ = writeln!(s, "augment_rotation = {}", self.augment_rotation);
        let _ = writeln!(s, "augment_photometric = {}", self.augment_photometric);
        let _ = writeln!(s, "spatial = {}", self.spatial);
        let _ = writeln!(s, "input_mode = {}", self.input_mode);
        let _ = writeln!(s, "threads = {}", self.threads);
        let _ = writeln!(s, "clip_norm = {}", self.clip_norm);
        let _ = writeln!(s, "stage1_images = {}", self.stage1_images);
        let _ = writeln!(s, "epoch_passes = {}", self.epoch_passes);
        let _ = writeln!(s, "lr_final_ratio = {}", self.lr_final_ratio);
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Format(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.lr_final_ratio) {
            return bad(format!("lr_final_ratio must lie in [0, 1], got {}", self.lr_final_ratio));
        }
        if self.batch_size == 0 || self.epoch_passes == 0 {
            return bad("batch_size and epoch_passes must be at least 1".into());
        }
        if self.stage1_epochs > 0 && self.stage1_images == 0 {
            return bad("stage 1 needs stage1_images >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.alpha_s) {
            return bad(format!("alpha_s {} outside [0, 1]", self.alpha_s));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return bad("momentum must lie in [0, 1) and weight_decay be non-negative".into());
        }
        if !(self.clip_norm >= 0.0 && self.clip_norm.is_finite()) {
            return bad(format!("clip_norm {} must be finite and non-negative", self.clip_norm));
        }
        if self.spatial == 0 || !self.spatial.is_multiple_of(32) {
            return bad(format!("spatial {} must be a positive multiple of 32", self.spatial));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.stage1_epochs + self.stage2_epochs + self.stage3_epochs
    }

    /// Learning rate of the `k`-th stage-3 epoch.
    pub fn stage3_lr(&self, k: usize) -> f64 {
        let r = self.lr_final_ratio;
        if self.stage3_epochs < 2 || r == 1.0 {
            return self.lr;
        }
        let t = k as f64 / (self.stage3_epochs - 1) as f64;
        self.lr * (r + (1.0 - r) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// 1-based, counted across stages.
    pub epoch: usize,
    pub stage: u8,
    /// Running mean over the epoch's steps.
    pub mean_loss: f64,
    /// Mean loss over the un-augmented training set after the epoch.
    pub train_loss: f64,
    pub lr: f64,
    /// Largest pre-clipping gradient norm seen in the epoch.
    pub max_grad_norm: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    /// `epoch,stage,mean_loss` plus the end-of-epoch loss, the constant
    /// learning rate and the largest gradient norm.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("epoch,stage,mean_loss,train_loss,lr,max_grad_norm\n");
        for e in &self.log {
            let _ = writeln!(
                s,
                "{},{},{:.10},{:.10},{},{:.6e}",
                e.epoch, e.stage, e.mean_loss, e.train_loss, e.lr, e.max_grad_norm
            );
        }
        s
    }

    pub fn write_log_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.log_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Rotates a mask the same way [`rotate_lf`](crate::lightfield::augment::rotate_lf)
/// rotates the spatial grid.
pub fn rotate_ground_truth(gt: &GroundTruth, rot: Rotation) -> Result<GroundTruth> {
    let (rows, cols) = (gt.height, gt.width);
    let (nr, nc) = rot.extent(rows, cols);
    let mut mask = vec![false; nr * nc];
    for r in 0..rows {
        for c in 0..cols {
            let (r2, c2) = rot.map(r, c, rows, cols);
            mask[r2 * nc + c2] = gt.mask[r * cols + c];
        }
    }
    GroundTruth::new(nc, nr, mask)
}

fn augment_seed(seed: u64, epoch: usize, sample: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5_5a5a);
    rng.set_stream(((epoch as u64) << 32) | sample as u64);
    rand::Rng::gen(&mut rng)
}

/// Mean loss of the current weights over fixed inputs.
fn dataset_loss(
    model: &Model,
    part: Part,
    n: usize,
    fetch: &(dyn Fn(usize, usize) -> Result<(Tensor, Tensor)> + Sync),
    alpha: f64,
) -> Result<f64> {
    let losses: Vec<Result<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (x, y) = fetch(i, 0)?;
            let (x, y) = (&x, &y);
            let p = if part == Part::DetectorOnRgb {
                model.pipeline.detector.forward(&model.params, x)?
            } else {
                model.pipeline.forward_input(&model.params, x)?
            };
            Ok(weighted_bce_loss(&p, y, alpha)?.0)
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / n.max(1) as f64)
}

fn grad_norm(g: &GradSet) -> f64 {
    g.iter()
        .flat_map(|(_, p)| p.weight.data().iter().chain(p.bias.data()))
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// What a stage updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Part {
    DetectorOnRgb,
    Encoder,
    Joint,
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    model: Model,
    sgd: Sgd,
}

impl Trainer<'_> {
    fn sample_grad(&self, part: Part, x: &Tensor, y: &Tensor) -> Result<(f64, GradSet)> {
        let pipe = &self.model.pipeline;
        let params = &self.model.params;
        let mut grads = GradSet::new();
        if part == Part::DetectorOnRgb {
            let (p, cache) = pipe.detector.forward_train(params, x)?;
            let (loss, g) = weighted_bce_loss(&p, y, self.cfg.alpha_s)?;
            pipe.detector.backward(params, &cache, g, Some(&mut grads), false)?;
            return Ok((loss, grads));
        }
        let (p, cache) = pipe.forward_train(params, x)?;
        let (loss, g) = weighted_bce_loss(&p, y, self.cfg.alpha_s)?;
        let (train_fee, train_det) = match (part, pipe.uses_fee()) {
            (Part::Encoder, true) => (true, false),
            // without an encoder the detector takes its place
            (Part::Encoder, false) => (false, true),
            _ => (true, true),
        };
        pipe.backward(params, &cache, g, &mut grads, train_fee, train_det)?;
        Ok((loss, grads))
    }

    /// `epoch_passes` shuffled passes over `n` items, returning the mean
    /// per-sample loss and the largest gradient norm. `fetch` receives
    /// `pass · n + item`.
    fn epoch(
        &mut self,
        part: Part,
        epoch: usize,
        n: usize,
        fetch: &(dyn Fn(usize, usize) -> Result<(Tensor, Tensor)> + Sync),
    ) -> Result<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch as u64);
        let mut order = Vec::with_capacity(n * self.cfg.epoch_passes);
        for pass in 0..self.cfg.epoch_passes {
            let mut block: Vec<usize> = (pass * n..(pass + 1) * n).collect();
            block.shuffle(&mut rng);
            order.extend(block);
        }

        let mut total = 0.0;
        let mut max_norm = 0.0f64;
        for (step, batch) in order.chunks(self.cfg.batch_size).enumerate() {
            let this = &*self;
            let results: Vec<Result<(f64, GradSet)>> = batch
                .par_iter()
                .map(|&i| {
                    let (x, y) = fetch(i, epoch)?;
                    this.sample_grad(part, &x, &y)
                })
                .collect();
            let mut grads = GradSet::new();
            for r in results {
                let (loss, g) = r.map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("epoch {epoch} step {step}: {m}")),
                    other => other,
                })?;
                total += loss;
                for (name, pg) in g.iter() {
                    grads.accumulate(name, pg.weight.clone(), pg.bias.clone())?;
                }
            }
            grads.scale(1.0 / batch.len() as f64);
            for (name, g) in grads.iter() {
                g.weight
                    .ensure_finite(name)
                    .and_then(|_| g.bias.ensure_finite(name))
                    .map_err(|e| Error::Numeric(format!("epoch {epoch} step {step}: {e}")))?;
            }
            let norm = grad_norm(&grads);
            max_norm = max_norm.max(norm);
            if self.cfg.clip_norm > 0.0 && norm > self.cfg.clip_norm {
                grads.scale(self.cfg.clip_norm / norm);
            }
            self.sgd.step(&mut self.model.params, &grads)?;
            for (name, p) in self.model.params.iter() {
                p.weight
                    .ensure_finite(name)
                    .and_then(|_| p.bias.ensure_finite(name))
                    .map_err(|e| Error::Numeric(format!("epoch {epoch} step {step} update: {e}")))?;
            }
        }
        Ok((total / order.len() as f64, max_norm))
    }
}

/// Trains a fresh model on `samples` (light fields with their masks).
pub fn train(cfg: &TrainConfig, samples: &[Sample]) -> Result<TrainOutcome> {
    train_with(cfg, samples, |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    cfg: &TrainConfig,
    samples: &[Sample],
    mut on_epoch: impl FnMut(&EpochLog) + Send,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Pairing("training set is empty".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Format(format!("thread pool: {e}")))?;
    pool.install(|| {
        let model = Model::new(cfg.profile, cfg.spatial, cfg.input_mode, cfg.seed)?;
        let out = model.pipeline.output_size();
        let mut trainer = Trainer {
            cfg,
            model,
            sgd: Sgd {
                lr: cfg.lr,
                momentum: cfg.momentum,
                weight_decay: cfg.weight_decay,
            },
        };

        let rgb: Vec<(Tensor, Tensor)> = if cfg.stage1_epochs > 0 {
            (0..cfg.stage1_images as u64)
                .map(|i| {
                    let (img, gt) = synth::synth_rgb(out, cfg.seed, i)?;
                    Ok((img.to_tensor(), gt.to_tensor()))
                })
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let targets: Vec<GroundTruth> = samples
            .iter()
            .map(|s| fit_ground_truth(&s.gt, out))
            .collect::<Result<_>>()?;
        let augmenting = cfg.augment_rotation || cfg.augment_photometric;
        let fixed: Vec<Tensor> = if augmenting {
            Vec::new()
        } else {
            samples
                .iter()
                .map(|s| trainer.model.pipeline.prepare(&s.lf))
                .collect::<Result<_>>()?
        };
        let pipeline = trainer.model.pipeline.clone();
        let plain = |i: usize| -> Result<(Tensor, Tensor)> {
            let x = match fixed.get(i) {
                Some(x) => x.clone(),
                None => pipeline.prepare(&samples[i].lf)?,
            };
            Ok((x, targets[i].to_tensor()))
        };
        let n = samples.len();
        let fetch_lf = |k: usize, epoch: usize| -> Result<(Tensor, Tensor)> {
            let i = k % n;
            if !augmenting {
                return plain(i);
            }
            let mut spec = AugmentSpec::sample(augment_seed(cfg.seed, epoch, k));
            if !cfg.augment_rotation {
                spec.rotation = Rotation::R0;
            }
            if !cfg.augment_photometric {
                let id = AugmentSpec::identity();
                spec = AugmentSpec { rotation: spec.rotation, ..id };
            }
            let lf = augment(&samples[i].lf, &spec)?;
            let gt = fit_ground_truth(&rotate_ground_truth(&samples[i].gt, spec.rotation)?, out)?;
            Ok((pipeline.prepare(&lf)?, gt.to_tensor()))
        };
        let fetch_rgb = |k: usize, _: usize| -> Result<(Tensor, Tensor)> { Ok(rgb[k % rgb.len()].clone()) };

        let stages = [
            (1u8, cfg.stage1_epochs, Part::DetectorOnRgb),
            (2, cfg.stage2_epochs, Part::Encoder),
            (3, cfg.stage3_epochs, Part::Joint),
        ];
        let mut log = Vec::with_capacity(cfg.total_epochs());
        let mut epoch = 0;
        for (stage, epochs, part) in stages {
            for k in 0..epochs {
                epoch += 1;
                trainer.sgd.lr = if stage == 3 { cfg.stage3_lr(k) } else { cfg.lr };
                let t0 = Instant::now();
                let items = if part == Part::DetectorOnRgb { rgb.len() } else { n };
                // weights that overflow the forward pass come from the last update
                let last_step = (items * cfg.epoch_passes).div_ceil(cfg.batch_size) - 1;
                let after_update = |e: Error| match e {
                    Error::Numeric(m) => Error::Numeric(format!("epoch {epoch} step {last_step}: {m}")),
                    other => other,
                };
                let (mean_loss, max_grad_norm, train_loss) = if part == Part::DetectorOnRgb {
                    let (m, g) = trainer.epoch(part, epoch, rgb.len(), &fetch_rgb)?;
                    let l = dataset_loss(&trainer.model, part, rgb.len(), &fetch_rgb, cfg.alpha_s);
                    (m, g, l.map_err(after_update)?)
                } else {
                    let (m, g) = trainer.epoch(part, epoch, n, &fetch_lf)?;
                    let fetch = |i: usize, _: usize| plain(i);
                    (m, g, dataset_loss(&trainer.model, part, n, &fetch, cfg.alpha_s).map_err(after_update)?)
                };
                let entry = EpochLog {
                    epoch,
                    stage,
                    mean_loss,
                    train_loss,
                    lr: trainer.sgd.lr,
                    max_grad_norm,
                    seconds: t0.elapsed().as_secs_f64(),
                };
                on_epoch(&entry);
                log.push(entry);
            }
        }
        Ok(TrainOutcome { model: trainer.model, log })
    })
}

/// Predictions for every sample, keyed by id.
pub fn predict_samples(model: &Model, samples: &[Sample]) -> Result<Vec<(String, SaliencyMap)>> {
    samples
        .par_iter()
        .map(|s| Ok((s.id.clone(), model.predict(&s.lf)?)))
        .collect()
}

/// Scores `model` on `samples`, with masks resized to the output size.
pub fn evaluate_model(model: &Model, samples: &[Sample], mode: ThresholdMode) -> Result<MetricsReport> {
    let preds = predict_samples(model, samples)?;
    let out = model.pipeline.output_size();
    let gts = samples
        .iter()
        .map(|s| Ok((s.id.clone(), fit_ground_truth(&s.gt, out)?)))
        .collect::<Result<Vec<_>>>()?;
    evaluate_dataset(&preds, &gts, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::synth_scenes;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            stage1_epochs: 0,
            stage2_epochs: 2,
            stage3_epochs: 3,
            batch_size: 4,
            seed: 3,
            threads: 1,
            ..TrainConfig::default()
        }
    }

    fn samples(n: usize) -> Vec<Sample> {
        synth_scenes(n, 32, 11).unwrap().into_iter().map(Sample::from).collect()
    }

    #[test]
    fn config_roundtrip_and_validation() {
        let cfg = TrainConfig { seed: 9, input_mode: InputMode::CenterView, augment_rotation: true, ..TrainConfig::default() };
        assert_eq!(TrainConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        let d = TrainConfig::default();
        assert_eq!((d.lr, d.momentum, d.weight_decay, d.batch_size), (1e-2, 0.9, 0.0, 8));
        assert_eq!((d.stage2_epochs, d.stage3_epochs, d.alpha_s), (10, 40, 0.528));
        assert!(TrainConfig::from_kv("lr = 0").is_err());
        assert!(TrainConfig::from_kv("batch_size = 0").is_err());
        assert!(TrainConfig::from_kv("stage2_epochs = -1").is_err());
        assert!(TrainConfig::from_kv("bogus = 1").is_err());
        let c = TrainConfig::from_kv("# comment\nlr = 0.5 # trailing\nprofile = full\n").unwrap();
        assert_eq!((c.lr, c.profile), (0.5, Profile::FULL));
        for k in TrainConfig::KEYS {
            assert!(cfg.to_kv().contains(&format!("{k} = ")), "{k}");
        }
    }

    #[test]
    fn mask_rotation_follows_light_field_rotation() {
        let s = synth::synth_scene(16, 4, 0).unwrap();
        for rot in Rotation::ALL {
            let lf = crate::lightfield::augment::rotate_lf(&s.lf, rot).unwrap();
            let gt = rotate_ground_truth(&s.gt, rot).unwrap();
            // the rotated mask still covers the salient texture in the center view
            let cv = crate::lightfield::center_view(&lf);
            let orig = crate::lightfield::center_view(&s.lf);
            let sum = |img: &crate::lightfield::RgbImage, m: &GroundTruth| -> f64 {
                (0..16 * 16).filter(|&k| m.mask[k]).map(|k| img.get(0, k / 16, k % 16)).sum()
            };
            assert!((sum(&cv, &gt) - sum(&orig, &s.gt)).abs() < 1e-9);
            assert_eq!(gt.foreground(), s.gt.foreground());
        }
    }

    #[test]
    fn stage_two_freezes_the_detector() {
        let data = samples(4);
        let cfg = TrainConfig { stage2_epochs: 2, stage3_epochs: 0, ..tiny_cfg() };
        let init = Model::new(cfg.profile, cfg.spatial, cfg.input_mode, cfg.seed).unwrap();
        let out = train(&cfg, &data).unwrap();
        let mut fee_moved = false;
        for (name, p) in init.params.iter() {
            let q = out.model.params.get(name).unwrap();
            if name.starts_with("det.") {
                assert_eq!(p.weight, q.weight, "{name}");
                assert_eq!(p.bias, q.bias, "{name}");
            } else {
                fee_moved |= p.weight != q.weight;
            }
        }
        assert!(fee_moved);
        assert_eq!(out.log.len(), 2);
        assert!(out.log.iter().all(|e| e.stage == 2));
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let data = samples(3);
        let cfg = TrainConfig { stage2_epochs: 1, stage3_epochs: 1, augment_rotation: true, augment_photometric: true, ..tiny_cfg() };
        let a = train(&cfg, &data).unwrap();
        let b = train(&TrainConfig { threads: 2, ..cfg.clone() }, &data).unwrap();
        assert_eq!(a.model.to_checkpoint().to_bytes(), b.model.to_checkpoint().to_bytes());
        assert_eq!(a.log_csv(), b.log_csv());
    }

    #[test]
    fn loss_decreases_on_a_small_set() {
        let data = samples(8);
        let cfg = TrainConfig { stage2_epochs: 2, stage3_epochs: 3, batch_size: 8, ..tiny_cfg() };
        let out = train(&cfg, &data).unwrap();
        let first = out.log.first().unwrap().mean_loss;
        let last = out.log.last().unwrap().mean_loss;
        assert!(last < first, "{first} -> {last}");
        assert!(out.log_csv().starts_with("epoch,stage,mean_loss"));
    }

    #[test]
    fn stage_one_and_center_view_run() {
        let data = samples(2);
        let cfg = TrainConfig {
            stage1_epochs: 1,
            stage1_images: 4,
            stage2_epochs: 1,
            stage3_epochs: 1,
            input_mode: InputMode::CenterView,
            ..tiny_cfg()
        };
        let out = train(&cfg, &data).unwrap();
        assert_eq!(out.log.iter().map(|e| e.stage).collect::<Vec<_>>(), [1, 2, 3]);
        let rep = evaluate_model(&out.model, &data, ThresholdMode::Adaptive).unwrap();
        assert_eq!(rep.per_image.len(), 2);
    }

    #[test]
    fn numeric_failure_names_the_step() {
        let data = samples(2);
        let cfg = TrainConfig { lr: 1e300, stage2_epochs: 0, stage3_epochs: 3, ..tiny_cfg() };
        match train(&cfg, &data) {
            Err(Error::Numeric(m)) => assert!(m.contains("epoch") && m.contains("step"), "{m}"),
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("training with lr 1e300 should blow up"),
        }
    }
}
