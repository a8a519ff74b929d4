//! Light fields in sub-aperture and micro-lens layouts.
//!
//! Index convention used throughout: a light field sample `(u, v, s, t)`
//! lives in the micro-lens image at column `x = s·U + u` and row
//! `y = t·V + v`. Each `U×V` block of the micro-lens image therefore holds
//! one spatial position seen from every view. The spatial axis `s` runs
//! along image width and `t` along image height.

pub mod augment;
pub mod io;

use crate::error::{Error, Result};
use crate::tensor::{ops, Tensor};

pub use augment::{photometric_augment, rotate_lf, AugmentSpec, PhotometricTransform, Rotation};

/// Micro-lens image width used by the encoder at full resolution.
pub const MLA_CROP_WIDTH: usize = 4608;

/// Planar RGB image, values in `[0, 1]`, stored `[channel][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != 3 * width * height {
            return Err(Error::dim(format!(
                "RGB image {width}x{height} cannot hold {} samples",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// `[3, height, width]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![3, self.height, self.width], self.data.clone()).expect("valid image")
    }
}

/// A 4-D light field with RGB samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LightField {
    angular: (usize, usize),
    spatial: (usize, usize),
    // [u][v][c][t][s]
    data: Vec<f64>,
}

fn check_unit(data: &[f64]) -> Result<()> {
    if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Numeric(format!(
            "light field sample {v} is outside [0, 1]"
        )));
    }
    Ok(())
}

impl LightField {
    /// `angular = (U, V)`, `spatial = (S, T)`; `data` laid out `[u][v][c][t][s]`.
    pub fn new(angular: (usize, usize), spatial: (usize, usize), data: Vec<f64>) -> Result<Self> {
        let (u, v) = angular;
        let (s, t) = spatial;
        if u == 0 || v == 0 || s == 0 || t == 0 {
            return Err(Error::dim(format!(
                "light field resolution must be positive, got angular {angular:?} spatial {spatial:?}"
            )));
        }
        if data.len() != u * v * s * t * 3 {
            return Err(Error::dim(format!(
                "light field {u}x{v}x{s}x{t}x3 cannot hold {} samples",
                data.len()
            )));
        }
        check_unit(&data)?;
        Ok(Self {
            angular,
            spatial,
            data,
        })
    }

    /// Builds a light field from `f(u, v, s, t, c)`.
    pub fn from_fn(
        angular: (usize, usize),
        spatial: (usize, usize),
        f: impl Fn(usize, usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let (nu, nv) = angular;
        let (ns, nt) = spatial;
        let mut data = Vec::with_capacity(nu * nv * ns * nt * 3);
        for u in 0..nu {
            for v in 0..nv {
                for c in 0..3 {
                    for t in 0..nt {
                        for s in 0..ns {
                            data.push(f(u, v, s, t, c));
                        }
                    }
                }
            }
        }
        Self::new(angular, spatial, data)
    }

    /// Assembles a light field from its views, indexed `views[u * V + v]`.
    pub fn from_views(angular: (usize, usize), views: &[RgbImage]) -> Result<Self> {
        let (nu, nv) = angular;
        if views.len() != nu * nv || views.is_empty() {
            return Err(Error::dim(format!(
                "expected {} views, got {}",
                nu * nv,
                views.len()
            )));
        }
        let (w, h) = (views[0].width, views[0].height);
        if views.iter().any(|im| im.width != w || im.height != h) {
            return Err(Error::dim("sub-aperture images differ in size"));
        }
        let data = views.iter().flat_map(|im| im.data.iter().copied()).collect();
        Self::new(angular, (w, h), data)
    }

    pub fn angular(&self) -> (usize, usize) {
        self.angular
    }

    pub fn spatial(&self) -> (usize, usize) {
        self.spatial
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    fn index(&self, u: usize, v: usize, s: usize, t: usize, c: usize) -> usize {
        let (_, nv) = self.angular;
        let (ns, nt) = self.spatial;
        ((((u * nv + v) * 3 + c) * nt + t) * ns) + s
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize, s: usize, t: usize, c: usize) -> f64 {
        self.data[self.index(u, v, s, t, c)]
    }

    fn view_slice(&self, u: usize, v: usize) -> &[f64] {
        let n = 3 * self.spatial.0 * self.spatial.1;
        let start = (u * self.angular.1 + v) * n;
        &self.data[start..start + n]
    }

    /// Sub-aperture image `(u, v)`.
    pub fn view(&self, u: usize, v: usize) -> RgbImage {
        RgbImage {
            width: self.spatial.0,
            height: self.spatial.1,
            data: self.view_slice(u, v).to_vec(),
        }
    }
}

/// A light field interleaved into one image of `U×V` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroLensImage {
    block: (usize, usize),
    image: RgbImage,
}

impl MicroLensImage {
    pub fn new(image: RgbImage, block: (usize, usize)) -> Result<Self> {
        let (u, v) = block;
        if u == 0 || v == 0 || !image.width.is_multiple_of(u) || !image.height.is_multiple_of(v) {
            return Err(Error::dim(format!(
                "{}x{} image does not tile into {u}x{v} blocks",
                image.width, image.height
            )));
        }
        check_unit(&image.data)?;
        Ok(Self { block, image })
    }

    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn height(&self) -> usize {
        self.image.height
    }

    /// Angular block size `(U, V)`.
    pub fn block(&self) -> (usize, usize) {
        self.block
    }

    pub fn image(&self) -> &RgbImage {
        &self.image
    }

    pub fn into_image(self) -> RgbImage {
        self.image
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.image.get(c, y, x)
    }

    /// `[3, H, W]` tensor for the encoder.
    pub fn to_tensor(&self) -> Tensor {
        self.image.to_tensor()
    }

    pub fn into_tensor(self) -> Tensor {
        Tensor::new(vec![3, self.image.height, self.image.width], self.image.data)
            .expect("valid image")
    }
}

/// Packs a light field into its micro-lens image.
pub fn mla_from_sai(lf: &LightField) -> MicroLensImage {
    let (nu, nv) = lf.angular;
    let (ns, nt) = lf.spatial;
    let (w, h) = (ns * nu, nt * nv);
    let mut data = vec![0.0; 3 * w * h];
    for c in 0..3 {
        for t in 0..nt {
            for v in 0..nv {
                let row = &mut data[(c * h + t * nv + v) * w..(c * h + t * nv + v + 1) * w];
                for u in 0..nu {
                    let src = &lf.view_slice(u, v)[(c * nt + t) * ns..(c * nt + t + 1) * ns];
                    for (s, &val) in src.iter().enumerate() {
                        row[s * nu + u] = val;
                    }
                }
            }
        }
    }
    MicroLensImage {
        block: (nu, nv),
        image: RgbImage {
            width: w,
            height: h,
            data,
        },
    }
}

/// Unpacks a micro-lens image with `u × v` blocks into a light field.
pub fn sai_from_mla(mla: &MicroLensImage, u: usize, v: usize) -> Result<LightField> {
    let (w, h) = (mla.width(), mla.height());
    if u == 0 || v == 0 || w % u != 0 || h % v != 0 {
        return Err(Error::dim(format!(
            "{w}x{h} micro-lens image is not divisible into {u}x{v} blocks"
        )));
    }
    let (ns, nt) = (w / u, h / v);
    let img = &mla.image;
    LightField::from_fn((u, v), (ns, nt), |uu, vv, s, t, c| {
        img.get(c, t * v + vv, s * u + uu)
    })
}

/// Evenly spaced horizontal crop offsets, rounded down to multiples of `block_u`.
pub fn crop_offsets(input_width: usize, crop_width: usize, block_u: usize) -> Result<[usize; 4]> {
    if input_width < crop_width {
        return Err(Error::dim(format!(
            "micro-lens image width {input_width} is below the crop width {crop_width}"
        )));
    }
    let k = (input_width - crop_width) / 3 / block_u * block_u;
    Ok([0, k, 2 * k, 3 * k])
}

/// Four crops of width `crop_width`, aligned to the angular blocks.
pub fn crop_mla_four_to(mla: &MicroLensImage, crop_width: usize) -> Result<[MicroLensImage; 4]> {
    let (bu, _) = mla.block;
    if crop_width == 0 || !crop_width.is_multiple_of(bu) {
        return Err(Error::dim(format!(
            "crop width {crop_width} is not a multiple of the block width {bu}"
        )));
    }
    let offsets = crop_offsets(mla.width(), crop_width, bu)?;
    let (w, h) = (mla.width(), mla.height());
    Ok(offsets.map(|x0| {
        let mut data = Vec::with_capacity(3 * crop_width * h);
        for c in 0..3 {
            for y in 0..h {
                let row = (c * h + y) * w;
                data.extend_from_slice(&mla.image.data[row + x0..row + x0 + crop_width]);
            }
        }
        MicroLensImage {
            block: mla.block,
            image: RgbImage {
                width: crop_width,
                height: h,
                data,
            },
        }
    }))
}

/// Four 4608-wide crops of a wider micro-lens image.
pub fn crop_mla_four(mla: &MicroLensImage) -> Result<[MicroLensImage; 4]> {
    crop_mla_four_to(mla, MLA_CROP_WIDTH)
}

/// Bilinearly resamples every sub-aperture image to `s2 × t2`.
pub fn resize_spatial(lf: &LightField, s2: usize, t2: usize) -> Result<LightField> {
    if s2 < 2 || t2 < 2 {
        return Err(Error::dim(format!(
            "resize target {s2}x{t2} must be at least 2x2"
        )));
    }
    if lf.spatial == (s2, t2) {
        return Ok(lf.clone());
    }
    let (nu, nv) = lf.angular;
    let (ns, nt) = lf.spatial;
    let mut data = Vec::with_capacity(nu * nv * 3 * s2 * t2);
    for u in 0..nu {
        for v in 0..nv {
            let view = Tensor::new(vec![3, nt, ns], lf.view_slice(u, v).to_vec())?;
            let r = ops::resize_bilinear(&view, t2, s2)?;
            data.extend(r.data().iter().map(|x| x.clamp(0.0, 1.0)));
        }
    }
    LightField::new(lf.angular, (s2, t2), data)
}

/// The central sub-aperture image `(⌊U/2⌋, ⌊V/2⌋)`.
pub fn center_view(lf: &LightField) -> RgbImage {
    let (nu, nv) = lf.angular;
    lf.view(nu / 2, nv / 2)
}
