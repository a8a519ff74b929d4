//! Angular-consistent augmentation.
//!
//! Rotations turn every view and the grid of views together, and
//! photometric changes apply one transform to all views, so disparity
//! between views is preserved.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LightField, MicroLensImage};
use crate::error::{Error, Result};

/// Counter-clockwise quarter turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];

    pub fn degrees(self) -> u32 {
        match self {
            Rotation::R0 => 0,
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }

    pub fn from_degrees(deg: u32) -> Result<Self> {
        match deg % 360 {
            0 => Ok(Rotation::R0),
            90 => Ok(Rotation::R90),
            180 => Ok(Rotation::R180),
            270 => Ok(Rotation::R270),
            d => Err(Error::dim(format!("rotation {d}° is not a quarter turn"))),
        }
    }

    /// Extent of a `rows × cols` grid after the turn.
    pub fn extent(self, rows: usize, cols: usize) -> (usize, usize) {
        match self {
            Rotation::R0 | Rotation::R180 => (rows, cols),
            Rotation::R90 | Rotation::R270 => (cols, rows),
        }
    }

    /// Where `(row, col)` of a `rows × cols` grid lands. A quarter turn maps
    /// `(row, col) → (cols − 1 − col, row)`.
    #[inline]
    pub fn map(self, row: usize, col: usize, rows: usize, cols: usize) -> (usize, usize) {
        match self {
            Rotation::R0 => (row, col),
            Rotation::R90 => (cols - 1 - col, row),
            Rotation::R180 => (rows - 1 - row, cols - 1 - col),
            Rotation::R270 => (col, rows - 1 - row),
        }
    }
}

/// Rotates every view and the angular grid by the same quarter turn.
///
/// Grids are indexed `(row, col)`: spatially `(t, s)` and angularly `(v, u)`,
/// matching the micro-lens layout, so the result equals rotating the packed
/// micro-lens image as a whole.
pub fn rotate_lf(lf: &LightField, rot: Rotation) -> Result<LightField> {
    let (nu, nv) = lf.angular();
    let (ns, nt) = lf.spatial();
    if matches!(rot, Rotation::R90 | Rotation::R270) && nu != nv {
        return Err(Error::dim(format!(
            "quarter-turn rotation needs a square angular grid, got {nu}x{nv}"
        )));
    }
    if rot == Rotation::R0 {
        return Ok(lf.clone());
    }
    let (nt2, ns2) = rot.extent(nt, ns);
    let (nv2, nu2) = rot.extent(nv, nu);
    let mut out = LightField::new((nu2, nv2), (ns2, nt2), vec![0.0; lf.data().len()])?;
    for u in 0..nu {
        for v in 0..nv {
            let (v2, u2) = rot.map(v, u, nv, nu);
            for c in 0..3 {
                for t in 0..nt {
                    for s in 0..ns {
                        let (t2, s2) = rot.map(t, s, nt, ns);
                        let i = out.index(u2, v2, s2, t2, c);
                        out.data_mut()[i] = lf.get(u, v, s, t, c);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Random augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentSpec {
    pub rotation: Rotation,
    pub brightness_delta: f64,
    pub contrast_scale: f64,
    pub saturation_scale: f64,
    /// Output channel `i` takes input channel `channel_perm[i]`.
    pub channel_perm: [usize; 3],
    pub seed: u64,
}

impl AugmentSpec {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation::R0,
            brightness_delta: 0.0,
            contrast_scale: 1.0,
            saturation_scale: 1.0,
            channel_perm: [0, 1, 2],
            seed: 0,
        }
    }

    /// Draws every field uniformly from its allowed range.
    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rotation = Rotation::ALL[rng.gen_range(0..4)];
        let brightness_delta = rng.gen_range(-0.2..=0.2);
        let contrast_scale = rng.gen_range(0.8..=1.2);
        let saturation_scale = rng.gen_range(0.8..=1.2);
        let mut channel_perm = [0, 1, 2];
        channel_perm.shuffle(&mut rng);
        Self {
            rotation,
            brightness_delta,
            contrast_scale,
            saturation_scale,
            channel_perm,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = [false; 3];
        for &c in &self.channel_perm {
            if c > 2 || seen[c] {
                return Err(Error::dim(format!(
                    "channel permutation {:?} is not a bijection",
                    self.channel_perm
                )));
            }
            seen[c] = true;
        }
        let in_range = (-0.2..=0.2).contains(&self.brightness_delta)
            && (0.8..=1.2).contains(&self.contrast_scale)
            && (0.8..=1.2).contains(&self.saturation_scale);
        if !in_range {
            return Err(Error::dim(format!("augmentation out of range: {self:?}")));
        }
        Ok(())
    }
}

/// Rec. 601 luma.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// A photometric augmentation with its data-dependent mean resolved, so it
/// can be applied pixel by pixel to any layout of the same light field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotometricTransform {
    perm: [usize; 3],
    delta: f64,
    contrast: f64,
    saturation: f64,
    /// Mean intensity after the brightness shift; contrast pivots here.
    pivot: f64,
}

impl PhotometricTransform {
    /// `mean` is the mean over every sample of the light field.
    pub fn new(spec: &AugmentSpec, mean: f64) -> Self {
        Self {
            perm: spec.channel_perm,
            delta: spec.brightness_delta,
            contrast: spec.contrast_scale,
            saturation: spec.saturation_scale,
            pivot: mean + spec.brightness_delta,
        }
    }

    /// Channel shuffle, brightness shift, contrast about the global mean,
    /// saturation about the pixel's luma, then clamp to `[0, 1]`.
    #[inline]
    pub fn apply(&self, rgb: [f64; 3]) -> [f64; 3] {
        let mut p = self.perm.map(|c| rgb[c] + self.delta);
        if self.contrast != 1.0 {
            for x in &mut p {
                *x = self.pivot + (*x - self.pivot) * self.contrast;
            }
        }
        if self.saturation != 1.0 {
            let gray: f64 = p.iter().zip(LUMA).map(|(a, b)| a * b).sum();
            for x in &mut p {
                *x = gray + (*x - gray) * self.saturation;
            }
        }
        p.map(|x| x.clamp(0.0, 1.0))
    }
}

fn mean(data: &[f64]) -> f64 {
    data.iter().sum::<f64>() / data.len() as f64
}

/// Applies the photometric part of `spec` identically to every view.
pub fn photometric_augment(lf: &LightField, spec: &AugmentSpec) -> Result<LightField> {
    spec.validate()?;
    let tf = PhotometricTransform::new(spec, mean(lf.data()));
    let mut out = lf.clone();
    let plane = lf.spatial().0 * lf.spatial().1;
    for view in out.data_mut().chunks_mut(3 * plane) {
        let (r, rest) = view.split_at_mut(plane);
        let (g, b) = rest.split_at_mut(plane);
        for i in 0..plane {
            [r[i], g[i], b[i]] = tf.apply([r[i], g[i], b[i]]);
        }
    }
    Ok(out)
}

/// Same transform on a packed micro-lens image.
pub fn photometric_augment_mla(mla: &MicroLensImage, spec: &AugmentSpec) -> Result<MicroLensImage> {
    spec.validate()?;
    let tf = PhotometricTransform::new(spec, mean(&mla.image.data));
    let mut out = mla.clone();
    let plane = mla.width() * mla.height();
    let (r, rest) = out.image.data.split_at_mut(plane);
    let (g, b) = rest.split_at_mut(plane);
    for i in 0..plane {
        [r[i], g[i], b[i]] = tf.apply([r[i], g[i], b[i]]);
    }
    Ok(out)
}

/// Rotation followed by the photometric transform.
pub fn augment(lf: &LightField, spec: &AugmentSpec) -> Result<LightField> {
    photometric_augment(&rotate_lf(lf, spec.rotation)?, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lightfield::{mla_from_sai, RgbImage};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_lf(u: usize, v: usize, s: usize, t: usize, seed: u64) -> LightField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = u * v * s * t * 3;
        LightField::new((u, v), (s, t), (0..n).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    /// Turns a micro-lens image with plain 2-D image rotation.
    fn rotate_image(img: &RgbImage, rot: Rotation) -> RgbImage {
        let (h2, w2) = rot.extent(img.height, img.width);
        let mut data = vec![0.0; img.data.len()];
        for c in 0..3 {
            for y in 0..img.height {
                for x in 0..img.width {
                    let (y2, x2) = rot.map(y, x, img.height, img.width);
                    data[(c * h2 + y2) * w2 + x2] = img.get(c, y, x);
                }
            }
        }
        RgbImage::new(w2, h2, data).unwrap()
    }

    #[test]
    fn rotation_matches_image_rotation_of_the_packed_field() {
        let lf = random_lf(2, 2, 2, 2, 1);
        for rot in Rotation::ALL {
            let a = mla_from_sai(&rotate_lf(&lf, rot).unwrap());
            let b = rotate_image(mla_from_sai(&lf).image(), rot);
            assert_eq!(a.image(), &b, "{rot:?}");
        }
    }

    #[test]
    fn quarter_turn_moves_the_origin_sample() {
        let lf = LightField::from_fn((9, 9), (3, 3), |u, v, s, t, _| {
            if (u, v, s, t) == (0, 0, 0, 0) { 1.0 } else { 0.0 }
        })
        .unwrap();
        let r = rotate_lf(&lf, Rotation::R90).unwrap();
        // (row, col) = (0, 0) → (cols − 1, 0) on both grids: v = 8, t = 2.
        assert_eq!(r.get(0, 8, 0, 2, 0), 1.0);
        assert_eq!(r.data().iter().sum::<f64>(), 3.0);
    }

    #[test]
    fn rotation_group_laws() {
        let lf = random_lf(3, 3, 4, 5, 2);
        let twice = rotate_lf(&rotate_lf(&lf, Rotation::R180).unwrap(), Rotation::R180).unwrap();
        assert_eq!(twice, lf);
        let mut r = lf.clone();
        for _ in 0..4 {
            r = rotate_lf(&r, Rotation::R90).unwrap();
        }
        assert_eq!(r, lf);
        let r270 = rotate_lf(&lf, Rotation::R270).unwrap();
        let r90x3 = (0..3).fold(lf.clone(), |a, _| rotate_lf(&a, Rotation::R90).unwrap());
        assert_eq!(r270, r90x3);
    }

    #[test]
    fn quarter_turn_needs_square_angular_grid() {
        let lf = random_lf(2, 3, 2, 2, 3);
        assert!(matches!(rotate_lf(&lf, Rotation::R90), Err(Error::Dimension(_))));
        let r = rotate_lf(&lf, Rotation::R180).unwrap();
        assert_eq!(rotate_lf(&r, Rotation::R180).unwrap(), lf);
    }

    #[test]
    fn identity_spec_leaves_field_unchanged() {
        let lf = random_lf(2, 2, 3, 3, 4);
        assert_eq!(photometric_augment(&lf, &AugmentSpec::identity()).unwrap(), lf);
    }

    #[test]
    fn brightness_shifts_a_constant_field() {
        let lf = LightField::new((2, 2), (2, 2), vec![0.5; 48]).unwrap();
        let spec = AugmentSpec {
            brightness_delta: 0.1,
            ..AugmentSpec::identity()
        };
        let out = photometric_augment(&lf, &spec).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.6).abs() < 1e-15));
    }

    #[test]
    fn channel_swap_keeps_view_difference_magnitudes() {
        let lf = random_lf(3, 3, 4, 4, 5);
        let spec = AugmentSpec {
            channel_perm: [2, 1, 0],
            ..AugmentSpec::identity()
        };
        let out = photometric_augment(&lf, &spec).unwrap();
        let diff_norm = |f: &LightField, a: (usize, usize), b: (usize, usize), s, t| {
            (0..3)
                .map(|c| (f.get(a.0, a.1, s, t, c) - f.get(b.0, b.1, s, t, c)).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        for (a, b) in [((0, 0), (2, 2)), ((1, 0), (0, 1)), ((2, 1), (1, 1))] {
            for s in 0..4 {
                for t in 0..4 {
                    let before = diff_norm(&lf, a, b, s, t);
                    let after = diff_norm(&out, a, b, s, t);
                    assert!((before - after).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad = AugmentSpec {
            channel_perm: [0, 0, 1],
            ..AugmentSpec::identity()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentSpec {
            contrast_scale: 1.5,
            ..AugmentSpec::identity()
        };
        assert!(bad.validate().is_err());
        for seed in 0..50 {
            AugmentSpec::sample(seed).validate().unwrap();
        }
    }

    proptest! {
        #[test]
        fn photometric_commutes_with_packing(seed in any::<u64>(), aug in any::<u64>()) {
            let lf = random_lf(3, 2, 4, 3, seed);
            let spec = AugmentSpec::sample(aug);
            let a = mla_from_sai(&photometric_augment(&lf, &spec).unwrap());
            let b = photometric_augment_mla(&mla_from_sai(&lf), &spec).unwrap();
            for (x, y) in a.image().data.iter().zip(&b.image().data) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn augmented_values_stay_in_unit_range(seed in any::<u64>(), aug in any::<u64>()) {
            let lf = random_lf(2, 2, 3, 3, seed);
            let out = augment(&lf, &AugmentSpec::sample(aug)).unwrap();
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
