//! Seeded synthetic scenes with genuine angular structure.
//!
//! A scene is three fronto-parallel layers seen through a 9×9 camera grid:
//! a textured background at disparity 0, a distractor square at disparity
//! 0.2 and the salient square at disparity 1.0. The two squares draw their
//! size, color and texture from the same distribution, so a single view does
//! not say which one is salient; only the parallax does. View `(u, v)`
//! samples layer point `(s + d·(u − 4), t + d·(v − 4))`, front layer first.
//!
//! Square corners sit on even pixel coordinates so the mask halves exactly.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lightfield::io::{write_gray_png, write_light_field, write_rgb_png, LayoutKind};
use crate::lightfield::{LightField, RgbImage};
use crate::metrics::GroundTruth;

pub const ANGULAR: usize = 9;
pub const DISPARITY_BACKGROUND: f64 = 0.0;
pub const DISPARITY_DISTRACTOR: f64 = 0.2;
pub const DISPARITY_SALIENT: f64 = 1.0;

/// Smooth two-wave color texture.
#[derive(Debug, Clone, Copy)]
struct Texture {
    base: [f64; 3],
    tint: [f64; 3],
    amp: f64,
    k1: (f64, f64, f64),
    k2: (f64, f64, f64),
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, amp: f64) -> Self {
        let wave = |rng: &mut ChaCha8Rng| {
            let period = rng.gen_range(5.0..9.0);
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let k = std::f64::consts::TAU / period;
            (k * angle.cos(), k * angle.sin(), rng.gen_range(0.0..std::f64::consts::TAU))
        };
        let k1 = wave(rng);
        let k2 = wave(rng);
        Self {
            base: [0; 3].map(|_| rng.gen_range(0.25..0.75)),
            tint: [0; 3].map(|_| rng.gen_range(0.5..1.0)),
            amp,
            k1,
            k2,
        }
    }

    fn at(&self, x: f64, y: f64, c: usize) -> f64 {
        let w = 0.5 * (self.k1.0 * x + self.k1.1 * y + self.k1.2).sin()
            + 0.5 * (self.k2.0 * x + self.k2.1 * y + self.k2.2).sin();
        (self.base[c] + self.amp * self.tint[c] * w).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy)]
struct Square {
    x0: f64,
    y0: f64,
    side: f64,
    disparity: f64,
    texture: Texture,
}

impl Square {
    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x0 + self.side && y >= self.y0 && y < self.y0 + self.side
    }
}

/// One generated light field with its center-view mask.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub id: String,
    pub lf: LightField,
    pub gt: GroundTruth,
}

fn even_in(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    let v = rng.gen_range(lo..=hi.max(lo));
    v - v % 2
}

/// Places two equal-distribution squares in opposite halves of the frame.
fn place_squares(rng: &mut ChaCha8Rng, size: usize) -> (Square, Square) {
    let half = size / 2;
    let mut side = || even_in(rng, (size * 3) / 10, (size * 9) / 20).clamp(2, half.saturating_sub(2).max(2));
    let (a, b) = (side(), side());
    let horizontal = rng.gen_bool(0.5);
    let swap = rng.gen_bool(0.5);
    let mut spot = |side: usize, slot: usize| -> (f64, f64) {
        let along = slot * half + even_in(rng, 0, half.saturating_sub(side));
        let across = even_in(rng, 1, size.saturating_sub(side + 1));
        if horizontal {
            (along as f64, across as f64)
        } else {
            (across as f64, along as f64)
        }
    };
    let (sa, sb) = if swap { (1, 0) } else { (0, 1) };
    let (ax, ay) = spot(a, sa);
    let (bx, by) = spot(b, sb);
    let salient = Square {
        x0: ax,
        y0: ay,
        side: a as f64,
        disparity: DISPARITY_SALIENT,
        texture: Texture::random(rng, 0.5),
    };
    let distractor = Square {
        x0: bx,
        y0: by,
        side: b as f64,
        disparity: DISPARITY_DISTRACTOR,
        texture: Texture::random(rng, 0.5),
    };
    (salient, distractor)
}

/// Generates scene `index` of the stream identified by `seed`.
pub fn synth_scene(size: usize, seed: u64, index: u64) -> Result<SynthScene> {
    if size < 8 || !size.is_multiple_of(2) {
        return Err(Error::dim(format!("synthetic size {size} must be even and at least 8")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let background = Texture::random(&mut rng, 0.5);
    let (salient, distractor) = place_squares(&mut rng, size);
    let c = (ANGULAR / 2) as f64;
    let lf = LightField::from_fn((ANGULAR, ANGULAR), (size, size), |u, v, s, t, ch| {
        let (du, dv) = (u as f64 - c, v as f64 - c);
        let (px, py) = (s as f64 + 0.5, t as f64 + 0.5);
        for sq in [&salient, &distractor] {
            let (x, y) = (px + sq.disparity * du, py + sq.disparity * dv);
            if sq.contains(x, y) {
                return sq.texture.at(x, y, ch);
            }
        }
        let d = DISPARITY_BACKGROUND;
        background.at(px + d * du, py + d * dv, ch)
    })?;
    let mask = (0..size * size)
        .map(|i| salient.contains((i % size) as f64 + 0.5, (i / size) as f64 + 0.5))
        .collect();
    Ok(SynthScene {
        id: format!("scene{index:04}"),
        lf,
        gt: GroundTruth::new(size, size, mask)?,
    })
}

/// Scenes `0..count` of one seeded stream.
pub fn synth_scenes(count: usize, size: usize, seed: u64) -> Result<Vec<SynthScene>> {
    (0..count as u64).map(|i| synth_scene(size, seed, i)).collect()
}

/// A plain RGB saliency sample: a vivid square and a muted one on a dim
/// texture, placed like the light-field squares; the vivid one is salient.
pub fn synth_rgb(size: usize, seed: u64, index: u64) -> Result<(RgbImage, GroundTruth)> {
    if size < 8 || !size.is_multiple_of(2) {
        return Err(Error::dim(format!("synthetic size {size} must be even and at least 8")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f2d);
    rng.set_stream(index);
    let mut bg = Texture::random(&mut rng, 0.3);
    bg.base = bg.base.map(|b| 0.2 + 0.3 * b);
    let (mut salient, mut muted) = place_squares(&mut rng, size);
    let hot = rng.gen_range(0..3);
    salient.texture.base = [0.15; 3];
    salient.texture.base[hot] = 0.95;
    salient.texture.amp = 0.15;
    let grey = rng.gen_range(0.3..0.5);
    muted.texture.base = [grey; 3];
    muted.texture.amp = 0.25;
    let mut data = Vec::with_capacity(3 * size * size);
    for c in 0..3 {
        for y in 0..size {
            for x in 0..size {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let tex = if salient.contains(px, py) {
                    &salient.texture
                } else if muted.contains(px, py) {
                    &muted.texture
                } else {
                    &bg
                };
                data.push(tex.at(px, py, c));
            }
        }
    }
    let mask = (0..size * size)
        .map(|i| salient.contains((i % size) as f64 + 0.5, (i / size) as f64 + 0.5))
        .collect();
    Ok((RgbImage::new(size, size, data)?, GroundTruth::new(size, size, mask)?))
}

/// Writes `count` scenes as `lf/<id>` and `gt/<id>.png` under `root`.
pub fn write_synth_dataset(
    root: &Path,
    count: usize,
    size: usize,
    seed: u64,
    layout: LayoutKind,
) -> Result<Vec<String>> {
    let lf_dir = root.join("lf");
    let gt_dir = root.join("gt");
    for d in [&lf_dir, &gt_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut ids = Vec::with_capacity(count);
    for i in 0..count as u64 {
        let scene = synth_scene(size, seed, i)?;
        let target = match layout {
            LayoutKind::Mla => lf_dir.join(format!("{}.png", scene.id)),
            LayoutKind::SaiDir => lf_dir.join(&scene.id),
        };
        write_light_field(&target, &scene.lf, layout)?;
        write_gray_png(&gt_dir.join(format!("{}.png", scene.id)), &scene.gt.to_tensor())?;
        ids.push(scene.id);
    }
    Ok(ids)
}

/// Writes `count` plain RGB samples as `img/<id>.png` and `gt/<id>.png`.
pub fn write_synth_rgb_dataset(root: &Path, count: usize, size: usize, seed: u64) -> Result<()> {
    for d in ["img", "gt"] {
        let p = root.join(d);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for i in 0..count as u64 {
        let (img, gt) = synth_rgb(size, seed, i)?;
        let id = format!("rgb{i:04}");
        write_rgb_png(&root.join("img").join(format!("{id}.png")), &img)?;
        write_gray_png(&root.join("gt").join(format!("{id}.png")), &gt.to_tensor())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lightfield::center_view;

    #[test]
    fn deterministic_and_distinct() {
        let a = synth_scene(32, 7, 3).unwrap();
        let b = synth_scene(32, 7, 3).unwrap();
        let c = synth_scene(32, 7, 4).unwrap();
        assert_eq!(a.lf, b.lf);
        assert_eq!(a.gt, b.gt);
        assert_ne!(a.lf, c.lf);
        assert_eq!(a.id, "scene0003");
    }

    #[test]
    fn mask_is_one_even_aligned_square() {
        for i in 0..20 {
            let s = synth_scene(32, 1, i).unwrap();
            let fg: Vec<(usize, usize)> =
                (0..32 * 32).filter(|&k| s.gt.mask[k]).map(|k| (k % 32, k / 32)).collect();
            let (x0, x1) = (fg.iter().map(|p| p.0).min().unwrap(), fg.iter().map(|p| p.0).max().unwrap());
            let (y0, y1) = (fg.iter().map(|p| p.1).min().unwrap(), fg.iter().map(|p| p.1).max().unwrap());
            assert_eq!(fg.len(), (x1 - x0 + 1) * (y1 - y0 + 1));
            assert_eq!(x1 - x0, y1 - y0);
            assert!(x0 % 2 == 0 && y0 % 2 == 0 && (x1 + 1) % 2 == 0);
            assert!((8..=14).contains(&(x1 - x0 + 1)));
        }
    }

    #[test]
    fn parallax_separates_layers() {
        let s = synth_scene(32, 2, 0).unwrap();
        let cv = center_view(&s.lf);
        let moves = |x: usize, y: usize| {
            (0..9).any(|u| (0..9).any(|v| s.lf.get(u, v, x, y, 0) != cv.get(0, y, x)))
        };
        // the disparity-0 background stays put wherever no square passes over it
        let still = (0..32 * 32).filter(|&k| !moves(k % 32, k / 32)).count();
        assert!(still > 32 * 32 / 3, "{still}");
        // every salient pixel off the square edge changes between views
        let interior: Vec<usize> = (0..32 * 32)
            .filter(|&k| {
                let (x, y) = (k % 32, k / 32);
                s.gt.mask[k] && (1..=2).all(|r| {
                    x >= r && y >= r && x + r < 32 && y + r < 32
                        && s.gt.mask[k - r] && s.gt.mask[k + r] && s.gt.mask[k - 32 * r] && s.gt.mask[k + 32 * r]
                })
            })
            .collect();
        assert!(!interior.is_empty());
        assert!(interior.iter().all(|&k| moves(k % 32, k / 32)));
    }

    #[test]
    fn center_view_cannot_tell_squares_apart_by_statistics() {
        // same sampling law for both squares: average sides agree within noise
        let mut sal = 0.0;
        let mut dis = 0.0;
        let n = 200;
        for i in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            rng.set_stream(i);
            let _ = Texture::random(&mut rng, 0.5);
            let (a, b) = place_squares(&mut rng, 64);
            sal += a.side;
            dis += b.side;
        }
        assert!((sal - dis).abs() / n as f64 <= 1.0);
    }

    #[test]
    fn rgb_samples_are_valid() {
        let (img, gt) = synth_rgb(32, 3, 1).unwrap();
        assert_eq!(img.to_tensor().shape(), &[3, 32, 32]);
        assert!(gt.foreground() >= 64);
        // the salient square is the most saturated region
        let sat = |k: usize| {
            let v: Vec<f64> = (0..3).map(|c| img.get(c, k / 32, k % 32)).collect();
            v.iter().cloned().fold(0.0, f64::max) - v.iter().cloned().fold(1.0, f64::min)
        };
        let inside = (0..1024).filter(|&k| gt.mask[k]).map(sat).sum::<f64>() / gt.foreground() as f64;
        let outside = (0..1024).filter(|&k| !gt.mask[k]).map(sat).sum::<f64>() / (1024 - gt.foreground()) as f64;
        assert!(inside > outside + 0.3, "{inside} vs {outside}");
    }

    #[test]
    fn written_dataset_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let ids = write_synth_dataset(dir.path(), 2, 16, 5, LayoutKind::Mla).unwrap();
        assert_eq!(ids, ["scene0000", "scene0001"]);
        let lf = crate::lightfield::io::read_light_field(&dir.path().join("lf/scene0001.png")).unwrap();
        let want = synth_scene(16, 5, 1).unwrap();
        assert_eq!(lf.angular(), (9, 9));
        let err = lf.data().iter().zip(want.lf.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 0.5 / 255.0 + 1e-12);
    }
}
