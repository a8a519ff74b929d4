//! Weighted F-measure.
//!
//! Errors on foreground pixels are replaced by the smaller of the raw
//! error and its Gaussian-weighted sum over all foreground pixels
//! (σ² = 5, full extent). Background errors are weighted by
//! `2 − exp(α·d)` with `α = ln(0.5)/5`, `d` the Euclidean distance to the
//! nearest foreground pixel, so errors far from the object cost more.

use super::{check_extent, f_from_pr, GroundTruth, SaliencyMap};
use crate::error::Result;

pub const SIGMA2: f64 = 5.0;

pub fn alpha() -> f64 {
    0.5f64.ln() / 5.0
}

/// Gaussian dependency between two pixels at squared distance `d2`.
#[inline]
pub fn dependency(d2: f64) -> f64 {
    (-d2 / (2.0 * SIGMA2)).exp() / (2.0 * std::f64::consts::PI * SIGMA2)
}

/// Background weight at distance `d` from the object.
#[inline]
pub fn background_weight(d: f64) -> f64 {
    2.0 - (alpha() * d).exp()
}

const INF: f64 = 1e20;

/// One-dimensional squared distance transform (lower envelope of parabolas).
fn dt1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] && k > 0 {
                k -= 1;
            } else if s <= z[k] {
                // k == 0 and the new parabola dominates from −∞
                v[0] = q;
                z[1] = f64::INFINITY;
                break;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance from every pixel to the nearest
/// foreground pixel; `None` when there is no foreground.
pub fn squared_distance_to_foreground(g: &GroundTruth) -> Option<Vec<f64>> {
    if g.foreground() == 0 {
        return None;
    }
    let (w, h) = (g.width, g.height);
    let n = w.max(h);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
    let mut d: Vec<f64> = g.mask.iter().map(|&m| if m { 0.0 } else { INF }).collect();
    let (mut col, mut out) = (vec![0.0; h], vec![0.0; h]);
    for x in 0..w {
        for y in 0..h {
            col[y] = d[y * w + x];
        }
        dt1d(&col, &mut out, &mut v, &mut z);
        for y in 0..h {
            d[y * w + x] = out[y];
        }
    }
    let mut row_out = vec![0.0; w];
    for y in 0..h {
        dt1d(&d[y * w..(y + 1) * w], &mut row_out, &mut v, &mut z);
        d[y * w..(y + 1) * w].copy_from_slice(&row_out);
    }
    Some(d)
}

/// Full-extent separable Gaussian sum of `e` (zero off the foreground).
fn gaussian_spread(e: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = |n: usize| -> Vec<f64> {
        (0..n).map(|d| (-((d * d) as f64) / (2.0 * SIGMA2)).exp()).collect()
    };
    let (kx, ky) = (k(w), k(h));
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &e[y * w..(y + 1) * w];
        for x in 0..w {
            tmp[y * w + x] = row.iter().enumerate().map(|(x2, &v)| v * kx[x.abs_diff(x2)]).sum();
        }
    }
    let norm = 2.0 * std::f64::consts::PI * SIGMA2;
    let mut out = vec![0.0; w * h];
    for x in 0..w {
        for y in 0..h {
            out[y * w + x] = (0..h).map(|y2| tmp[y2 * w + x] * ky[y.abs_diff(y2)]).sum::<f64>() / norm;
        }
    }
    out
}

/// Weighted F-measure. With an all-background ground truth the score is 1
/// for an all-zero map and 0 otherwise.
pub fn weighted_f_beta(p: &SaliencyMap, g: &GroundTruth, beta2: f64) -> Result<f64> {
    check_extent(p, g)?;
    let (w, h) = (g.width, g.height);
    let Some(d2) = squared_distance_to_foreground(g) else {
        return Ok(if p.values.iter().all(|&v| v == 0.0) { 1.0 } else { 0.0 });
    };
    let err: Vec<f64> = p
        .values
        .iter()
        .zip(&g.mask)
        .map(|(&v, &m)| if m { 1.0 - v } else { v })
        .collect();
    let fg_err: Vec<f64> = err
        .iter()
        .zip(&g.mask)
        .map(|(&e, &m)| if m { e } else { 0.0 })
        .collect();
    let spread = gaussian_spread(&fg_err, w, h);

    let (mut fg_sum, mut bg_sum, mut n_fg) = (0.0, 0.0, 0usize);
    for i in 0..w * h {
        if g.mask[i] {
            fg_sum += err[i].min(spread[i]);
            n_fg += 1;
        } else {
            bg_sum += err[i] * background_weight(d2[i].sqrt());
        }
    }
    let tp = n_fg as f64 - fg_sum;
    let recall = 1.0 - fg_sum / n_fg as f64;
    let precision = if tp + bg_sum > 0.0 { tp / (tp + bg_sum) } else { 0.0 };
    Ok(f_from_pr(precision, recall, beta2).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Pairwise definition, O(n²).
    fn brute(p: &SaliencyMap, g: &GroundTruth, beta2: f64) -> f64 {
        let (w, h) = (g.width, g.height);
        let fg: Vec<usize> = (0..w * h).filter(|&i| g.mask[i]).collect();
        if fg.is_empty() {
            return if p.values.iter().all(|&v| v == 0.0) { 1.0 } else { 0.0 };
        }
        let xy = |i: usize| ((i % w) as f64, (i / w) as f64);
        let e = |i: usize| (p.values[i] - f64::from(u8::from(g.mask[i]))).abs();
        let mut fg_sum = 0.0;
        let mut bg_sum = 0.0;
        for j in 0..w * h {
            let (xj, yj) = xy(j);
            if g.mask[j] {
                let ea: f64 = fg
                    .iter()
                    .map(|&i| {
                        let (xi, yi) = xy(i);
                        e(i) * (-((xi - xj).powi(2) + (yi - yj).powi(2)) / 10.0).exp()
                            / (10.0 * std::f64::consts::PI)
                    })
                    .sum();
                fg_sum += e(j).min(ea);
            } else {
                let d = fg
                    .iter()
                    .map(|&i| {
                        let (xi, yi) = xy(i);
                        ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min);
                bg_sum += e(j) * (2.0 - (0.5f64.ln() / 5.0 * d).exp());
            }
        }
        let tp = fg.len() as f64 - fg_sum;
        let r = 1.0 - fg_sum / fg.len() as f64;
        let pr = if tp + bg_sum > 0.0 { tp / (tp + bg_sum) } else { 0.0 };
        if beta2 * pr + r == 0.0 {
            0.0
        } else {
            (1.0 + beta2) * pr * r / (beta2 * pr + r)
        }
    }

    fn blob_gt(w: usize, h: usize, x0: usize, y0: usize, bw: usize, bh: usize) -> GroundTruth {
        let mask = (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                (x0..x0 + bw).contains(&x) && (y0..y0 + bh).contains(&y)
            })
            .collect();
        GroundTruth::new(w, h, mask).unwrap()
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let g = blob_gt(10, 8, 2, 3, 4, 3);
        let p = SaliencyMap::new(10, 8, g.to_tensor().into_data()).unwrap();
        assert_eq!(weighted_f_beta(&p, &g, 0.3).unwrap(), 1.0);
    }

    #[test]
    fn matches_pairwise_definition_on_blob() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = blob_gt(16, 16, 5, 4, 6, 7);
        let p = SaliencyMap::new(16, 16, (0..256).map(|_| rng.gen()).collect()).unwrap();
        let a = weighted_f_beta(&p, &g, 0.3).unwrap();
        assert!((a - brute(&p, &g, 0.3)).abs() < 1e-9);
    }

    #[test]
    fn distance_transform_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (w, h) = (rng.gen_range(1..14), rng.gen_range(1..14));
            let mask: Vec<bool> = (0..w * h).map(|_| rng.gen_bool(0.1)).collect();
            let g = GroundTruth::new(w, h, mask.clone()).unwrap();
            let Some(d) = squared_distance_to_foreground(&g) else {
                assert!(mask.iter().all(|m| !m));
                continue;
            };
            for j in 0..w * h {
                let best = (0..w * h)
                    .filter(|&i| mask[i])
                    .map(|i| {
                        let dx = (i % w) as f64 - (j % w) as f64;
                        let dy = (i / w) as f64 - (j / w) as f64;
                        dx * dx + dy * dy
                    })
                    .fold(f64::INFINITY, f64::min);
                assert_eq!(d[j], best);
            }
        }
    }

    #[test]
    fn far_errors_cost_more_than_near_ones() {
        let g = blob_gt(32, 32, 4, 12, 8, 8);
        let mut near = g.to_tensor().into_data();
        let mut far = near.clone();
        for y in 12..20 {
            near[y * 32 + 12] = 0.6; // column right next to the blob
            far[y * 32 + 30] = 0.6; // column at the far edge
        }
        let near = SaliencyMap::new(32, 32, near).unwrap();
        let far = SaliencyMap::new(32, 32, far).unwrap();
        let (fn_, ff) = (
            weighted_f_beta(&near, &g, 0.3).unwrap(),
            weighted_f_beta(&far, &g, 0.3).unwrap(),
        );
        assert!(ff < fn_, "far {ff} near {fn_}");
        assert!((fn_ - brute(&near, &g, 0.3)).abs() < 1e-9);
        assert!((ff - brute(&far, &g, 0.3)).abs() < 1e-9);
    }

    #[test]
    fn pixel_order_matters() {
        // same confusion counts, different geometry
        let g = GroundTruth::new(4, 1, vec![true, false, false, false]).unwrap();
        let a = SaliencyMap::new(4, 1, vec![1.0, 0.5, 0.0, 0.0]).unwrap();
        let g2 = GroundTruth::new(4, 1, vec![true, false, false, false]).unwrap();
        let b = SaliencyMap::new(4, 1, vec![1.0, 0.0, 0.0, 0.5]).unwrap();
        assert_ne!(
            weighted_f_beta(&a, &g, 0.3).unwrap(),
            weighted_f_beta(&b, &g2, 0.3).unwrap()
        );
    }

    #[test]
    fn empty_ground_truth_convention() {
        let g = GroundTruth::new(3, 3, vec![false; 9]).unwrap();
        assert_eq!(weighted_f_beta(&SaliencyMap::new(3, 3, vec![0.0; 9]).unwrap(), &g, 0.3).unwrap(), 1.0);
        let mut v = vec![0.0; 9];
        v[4] = 0.1;
        assert_eq!(weighted_f_beta(&SaliencyMap::new(3, 3, v).unwrap(), &g, 0.3).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn random_pairs_match_definition(
            (w, h) in (1usize..=16, 1usize..=16),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = SaliencyMap::new(w, h, (0..w * h).map(|_| rng.gen()).collect()).unwrap();
            let g = GroundTruth::new(w, h, (0..w * h).map(|_| rng.gen_bool(0.3)).collect()).unwrap();
            prop_assert!((weighted_f_beta(&p, &g, 0.3).unwrap() - brute(&p, &g, 0.3)).abs() < 1e-9);
        }
    }
}
