//! Central finite-difference gradient checking.
//!
//! A probe perturbs one coordinate by `±eps` and compares the central
//! difference with the analytic gradient. Probes whose perturbation moves
//! any ReLU or max-pool onto a different branch are redrawn, since the
//! function is not differentiable across that step. [`check_gradient_pinned`]
//! instead evaluates such probes with every branch held at its decision at
//! `x`, i.e. on the smooth piece containing `x` extended past the kink.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{record_branches, with_branches, with_kink_trace};
use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub probes: usize,
    /// Probes redrawn because they straddled a kink.
    pub redrawn: usize,
    /// Probes evaluated with branches pinned because they straddled a kink.
    pub pinned: usize,
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Checks `analytic` (the gradient of `f` at `x`) on `probes` coordinates.
///
/// When `probes` covers the whole tensor every coordinate is visited once
/// (coordinates sitting on a kink are skipped); otherwise coordinates are
/// drawn at random from `seed` until `probes` smooth ones have been checked.
pub fn check_gradient(
    x: &Tensor,
    analytic: &Tensor,
    f: impl Fn(&Tensor) -> f64,
    eps: f64,
    probes: usize,
    seed: u64,
) -> GradCheckReport {
    assert_eq!(x.shape(), analytic.shape(), "gradient shape mismatch");
    let n = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exhaustive = probes >= n;
    let (_, base_sig) = with_kink_trace(|| f(x));

    let mut worst = 0.0f64;
    let mut done = 0;
    let mut redrawn = 0;
    let mut next = 0;
    let max_attempts = probes.max(1) * 50;
    let mut probe = x.clone();
    while done < probes.min(n) && done + redrawn < max_attempts {
        let i = if exhaustive {
            next += 1;
            next - 1
        } else {
            rng.gen_range(0..n)
        };
        if i >= n {
            break;
        }
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let (fp, sp) = with_kink_trace(|| f(&probe));
        probe.data_mut()[i] = orig - eps;
        let (fm, sm) = with_kink_trace(|| f(&probe));
        probe.data_mut()[i] = orig;
        if sp != base_sig || sm != base_sig {
            redrawn += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * eps);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
        done += 1;
    }
    GradCheckReport {
        max_relative_error: worst,
        probes: done,
        redrawn,
        pinned: 0,
    }
}

/// As [`check_gradient`], but a probe that straddles a kink is evaluated
/// again with all branches pinned to their decisions at `x` instead of
/// being redrawn, so every drawn coordinate is checked.
pub fn check_gradient_pinned(
    x: &Tensor,
    analytic: &Tensor,
    f: impl Fn(&Tensor) -> f64,
    eps: f64,
    probes: usize,
    seed: u64,
) -> GradCheckReport {
    assert_eq!(x.shape(), analytic.shape(), "gradient shape mismatch");
    let n = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, base_sig) = with_kink_trace(|| f(x));
    let (_, pattern) = record_branches(|| f(x));
    let coords: Vec<usize> = if probes >= n {
        (0..n).collect()
    } else {
        rand::seq::index::sample(&mut rng, n, probes).into_vec()
    };

    let mut worst = 0.0f64;
    let mut pinned = 0;
    let mut probe = x.clone();
    for &i in &coords {
        let orig = x.data()[i];
        let mut eval = |delta: f64, pin: bool| {
            probe.data_mut()[i] = orig + delta;
            let out = if pin {
                (with_branches(&pattern, || f(&probe)), base_sig)
            } else {
                with_kink_trace(|| f(&probe))
            };
            probe.data_mut()[i] = orig;
            out
        };
        let (mut fp, sp) = eval(eps, false);
        let (mut fm, sm) = eval(-eps, false);
        if sp != base_sig || sm != base_sig {
            fp = eval(eps, true).0;
            fm = eval(-eps, true).0;
            pinned += 1;
        }
        let numeric = (fp - fm) / (2.0 * eps);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    GradCheckReport {
        max_relative_error: worst,
        probes: coords.len(),
        redrawn: 0,
        pinned,
    }
}

/// Shorthand for [`check_gradient`] returning only the worst error.
pub fn max_relative_error(
    x: &Tensor,
    analytic: &Tensor,
    f: impl Fn(&Tensor) -> f64,
    eps: f64,
    probes: usize,
    seed: u64,
) -> f64 {
    check_gradient(x, analytic, f, eps, probes, seed).max_relative_error
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops;

    #[test]
    fn linear_map_is_exact() {
        let x = Tensor::new(vec![4], vec![0.3, -1.2, 2.0, 0.7]).unwrap();
        let coef = [1.5, -2.0, 0.25, 3.0];
        let f = |t: &Tensor| t.data().iter().zip(coef).map(|(a, b)| a * b).sum::<f64>();
        let g = Tensor::new(vec![4], coef.to_vec()).unwrap();
        let r = check_gradient(&x, &g, f, 1e-3, 4, 0);
        assert_eq!(r.probes, 4);
        assert!(r.max_relative_error < 1e-7, "{r:?}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let wrong = Tensor::new(vec![2], vec![2.0, 2.0]).unwrap();
        let err = max_relative_error(&x, &wrong, |t| t.data().iter().map(|v| v * v).sum(), 1e-3, 2, 0);
        assert!(err > 0.1);
    }

    #[test]
    fn redraws_probes_that_straddle_a_relu_kink() {
        let mut x = Tensor::new(vec![64], (0..64).map(|i| i as f64 / 10.0 - 3.0).collect()).unwrap();
        x.data_mut()[30] = 1e-4;
        let f = |t: &Tensor| ops::relu(t).sum();
        let g = x.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let r = check_gradient(&x, &g, f, 1e-3, 200, 4);
        assert!(r.redrawn > 0);
        assert!(r.max_relative_error < 1e-9, "{r:?}");
    }

    #[test]
    fn pinned_probes_follow_the_base_piece() {
        // |t| at 1e-4 straddles the kink for eps 1e-3; the pinned piece is t
        let x = Tensor::new(vec![1], vec![1e-4]).unwrap();
        let g = Tensor::new(vec![1], vec![1.0]).unwrap();
        let f = |t: &Tensor| {
            let pos = ops::relu(t).data()[0];
            let neg = ops::relu(&t.map(|v| -v)).data()[0];
            pos + neg
        };
        let raw = check_gradient(&x, &g, f, 1e-3, 1, 0);
        assert_eq!((raw.probes, raw.redrawn), (0, 1));
        let r = check_gradient_pinned(&x, &g, f, 1e-3, 1, 0);
        assert_eq!((r.probes, r.pinned), (1, 1));
        assert!(r.max_relative_error < 1e-12, "{r:?}");
    }

    #[test]
    fn pinned_check_still_catches_a_wrong_gradient() {
        let x = Tensor::new(vec![1], vec![1e-4]).unwrap();
        let wrong = Tensor::new(vec![1], vec![0.0]).unwrap();
        let r = check_gradient_pinned(&x, &wrong, |t| ops::relu(t).data()[0], 1e-3, 1, 0);
        assert!(r.max_relative_error > 0.5);
    }
}
