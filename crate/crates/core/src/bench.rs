//! Wall-clock timing of the full pipeline.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::fee;
use crate::lightfield::LightField;
use crate::pipeline::{Model, Pipeline};
use crate::tensor::conv::{mac_counter, reset_mac_counter};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    /// Seconds per timed run.
    pub times: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub min: f64,
    pub max: f64,
    pub warmup: usize,
    pub threads: usize,
    pub profile: String,
    pub input_mode: String,
    /// Light field `[U, V, S, T, 3]`.
    pub input_shape: Vec<usize>,
    /// Network input `[C, H, W]`.
    pub network_input: Vec<usize>,
    pub macs_analytic: u64,
    pub macs_counted: u64,
    /// FNV-1a of the output map's bytes, for cross-run comparison.
    pub output_digest: u64,
}

fn fnv1a(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Closed-form multiply-accumulate count of one forward pass.
pub fn analytic_macs(pipeline: &Pipeline) -> Result<u64> {
    let n = pipeline.output_size();
    let mut total: u64 = pipeline.detector.layer_macs(n, n)?.iter().map(|(_, m)| m).sum();
    if pipeline.uses_fee() {
        let side = pipeline.spatial * fee::BLOCK;
        total += fee::layer_macs(side, side)?.iter().sum::<u64>();
    }
    Ok(total)
}

/// Times `runs` forward passes of `model` on `lf` after `warmup` untimed ones.
pub fn bench(model: &Model, lf: &LightField, runs: usize, warmup: usize, threads: usize) -> Result<BenchReport> {
    if runs == 0 {
        return Err(Error::dim("bench needs at least one run"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Format(format!("thread pool: {e}")))?;
    let pipe = &model.pipeline;
    let network_input = pipe.prepare(lf)?.shape().to_vec();
    let macs_analytic = analytic_macs(pipe)?;
    let (times, macs_counted, digest) = pool.install(|| -> Result<(Vec<f64>, u64, u64)> {
        for _ in 0..warmup {
            model.predict(lf)?;
        }
        let mut times = Vec::with_capacity(runs);
        let mut macs = 0;
        let mut digest = 0;
        for i in 0..runs {
            reset_mac_counter();
            let t0 = Instant::now();
            let map = model.predict(lf)?;
            times.push(t0.elapsed().as_secs_f64().max(f64::MIN_POSITIVE));
            if i == 0 {
                macs = mac_counter();
                digest = fnv1a(&map.values);
            }
        }
        Ok((times, macs, digest))
    })?;
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    let (nu, nv) = lf.angular();
    let (ns, nt) = lf.spatial();
    Ok(BenchReport {
        mean: times.iter().sum::<f64>() / times.len() as f64,
        median: median(&sorted),
        p95: percentile(&sorted, 95.0),
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        times,
        warmup,
        threads: pool.current_num_threads(),
        profile: pipe.detector.profile.name.to_string(),
        input_mode: pipe.mode.as_str().to_string(),
        input_shape: vec![nu, nv, ns, nt, 3],
        network_input,
        macs_analytic,
        macs_counted,
        output_digest: digest,
    })
}

impl BenchReport {
    pub fn to_key_values(&self) -> String {
        let dims = |v: &[usize]| v.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
        let mut s = String::new();
        let _ = writeln!(s, "runs = {}", self.times.len());
        let _ = writeln!(s, "warmup = {}", self.warmup);
        let _ = writeln!(s, "threads = {}", self.threads);
        let _ = writeln!(s, "profile = {}", self.profile);
        let _ = writeln!(s, "input_mode = {}", self.input_mode);
        let _ = writeln!(s, "input_shape = {}", dims(&self.input_shape));
        let _ = writeln!(s, "network_input = {}", dims(&self.network_input));
        let _ = writeln!(s, "mean_s = {:.6}", self.mean);
        let _ = writeln!(s, "median_s = {:.6}", self.median);
        let _ = writeln!(s, "p95_s = {:.6}", self.p95);
        let _ = writeln!(s, "min_s = {:.6}", self.min);
        let _ = writeln!(s, "max_s = {:.6}", self.max);
        let times: Vec<String> = self.times.iter().map(|t| format!("{t:.6}")).collect();
        let _ = writeln!(s, "times_s = {}", times.join(","));
        let _ = writeln!(s, "macs_analytic = {}", self.macs_analytic);
        let _ = writeln!(s, "macs_counted = {}", self.macs_counted);
        let _ = writeln!(s, "macs_match = {}", self.macs_analytic == self.macs_counted);
        let _ = writeln!(s, "output_digest = {:016x}", self.output_digest);
        s
    }

    pub fn write_key_values(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_key_values()).map_err(|e| Error::io(path, e))
    }
}
