//! Single-threaded inference latency and memory benchmarking.
//!
//! Latency comes from wall-clock timing of pure forward passes after a
//! warmup; the headline statistic is the median, with mean, min, max, and
//! the coefficient of variation alongside. Memory is the exact logical
//! peak: parameter bytes plus the tracked peak of tensor buffers allocated
//! during one forward pass. The memory figure is deterministic and must
//! reproduce bitwise across runs; timing depends on the host.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::memtrack;
use crate::scalar::Scalar;
use crate::segnet::{NetConfig, SegNet};
use crate::tensor::Tensor;

/// Summary statistics over a set of run times, in seconds.
#[derive(Debug, Clone, Copy)]
pub struct TimeSummary {
    pub median_s: f64,
    pub mean_s: f64,
    pub min_s: f64,
    pub max_s: f64,
    /// Population standard deviation over the mean.
    pub cv: f64,
}

/// Order statistics for a non-empty set of run times.
pub fn summarize_times(times: &[f64]) -> TimeSummary {
    assert!(!times.is_empty(), "summarize_times needs at least one run");
    let mut sorted = times.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    let n = sorted.len();
    let median_s = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let mean_s = sorted.iter().sum::<f64>() / n as f64;
    let var = sorted.iter().map(|t| (t - mean_s).powi(2)).sum::<f64>() / n as f64;
    let cv = if mean_s > 0.0 { var.sqrt() / mean_s } else { 0.0 };
    TimeSummary { median_s, mean_s, min_s: sorted[0], max_s: sorted[n - 1], cv }
}

/// One network's benchmark figures.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub variant: String,
    pub input_shape: Vec<usize>,
    pub warmup: usize,
    pub runs: usize,
    pub times: TimeSummary,
    pub peak_bytes: u64,
    pub param_bytes: u64,
}

fn check_counts(warmup: usize, runs: usize) -> Result<()> {
    if warmup == 0 {
        return Err(Error::Config("bench: warmup must be >= 1".into()));
    }
    if runs < 3 {
        return Err(Error::Config("bench: runs must be >= 3".into()));
    }
    Ok(())
}

/// Time `runs` forward passes after `warmup` untimed ones.
pub fn measure_latency<T: Scalar>(
    net: &SegNet<T>,
    x: &Tensor<T>,
    warmup: usize,
    runs: usize,
) -> Result<Vec<f64>> {
    check_counts(warmup, runs)?;
    for _ in 0..warmup {
        let _ = net.forward(x)?;
    }
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        let out = net.forward(x)?;
        times.push(start.elapsed().as_secs_f64());
        drop(out);
    }
    Ok(times)
}

/// Deterministic memory figures: (peak bytes including parameters, parameter bytes).
pub fn measure_memory<T: Scalar>(net: &SegNet<T>, x: &Tensor<T>) -> Result<(u64, u64)> {
    memtrack::begin();
    let outcome = net.forward(x).map(drop);
    let activations = memtrack::end();
    outcome?;
    let params = net.param_bytes() as u64;
    Ok((params + activations, params))
}

/// Benchmark one built network against one input.
pub fn bench_network<T: Scalar>(
    name: &str,
    net: &SegNet<T>,
    x: &Tensor<T>,
    warmup: usize,
    runs: usize,
) -> Result<BenchReport> {
    let times = measure_latency(net, x, warmup, runs)?;
    let (peak_bytes, param_bytes) = measure_memory(net, x)?;
    Ok(BenchReport {
        variant: name.to_string(),
        input_shape: x.shape().to_vec(),
        warmup,
        runs,
        times: summarize_times(&times),
        peak_bytes,
        param_bytes,
    })
}

/// Benchmarks of several network configurations on one shared input.
#[derive(Debug, Clone)]
pub struct CompareReport {
    pub input_shape: Vec<usize>,
    pub warmup: usize,
    pub runs: usize,
    pub reports: Vec<BenchReport>,
}

impl CompareReport {
    /// Machine-readable rows, one per variant.
    pub fn csv(&self) -> String {
        let mut out = String::from("variant,median_s,mean_s,cv,peak_bytes,param_bytes\n");
        for r in &self.reports {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.variant, r.times.median_s, r.times.mean_s, r.times.cv, r.peak_bytes, r.param_bytes
            ));
        }
        out
    }

    fn ranked_by(&self, key: impl Fn(&BenchReport) -> f64) -> Vec<String> {
        let mut order: Vec<&BenchReport> = self.reports.iter().collect();
        order.sort_by(|a, b| key(a).partial_cmp(&key(b)).expect("finite key"));
        order.iter().map(|r| r.variant.clone()).collect()
    }

    /// Variant names from fastest to slowest median.
    pub fn ranking_by_median(&self) -> Vec<String> {
        self.ranked_by(|r| r.times.median_s)
    }

    /// Variant names from smallest to largest peak memory.
    pub fn ranking_by_peak(&self) -> Vec<String> {
        self.ranked_by(|r| r.peak_bytes as f64)
    }

    /// Human-readable table plus both rankings.
    pub fn render(&self) -> String {
        let mut out = format!(
            "input {:?}, {} warmup + {} timed runs per variant\n\n{:<10} {:>12} {:>12} {:>8} {:>12} {:>12}\n",
            self.input_shape, self.warmup, self.runs,
            "variant", "median ms", "mean ms", "cv %", "peak KiB", "param KiB",
        );
        for r in &self.reports {
            out.push_str(&format!(
                "{:<10} {:>12.3} {:>12.3} {:>8.2} {:>12.1} {:>12.1}\n",
                r.variant,
                r.times.median_s * 1e3,
                r.times.mean_s * 1e3,
                r.times.cv * 100.0,
                r.peak_bytes as f64 / 1024.0,
                r.param_bytes as f64 / 1024.0,
            ));
        }
        out.push_str(&format!(
            "\nfastest by median: {}\nsmallest by peak:  {}\n",
            self.ranking_by_median().join(" < "),
            self.ranking_by_peak().join(" < "),
        ));
        out
    }
}

/// Build each configuration, feed all of them the same seeded random
/// input of extent h×w, and benchmark them one after another on the
/// calling thread.
pub fn compare_variants(
    configs: &[(String, NetConfig)],
    h: usize,
    w: usize,
    warmup: usize,
    runs: usize,
    input_seed: u64,
) -> Result<CompareReport> {
    if configs.len() < 2 {
        return Err(Error::Contract("bench: comparison needs at least two variants".into()));
    }
    check_counts(warmup, runs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(input_seed);
    let mut reports = Vec::with_capacity(configs.len());
    let mut x: Option<Tensor<f32>> = None;
    for (name, cfg) in configs {
        let net: SegNet<f32> = SegNet::build(cfg)?;
        if x.is_none() {
            x = Some(Tensor::rand_uniform(vec![cfg.in_channels, h, w], -1.0, 1.0, &mut rng));
        }
        let input = x.as_ref().expect("input just created");
        reports.push(bench_network(name, &net, input, warmup, runs)?);
    }
    Ok(CompareReport {
        input_shape: x.expect("at least two variants ran").shape().to_vec(),
        warmup,
        runs,
        reports,
    })
}
