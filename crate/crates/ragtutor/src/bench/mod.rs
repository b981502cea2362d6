//! Benchmark harness: N sequential generations of one prompt, per-iteration
//! TTFB / generation-TPS / total latency, optional GPU telemetry, and a
//! summary with mean/median/p95/min/max per metric.
//!
//! Iterations run strictly one after another so TTFB is never contaminated by
//! a concurrent request. One progress line per iteration goes to the supplied
//! writer in the byte-stable format
//! `[i/N] TTFB=…s | gen_tps=… | total=…s | comp_tok~…`.
//!
//! p95 is linear interpolation at fractional index `0.95 * (n - 1)` of the
//! sorted samples.

pub mod telemetry;

pub use telemetry::{GpuAggregate, TelemetrySampler};

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::llm::{GenerationBackend, GenerationEvent, GenerationParams, GenerationResult, LlmError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("iterations must be at least 1")]
    NoIterations,
    #[error("discarding the warm-up iteration requires at least 2 iterations")]
    NotEnoughForWarmupDiscard,
    #[error("cannot summarize an empty sample list")]
    EmptySamples,
    #[error("generation rate must be positive")]
    NonPositiveRate,
    #[error("benchmark aborted at iteration {failed_iteration}/{planned}: {source}")]
    Aborted {
        failed_iteration: u32,
        planned: u32,
        /// Iterations that completed before the failure.
        partial: Vec<IterationMetrics>,
        #[source]
        source: LlmError,
    },
    #[error("failed to write progress line: {0}")]
    Io(#[from] std::io::Error),
}

/// Measurements of one generation run.
#[derive(Debug, Clone, Serialize)]
pub struct IterationMetrics {
    pub ttfb_s: f64,
    /// completion_tokens / (total_latency_s - ttfb_s)
    pub gen_tps: f64,
    pub total_latency_s: f64,
    pub completion_tokens: u32,
    pub prompt_tokens: u32,
}

impl IterationMetrics {
    pub fn from_result(result: &GenerationResult) -> Self {
        let generation_duration = result.total_duration_s - result.ttfb_s;
        let gen_tps = if result.completion_tokens > 0 && generation_duration > 0.0 {
            f64::from(result.completion_tokens) / generation_duration
        } else {
            0.0
        };
        Self {
            ttfb_s: result.ttfb_s,
            gen_tps,
            total_latency_s: result.total_duration_s,
            completion_tokens: result.completion_tokens,
            prompt_tokens: result.prompt_tokens,
        }
    }

    /// Whole-transaction throughput: (prompt + completion tokens) / total
    /// duration. Informational; not part of the summary JSON.
    pub fn total_tps(&self) -> f64 {
        if self.total_latency_s > 0.0 {
            f64::from(self.prompt_tokens + self.completion_tokens) / self.total_latency_s
        } else {
            0.0
        }
    }

    /// The byte-stable progress line, without trailing newline.
    pub fn progress_line(&self, iteration: u32, planned: u32) -> String {
        format!(
            "[{}/{}] TTFB={:.3}s | gen_tps={:.2} | total={:.2}s | comp_tok~{}",
            iteration, planned, self.ttfb_s, self.gen_tps, self.total_latency_s, self.completion_tokens
        )
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub min: f64,
    pub max: f64,
}

/// Aggregate a non-empty sample list.
///
/// mean = arithmetic mean; median = middle of the sorted list (midpoint for
/// even n); p95 = linear interpolation at `0.95 * (n - 1)`; min/max exact.
pub fn summarize(samples: &[f64]) -> Result<SummaryStats, BenchError> {
    if samples.is_empty() {
        return Err(BenchError::EmptySamples);
    }
    let n = samples.len();
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mean = samples.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    let p95 = interpolated_percentile(&sorted, 0.95);
    Ok(SummaryStats {
        mean,
        median,
        p95,
        min: sorted[0],
        max: sorted[n - 1],
    })
}

fn interpolated_percentile(sorted: &[f64], q: f64) -> f64 {
    let position = q * (sorted.len() - 1) as f64;
    let lo = position.floor() as usize;
    let hi = position.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (position - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Latency model: `T_total = ttfb + n_out / r_gen`.
pub fn estimate_total_latency(ttfb_s: f64, n_out: u64, r_gen: f64) -> Result<f64, BenchError> {
    if r_gen <= 0.0 || r_gen.is_nan() {
        return Err(BenchError::NonPositiveRate);
    }
    Ok(ttfb_s + n_out as f64 / r_gen)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GpuStats {
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Serialize)]
pub struct MetricsBlock {
    pub ttfb_s: SummaryStats,
    pub gen_tps: SummaryStats,
    pub total_latency_s: SummaryStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gpu_util_sm_pct: Option<GpuStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gpu_mem_mb: Option<GpuStats>,
}

/// The summary JSON. Field order matters: it is the output schema.
/// All statistics are rounded to 3 decimals.
#[derive(Debug, Serialize)]
pub struct BenchmarkSummary {
    pub model: String,
    pub n_ctx: u32,
    pub n_batch: u32,
    pub n_gpu_layers: u32,
    pub flash_attn: bool,
    /// Truncated to 80 characters with a trailing ellipsis.
    pub prompt: String,
    /// Number of iterations included in the statistics.
    pub iterations: u32,
    pub metrics: MetricsBlock,
}

/// A finished benchmark: the summary plus the raw per-iteration metrics
/// (warm-up included even when it is excluded from the statistics).
#[derive(Debug)]
pub struct BenchmarkRun {
    pub summary: BenchmarkSummary,
    pub iterations: Vec<IterationMetrics>,
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn round_stats(s: SummaryStats) -> SummaryStats {
    SummaryStats {
        mean: round3(s.mean),
        median: round3(s.median),
        p95: round3(s.p95),
        min: round3(s.min),
        max: round3(s.max),
    }
}

fn truncate_prompt(prompt: &str) -> String {
    let chars: Vec<char> = prompt.chars().collect();
    if chars.len() <= 80 {
        prompt.to_string()
    } else {
        let mut out: String = chars[..79].iter().collect();
        out.push('…');
        out
    }
}

/// Run `iterations` sequential generations of `prompt` and aggregate the
/// per-iteration metrics. A progress line per iteration is written to
/// `progress` as it completes. With `discard_warmup`, iteration 1 still runs
/// and prints but is excluded from the statistics.
///
/// Any generation failure aborts the benchmark; the error carries the
/// metrics of the iterations that had completed.
pub async fn run_benchmark(
    backend: &dyn GenerationBackend,
    prompt: &str,
    params: &GenerationParams,
    iterations: u32,
    discard_warmup: bool,
    telemetry: Option<&TelemetrySampler>,
    progress: &mut dyn Write,
) -> Result<BenchmarkRun, BenchError> {
    if iterations == 0 {
        return Err(BenchError::NoIterations);
    }
    if discard_warmup && iterations < 2 {
        return Err(BenchError::NotEnoughForWarmupDiscard);
    }

    let sampler = telemetry.map(|t| t.start());
    let mut all = Vec::with_capacity(iterations as usize);
    for i in 1..=iterations {
        let mut sink = |_: &GenerationEvent| {};
        let result = match backend.generate(prompt, params, &mut sink).await {
            Ok(r) => r,
            Err(source) => {
                if let Some(s) = sampler {
                    s.stop().await;
                }
                return Err(BenchError::Aborted {
                    failed_iteration: i,
                    planned: iterations,
                    partial: all,
                    source,
                });
            }
        };
        let metrics = IterationMetrics::from_result(&result);
        writeln!(progress, "{}", metrics.progress_line(i, iterations))?;
        all.push(metrics);
    }
    let gpu = match sampler {
        Some(s) => s.stop().await,
        None => None,
    };

    let measured: &[IterationMetrics] = if discard_warmup { &all[1..] } else { &all };
    let collect = |f: fn(&IterationMetrics) -> f64| -> Vec<f64> { measured.iter().map(f).collect() };
    let summary = BenchmarkSummary {
        model: params.model_path.clone(),
        n_ctx: params.n_ctx,
        n_batch: params.n_batch,
        n_gpu_layers: params.n_gpu_layers,
        flash_attn: params.flash_attn,
        prompt: truncate_prompt(prompt),
        iterations: measured.len() as u32,
        metrics: MetricsBlock {
            ttfb_s: round_stats(summarize(&collect(|m| m.ttfb_s))?),
            gen_tps: round_stats(summarize(&collect(|m| m.gen_tps))?),
            total_latency_s: round_stats(summarize(&collect(|m| m.total_latency_s))?),
            gpu_util_sm_pct: gpu.as_ref().map(|g| GpuStats {
                mean: round3(g.util_mean),
                max: round3(g.util_max),
            }),
            gpu_mem_mb: gpu.as_ref().map(|g| GpuStats {
                mean: round3(g.mem_mean),
                max: round3(g.mem_max),
            }),
        },
    };
    Ok(BenchmarkRun {
        summary,
        iterations: all,
    })
}
