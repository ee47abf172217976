//! Inference throughput: frames in, scores out, timed end to end
//! (frame-pair sampling, flow when the model needs it, preprocessing and
//! the forward pass).

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::flow::FlowEngine;
use crate::ingest::{ClipData, SampleMode};
use crate::models::{ModelKind, PadModel};
use crate::pipeline::{prepare_sample, Preprocessing};
use crate::seed::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub batch_size: usize,
    pub n_warmup: usize,
    pub n_iter: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            batch_size: 1,
            n_warmup: 3,
            n_iter: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model: String,
    /// Flow engine constructed for inference, or `none`.
    pub engine: String,
    pub batch_size: usize,
    pub n_iter: usize,
    pub input_side: usize,
    pub samples_per_s: f64,
    /// Latency of one batch.
    pub batch_latency: LatencyStats,
    pub per_sample_latency_ms: f64,
    /// Inverse of the median per-sample latency.
    pub fps_equivalent: f64,
    pub peak_memory_bytes: Option<u64>,
    pub hardware: String,
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let mem = self
            .peak_memory_bytes
            .map_or("unavailable".to_string(), |b| format!("{:.1} MiB", b as f64 / (1024.0 * 1024.0)));
        format!(
            "model: {}\nengine: {}\nbatch_size: {}\niterations: {}\ninput_side: {}\nsamples_per_s: {:.2}\n\
             batch_latency_ms: mean {:.3} p50 {:.3} p90 {:.3} p99 {:.3}\nper_sample_latency_ms: {:.3}\n\
             fps_equivalent: {:.2}\npeak_memory: {}\nhardware: {}\n",
            self.model,
            self.engine,
            self.batch_size,
            self.n_iter,
            self.input_side,
            self.samples_per_s,
            self.batch_latency.mean_ms,
            self.batch_latency.p50_ms,
            self.batch_latency.p90_ms,
            self.batch_latency.p99_ms,
            self.per_sample_latency_ms,
            self.fps_equivalent,
            mem,
            self.hardware
        )
    }
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// CPU model, logical core count, OS and architecture.
pub fn hardware_description() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{cpu}; {cores} logical cores; {} {}", std::env::consts::OS, std::env::consts::ARCH)
}

/// Peak resident set size of this process (Linux `VmHWM`).
pub fn peak_memory_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Times `n_iter` batches after `n_warmup` untimed ones, cycling through
/// `clips`. Teachers need `engine`; students never touch it.
pub fn bench_model(
    model: &dyn PadModel,
    clips: &[ClipData],
    engine: Option<&dyn FlowEngine>,
    prep: &Preprocessing,
    cfg: &BenchConfig,
    exec: Exec,
) -> Result<BenchReport> {
    if cfg.n_iter == 0 {
        return Err(Error::Config("bench needs at least one timed iteration (n_iter > 0)".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("bench batch_size must be positive".into()));
    }
    if clips.is_empty() {
        return Err(Error::Config("bench needs at least one clip".into()));
    }
    let engine = match model.kind() {
        ModelKind::Teacher => {
            Some(engine.ok_or_else(|| Error::Config("benchmarking a teacher requires a flow engine".into()))?)
        }
        ModelKind::Student => None,
    };
    let net = model.network();
    let run_batch = |it: usize| -> Result<()> {
        let samples = exec.try_map_range(cfg.batch_size, |k| {
            let clip = &clips[(it * cfg.batch_size + k) % clips.len()];
            prepare_sample(clip, SampleMode::Eval, engine, prep, &mut stream_rng(&[0]))
        })?;
        let inputs: Vec<Vec<&[f32]>> = samples.iter().map(|s| model.inputs(s)).collect();
        net.logits(&inputs, samples[0].side, exec)?;
        Ok(())
    };
    for it in 0..cfg.n_warmup {
        run_batch(it)?;
    }
    let mut times = Vec::with_capacity(cfg.n_iter);
    let total = Instant::now();
    for it in 0..cfg.n_iter {
        let t = Instant::now();
        run_batch(cfg.n_warmup + it)?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let total_s = total.elapsed().as_secs_f64();
    times.sort_by(f64::total_cmp);
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let p50 = percentile(&times, 0.5);
    let per_sample = p50 / cfg.batch_size as f64;
    Ok(BenchReport {
        model: model.kind().to_string(),
        engine: engine.map_or("none".into(), |e| e.name().to_string()),
        batch_size: cfg.batch_size,
        n_iter: cfg.n_iter,
        input_side: prep.augment.side,
        samples_per_s: (cfg.n_iter * cfg.batch_size) as f64 / total_s,
        batch_latency: LatencyStats {
            mean_ms: mean,
            p50_ms: p50,
            p90_ms: percentile(&times, 0.9),
            p99_ms: percentile(&times, 0.99),
        },
        per_sample_latency_ms: per_sample,
        fps_equivalent: 1e3 / per_sample,
        peak_memory_bytes: peak_memory_bytes(),
        hardware: hardware_description(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.5), 5.0);
        assert_eq!(percentile(&v, 0.9), 9.0);
        assert_eq!(percentile(&v, 0.99), 10.0);
        assert_eq!(percentile(&[3.0], 0.5), 3.0);
    }

    #[test]
    fn zero_iterations_is_an_error() {
        let s = crate::models::StudentModel::new(&crate::models::ArchConfig::default(), 1).unwrap();
        let cfg = BenchConfig { n_iter: 0, ..BenchConfig::default() };
        let err = bench_model(&s, &[], None, &Preprocessing::default(), &cfg, Exec::Sequential).unwrap_err();
        assert!(err.to_string().contains("n_iter"));
    }

    #[test]
    fn hardware_string_is_populated() {
        let h = hardware_description();
        assert!(h.contains("logical cores"));
        if cfg!(target_os = "linux") {
            assert!(peak_memory_bytes().unwrap() > 0);
        }
    }
}
