//! Optional GPU telemetry via an external probe command.
//!
//! The probe (typically `nvidia-smi --query-gpu=utilization.gpu,memory.used
//! --format=csv,noheader,nounits`) is polled at a fixed interval for the
//! duration of the benchmark; each invocation must print one line with the
//! SM utilization percentage and memory use in MB, separated by a comma or
//! whitespace. A missing or unparsable probe disables telemetry with a
//! warning — the benchmark itself continues.

use std::time::Duration;

use tokio::sync::watch;
use tokio::task::JoinHandle;

/// Mean and max of the sampled utilization and memory streams.
#[derive(Debug, Clone, Copy)]
pub struct GpuAggregate {
    pub util_mean: f64,
    pub util_max: f64,
    pub mem_mean: f64,
    pub mem_max: f64,
}

#[derive(Debug, Clone)]
pub struct TelemetrySampler {
    command: Vec<String>,
    interval: Duration,
}

impl TelemetrySampler {
    /// `probe_command` is split on whitespace into program + args.
    /// Returns `None` for an empty command.
    pub fn new(probe_command: &str, interval_ms: u64) -> Option<Self> {
        let command: Vec<String> = probe_command.split_whitespace().map(str::to_string).collect();
        if command.is_empty() {
            return None;
        }
        Some(Self {
            command,
            interval: Duration::from_millis(interval_ms.max(1)),
        })
    }

    /// Configure from `GPU_PROBE_CMD` / `GPU_PROBE_INTERVAL_MS` (default 500).
    pub fn from_env() -> Option<Self> {
        let cmd = std::env::var("GPU_PROBE_CMD").ok()?;
        let interval_ms = std::env::var("GPU_PROBE_INTERVAL_MS")
            .ok()
            .and_then(|s| s.parse().ok())
            .unwrap_or(500);
        Self::new(&cmd, interval_ms)
    }

    /// Spawn the periodic sampling task. The task samples once immediately,
    /// then at the configured interval until stopped; any probe failure
    /// disables further sampling with a warning.
    pub fn start(&self) -> RunningSampler {
        let (stop_tx, mut stop_rx) = watch::channel(false);
        let command = self.command.clone();
        let interval = self.interval;
        let handle = tokio::spawn(async move {
            let mut samples: Vec<(f64, f64)> = Vec::new();
            loop {
                match probe_once(&command).await {
                    Ok(sample) => samples.push(sample),
                    Err(reason) => {
                        log::warn!("gpu telemetry disabled: {reason}");
                        break;
                    }
                }
                tokio::select! {
                    _ = stop_rx.changed() => break,
                    _ = tokio::time::sleep(interval) => {}
                }
            }
            samples
        });
        RunningSampler {
            stop: stop_tx,
            handle,
        }
    }
}

pub struct RunningSampler {
    stop: watch::Sender<bool>,
    handle: JoinHandle<Vec<(f64, f64)>>,
}

impl RunningSampler {
    /// Stop sampling and aggregate. `None` when nothing was collected.
    pub async fn stop(self) -> Option<GpuAggregate> {
        let _ = self.stop.send(true);
        let samples = self.handle.await.unwrap_or_default();
        if samples.is_empty() {
            return None;
        }
        let n = samples.len() as f64;
        Some(GpuAggregate {
            util_mean: samples.iter().map(|s| s.0).sum::<f64>() / n,
            util_max: samples.iter().map(|s| s.0).fold(f64::MIN, f64::max),
            mem_mean: samples.iter().map(|s| s.1).sum::<f64>() / n,
            mem_max: samples.iter().map(|s| s.1).fold(f64::MIN, f64::max),
        })
    }
}

async fn probe_once(command: &[String]) -> Result<(f64, f64), String> {
    let output = tokio::process::Command::new(&command[0])
        .args(&command[1..])
        .output()
        .await
        .map_err(|e| format!("probe {:?} failed to start: {e}", command[0]))?;
    if !output.status.success() {
        return Err(format!("probe exited with {}", output.status));
    }
    let stdout = String::from_utf8_lossy(&output.stdout);
    parse_probe_line(stdout.lines().next().unwrap_or(""))
}

fn parse_probe_line(line: &str) -> Result<(f64, f64), String> {
    let fields: Vec<&str> = line
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .collect();
    if fields.len() < 2 {
        return Err(format!("unparsable probe output: {line:?}"));
    }
    let util: f64 = fields[0]
        .parse()
        .map_err(|_| format!("unparsable utilization: {:?}", fields[0]))?;
    let mem: f64 = fields[1]
        .parse()
        .map_err(|_| format!("unparsable memory: {:?}", fields[1]))?;
    Ok((util, mem))
}
