//! Throughput and latency models of the streaming and memory-mapped
//! datapath: a closed-form steady-state model, an event-driven token
//! simulation, and a two-parameter calibration against measured points.

mod calibrate;
mod cycle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

pub use calibrate::{calibrate, calibrate_with, Calibration, Residual, MEASURED_FPGA_LADDER};
pub use cycle::{cycle_sim, mm_phases, mm_schedule, stream_stages, tandem, MmPhases, MmSchedule, Stage, StageUtil};

#[derive(Debug, Error, PartialEq)]
pub enum PerfError {
    #[error("invalid perf config: {0}")]
    Config(String),
    #[error("batch must be at least 1")]
    EmptyBatch,
    #[error("batch {0} exceeds the simulation limit of {max}", max = cycle::MAX_SIM_BATCH)]
    BatchTooLarge(usize),
    #[error("calibration: {0}")]
    Fit(String),
    #[error("config json: {0}")]
    Json(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound = "T: Real")]
pub struct PerfConfig<T> {
    pub clock_hz: T,
    /// Cycles per accepted input.
    pub ii: u32,
    /// Stages from input transfer to output transfer (8 compute + 2 transfer).
    pub pipeline_depth: u32,
    pub fifo_depth: u32,
    /// Extra FIFO stages on the output path, at most `fifo_depth`.
    pub fifo_extra: u32,
    pub bytes_in: u32,
    pub bytes_out: u32,
    /// Effective host-to-card and card-to-host bandwidths, bytes/s.
    pub bw_h2c: T,
    pub bw_c2h: T,
    /// Theoretical link bandwidth, bytes/s.
    pub link_bw: T,
    /// Fixed cost of one write+read call round trip, seconds.
    pub call_overhead_s: T,
    pub max_call_bytes: usize,
}

impl<T: Real> Default for PerfConfig<T> {
    fn default() -> Self {
        PerfConfig {
            clock_hz: T::lit(250e6),
            ii: 1,
            pipeline_depth: 10,
            fifo_depth: 16,
            fifo_extra: 0,
            bytes_in: 64,
            bytes_out: 8,
            bw_h2c: T::lit(16e9),
            bw_c2h: T::lit(16e9),
            link_bw: T::lit(16e9),
            call_overhead_s: T::zero(),
            max_call_bytes: 1 << 20,
        }
    }
}

pub const MEASURED_BW: f64 = 4.21e9;
pub const MEASURED_CALL_OVERHEAD_S: f64 = 455e-6;
pub const LOOPBACK_BW: f64 = 5.5e9;

impl<T: Real> PerfConfig<T> {
    /// Effective bandwidth and call overhead measured on the XGBoost path.
    pub fn measured() -> Self {
        PerfConfig {
            bw_h2c: T::lit(MEASURED_BW),
            bw_c2h: T::lit(MEASURED_BW),
            call_overhead_s: T::lit(MEASURED_CALL_OVERHEAD_S),
            ..Default::default()
        }
    }

    /// Effective bandwidth of the plain loopback design.
    pub fn loopback() -> Self {
        PerfConfig {
            bw_h2c: T::lit(LOOPBACK_BW),
            bw_c2h: T::lit(LOOPBACK_BW),
            call_overhead_s: T::lit(MEASURED_CALL_OVERHEAD_S),
            ..Default::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self, PerfError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| PerfError::Json(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PerfError> {
        let pos = |name: &str, v: T| {
            if v.is_finite() && v > T::zero() {
                Ok(())
            } else {
                Err(PerfError::Config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        pos("clock_hz", self.clock_hz)?;
        pos("bw_h2c", self.bw_h2c)?;
        pos("bw_c2h", self.bw_c2h)?;
        pos("link_bw", self.link_bw)?;
        if !(self.call_overhead_s.is_finite() && self.call_overhead_s >= T::zero()) {
            return Err(PerfError::Config("call_overhead_s must be finite and non-negative".into()));
        }
        if self.ii == 0 || self.pipeline_depth < 3 || self.bytes_in == 0 || self.bytes_out == 0 || self.fifo_depth == 0 {
            return Err(PerfError::Config(
                "ii, fifo_depth, bytes_in and bytes_out must be at least 1, pipeline_depth at least 3".into(),
            ));
        }
        if self.fifo_extra > self.fifo_depth {
            return Err(PerfError::Config(format!(
                "fifo_extra {} exceeds fifo_depth {}",
                self.fifo_extra, self.fifo_depth
            )));
        }
        if (self.max_call_bytes as u64) < u64::from(self.bytes_in) {
            return Err(PerfError::Config("max_call_bytes is smaller than one record".into()));
        }
        Ok(())
    }

    pub fn compute_rate(&self) -> T {
        self.clock_hz / T::from_u32(self.ii).expect("u32 fits")
    }

    pub fn h2c_rate(&self) -> T {
        self.bw_h2c / T::from_u32(self.bytes_in).expect("u32 fits")
    }

    pub fn c2h_rate(&self) -> T {
        self.bw_c2h / T::from_u32(self.bytes_out).expect("u32 fits")
    }

    /// Steady-state ceiling `min(clock/ii, bw_h2c/bytes_in, bw_c2h/bytes_out)`.
    pub fn ceiling(&self) -> T {
        self.compute_rate().min(self.h2c_rate()).min(self.c2h_rate())
    }

    /// Pipeline depth including FIFO stages.
    pub fn total_depth(&self) -> u32 {
        self.pipeline_depth + self.fifo_extra
    }

    pub fn records_per_call(&self) -> usize {
        (self.max_call_bytes / self.bytes_in as usize).max(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bottleneck {
    Compute,
    H2c,
    C2h,
    HostCallOverhead,
}

impl std::fmt::Display for Bottleneck {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Bottleneck::Compute => "compute",
            Bottleneck::H2c => "h2c",
            Bottleneck::C2h => "c2h",
            Bottleneck::HostCallOverhead => "host_call_overhead",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(bound = "T: Real")]
pub struct PerfReport<T> {
    pub batch: usize,
    /// Inferences per second over the whole batch.
    pub throughput: T,
    pub ceiling: T,
    pub batch_time_s: T,
    pub latency_single_s: T,
    pub bottleneck: Bottleneck,
    /// Event-driven runs only.
    pub first_output_cycle: Option<T>,
    pub issue_interval_cycles: Option<T>,
    pub calls: usize,
    pub utilization: Vec<StageUtil<T>>,
    /// Memory-mapped serial and pipelined schedules for the same batch,
    /// split at the call limit.
    pub mm: Option<MmSchedule<T>>,
}

fn rate_bottleneck<T: Real>(cfg: &PerfConfig<T>) -> Bottleneck {
    let r = cfg.ceiling();
    if cfg.compute_rate() == r {
        Bottleneck::Compute
    } else if cfg.h2c_rate() == r {
        Bottleneck::H2c
    } else {
        Bottleneck::C2h
    }
}

/// `T(batch) = call_overhead + batch / R + depth / clock`; calls after the
/// first overlap with streaming.
pub fn analytic_throughput<T: Real>(cfg: &PerfConfig<T>, batch: usize) -> Result<PerfReport<T>, PerfError> {
    cfg.validate()?;
    if batch == 0 {
        return Err(PerfError::EmptyBatch);
    }
    let n = T::from_usize(batch).expect("batch fits");
    let r = cfg.ceiling();
    let stream = n / r;
    let fill = T::from_u32(cfg.total_depth()).expect("u32 fits") / cfg.clock_hz;
    let t = cfg.call_overhead_s + stream + fill;
    let bottleneck = if cfg.call_overhead_s > stream {
        Bottleneck::HostCallOverhead
    } else {
        rate_bottleneck(cfg)
    };
    Ok(PerfReport {
        batch,
        throughput: n / t,
        ceiling: r,
        batch_time_s: t,
        latency_single_s: analytic_latency(cfg).end_to_end_s,
        bottleneck,
        first_output_cycle: None,
        issue_interval_cycles: None,
        calls: batch.div_ceil(cfg.records_per_call()),
        utilization: Vec::new(),
        mm: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(bound = "T: Real")]
pub struct Latency<T> {
    /// Input register through the last adder register.
    pub core_cycles: u32,
    pub core_s: T,
    /// Call round trip + record transfers + core + FIFO stages.
    pub end_to_end_s: T,
}

/// Core latency counts the tree stage, the adder stages and the output
/// register: `pipeline_depth - 2 + 1` cycles (9 at the default depth).
pub fn analytic_latency<T: Real>(cfg: &PerfConfig<T>) -> Latency<T> {
    let core_cycles = cfg.pipeline_depth - 2 + 1;
    let cyc = |c: u32| T::from_u32(c).expect("u32 fits") / cfg.clock_hz;
    let core_s = cyc(core_cycles);
    let transfer = T::from_u32(cfg.bytes_in).expect("u32 fits") / cfg.bw_h2c + T::from_u32(cfg.bytes_out).expect("u32 fits") / cfg.bw_c2h;
    Latency {
        core_cycles,
        core_s,
        end_to_end_s: cfg.call_overhead_s + transfer + core_s + cyc(cfg.fifo_extra),
    }
}

/// One row per batch size: `(batch, predicted, measured)` as CSV.
pub fn sweep_csv<T: Real>(cfg: &PerfConfig<T>, batches: &[usize], measured: &[(usize, T)]) -> Result<String, PerfError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| PerfError::Config(e.to_string());
    w.write_record(["batch", "predicted", "measured", "bottleneck"]).map_err(io)?;
    for &b in batches {
        let rep = analytic_throughput(cfg, b)?;
        let m = measured.iter().find(|(mb, _)| *mb == b).map(|(_, t)| t.to_string()).unwrap_or_default();
        w.write_record([b.to_string(), rep.throughput.to_string(), m, rep.bottleneck.to_string()])
            .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| PerfError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_ceiling_is_clock() {
        let cfg = PerfConfig::<f64>::default();
        assert_eq!(cfg.ceiling(), 250e6);
        let rep = analytic_throughput(&cfg, 100_000).unwrap();
        assert_eq!(rep.ceiling, 250e6);
        assert!(rep.throughput <= rep.ceiling);
        assert_eq!(rep.bottleneck, Bottleneck::Compute);
    }

    #[test]
    fn measured_bandwidth() {
        let cfg = PerfConfig::<f64> {
            bw_h2c: 4.21e9,
            bw_c2h: 4.21e9,
            ..Default::default()
        };
        let rep = analytic_throughput(&cfg, 100_000).unwrap();
        assert!((rep.throughput / 65.8e6 - 1.0).abs() < 0.01, "{}", rep.throughput);
        assert_eq!(rep.bottleneck, Bottleneck::H2c);
    }

    #[test]
    fn single_inference_overhead() {
        let rep = analytic_throughput(&PerfConfig::<f64>::measured(), 1).unwrap();
        assert!((rep.batch_time_s - 455e-6).abs() < 5e-6);
        assert!((rep.throughput / 2.2e3 - 1.0).abs() < 0.1);
        assert_eq!(rep.bottleneck, Bottleneck::HostCallOverhead);
    }

    #[test]
    fn core_latency() {
        let cfg = PerfConfig::<f64>::default();
        let l = analytic_latency(&cfg);
        assert_eq!(l.core_cycles, 9);
        assert!((l.core_s - 36e-9).abs() < 1e-18);
        let fast = PerfConfig { clock_hz: 500e6, ..cfg };
        assert!((analytic_latency(&fast).core_s - l.core_s / 2.0).abs() < 1e-18);
        let m = analytic_latency(&PerfConfig::<f64>::measured());
        assert!(m.end_to_end_s > 1e4 * m.core_s);
    }

    #[test]
    fn monotone_in_batch_and_bandwidth() {
        let cfg = PerfConfig::<f64>::measured();
        let mut last = 0.0;
        for b in [1, 2, 10, 100, 1000, 10_000, 100_000, 1_000_000] {
            let t = analytic_throughput(&cfg, b).unwrap().throughput;
            assert!(t >= last);
            last = t;
        }
        let mut last = 0.0;
        for bw in [1e9, 2e9, 4e9, 8e9, 16e9, 32e9] {
            let t = analytic_throughput(&PerfConfig { bw_h2c: bw, ..cfg }, 10_000).unwrap().throughput;
            assert!(t >= last);
            last = t;
        }
    }

    #[test]
    fn f32_config() {
        let cfg = PerfConfig::<f32>::default();
        assert_eq!(cfg.ceiling(), 250e6);
    }

    #[test]
    fn config_json() {
        let cfg = PerfConfig::<f64>::from_json(r#"{"bw_h2c": 4.21e9, "ii": 2}"#).unwrap();
        assert_eq!(cfg.ii, 2);
        assert_eq!(cfg.clock_hz, 250e6);
        assert_eq!(PerfConfig::<f64>::from_json(&cfg.to_json()).unwrap(), cfg);
        assert!(PerfConfig::<f64>::from_json(r#"{"ii": 0}"#).is_err());
        assert!(PerfConfig::<f64>::from_json(r#"{"fifo_extra": 17}"#).is_err());
        assert!(PerfConfig::<f64>::from_json("{").is_err());
    }

    #[test]
    fn sweep_rows() {
        let csv = sweep_csv(&PerfConfig::<f64>::measured(), &[1, 100_000], &[(1, 2.2e3)]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1,") && lines[1].contains(",2200,"));
    }
}
