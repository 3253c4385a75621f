//! Event-driven token simulation.
//!
//! Stages form a tandem line with blocking. Token `k` enters stage `j` at
//!
//! ```text
//! enter[j][k] = max(enter[j-1][k] + lat[j-1],     // done upstream
//!                   enter[j][k-1] + service[j],   // stage pacing
//!                   leave[j][k - cap[j]])         // room in the stage
//! ```
//!
//! with `leave[j][k] = enter[j+1][k]` and the sink always ready. Times are in
//! whatever unit the stage parameters use (cycles for the streaming line,
//! seconds for memory-mapped phases).

use serde::Serialize;

use super::{rate_bottleneck, Bottleneck, PerfConfig, PerfError, PerfReport};
use crate::scalar::Real;

pub const MAX_SIM_BATCH: usize = 10_000_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(bound = "T: Real")]
pub struct Stage<T> {
    pub name: String,
    pub service: T,
    pub latency: T,
    pub capacity: usize,
}

impl<T: Real> Stage<T> {
    fn new(name: impl Into<String>, service: T, latency: T, capacity: usize) -> Self {
        Stage {
            name: name.into(),
            service,
            latency,
            capacity: capacity.max(1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(bound = "T: Real")]
pub struct StageUtil<T> {
    pub name: String,
    /// Busy time over the run length.
    pub utilization: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TandemRun<T> {
    pub first_done: T,
    pub last_done: T,
    pub utilization: Vec<StageUtil<T>>,
}

/// Runs `n` tokens through `stages`. Every `per_call` tokens the source
/// waits `call_gap` after its previous admission slot before admitting the
/// next call's first token.
pub fn tandem<T: Real>(stages: &[Stage<T>], n: usize, per_call: usize, call_gap: T) -> TandemRun<T> {
    let s = stages.len();
    assert!(s > 0 && n > 0, "tandem needs stages and tokens");
    let ring = stages.iter().map(|st| st.capacity).max().unwrap_or(1) + 1;
    let mut enter = vec![T::zero(); s * ring];
    let at = |j: usize, k: usize| j * ring + k % ring;
    let last = s - 1;
    let mut first_done = T::zero();
    let mut done = T::zero();
    for k in 0..n {
        for j in 0..s {
            let st = &stages[j];
            let mut t = if j == 0 {
                if k % per_call.max(1) == 0 {
                    if k == 0 {
                        call_gap
                    } else {
                        enter[at(0, k - 1)] + st.service + call_gap
                    }
                } else {
                    T::zero()
                }
            } else {
                enter[at(j - 1, k)] + stages[j - 1].latency
            };
            if k >= 1 {
                t = t.max(enter[at(j, k - 1)] + st.service);
            }
            if k >= st.capacity {
                let prev = k - st.capacity;
                let leave = if j == last {
                    enter[at(j, prev)] + st.latency
                } else {
                    enter[at(j + 1, prev)]
                };
                t = t.max(leave);
            }
            enter[at(j, k)] = t;
        }
        done = enter[at(last, k)] + stages[last].latency;
        if k == 0 {
            first_done = done;
        }
    }
    let nn = T::from_usize(n).expect("n fits");
    let utilization = stages
        .iter()
        .map(|st| StageUtil {
            name: st.name.clone(),
            utilization: if done > T::zero() {
                (nn * st.service / done).min(T::one())
            } else {
                T::zero()
            },
        })
        .collect();
    TandemRun {
        first_done,
        last_done: done,
        utilization,
    }
}

/// Streaming line in cycles: input transfer, `pipeline_depth - 2` compute
/// stages (the first paced by `ii`), the output FIFO, output transfer.
pub fn stream_stages<T: Real>(cfg: &PerfConfig<T>) -> Vec<Stage<T>> {
    let one = T::one();
    let xfer = |bytes: u32, bw: T| (T::from_u32(bytes).expect("u32 fits") * cfg.clock_hz / bw).max(one);
    let h2c = xfer(cfg.bytes_in, cfg.bw_h2c);
    let c2h = xfer(cfg.bytes_out, cfg.bw_c2h);
    let mut st = vec![Stage::new("xdma_in", h2c, h2c, 1)];
    for i in 1..=cfg.pipeline_depth - 2 {
        let service = if i == 1 { T::from_u32(cfg.ii).expect("u32 fits") } else { one };
        st.push(Stage::new(format!("compute_{i}"), service, one, 1));
    }
    st.push(Stage::new(
        "fifo",
        T::zero(),
        T::from_u32(cfg.fifo_extra).expect("u32 fits"),
        cfg.fifo_depth as usize,
    ));
    st.push(Stage::new("xdma_out", c2h, c2h, 1));
    st
}

/// Per-batch phase times of the memory-mapped mode, seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(bound = "T: Real")]
pub struct MmPhases<T> {
    pub copy_in_s: T,
    pub compute_s: T,
    pub copy_out_s: T,
}

impl<T: Real> MmPhases<T> {
    pub fn total(&self) -> T {
        self.copy_in_s + self.compute_s + self.copy_out_s
    }
}

/// Phase times for `total` records moved in batches of `batch`. Each copy is
/// one call and pays half the call round trip.
pub fn mm_phases<T: Real>(cfg: &PerfConfig<T>, total: usize, batch: usize) -> Vec<MmPhases<T>> {
    let half = cfg.call_overhead_s / T::lit(2.0);
    let fill = T::from_u32(cfg.pipeline_depth - 2).expect("u32 fits");
    let ii = T::from_u32(cfg.ii).expect("u32 fits");
    (0..total.div_ceil(batch.max(1)))
        .map(|k| {
            let b = T::from_usize(batch.min(total - k * batch)).expect("batch fits");
            MmPhases {
                copy_in_s: half + b * T::from_u32(cfg.bytes_in).expect("u32 fits") / cfg.bw_h2c,
                compute_s: (b * ii + fill) / cfg.clock_hz,
                copy_out_s: half + b * T::from_u32(cfg.bytes_out).expect("u32 fits") / cfg.bw_c2h,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(bound = "T: Real")]
pub struct MmSchedule<T> {
    pub batches: usize,
    pub serial_s: T,
    pub pipelined_s: T,
}

impl<T: Real> MmSchedule<T> {
    pub fn speedup(&self) -> T {
        self.serial_s / self.pipelined_s
    }
}

/// Serial: phases strictly in sequence. Pipelined: copy-in, compute and
/// copy-out of consecutive batches overlap, one batch per phase.
pub fn mm_schedule<T: Real>(phases: &[MmPhases<T>]) -> MmSchedule<T> {
    let serial_s = phases.iter().map(MmPhases::total).sum();
    let mut prev = [T::zero(); 3];
    let mut prev_out = T::zero();
    let mut done = T::zero();
    for (k, p) in phases.iter().enumerate() {
        let dur = [p.copy_in_s, p.compute_s, p.copy_out_s];
        let mut enter = [T::zero(); 3];
        for j in 0..3 {
            let mut t = if j == 0 { T::zero() } else { enter[j - 1] + dur[j - 1] };
            if k > 0 {
                // the phase unit is free once the previous batch moved on
                t = t.max(if j == 2 { prev_out } else { prev[j + 1] });
            }
            enter[j] = t;
        }
        done = enter[2] + dur[2];
        prev = enter;
        prev_out = done;
    }
    MmSchedule {
        batches: phases.len(),
        serial_s,
        pipelined_s: done,
    }
}

/// Event-driven run of `batch` records through the streaming line. The call
/// round trip is charged once per call; writes of later calls overlap with
/// the pipeline draining earlier ones.
pub fn cycle_sim<T: Real>(cfg: &PerfConfig<T>, batch: usize) -> Result<PerfReport<T>, PerfError> {
    cfg.validate()?;
    if batch == 0 {
        return Err(PerfError::EmptyBatch);
    }
    if batch > MAX_SIM_BATCH {
        return Err(PerfError::BatchTooLarge(batch));
    }
    let stages = stream_stages(cfg);
    let per_call = cfg.records_per_call();
    let gap = cfg.call_overhead_s * cfg.clock_hz;
    let run = tandem(&stages, batch, per_call, gap);
    let n = T::from_usize(batch).expect("batch fits");
    let calls = batch.div_ceil(per_call);
    let busiest = stages.iter().map(|s| s.service).fold(T::zero(), T::max);
    let bottleneck = if T::from_usize(calls).expect("calls fit") * gap > n * busiest {
        Bottleneck::HostCallOverhead
    } else {
        rate_bottleneck(cfg)
    };
    let mut rep = PerfReport {
        batch,
        throughput: n * cfg.clock_hz / run.last_done,
        ceiling: cfg.ceiling(),
        batch_time_s: run.last_done / cfg.clock_hz,
        latency_single_s: run.first_done / cfg.clock_hz,
        bottleneck,
        first_output_cycle: Some(run.first_done),
        issue_interval_cycles: None,
        calls,
        utilization: run.utilization,
        mm: Some(mm_schedule(&mm_phases(cfg, batch, per_call.min(batch)))),
    };
    if batch > 1 {
        rep.issue_interval_cycles = Some((run.last_done - run.first_done) / (n - T::one()));
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unconstrained() -> PerfConfig<f64> {
        PerfConfig {
            bw_h2c: 1e15,
            bw_c2h: 1e15,
            ..Default::default()
        }
    }

    #[test]
    fn ideal_pipeline() {
        let cfg = unconstrained();
        let stages = stream_stages(&cfg);
        assert_eq!(stages.len(), 11);
        for n in [1usize, 2, 5, 100] {
            let run = tandem(&stages, n, usize::MAX, 0.0);
            assert_eq!(run.first_done, 10.0);
            assert_eq!(run.last_done, 10.0 + (n - 1) as f64);
        }
    }

    #[test]
    fn initiation_interval_paces_output() {
        for ii in [1u32, 2, 4] {
            for fifo_depth in [1u32, 4, 16] {
                let cfg = PerfConfig {
                    ii,
                    fifo_depth,
                    ..unconstrained()
                };
                let rep = cycle_sim(&cfg, 5000).unwrap();
                assert_eq!(rep.first_output_cycle, Some(10.0));
                assert_eq!(rep.issue_interval_cycles, Some(f64::from(ii)));
                assert!((rep.throughput * rep.batch_time_s - 5000.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fifo_stages_add_latency_only() {
        let base = cycle_sim(&unconstrained(), 2000).unwrap();
        for extra in 0..=16 {
            let cfg = PerfConfig {
                fifo_extra: extra,
                ..unconstrained()
            };
            let rep = cycle_sim(&cfg, 2000).unwrap();
            assert_eq!(rep.first_output_cycle.unwrap() - base.first_output_cycle.unwrap(), f64::from(extra));
            assert_eq!(rep.issue_interval_cycles, base.issue_interval_cycles);
        }
    }

    #[test]
    fn bandwidth_bound_matches_ceiling() {
        let cfg = PerfConfig::<f64> {
            bw_h2c: 4.21e9,
            bw_c2h: 4.21e9,
            ..Default::default()
        };
        let rep = cycle_sim(&cfg, 100_000).unwrap();
        assert!(rep.throughput <= cfg.ceiling());
        assert!((rep.throughput / cfg.ceiling() - 1.0).abs() < 1e-3);
        assert_eq!(rep.bottleneck, Bottleneck::H2c);
    }

    #[test]
    fn slow_output_backpressure() {
        // output slower than input: the FIFO fills and blocking holds the input back
        let cfg = PerfConfig::<f64> {
            bw_c2h: 0.5e9,
            fifo_depth: 2,
            ..Default::default()
        };
        let rep = cycle_sim(&cfg, 1000).unwrap();
        assert!((rep.issue_interval_cycles.unwrap() - 4.0).abs() < 1e-9);
        assert_eq!(rep.bottleneck, Bottleneck::C2h);
    }

    #[test]
    fn per_call_overhead() {
        let cfg = PerfConfig::<f64> {
            call_overhead_s: 1e-4,
            max_call_bytes: 64 * 100,
            ..unconstrained()
        };
        let rep = cycle_sim(&cfg, 1000).unwrap();
        assert_eq!(rep.calls, 10);
        // ten gaps of 25000 cycles on the input side
        assert!(rep.batch_time_s * 250e6 >= 10.0 * 25_000.0 + 999.0);
    }

    #[test]
    fn mm_speedup_bounds() {
        let eq = vec![
            MmPhases {
                copy_in_s: 1.0,
                compute_s: 1.0,
                copy_out_s: 1.0
            };
            200
        ];
        let s = mm_schedule(&eq);
        assert_eq!(s.serial_s, 600.0);
        assert_eq!(s.pipelined_s, 202.0);
        assert!(s.speedup() <= 3.0 && s.speedup() > 0.95 * 3.0);
        let one = mm_schedule(&eq[..1]);
        assert_eq!(one.serial_s, one.pipelined_s);
        let skew = vec![
            MmPhases {
                copy_in_s: 1.0,
                compute_s: 5.0,
                copy_out_s: 1.0
            };
            50
        ];
        assert!(mm_schedule(&skew).speedup() < 1.5);
    }

    #[test]
    fn rejects_bad_batches() {
        let cfg = PerfConfig::<f64>::default();
        assert_eq!(cycle_sim(&cfg, 0), Err(PerfError::EmptyBatch));
        assert!(cycle_sim(&cfg, MAX_SIM_BATCH + 1).is_err());
    }
}
