//! Memory-mapped execution: copy-in, compute and copy-out per batch, either
//! strictly in sequence or overlapped three deep on consecutive batches.

use std::sync::mpsc::sync_channel;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{check_input, pack_results, RunStats, StreamError};
use crate::datapath::{score, CompiledForest, Fixed};
use crate::quantize::unpack_record;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MmMode {
    Serial,
    Pipelined,
}

/// Injected phase costs. All zero by default.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseDelays {
    pub copy_in_per_byte: f64,
    pub compute_per_record: f64,
    pub copy_out_per_byte: f64,
}

fn pause(secs: f64) {
    if secs > 0.0 {
        thread::sleep(Duration::from_secs_f64(secs));
    }
}

fn copy_in(batch: &[u8], d: &PhaseDelays) -> Vec<u8> {
    let buf = batch.to_vec();
    pause(d.copy_in_per_byte * buf.len() as f64);
    buf
}

fn compute<T: Real>(cf: &CompiledForest<T>, buf: &[u8], first: usize, d: &PhaseDelays) -> Result<Vec<Fixed>, StreamError> {
    let out = buf
        .chunks_exact(cf.bytes_per_record())
        .enumerate()
        .map(|(i, r)| {
            unpack_record(r, &cf.quant)
                .map(|v| score(cf, &v))
                .map_err(|source| StreamError::Record { index: first + i, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    pause(d.compute_per_record * out.len() as f64);
    Ok(out)
}

fn copy_out(margins: Vec<Fixed>, dst: &mut Vec<Fixed>, d: &PhaseDelays) {
    pause(d.copy_out_per_byte * (margins.len() * super::RESULT_BYTES) as f64);
    dst.extend(margins);
}

/// Runs `packed` in batches of `batch` records. Both modes return the same
/// bytes as the streaming runtime; only timing differs.
pub fn run_memory_mapped<T: Real>(
    cf: &CompiledForest<T>,
    packed: &[u8],
    batch: usize,
    mode: MmMode,
    delays: &PhaseDelays,
) -> Result<(Vec<u8>, RunStats), StreamError> {
    if batch == 0 {
        return Err(StreamError::Config("batch must be at least 1 record".into()));
    }
    let total = check_input(cf, packed)?;
    let chunk = batch * cf.bytes_per_record();
    let t0 = Instant::now();
    let mut margins = Vec::with_capacity(total);
    match mode {
        MmMode::Serial => {
            for (k, b) in packed.chunks(chunk).enumerate() {
                let buf = copy_in(b, delays);
                let m = compute(cf, &buf, k * batch, delays)?;
                copy_out(m, &mut margins, delays);
            }
        }
        MmMode::Pipelined => {
            // rendezvous hand-offs keep at most one batch in each phase
            let (in_tx, in_rx) = sync_channel::<(usize, Vec<u8>)>(0);
            let (out_tx, out_rx) = sync_channel::<Vec<Fixed>>(0);
            let computed = thread::scope(|s| {
                s.spawn(move || {
                    for (k, b) in packed.chunks(chunk).enumerate() {
                        if in_tx.send((k, copy_in(b, delays))).is_err() {
                            return;
                        }
                    }
                });
                let cmp = s.spawn(move || -> Result<(), StreamError> {
                    for (k, buf) in in_rx {
                        let m = compute(cf, &buf, k * batch, delays)?;
                        if out_tx.send(m).is_err() {
                            return Err(StreamError::Role("copy-out"));
                        }
                    }
                    Ok(())
                });
                for m in out_rx {
                    copy_out(m, &mut margins, delays);
                }
                cmp.join().expect("compute thread")
            });
            computed?;
        }
    }
    let mut stats = RunStats {
        records_in: total,
        records_out: margins.len(),
        ..Default::default()
    };
    stats.finish(t0.elapsed());
    Ok((pack_results(&margins), stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream_engine::tests::default_forest;
    use crate::stream_engine::{random_packed, score_sequential};

    #[test]
    fn modes_agree() {
        let cf = default_forest();
        let packed = random_packed(&cf, 103, 9);
        let want = score_sequential(&cf, &packed).unwrap();
        for batch in [1, 10, 103, 500] {
            for mode in [MmMode::Serial, MmMode::Pipelined] {
                let (out, stats) = run_memory_mapped(&cf, &packed, batch, mode, &PhaseDelays::default()).unwrap();
                assert_eq!(out, want, "batch {batch} {mode:?}");
                assert_eq!(stats.records_out, 103);
            }
        }
    }

    #[test]
    fn pipelining_overlaps_phases() {
        let cf = default_forest();
        let packed = random_packed(&cf, 40, 2);
        // 10 records per batch: 6.4 ms in, 10 ms compute, 4 ms out
        let d = PhaseDelays {
            copy_in_per_byte: 1e-5,
            compute_per_record: 1e-3,
            copy_out_per_byte: 5e-5,
        };
        let (_, serial) = run_memory_mapped(&cf, &packed, 10, MmMode::Serial, &d).unwrap();
        let (_, piped) = run_memory_mapped(&cf, &packed, 10, MmMode::Pipelined, &d).unwrap();
        assert!(piped.wall_s < serial.wall_s, "{} vs {}", piped.wall_s, serial.wall_s);
    }

    #[test]
    fn zero_batch_rejected() {
        let cf = default_forest();
        assert!(run_memory_mapped(&cf, &[], 0, MmMode::Serial, &PhaseDelays::default()).is_err());
    }
}
