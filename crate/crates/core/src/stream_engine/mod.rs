//! Host-side streaming runtime.
//!
//! A sender splits the packed input into calls of at most `max_call_bytes`
//! and pushes records into a bounded input queue; a worker scores one record
//! per step and pushes margins into a bounded FIFO; a receiver drains the
//! FIFO into the result buffer. All queues block when full.
//!
//! Result wire format: one 8-byte little-endian two's-complement margin per
//! record (24 fractional bits), eight per 64-byte word, tail word zero-padded.

mod bench;
mod mmap;

use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datapath::{score, CompiledForest, Fixed};
use crate::quantize::{unpack_record, FormatError, WORD_BYTES};
use crate::scalar::Real;

pub use bench::{bench, random_packed, BenchRow, DEFAULT_BATCHES, DEFAULT_REPEATS};
pub use mmap::{run_memory_mapped, MmMode, PhaseDelays};

pub const RESULT_BYTES: usize = 8;
pub const RESULTS_PER_WORD: usize = WORD_BYTES / RESULT_BYTES;
pub const DEFAULT_FIFO_DEPTH: usize = 16;
pub const DEFAULT_MAX_CALL_BYTES: usize = 1 << 20;

#[derive(Debug, Error, PartialEq)]
pub enum StreamError {
    #[error("invalid stream config: {0}")]
    Config(String),
    #[error("input of {len} bytes is not a whole number of {record}-byte records")]
    RecordLength { len: usize, record: usize },
    #[error("record {index}: {source}")]
    Record { index: usize, source: FormatError },
    #[error("result stream of {len} bytes cannot hold {count} results")]
    ResultLength { len: usize, count: usize },
    #[error("pipeline role `{0}` stopped early")]
    Role(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    /// Output FIFO depth in records.
    pub fifo_depth: usize,
    pub input_queue_depth: usize,
    pub max_call_bytes: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            fifo_depth: DEFAULT_FIFO_DEPTH,
            input_queue_depth: DEFAULT_FIFO_DEPTH,
            max_call_bytes: DEFAULT_MAX_CALL_BYTES,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self, record_bytes: usize) -> Result<(), StreamError> {
        if self.fifo_depth == 0 || self.input_queue_depth == 0 {
            return Err(StreamError::Config("queue depths must be at least 1".into()));
        }
        if self.max_call_bytes == 0 || !self.max_call_bytes.is_multiple_of(WORD_BYTES) {
            return Err(StreamError::Config(format!(
                "max_call_bytes {} is not a positive multiple of {WORD_BYTES}",
                self.max_call_bytes
            )));
        }
        if self.max_call_bytes < record_bytes {
            return Err(StreamError::Config(format!(
                "max_call_bytes {} is below one {record_bytes}-byte record",
                self.max_call_bytes
            )));
        }
        Ok(())
    }

    pub fn records_per_call(&self, record_bytes: usize) -> usize {
        self.max_call_bytes / record_bytes
    }

    /// Records per queue transfer.
    pub fn burst_records(&self, record_bytes: usize) -> usize {
        self.fifo_depth
            .min(self.input_queue_depth)
            .min(self.records_per_call(record_bytes))
            .max(1)
    }

    /// Number of write/read calls needed for `records`.
    pub fn calls_for(&self, records: usize, record_bytes: usize) -> usize {
        records.div_ceil(self.records_per_call(record_bytes))
    }
}

/// Timestamps are seconds since the sender started.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CallStats {
    pub records: usize,
    pub write_start: f64,
    pub write_end: f64,
    /// Receiver took the call's last result.
    pub read_end: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunStats {
    pub records_in: usize,
    pub records_out: usize,
    /// Sender start to receiver completion.
    pub wall_s: f64,
    pub throughput: f64,
    pub first_result: f64,
    pub sender_done: f64,
    pub calls: Vec<CallStats>,
}

impl RunStats {
    fn finish(&mut self, wall: Duration) {
        self.wall_s = wall.as_secs_f64();
        self.throughput = if self.wall_s > 0.0 { self.records_out as f64 / self.wall_s } else { 0.0 };
    }

    /// The receiver saw output before the sender finished writing.
    pub fn overlapped(&self) -> bool {
        self.records_out > 0 && self.first_result < self.sender_done
    }
}

/// Packs margins into the result wire format.
pub fn pack_results(margins: &[Fixed]) -> Vec<u8> {
    let words = margins.len().div_ceil(RESULTS_PER_WORD);
    let mut out = vec![0u8; words * WORD_BYTES];
    for (m, slot) in margins.iter().zip(out.chunks_exact_mut(RESULT_BYTES)) {
        slot.copy_from_slice(&m.to_le_bytes());
    }
    out
}

/// Reads `count` margins back; the stream must be exactly the padded length.
pub fn decode_results(bytes: &[u8], count: usize) -> Result<Vec<Fixed>, StreamError> {
    if bytes.len() != count.div_ceil(RESULTS_PER_WORD) * WORD_BYTES {
        return Err(StreamError::ResultLength { len: bytes.len(), count });
    }
    Ok(bytes
        .chunks_exact(RESULT_BYTES)
        .take(count)
        .map(|c| Fixed::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn check_input<T: Real>(cf: &CompiledForest<T>, packed: &[u8]) -> Result<usize, StreamError> {
    let record = cf.bytes_per_record();
    if !packed.len().is_multiple_of(record) {
        return Err(StreamError::RecordLength { len: packed.len(), record });
    }
    Ok(packed.len() / record)
}

/// Scores records one after another; the oracle for every runtime mode.
pub fn score_sequential<T: Real>(cf: &CompiledForest<T>, packed: &[u8]) -> Result<Vec<u8>, StreamError> {
    check_input(cf, packed)?;
    let margins = packed
        .chunks_exact(cf.bytes_per_record())
        .enumerate()
        .map(|(index, r)| {
            unpack_record(r, &cf.quant)
                .map(|v| score(cf, &v))
                .map_err(|source| StreamError::Record { index, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(pack_results(&margins))
}

enum Out {
    Margins(Vec<Fixed>),
    Bad(usize, FormatError),
}

fn sender<'a>(packed: &'a [u8], record: usize, per_call: usize, burst: usize, tx: SyncSender<&'a [u8]>, t0: Instant) -> (Vec<(f64, f64)>, f64) {
    let mut calls = Vec::new();
    for call in packed.chunks(per_call * record) {
        let start = t0.elapsed().as_secs_f64();
        for b in call.chunks(burst * record) {
            if tx.send(b).is_err() {
                return (calls, t0.elapsed().as_secs_f64());
            }
        }
        calls.push((start, t0.elapsed().as_secs_f64()));
    }
    (calls, t0.elapsed().as_secs_f64())
}

fn worker<T: Real>(cf: &CompiledForest<T>, rx: Receiver<&[u8]>, tx: SyncSender<Out>) {
    let mut index = 0;
    for b in rx {
        let mut margins = Vec::with_capacity(b.len() / cf.bytes_per_record());
        for r in b.chunks_exact(cf.bytes_per_record()) {
            match unpack_record(r, &cf.quant) {
                Ok(v) => margins.push(score(cf, &v)),
                Err(e) => {
                    let _ = tx.send(Out::Bad(index, e));
                    return;
                }
            }
            index += 1;
        }
        if tx.send(Out::Margins(margins)).is_err() {
            return;
        }
    }
}

fn receiver(rx: Receiver<Out>, total: usize, per_call: usize, t0: Instant) -> Result<(Vec<u8>, Vec<f64>, f64), StreamError> {
    let mut buf = vec![0u8; total.div_ceil(RESULTS_PER_WORD) * WORD_BYTES];
    let mut read_ends = Vec::with_capacity(total.div_ceil(per_call.max(1)));
    let mut first = f64::INFINITY;
    let mut n = 0usize;
    for out in rx {
        match out {
            Out::Margins(ms) => {
                if n == 0 {
                    first = t0.elapsed().as_secs_f64();
                }
                for m in ms {
                    buf[n * RESULT_BYTES..(n + 1) * RESULT_BYTES].copy_from_slice(&m.to_le_bytes());
                    n += 1;
                }
                // bursts never straddle a call
                if n.is_multiple_of(per_call) || n == total {
                    read_ends.push(t0.elapsed().as_secs_f64());
                }
            }
            Out::Bad(index, source) => return Err(StreamError::Record { index, source }),
        }
    }
    if n != total {
        return Err(StreamError::Role("worker"));
    }
    Ok((buf, read_ends, first))
}

/// Streams `packed` through sender, worker and receiver threads. Output bytes
/// equal [`score_sequential`] for any valid config.
///
/// Records move in bursts of up to `min(fifo_depth, input_queue_depth)`
/// records that never cross a call boundary; each queue holds at most its
/// depth in records.
pub fn run_streaming<T: Real>(cf: &CompiledForest<T>, packed: &[u8], cfg: &StreamConfig) -> Result<(Vec<u8>, RunStats), StreamError> {
    let record = cf.bytes_per_record();
    cfg.validate(record)?;
    let total = check_input(cf, packed)?;
    let per_call = cfg.records_per_call(record);
    let burst = cfg.burst_records(record);

    let (in_tx, in_rx) = sync_channel::<&[u8]>(cfg.input_queue_depth / burst);
    let (fifo_tx, fifo_rx) = sync_channel::<Out>(cfg.fifo_depth / burst);
    let t0 = Instant::now();
    let (sent, received) = thread::scope(|s| {
        let snd = s.spawn(move || sender(packed, record, per_call, burst, in_tx, t0));
        let wrk = s.spawn(move || worker(cf, in_rx, fifo_tx));
        let rcv = s.spawn(move || receiver(fifo_rx, total, per_call, t0));
        let received = rcv.join().expect("receiver thread");
        wrk.join().expect("worker thread");
        (snd.join().expect("sender thread"), received)
    });
    let wall = t0.elapsed();
    let (buf, read_ends, first) = received?;
    let (writes, sender_done) = sent;

    let mut stats = RunStats {
        records_in: total,
        records_out: total,
        first_result: if total == 0 { 0.0 } else { first },
        sender_done,
        calls: writes
            .iter()
            .zip(&read_ends)
            .enumerate()
            .map(|(k, (&(write_start, write_end), &read_end))| CallStats {
                records: per_call.min(total - k * per_call),
                write_start,
                write_end,
                read_end,
            })
            .collect(),
        ..Default::default()
    };
    stats.finish(wall);
    Ok((buf, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapath::compile_forest;
    use crate::model_ir::{canonicalize, gen_synthetic, SyntheticSpec};
    use crate::quantize::build_quant_spec;

    pub(crate) fn default_forest() -> CompiledForest<f64> {
        let cf = canonicalize(&gen_synthetic::<f64>(&SyntheticSpec::default()), 3).unwrap();
        let q = build_quant_spec(&cf, 4).unwrap();
        compile_forest(&cf, &q).unwrap()
    }

    #[test]
    fn result_packing() {
        let bytes = pack_results(&[Fixed(1), Fixed(-1)]);
        assert_eq!(bytes.len(), 64);
        assert_eq!(bytes[0], 1);
        assert_eq!(&bytes[8..16], &[0xFF; 8]);
        assert!(bytes[16..].iter().all(|&b| b == 0));
        assert_eq!(pack_results(&[Fixed(3); 9]).len(), 128);
        assert_eq!(decode_results(&bytes, 2).unwrap(), vec![Fixed(1), Fixed(-1)]);
        assert!(decode_results(&bytes, 9).is_err());
    }

    #[test]
    fn one_record() {
        let cf = default_forest();
        let packed = random_packed(&cf, 1, 3);
        let (out, stats) = run_streaming(&cf, &packed, &StreamConfig::default()).unwrap();
        assert_eq!(out, score_sequential(&cf, &packed).unwrap());
        assert_eq!((stats.records_in, stats.records_out, stats.calls.len()), (1, 1, 1));
    }

    #[test]
    fn call_splitting() {
        let cfg = StreamConfig::default();
        assert_eq!(cfg.records_per_call(64), 16384);
        assert_eq!(cfg.calls_for(100_000, 64), 7);
        assert_eq!(cfg.calls_for(15_000, 64), 1);
        let cf = default_forest();
        let small = StreamConfig {
            max_call_bytes: 640,
            fifo_depth: 1,
            input_queue_depth: 1,
        };
        let packed = random_packed(&cf, 95, 4);
        let (out, stats) = run_streaming(&cf, &packed, &small).unwrap();
        assert_eq!(out, score_sequential(&cf, &packed).unwrap());
        assert_eq!(stats.calls.len(), 10);
        assert_eq!(stats.calls.last().unwrap().records, 5);
        assert!(stats.overlapped());
    }

    #[test]
    fn rejects_bad_input() {
        let cf = default_forest();
        let cfg = StreamConfig::default();
        assert!(matches!(run_streaming(&cf, &[0u8; 65], &cfg), Err(StreamError::RecordLength { .. })));
        let bad = StreamConfig { fifo_depth: 0, ..cfg };
        assert!(matches!(run_streaming(&cf, &[0u8; 64], &bad), Err(StreamError::Config(_))));
        let bad = StreamConfig { max_call_bytes: 100, ..cfg };
        assert!(run_streaming(&cf, &[0u8; 64], &bad).is_err());
        let mut packed = random_packed(&cf, 40, 5);
        packed[20 * 64 + 63] = 0xFF;
        assert!(matches!(run_streaming(&cf, &packed, &cfg), Err(StreamError::Record { index: 20, .. })));
    }

    #[test]
    fn bursts_fit_queues_and_calls() {
        let cfg = StreamConfig::default();
        assert_eq!(cfg.burst_records(64), 16);
        assert_eq!(StreamConfig { fifo_depth: 4, ..cfg }.burst_records(64), 4);
        assert_eq!(StreamConfig { fifo_depth: 1, ..cfg }.burst_records(64), 1);
        assert_eq!(StreamConfig { max_call_bytes: 192, ..cfg }.burst_records(64), 3);
        let cf = default_forest();
        for fifo_depth in [1, 5, 16, 40] {
            let c = StreamConfig {
                fifo_depth,
                input_queue_depth: 7,
                max_call_bytes: 64 * 11,
            };
            let packed = random_packed(&cf, 100, 6);
            let (out, stats) = run_streaming(&cf, &packed, &c).unwrap();
            assert_eq!(out, score_sequential(&cf, &packed).unwrap());
            assert_eq!(stats.calls.len(), 10);
            let mut bad = packed.clone();
            bad[57 * 64 + 63] = 0xFF;
            assert!(matches!(run_streaming(&cf, &bad, &c), Err(StreamError::Record { index: 57, .. })));
        }
    }

    #[test]
    fn empty_input() {
        let cf = default_forest();
        let (out, stats) = run_streaming(&cf, &[], &StreamConfig::default()).unwrap();
        assert!(out.is_empty());
        assert_eq!(stats.records_out, 0);
    }
}
