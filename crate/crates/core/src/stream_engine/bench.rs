use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{run_streaming, StreamConfig, StreamError};
use crate::datapath::CompiledForest;
use crate::quantize::{pack_records, CodeVector};
use crate::scalar::Real;

pub const DEFAULT_REPEATS: usize = 10;
pub const DEFAULT_BATCHES: [usize; 6] = [1, 10, 100, 1000, 10_000, 100_000];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub batch: usize,
    pub calls: usize,
    pub repeats: usize,
    /// Inferences per second over the repeats.
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub mean_wall_s: f64,
}

/// Seeded random valid records for `cf`.
pub fn random_packed<T: Real>(cf: &CompiledForest<T>, records: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = &cf.quant;
    let vecs: Vec<CodeVector> = (0..records)
        .map(|_| CodeVector((0..q.num_features()).map(|f| rng.gen_range(0..=q.rank_count(f) as u16)).collect()))
        .collect();
    pack_records(&vecs, q)
}

/// Streams each batch size `repeats` times and summarizes throughput.
pub fn bench<T: Real>(cf: &CompiledForest<T>, batches: &[usize], repeats: usize, cfg: &StreamConfig) -> Result<Vec<BenchRow>, StreamError> {
    let repeats = repeats.max(1);
    let largest = batches.iter().copied().max().unwrap_or(0);
    let packed = random_packed(cf, largest, 0x5eed);
    let rb = cf.bytes_per_record();
    batches
        .iter()
        .map(|&batch| {
            let input = &packed[..batch * rb];
            let mut rates = Vec::with_capacity(repeats);
            let mut walls = 0.0;
            for _ in 0..repeats {
                let (_, stats) = run_streaming(cf, input, cfg)?;
                rates.push(stats.throughput);
                walls += stats.wall_s;
            }
            let n = rates.len() as f64;
            let mean = rates.iter().sum::<f64>() / n;
            let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
            Ok(BenchRow {
                batch,
                calls: cfg.calls_for(batch, rb),
                repeats,
                mean,
                std: var.sqrt(),
                min: rates.iter().copied().fold(f64::INFINITY, f64::min),
                max: rates.iter().copied().fold(0.0, f64::max),
                mean_wall_s: walls / n,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream_engine::tests::default_forest;

    #[test]
    fn one_row_per_batch() {
        let cf = default_forest();
        let rows = bench(&cf, &[1, 7, 300], 2, &StreamConfig::default()).unwrap();
        assert_eq!(rows.iter().map(|r| r.batch).collect::<Vec<_>>(), vec![1, 7, 300]);
        assert!(rows.iter().all(|r| r.repeats == 2 && r.min <= r.mean && r.mean <= r.max));
        assert_eq!(DEFAULT_REPEATS, 10);
    }

    #[test]
    fn amortization() {
        let cf = default_forest();
        let rows = bench(&cf, &[1, 10_000], 3, &StreamConfig::default()).unwrap();
        assert!(rows[1].mean > rows[0].mean);
    }
}
