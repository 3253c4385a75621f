use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Forest, ModelMeta, Node, Tree};
use crate::scalar::Real;

/// Parameters of the synthetic model generator. Defaults describe a
/// 100-tree, depth-3 model over 1146 raw features of which 112 are used.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub trees: usize,
    pub depth: usize,
    pub raw_features: usize,
    /// Distinct raw features the splits draw from (clamped to what fits).
    pub used_features: usize,
    /// Upper bound on distinct thresholds per feature.
    pub thresholds_per_feature: usize,
    /// Chance that a non-root node below the maximum depth becomes a leaf.
    pub leaf_probability: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            trees: 100,
            depth: 3,
            raw_features: 1146,
            used_features: 112,
            thresholds_per_feature: 15,
            leaf_probability: 0.0,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn new(trees: usize, depth: usize, raw_features: usize, thresholds_per_feature: usize, seed: u64) -> Self {
        SyntheticSpec {
            trees,
            depth,
            raw_features,
            used_features: SyntheticSpec::default().used_features.min(raw_features),
            thresholds_per_feature,
            seed,
            ..Default::default()
        }
    }
}

// Thresholds live on a 1/64 grid in [-8, 8), leaves on a 2^-21 grid in
// [-0.5, 0.5): both exact in f32, so f32 and f64 forests agree.
const THRESHOLD_GRID: u32 = 1024;

/// Deterministic random forest. Every split feature draws its threshold from
/// a fixed pool of `thresholds_per_feature` values.
pub fn gen_synthetic<T: Real>(spec: &SyntheticSpec) -> Forest<T> {
    assert!(spec.thresholds_per_feature >= 1, "need at least one threshold per feature");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let slots = spec.trees.saturating_mul((1usize << spec.depth) - 1);
    let used = spec.used_features.min(spec.raw_features).min(slots);
    let mut features = rand::seq::index::sample(&mut rng, spec.raw_features, used).into_vec();
    features.sort_unstable();

    let k = spec.thresholds_per_feature.min(THRESHOLD_GRID as usize);
    let pools: Vec<Vec<f64>> = features
        .iter()
        .map(|_| {
            let mut pool: Vec<f64> = rand::seq::index::sample(&mut rng, THRESHOLD_GRID as usize, k)
                .into_iter()
                .map(|i| (i as f64 - 512.0) / 64.0)
                .collect();
            pool.sort_by(f64::total_cmp);
            pool
        })
        .collect();

    // every used feature appears at least once before repeats are drawn
    let mut unused: Vec<usize> = (0..used).collect();
    unused.shuffle(&mut rng);

    let mut gen = Gen {
        rng,
        spec,
        features: &features,
        pools: &pools,
        unused,
    };
    let trees = (0..spec.trees).map(|_| Tree { root: gen.node::<T>(0) }).collect();

    Forest {
        trees,
        num_raw_features: spec.raw_features,
        base_score: T::zero(),
        metadata: ModelMeta {
            name: "synthetic".into(),
            version: format!("seed-{}", spec.seed),
        },
    }
}

struct Gen<'a> {
    rng: ChaCha8Rng,
    spec: &'a SyntheticSpec,
    features: &'a [usize],
    pools: &'a [Vec<f64>],
    unused: Vec<usize>,
}

impl Gen<'_> {
    fn node<T: Real>(&mut self, level: usize) -> Node<T> {
        let stop = level == self.spec.depth || self.features.is_empty() || (level > 0 && self.rng.gen_bool(self.spec.leaf_probability));
        if stop {
            let value = self.rng.gen_range(-(1i64 << 20)..(1i64 << 20)) as f64 / (1u64 << 21) as f64;
            return Node::Leaf {
                value: T::from_f64_lossy(value),
            };
        }
        let which = match self.unused.pop() {
            Some(i) => i,
            None => self.rng.gen_range(0..self.features.len()),
        };
        let pool = &self.pools[which];
        let threshold = pool[self.rng.gen_range(0..pool.len())];
        let left = self.node(level + 1);
        let right = self.node(level + 1);
        Node::Split {
            feature: self.features[which],
            threshold: T::from_f64_lossy(threshold),
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}
