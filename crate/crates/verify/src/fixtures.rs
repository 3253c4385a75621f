//! Deterministic models and inputs shared by the test suites.

use gbdt_stream::model_ir::{gen_synthetic, Node, SyntheticSpec};
use gbdt_stream::{compile_model, CodeVector, CompiledForest64, Forest64};
use rand::Rng;

/// Four shallow trees, small enough to read the Verilog by eye.
pub fn small_model() -> CompiledForest64 {
    let spec = SyntheticSpec {
        trees: 4,
        depth: 2,
        raw_features: 10,
        used_features: 5,
        thresholds_per_feature: 3,
        leaf_probability: 0.25,
        seed: 7,
    };
    compile_model(&gen_synthetic(&spec), 2, 4).expect("fixture model compiles")
}

/// 100 trees, depth 3, 112 of 1146 features used.
pub fn default_model() -> CompiledForest64 {
    compile_model(&gen_synthetic(&SyntheticSpec::default()), 3, 4).expect("fixture model compiles")
}

/// Random forest within the given limits; leaves and base score are moved
/// off the generator's exact grid so fixed-point rounding is exercised.
pub fn random_forest(rng: &mut impl Rng, seed: u64, max_trees: usize, max_depth: usize) -> Forest64 {
    let raw_features = rng.gen_range(1..=200);
    let spec = SyntheticSpec {
        trees: rng.gen_range(1..=max_trees),
        depth: rng.gen_range(1..=max_depth),
        raw_features,
        used_features: rng.gen_range(1..=raw_features.min(40)),
        thresholds_per_feature: rng.gen_range(1..=15),
        leaf_probability: rng.gen_range(0.0..0.5),
        seed,
    };
    let mut f: Forest64 = gen_synthetic(&spec);
    for t in &mut f.trees {
        jitter(&mut t.root, rng);
    }
    f.base_score = rng.gen_range(-2.0..2.0);
    f
}

fn jitter(n: &mut Node<f64>, rng: &mut impl Rng) {
    match n {
        Node::Leaf { value } => *value = rng.gen_range(-1.0..1.0),
        Node::Split { left, right, .. } => {
            jitter(left, rng);
            jitter(right, rng);
        }
    }
}

/// Raw inputs that hit thresholds exactly, land next to them, or fall anywhere.
pub fn random_raw(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let grid = (rng.gen_range(0..1024) as f64 - 512.0) / 64.0;
            match rng.gen_range(0..4) {
                0 => grid,
                1 => grid - 1e-9,
                2 => grid + 1e-9,
                _ => rng.gen_range(-9.0..9.0),
            }
        })
        .collect()
}

pub fn random_codes(rng: &mut impl Rng, cf: &CompiledForest64) -> CodeVector {
    let q = &cf.quant;
    CodeVector((0..q.num_features()).map(|f| rng.gen_range(0..=q.rank_count(f) as u16)).collect())
}
