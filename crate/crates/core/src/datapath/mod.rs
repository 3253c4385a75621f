//! Bit-exact software model of the inference datapath.
//!
//! Each tree is a comparator bank (`code < rank` per heap slot), a
//! tree-specific encoder mapping the comparator result word to a leaf index,
//! and a leaf multiplexer over Q8.24 values. Tree values are summed by a
//! pairwise adder tree over a power-of-two number of trees (zero trees pad
//! the count). The float traversal oracle lives here too.

mod container;
mod fixed;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_ir::{CanonicalForest, Comparator, FeatureMap, Forest, ModelError};
use crate::quantize::{encode_record, CodeVector, QuantError, QuantSpec};
use crate::scalar::Real;

pub use container::CF_VERSION;
pub use fixed::{quantize_leaf, Fixed, FxpFormat, FRAC_BITS};

/// Depths up to this one materialize the encoder as a lookup table
/// (`2^(2^D - 1)` entries, 128 for D = 3).
pub const MAX_TABLE_DEPTH: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum CompileError {
    #[error("tree {tree}, leaf slot {slot}: value {value} outside the Q8.24 range (|v| < 128)")]
    LeafRange { tree: usize, slot: usize, value: f64 },
    #[error("base score {0} outside the fixed-point range")]
    BaseScoreRange(f64),
    #[error("quantization spec has {spec} features, canonical forest has {forest}")]
    FeatureCount { spec: usize, forest: usize },
    #[error("tree {tree}, slot {slot}: threshold missing from the quantization table")]
    MissingRank { tree: usize, slot: usize },
    #[error("container: {0}")]
    Container(String),
}

/// One comparator slot: `code[feature] < rank`. Rank 0 marks a padded slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotCompare {
    pub feature: u32,
    pub rank: u16,
}

impl SlotCompare {
    pub const PADDED: SlotCompare = SlotCompare { feature: 0, rank: 0 };

    pub fn is_padded(&self) -> bool {
        self.rank == 0
    }

    pub fn eval(&self, v: &CodeVector) -> bool {
        v.0.get(self.feature as usize).is_some_and(|&c| c < self.rank)
    }
}

/// Tree-specific encoder from the comparator result word (bit `i` = slot `i`)
/// to a leaf index. Padded slots are treated as false whatever their bit, so
/// only bits on the selected root-to-leaf path matter.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Encoder {
    depth: usize,
    live: u64,
    table: Option<Vec<u8>>,
}

impl Encoder {
    pub fn new(depth: usize, live: u64) -> Self {
        let mut enc = Encoder { depth, live, table: None };
        if depth <= MAX_TABLE_DEPTH {
            let n = 1usize << ((1 << depth) - 1);
            enc.table = Some((0..n as u64).map(|b| enc.walk(b) as u8).collect());
        }
        enc
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Mask of non-padded comparator slots.
    pub fn live_mask(&self) -> u64 {
        self.live
    }

    pub fn table(&self) -> Option<&[u8]> {
        self.table.as_deref()
    }

    /// Path-walk realization.
    pub fn walk(&self, bits: u64) -> usize {
        let mut slot = 0usize;
        for _ in 0..self.depth {
            let taken = (self.live & bits) >> slot & 1 == 1;
            slot = 2 * slot + if taken { 1 } else { 2 };
        }
        slot - ((1 << self.depth) - 1)
    }

    pub fn lookup(&self, bits: u64) -> usize {
        match &self.table {
            Some(t) => usize::from(t[bits as usize]),
            None => self.walk(bits),
        }
    }

    /// Heap slots on the path to `leaf`, with the branch taken at each.
    pub fn path(&self, leaf: usize) -> Vec<(usize, bool)> {
        let mut out = Vec::with_capacity(self.depth);
        let mut slot = 0usize;
        for level in (0..self.depth).rev() {
            let left = (leaf >> level) & 1 == 0;
            out.push((slot, left));
            slot = 2 * slot + if left { 1 } else { 2 };
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompiledTree {
    pub comparators: Vec<SlotCompare>,
    pub encoder: Encoder,
    pub leaves: Vec<i32>,
}

impl CompiledTree {
    pub fn from_parts(comparators: Vec<SlotCompare>, leaves: Vec<i32>) -> Self {
        let depth = leaves.len().trailing_zeros() as usize;
        let live = comparators
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_padded())
            .fold(0u64, |m, (i, _)| m | 1 << i);
        CompiledTree {
            encoder: Encoder::new(depth, live),
            comparators,
            leaves,
        }
    }

    pub(crate) fn zero(depth: usize) -> Self {
        Self::from_parts(vec![SlotCompare::PADDED; (1 << depth) - 1], vec![0; 1 << depth])
    }

    /// Comparator result word: bit `i` = `code[f_i] < rank_i`.
    pub fn compare_bits(&self, v: &CodeVector) -> u64 {
        self.comparators
            .iter()
            .enumerate()
            .fold(0u64, |bits, (i, c)| bits | u64::from(c.eval(v)) << i)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompiledForest<T> {
    pub depth: usize,
    /// Real trees followed by zero-leaf padding trees.
    pub trees: Vec<CompiledTree>,
    /// Number of real trees.
    pub tree_count: usize,
    pub quant: QuantSpec<T>,
    pub feature_map: FeatureMap,
    pub fxp: FxpFormat,
    pub base_score_q: i64,
    pub adder_stages: u32,
}

impl<T: Real> CompiledForest<T> {
    pub fn padded_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn bytes_per_record(&self) -> usize {
        self.quant.bytes_per_record()
    }

    /// Quantizes a dense input.
    pub fn encode(&self, dense: &[T]) -> Result<CodeVector, QuantError> {
        encode_record(dense, &self.quant)
    }

    /// Quantizes an input over the original (unpruned) feature space.
    pub fn encode_raw(&self, raw: &[T]) -> Result<CodeVector, crate::Error> {
        let dense = self.feature_map.project(raw)?;
        Ok(self.encode(&dense)?)
    }
}

/// Maps comparator thresholds to ranks and leaves to Q8.24, then pads the tree
/// count to a power of two.
pub fn compile_forest<T: Real>(cf: &CanonicalForest<T>, spec: &QuantSpec<T>) -> Result<CompiledForest<T>, CompileError> {
    if spec.num_features() != cf.num_features() {
        return Err(CompileError::FeatureCount {
            spec: spec.num_features(),
            forest: cf.num_features(),
        });
    }
    let mut trees = Vec::with_capacity(cf.trees.len().next_power_of_two());
    for (ti, t) in cf.trees.iter().enumerate() {
        let comparators = t
            .comparators
            .iter()
            .enumerate()
            .map(|(slot, c)| match *c {
                Comparator::Split { feature, threshold } => spec
                    .rank_of(feature, threshold)
                    .map(|rank| SlotCompare {
                        feature: feature as u32,
                        rank,
                    })
                    .ok_or(CompileError::MissingRank { tree: ti, slot }),
                Comparator::AlwaysFalse => Ok(SlotCompare::PADDED),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let leaves = t
            .leaves
            .iter()
            .enumerate()
            .map(|(slot, v)| {
                let value = v.to_f64_exact();
                quantize_leaf(value).ok_or(CompileError::LeafRange { tree: ti, slot, value })
            })
            .collect::<Result<Vec<_>, _>>()?;
        trees.push(CompiledTree::from_parts(comparators, leaves));
    }
    let padded = cf.trees.len().max(1).next_power_of_two();
    trees.resize_with(padded, || CompiledTree::zero(cf.depth));

    let base = cf.base_score.to_f64_exact();
    let base_score_q = match quantize_leaf(base) {
        Some(q) => i64::from(q),
        None => return Err(CompileError::BaseScoreRange(base)),
    };
    Ok(CompiledForest {
        depth: cf.depth,
        trees,
        tree_count: cf.trees.len(),
        quant: spec.clone(),
        feature_map: cf.feature_map.clone(),
        fxp: FxpFormat::default(),
        base_score_q,
        adder_stages: padded.trailing_zeros(),
    })
}

/// One tree processing unit: comparators, encoder, leaf multiplexer.
pub fn tpu_eval(tree: &CompiledTree, v: &CodeVector) -> (usize, i32) {
    let index = tree.encoder.lookup(tree.compare_bits(v));
    (index, tree.leaves[index])
}

/// Pairwise reduction: stage `s` adds elements `2i` and `2i+1` of stage `s-1`.
///
/// # Panics
/// If the input length is not a power of two.
pub fn adder_tree(values: &[i64]) -> i64 {
    assert!(values.len().is_power_of_two(), "adder tree needs 2^k inputs, got {}", values.len());
    let mut stage = values.to_vec();
    reduce_pairs(&mut stage)
}

fn reduce_pairs(stage: &mut [i64]) -> i64 {
    let mut n = stage.len();
    while n > 1 {
        n /= 2;
        for i in 0..n {
            stage[i] = stage[2 * i] + stage[2 * i + 1];
        }
    }
    stage[0]
}

/// Fixed-point margin: base score plus the adder-tree sum of all tree values.
pub fn score<T: Real>(cf: &CompiledForest<T>, v: &CodeVector) -> Fixed {
    // padding trees hold only zero leaves
    let mut values = vec![0i64; cf.trees.len()];
    for (slot, t) in values.iter_mut().zip(&cf.trees[..cf.tree_count]) {
        *slot = i64::from(tpu_eval(t, v).1);
    }
    Fixed(cf.base_score_q + reduce_pairs(&mut values))
}

/// Float traversal of the original model over a raw feature vector:
/// left iff `x < threshold`, leaves summed in tree order plus base score.
pub fn score_reference<T: Real>(forest: &Forest<T>, raw: &[T]) -> Result<T, ModelError> {
    if raw.len() != forest.num_raw_features {
        return Err(ModelError::InputLength {
            got: raw.len(),
            expected: forest.num_raw_features,
        });
    }
    if let Some(feature) = raw.iter().position(|x| x.is_nan()) {
        return Err(ModelError::NanInput { feature });
    }
    Ok(forest.trees.iter().map(|t| t.traverse(raw).value).sum::<T>() + forest.base_score)
}

/// Logistic link `1 / (1 + e^-m)`.
pub fn to_probability<T: Real>(margin: T) -> T {
    if margin >= T::zero() {
        T::one() / (T::one() + (-margin).exp())
    } else {
        let e = margin.exp();
        e / (T::one() + e)
    }
}
