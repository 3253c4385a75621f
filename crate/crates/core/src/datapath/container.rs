//! `cf-v1` compiled-forest container.
//!
//! ```text
//! {
//!   "version": "cf-v1",
//!   "depth": D, "num_features": F, "width": w,
//!   "fxp": {"leaf_bits": 32, "frac_bits": 24, "acc_bits": 64},
//!   "adder_stages": A, "tree_count": N, "padded_tree_count": 2^A,
//!   "bytes_per_record": B, "base_score_q": i64,
//!   "feature_map": {"num_raw_features": R, "dense_to_raw": [...]},
//!   "quant": {"width": w, "thresholds": [[...], ...]},
//!   "trees": [{"comparators": [[feature, rank], ...],
//!              "leaves": hex(i32 LE x 2^D),
//!              "encoder": hex(u8 x 2^(2^D-1)) | null}]
//! }
//! ```

use serde::{Deserialize, Serialize};

use super::{CompileError, CompiledForest, CompiledTree, FxpFormat, SlotCompare};
use crate::model_ir::{FeatureMap, MAX_DEPTH};
use crate::quantize::QuantSpec;
use crate::scalar::Real;

pub const CF_VERSION: &str = "cf-v1";

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct Container<T> {
    version: String,
    depth: usize,
    num_features: usize,
    width: u32,
    fxp: FxpFormat,
    adder_stages: u32,
    tree_count: usize,
    padded_tree_count: usize,
    bytes_per_record: usize,
    base_score_q: i64,
    feature_map: FeatureMap,
    quant: QuantSpec<T>,
    trees: Vec<TreeRecord>,
}

#[derive(Serialize, Deserialize)]
struct TreeRecord {
    comparators: Vec<(u32, u16)>,
    leaves: String,
    encoder: Option<String>,
}

fn bad(msg: impl Into<String>) -> CompileError {
    CompileError::Container(msg.into())
}

impl<T: Real> CompiledForest<T> {
    pub fn to_json(&self) -> String {
        let trees = self
            .trees
            .iter()
            .map(|t| TreeRecord {
                comparators: t.comparators.iter().map(|c| (c.feature, c.rank)).collect(),
                leaves: hex::encode(t.leaves.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>()),
                encoder: t.encoder.table().map(hex::encode),
            })
            .collect();
        let c = Container {
            version: CF_VERSION.to_string(),
            depth: self.depth,
            num_features: self.quant.num_features(),
            width: self.quant.width(),
            fxp: self.fxp,
            adder_stages: self.adder_stages,
            tree_count: self.tree_count,
            padded_tree_count: self.padded_trees(),
            bytes_per_record: self.bytes_per_record(),
            base_score_q: self.base_score_q,
            feature_map: self.feature_map.clone(),
            quant: self.quant.clone(),
            trees,
        };
        serde_json::to_string_pretty(&c).expect("compiled forest serializes")
    }

    /// Loads and cross-checks a container; stored encoder tables must agree
    /// with the ones implied by the comparators.
    pub fn from_json(text: &str) -> Result<Self, CompileError> {
        let c: Container<T> = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if c.version != CF_VERSION {
            return Err(bad(format!("version {:?}, expected {CF_VERSION:?}", c.version)));
        }
        let quant = QuantSpec::new(
            c.quant.width(),
            (0..c.quant.num_features()).map(|f| c.quant.thresholds(f).to_vec()).collect(),
        )
        .map_err(|e| bad(e.to_string()))?;
        let padded = c.trees.len();
        let header_ok = c.depth >= 1
            && c.depth <= MAX_DEPTH
            && c.fxp == FxpFormat::default()
            && c.width == quant.width()
            && c.num_features == quant.num_features()
            && c.num_features == c.feature_map.len()
            && c.bytes_per_record == quant.bytes_per_record()
            && padded.is_power_of_two()
            && padded == c.padded_tree_count
            && c.tree_count <= padded
            && c.adder_stages == padded.trailing_zeros();
        if !header_ok {
            return Err(bad("inconsistent header"));
        }
        let trees = c
            .trees
            .iter()
            .enumerate()
            .map(|(ti, r)| decode_tree(ti, r, c.depth, &quant))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(ti) = (c.tree_count..padded).find(|&ti| trees[ti] != CompiledTree::zero(c.depth)) {
            return Err(bad(format!("tree {ti}: padding tree is not all-zero")));
        }
        Ok(CompiledForest {
            depth: c.depth,
            trees,
            tree_count: c.tree_count,
            quant,
            feature_map: c.feature_map,
            fxp: c.fxp,
            base_score_q: c.base_score_q,
            adder_stages: c.adder_stages,
        })
    }
}

fn decode_tree<T: Real>(ti: usize, r: &TreeRecord, depth: usize, quant: &QuantSpec<T>) -> Result<CompiledTree, CompileError> {
    if r.comparators.len() != (1 << depth) - 1 {
        return Err(bad(format!("tree {ti}: wrong comparator count")));
    }
    let comparators: Vec<SlotCompare> = r.comparators.iter().map(|&(feature, rank)| SlotCompare { feature, rank }).collect();
    for c in &comparators {
        let in_range = c.is_padded() || ((c.feature as usize) < quant.num_features() && c.rank as usize <= quant.rank_count(c.feature as usize));
        if !in_range {
            return Err(bad(format!("tree {ti}: comparator ({}, {}) out of range", c.feature, c.rank)));
        }
    }
    let leaf_bytes = hex::decode(&r.leaves).map_err(|e| bad(format!("tree {ti}: leaves: {e}")))?;
    if leaf_bytes.len() != 4 << depth {
        return Err(bad(format!("tree {ti}: wrong leaf table size")));
    }
    let leaves = leaf_bytes
        .chunks_exact(4)
        .map(|b| i32::from_le_bytes(b.try_into().expect("chunk of 4")))
        .collect();
    let tree = CompiledTree::from_parts(comparators, leaves);
    let stored = r
        .encoder
        .as_deref()
        .map(hex::decode)
        .transpose()
        .map_err(|e| bad(format!("tree {ti}: encoder: {e}")))?;
    if stored.as_deref() != tree.encoder.table() {
        return Err(bad(format!("tree {ti}: encoder table does not match comparators")));
    }
    Ok(tree)
}
