//! Complete-tree form: every tree has exactly `2^D - 1` comparator slots in
//! heap order (slot `i` has children `2i+1`, `2i+2`) and `2^D` leaf slots.

use serde::{Deserialize, Serialize};

use super::{prune_features, FeatureMap, Forest, ModelError, ModelMeta, Node, MAX_DEPTH};
use crate::scalar::Real;

pub const CANON_VERSION: &str = "canon-v1";

/// A comparator slot. `AlwaysFalse` pads slots below a shallow leaf; its
/// outcome is irrelevant because the leaf value is replicated underneath.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
#[serde(untagged)]
pub enum Comparator<T> {
    Split { feature: usize, threshold: T },
    AlwaysFalse,
}

impl<T: Real> Comparator<T> {
    /// `x[feature] < threshold`; padded slots are false.
    pub fn test(&self, x: &[T]) -> bool {
        match *self {
            Comparator::Split { feature, threshold } => x[feature] < threshold,
            Comparator::AlwaysFalse => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CanonicalTree<T> {
    pub comparators: Vec<Comparator<T>>,
    pub leaves: Vec<T>,
}

impl<T: Real> CanonicalTree<T> {
    pub fn depth(&self) -> usize {
        self.leaves.len().trailing_zeros() as usize
    }

    /// Leaf slot selected by a dense input, walking comparator slots from the root.
    pub fn leaf_index(&self, x: &[T]) -> usize {
        let mut slot = 0;
        for _ in 0..self.depth() {
            slot = 2 * slot + if self.comparators[slot].test(x) { 1 } else { 2 };
        }
        slot - self.comparators.len()
    }

    pub fn eval(&self, x: &[T]) -> T {
        self.leaves[self.leaf_index(x)]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalForest<T> {
    pub depth: usize,
    pub trees: Vec<CanonicalTree<T>>,
    pub feature_map: FeatureMap,
    pub base_score: T,
    pub metadata: ModelMeta,
}

/// Prunes the forest's features and pads every tree to depth `depth`.
pub fn canonicalize<T: Real>(forest: &Forest<T>, depth: usize) -> Result<CanonicalForest<T>, ModelError> {
    if depth == 0 || depth > MAX_DEPTH {
        return Err(ModelError::InvalidDepth(depth));
    }
    forest.validate()?;
    for (ti, tree) in forest.trees.iter().enumerate() {
        let d = tree.depth();
        if d > depth {
            return Err(ModelError::TooDeep {
                tree: ti,
                depth: d,
                max: depth,
            });
        }
    }
    let (pruned, feature_map) = prune_features(forest);
    let trees = pruned
        .trees
        .iter()
        .map(|t| {
            let mut ct = CanonicalTree {
                comparators: vec![Comparator::AlwaysFalse; (1 << depth) - 1],
                leaves: vec![T::zero(); 1 << depth],
            };
            fill(&t.root, 0, 0, depth, &mut ct);
            ct
        })
        .collect();
    Ok(CanonicalForest {
        depth,
        trees,
        feature_map,
        base_score: pruned.base_score,
        metadata: pruned.metadata,
    })
}

fn fill<T: Real>(node: &Node<T>, slot: usize, level: usize, depth: usize, ct: &mut CanonicalTree<T>) {
    match node {
        Node::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            ct.comparators[slot] = Comparator::Split {
                feature: *feature,
                threshold: *threshold,
            };
            fill(left, 2 * slot + 1, level + 1, depth, ct);
            fill(right, 2 * slot + 2, level + 1, depth, ct);
        }
        Node::Leaf { value } => {
            let width = 1 << (depth - level);
            let first = (slot + 1 - (1 << level)) * width;
            ct.leaves[first..first + width].fill(*value);
        }
    }
}

impl<T: Real> CanonicalForest<T> {
    pub fn num_features(&self) -> usize {
        self.feature_map.len()
    }

    /// Sum of selected leaves plus base score, over a dense input.
    pub fn eval_margin(&self, x: &[T]) -> T {
        self.trees.iter().map(|t| t.eval(x)).sum::<T>() + self.base_score
    }

    pub fn to_json(&self) -> String {
        let c = CanonContainer {
            version: CANON_VERSION.to_string(),
            depth: self.depth,
            num_features: self.num_features(),
            feature_map: self.feature_map.clone(),
            base_score: self.base_score,
            metadata: self.metadata.clone(),
            trees: self.trees.clone(),
        };
        serde_json::to_string_pretty(&c).expect("canonical forest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let c: CanonContainer<T> = serde_json::from_str(text)?;
        if c.version != CANON_VERSION {
            return Err(ModelError::Container(format!("version {:?}, expected {CANON_VERSION:?}", c.version)));
        }
        if c.depth == 0 || c.depth > MAX_DEPTH || c.num_features != c.feature_map.len() {
            return Err(ModelError::Container("inconsistent header".into()));
        }
        for (ti, t) in c.trees.iter().enumerate() {
            let shape_ok = t.comparators.len() == (1 << c.depth) - 1 && t.leaves.len() == 1 << c.depth;
            let features_ok = t.comparators.iter().all(|cmp| match cmp {
                Comparator::Split { feature, threshold } => *feature < c.num_features && threshold.is_finite(),
                Comparator::AlwaysFalse => true,
            });
            if !shape_ok || !features_ok || t.leaves.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::Container(format!("tree {ti} malformed")));
            }
        }
        Ok(CanonicalForest {
            depth: c.depth,
            trees: c.trees,
            feature_map: c.feature_map,
            base_score: c.base_score,
            metadata: c.metadata,
        })
    }
}

/// `canon-v1` on-disk layout. Padded comparators serialize as `null`.
#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct CanonContainer<T> {
    version: String,
    depth: usize,
    num_features: usize,
    feature_map: FeatureMap,
    base_score: T,
    metadata: ModelMeta,
    trees: Vec<CanonicalTree<T>>,
}
