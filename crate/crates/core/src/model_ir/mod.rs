//! Tree-ensemble IR: parsing, validation, feature pruning and canonicalization
//! into complete trees of a fixed depth.

mod canonical;
mod parse;
mod synth;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

pub use canonical::{canonicalize, CanonicalForest, CanonicalTree, Comparator, CANON_VERSION};
pub use parse::{parse_model, parse_model_with, serialize_model};
pub use synth::{gen_synthetic, SyntheticSpec};

/// Default tree depth of the compiled datapath.
pub const DEFAULT_DEPTH: usize = 3;
/// Largest supported canonical depth (63 comparators fit one 64-bit result word).
pub const MAX_DEPTH: usize = 6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed model JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("tree {tree}, node {nid}: {msg}", nid = fmt_node(*.node))]
    Structure { tree: usize, node: Option<i64>, msg: String },
    #[error("tree {tree}, node {nid}: feature {feature} out of range (num_raw_features = {num_raw_features})", nid = fmt_node(*.node))]
    FeatureOutOfRange {
        tree: usize,
        node: Option<i64>,
        feature: usize,
        num_raw_features: usize,
    },
    #[error("tree {tree}: non-finite {what}")]
    NonFinite { tree: usize, what: &'static str },
    #[error("tree {tree} has depth {depth}, exceeding the configured depth {max}")]
    TooDeep { tree: usize, depth: usize, max: usize },
    #[error("depth {0} unsupported (expected 1..={MAX_DEPTH})")]
    InvalidDepth(usize),
    #[error("input feature {feature} is NaN")]
    NanInput { feature: usize },
    #[error("input has {got} features, expected {expected}")]
    InputLength { got: usize, expected: usize },
    #[error("container: {0}")]
    Container(String),
}

fn fmt_node(node: Option<i64>) -> String {
    node.map_or_else(|| "?".to_string(), |n| n.to_string())
}

/// A tree node. `left` is the branch taken when `x[feature] < threshold`.
#[derive(Clone, Debug, PartialEq)]
pub enum Node<T> {
    Split {
        feature: usize,
        threshold: T,
        left: Box<Node<T>>,
        right: Box<Node<T>>,
    },
    Leaf {
        value: T,
    },
}

/// Where a traversal ended: the leaf value plus its position in the complete
/// binary tree (`position` counts nodes at `depth` from the left).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeafHit<T> {
    pub value: T,
    pub depth: usize,
    pub position: usize,
}

impl<T> LeafHit<T> {
    /// Whether canonical leaf slot `leaf_index` of a depth-`canonical_depth`
    /// tree is one of the replicated copies of this leaf.
    pub fn covers(&self, leaf_index: usize, canonical_depth: usize) -> bool {
        canonical_depth >= self.depth && leaf_index >> (canonical_depth - self.depth) == self.position
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tree<T> {
    pub root: Node<T>,
}

impl<T: Real> Tree<T> {
    /// Number of edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn go<T>(n: &Node<T>) -> usize {
            match n {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(left).max(go(right)),
            }
        }
        go(&self.root)
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Pre-order node iterator.
    pub fn nodes(&self) -> impl Iterator<Item = &Node<T>> {
        let mut stack = vec![&self.root];
        std::iter::from_fn(move || {
            let n = stack.pop()?;
            if let Node::Split { left, right, .. } = n {
                stack.push(right);
                stack.push(left);
            }
            Some(n)
        })
    }

    /// Root-to-leaf walk over a raw feature vector. No NaN checks.
    pub fn traverse(&self, x: &[T]) -> LeafHit<T> {
        let mut node = &self.root;
        let (mut depth, mut position) = (0, 0);
        loop {
            match node {
                Node::Leaf { value } => {
                    return LeafHit {
                        value: *value,
                        depth,
                        position,
                    }
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let go_left = x[*feature] < *threshold;
                    position = 2 * position + usize::from(!go_left);
                    depth += 1;
                    node = if go_left { left } else { right };
                }
            }
        }
    }

    fn map_features(&self, f: &impl Fn(usize) -> usize) -> Tree<T> {
        fn go<T: Copy>(n: &Node<T>, f: &impl Fn(usize) -> usize) -> Node<T> {
            match n {
                Node::Leaf { value } => Node::Leaf { value: *value },
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => Node::Split {
                    feature: f(*feature),
                    threshold: *threshold,
                    left: Box::new(go(left, f)),
                    right: Box::new(go(right, f)),
                },
            }
        }
        Tree { root: go(&self.root, f) }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub name: String,
    pub version: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Forest<T> {
    pub trees: Vec<Tree<T>>,
    pub num_raw_features: usize,
    /// Margin-space offset added to the sum of tree values.
    pub base_score: T,
    pub metadata: ModelMeta,
}

impl<T: Real> Forest<T> {
    /// Checks feature bounds and finiteness of every threshold and leaf.
    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.base_score.is_finite() {
            return Err(ModelError::NonFinite { tree: 0, what: "base score" });
        }
        for (ti, tree) in self.trees.iter().enumerate() {
            for node in tree.nodes() {
                match node {
                    Node::Leaf { value } if !value.is_finite() => {
                        return Err(ModelError::NonFinite {
                            tree: ti,
                            what: "leaf value",
                        })
                    }
                    Node::Split { feature, threshold, .. } => {
                        if *feature >= self.num_raw_features {
                            return Err(ModelError::FeatureOutOfRange {
                                tree: ti,
                                node: None,
                                feature: *feature,
                                num_raw_features: self.num_raw_features,
                            });
                        }
                        if !threshold.is_finite() {
                            return Err(ModelError::NonFinite { tree: ti, what: "threshold" });
                        }
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn max_depth(&self) -> usize {
        self.trees.iter().map(Tree::depth).max().unwrap_or(0)
    }

    /// Sorted distinct raw feature ids referenced by any split.
    pub fn used_features(&self) -> Vec<usize> {
        let mut used: Vec<usize> = self
            .trees
            .iter()
            .flat_map(|t| t.nodes())
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .collect();
        used.sort_unstable();
        used.dedup();
        used
    }
}

/// Correspondence between raw feature ids and the dense ids `0..F` of a pruned model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "FeatureMapRepr", into = "FeatureMapRepr")]
pub struct FeatureMap {
    raw_to_dense: BTreeMap<usize, usize>,
    dense_to_raw: Vec<usize>,
    num_raw_features: usize,
}

#[derive(Serialize, Deserialize)]
struct FeatureMapRepr {
    num_raw_features: usize,
    dense_to_raw: Vec<usize>,
}

impl From<FeatureMapRepr> for FeatureMap {
    fn from(r: FeatureMapRepr) -> Self {
        FeatureMap::from_dense(r.dense_to_raw, r.num_raw_features)
    }
}

impl From<FeatureMap> for FeatureMapRepr {
    fn from(m: FeatureMap) -> Self {
        FeatureMapRepr {
            num_raw_features: m.num_raw_features,
            dense_to_raw: m.dense_to_raw,
        }
    }
}

impl FeatureMap {
    /// `dense_to_raw[d]` is the raw id of dense feature `d`.
    pub fn from_dense(dense_to_raw: Vec<usize>, num_raw_features: usize) -> Self {
        let raw_to_dense = dense_to_raw.iter().enumerate().map(|(d, &r)| (r, d)).collect();
        FeatureMap {
            raw_to_dense,
            dense_to_raw,
            num_raw_features,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_dense((0..n).collect(), n)
    }

    /// Used-feature count `F`.
    pub fn len(&self) -> usize {
        self.dense_to_raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dense_to_raw.is_empty()
    }

    pub fn num_raw_features(&self) -> usize {
        self.num_raw_features
    }

    pub fn dense(&self, raw: usize) -> Option<usize> {
        self.raw_to_dense.get(&raw).copied()
    }

    pub fn raw(&self, dense: usize) -> usize {
        self.dense_to_raw[dense]
    }

    pub fn dense_to_raw(&self) -> &[usize] {
        &self.dense_to_raw
    }

    /// Selects the used features out of a raw-space input vector.
    pub fn project<T: Copy>(&self, raw: &[T]) -> Result<Vec<T>, ModelError> {
        if raw.len() != self.num_raw_features {
            return Err(ModelError::InputLength {
                got: raw.len(),
                expected: self.num_raw_features,
            });
        }
        Ok(self.dense_to_raw.iter().map(|&r| raw[r]).collect())
    }
}

/// Renumbers split features onto `0..F`, where `F` counts the distinct raw
/// features appearing in any split.
pub fn prune_features<T: Real>(forest: &Forest<T>) -> (Forest<T>, FeatureMap) {
    let map = FeatureMap::from_dense(forest.used_features(), forest.num_raw_features);
    let remap = |raw: usize| map.raw_to_dense[&raw];
    let pruned = Forest {
        trees: forest.trees.iter().map(|t| t.map_features(&remap)).collect(),
        num_raw_features: map.len(),
        base_score: forest.base_score,
        metadata: forest.metadata.clone(),
    };
    (pruned, map)
}
