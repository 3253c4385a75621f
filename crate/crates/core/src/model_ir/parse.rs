//! Tree-dump JSON ingestion.
//!
//! Accepts either a bare array of trees or a wrapper object
//! `{"num_raw_features", "base_score", "name", "version", "trees": [...]}`.
//! Each node is `{"nodeid", "split", "split_condition", "yes", "no", "children"}`
//! or `{"nodeid", "leaf"}`; `yes` is the child taken when `x < split_condition`.
//! Missing-value directions are ignored.

use std::collections::{HashMap, HashSet};

use serde_json::{json, Map, Value};

use super::{Forest, ModelError, ModelMeta, Node, Tree};
use crate::scalar::Real;

/// Parses a model, inferring `num_raw_features` from the wrapper object or,
/// failing that, from the largest referenced feature id.
pub fn parse_model<T: Real>(text: &str) -> Result<Forest<T>, ModelError> {
    parse_model_with(text, None)
}

/// Like [`parse_model`], but with an explicit raw feature count that takes
/// precedence over anything in the file.
pub fn parse_model_with<T: Real>(text: &str, num_raw_features: Option<usize>) -> Result<Forest<T>, ModelError> {
    let doc: Value = serde_json::from_str(text)?;
    let (trees_json, header) = match &doc {
        Value::Array(trees) => (trees, None),
        Value::Object(obj) => match obj.get("trees") {
            Some(Value::Array(trees)) => (trees, Some(obj)),
            _ => return Err(top_level("wrapper object needs a \"trees\" array")),
        },
        _ => return Err(top_level("expected an array of trees or a wrapper object")),
    };

    let mut trees = Vec::with_capacity(trees_json.len());
    for (ti, tj) in trees_json.iter().enumerate() {
        let tree = TreeParser::new(ti).parse(tj)?;
        trees.push(Tree { root: retype(tree.root) });
    }

    let declared = match header.and_then(|h| h.get("num_raw_features")) {
        None | Some(Value::Null) => None,
        Some(v) => Some(v.as_u64().ok_or_else(|| top_level("num_raw_features must be a non-negative integer"))? as usize),
    };
    let base_score = match header.and_then(|h| h.get("base_score")) {
        None | Some(Value::Null) => 0.0,
        Some(v) => v.as_f64().ok_or_else(|| top_level("base_score must be a number"))?,
    };
    let text_field = |key: &str| header.and_then(|h| h.get(key)).and_then(Value::as_str).unwrap_or_default().to_string();

    let mut forest = Forest {
        trees,
        num_raw_features: 0,
        base_score: T::from_f64_lossy(base_score),
        metadata: ModelMeta {
            name: text_field("name"),
            version: text_field("version"),
        },
    };
    forest.num_raw_features = num_raw_features
        .or(declared)
        .unwrap_or_else(|| forest.used_features().last().map_or(0, |&f| f + 1));
    forest.validate()?;
    Ok(forest)
}

fn top_level(msg: &str) -> ModelError {
    ModelError::Structure {
        tree: 0,
        node: None,
        msg: msg.to_string(),
    }
}

struct TreeParser<'a> {
    tree: usize,
    by_id: HashMap<i64, &'a Value>,
    on_path: HashSet<i64>,
    visited: HashSet<i64>,
}

impl<'a> TreeParser<'a> {
    fn new(tree: usize) -> Self {
        TreeParser {
            tree,
            by_id: HashMap::new(),
            on_path: HashSet::new(),
            visited: HashSet::new(),
        }
    }

    fn err(&self, node: Option<i64>, msg: impl Into<String>) -> ModelError {
        ModelError::Structure {
            tree: self.tree,
            node,
            msg: msg.into(),
        }
    }

    fn parse(mut self, root: &'a Value) -> Result<Tree<f64>, ModelError> {
        self.index(root)?;
        let root = self.node(root)?;
        Ok(Tree { root })
    }

    /// Registers every nested node object under its `nodeid`.
    fn index(&mut self, v: &'a Value) -> Result<(), ModelError> {
        let obj = v.as_object().ok_or_else(|| self.err(None, "node is not an object"))?;
        if let Some(id) = node_id(obj) {
            if self.by_id.insert(id, v).is_some() {
                return Err(self.err(Some(id), "duplicate nodeid"));
            }
        }
        if let Some(children) = obj.get("children") {
            let children = children.as_array().ok_or_else(|| self.err(node_id(obj), "children is not an array"))?;
            for c in children {
                self.index(c)?;
            }
        }
        Ok(())
    }

    fn node(&mut self, v: &'a Value) -> Result<Node<f64>, ModelError> {
        let obj = v.as_object().expect("indexed nodes are objects");
        let id = node_id(obj);
        if let Some(id) = id {
            if !self.on_path.insert(id) {
                return Err(self.err(Some(id), "child-id cycle"));
            }
            if !self.visited.insert(id) {
                return Err(self.err(Some(id), "node reachable from two parents"));
            }
        }
        let node = self.node_body(obj, id)?;
        if let Some(id) = id {
            self.on_path.remove(&id);
        }
        Ok(node)
    }

    fn node_body(&mut self, obj: &'a Map<String, Value>, id: Option<i64>) -> Result<Node<f64>, ModelError> {
        let has_split = obj.contains_key("split");
        match (obj.get("leaf"), has_split) {
            (Some(_), true) => Err(self.err(id, "node has both leaf and split")),
            (Some(leaf), false) => {
                let value = leaf.as_f64().ok_or_else(|| self.err(id, "leaf is not a number"))?;
                Ok(Node::Leaf { value })
            }
            (None, false) => Err(self.err(id, "node has neither leaf nor split")),
            (None, true) => {
                let feature = parse_feature(&obj["split"]).ok_or_else(|| self.err(id, format!("unsupported split feature {}", obj["split"])))?;
                let threshold = obj
                    .get("split_condition")
                    .ok_or_else(|| self.err(id, "missing split_condition"))?
                    .as_f64()
                    .ok_or_else(|| self.err(id, "split_condition is not a number"))?;
                let children = obj
                    .get("children")
                    .and_then(Value::as_array)
                    .ok_or_else(|| self.err(id, "split node without children"))?;
                if children.len() != 2 {
                    return Err(self.err(id, format!("non-binary node with {} children", children.len())));
                }
                let (yes, no) = (self.child(obj, id, "yes", &children[0])?, self.child(obj, id, "no", &children[1])?);
                let left = self.node(yes)?;
                let right = self.node(no)?;
                Ok(Node::Split {
                    feature,
                    threshold,
                    left: Box::new(left),
                    right: Box::new(right),
                })
            }
        }
    }

    /// Resolves `yes`/`no` by node id; children without ids fall back to
    /// positional order (`children[0]` = yes).
    fn child(&self, obj: &Map<String, Value>, id: Option<i64>, key: &str, positional: &'a Value) -> Result<&'a Value, ModelError> {
        match obj.get(key) {
            Some(r) => {
                let target = r.as_i64().ok_or_else(|| self.err(id, format!("{key} is not an integer node id")))?;
                self.by_id
                    .get(&target)
                    .copied()
                    .ok_or_else(|| self.err(id, format!("{key} references unknown node {target}")))
            }
            None if node_id(positional.as_object().expect("indexed")).is_none() => Ok(positional),
            None => Err(self.err(id, format!("missing {key}"))),
        }
    }
}

fn node_id(obj: &Map<String, Value>) -> Option<i64> {
    obj.get("nodeid").and_then(Value::as_i64)
}

/// `"f12"`, `"12"` or `12`.
fn parse_feature(v: &Value) -> Option<usize> {
    match v {
        Value::Number(n) => n.as_u64().map(|n| n as usize),
        Value::String(s) => s.strip_prefix('f').unwrap_or(s).parse().ok(),
        _ => None,
    }
}

fn retype<T: Real>(n: Node<f64>) -> Node<T> {
    match n {
        Node::Leaf { value } => Node::Leaf {
            value: T::from_f64_lossy(value),
        },
        Node::Split {
            feature,
            threshold,
            left,
            right,
        } => Node::Split {
            feature,
            threshold: T::from_f64_lossy(threshold),
            left: Box::new(retype(*left)),
            right: Box::new(retype(*right)),
        },
    }
}

/// Serializes to the wrapper-object form with breadth-first node ids. The
/// output is a deterministic function of the forest.
pub fn serialize_model<T: Real>(forest: &Forest<T>) -> String {
    let trees: Vec<Value> = forest.trees.iter().map(tree_json).collect();
    let doc = json!({
        "name": forest.metadata.name,
        "version": forest.metadata.version,
        "num_raw_features": forest.num_raw_features,
        "base_score": forest.base_score.to_f64_exact(),
        "trees": trees,
    });
    serde_json::to_string(&doc).expect("model JSON serializes")
}

fn tree_json<T: Real>(tree: &Tree<T>) -> Value {
    // breadth-first ids, as tree-dump tools number nodes
    let mut ids: HashMap<*const Node<T>, i64> = HashMap::new();
    let mut queue = std::collections::VecDeque::from([&tree.root]);
    while let Some(n) = queue.pop_front() {
        let next = ids.len() as i64;
        ids.insert(n as *const _, next);
        if let Node::Split { left, right, .. } = n {
            queue.push_back(left);
            queue.push_back(right);
        }
    }
    fn go<T: Real>(n: &Node<T>, depth: usize, ids: &HashMap<*const Node<T>, i64>) -> Value {
        let id = ids[&(n as *const _)];
        match n {
            Node::Leaf { value } => json!({ "nodeid": id, "leaf": value.to_f64_exact() }),
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let yes = ids[&(&**left as *const _)];
                let no = ids[&(&**right as *const _)];
                json!({
                    "nodeid": id,
                    "depth": depth,
                    "split": format!("f{feature}"),
                    "split_condition": threshold.to_f64_exact(),
                    "yes": yes,
                    "no": no,
                    "missing": yes,
                    "children": [go(left, depth + 1, ids), go(right, depth + 1, ids)],
                })
            }
        }
    }
    go(&tree.root, 0, &ids)
}
