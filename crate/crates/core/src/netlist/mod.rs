//! Hardware-shaped node graph of a compiled forest.
//!
//! Stage 0 holds the registered input record and all per-tree logic
//! (comparators, encoder, leaf select). Stage 1 registers every tree value;
//! stage `s + 1` registers the adds of adder level `s`. The margin port is
//! the last register plus the base-score constant.

mod lint;
mod verilog;

use std::collections::BTreeMap;

use serde::Serialize;

use crate::datapath::{CompiledForest, Encoder, Fixed};
use crate::quantize::CodeVector;
use crate::scalar::Real;

pub use lint::{lint_structure, LintFinding, LintReport, PortWidths};
pub use verilog::{emit_verilog, ADDER_MODULE, FULL_CASE_MAX_DEPTH, TOP_MODULE};

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum NodeKind {
    /// `w`-bit code of a dense feature, sliced from the input register.
    InputCode {
        feature: u32,
    },
    ConstRank {
        rank: u16,
    },
    /// One-bit `lhs < rhs`.
    Compare {
        lhs: NodeId,
        rhs: NodeId,
    },
    /// Comparator bits (slot order) to leaf index.
    Encode {
        tree: usize,
        bits: Vec<NodeId>,
        encoder: Encoder,
    },
    /// Leaf multiplexer.
    Select {
        tree: usize,
        index: NodeId,
        leaves: Vec<i32>,
    },
    /// Tree value of a padding tree.
    Const {
        value: i64,
    },
    Add {
        lhs: NodeId,
        rhs: NodeId,
    },
    Register {
        input: NodeId,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NetNode {
    pub name: String,
    pub stage: u32,
    #[serde(flatten)]
    pub kind: NodeKind,
}

impl NetNode {
    pub fn inputs(&self) -> Vec<NodeId> {
        match &self.kind {
            NodeKind::InputCode { .. } | NodeKind::ConstRank { .. } | NodeKind::Const { .. } => vec![],
            NodeKind::Compare { lhs, rhs } | NodeKind::Add { lhs, rhs } => vec![*lhs, *rhs],
            NodeKind::Encode { bits, .. } => bits.clone(),
            NodeKind::Select { index, .. } => vec![*index],
            NodeKind::Register { input } => vec![*input],
        }
    }

    fn is_const(&self) -> bool {
        matches!(self.kind, NodeKind::ConstRank { .. } | NodeKind::Const { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Netlist {
    /// Topologically ordered: every input id is smaller than its consumer.
    pub nodes: Vec<NetNode>,
    pub output: NodeId,
    /// Base score added at the margin port.
    pub bias: i64,
    pub depth: usize,
    pub code_bits: u32,
    pub num_features: usize,
    pub record_bits: usize,
    pub leaf_bits: u32,
    pub acc_bits: u32,
    pub tree_count: usize,
    pub padded_trees: usize,
    pub adder_stages: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NodeCounts {
    pub inputs: usize,
    pub compares: usize,
    pub encoders: usize,
    pub selects: usize,
    pub adds: usize,
    pub registers: usize,
}

impl Netlist {
    /// Register levels between the input register and the margin port.
    pub fn register_stages(&self) -> u32 {
        1 + self.adder_stages
    }

    /// Streaming pipeline depth including the transfer stage on each side.
    pub fn pipeline_depth(&self) -> u32 {
        self.register_stages() + 2
    }

    /// Cycles from input word to margin: input register plus register stages.
    pub fn latency_cycles(&self) -> u32 {
        self.register_stages() + 1
    }

    /// Generated Verilog modules: one per real tree, the adder, and the top.
    pub fn module_count(&self) -> usize {
        self.tree_count + 2
    }

    pub fn counts(&self) -> NodeCounts {
        let mut c = NodeCounts::default();
        for n in &self.nodes {
            match n.kind {
                NodeKind::InputCode { .. } => c.inputs += 1,
                NodeKind::Compare { .. } => c.compares += 1,
                NodeKind::Encode { .. } => c.encoders += 1,
                NodeKind::Select { .. } => c.selects += 1,
                NodeKind::Add { .. } => c.adds += 1,
                NodeKind::Register { .. } => c.registers += 1,
                _ => {}
            }
        }
        c
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("netlist serializes")
    }

    /// Structural invariants; returns every violation found.
    pub fn check(&self) -> Result<(), Vec<String>> {
        let mut errs = Vec::new();
        let mut names = std::collections::HashSet::new();
        // registers crossed from the input, per node; constants are stage-agnostic
        let mut depth: Vec<Option<u32>> = Vec::with_capacity(self.nodes.len());
        for (id, n) in self.nodes.iter().enumerate() {
            if !names.insert(n.name.as_str()) {
                errs.push(format!("duplicate node name {}", n.name));
            }
            let ins = n.inputs();
            if let Some(&bad) = ins.iter().find(|&&i| i >= id) {
                errs.push(format!("{}: input {bad} is not earlier in topological order (cycle)", n.name));
                depth.push(None);
                continue;
            }
            match n.kind {
                NodeKind::Register { input } => {
                    let src = &self.nodes[input];
                    if !src.is_const() && src.stage + 1 != n.stage {
                        errs.push(format!("{}: stage {} register fed from stage {}", n.name, n.stage, src.stage));
                    }
                }
                _ => {
                    for &i in &ins {
                        let src = &self.nodes[i];
                        if !src.is_const() && src.stage != n.stage {
                            errs.push(format!(
                                "{}: stage {} logic reads stage {} value {}",
                                n.name, n.stage, src.stage, src.name
                            ));
                        }
                    }
                }
            }
            let mut levels = ins.iter().filter_map(|&i| depth[i]);
            let first = levels.next();
            if let Some(f) = first {
                if levels.any(|l| l != f) {
                    errs.push(format!("{}: inputs cross unequal register counts", n.name));
                }
            }
            let base = match n.kind {
                NodeKind::InputCode { .. } => Some(0),
                _ => first,
            };
            depth.push(match n.kind {
                NodeKind::Register { .. } => Some(base.unwrap_or(0) + 1),
                _ => base,
            });
        }
        if self.output >= self.nodes.len() {
            errs.push("output id out of range".into());
        } else if depth[self.output] != Some(self.register_stages()) {
            errs.push(format!(
                "output crosses {:?} register stages, expected {}",
                depth[self.output],
                self.register_stages()
            ));
        }

        let c = self.counts();
        let per_tree = (1usize << self.depth) - 1;
        if c.compares != per_tree * self.tree_count {
            errs.push(format!("{} compare nodes, expected {}", c.compares, per_tree * self.tree_count));
        }
        if c.selects != self.tree_count || c.encoders != self.tree_count {
            errs.push(format!(
                "{} select / {} encode nodes for {} trees",
                c.selects, c.encoders, self.tree_count
            ));
        }
        if c.adds != self.padded_trees - 1 {
            errs.push(format!("{} add nodes, expected {}", c.adds, self.padded_trees - 1));
        }
        let mut adds_per_stage: BTreeMap<u32, usize> = BTreeMap::new();
        for n in &self.nodes {
            if let NodeKind::Add { .. } = n.kind {
                *adds_per_stage.entry(n.stage).or_default() += 1;
            }
        }
        for s in 1..=self.adder_stages {
            let want = self.padded_trees >> s;
            let got = adds_per_stage.get(&s).copied().unwrap_or(0);
            if got != want {
                errs.push(format!("adder stage {s} has {got} adds, expected {want}"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

/// Lowers a compiled forest to a netlist with deterministic node names
/// (`t{tree}_c{slot}`, `t{tree}_tv`, `s{stage}_{index}` ...).
pub fn build_netlist<T: Real>(cf: &CompiledForest<T>) -> Netlist {
    let mut b = Builder::default();
    let inputs: Vec<NodeId> = (0..cf.quant.num_features())
        .map(|f| b.push(format!("in_f{f}"), 0, NodeKind::InputCode { feature: f as u32 }))
        .collect();

    let mut level: Vec<NodeId> = Vec::with_capacity(cf.padded_trees());
    for (ti, tree) in cf.trees.iter().enumerate() {
        let tv = if ti < cf.tree_count {
            let bits: Vec<NodeId> = tree
                .comparators
                .iter()
                .enumerate()
                .map(|(slot, c)| {
                    let rhs = b.rank(c.rank);
                    let lhs = if c.is_padded() { b.rank(0) } else { inputs[c.feature as usize] };
                    b.push(format!("t{ti}_c{slot}"), 0, NodeKind::Compare { lhs, rhs })
                })
                .collect();
            let index = b.push(
                format!("t{ti}_enc"),
                0,
                NodeKind::Encode {
                    tree: ti,
                    bits,
                    encoder: tree.encoder.clone(),
                },
            );
            b.push(
                format!("t{ti}_tv"),
                0,
                NodeKind::Select {
                    tree: ti,
                    index,
                    leaves: tree.leaves.clone(),
                },
            )
        } else {
            b.push(format!("t{ti}_zero"), 0, NodeKind::Const { value: 0 })
        };
        level.push(b.push(format!("s1_{ti}"), 1, NodeKind::Register { input: tv }));
    }

    for s in 1..=cf.adder_stages {
        level = level
            .chunks_exact(2)
            .enumerate()
            .map(|(i, p)| {
                let sum = b.push(format!("a{s}_{i}"), s, NodeKind::Add { lhs: p[0], rhs: p[1] });
                b.push(format!("s{}_{i}", s + 1), s + 1, NodeKind::Register { input: sum })
            })
            .collect();
    }

    Netlist {
        nodes: b.nodes,
        output: level[0],
        bias: cf.base_score_q,
        depth: cf.depth,
        code_bits: cf.quant.width(),
        num_features: cf.quant.num_features(),
        record_bits: cf.quant.bits_per_record(),
        leaf_bits: cf.fxp.leaf_bits,
        acc_bits: cf.fxp.acc_bits,
        tree_count: cf.tree_count,
        padded_trees: cf.padded_trees(),
        adder_stages: cf.adder_stages,
    }
}

#[derive(Default)]
struct Builder {
    nodes: Vec<NetNode>,
    ranks: BTreeMap<u16, NodeId>,
}

impl Builder {
    fn push(&mut self, name: String, stage: u32, kind: NodeKind) -> NodeId {
        self.nodes.push(NetNode { name, stage, kind });
        self.nodes.len() - 1
    }

    fn rank(&mut self, rank: u16) -> NodeId {
        if let Some(&id) = self.ranks.get(&rank) {
            return id;
        }
        let id = self.push(format!("rank{rank}"), 0, NodeKind::ConstRank { rank });
        self.ranks.insert(rank, id);
        id
    }
}

/// Evaluates every node in order; registers pass values through.
pub fn eval_netlist(n: &Netlist, v: &CodeVector) -> Fixed {
    let mut val = vec![0i64; n.nodes.len()];
    for (id, node) in n.nodes.iter().enumerate() {
        val[id] = match &node.kind {
            NodeKind::InputCode { feature } => i64::from(v.0[*feature as usize]),
            NodeKind::ConstRank { rank } => i64::from(*rank),
            NodeKind::Compare { lhs, rhs } => i64::from(val[*lhs] < val[*rhs]),
            NodeKind::Encode { bits, encoder, .. } => {
                let word = bits.iter().enumerate().fold(0u64, |w, (i, &b)| w | (val[b] as u64) << i);
                encoder.lookup(word) as i64
            }
            NodeKind::Select { index, leaves, .. } => i64::from(leaves[val[*index] as usize]),
            NodeKind::Const { value } => *value,
            NodeKind::Add { lhs, rhs } => val[*lhs] + val[*rhs],
            NodeKind::Register { input } => val[*input],
        };
    }
    Fixed(val[n.output] + n.bias)
}
