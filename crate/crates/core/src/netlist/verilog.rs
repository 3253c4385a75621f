//! Verilog text for a netlist: one module per real tree, a registered adder
//! tree, and a top module with a valid-only streaming handshake.

use std::fmt::Write;

use super::{NetNode, Netlist, NodeKind};

pub const ADDER_MODULE: &str = "adder_tree";
pub const TOP_MODULE: &str = "xgb_top";

/// Deepest tree whose encoder is written out row by row (`2^(2^D-1)` rows);
/// deeper trees get one `casez` pattern per reachable leaf.
pub const FULL_CASE_MAX_DEPTH: usize = 3;

/// Emission is a pure function of the netlist.
pub fn emit_verilog(n: &Netlist) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "// generated by gbdt-stream");
    let _ = writeln!(
        out,
        "// trees={} padded={} depth={} features={} code_bits={} adder_stages={}",
        n.tree_count, n.padded_trees, n.depth, n.num_features, n.code_bits, n.adder_stages
    );
    out.push_str("`default_nettype none\n\n");
    for t in 0..n.tree_count {
        emit_tree(&mut out, n, t);
    }
    emit_adder(&mut out, n);
    emit_top(&mut out, n);
    out
}

fn tree_tables(n: &Netlist, tree: usize) -> (&NodeKind, &NodeKind) {
    let enc = n.find(&format!("t{tree}_enc")).expect("tree encoder node");
    let sel = n.find(&format!("t{tree}_tv")).expect("tree select node");
    (&n.nodes[enc].kind, &n.nodes[sel].kind)
}

fn operand(n: &Netlist, node: &NetNode) -> String {
    let w = n.code_bits;
    match node.kind {
        NodeKind::InputCode { feature } => {
            let lo = feature * w;
            format!("rec[{}:{}]", lo + w - 1, lo)
        }
        NodeKind::ConstRank { rank } => format!("{w}'d{rank}"),
        _ => unreachable!("comparator operand is an input code or a rank"),
    }
}

fn emit_tree(out: &mut String, n: &Netlist, t: usize) {
    let slots = (1usize << n.depth) - 1;
    let d = n.depth;
    let lb = n.leaf_bits;
    let _ = writeln!(out, "module tree_{t} (");
    let _ = writeln!(out, "    input  wire [{}:0] rec,", n.record_bits - 1);
    let _ = writeln!(out, "    output reg  [{}:0] tv", lb - 1);
    out.push_str(");\n");
    for s in 0..slots {
        let c = &n.nodes[n.find(&format!("t{t}_c{s}")).expect("compare node")];
        let NodeKind::Compare { lhs, rhs } = c.kind else {
            unreachable!("t{t}_c{s} is a compare")
        };
        let _ = writeln!(out, "    wire c{s} = ({} < {});", operand(n, &n.nodes[lhs]), operand(n, &n.nodes[rhs]));
    }
    let cat: Vec<String> = (0..slots).rev().map(|s| format!("c{s}")).collect();
    let _ = writeln!(out, "    wire [{}:0] bits = {{{}}};", slots - 1, cat.join(", "));
    let _ = writeln!(out, "    reg  [{}:0] idx;", d - 1);

    let (enc, sel) = tree_tables(n, t);
    let (NodeKind::Encode { encoder, .. }, NodeKind::Select { leaves, .. }) = (enc, sel) else {
        unreachable!("encoder and select nodes")
    };
    out.push_str("    always @* begin\n");
    match encoder.table().filter(|_| d <= FULL_CASE_MAX_DEPTH) {
        Some(table) => {
            out.push_str("        case (bits)\n");
            for (b, &leaf) in table.iter().enumerate() {
                let _ = writeln!(out, "            {slots}'d{b}: idx = {d}'d{leaf};");
            }
        }
        None => {
            out.push_str("        casez (bits)\n");
            let live = encoder.live_mask();
            for leaf in 0..1usize << d {
                let path = encoder.path(leaf);
                // a padded slot never reads true
                if path.iter().any(|&(s, left)| left && live >> s & 1 == 0) {
                    continue;
                }
                let mut pat = vec!['?'; slots];
                for (s, left) in path {
                    if live >> s & 1 == 1 {
                        pat[slots - 1 - s] = if left { '1' } else { '0' };
                    }
                }
                let pat: String = pat.into_iter().collect();
                let _ = writeln!(out, "            {slots}'b{pat}: idx = {d}'d{leaf};");
            }
            let _ = writeln!(out, "            default: idx = {d}'d0;");
        }
    }
    out.push_str("        endcase\n    end\n");
    out.push_str("    always @* begin\n        case (idx)\n");
    for (i, v) in leaves.iter().enumerate() {
        let _ = writeln!(out, "            {d}'d{i}: tv = {lb}'h{:08x};", *v as u32);
    }
    out.push_str("        endcase\n    end\nendmodule\n\n");
}

fn emit_adder(out: &mut String, n: &Netlist) {
    let (lb, ab) = (n.leaf_bits, n.acc_bits);
    let _ = writeln!(out, "module {ADDER_MODULE} (");
    out.push_str("    input  wire clk,\n");
    if n.tree_count > 0 {
        let _ = writeln!(out, "    input  wire [{}:0] tvs,", n.tree_count as u32 * lb - 1);
    }
    let _ = writeln!(out, "    output wire [{}:0] sum", ab - 1);
    out.push_str(");\n");
    let mut width = n.padded_trees;
    for s in 1..=n.adder_stages + 1 {
        for i in 0..width {
            let _ = writeln!(out, "    reg  [{}:0] s{s}_{i};", ab - 1);
        }
        width /= 2;
    }
    out.push_str("    always @(posedge clk) begin\n");
    for i in 0..n.padded_trees {
        if i < n.tree_count {
            let lo = i as u32 * lb;
            let hi = lo + lb - 1;
            let _ = writeln!(out, "        s1_{i} <= {{{{{}{{tvs[{hi}]}}}}, tvs[{hi}:{lo}]}};", ab - lb);
        } else {
            let _ = writeln!(out, "        s1_{i} <= {ab}'d0;");
        }
    }
    let mut width = n.padded_trees;
    for s in 1..=n.adder_stages {
        width /= 2;
        for i in 0..width {
            let _ = writeln!(out, "        s{}_{i} <= s{s}_{} + s{s}_{};", s + 1, 2 * i, 2 * i + 1);
        }
    }
    out.push_str("    end\n");
    let _ = writeln!(out, "    assign sum = s{}_0;", n.adder_stages + 1);
    out.push_str("endmodule\n\n");
}

fn emit_top(out: &mut String, n: &Netlist) {
    let rb = n.record_bits;
    let (lb, ab) = (n.leaf_bits, n.acc_bits);
    let lat = n.latency_cycles();
    let _ = writeln!(out, "module {TOP_MODULE} (");
    out.push_str("    input  wire clk,\n    input  wire rst,\n    input  wire in_valid,\n");
    let _ = writeln!(out, "    input  wire [{}:0] in_data,", rb - 1);
    out.push_str("    output wire out_valid,\n");
    let _ = writeln!(out, "    output wire [{}:0] out_data", ab - 1);
    out.push_str(");\n");
    let _ = writeln!(out, "    reg  [{}:0] rec_q;", rb - 1);
    let _ = writeln!(out, "    reg  [{}:0] valid_q;", lat - 1);
    for t in 0..n.tree_count {
        let _ = writeln!(out, "    wire [{}:0] tv_{t};", lb - 1);
    }
    let _ = writeln!(out, "    wire [{}:0] sum;", ab - 1);
    out.push_str("    always @(posedge clk) begin\n        rec_q <= in_data;\n");
    out.push_str("        if (rst)\n");
    let _ = writeln!(out, "            valid_q <= {lat}'d0;");
    out.push_str("        else\n");
    if lat > 1 {
        let _ = writeln!(out, "            valid_q <= {{valid_q[{}:0], in_valid}};", lat - 2);
    } else {
        out.push_str("            valid_q <= in_valid;\n");
    }
    out.push_str("    end\n");
    for t in 0..n.tree_count {
        let _ = writeln!(out, "    tree_{t} u_tree_{t} (.rec(rec_q), .tv(tv_{t}));");
    }
    if n.tree_count > 0 {
        let cat: Vec<String> = (0..n.tree_count).rev().map(|t| format!("tv_{t}")).collect();
        let _ = writeln!(out, "    {ADDER_MODULE} u_adder (.clk(clk), .tvs({{{}}}), .sum(sum));", cat.join(", "));
    } else {
        let _ = writeln!(out, "    {ADDER_MODULE} u_adder (.clk(clk), .sum(sum));");
    }
    let _ = writeln!(out, "    assign out_valid = valid_q[{}];", lat - 1);
    let _ = writeln!(out, "    assign out_data = sum + {ab}'h{:016x};", n.bias as u64);
    out.push_str("endmodule\n\n`default_nettype wire\n");
}
