//! Interprets the emitted per-tree modules line by line and checks every
//! tree value against the datapath, reading compare operands from packed
//! records.

use gbdt_stream::datapath::tpu_eval;
use gbdt_stream::model_ir::{gen_synthetic, SyntheticSpec};
use gbdt_stream::{build_netlist, compile_model, emit_verilog, pack_records, CompiledForest64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gbdt_stream_verify::fixtures::{default_model, random_codes};

enum Operand {
    Slice(usize, usize),
    Lit(u64),
}

#[derive(Default)]
struct TreeModule {
    compares: Vec<(Operand, Operand)>,
    /// Pattern over `bits` (MSB first, `?` = any) and selected index.
    rows: Vec<(String, usize)>,
    default: Option<usize>,
    leaves: Vec<u32>,
}

fn operand(s: &str) -> Operand {
    let s = s.trim();
    if let Some(rest) = s.strip_prefix("rec[") {
        let (hi, lo) = rest.trim_end_matches(']').split_once(':').unwrap();
        Operand::Slice(hi.parse().unwrap(), lo.parse().unwrap())
    } else {
        let (_, v) = s.split_once("'d").unwrap();
        Operand::Lit(v.parse().unwrap())
    }
}

fn sized(s: &str) -> (char, String) {
    let (_, rest) = s.trim().split_once('\'').unwrap();
    let mut cs = rest.chars();
    (cs.next().unwrap(), cs.collect())
}

fn parse_trees(text: &str) -> Vec<TreeModule> {
    let mut trees = Vec::new();
    let mut cur: Option<TreeModule> = None;
    let mut slots = 0;
    for line in text.lines().map(str::trim) {
        if line.starts_with("module tree_") {
            cur = Some(TreeModule::default());
        } else if line == "endmodule" {
            if let Some(t) = cur.take() {
                trees.push(t);
            }
        }
        let Some(t) = cur.as_mut() else { continue };
        if let Some(rest) = line.strip_prefix("wire c") {
            let (_, expr) = rest.split_once('=').unwrap();
            let expr = expr.trim().trim_start_matches('(').trim_end_matches(");");
            let (l, r) = expr.split_once(" < ").unwrap();
            t.compares.push((operand(l), operand(r)));
        } else if line.starts_with("wire [") && line.contains("bits =") {
            slots = t.compares.len();
        } else if let Some(rest) = line.strip_prefix("default: idx = ") {
            t.default = Some(sized(rest.trim_end_matches(';')).1.parse().unwrap());
        } else if let Some((lhs, rhs)) = line.split_once(": idx = ") {
            let (base, digits) = sized(lhs);
            let pat = match base {
                'd' => format!("{:0slots$b}", digits.parse::<u64>().unwrap()),
                'b' => digits,
                other => panic!("unexpected base {other}"),
            };
            t.rows.push((pat, sized(rhs.trim_end_matches(';')).1.parse().unwrap()));
        } else if let Some((_, rhs)) = line.split_once(": tv = ") {
            let (_, hex) = sized(rhs.trim_end_matches(';'));
            t.leaves.push(u32::from_str_radix(&hex, 16).unwrap());
        }
    }
    trees
}

fn read(rec: &[u8], op: &Operand) -> u64 {
    match *op {
        Operand::Lit(v) => v,
        Operand::Slice(hi, lo) => (lo..=hi).rev().fold(0, |acc, bit| acc << 1 | u64::from(rec[bit / 8] >> (bit % 8) & 1)),
    }
}

fn tree_value(t: &TreeModule, rec: &[u8]) -> u32 {
    let bits: String = t
        .compares
        .iter()
        .rev()
        .map(|(l, r)| if read(rec, l) < read(rec, r) { '1' } else { '0' })
        .collect();
    let hit = t
        .rows
        .iter()
        .find(|(pat, _)| pat.chars().zip(bits.chars()).all(|(p, b)| p == '?' || p == b))
        .map(|&(_, idx)| idx)
        .or(t.default)
        .expect("no case row matched");
    t.leaves[hit]
}

fn check(cf: &CompiledForest64, inputs: usize, seed: u64) {
    let text = emit_verilog(&build_netlist(cf));
    let trees = parse_trees(&text);
    assert_eq!(trees.len(), cf.tree_count);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..inputs {
        let v = random_codes(&mut rng, cf);
        let rec = pack_records(std::slice::from_ref(&v), &cf.quant);
        for (t, m) in trees.iter().enumerate() {
            assert_eq!(tree_value(m, &rec) as i32, tpu_eval(&cf.trees[t], &v).1, "tree {t}");
        }
    }
}

#[test]
fn default_geometry_case_tables() {
    check(&default_model(), 300, 1);
}

#[test]
fn every_depth_with_shallow_leaves() {
    for depth in 1..=6 {
        for seed in 0..3 {
            let spec = SyntheticSpec {
                trees: 5,
                depth,
                raw_features: 40,
                used_features: 12,
                thresholds_per_feature: 15,
                leaf_probability: 0.3,
                seed,
            };
            check(&compile_model(&gen_synthetic(&spec), depth, 4).unwrap(), 200, seed);
        }
    }
}

#[test]
fn wide_codes() {
    let spec = SyntheticSpec::new(6, 3, 30, 200, 3);
    check(&compile_model(&gen_synthetic(&spec), 3, 8).unwrap(), 200, 3);
}
