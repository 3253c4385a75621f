//! Verilog snapshots. `GOLDEN_UPDATE=1 cargo test --test golden` rewrites them.

use std::fs;
use std::path::PathBuf;

use gbdt_stream::netlist::PortWidths;
use gbdt_stream::{build_netlist, emit_verilog, lint_structure};
use sha2::{Digest, Sha256};

use gbdt_stream_verify::fixtures::{default_model, small_model};

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

fn check_or_update(name: &str, actual: &str) {
    let path = golden_dir().join(name);
    if std::env::var_os("GOLDEN_UPDATE").is_some() {
        fs::write(&path, actual).unwrap();
        return;
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(expected == actual, "{name} differs from the emitted text");
}

#[test]
fn small_model_verilog() {
    let n = build_netlist(&small_model());
    let text = emit_verilog(&n);
    assert!(lint_structure(&text, &PortWidths::from(&n)).is_clean());
    check_or_update("small_d2.v", &text);
}

#[test]
fn small_model_netlist_json() {
    check_or_update("small_d2.netlist.json", &build_netlist(&small_model()).to_json());
}

#[test]
fn default_model_digest() {
    let text = emit_verilog(&build_netlist(&default_model()));
    let digest = hex::encode(Sha256::digest(text.as_bytes()));
    check_or_update("default_100.v.sha256", &format!("{digest}\n"));
}
