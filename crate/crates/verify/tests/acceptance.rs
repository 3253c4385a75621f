//! Prints one PASS/FAIL line per criterion; exits nonzero if any gating
//! criterion fails. Criterion 7 only reports.

use std::path::PathBuf;

use gbdt_stream_verify::criteria::{c1_oracle, c2_netlist, c3_analytic_numbers, c4_calibration, c5_pipeline, c6_streaming, c7_desk_scale, Verdict};

type Check = Box<dyn Fn() -> Verdict>;

fn main() {
    let golden = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden");
    let gating: [(&str, Check); 6] = [
        ("1 oracle equivalence", Box::new(c1_oracle)),
        ("2 netlist certification", Box::new(move || c2_netlist(&golden))),
        ("3 analytic model numbers", Box::new(c3_analytic_numbers)),
        ("4 calibration", Box::new(c4_calibration)),
        ("5 pipeline properties", Box::new(c5_pipeline)),
        ("6 streaming runtime correctness", Box::new(c6_streaming)),
    ];
    let mut failed = Vec::new();
    for (name, run) in &gating {
        let v = run();
        println!("criterion {name}: {} ({})", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        for n in &v.notes {
            println!("    {n}");
        }
        if !v.pass {
            failed.push(*name);
        }
    }
    println!("criterion 7 desk-scale performance: REPORT ({})", c7_desk_scale());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
