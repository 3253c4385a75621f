//! Acceptance criteria 1 to 7. Each gating check returns a [`Verdict`];
//! criterion 7 returns a report line only.

use std::fs;
use std::path::Path;
use std::time::Instant;

use gbdt_stream::datapath::{quantize_leaf, tpu_eval};
use gbdt_stream::model_ir::MAX_DEPTH;
use gbdt_stream::netlist::PortWidths;
use gbdt_stream::perf_model::{mm_schedule, MmPhases, MEASURED_FPGA_LADDER};
use gbdt_stream::stream_engine::{random_packed, score_sequential};
use gbdt_stream::{
    analytic_latency, analytic_throughput, build_netlist, calibrate, compile_model, cycle_sim, emit_verilog, eval_netlist, lint_structure,
    run_streaming, score, score_reference, PerfConfig64, StreamConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::fixtures::{default_model, random_codes, random_forest, random_raw, small_model};

pub struct Verdict {
    pub pass: bool,
    pub detail: String,
    /// Extra report lines printed under the verdict.
    pub notes: Vec<String>,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
        notes: Vec::new(),
    }
}

pub fn c1_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xc1);
    let (mut leaf_checks, mut worst_ratio) = (0usize, 0.0f64);
    for i in 0..1000u64 {
        let forest = random_forest(&mut rng, i, 100, 3);
        let depth = rng.gen_range(forest.max_depth().max(1)..=3);
        let cf = compile_model(&forest, depth, 4).unwrap();
        let bound = (cf.padded_trees() + 1) as f64 * 2f64.powi(-25);
        for _ in 0..100 {
            let raw = random_raw(&mut rng, forest.num_raw_features);
            let v = cf.encode_raw(&raw).unwrap();
            for (t, tree) in forest.trees.iter().enumerate() {
                let hit = tree.traverse(&raw);
                let (index, value) = tpu_eval(&cf.trees[t], &v);
                if !hit.covers(index, depth) || Some(value) != quantize_leaf(hit.value) {
                    return verdict(false, format!("forest {i} tree {t}: leaf {index} vs float path {hit:?}"));
                }
                leaf_checks += 1;
            }
            let err = (score(&cf, &v).to_f64() - score_reference(&forest, &raw).unwrap()).abs();
            if err > bound {
                return verdict(false, format!("forest {i}: margin error {err:e} over bound {bound:e}"));
            }
            worst_ratio = worst_ratio.max(err / bound);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        secs < 60.0,
        format!("1000 forests x 100 inputs, {leaf_checks} leaf selections identical, worst margin error {worst_ratio:.3} of bound, {secs:.1} s"),
    )
}

/// `golden` holds `small_d2.v` and `default_100.v.sha256`.
pub fn c2_netlist(golden: &Path) -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xc2);
    for i in 0..100u64 {
        let forest = random_forest(&mut rng, 1000 + i, 100, MAX_DEPTH);
        let cf = compile_model(&forest, forest.max_depth().max(1), 4).unwrap();
        let n = build_netlist(&cf);
        if let Err(e) = n.check() {
            return verdict(false, format!("forest {i}: netlist check: {}", e.join("; ")));
        }
        let lint = lint_structure(&emit_verilog(&n), &PortWidths::from(&n));
        if !lint.is_clean() {
            return verdict(false, format!("forest {i}: lint: {lint}"));
        }
        for j in 0..1000 {
            let v = random_codes(&mut rng, &cf);
            if eval_netlist(&n, &v) != score(&cf, &v) {
                return verdict(false, format!("forest {i} input {j}: netlist and datapath disagree"));
            }
        }
    }
    let small = emit_verilog(&build_netlist(&small_model()));
    if fs::read_to_string(golden.join("small_d2.v")).ok().as_deref() != Some(small.as_str()) {
        return verdict(false, "small_d2.v snapshot mismatch");
    }
    let digest = hex::encode(Sha256::digest(emit_verilog(&build_netlist(&default_model())).as_bytes()));
    if fs::read_to_string(golden.join("default_100.v.sha256")).ok().as_deref().map(str::trim) != Some(digest.as_str()) {
        return verdict(false, "default_100 digest mismatch");
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        secs < 60.0,
        format!("100 forests x 1000 inputs bit-identical, lint clean, snapshots match, {secs:.1} s"),
    )
}

pub fn c3_analytic_numbers() -> Verdict {
    let def = PerfConfig64::default();
    let ceiling = analytic_throughput(&def, 100_000).unwrap().ceiling;
    let bw = PerfConfig64 {
        bw_h2c: 4.21e9,
        bw_c2h: 4.21e9,
        ..def
    };
    let thr_100k = analytic_throughput(&bw, 100_000).unwrap().throughput;
    let ovh = PerfConfig64 {
        call_overhead_s: 455e-6,
        ..def
    };
    let thr_1 = analytic_throughput(&ovh, 1).unwrap().throughput;
    let lat = analytic_latency(&def);
    let stages = build_netlist(&default_model()).latency_cycles();
    let pass = ceiling == 250e6
        && (thr_100k / 65.8e6 - 1.0).abs() <= 0.01
        && (thr_1 / 2.2e3 - 1.0).abs() <= 0.10
        && lat.core_cycles == 9
        && stages == 9
        && (lat.core_s - 36e-9).abs() <= f64::EPSILON * 36e-9;
    verdict(
        pass,
        format!(
            "ceiling {ceiling:.4e}, bw 4.21 GB/s -> {thr_100k:.4e} inf/s, 455 us -> {thr_1:.1} inf/s, core {} cycles = {:.1} ns, netlist {stages} cycles",
            lat.core_cycles,
            lat.core_s * 1e9
        ),
    )
}

pub fn c4_calibration() -> Verdict {
    let pts = [MEASURED_FPGA_LADDER[0], MEASURED_FPGA_LADDER[5]];
    let cal = calibrate(&pts).unwrap();
    let c_us = cal.call_overhead_s * 1e6;
    let bw_gb = cal.bw_eff / 1e9;
    let mut notes = vec![format!(
        "two-point fit: call_overhead {c_us:.1} us (want 440..470), bw_eff {bw_gb:.3} GB/s (want 4.0..4.4)"
    )];
    for &(b, m) in &MEASURED_FPGA_LADDER {
        let p = cal.predict(b);
        notes.push(format!(
            "batch {b:>6}: measured {m:>10.4e}  fitted {p:>10.4e}  residual {:+7.1}%",
            (p - m) / m * 100.0
        ));
    }
    let full = calibrate(&MEASURED_FPGA_LADDER).unwrap();
    notes.push(format!(
        "six-row fit: call_overhead {:.1} us, bw_eff {:.3} GB/s",
        full.call_overhead_s * 1e6,
        full.bw_eff / 1e9
    ));
    let pass = (440.0..=470.0).contains(&c_us) && (4.0..=4.4).contains(&bw_gb);
    Verdict {
        notes,
        ..verdict(pass, format!("call_overhead {c_us:.1} us, bw_eff {bw_gb:.3} GB/s"))
    }
}

pub fn c5_pipeline() -> Verdict {
    let free = PerfConfig64 {
        bw_h2c: 1e15,
        bw_c2h: 1e15,
        ..Default::default()
    };
    let mut notes = Vec::new();
    for ii in [1u32, 2, 4] {
        let cfg = PerfConfig64 { ii, ..free };
        let rep = cycle_sim(&cfg, 10_000).unwrap();
        let steady = cfg.clock_hz / rep.issue_interval_cycles.unwrap();
        if rep.first_output_cycle != Some(f64::from(cfg.pipeline_depth)) || steady != cfg.clock_hz / f64::from(ii) {
            return verdict(false, format!("ii {ii}: first {:?}, steady {steady:e}", rep.first_output_cycle));
        }
    }
    notes.push("first output at cycle 10, steady clock/II for II 1,2,4".to_string());
    for fifo_depth in [1u32, 4, 16] {
        let base = cycle_sim(&PerfConfig64 { fifo_depth, ..free }, 5000).unwrap();
        for fifo_extra in 0..=fifo_depth {
            let rep = cycle_sim(
                &PerfConfig64 {
                    fifo_depth,
                    fifo_extra,
                    ..free
                },
                5000,
            )
            .unwrap();
            let dl = rep.first_output_cycle.unwrap() - base.first_output_cycle.unwrap();
            if !(0.0..=f64::from(fifo_depth)).contains(&dl) || rep.issue_interval_cycles != base.issue_interval_cycles {
                return verdict(
                    false,
                    format!("fifo depth {fifo_depth} extra {fifo_extra}: latency +{dl}, interval changed"),
                );
            }
        }
    }
    notes.push("FIFO adds <= depth cycles, interval unchanged".to_string());
    let mut rng = ChaCha8Rng::seed_from_u64(0xc5);
    for _ in 0..200 {
        let phases: Vec<MmPhases<f64>> = (0..rng.gen_range(1..50))
            .map(|_| MmPhases {
                copy_in_s: rng.gen_range(0.0..1.0),
                compute_s: rng.gen_range(0.0..1.0),
                copy_out_s: rng.gen_range(0.0..1.0),
            })
            .collect();
        let s = mm_schedule(&phases).speedup();
        if s > 3.0 + 1e-12 {
            return verdict(false, format!("memory-mapped speedup {s} over 3"));
        }
    }
    let equal: Vec<MmPhases<f64>> = (0..200)
        .map(|_| MmPhases {
            copy_in_s: 1.0,
            compute_s: 1.0,
            copy_out_s: 1.0,
        })
        .collect();
    let s = mm_schedule(&equal).speedup();
    notes.push(format!("mm speedup <= 3, equalized {s:.3}"));
    verdict((s / 3.0 - 1.0).abs() <= 0.05, notes.join("; "))
}

pub fn c6_streaming() -> Verdict {
    let cf = default_model();
    let packed = random_packed(&cf, 100_000, 0xc6);
    let rb = cf.bytes_per_record();
    let mut calls_100k = 0;
    for batch in [1usize, 10, 15_000, 100_000] {
        let input = &packed[..batch * rb];
        let expected = score_sequential(&cf, input).unwrap();
        for fifo_depth in [1usize, 16] {
            let cfg = StreamConfig {
                fifo_depth,
                ..Default::default()
            };
            let (out, stats) = run_streaming(&cf, input, &cfg).unwrap();
            if out != expected || stats.records_out != batch {
                return verdict(false, format!("batch {batch} fifo {fifo_depth}: output differs from sequential scoring"));
            }
            if batch == 100_000 {
                calls_100k = stats.calls.len();
            }
        }
    }
    verdict(
        calls_100k == 7,
        format!("batches 1, 10, 15000, 100000 byte-identical at fifo 1 and 16, 100000 records in {calls_100k} calls"),
    )
}

pub fn c7_desk_scale() -> String {
    let cf = default_model();
    let packed = random_packed(&cf, 100_000, 0xc7);
    let cfg = StreamConfig::default();
    let best = |n: usize, reps: usize| {
        (0..reps)
            .map(|_| run_streaming(&cf, &packed[..n * cf.bytes_per_record()], &cfg).unwrap().1.throughput)
            .fold(0.0f64, f64::max)
    };
    let one = best(1, 20);
    let big = best(100_000, 3);
    let cpus = std::thread::available_parallelism().map_or(1, usize::from);
    format!(
        "batch 1 {one:.3e} inf/s, batch 100000 {big:.3e} inf/s, ratio {:.0}x (target >= 100x: {}), {cpus} cpu(s)",
        big / one,
        if big / one >= 100.0 { "met" } else { "not met" }
    )
}
