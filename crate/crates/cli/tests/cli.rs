use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gbdt_stream::datapath::to_probability;
use gbdt_stream::{parse_model, score_reference, CompiledForest64, Forest64};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gbdt-stream"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Fixture {
            dir: TempDir::new().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Default synthetic model compiled at depth 3, width 4.
    fn compiled(&self) -> (PathBuf, PathBuf) {
        let model = self.path("model.json");
        let cf = self.path("cf.json");
        ok(&["gen-model", "-o", p(&model)]);
        ok(&["compile", p(&model), "-o", p(&cf)]);
        (model, cf)
    }

    /// `rows` raw inputs over 1146 features on the threshold grid and off it.
    fn raw_csv(&self, rows: usize) -> PathBuf {
        let mut text = String::new();
        for r in 0..rows {
            let row: Vec<String> = (0..1146)
                .map(|i| {
                    let k = (i * 37 + r * 101 + i * r * 7) % 1024;
                    let v = (k as f64 - 512.0) / 64.0;
                    (if (i + r) % 3 == 0 { v + 1.0 / 256.0 } else { v }).to_string()
                })
                .collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        let path = self.path(&format!("raw{rows}.csv"));
        fs::write(&path, text).unwrap();
        path
    }
}

fn lines(s: &str) -> Vec<f64> {
    s.lines().map(|l| l.parse().unwrap()).collect()
}

#[test]
fn gen_model_defaults_and_determinism() {
    let fx = Fixture::new();
    let (a, b, c) = (fx.path("a.json"), fx.path("b.json"), fx.path("c.json"));
    ok(&["gen-model", "-o", p(&a)]);
    ok(&["gen-model", "-o", p(&b)]);
    ok(&["gen-model", "--seed", "2", "-o", p(&c)]);
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert_ne!(text, fs::read_to_string(&c).unwrap());
    let f: Forest64 = parse_model(&text).unwrap();
    assert_eq!(f.trees.len(), 100);
    assert_eq!(f.max_depth(), 3);
    assert_eq!(f.used_features().len(), 112);
    assert_eq!(code(&["gen-model", "--thresholds", "0", "-o", p(&c)]), 2);
}

#[test]
fn compile_default_geometry_and_idempotence() {
    let fx = Fixture::new();
    let (model, cf) = fx.compiled();
    let first = fs::read(&cf).unwrap();
    let stdout = ok(&["compile", p(&model), "-o", p(&cf)]);
    assert!(stdout.contains("112 of 1146 features"), "{stdout}");
    assert!(stdout.contains("64-byte records"), "{stdout}");
    assert_eq!(fs::read(&cf).unwrap(), first);
    let c = CompiledForest64::from_json(&String::from_utf8(first).unwrap()).unwrap();
    assert_eq!((c.tree_count, c.padded_trees(), c.adder_stages), (100, 128, 7));
    let fm: serde_json::Value = serde_json::from_str(&fs::read_to_string(fx.path("cf.features.json")).unwrap()).unwrap();
    assert_eq!(fm["num_features"], 112);
    assert_eq!(fm["dense_to_raw"].as_array().unwrap().len(), 112);
}

#[test]
fn exit_classes() {
    let fx = Fixture::new();
    let model = fx.path("dense.json");
    // 20 thresholds per feature over 5 features cannot fit 4-bit codes
    ok(&[
        "gen-model",
        "--raw-features",
        "5",
        "--used-features",
        "5",
        "--thresholds",
        "20",
        "-o",
        p(&model),
    ]);
    let out = run(&["compile", p(&model), "--width", "4", "-o", p(&fx.path("x.json"))]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("compile"));
    ok(&["compile", p(&model), "--width", "5", "-o", p(&fx.path("x.json"))]);

    let bad = fx.path("bad.json");
    fs::write(&bad, "{\"trees\": [{\"nodeid\": 0}]}").unwrap();
    assert_eq!(code(&["compile", p(&bad), "-o", p(&fx.path("y.json"))]), 3);
    assert_eq!(code(&["compile", p(&fx.path("missing.json")), "-o", p(&fx.path("y.json"))]), 6);
    assert_eq!(code(&["compile", p(&model), "--depth", "9"]), 2);

    let (_, cf) = fx.compiled();
    let csv = fx.path("bad.csv");
    fs::write(&csv, "1,2,oops\n").unwrap();
    assert_eq!(code(&["score", p(&cf), p(&csv)]), 5);
    let short = fx.path("short.csv");
    fs::write(&short, "1,2,3\n").unwrap();
    assert_eq!(code(&["score", p(&cf), p(&short)]), 5);
    let bin = fx.path("odd.bin");
    fs::write(&bin, [0u8; 100]).unwrap();
    assert_eq!(code(&["score", p(&cf), p(&bin)]), 5);
    let broken = fx.path("broken.json");
    fs::write(&broken, "{}").unwrap();
    assert_eq!(code(&["score", p(&broken), p(&csv)]), 5);
}

#[test]
fn score_matches_reference() {
    let fx = Fixture::new();
    let (model, cf) = fx.compiled();
    let forest: Forest64 = parse_model(&fs::read_to_string(&model).unwrap()).unwrap();
    let one = fx.raw_csv(1);
    assert_eq!(lines(&ok(&["score", p(&cf), p(&one), "--raw"])).len(), 1);

    let csv = fx.raw_csv(40);
    let margins = lines(&ok(&["score", p(&cf), p(&csv), "--raw"]));
    let rows: Vec<Vec<f64>> = fs::read_to_string(&csv)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    let bound = 129.0 * 2f64.powi(-25);
    for (m, r) in margins.iter().zip(&rows) {
        assert!((m - score_reference(&forest, r).unwrap()).abs() <= bound);
    }
    let probs = lines(&ok(&["score", p(&cf), p(&csv), "--raw", "--probability"]));
    for (pr, m) in probs.iter().zip(&margins) {
        assert_eq!(*pr, to_probability(*m));
    }

    let packed = fx.path("in.bin");
    ok(&["encode", p(&cf), p(&csv), "--raw", "-o", p(&packed)]);
    assert_eq!(fs::metadata(&packed).unwrap().len(), 40 * 64);
    let out = fx.path("margins.txt");
    let stats = fx.path("stats.json");
    ok(&["score", p(&cf), p(&packed), "-o", p(&out), "--stats", p(&stats)]);
    assert_eq!(lines(&fs::read_to_string(&out).unwrap()), margins);
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(&stats).unwrap()).unwrap();
    assert_eq!(s["records_out"], 40);
    let res = fx.path("res.bin");
    ok(&["score", p(&cf), p(&packed), "--binary", "-o", p(&res)]);
    // 40 results fill 5 words of 8
    assert_eq!(fs::metadata(&res).unwrap().len(), 5 * 64);
}

#[test]
fn verilog_emission_and_lint() {
    let fx = Fixture::new();
    let (_, cf) = fx.compiled();
    let v = fx.path("out.v");
    let nl = fx.path("netlist.json");
    let stdout = ok(&["emit-verilog", p(&cf), "-o", p(&v), "--netlist-json", p(&nl)]);
    assert!(stdout.contains("102 modules"), "{stdout}");
    assert!(stdout.contains("8 register stages"), "{stdout}");
    let first = fs::read(&v).unwrap();
    ok(&["emit-verilog", p(&cf), "-o", p(&v)]);
    assert_eq!(fs::read(&v).unwrap(), first);
    assert!(ok(&["lint", p(&v), p(&cf)]).contains("clean"));
    let text = String::from_utf8(first).unwrap();
    let cut = fx.path("cut.v");
    fs::write(&cut, &text[..text.rfind("endmodule").unwrap()]).unwrap();
    assert_ne!(code(&["lint", p(&cut), p(&cf)]), 0);
    let narrow = fx.path("narrow.v");
    fs::write(&narrow, text.replace("[511:0] rec", "[255:0] rec")).unwrap();
    assert_ne!(code(&["lint", p(&narrow), p(&cf)]), 0);
    let n: serde_json::Value = serde_json::from_str(&fs::read_to_string(&nl).unwrap()).unwrap();
    assert_eq!(n["adder_stages"], 7);
}

#[test]
fn stream_bench_json_and_csv_agree() {
    let fx = Fixture::new();
    let (_, cf) = fx.compiled();
    let (json, csv) = (fx.path("b.json"), fx.path("b.csv"));
    let stdout = ok(&[
        "stream-bench",
        p(&cf),
        "--batches",
        "1,10,20000",
        "--repeats",
        "2",
        "--json",
        p(&json),
        "--csv",
        p(&csv),
    ]);
    assert_eq!(stdout.lines().count(), 4);
    let rows: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    let mut rdr = csv::Reader::from_path(&csv).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let recs: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(recs.len(), 3);
    for (j, r) in rows.iter().zip(&recs) {
        for (h, field) in headers.iter().zip(r.iter()) {
            assert_eq!(j[h].as_f64().unwrap(), field.parse::<f64>().unwrap(), "{h}");
        }
    }
    assert_eq!(rows[2]["calls"], 2);
    assert_eq!(rows[0]["repeats"], 2);
}

#[test]
fn simulate_and_calibrate() {
    let fx = Fixture::new();
    let out = ok(&["simulate"]);
    assert!(out.contains("ceiling 2.500000e8"), "{out}");
    assert!(out.contains("compute"));

    let measured = fx.path("table.csv");
    fs::write(&measured, "1,2.2e3\n10,2e4\n100,1.9e5\n1000,1.75e6\n10000,6.55e6\n100000,6.58e7\n").unwrap();
    let out = ok(&["simulate", "--measured-preset", "--measured", p(&measured)]);
    assert!(out.contains("host_call_overhead"), "{out}");
    assert!(out.contains("call_overhead_s"));
    assert_eq!(out.lines().filter(|l| l.trim_end().ends_with('%')).count(), 6);

    let cfg = fx.path("perf.json");
    fs::write(&cfg, "{\"ii\": 2}").unwrap();
    let sweep = fx.path("sweep.csv");
    let out = ok(&["simulate", "--config", p(&cfg), "--cycle", "--batches", "1000", "--csv", p(&sweep)]);
    assert!(out.contains("ceiling 1.250000e8"), "{out}");
    assert!(fs::read_to_string(&sweep).unwrap().starts_with("batch,predicted,measured,bottleneck"));
    fs::write(&cfg, "{\"ii\": 0}").unwrap();
    assert_eq!(code(&["simulate", "--config", p(&cfg)]), 5);

    let out = ok(&["calibrate"]);
    assert!(out.contains("call_overhead_s 6.80"), "{out}");
    let two = fx.path("two.csv");
    fs::write(&two, "1,2.2e3\n100000,6.58e7\n").unwrap();
    let j: serde_json::Value = serde_json::from_str(&ok(&["calibrate", p(&two), "--json"])).unwrap();
    let c = j["call_overhead_s"].as_f64().unwrap();
    assert!((c - 4.545e-4).abs() < 1e-6, "{c}");
    assert_eq!(j["residuals"].as_array().unwrap().len(), 2);
}
