use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use gbdt_stream::datapath::{to_probability, CompileError};
use gbdt_stream::model_ir::{gen_synthetic, serialize_model, ModelError, SyntheticSpec, DEFAULT_DEPTH};
use gbdt_stream::netlist::PortWidths;
use gbdt_stream::perf_model::{sweep_csv, PerfError, MEASURED_FPGA_LADDER};
use gbdt_stream::quantize::{read_csv_rows, unpack_stream, FormatError, QuantError, DEFAULT_WIDTH};
use gbdt_stream::stream_engine::{bench, decode_results, StreamError, DEFAULT_BATCHES, DEFAULT_REPEATS};
use gbdt_stream::{
    analytic_throughput, build_netlist, compile_model, cycle_sim, emit_verilog, lint_structure, pack_records, parse_model, run_streaming,
    CompiledForest64, PerfConfig64, StreamConfig,
};

const EXIT_GENERIC: u8 = 1;
const EXIT_PARSE: u8 = 3;
const EXIT_QUANTIZE: u8 = 4;
const EXIT_FORMAT: u8 = 5;
const EXIT_IO: u8 = 6;

#[derive(Parser)]
#[command(name = "gbdt-stream", version, about = "Compile tree ensembles to a streaming datapath, run and model it")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse, prune, canonicalize, quantize and compile a model.
    Compile {
        model: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DEPTH as u8, value_parser = clap::value_parser!(u8).range(1..=6))]
        depth: u8,
        #[arg(long, default_value_t = DEFAULT_WIDTH, value_parser = clap::value_parser!(u32).range(1..=16))]
        width: u32,
        #[arg(short, long, default_value = "cf.json")]
        out: PathBuf,
    },
    /// Quantize CSV rows into packed records.
    Encode {
        cf: PathBuf,
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Rows are over the original feature space.
        #[arg(long)]
        raw: bool,
    },
    /// Score CSV rows or packed records.
    Score {
        cf: PathBuf,
        input: PathBuf,
        #[arg(long)]
        probability: bool,
        /// CSV rows are over the original feature space.
        #[arg(long)]
        raw: bool,
        /// Write the binary result stream instead of CSV.
        #[arg(long)]
        binary: bool,
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Write streaming run statistics as JSON.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Time the streaming runtime over a batch ladder.
    StreamBench {
        cf: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_BATCHES)]
        batches: Vec<usize>,
        #[arg(long, default_value_t = DEFAULT_REPEATS)]
        repeats: usize,
        #[arg(long, default_value_t = 16)]
        fifo_depth: usize,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Predict throughput for a batch ladder.
    Simulate {
        /// PerfConfig JSON; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Start from the measured bandwidth and call overhead.
        #[arg(long, conflicts_with = "config")]
        measured_preset: bool,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_BATCHES)]
        batches: Vec<usize>,
        /// CSV of `batch,throughput` rows to compare and calibrate against.
        #[arg(long)]
        measured: Option<PathBuf>,
        /// Use the event-driven simulation instead of the closed form.
        #[arg(long)]
        cycle: bool,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Fit call overhead and effective bandwidth to measured points.
    Calibrate {
        /// CSV of `batch,throughput`; the published FPGA ladder when omitted.
        measured: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        bytes_in: u32,
        #[arg(long)]
        json: bool,
    },
    /// Write Verilog for a compiled forest; fails if lint finds anything.
    EmitVerilog {
        cf: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        netlist_json: Option<PathBuf>,
    },
    /// Lint Verilog against a compiled forest's geometry.
    Lint { verilog: PathBuf, cf: PathBuf },
    /// Write a seeded synthetic model.
    GenModel {
        #[arg(long, default_value_t = 100)]
        trees: usize,
        #[arg(long, default_value_t = DEFAULT_DEPTH)]
        depth: usize,
        #[arg(long, default_value_t = 1146)]
        raw_features: usize,
        #[arg(long, default_value_t = 112)]
        used_features: usize,
        #[arg(long, default_value_t = 15)]
        thresholds: usize,
        #[arg(long, default_value_t = 0.0)]
        leaf_probability: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_cf(path: &Path) -> anyhow::Result<CompiledForest64> {
    let text = read(path)?;
    CompiledForest64::from_json(&text).with_context(|| format!("loading {}", path.display()))
}

fn csv_codes(cf: &CompiledForest64, path: &Path, raw: bool) -> anyhow::Result<Vec<gbdt_stream::CodeVector>> {
    let file = fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let rows = read_csv_rows::<f64>(file).with_context(|| format!("parsing {}", path.display()))?;
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let v = if raw { cf.encode_raw(r) } else { cf.encode(r).map_err(Into::into) };
            v.with_context(|| format!("row {}", i + 1))
        })
        .collect()
}

fn read_measured(path: &Path) -> anyhow::Result<Vec<(usize, f64)>> {
    let file = fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let rows = read_csv_rows::<f64>(file).with_context(|| format!("parsing {}", path.display()))?;
    rows.iter()
        .enumerate()
        .map(|(i, r)| match r.as_slice() {
            [b, t] if *b >= 1.0 && b.fract() == 0.0 => Ok((*b as usize, *t)),
            _ => Err(FormatError::Csv(format!("row {}: expected `batch,throughput`", i + 1)).into()),
        })
        .collect()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Compile { model, depth, width, out } => {
            let forest = parse_model::<f64>(&read(&model)?).context("parse")?;
            let cf = compile_model(&forest, usize::from(depth), width).context("compile")?;
            write(&out, cf.to_json())?;
            let report = serde_json::json!({
                "num_raw_features": cf.feature_map.num_raw_features(),
                "num_features": cf.feature_map.len(),
                "dense_to_raw": cf.feature_map.dense_to_raw(),
            });
            let fm = out.with_extension("features.json");
            write(&fm, serde_json::to_string_pretty(&report)?)?;
            println!(
                "compiled {} trees (padded {}), depth {}, {} of {} features at {} bits, {}-byte records, {} adder stages",
                cf.tree_count,
                cf.padded_trees(),
                cf.depth,
                cf.quant.num_features(),
                cf.feature_map.num_raw_features(),
                cf.quant.width(),
                cf.bytes_per_record(),
                cf.adder_stages
            );
        }
        Cmd::Encode { cf, input, out, raw } => {
            let cf = load_cf(&cf)?;
            let codes = csv_codes(&cf, &input, raw)?;
            write(&out, pack_records(&codes, &cf.quant))?;
            println!("{} records, {} bytes", codes.len(), codes.len() * cf.bytes_per_record());
        }
        Cmd::Score {
            cf,
            input,
            probability,
            raw,
            binary,
            out,
            stats,
        } => {
            let cf = load_cf(&cf)?;
            let is_bin = input.extension().is_some_and(|e| e == "bin");
            let codes = if is_bin {
                let bytes = fs::read(&input).with_context(|| format!("reading {}", input.display()))?;
                unpack_stream(&bytes, &cf.quant).with_context(|| format!("decoding {}", input.display()))?
            } else {
                csv_codes(&cf, &input, raw)?
            };
            let packed = pack_records(&codes, &cf.quant);
            let (results, run_stats) = run_streaming(&cf, &packed, &StreamConfig::default())?;
            if let Some(p) = stats {
                write(&p, serde_json::to_string_pretty(&run_stats)?)?;
            }
            if binary {
                let Some(out) = out else { bail!("--binary needs --out") };
                write(&out, results)?;
                return Ok(());
            }
            let margins = decode_results(&results, codes.len())?;
            let mut text = String::new();
            for m in &margins {
                let v = if probability { to_probability(m.to_f64()) } else { m.to_f64() };
                text.push_str(&format!("{v}\n"));
            }
            match out {
                Some(p) => write(&p, text)?,
                None => std::io::stdout().write_all(text.as_bytes()).context("writing stdout")?,
            }
        }
        Cmd::StreamBench {
            cf,
            batches,
            repeats,
            fifo_depth,
            json,
            csv,
        } => {
            let cf = load_cf(&cf)?;
            let cfg = StreamConfig {
                fifo_depth,
                ..Default::default()
            };
            let rows = bench(&cf, &batches, repeats, &cfg)?;
            println!(
                "{:>8} {:>6} {:>14} {:>12} {:>14} {:>14}",
                "batch", "calls", "mean inf/s", "std", "min", "max"
            );
            for r in &rows {
                println!(
                    "{:>8} {:>6} {:>14.4e} {:>12.3e} {:>14.4e} {:>14.4e}",
                    r.batch, r.calls, r.mean, r.std, r.min, r.max
                );
            }
            if let Some(p) = json {
                write(&p, serde_json::to_string_pretty(&rows)?)?;
            }
            if let Some(p) = csv {
                let mut w = csv::Writer::from_writer(Vec::new());
                for r in &rows {
                    w.serialize(r)?;
                }
                write(&p, w.into_inner()?)?;
            }
        }
        Cmd::Simulate {
            config,
            measured_preset,
            batches,
            measured,
            cycle,
            csv,
        } => {
            let cfg = match (&config, measured_preset) {
                (Some(p), _) => PerfConfig64::from_json(&read(p)?).with_context(|| format!("loading {}", p.display()))?,
                (None, true) => PerfConfig64::measured(),
                (None, false) => PerfConfig64::default(),
            };
            cfg.validate()?;
            let points = measured.as_deref().map(read_measured).transpose()?.unwrap_or_default();
            println!("ceiling {:.6e} inf/s", cfg.ceiling());
            println!("{:>8} {:>14} {:>14} {:>20}", "batch", "predicted", "measured", "bottleneck");
            for &b in &batches {
                let rep = if cycle { cycle_sim(&cfg, b)? } else { analytic_throughput(&cfg, b)? };
                let m = points
                    .iter()
                    .find(|(pb, _)| *pb == b)
                    .map(|(_, t)| format!("{t:.4e}"))
                    .unwrap_or_else(|| "-".into());
                println!("{:>8} {:>14.4e} {:>14} {:>20}", b, rep.throughput, m, rep.bottleneck.to_string());
            }
            if points.len() >= 2 {
                print_calibration(&points, cfg.bytes_in, false)?;
            }
            if let Some(p) = csv {
                write(&p, sweep_csv(&cfg, &batches, &points)?)?;
            }
        }
        Cmd::Calibrate { measured, bytes_in, json } => {
            let points = match measured {
                Some(p) => read_measured(&p)?,
                None => MEASURED_FPGA_LADDER.to_vec(),
            };
            print_calibration(&points, bytes_in, json)?;
        }
        Cmd::EmitVerilog { cf, out, netlist_json } => {
            let cf = load_cf(&cf)?;
            let n = build_netlist(&cf);
            if let Err(errs) = n.check() {
                bail!("netlist check failed:\n{}", errs.join("\n"));
            }
            let text = emit_verilog(&n);
            write(&out, &text)?;
            if let Some(p) = netlist_json {
                write(&p, n.to_json())?;
            }
            let rep = lint_structure(&text, &PortWidths::from(&n));
            if !rep.is_clean() {
                bail!("lint findings:\n{rep}");
            }
            println!("{} modules, {} register stages, lint {}", n.module_count(), n.register_stages(), rep);
        }
        Cmd::Lint { verilog, cf } => {
            let cf = load_cf(&cf)?;
            let n = build_netlist(&cf);
            let rep = lint_structure(&read(&verilog)?, &PortWidths::from(&n));
            if !rep.is_clean() {
                bail!("lint findings:\n{rep}");
            }
            println!("{rep}");
        }
        Cmd::GenModel {
            trees,
            depth,
            raw_features,
            used_features,
            thresholds,
            leaf_probability,
            seed,
            out,
        } => {
            if thresholds == 0 || raw_features == 0 || !(0.0..=1.0).contains(&leaf_probability) || !(1..=6).contains(&depth) {
                return Err(clap_usage(
                    "thresholds and raw features must be at least 1, leaf probability in [0, 1], depth in 1..=6",
                ));
            }
            let spec = SyntheticSpec {
                trees,
                depth,
                raw_features,
                used_features: used_features.min(raw_features),
                thresholds_per_feature: thresholds,
                leaf_probability,
                seed,
            };
            write(&out, serialize_model(&gen_synthetic::<f64>(&spec)))?;
        }
    }
    Ok(())
}

fn print_calibration(points: &[(usize, f64)], bytes_in: u32, json: bool) -> anyhow::Result<()> {
    let cal = gbdt_stream::perf_model::calibrate_with(points, bytes_in)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&cal)?);
        return Ok(());
    }
    println!("call_overhead_s {:.6e}", cal.call_overhead_s);
    println!("bw_eff          {:.6e} B/s", cal.bw_eff);
    println!("{:>8} {:>14} {:>14} {:>10}", "batch", "measured", "fitted", "residual");
    for r in &cal.residuals {
        println!("{:>8} {:>14.4e} {:>14.4e} {:>9.2}%", r.batch, r.measured, r.predicted, 100.0 * r.relative);
    }
    Ok(())
}

#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn clap_usage(msg: &str) -> anyhow::Error {
    Usage(msg.to_string()).into()
}

fn exit_class(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<gbdt_stream::Error>() {
            return match e {
                gbdt_stream::Error::Model(m) => model_class(m),
                gbdt_stream::Error::Quant(q) => quant_class(q),
                gbdt_stream::Error::Compile(_) => EXIT_QUANTIZE,
                gbdt_stream::Error::Format(_) => EXIT_FORMAT,
                gbdt_stream::Error::Stream(s) => stream_class(s),
                gbdt_stream::Error::Perf(p) => perf_class(p),
                gbdt_stream::Error::Io(_) => EXIT_IO,
            };
        }
        if let Some(m) = cause.downcast_ref::<ModelError>() {
            return model_class(m);
        }
        if let Some(q) = cause.downcast_ref::<QuantError>() {
            return quant_class(q);
        }
        if let Some(c) = cause.downcast_ref::<CompileError>() {
            return match c {
                CompileError::Container(_) => EXIT_FORMAT,
                _ => EXIT_QUANTIZE,
            };
        }
        if cause.is::<FormatError>() || cause.is::<serde_json::Error>() || cause.is::<csv::Error>() {
            return EXIT_FORMAT;
        }
        if let Some(s) = cause.downcast_ref::<StreamError>() {
            return stream_class(s);
        }
        if let Some(p) = cause.downcast_ref::<PerfError>() {
            return perf_class(p);
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_GENERIC
}

fn model_class(e: &ModelError) -> u8 {
    match e {
        ModelError::NanInput { .. } | ModelError::InputLength { .. } => EXIT_FORMAT,
        _ => EXIT_PARSE,
    }
}

fn quant_class(e: &QuantError) -> u8 {
    match e {
        QuantError::NanInput { .. } | QuantError::InputLength { .. } => EXIT_FORMAT,
        _ => EXIT_QUANTIZE,
    }
}

fn stream_class(e: &StreamError) -> u8 {
    match e {
        StreamError::RecordLength { .. } | StreamError::Record { .. } | StreamError::ResultLength { .. } => EXIT_FORMAT,
        _ => EXIT_GENERIC,
    }
}

fn perf_class(e: &PerfError) -> u8 {
    match e {
        PerfError::Json(_) | PerfError::Config(_) => EXIT_FORMAT,
        _ => EXIT_GENERIC,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_class(&e))
        }
    }
}
