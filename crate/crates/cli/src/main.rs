//! `fxhls`: ingest, quantize, prune, emulate, compile, report and sweep.
//!
//! Exit codes: 0 on success, 1 on a domain or I/O error, 2 on a usage
//! error. Failures print one `ERROR <code>: <message>` line on stderr.

mod parse;

use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use parse::List;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use fxhls::bench::{self, make_synthetic, SweepGrid, SweepOptions};
use fxhls::dataset::Dataset;
use fxhls::emit::{interpreter_vectors, write_outputs};
use fxhls::emulate::{emulate_fixed, emulate_float, AccumulationOrder, Prediction};
use fxhls::estimate::{estimate, CostModel};
use fxhls::ingest::{self, parse_document, write_document};
use fxhls::lower::{lower, module_name};
use fxhls::model::{model_stats, Model};
use fxhls::netlist::NetlistIr;
use fxhls::quantize::{
    calibrate_formats, prune_fcnn, quantize_model, read_quantized, write_quantized, PruneMask,
    PruningConfig, QuantizationConfig, QuantizedModel, Widths,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "fxhls",
    about = "Fixed-point model-to-RTL compiler and emulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Float,
    Fixed,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    Tree,
    Sequential,
}

impl From<OrderArg> for AccumulationOrder {
    fn from(o: OrderArg) -> Self {
        match o {
            OrderArg::Tree => AccumulationOrder::Tree,
            OrderArg::Sequential => AccumulationOrder::Sequential,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate an interchange document; print model statistics.
    Ingest {
        model: PathBuf,
        /// Only validate; do not write the normalized model.
        #[arg(long)]
        validate_only: bool,
        /// Where to write the normalized document.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Quantize a model from an explicit config or by calibration.
    Quantize {
        model: PathBuf,
        /// Quantization config JSON.
        #[arg(long, conflicts_with_all = ["calibrate", "widths"], required_unless_present = "calibrate")]
        config: Option<PathBuf>,
        /// Calibration data CSV.
        #[arg(long, requires = "widths")]
        calibrate: Option<PathBuf>,
        /// One width for every role, or role=W pairs (all, input, threshold,
        /// leaf, weight, bias, activation, accum).
        #[arg(long, value_parser = parse::widths)]
        widths: Option<Widths>,
        /// Prune masks written by `prune --masks`.
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Magnitude-prune a dense network.
    Prune {
        model: PathBuf,
        /// One sparsity for every layer or one per layer.
        #[arg(long, value_parser = parse::f64_list)]
        sparsity: List<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the prune masks here.
        #[arg(long)]
        masks: Option<PathBuf>,
    },
    /// Run a float model or a quantized model over a dataset.
    Emulate {
        /// Interchange document (float engine) or quantized model file.
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "fixed")]
        engine: EngineArg,
        #[arg(long, value_enum, default_value = "tree")]
        order: OrderArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Lower a quantized model and write Verilog, testbench, netlist and report.
    Compile {
        qmodel: PathBuf,
        #[arg(long, default_value_t = 1)]
        reuse: u32,
        #[arg(long)]
        out_dir: PathBuf,
        /// Module name; derived from the file name when unset.
        #[arg(long)]
        name: Option<String>,
        /// Testbench inputs from this CSV instead of random vectors.
        #[arg(long)]
        vectors_from: Option<PathBuf>,
        /// Number of random testbench vectors.
        #[arg(long, default_value_t = 32)]
        vectors: usize,
        #[arg(long)]
        cost_model: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Estimate resources of a netlist JSON file.
    Report {
        netlist: PathBuf,
        #[arg(long)]
        cost_model: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: ReportFormat,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep widths, sparsities and reuse factors over one model.
    Sweep {
        #[arg(long)]
        model: PathBuf,
        /// Evaluation data; synthetic blobs from --seed when unset.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Calibration data; the evaluation data when unset.
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long, value_parser = parse::u32_list, default_value = "4..24")]
        widths: List<u32>,
        #[arg(long, value_parser = parse::f64_list, default_value = "0")]
        sparsity: List<f64>,
        #[arg(long, value_parser = parse::u32_list, default_value = "1")]
        reuse: List<u32>,
        #[arg(long)]
        accum_width: Option<u32>,
        #[arg(long)]
        cost_model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Plot data JSON ({x, y, label} points).
        #[arg(long)]
        plot_json: Option<PathBuf>,
        /// gnuplot data file.
        #[arg(long)]
        dat: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Rows of synthetic data when --data is unset.
        #[arg(long, default_value_t = 2000)]
        samples: usize,
    },
}

/// A failure with a stable machine-readable code.
struct Failure {
    code: String,
    message: String,
}

impl Failure {
    fn new(code: &str, message: impl Display) -> Self {
        Self {
            code: code.into(),
            message: message.to_string(),
        }
    }
}

type Result<T> = std::result::Result<T, Failure>;

macro_rules! coded {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::new(e.code(), &e)
            }
        }
    )*};
}

coded!(
    fxhls::ingest::IngestError,
    fxhls::quantize::QuantizeError,
    fxhls::lower::LowerError,
    fxhls::emit::EmitError,
    fxhls::estimate::EstimateError,
    fxhls::bench::BenchError
);

impl From<fxhls::emulate::EmulateError> for Failure {
    fn from(e: fxhls::emulate::EmulateError) -> Self {
        Failure::new("FeatureCount", e)
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        let code = if e.kind() == std::io::ErrorKind::NotFound {
            "FileNotFound"
        } else {
            "Io"
        };
        Failure::new(code, format!("{}: {e}", path.display()))
    })
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::new("Io", format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| Failure::new("Io", format!("{}: {e}", path.display())))
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = read(path)?;
    Dataset::read_csv(bytes.as_slice())
        .map_err(|e| Failure::new("MalformedCsv", format!("{}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, code: &str) -> Result<T> {
    serde_json::from_slice(&read(path)?)
        .map_err(|e| Failure::new(code, format!("{}: {e}", path.display())))
}

fn read_cost_model(path: Option<&Path>) -> Result<CostModel> {
    match path {
        Some(p) => Ok(CostModel::load(p)?),
        None => Ok(CostModel::default()),
    }
}

fn read_model(path: &Path) -> Result<(Model, ingest::Metadata)> {
    Ok(parse_document(&read(path)?)?)
}

fn print(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Failure::new("Io", e))
}

fn json_line(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

fn cmd_ingest(model: &Path, validate_only: bool, out: Option<&Path>) -> Result<()> {
    let (m, meta) = read_model(model)?;
    let stats = model_stats(&m);
    print(&json_line(&serde_json::json!({
        "model_kind": m.kind(),
        "n_features": m.n_features(),
        "stats": stats,
    })))?;
    if let (false, Some(out)) = (validate_only, out) {
        write(out, write_document(&m, &meta)?)?;
    }
    Ok(())
}

fn cmd_quantize(
    model: &Path,
    config: Option<&Path>,
    calibrate: Option<&Path>,
    widths: Option<Widths>,
    masks: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let (m, _) = read_model(model)?;
    let cfg: QuantizationConfig = match (config, calibrate, widths) {
        (Some(c), _, _) => read_json(c, "InvalidConfig")?,
        (None, Some(data), Some(w)) => calibrate_formats(&m, &read_dataset(data)?, &w)?,
        _ => {
            return Err(Failure::new(
                "Usage",
                "either --config or --calibrate with --widths is required",
            ))
        }
    };
    let masks: Option<Vec<PruneMask>> = masks.map(|p| read_json(p, "InvalidConfig")).transpose()?;
    let q = quantize_model(&m, &cfg, masks.as_deref())?;
    write(out, write_quantized(&q, &m)?)
}

fn cmd_prune(model: &Path, sparsity: &[f64], out: &Path, masks_out: Option<&Path>) -> Result<()> {
    let (m, meta) = read_model(model)?;
    let Model::Fcnn(f) = &m else {
        return Err(Failure::new(
            "InvalidConfig",
            "pruning applies to dense networks only",
        ));
    };
    let cfg = match sparsity {
        [s] => PruningConfig::uniform(*s, f.layers.len()),
        many => PruningConfig {
            sparsity: many.to_vec(),
        },
    };
    let (pruned, masks) = prune_fcnn(f, &cfg)?;
    write(out, write_document(&Model::Fcnn(pruned), &meta)?)?;
    if let Some(p) = masks_out {
        write(
            p,
            json_line(&serde_json::to_value(&masks).expect("masks serialize")),
        )?;
    }
    Ok(())
}

fn predictions_csv(preds: &[Prediction], raw: bool) -> String {
    let n_out = preds.first().map_or(0, |p| p.scores.len());
    let mut s = String::from("row,class");
    for j in 0..n_out {
        s += &format!(",score_{j}");
    }
    if raw {
        for j in 0..n_out {
            s += &format!(",raw_{j}");
        }
    } else {
        s += ",margin";
    }
    s.push('\n');
    for (i, p) in preds.iter().enumerate() {
        s += &format!("{i},{}", p.class);
        for v in &p.scores {
            s += &format!(",{v}");
        }
        match (&p.raw, p.margin) {
            (Some(r), _) if raw => r.iter().for_each(|v| s += &format!(",{v}")),
            (_, Some(m)) if !raw => s += &format!(",{m}"),
            _ => {}
        }
        s.push('\n');
    }
    s
}

/// A quantized model file, or an interchange document for the float engine.
fn read_any_model(path: &Path) -> Result<(Option<QuantizedModel>, Model)> {
    let bytes = read(path)?;
    match read_quantized(&bytes) {
        Ok((q, m)) => Ok((Some(q), m)),
        Err(qe) => match ingest::parse_model(&bytes) {
            Ok(m) => Ok((None, m)),
            Err(_) => Err(qe.into()),
        },
    }
}

fn cmd_emulate(
    model: &Path,
    data: &Path,
    engine: EngineArg,
    order: OrderArg,
    out: &Path,
) -> Result<()> {
    let (q, m) = read_any_model(model)?;
    let data = read_dataset(data)?;
    let csv = match (engine, q) {
        (EngineArg::Float, _) => predictions_csv(&emulate_float(&m, &data)?, false),
        (EngineArg::Fixed, Some(q)) => {
            predictions_csv(&emulate_fixed(&q, &data, order.into())?, true)
        }
        (EngineArg::Fixed, None) => {
            return Err(Failure::new(
                "InvalidConfig",
                "the fixed engine needs a quantized model (run `quantize` first)",
            ))
        }
    };
    write(out, csv)
}

fn random_vectors(q: &QuantizedModel, n: usize, seed: u64) -> Vec<Vec<i128>> {
    let fmt = q.config().input_fmt;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            (0..q.n_features())
                .map(|_| rng.random_range(fmt.min_raw()..=fmt.max_raw()))
                .collect()
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_compile(
    qmodel: &Path,
    reuse: u32,
    out_dir: &Path,
    name: Option<&str>,
    vectors_from: Option<&Path>,
    n_vectors: usize,
    cost_model: Option<&Path>,
    seed: u64,
) -> Result<()> {
    let (q, _) = read_quantized(&read(qmodel)?)?;
    let cm = read_cost_model(cost_model)?;
    let stem = qmodel
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = module_name(name.unwrap_or(&stem));
    let n = lower(&q, reuse, &name)?;
    let inputs = match vectors_from {
        Some(p) => {
            let data = read_dataset(p)?;
            data.features
                .iter()
                .map(|x| {
                    fxhls::emulate::quantize_input(x, q.config().input_fmt)
                        .iter()
                        .map(|v| v.raw())
                        .collect()
                })
                .collect()
        }
        None => random_vectors(&q, n_vectors, seed),
    };
    let vectors = interpreter_vectors(&n, &inputs)?;
    let files = write_outputs(&n, &vectors, out_dir)?;
    let report = estimate(&n, &cm)?;
    let report_path = out_dir.join(format!("{}.report.json", n.name));
    write(&report_path, report.to_json())?;
    print(&json_line(&serde_json::json!({
        "verilog": files.verilog,
        "testbench": files.testbench,
        "netlist": files.netlist,
        "report": report_path,
        "latency_cycles": n.latency_cycles,
        "initiation_interval": n.initiation_interval,
    })))
}

fn cmd_report(
    netlist: &Path,
    cost_model: Option<&Path>,
    format: ReportFormat,
    out: Option<&Path>,
) -> Result<()> {
    let text = String::from_utf8(read(netlist)?).map_err(|e| Failure::new("MalformedJson", e))?;
    let n = NetlistIr::from_json(&text).map_err(|e| Failure::new("MalformedJson", e))?;
    let report = estimate(&n, &read_cost_model(cost_model)?)?;
    let body = match format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Csv => report.to_csv()?,
    };
    match out {
        Some(p) => write(p, body),
        None => print(&body),
    }
}

struct SweepArgs<'a> {
    model: &'a Path,
    data: Option<&'a Path>,
    calibration: Option<&'a Path>,
    grid: SweepGrid,
    accum_width: Option<u32>,
    cost_model: Option<&'a Path>,
    out: &'a Path,
    plot_json: Option<&'a Path>,
    dat: Option<&'a Path>,
    jobs: Option<usize>,
    seed: u64,
    samples: usize,
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let (m, _) = read_model(a.model)?;
    let data = match a.data {
        Some(p) => read_dataset(p)?,
        None => {
            let classes = match &m {
                Model::Bdt(b) => b.n_classes.max(2),
                Model::Fcnn(f) => f.n_outputs().max(2),
            };
            make_synthetic(a.seed, a.samples, m.n_features(), classes)
        }
    };
    let opts = SweepOptions {
        calibration: a.calibration.map(read_dataset).transpose()?,
        accum_width: a.accum_width,
        cost_model: read_cost_model(a.cost_model)?,
        jobs: a.jobs,
        ..SweepOptions::default()
    };
    let rows = bench::sweep(&m, &data, &a.grid, &opts)?;
    write(a.out, bench::rows_to_csv(&rows, m.kind())?)?;
    if let Some(p) = a.plot_json {
        write(
            p,
            json_line(
                &serde_json::to_value(bench::plot_data(&rows)).expect("plot data serializes"),
            ),
        )?;
    }
    if let Some(p) = a.dat {
        write(p, bench::rows_to_dat(&rows))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            model,
            validate_only,
            out,
        } => cmd_ingest(&model, validate_only, out.as_deref()),
        Command::Quantize {
            model,
            config,
            calibrate,
            widths,
            masks,
            out,
        } => cmd_quantize(
            &model,
            config.as_deref(),
            calibrate.as_deref(),
            widths,
            masks.as_deref(),
            &out,
        ),
        Command::Prune {
            model,
            sparsity,
            out,
            masks,
        } => cmd_prune(&model, &sparsity.0, &out, masks.as_deref()),
        Command::Emulate {
            model,
            data,
            engine,
            order,
            out,
        } => cmd_emulate(&model, &data, engine, order, &out),
        Command::Compile {
            qmodel,
            reuse,
            out_dir,
            name,
            vectors_from,
            vectors,
            cost_model,
            seed,
        } => cmd_compile(
            &qmodel,
            reuse,
            &out_dir,
            name.as_deref(),
            vectors_from.as_deref(),
            vectors,
            cost_model.as_deref(),
            seed,
        ),
        Command::Report {
            netlist,
            cost_model,
            format,
            out,
        } => cmd_report(&netlist, cost_model.as_deref(), format, out.as_deref()),
        Command::Sweep {
            model,
            data,
            calibration,
            widths,
            sparsity,
            reuse,
            accum_width,
            cost_model,
            out,
            plot_json,
            dat,
            jobs,
            seed,
            samples,
        } => cmd_sweep(SweepArgs {
            model: &model,
            data: data.as_deref(),
            calibration: calibration.as_deref(),
            grid: SweepGrid {
                widths: widths.0,
                sparsity: sparsity.0,
                reuse: reuse.0,
            },
            accum_width,
            cost_model: cost_model.as_deref(),
            out: &out,
            plot_json: plot_json.as_deref(),
            dat: dat.as_deref(),
            jobs,
            seed,
            samples,
        }),
    }
}

fn version_text() -> String {
    format!(
        "{}\ninterchange schema {}\nquantized model schema {}",
        env!("CARGO_PKG_VERSION"),
        ingest::SCHEMA_VERSION,
        ingest::SCHEMA_VERSION
    )
}

fn main() -> ExitCode {
    let version: &'static str = Box::leak(version_text().into_boxed_str());
    let command = Cli::command().version(version);
    let cli = match command
        .try_get_matches()
        .and_then(|m| Cli::from_arg_matches(&m))
    {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let message = f.message.replace('\n', " ");
            eprintln!("ERROR {}: {message}", f.code);
            ExitCode::from(if f.code == "Usage" { 2 } else { 1 })
        }
    }
}
