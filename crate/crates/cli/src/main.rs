//! Command-line driver for block-diagonal covariance detection and
//! per-block network inference.
//!
//! Subcommands: `select` (structure detection), `infer` (network inference,
//! running selection first unless a partition is supplied), `simulate`
//! (synthetic data), `bench` (strategy comparison), `version`.
//!
//! Options resolve as: command-line flag, then config-file key, then the
//! built-in default. The config file is a flat TOML document; unknown keys
//! are rejected.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use blocknet::covariance::DataMatrix;
use blocknet::error::Error;
use blocknet::pipeline::{
    run_infer, run_select, Calibration, InferOptions, NetworkDocument, SelectOptions,
    StructureReport,
};
use blocknet::selection::{PenaltyShape, SelectionOptions};
use blocknet::simulate::{make_block_cov, sample_mvn, SimConfig};
use blocknet::{configure_threads, run_benchmark, BenchOptions, Partition, Strategy};

const EXIT_CODE_HELP: &str = "Exit codes:
  0  success — every requested output was written
  2  invalid usage or configuration
  3  input data rejected (constant column, non-finite value, malformed CSV)
  4  selection infeasible on this input (no usable candidate models)
  5  numerical failure (singular matrix, solver did not converge)
  6  I/O failure";

#[derive(Parser)]
#[command(
    name = "blocknet",
    version,
    about = "Block-diagonal covariance detection and per-block network inference",
    after_help = EXIT_CODE_HELP
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect the block-diagonal structure of a dataset
    Select(SelectArgs),
    /// Infer per-block networks (runs selection first unless --partition is given)
    Infer(InferArgs),
    /// Generate a synthetic block-structured dataset
    Simulate(SimulateArgs),
    /// Compare recovery strategies on synthetic data
    Bench(BenchArgs),
    /// Print the version
    Version,
}

#[derive(Args)]
struct CommonArgs {
    /// Flat TOML configuration file; command-line flags override its keys
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Directory the output files are written to (created if missing)
    #[arg(long, value_name = "DIR")]
    output_dir: Option<PathBuf>,
    /// Worker thread count (0 or unset: automatic)
    #[arg(long, env = "BLOCKNET_THREADS", value_name = "N")]
    threads: Option<usize>,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Input CSV: header row of variable names, one observation per row
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    /// Penalty calibration: shdj (dimension jump) or shrr (robust regression)
    #[arg(long, value_name = "METHOD")]
    calibration: Option<String>,
    /// Center and scale columns before analysis (default true)
    #[arg(long, value_name = "BOOL")]
    standardize: Option<bool>,
    /// Penalty shape: simple (κ·D/n) or full (heavier theoretical shape)
    #[arg(long, value_name = "SHAPE")]
    penalty: Option<String>,
    /// Scale constant of the full penalty shape
    #[arg(long, value_name = "C")]
    penalty_c: Option<f64>,
    /// Dimension quantile above which models count as complex (shrr)
    #[arg(long, value_name = "Q")]
    quantile: Option<f64>,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    select: SelectArgs,
    /// Partition JSON ({"blocks": [[..], ..]}); skips the selection stage
    #[arg(long, value_name = "FILE")]
    partition: Option<PathBuf>,
    /// Solver convergence tolerance
    #[arg(long, value_name = "TOL")]
    tol: Option<f64>,
    /// Solver sweep cap
    #[arg(long, value_name = "N")]
    max_iter: Option<usize>,
    /// Length of the per-block regularization grid
    #[arg(long, value_name = "N")]
    grid_len: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Variable count
    #[arg(long)]
    p: usize,
    /// Observation count
    #[arg(long)]
    n: usize,
    /// True block count
    #[arg(long)]
    k: usize,
    /// RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Smallest-eigenvalue target for each unscaled block
    #[arg(long, value_name = "F")]
    eigen_floor: Option<f64>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Variable count
    #[arg(long)]
    p: usize,
    /// Observation count
    #[arg(long)]
    n: usize,
    /// True block count
    #[arg(long)]
    k: usize,
    /// RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Number of replicated datasets
    #[arg(long)]
    reps: usize,
    /// Comma-separated strategies: glasso,cgl,truepart,shdj,shrr (default all)
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    strategies: Option<Vec<String>>,
    /// Write the seconds column as zeros for byte-reproducible output
    #[arg(long)]
    omit_timings: bool,
    /// Smallest-eigenvalue target for each unscaled block
    #[arg(long, value_name = "F")]
    eigen_floor: Option<f64>,
    /// Solver convergence tolerance
    #[arg(long, value_name = "TOL")]
    tol: Option<f64>,
    /// Solver sweep cap
    #[arg(long, value_name = "N")]
    max_iter: Option<usize>,
    /// Length of the per-block regularization grid
    #[arg(long, value_name = "N")]
    grid_len: Option<usize>,
}

/// Flat config file; every key optional, unknown keys rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    input: Option<PathBuf>,
    standardize: Option<bool>,
    calibration: Option<String>,
    penalty: Option<String>,
    penalty_c: Option<f64>,
    quantile: Option<f64>,
    tol: Option<f64>,
    max_iter: Option<usize>,
    grid_len: Option<usize>,
    output_dir: Option<PathBuf>,
    seed: Option<u64>,
    threads: Option<usize>,
}

/// A command failure: what to print and which exit code class it belongs to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

fn exit_class(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) | Error::InvalidPartition(_) | Error::MismatchedIndexSets { .. } => {
            2
        }
        Error::ConstantColumn { .. }
        | Error::NonFinite { .. }
        | Error::InvalidData(_)
        | Error::Csv(_) => 3,
        Error::EmptyCandidateSet
        | Error::DegeneratePath { .. }
        | Error::TooFewCandidates { .. }
        | Error::InsufficientComplexModels => 4,
        Error::SingularBlock { .. } | Error::SingularInput | Error::NotConverged { .. } => 5,
        Error::Io(_) => 6,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: exit_class(&e),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: 6,
            message: e.to_string(),
        }
    }
}

/// Attach the column name to a constant-column rejection.
fn name_data_error(e: Error, names: &[String]) -> Failure {
    if let Error::ConstantColumn { index } = &e {
        if let Some(name) = names.get(*index) {
            return Failure {
                code: 3,
                message: format!("column {index} ('{name}') is constant"),
            };
        }
    }
    e.into()
}

fn load_config(path: Option<&PathBuf>) -> Result<FileConfig, Failure> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::from(e).with_context(format!("reading {}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))
}

impl Failure {
    fn with_context(mut self, context: String) -> Self {
        self.message = format!("{context}: {}", self.message);
        self
    }
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::from(e).with_context(format!("creating {}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let file = File::create(path)
        .map_err(|e| Failure::from(e).with_context(format!("creating {}", path.display())))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Failure {
        code: 6,
        message: format!("writing {}: {e}", path.display()),
    })?;
    w.write_all(b"\n")?;
    w.flush()?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, Failure> {
    csv::Writer::from_path(path).map_err(|e| Failure {
        code: 6,
        message: format!("creating {}: {e}", path.display()),
    })
}

fn csv_failure(path: &Path, e: csv::Error) -> Failure {
    Failure {
        code: 6,
        message: format!("writing {}: {e}", path.display()),
    }
}

/// Selection-stage options resolved from flags, config file, and defaults.
struct SelectSetup {
    input: PathBuf,
    output_dir: PathBuf,
    opts: SelectOptions,
    file: FileConfig,
}

fn resolve_select(args: &SelectArgs) -> Result<SelectSetup, Failure> {
    let file = load_config(args.common.config.as_ref())?;
    configure_threads(args.common.threads.or(file.threads));
    let input = args
        .input
        .clone()
        .or_else(|| file.input.clone())
        .ok_or_else(|| Failure::usage("no input: pass --input or set 'input' in the config"))?;
    let output_dir = args
        .common
        .output_dir
        .clone()
        .or_else(|| file.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let calibration: Calibration = args
        .calibration
        .as_deref()
        .or(file.calibration.as_deref())
        .unwrap_or("shdj")
        .parse()
        .map_err(Failure::from)?;
    let quantile = args.quantile.or(file.quantile).unwrap_or(0.5);
    if !(0.0..=1.0).contains(&quantile) {
        return Err(Failure::usage(format!(
            "quantile must be in [0, 1], got {quantile}"
        )));
    }
    let penalty = args
        .penalty
        .as_deref()
        .or(file.penalty.as_deref())
        .unwrap_or("simple");
    let shape = match penalty {
        "simple" => PenaltyShape::Dimension,
        "full" => {
            let c = args.penalty_c.or(file.penalty_c).unwrap_or(1.0);
            if !c.is_finite() || c <= 0.0 {
                return Err(Failure::usage(format!(
                    "penalty constant must be positive, got {c}"
                )));
            }
            PenaltyShape::Full { c }
        }
        other => {
            return Err(Failure::usage(format!(
                "unknown penalty shape '{other}' (expected simple or full)"
            )));
        }
    };
    let standardize = args.standardize.or(file.standardize).unwrap_or(true);
    Ok(SelectSetup {
        input,
        output_dir,
        opts: SelectOptions {
            standardize,
            calibration,
            selection: SelectionOptions { quantile, shape },
        },
        file,
    })
}

fn load_data(path: &Path) -> Result<DataMatrix, Failure> {
    DataMatrix::from_csv_path(path)
        .map_err(|e| Failure::from(e).with_context(format!("reading {}", path.display())))
}

fn run_selection_stage(setup: &SelectSetup) -> Result<(DataMatrix, StructureReport), Failure> {
    let x = load_data(&setup.input)?;
    let report = run_select(&x, &setup.opts).map_err(|e| name_data_error(e, x.names()))?;
    Ok((x, report))
}

/// Top-level summary of the chosen partition, written as partition.json.
#[derive(Serialize)]
struct PartitionFileOut<'a> {
    p: usize,
    k: usize,
    dimension: usize,
    lambda: f64,
    calibration: Calibration,
    partition: &'a Partition,
    labels: Vec<usize>,
}

/// Lenient partition-file reader: accepts either a bare serialized partition
/// or the partition.json this tool writes.
#[derive(Deserialize)]
struct PartitionFileIn {
    partition: Option<Partition>,
    blocks: Option<Vec<Vec<usize>>>,
}

fn load_partition(path: &Path) -> Result<Partition, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::from(e).with_context(format!("reading {}", path.display())))?;
    let parsed: PartitionFileIn = serde_json::from_str(&text).map_err(|e| {
        Failure::usage(format!("partition file {}: {e}", path.display()))
    })?;
    match (parsed.partition, parsed.blocks) {
        (Some(p), _) => Ok(p),
        (None, Some(blocks)) => Partition::new(blocks).map_err(Failure::from),
        (None, None) => Err(Failure::usage(format!(
            "partition file {} has neither 'partition' nor 'blocks'",
            path.display()
        ))),
    }
}

fn write_select_outputs(
    dir: &Path,
    report: &StructureReport,
    calibration: Calibration,
) -> Result<(), Failure> {
    ensure_dir(dir)?;
    let selected = &report.diagnostics.selected;
    write_json(
        &dir.join("partition.json"),
        &PartitionFileOut {
            p: report.partition.p(),
            k: report.partition.k(),
            dimension: selected.dimension,
            lambda: selected.lambda,
            calibration,
            partition: &report.partition,
            labels: report.partition.labels(),
        },
    )?;
    write_json(
        &dir.join("diagnostics.json"),
        &serde_json::json!({
            "diagnostics": report.diagnostics,
            "excluded": report.excluded,
        }),
    )?;

    let path = dir.join("step_function.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["kappa", "dimension"])
        .map_err(|e| csv_failure(&path, e))?;
    for sp in &report.diagnostics.step_function {
        w.write_record([sp.kappa.to_string(), sp.dimension.to_string()])
            .map_err(|e| csv_failure(&path, e))?;
    }
    w.flush()?;
    log::info!("wrote {}", path.display());

    let path = dir.join("path_points.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["lambda", "k", "dimension", "loglik"])
        .map_err(|e| csv_failure(&path, e))?;
    for m in &report.points {
        w.write_record([
            m.lambda.to_string(),
            m.partition.k().to_string(),
            m.dimension.to_string(),
            m.loglik.to_string(),
        ])
        .map_err(|e| csv_failure(&path, e))?;
    }
    w.flush()?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn cmd_select(args: &SelectArgs) -> Result<(), Failure> {
    let setup = resolve_select(args)?;
    let (_, report) = run_selection_stage(&setup)?;
    write_select_outputs(&setup.output_dir, &report, setup.opts.calibration)?;
    if !report.excluded.is_empty() {
        println!(
            "note: {} path step(s) dropped (singular block covariance); see diagnostics.json",
            report.excluded.len()
        );
    }
    println!(
        "selected {} block(s), dimension {}, at lambda {:.6} ({}); outputs in {}",
        report.partition.k(),
        report.diagnostics.selected.dimension,
        report.diagnostics.selected.lambda,
        setup.opts.calibration,
        setup.output_dir.display()
    );
    Ok(())
}

fn write_infer_outputs(dir: &Path, doc: &NetworkDocument) -> Result<(), Failure> {
    ensure_dir(dir)?;
    write_json(&dir.join("network.json"), doc)?;
    let path = dir.join("edges.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["block", "i", "j", "weight"])
        .map_err(|e| csv_failure(&path, e))?;
    for block in &doc.blocks {
        for e in &block.edges {
            w.write_record([
                block.block.to_string(),
                e.i.to_string(),
                e.j.to_string(),
                e.weight.to_string(),
            ])
            .map_err(|err| csv_failure(&path, err))?;
        }
    }
    w.flush()?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn cmd_infer(args: &InferArgs) -> Result<(), Failure> {
    let setup = resolve_select(&args.select)?;
    let (x, partition) = match &args.partition {
        Some(path) => {
            let partition = load_partition(path)?;
            (load_data(&setup.input)?, partition)
        }
        None => {
            let (x, report) = run_selection_stage(&setup)?;
            write_select_outputs(&setup.output_dir, &report, setup.opts.calibration)?;
            (x, report.partition)
        }
    };
    let infer_opts = InferOptions {
        standardize: setup.opts.standardize,
        tol: args.tol.or(setup.file.tol).unwrap_or_else(|| InferOptions::default().tol),
        max_iter: args
            .max_iter
            .or(setup.file.max_iter)
            .unwrap_or_else(|| InferOptions::default().max_iter),
        grid_len: args
            .grid_len
            .or(setup.file.grid_len)
            .unwrap_or_else(|| InferOptions::default().grid_len),
    };
    let doc = run_infer(&x, &partition, &infer_opts).map_err(|e| name_data_error(e, x.names()))?;
    write_infer_outputs(&setup.output_dir, &doc)?;
    let stragglers: Vec<usize> = doc
        .blocks
        .iter()
        .filter(|b| !b.converged)
        .map(|b| b.block)
        .collect();
    if !stragglers.is_empty() {
        println!(
            "warning: solver hit its sweep cap in block(s) {stragglers:?}; their edges come from partial estimates"
        );
    }
    let edge_count: usize = doc.blocks.iter().map(|b| b.edges.len()).sum();
    println!(
        "inferred networks for {} block(s), {} edge(s); outputs in {}",
        doc.blocks.len(),
        edge_count,
        setup.output_dir.display()
    );
    Ok(())
}

fn sim_config(
    p: usize,
    n: usize,
    k: usize,
    seed: Option<u64>,
    eigen_floor: Option<f64>,
    file: &FileConfig,
) -> Result<SimConfig, Failure> {
    let seed = seed.or(file.seed).unwrap_or(0);
    let cfg = SimConfig::new(p, n, k, seed)?;
    Ok(match eigen_floor {
        Some(f) => cfg.with_eigen_floor(f)?,
        None => cfg,
    })
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let file = load_config(args.common.config.as_ref())?;
    configure_threads(args.common.threads.or(file.threads));
    let cfg = sim_config(args.p, args.n, args.k, args.seed, args.eigen_floor, &file)?;
    let dir = args
        .common
        .output_dir
        .clone()
        .or_else(|| file.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    ensure_dir(&dir)?;
    let truth = make_block_cov(&cfg);
    let x = sample_mvn(&truth, cfg.n(), cfg.seed());
    let data_path = dir.join("data.csv");
    x.to_csv_path(&data_path)?;
    log::info!("wrote {}", data_path.display());
    write_json(
        &dir.join("truth.json"),
        &serde_json::json!({
            "p": cfg.p(),
            "n": cfg.n(),
            "k": cfg.k(),
            "seed": cfg.seed(),
            "eigen_floor": cfg.eigen_floor(),
            "partition": truth.partition,
            "edges": truth.edges,
        }),
    )?;
    println!(
        "simulated {} observations of {} variables in {} block(s); outputs in {}",
        cfg.n(),
        cfg.p(),
        cfg.k(),
        dir.display()
    );
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<(), Failure> {
    let file = load_config(args.common.config.as_ref())?;
    configure_threads(args.common.threads.or(file.threads));
    let cfg = sim_config(args.p, args.n, args.k, args.seed, args.eigen_floor, &file)?;
    let defaults = BenchOptions::default();
    let strategies = match &args.strategies {
        None => defaults.strategies.clone(),
        Some(names) => names
            .iter()
            .map(|s| s.trim().parse::<Strategy>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(Failure::from)?,
    };
    let opts = BenchOptions {
        strategies,
        grid_len: args.grid_len.or(file.grid_len).unwrap_or(defaults.grid_len),
        tol: args.tol.or(file.tol).unwrap_or(defaults.tol),
        max_iter: args.max_iter.or(file.max_iter).unwrap_or(defaults.max_iter),
    };
    let dir = args
        .common
        .output_dir
        .clone()
        .or_else(|| file.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    ensure_dir(&dir)?;

    let mut table = run_benchmark(&cfg, args.reps, &opts)?;
    if args.omit_timings {
        for row in &mut table.rows {
            row.seconds = 0.0;
        }
    }
    let csv_path = dir.join("bench.csv");
    let csv_file = File::create(&csv_path)
        .map_err(|e| Failure::from(e).with_context(format!("creating {}", csv_path.display())))?;
    table.write_csv(csv_file, !args.omit_timings)?;
    log::info!("wrote {}", csv_path.display());

    let failures: Vec<serde_json::Value> = table
        .rows
        .iter()
        .filter_map(|r| {
            r.error.as_ref().map(|msg| {
                serde_json::json!({
                    "replicate": r.replicate,
                    "strategy": r.strategy,
                    "error": msg,
                })
            })
        })
        .collect();
    write_json(
        &dir.join("summary.json"),
        &serde_json::json!({
            "p": cfg.p(),
            "n": cfg.n(),
            "k": cfg.k(),
            "seed": cfg.seed(),
            "reps": args.reps,
            "omit_timings": args.omit_timings,
            "strategies": table.summarize(),
            "failures": failures,
        }),
    )?;
    println!(
        "benchmarked {} strateg{} over {} replicate(s) ({} failure(s)); outputs in {}",
        opts.strategies.len(),
        if opts.strategies.len() == 1 { "y" } else { "ies" },
        args.reps,
        failures.len(),
        dir.display()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Select(args) => cmd_select(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Version => {
            println!("{}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
