//! Replicated head-to-head comparison of network-recovery strategies on
//! synthetic block-structured data.
//!
//! Strategies:
//! - `glasso`: one pooled graphical-lasso fit on all variables, level chosen
//!   by the network information criterion; the implied partition is the
//!   connected components of the estimated graph.
//! - `cgl`: average-linkage clustering cut at the true block count, then a
//!   connectivity-rule level per cluster.
//! - `truepart`: the true partition handed to per-block inference (oracle).
//! - `shdj` / `shrr`: the full pipeline — thresholding path, penalized
//!   selection with the respective calibration, then per-block inference.
//!
//! Replicates are the outer parallel unit; per-replicate sampling seeds are
//! drawn up front so results are identical at any thread count.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::covariance::{sample_covariance, standardize, CovMatrix, DataMatrix};
use crate::error::{Error, Result};
use crate::exec;
use crate::glasso::{self, cgl_rho, default_rho_grid, graphical_lasso, select_rho_with};
use crate::partition::{adjusted_rand_index, components_from_edges, threshold_path, Partition};
use crate::pipeline::{run_infer, InferOptions};
use crate::selection::{
    score_path, select_dimension_jump, select_robust_regression, ScoredPath,
};
use crate::simulate::{edge_metrics, hac_average, make_block_cov, sample_mvn, GroundTruth,
    SimConfig};

/// Substream from which per-replicate sampling seeds are drawn (streams 0
/// and 1 belong to covariance construction and observation sampling).
const STREAM_REPS: u64 = 2;

/// One of the compared recovery strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    GlassoAll,
    Cgl,
    TruePart,
    Shdj,
    Shrr,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::GlassoAll,
        Strategy::Cgl,
        Strategy::TruePart,
        Strategy::Shdj,
        Strategy::Shrr,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::GlassoAll => "glasso",
            Strategy::Cgl => "cgl",
            Strategy::TruePart => "truepart",
            Strategy::Shdj => "shdj",
            Strategy::Shrr => "shrr",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "glasso" => Ok(Strategy::GlassoAll),
            "cgl" => Ok(Strategy::Cgl),
            "truepart" => Ok(Strategy::TruePart),
            "shdj" => Ok(Strategy::Shdj),
            "shrr" => Ok(Strategy::Shrr),
            other => Err(Error::InvalidConfig(format!(
                "unknown strategy '{other}' (expected glasso, cgl, truepart, shdj, or shrr)"
            ))),
        }
    }
}

/// Knobs for a benchmark run.
#[derive(Debug, Clone)]
pub struct BenchOptions {
    /// Strategies to run, in row order.
    pub strategies: Vec<Strategy>,
    pub grid_len: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            grid_len: glasso::DEFAULT_GRID_LEN,
            tol: glasso::DEFAULT_TOL,
            max_iter: glasso::DEFAULT_MAX_ITER,
        }
    }
}

/// One strategy's outcome on one replicate. Metric fields are `None` when
/// undefined (empty denominator) or when the strategy failed; a failure also
/// carries its message.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub replicate: usize,
    pub strategy: String,
    pub ari: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub fdr: Option<f64>,
    pub k_selected: Option<usize>,
    pub d_selected: Option<usize>,
    /// Wall-clock seconds for this strategy's own work (the shared path
    /// scoring is attributed to each selection strategy that used it).
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// All rows of a benchmark run, replicate-major in the requested strategy
/// order.
#[derive(Debug, Clone, Serialize)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
}

/// Per-strategy aggregates over the replicates where the metric was defined.
/// Standard deviations use the n−1 divisor and need at least two values.
#[derive(Debug, Clone, Serialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub replicates: usize,
    pub failures: usize,
    pub mean_ari: Option<f64>,
    pub sd_ari: Option<f64>,
    pub mean_sensitivity: Option<f64>,
    pub sd_sensitivity: Option<f64>,
    pub mean_specificity: Option<f64>,
    pub sd_specificity: Option<f64>,
    pub mean_fdr: Option<f64>,
    pub sd_fdr: Option<f64>,
    pub mean_seconds: f64,
}

/// Run `reps` replicates of the strategy comparison on the scenario `cfg`
/// describes. The ground truth is built once from the scenario seed; each
/// replicate then samples a fresh dataset from it.
pub fn run_benchmark(cfg: &SimConfig, reps: usize, opts: &BenchOptions) -> Result<BenchTable> {
    if reps == 0 {
        return Err(Error::InvalidConfig("need at least one replicate".into()));
    }
    if opts.strategies.is_empty() {
        return Err(Error::InvalidConfig("no strategies requested".into()));
    }
    let truth = make_block_cov(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
    rng.set_stream(STREAM_REPS);
    let seeds: Vec<u64> = (0..reps).map(|_| rng.random()).collect();

    let reps_idx: Vec<usize> = (0..reps).collect();
    let nested = exec::map_collect(reps_idx, |r| run_replicate(cfg, &truth, r, seeds[r], opts));
    Ok(BenchTable {
        rows: nested.into_iter().flatten().collect(),
    })
}

fn failed_row(replicate: usize, strategy: Strategy, seconds: f64, message: String) -> BenchRow {
    BenchRow {
        replicate,
        strategy: strategy.name().into(),
        ari: None,
        sensitivity: None,
        specificity: None,
        fdr: None,
        k_selected: None,
        d_selected: None,
        seconds,
        error: Some(message),
    }
}

fn run_replicate(
    cfg: &SimConfig,
    truth: &GroundTruth,
    replicate: usize,
    seed: u64,
    opts: &BenchOptions,
) -> Vec<BenchRow> {
    let x = sample_mvn(truth, cfg.n(), seed);
    let (x_std, s) = match standardize(&x) {
        Ok(xs) => {
            let s = sample_covariance(&xs);
            (xs, s)
        }
        Err(e) => {
            let msg = e.to_string();
            return opts
                .strategies
                .iter()
                .map(|&st| failed_row(replicate, st, 0.0, msg.clone()))
                .collect();
        }
    };

    // Path construction and scoring are shared by both selection strategies;
    // compute once, attribute the cost to each.
    let needs_selection = opts
        .strategies
        .iter()
        .any(|st| matches!(st, Strategy::Shdj | Strategy::Shrr));
    let (scored, shared_secs) = if needs_selection {
        let t = Instant::now();
        let path = threshold_path(&s);
        let scored = score_path(&x_std, &path).map_err(|e| e.to_string());
        (Some(scored), t.elapsed().as_secs_f64())
    } else {
        (None, 0.0)
    };

    opts.strategies
        .iter()
        .map(|&strategy| {
            let t = Instant::now();
            let outcome = run_strategy(strategy, cfg, truth, &x_std, &s, scored.as_ref(), opts);
            let mut seconds = t.elapsed().as_secs_f64();
            if matches!(strategy, Strategy::Shdj | Strategy::Shrr) {
                seconds += shared_secs;
            }
            match outcome {
                Ok((partition, edges)) => {
                    let ari = adjusted_rand_index(&partition, &truth.partition)
                        .expect("partitions cover the same variables");
                    let m = edge_metrics(&edges, &truth.edges, cfg.p());
                    BenchRow {
                        replicate,
                        strategy: strategy.name().into(),
                        ari: Some(ari),
                        sensitivity: m.sensitivity,
                        specificity: m.specificity,
                        fdr: m.fdr,
                        k_selected: Some(partition.k()),
                        d_selected: Some(partition.dimension()),
                        seconds,
                        error: None,
                    }
                }
                Err(msg) => failed_row(replicate, strategy, seconds, msg),
            }
        })
        .collect()
}

type StrategyOutcome = std::result::Result<(Partition, Vec<(usize, usize)>), String>;

fn run_strategy(
    strategy: Strategy,
    cfg: &SimConfig,
    truth: &GroundTruth,
    x_std: &DataMatrix,
    s: &CovMatrix,
    scored: Option<&std::result::Result<ScoredPath, String>>,
    opts: &BenchOptions,
) -> StrategyOutcome {
    match strategy {
        Strategy::GlassoAll => {
            let grid = default_rho_grid(s, opts.grid_len);
            let (_, est) = select_rho_with(x_std, &grid, opts.tol, opts.max_iter)
                .map_err(|e| e.to_string())?;
            let partition = components_from_edges(x_std.p(), &est.edges);
            Ok((partition, est.edges))
        }
        Strategy::Cgl => {
            let partition = hac_average(s, cfg.k()).map_err(|e| e.to_string())?;
            let mut edges = Vec::new();
            for members in partition.blocks() {
                if members.len() < 2 {
                    continue;
                }
                let sub = CovMatrix::new(s.submatrix(members)).map_err(|e| e.to_string())?;
                let rho = cgl_rho(&sub);
                let est = match graphical_lasso(&sub, rho, opts.tol, opts.max_iter) {
                    Ok(est) => est,
                    Err(Error::NotConverged { estimate, .. }) => *estimate,
                    Err(e) => return Err(e.to_string()),
                };
                for &(a, b) in &est.edges {
                    edges.push((members[a], members[b]));
                }
            }
            edges.sort_unstable();
            Ok((partition, edges))
        }
        Strategy::TruePart => {
            let partition = truth.partition.clone();
            let edges = infer_edges(x_std, &partition, opts)?;
            Ok((partition, edges))
        }
        Strategy::Shdj | Strategy::Shrr => {
            let scored = scored
                .expect("scored path prepared whenever a selection strategy runs")
                .as_ref()
                .map_err(|msg| msg.clone())?;
            let diag = match strategy {
                Strategy::Shdj => select_dimension_jump(&scored.points),
                _ => select_robust_regression(&scored.points),
            }
            .map_err(|e| e.to_string())?;
            let partition = diag.selected.partition.clone();
            let edges = infer_edges(x_std, &partition, opts)?;
            Ok((partition, edges))
        }
    }
}

fn infer_edges(
    x_std: &DataMatrix,
    partition: &Partition,
    opts: &BenchOptions,
) -> std::result::Result<Vec<(usize, usize)>, String> {
    let infer = InferOptions {
        standardize: false,
        tol: opts.tol,
        max_iter: opts.max_iter,
        grid_len: opts.grid_len,
    };
    let doc = run_infer(x_std, partition, &infer).map_err(|e| e.to_string())?;
    Ok(doc.all_edges())
}

fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

impl BenchTable {
    /// Per-strategy aggregates, in first-appearance row order. Undefined
    /// metric values are excluded from their aggregate, not coerced to 0.
    pub fn summarize(&self) -> Vec<StrategySummary> {
        let mut order: Vec<&str> = Vec::new();
        for row in &self.rows {
            if !order.contains(&row.strategy.as_str()) {
                order.push(&row.strategy);
            }
        }
        order
            .into_iter()
            .map(|name| {
                let rows: Vec<&BenchRow> =
                    self.rows.iter().filter(|r| r.strategy == name).collect();
                let collect = |f: fn(&BenchRow) -> Option<f64>| -> Vec<f64> {
                    rows.iter().filter_map(|r| f(r)).collect()
                };
                let (mean_ari, sd_ari) = mean_sd(&collect(|r| r.ari));
                let (mean_sensitivity, sd_sensitivity) = mean_sd(&collect(|r| r.sensitivity));
                let (mean_specificity, sd_specificity) = mean_sd(&collect(|r| r.specificity));
                let (mean_fdr, sd_fdr) = mean_sd(&collect(|r| r.fdr));
                let failures = rows.iter().filter(|r| r.error.is_some()).count();
                let mean_seconds =
                    rows.iter().map(|r| r.seconds).sum::<f64>() / rows.len() as f64;
                StrategySummary {
                    strategy: name.into(),
                    replicates: rows.len() - failures,
                    failures,
                    mean_ari,
                    sd_ari,
                    mean_sensitivity,
                    sd_sensitivity,
                    mean_specificity,
                    sd_specificity,
                    mean_fdr,
                    sd_fdr,
                    mean_seconds,
                }
            })
            .collect()
    }

    /// Write the per-row table as CSV. Undefined cells are `NA`. With
    /// `include_timings` off, the seconds column is written as a constant so
    /// repeated runs produce byte-identical files.
    pub fn write_csv<W: Write>(&self, writer: W, include_timings: bool) -> Result<()> {
        fn opt_f(v: Option<f64>) -> String {
            v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
        }
        fn opt_u(v: Option<usize>) -> String {
            v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
        }
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "replicate",
            "strategy",
            "ari",
            "sensitivity",
            "specificity",
            "fdr",
            "k_selected",
            "d_selected",
            "seconds",
        ])?;
        for row in &self.rows {
            let seconds = if include_timings {
                format!("{:.6}", row.seconds)
            } else {
                "0.000000".to_string()
            };
            w.write_record([
                row.replicate.to_string(),
                row.strategy.clone(),
                opt_f(row.ari),
                opt_f(row.sensitivity),
                opt_f(row.specificity),
                opt_f(row.fdr),
                opt_u(row.k_selected),
                opt_u(row.d_selected),
                seconds,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
