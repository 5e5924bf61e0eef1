//! End-to-end orchestration: data → thresholding path → calibrated partition
//! selection, then per-block network inference on the chosen partition.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::covariance::{sample_covariance, standardize, DataMatrix};
use crate::error::{Error, Result};
use crate::exec;
use crate::glasso::{self, default_rho_grid, select_rho_with};
use crate::partition::{threshold_path, Partition};
use crate::selection::{
    score_path, select_dimension_jump_with, select_robust_regression_with, ExcludedStep,
    ModelPoint, SelectionDiagnostics, SelectionOptions,
};

/// Which slope-heuristic calibration drives partition selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    DimensionJump,
    RobustRegression,
}

impl FromStr for Calibration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shdj" | "dimension_jump" => Ok(Self::DimensionJump),
            "shrr" | "robust_regression" => Ok(Self::RobustRegression),
            other => Err(Error::InvalidConfig(format!(
                "unknown calibration '{other}' (expected shdj or shrr)"
            ))),
        }
    }
}

impl fmt::Display for Calibration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::DimensionJump => "shdj",
            Self::RobustRegression => "shrr",
        })
    }
}

/// Options for the structure-selection stage.
#[derive(Debug, Clone)]
pub struct SelectOptions {
    /// Center and scale columns before computing the covariance.
    pub standardize: bool,
    pub calibration: Calibration,
    pub selection: SelectionOptions,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self {
            standardize: true,
            calibration: Calibration::DimensionJump,
            selection: SelectionOptions::default(),
        }
    }
}

/// Everything the selection stage produced: the chosen partition, the full
/// calibration diagnostics, and the scored path behind them (plot-ready).
#[derive(Debug, Clone, Serialize)]
pub struct StructureReport {
    pub partition: Partition,
    pub diagnostics: SelectionDiagnostics,
    /// All scored candidates (dimension vs log-likelihood table).
    pub points: Vec<ModelPoint>,
    /// Path steps dropped because a block's covariance was singular.
    pub excluded: Vec<ExcludedStep>,
}

/// Run the structure-selection stage on raw data.
pub fn run_select(x: &DataMatrix, opts: &SelectOptions) -> Result<StructureReport> {
    let x_owned;
    let x_std = if opts.standardize {
        x_owned = standardize(x)?;
        &x_owned
    } else {
        x
    };
    let s = sample_covariance(x_std);
    let path = threshold_path(&s);
    let scored = score_path(x_std, &path)?;
    let diagnostics = match opts.calibration {
        Calibration::DimensionJump => select_dimension_jump_with(&scored.points, &opts.selection)?,
        Calibration::RobustRegression => {
            select_robust_regression_with(&scored.points, &opts.selection)?
        }
    };
    Ok(StructureReport {
        partition: diagnostics.selected.partition.clone(),
        diagnostics,
        points: scored.points,
        excluded: scored.excluded,
    })
}

/// Options for the per-block network-inference stage.
#[derive(Debug, Clone)]
pub struct InferOptions {
    /// Center and scale columns first. Leave off when the data were already
    /// standardized upstream.
    pub standardize: bool,
    pub tol: f64,
    pub max_iter: usize,
    /// Length of the per-block regularization grid.
    pub grid_len: usize,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self {
            standardize: true,
            tol: glasso::DEFAULT_TOL,
            max_iter: glasso::DEFAULT_MAX_ITER,
            grid_len: glasso::DEFAULT_GRID_LEN,
        }
    }
}

/// One estimated conditional-dependence edge, in global variable indices
/// (`i < j`), weighted by the precision-matrix entry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkEdge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// The estimated network of one block.
#[derive(Debug, Clone, Serialize)]
pub struct BlockNetwork {
    /// Block index within the partition.
    pub block: usize,
    /// Global indices of the block's variables.
    pub variables: Vec<usize>,
    pub names: Vec<String>,
    /// Chosen regularization level; `None` for singleton blocks, which have
    /// no network to estimate.
    pub rho: Option<f64>,
    /// False when the solver hit its iteration cap at every grid level and
    /// the reported edges come from the last partial estimate.
    pub converged: bool,
    pub edges: Vec<NetworkEdge>,
}

/// All per-block networks for one partition, bundled for serialization.
#[derive(Debug, Clone, Serialize)]
pub struct NetworkDocument {
    pub p: usize,
    /// Block label of each variable.
    pub block_labels: Vec<usize>,
    pub blocks: Vec<BlockNetwork>,
}

impl NetworkDocument {
    /// Every estimated edge across blocks, sorted, in global indices.
    pub fn all_edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .blocks
            .iter()
            .flat_map(|b| b.edges.iter().map(|e| (e.i, e.j)))
            .collect();
        edges.sort_unstable();
        edges
    }
}

/// Infer each block's network independently: per-block regularization chosen
/// by the network information criterion over a data-driven grid, blocks
/// farmed out in parallel when the `parallel` feature is on. A block whose
/// solver never converges is reported with its partial estimate and flagged.
pub fn run_infer(
    x: &DataMatrix,
    partition: &Partition,
    opts: &InferOptions,
) -> Result<NetworkDocument> {
    if partition.p() != x.p() {
        return Err(Error::InvalidPartition(format!(
            "partition covers {} variables but the data have {}",
            partition.p(),
            x.p()
        )));
    }
    let x_owned;
    let x_std = if opts.standardize {
        x_owned = standardize(x)?;
        &x_owned
    } else {
        x
    };
    let indices: Vec<usize> = (0..partition.blocks().len()).collect();
    let fitted = exec::map_collect(indices, |b| fit_block(x_std, partition, b, opts));
    let mut blocks = Vec::with_capacity(fitted.len());
    for fit in fitted {
        blocks.push(fit?);
    }
    Ok(NetworkDocument {
        p: x.p(),
        block_labels: partition.labels(),
        blocks,
    })
}

fn fit_block(
    x_std: &DataMatrix,
    partition: &Partition,
    b: usize,
    opts: &InferOptions,
) -> Result<BlockNetwork> {
    let members = &partition.blocks()[b];
    let names = members.iter().map(|&j| x_std.names()[j].clone()).collect();
    if members.len() < 2 {
        return Ok(BlockNetwork {
            block: b,
            variables: members.clone(),
            names,
            rho: None,
            converged: true,
            edges: Vec::new(),
        });
    }
    let x_block = x_std.select_columns(members)?;
    let s_block = sample_covariance(&x_block);
    let grid = default_rho_grid(&s_block, opts.grid_len);
    let (est, converged) = match select_rho_with(&x_block, &grid, opts.tol, opts.max_iter) {
        Ok((_, est)) => (est, true),
        Err(Error::NotConverged { estimate, .. }) => (*estimate, false),
        Err(e) => return Err(e),
    };
    let edges = est
        .edges
        .iter()
        .map(|&(a, c)| NetworkEdge {
            i: members[a],
            j: members[c],
            weight: est.theta[[a, c]],
        })
        .collect();
    Ok(BlockNetwork {
        block: b,
        variables: members.clone(),
        names,
        rho: Some(est.rho),
        converged,
        edges,
    })
}
