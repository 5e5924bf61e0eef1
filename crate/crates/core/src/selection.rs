//! Penalized model selection over the thresholding path.
//!
//! Each candidate partition B is scored by the maximized Gaussian
//! log-likelihood of a zero-mean model whose covariance is block-diagonal
//! over B's blocks, and charged a penalty κ·D_B/n, where D_B = Σ_k p_k(p_k−1)/2
//! counts the free off-diagonal parameters. The constant κ is not chosen on a
//! grid: because every model enters the criterion as a line −loglik/n + κ·D/n
//! in κ, the selected dimension as a function of κ is a step function whose
//! breakpoints are exactly the slopes between vertices of the lower convex
//! hull of {(D_B, −loglik_B)}. Two data-driven calibrations of κ are offered:
//!
//! * **dimension jump** — κ_min is the breakpoint with the largest drop in
//!   selected dimension (ties resolved toward the larger κ and flagged);
//! * **robust regression** — κ_min is the Huber-regression slope of loglik
//!   against dimension over the complex models (dimension at or above a
//!   configurable quantile of the candidate dimensions, default the median).
//!
//! Both then use κ_opt = 2·κ_min and select the criterion argmin at κ_opt,
//! breaking ties toward the smaller dimension.

use serde::Serialize;

use crate::covariance::{sample_covariance, CovMatrix, DataMatrix};
use crate::error::{Error, Result};
use crate::exec;
use crate::linalg;
use crate::partition::{Partition, ThresholdStep};

/// One scored candidate model on the thresholding path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelPoint {
    /// Smallest sweep level producing this partition.
    pub lambda: f64,
    /// The candidate partition.
    pub partition: Partition,
    /// Model dimension D_B = Σ_k p_k(p_k−1)/2.
    pub dimension: usize,
    /// Maximized block-diagonal Gaussian log-likelihood (total over rows).
    pub loglik: f64,
    /// Number of observations the log-likelihood was computed from.
    pub n: usize,
}

/// A path step dropped during scoring because a block's covariance submatrix
/// was singular.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcludedStep {
    pub lambda: f64,
    /// Index of the offending block within the step's partition.
    pub block: usize,
    /// Size of the offending block.
    pub size: usize,
}

/// Feasible scored candidates plus a report of the dropped steps.
#[derive(Debug, Clone, Serialize)]
pub struct ScoredPath {
    pub points: Vec<ModelPoint>,
    pub excluded: Vec<ExcludedStep>,
}

/// Maximized log-likelihood of a zero-mean Gaussian whose covariance is
/// block-diagonal over `b`, evaluated at the per-block MLE sample covariances
/// (divisor n). In closed form
/// `−(n/2)·[p·log(2π) + Σ_k (log det Σ̂_k + p_k)]`,
/// with each log-det from a per-block Cholesky factorization.
pub fn block_loglik(x: &DataMatrix, b: &Partition) -> Result<f64> {
    if b.p() != x.p() {
        return Err(Error::InvalidPartition(format!(
            "partition covers {} variables, data has {}",
            b.p(),
            x.p()
        )));
    }
    block_loglik_from_cov(&sample_covariance(x), x.n(), b)
}

/// As [`block_loglik`], starting from a precomputed sample covariance. Lets a
/// path scorer factor the O(n·p²) covariance out of the per-candidate loop.
pub fn block_loglik_from_cov(s: &CovMatrix, n: usize, b: &Partition) -> Result<f64> {
    let p = s.p();
    debug_assert_eq!(b.p(), p);
    let mut logdet_sum = 0.0;
    for (k, block) in b.blocks().iter().enumerate() {
        let sub = s.submatrix(block);
        match linalg::logdet_spd(&sub) {
            Some(ld) => logdet_sum += ld,
            None => {
                return Err(Error::SingularBlock {
                    block: k,
                    size: block.len(),
                })
            }
        }
    }
    let (n_f, p_f) = (n as f64, p as f64);
    Ok(-(n_f / 2.0) * (p_f * (2.0 * std::f64::consts::PI).ln() + logdet_sum + p_f))
}

/// Score every step of a thresholding path, dropping (and reporting) steps
/// with a singular block. Errors only if nothing remains feasible.
///
/// Candidates are scored independently and collected in path order, so the
/// result is identical with or without the `parallel` feature.
pub fn score_path(x: &DataMatrix, path: &[ThresholdStep]) -> Result<ScoredPath> {
    let s = sample_covariance(x);
    let n = x.n();
    let indices: Vec<usize> = (0..path.len()).collect();
    let scored = exec::map_collect(indices, |i| score_step(&s, n, &path[i]));
    assemble_scored(scored)
}

/// Sequential twin of [`score_path`]: never touches the thread pool, used as
/// the reference side of determinism checks and benchmarks.
pub fn score_path_seq(x: &DataMatrix, path: &[ThresholdStep]) -> Result<ScoredPath> {
    let s = sample_covariance(x);
    let n = x.n();
    let indices: Vec<usize> = (0..path.len()).collect();
    let scored = exec::map_collect_seq(indices, |i| score_step(&s, n, &path[i]));
    assemble_scored(scored)
}

fn score_step(
    s: &CovMatrix,
    n: usize,
    step: &ThresholdStep,
) -> std::result::Result<ModelPoint, ExcludedStep> {
    match block_loglik_from_cov(s, n, &step.partition) {
        Ok(loglik) => Ok(ModelPoint {
            lambda: step.lambda,
            partition: step.partition.clone(),
            dimension: step.partition.dimension(),
            loglik,
            n,
        }),
        Err(Error::SingularBlock { block, size }) => Err(ExcludedStep {
            lambda: step.lambda,
            block,
            size,
        }),
        Err(e) => unreachable!("unexpected scoring error: {e}"),
    }
}

fn assemble_scored(
    scored: Vec<std::result::Result<ModelPoint, ExcludedStep>>,
) -> Result<ScoredPath> {
    let mut points = Vec::new();
    let mut excluded = Vec::new();
    for item in scored {
        match item {
            Ok(point) => points.push(point),
            Err(drop) => excluded.push(drop),
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    Ok(ScoredPath { points, excluded })
}

/// Penalized selection criterion −loglik/n + κ·D_B/n (lower is better).
pub fn criterion(m: &ModelPoint, kappa: f64) -> f64 {
    let n = m.n as f64;
    -(m.loglik / n) + kappa * (m.dimension as f64 / n)
}

/// Penalty shape the slope-heuristic κ multiplies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyShape {
    /// Per-observation dimension D/n — the default shape.
    Dimension,
    /// Heavier shape `(d/n)·[2c² + log(p⁴ / (d·min(d·c²/n, 1)))]` with a
    /// user-supplied scale constant c; see [`pen_full`].
    Full { c: f64 },
}

impl PenaltyShape {
    /// Penalty weight of a model with dimension `d` among `p` variables and
    /// `n` observations.
    pub fn value(&self, d: usize, n: usize, p: usize) -> f64 {
        match self {
            PenaltyShape::Dimension => d as f64 / n as f64,
            PenaltyShape::Full { c } => pen_full(d, n, p, *c),
        }
    }
}

/// Over-penalizing shape `(d/n)·[2c² + log(p⁴/(d·min(d·c²/n, 1)))]`.
///
/// Defined as 0 at d = 0: the empty model has no free off-diagonal parameters
/// to charge for. Strictly increasing in d over the feasible range
/// d ≤ p(p−1)/2, so it orders models exactly like the plain dimension while
/// charging small models relatively more.
pub fn pen_full(d: usize, n: usize, p: usize, c: f64) -> f64 {
    if d == 0 {
        return 0.0;
    }
    let (d_f, n_f, p_f) = (d as f64, n as f64, p as f64);
    let inner = (d_f * c * c / n_f).min(1.0);
    (d_f / n_f) * (2.0 * c * c + (p_f.powi(4) / (d_f * inner)).ln())
}

/// One segment start of the selected-dimension step function: for
/// κ ∈ [kappa, next kappa) the criterion argmin has this dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepPoint {
    pub kappa: f64,
    pub dimension: usize,
}

/// Everything a selection run reports besides the chosen partition.
#[derive(Debug, Clone, Serialize)]
pub struct SelectionDiagnostics {
    /// "dimension_jump" or "robust_regression".
    pub method: String,
    /// Selected dimension as a step function of κ (first entry at κ = 0).
    pub step_function: Vec<StepPoint>,
    pub kappa_min: f64,
    /// Always 2·kappa_min.
    pub kappa_opt: f64,
    /// Huber slope of loglik/n against the penalty shape (robust regression
    /// only).
    pub regression_slope: Option<f64>,
    /// Dimensions of the models used in the robust fit (empty for the
    /// dimension-jump method).
    pub regression_dimensions: Vec<usize>,
    /// True when the largest dimension jump was tied and the larger κ won.
    pub jump_tie: bool,
    /// The model at the criterion argmin under κ_opt.
    pub selected: ModelPoint,
}

/// Tunables shared by both calibrations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionOptions {
    /// Quantile of the candidate dimensions above which models count as
    /// "complex" for the robust regression (default 0.5, the median).
    pub quantile: f64,
    pub shape: PenaltyShape,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        Self {
            quantile: 0.5,
            shape: PenaltyShape::Dimension,
        }
    }
}

/// Exact κ-breakpoints of the selected-dimension step function under the
/// default dimension penalty shape.
///
/// No κ grid is involved: models are lines in κ, their lower envelope comes
/// from the lower convex hull of {(D_B, −loglik_B)}, and the breakpoints are
/// the hull-edge slopes. With every candidate sharing one dimension there is
/// no trade-off to resolve and [`Error::DegeneratePath`] is returned.
pub fn selection_step_function(points: &[ModelPoint]) -> Result<Vec<StepPoint>> {
    shaped_step_function(points, PenaltyShape::Dimension)
}

fn validate_points(points: &[ModelPoint]) -> Result<(usize, usize)> {
    let first = points.first().ok_or(Error::EmptyCandidateSet)?;
    let (n, p) = (first.n, first.partition.p());
    for m in points {
        if m.n != n || m.partition.p() != p {
            return Err(Error::InvalidData(
                "candidate models disagree on n or p".into(),
            ));
        }
    }
    Ok((n, p))
}

fn shaped_step_function(points: &[ModelPoint], shape: PenaltyShape) -> Result<Vec<StepPoint>> {
    let (n, p) = validate_points(points)?;
    // Best log-likelihood per distinct dimension; equal-loglik ties keep the
    // earliest point, which is irrelevant here because only (dim, loglik)
    // pairs enter the hull.
    let mut best: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
    for m in points {
        best.entry(m.dimension)
            .and_modify(|ll| {
                if m.loglik > *ll {
                    *ll = m.loglik;
                }
            })
            .or_insert(m.loglik);
    }
    if best.len() < 2 {
        let dimension = *best.keys().next().expect("non-empty candidate set");
        return Err(Error::DegeneratePath { dimension });
    }

    // Upper convex hull of (shape value, loglik/n), x strictly increasing
    // because the shape is strictly increasing in dimension.
    struct Pt {
        x: f64,
        y: f64,
        dim: usize,
    }
    let pts: Vec<Pt> = best
        .iter()
        .map(|(&dim, &ll)| Pt {
            x: shape.value(dim, n, p),
            y: ll / n as f64,
            dim,
        })
        .collect();
    // A middle point survives only if it sits above the chord by more than
    // floating-point noise; models collinear in exact arithmetic collapse
    // into one hull edge instead of splitting a breakpoint by ~1e−16.
    let not_above = |o: &Pt, a: &Pt, b: &Pt| {
        let lhs = (a.x - o.x) * (b.y - o.y);
        let rhs = (a.y - o.y) * (b.x - o.x);
        lhs - rhs >= -1e-12 * (lhs.abs() + rhs.abs())
    };
    let mut hull: Vec<&Pt> = Vec::with_capacity(pts.len());
    for pt in &pts {
        while hull.len() >= 2 && not_above(hull[hull.len() - 2], hull[hull.len() - 1], pt) {
            hull.pop();
        }
        hull.push(pt);
    }

    // Only the ascending-loglik prefix of the hull is ever selected for
    // κ ≥ 0; on a flat top the smaller dimension wins the κ = 0 tie.
    let mut idx_max = 0;
    for (i, h) in hull.iter().enumerate() {
        if h.y > hull[idx_max].y {
            idx_max = i;
        }
    }
    let hull = &hull[..=idx_max];

    let mut steps = vec![StepPoint {
        kappa: 0.0,
        dimension: hull[idx_max].dim,
    }];
    for i in (0..idx_max).rev() {
        let kappa = (hull[i + 1].y - hull[i].y) / (hull[i + 1].x - hull[i].x);
        steps.push(StepPoint {
            kappa,
            dimension: hull[i].dim,
        });
    }
    debug_assert!(steps.windows(2).all(|w| w[0].kappa < w[1].kappa));
    debug_assert!(steps.windows(2).all(|w| w[0].dimension > w[1].dimension));
    Ok(steps)
}

/// Criterion argmin at a fixed κ under the default dimension shape, ties
/// broken toward the smaller dimension.
pub fn argmin_criterion(points: &[ModelPoint], kappa: f64) -> &ModelPoint {
    argmin_shaped(points, kappa, PenaltyShape::Dimension)
}

fn argmin_shaped(points: &[ModelPoint], kappa: f64, shape: PenaltyShape) -> &ModelPoint {
    let p = points[0].partition.p();
    let mut best = &points[0];
    let mut best_crit = shaped_criterion(best, kappa, shape, p);
    for m in &points[1..] {
        let crit = shaped_criterion(m, kappa, shape, p);
        if crit < best_crit || (crit == best_crit && m.dimension < best.dimension) {
            best = m;
            best_crit = crit;
        }
    }
    best
}

fn shaped_criterion(m: &ModelPoint, kappa: f64, shape: PenaltyShape, p: usize) -> f64 {
    -(m.loglik / m.n as f64) + kappa * shape.value(m.dimension, m.n, p)
}

/// Dimension-jump calibration with default options.
pub fn select_dimension_jump(points: &[ModelPoint]) -> Result<SelectionDiagnostics> {
    select_dimension_jump_with(points, &SelectionOptions::default())
}

/// Dimension-jump calibration: κ_min is the step-function breakpoint with the
/// largest drop in selected dimension (ties toward the larger κ, flagged),
/// κ_opt = 2·κ_min, and the returned model is the criterion argmin at κ_opt.
pub fn select_dimension_jump_with(
    points: &[ModelPoint],
    opts: &SelectionOptions,
) -> Result<SelectionDiagnostics> {
    if points.len() < 3 {
        return Err(Error::TooFewCandidates {
            needed: 3,
            got: points.len(),
        });
    }
    let step_function = shaped_step_function(points, opts.shape)?;
    if step_function.len() < 2 {
        // A single segment means one model dominates at every κ ≥ 0; there is
        // no jump to read a slope from.
        return Err(Error::DegeneratePath {
            dimension: step_function[0].dimension,
        });
    }
    let mut kappa_min = f64::NAN;
    let mut best_drop = 0usize;
    let mut jump_tie = false;
    for w in step_function.windows(2) {
        let drop = w[0].dimension - w[1].dimension;
        let kappa = w[1].kappa;
        if drop > best_drop {
            best_drop = drop;
            kappa_min = kappa;
            jump_tie = false;
        } else if drop == best_drop {
            // Tie on the largest jump: keep the larger κ and flag it.
            jump_tie = true;
            if kappa > kappa_min {
                kappa_min = kappa;
            }
        }
    }
    let kappa_opt = 2.0 * kappa_min;
    let selected = argmin_shaped(points, kappa_opt, opts.shape).clone();
    Ok(SelectionDiagnostics {
        method: "dimension_jump".into(),
        step_function,
        kappa_min,
        kappa_opt,
        regression_slope: None,
        regression_dimensions: Vec::new(),
        jump_tie,
        selected,
    })
}

/// Robust-regression calibration with default options (median cutoff).
pub fn select_robust_regression(points: &[ModelPoint]) -> Result<SelectionDiagnostics> {
    select_robust_regression_with(points, &SelectionOptions::default())
}

/// Robust-regression calibration: κ_min is the Huber-IRLS slope of loglik/n
/// against the penalty shape over the complex models (dimension at or above
/// the configured quantile of candidate dimensions), κ_opt = 2·κ_min.
pub fn select_robust_regression_with(
    points: &[ModelPoint],
    opts: &SelectionOptions,
) -> Result<SelectionDiagnostics> {
    if points.len() < 3 {
        return Err(Error::TooFewCandidates {
            needed: 3,
            got: points.len(),
        });
    }
    if !(0.0..=1.0).contains(&opts.quantile) {
        return Err(Error::InvalidConfig(format!(
            "complexity quantile must be in [0, 1], got {}",
            opts.quantile
        )));
    }
    let (n, p) = validate_points(points)?;
    let step_function = shaped_step_function(points, opts.shape)?;

    // Complexity cutoff: nearest-rank quantile of the candidate dimensions.
    let mut dims: Vec<usize> = points.iter().map(|m| m.dimension).collect();
    dims.sort_unstable();
    let rank = ((dims.len() - 1) as f64 * opts.quantile).round() as usize;
    let cutoff = dims[rank];

    let complex: Vec<&ModelPoint> = points
        .iter()
        .filter(|m| m.dimension >= cutoff)
        .collect();
    let mut complex_dims: Vec<usize> = complex.iter().map(|m| m.dimension).collect();
    complex_dims.sort_unstable();
    let distinct = {
        let mut d = complex_dims.clone();
        d.dedup();
        d.len()
    };
    if distinct < 2 {
        return Err(Error::InsufficientComplexModels);
    }

    let xs: Vec<f64> = complex
        .iter()
        .map(|m| opts.shape.value(m.dimension, n, p))
        .collect();
    let ys: Vec<f64> = complex.iter().map(|m| m.loglik / n as f64).collect();
    let (slope, _intercept, _iters) = huber_slope(&xs, &ys);

    let kappa_min = slope;
    let kappa_opt = 2.0 * kappa_min;
    let selected = argmin_shaped(points, kappa_opt, opts.shape).clone();
    Ok(SelectionDiagnostics {
        method: "robust_regression".into(),
        step_function,
        kappa_min,
        kappa_opt,
        regression_slope: Some(slope),
        regression_dimensions: complex_dims,
        jump_tie: false,
        selected,
    })
}

/// Huber tuning constant: 95% Gaussian efficiency, the textbook default.
const HUBER_C: f64 = 1.345;
/// IRLS iteration cap.
const HUBER_MAX_ITER: usize = 100;
/// Convergence threshold on the slope change between IRLS iterations.
const HUBER_SLOPE_TOL: f64 = 1e-10;

/// Huber IRLS simple linear regression; returns (slope, intercept, iterations).
///
/// Scale is re-estimated each iteration as MAD/0.6745 of the residuals with a
/// small floor, so on clean data the fit collapses to least squares while a
/// gross outlier's weight shrinks toward zero.
fn huber_slope(xs: &[f64], ys: &[f64]) -> (f64, f64, usize) {
    debug_assert_eq!(xs.len(), ys.len());
    debug_assert!(xs.len() >= 2);
    let mut weights = vec![1.0_f64; xs.len()];
    let mut y_scale: Vec<f64> = ys.iter().map(|y| y.abs()).collect();
    let scale_floor = 1e-12 * (1.0 + median_inplace(&mut y_scale));
    let (mut slope, mut intercept) = weighted_ls(xs, ys, &weights);
    let mut iterations = 0;
    for iter in 1..=HUBER_MAX_ITER {
        iterations = iter;
        let residuals: Vec<f64> = xs
            .iter()
            .zip(ys)
            .map(|(&x, &y)| y - intercept - slope * x)
            .collect();
        let mut centered: Vec<f64> = residuals.clone();
        let med = median_inplace(&mut centered);
        let mut abs_dev: Vec<f64> = residuals.iter().map(|r| (r - med).abs()).collect();
        let sigma = (median_inplace(&mut abs_dev) / 0.6745).max(scale_floor);
        for (w, r) in weights.iter_mut().zip(&residuals) {
            let a = r.abs();
            *w = if a <= HUBER_C * sigma { 1.0 } else { HUBER_C * sigma / a };
        }
        let (new_slope, new_intercept) = weighted_ls(xs, ys, &weights);
        let done = (new_slope - slope).abs() <= HUBER_SLOPE_TOL;
        slope = new_slope;
        intercept = new_intercept;
        if done {
            break;
        }
    }
    (slope, intercept, iterations)
}

fn weighted_ls(xs: &[f64], ys: &[f64], ws: &[f64]) -> (f64, f64) {
    let (mut sw, mut swx, mut swy, mut swxx, mut swxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&x, &y), &w) in xs.iter().zip(ys).zip(ws) {
        sw += w;
        swx += w * x;
        swy += w * y;
        swxx += w * x * x;
        swxy += w * x * y;
    }
    let denom = sw * swxx - swx * swx;
    debug_assert!(denom.abs() > 0.0, "regression needs spread in x");
    let slope = (sw * swxy - swx * swy) / denom;
    let intercept = (swy - slope * swx) / sw;
    (slope, intercept)
}

fn median_inplace(v: &mut [f64]) -> f64 {
    debug_assert!(!v.is_empty());
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}
