//! Synthetic block-structured Gaussian data and edge-recovery metrics.
//!
//! Ground truth is a block-diagonal covariance with K near-equal blocks,
//! each built as `TTᵗ + δI` from a random lower-triangular `T` with
//! Uniform(−1, 1) entries; δ lifts the smallest eigenvalue to a configurable
//! floor, and the assembled matrix is rescaled to correlation form. The true
//! conditional-dependence network is the off-diagonal support of the inverse,
//! which block-diagonality confines within blocks.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::covariance::{CovMatrix, DataMatrix};
use crate::error::{Error, Result};
use crate::linalg;
use crate::partition::Partition;

/// Substream carrying the covariance construction draws.
const STREAM_COV: u64 = 0;
/// Substream carrying the observation draws.
const STREAM_SAMPLES: u64 = 1;

/// Relative threshold below which an inverse-covariance entry counts as a
/// structural zero when reading off ground-truth edges.
const SUPPORT_TOL_REL: f64 = 1e-8;

/// Scenario description: dimensions, true block count, seed, and the
/// eigenvalue floor for the per-block diagonal lift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    p: usize,
    n: usize,
    k: usize,
    seed: u64,
    eigen_floor: f64,
}

impl SimConfig {
    /// Default smallest-eigenvalue target for each unscaled block.
    pub const DEFAULT_EIGEN_FLOOR: f64 = 0.1;

    pub fn new(p: usize, n: usize, k: usize, seed: u64) -> Result<Self> {
        if k == 0 || p < k {
            return Err(Error::InvalidConfig(format!(
                "need p >= k >= 1, got p = {p}, k = {k}"
            )));
        }
        if n < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 observations, got n = {n}"
            )));
        }
        Ok(Self {
            p,
            n,
            k,
            seed,
            eigen_floor: Self::DEFAULT_EIGEN_FLOOR,
        })
    }

    pub fn with_eigen_floor(mut self, eigen_floor: f64) -> Result<Self> {
        if !eigen_floor.is_finite() || eigen_floor <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "eigenvalue floor must be positive, got {eigen_floor}"
            )));
        }
        self.eigen_floor = eigen_floor;
        Ok(self)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn eigen_floor(&self) -> f64 {
        self.eigen_floor
    }
}

/// The data-generating model: covariance, true partition, and the true edge
/// set (off-diagonal support of the precision matrix).
#[derive(Debug, Clone, Serialize)]
pub struct GroundTruth {
    #[serde(skip)]
    pub sigma: CovMatrix,
    pub partition: Partition,
    pub edges: Vec<(usize, usize)>,
}

impl GroundTruth {
    pub fn p(&self) -> usize {
        self.sigma.p()
    }
}

/// Block sizes differing by at most one: the first `p mod k` blocks take the
/// extra variable.
fn block_sizes(p: usize, k: usize) -> Vec<usize> {
    let base = p / k;
    let extra = p % k;
    (0..k).map(|i| base + usize::from(i < extra)).collect()
}

/// One unscaled block `TTᵗ + δI` with its smallest eigenvalue lifted to the
/// floor.
fn block_sigma(rng: &mut ChaCha8Rng, size: usize, eigen_floor: f64) -> Array2<f64> {
    let mut t = Array2::<f64>::zeros((size, size));
    for i in 0..size {
        for j in 0..=i {
            t[[i, j]] = rng.random_range(-1.0..1.0);
        }
    }
    let mut sigma = t.dot(&t.t());
    let lambda_min = linalg::smallest_eigenvalue_lower_bound(&sigma, 1e-8);
    let delta = (eigen_floor - lambda_min).max(0.0);
    if delta > 0.0 {
        for i in 0..size {
            sigma[[i, i]] += delta;
        }
    }
    sigma
}

/// Build the ground-truth covariance for a scenario: K near-equal blocks of
/// `TTᵗ + δI`, assembled block-diagonally and rescaled to unit diagonal. The
/// true edges are read off the per-block inverses.
pub fn make_block_cov(cfg: &SimConfig) -> GroundTruth {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_COV);

    let sizes = block_sizes(cfg.p, cfg.k);
    let mut sigma = Array2::<f64>::zeros((cfg.p, cfg.p));
    let mut blocks = Vec::with_capacity(cfg.k);
    let mut start = 0;
    for &size in &sizes {
        let block = block_sigma(&mut rng, size, cfg.eigen_floor);
        for a in 0..size {
            for b in 0..size {
                sigma[[start + a, start + b]] = block[[a, b]];
            }
        }
        blocks.push((start..start + size).collect::<Vec<_>>());
        start += size;
    }

    // Correlation form: exact symmetry preserved, diagonal pinned to exactly
    // 1 (σ_ii/(√σ_ii·√σ_ii) would be off by an ulp).
    let scale: Vec<f64> = (0..cfg.p).map(|i| sigma[[i, i]].sqrt()).collect();
    for i in 0..cfg.p {
        for j in 0..cfg.p {
            if i == j {
                sigma[[i, j]] = 1.0;
            } else {
                sigma[[i, j]] /= scale[i] * scale[j];
            }
        }
    }

    let partition = Partition::new(blocks).expect("consecutive ranges form a valid partition");
    let mut edges = Vec::new();
    for block in partition.blocks() {
        if block.len() < 2 {
            continue;
        }
        let sub = Array2::from_shape_fn((block.len(), block.len()), |(a, b)| {
            sigma[[block[a], block[b]]]
        });
        let theta = linalg::inverse_spd(&sub).expect("lifted block is positive definite");
        let max_abs = theta.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for a in 0..block.len() {
            for b in (a + 1)..block.len() {
                if theta[[a, b]].abs() > SUPPORT_TOL_REL * max_abs {
                    edges.push((block[a], block[b]));
                }
            }
        }
    }
    edges.sort_unstable();

    let sigma = CovMatrix::new(sigma).expect("construction yields a valid covariance");
    GroundTruth {
        sigma,
        partition,
        edges,
    }
}

/// Draw `n` rows from N(0, Σ) as `Z·Lᵗ` with `L` the Cholesky factor of Σ.
/// Deterministic given the seed, regardless of thread count.
pub fn sample_mvn(truth: &GroundTruth, n: usize, seed: u64) -> DataMatrix {
    assert!(n >= 1, "need at least one observation");
    let p = truth.p();
    let l = linalg::cholesky(truth.sigma.values())
        .expect("ground-truth covariance is positive definite");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_SAMPLES);
    let mut values = Array2::<f64>::zeros((n, p));
    let mut z = vec![0.0_f64; p];
    for row in 0..n {
        for zj in z.iter_mut() {
            *zj = StandardNormal.sample(&mut rng);
        }
        // x = L·z, exploiting lower-triangularity.
        for i in 0..p {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += l[[i, j]] * z[j];
            }
            values[[row, i]] = acc;
        }
    }
    let names = (0..p).map(|j| format!("v{j}")).collect();
    DataMatrix::new(values, names).expect("sampled values are finite")
}

#[derive(Clone, Copy)]
enum Linkage {
    Average,
    /// Only exercised by the equivalence check against the thresholding
    /// sweep, which merges in the same order single linkage does.
    #[cfg_attr(not(test), allow(dead_code))]
    Single,
}

/// Agglomerative clustering on the dissimilarity `1 − |s_ij|`, cut at `k`
/// clusters. Ties in the merge order resolve to the lexicographically
/// smallest active pair, so the result is deterministic.
fn hac_cut(s: &CovMatrix, k: usize, linkage: Linkage) -> Result<Partition> {
    let p = s.p();
    if k == 0 || k > p {
        return Err(Error::InvalidConfig(format!(
            "cluster count must be in 1..={p}, got {k}"
        )));
    }
    let mut dist = Array2::<f64>::zeros((p, p));
    for i in 0..p {
        for j in 0..p {
            if i != j {
                dist[[i, j]] = 1.0 - s.values()[[i, j]].abs();
            }
        }
    }
    let mut active: Vec<bool> = vec![true; p];
    let mut size: Vec<usize> = vec![1; p];
    let mut assign: Vec<usize> = (0..p).collect();

    for _ in 0..p.saturating_sub(k) {
        // Closest active pair, smallest indices on ties.
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..p {
            if !active[a] {
                continue;
            }
            for b in (a + 1)..p {
                if !active[b] {
                    continue;
                }
                let d = dist[[a, b]];
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, a, b));
                }
            }
        }
        let (_, a, b) = best.expect("more active clusters than the target count");
        // Merge b into a; Lance–Williams update for the chosen linkage.
        for c in 0..p {
            if !active[c] || c == a || c == b {
                continue;
            }
            let dac = dist[[a, c]];
            let dbc = dist[[b, c]];
            let d = match linkage {
                Linkage::Average => {
                    (size[a] as f64 * dac + size[b] as f64 * dbc)
                        / (size[a] + size[b]) as f64
                }
                Linkage::Single => dac.min(dbc),
            };
            dist[[a, c]] = d;
            dist[[c, a]] = d;
        }
        size[a] += size[b];
        active[b] = false;
        for label in assign.iter_mut() {
            if *label == b {
                *label = a;
            }
        }
    }
    Ok(Partition::from_labels(&assign))
}

/// Average-linkage hierarchical clustering of variables on `1 − |s_ij|`,
/// cut at `k` clusters.
pub fn hac_average(s: &CovMatrix, k: usize) -> Result<Partition> {
    hac_cut(s, k, Linkage::Average)
}

/// Edge-recovery confusion counts and ratios over the p(p−1)/2 unordered
/// variable pairs. A ratio whose denominator is empty is undefined and
/// reported as `None`, never coerced to 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeMetrics {
    pub true_pos: usize,
    pub true_neg: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub fdr: Option<f64>,
}

fn ratio(num: usize, denom: usize) -> Option<f64> {
    (denom > 0).then(|| num as f64 / denom as f64)
}

/// Compare an estimated edge set against the truth on `p` variables.
pub fn edge_metrics(est: &[(usize, usize)], truth: &[(usize, usize)], p: usize) -> EdgeMetrics {
    let norm = |edges: &[(usize, usize)]| -> std::collections::HashSet<(usize, usize)> {
        edges
            .iter()
            .map(|&(i, j)| if i < j { (i, j) } else { (j, i) })
            .collect()
    };
    let est = norm(est);
    let truth = norm(truth);
    let true_pos = est.intersection(&truth).count();
    let false_pos = est.len() - true_pos;
    let false_neg = truth.len() - true_pos;
    let total = p * (p - 1) / 2;
    let true_neg = total - true_pos - false_pos - false_neg;
    EdgeMetrics {
        true_pos,
        true_neg,
        false_pos,
        false_neg,
        sensitivity: ratio(true_pos, true_pos + false_neg),
        specificity: ratio(true_neg, true_neg + false_pos),
        fdr: ratio(false_pos, true_pos + false_pos),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::sample_covariance;
    use crate::partition::threshold_path;
    use approx::assert_abs_diff_eq;

    #[test]
    fn config_validation() {
        assert!(SimConfig::new(10, 50, 3, 0).is_ok());
        assert!(SimConfig::new(2, 50, 3, 0).is_err()); // p < k
        assert!(SimConfig::new(10, 1, 3, 0).is_err()); // n < 2
        assert!(SimConfig::new(10, 50, 0, 0).is_err()); // k = 0
        assert!(SimConfig::new(10, 50, 3, 0)
            .unwrap()
            .with_eigen_floor(-1.0)
            .is_err());
    }

    #[test]
    fn near_equal_block_sizes() {
        assert_eq!(block_sizes(100, 15), {
            let mut v = vec![7; 10];
            v.extend(vec![6; 5]);
            v
        });
        assert_eq!(block_sizes(6, 2), vec![3, 3]);
        assert_eq!(block_sizes(5, 5), vec![1; 5]);
    }

    #[test]
    fn all_singleton_blocks_give_identity_and_no_edges() {
        let cfg = SimConfig::new(4, 10, 4, 7).unwrap();
        let truth = make_block_cov(&cfg);
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_eq!(truth.sigma.values()[[i, j]], expect);
            }
        }
        assert!(truth.edges.is_empty());
        assert_eq!(truth.partition, Partition::singletons(4));
    }

    #[test]
    fn unscaled_blocks_respect_the_eigenvalue_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for &size in &[1usize, 3, 7, 12] {
            for _ in 0..5 {
                let block = block_sigma(&mut rng, size, 0.1);
                let lb = linalg::smallest_eigenvalue_lower_bound(&block, 1e-8);
                assert!(
                    lb >= 0.1 - 1e-6,
                    "block of size {size} has smallest eigenvalue below the floor: {lb}"
                );
            }
        }
    }

    #[test]
    fn covariance_is_correlation_form_and_pd() {
        let cfg = SimConfig::new(20, 50, 4, 3).unwrap();
        let truth = make_block_cov(&cfg);
        for i in 0..20 {
            assert_eq!(truth.sigma.values()[[i, i]], 1.0);
        }
        assert!(linalg::cholesky(truth.sigma.values()).is_some());
        for &(i, j) in &truth.edges {
            assert!(i < j);
        }
    }

    #[test]
    fn edges_confined_within_true_blocks() {
        let cfg = SimConfig::new(6, 30, 2, 11).unwrap();
        let truth = make_block_cov(&cfg);
        assert_eq!(truth.partition.blocks().len(), 2);
        assert!(!truth.edges.is_empty(), "generic 3-blocks are dense inside");
        let labels = truth.partition.labels();
        for &(i, j) in &truth.edges {
            assert_eq!(labels[i], labels[j], "edge ({i},{j}) crosses blocks");
        }
        // Off-block covariance entries are exactly zero by construction.
        for i in 0..6 {
            for j in 0..6 {
                if labels[i] != labels[j] {
                    assert_eq!(truth.sigma.values()[[i, j]], 0.0);
                }
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_in_the_seed() {
        let cfg = SimConfig::new(8, 20, 3, 5).unwrap();
        let truth = make_block_cov(&cfg);
        let a = sample_mvn(&truth, 20, 99);
        let b = sample_mvn(&truth, 20, 99);
        assert_eq!(a.values(), b.values());
        let c = sample_mvn(&truth, 20, 100);
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn identity_covariance_sample_matches_clt_bounds() {
        let cfg = SimConfig::new(5, 10, 5, 13).unwrap();
        let truth = make_block_cov(&cfg);
        let n = 10_000;
        let x = sample_mvn(&truth, n, 77);
        let bound = 4.0 / (n as f64).sqrt();
        let s = sample_covariance(&x);
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    assert!(
                        s.values()[[i, j]].abs() < bound,
                        "off-diagonal ({i},{j}) = {} exceeds CLT bound",
                        s.values()[[i, j]]
                    );
                }
            }
        }
        for m in crate::covariance::column_means(&x) {
            assert!(m.abs() < bound);
        }
    }

    #[test]
    fn single_row_sample_is_valid() {
        let cfg = SimConfig::new(3, 2, 1, 1).unwrap();
        let truth = make_block_cov(&cfg);
        let x = sample_mvn(&truth, 1, 5);
        assert_eq!(x.n(), 1);
        assert_eq!(x.p(), 3);
    }

    #[test]
    fn sample_covariance_converges_to_sigma() {
        // Catches factor-orientation mistakes: cov(Z·Lᵗ) = LLᵗ = Σ.
        let cfg = SimConfig::new(6, 10, 2, 21).unwrap();
        let truth = make_block_cov(&cfg);
        let x = sample_mvn(&truth, 20_000, 3);
        let s = sample_covariance(&x);
        for i in 0..6 {
            for j in 0..6 {
                assert_abs_diff_eq!(
                    s.values()[[i, j]],
                    truth.sigma.values()[[i, j]],
                    epsilon = 0.08
                );
            }
        }
    }

    fn cov(values: Vec<Vec<f64>>) -> CovMatrix {
        let p = values.len();
        CovMatrix::new(Array2::from_shape_fn((p, p), |(i, j)| values[i][j])).unwrap()
    }

    #[test]
    fn hac_boundary_cuts() {
        let s = cov(vec![
            vec![1.0, 0.5, 0.1],
            vec![0.5, 1.0, 0.2],
            vec![0.1, 0.2, 1.0],
        ]);
        assert_eq!(hac_average(&s, 3).unwrap(), Partition::singletons(3));
        assert_eq!(hac_average(&s, 1).unwrap(), Partition::one_block(3));
        assert!(hac_average(&s, 0).is_err());
        assert!(hac_average(&s, 4).is_err());
    }

    #[test]
    fn hac_recovers_perfectly_separated_groups() {
        let values: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                (0..6)
                    .map(|j| {
                        if i == j {
                            1.0
                        } else if (i < 3) == (j < 3) {
                            0.8
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let s = cov(values);
        let got = hac_average(&s, 2).unwrap();
        let want = Partition::new(vec![vec![0, 1, 2], vec![3, 4, 5]]).unwrap();
        assert_eq!(got, want);
    }

    /// Reference agglomerative clustering that recomputes every cluster-pair
    /// distance from member lists each round — no Lance–Williams updates.
    fn reference_hac_average(s: &CovMatrix, k: usize) -> Partition {
        let p = s.p();
        let mut clusters: Vec<Vec<usize>> = (0..p).map(|i| vec![i]).collect();
        let d = |a: &[usize], b: &[usize]| -> f64 {
            let mut sum = 0.0;
            for &i in a {
                for &j in b {
                    sum += 1.0 - s.values()[[i, j]].abs();
                }
            }
            sum / (a.len() * b.len()) as f64
        };
        while clusters.len() > k {
            let mut best = (f64::INFINITY, 0, 1);
            for a in 0..clusters.len() {
                for b in (a + 1)..clusters.len() {
                    let dist = d(&clusters[a], &clusters[b]);
                    if dist < best.0 {
                        best = (dist, a, b);
                    }
                }
            }
            let (_, a, b) = best;
            let merged = clusters.remove(b);
            clusters[a].extend(merged);
        }
        Partition::new(clusters).unwrap()
    }

    /// Random symmetric unit-diagonal matrix with continuous off-diagonals.
    fn random_sym(rng: &mut ChaCha8Rng, p: usize) -> CovMatrix {
        let mut values = vec![vec![0.0; p]; p];
        #[allow(clippy::needless_range_loop)]
        for i in 0..p {
            values[i][i] = 1.0;
            for j in 0..i {
                let v = rng.random_range(-0.9..0.9);
                values[i][j] = v;
                values[j][i] = v;
            }
        }
        cov(values)
    }

    #[test]
    fn hac_matches_from_scratch_reference() {
        // Random continuous dissimilarities: ties have probability zero, so
        // both routes must agree at every cut level.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..5 {
            let p = 8;
            let s = random_sym(&mut rng, p);
            for k in 1..=p {
                assert_eq!(
                    hac_average(&s, k).unwrap(),
                    reference_hac_average(&s, k),
                    "cut at k = {k}"
                );
            }
        }
    }

    #[test]
    fn single_linkage_cuts_reproduce_threshold_path() {
        // Single-linkage on 1 − |s| merges in exactly the descending-|s|
        // order the thresholding sweep uses, so cutting at each step's block
        // count recovers that step's partition.
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let s = random_sym(&mut rng, 12);
        for step in threshold_path(&s) {
            let cut = hac_cut(&s, step.partition.k(), Linkage::Single).unwrap();
            assert_eq!(cut, step.partition, "at lambda = {}", step.lambda);
        }
    }

    #[test]
    fn metrics_on_exact_recovery() {
        let truth = vec![(0, 1), (2, 3)];
        let m = edge_metrics(&truth, &truth, 4);
        assert_eq!(m.sensitivity, Some(1.0));
        assert_eq!(m.specificity, Some(1.0));
        assert_eq!(m.fdr, Some(0.0));
        assert_eq!((m.true_pos, m.true_neg, m.false_pos, m.false_neg), (2, 4, 0, 0));
    }

    #[test]
    fn metrics_with_empty_estimate_leave_fdr_undefined() {
        let truth = vec![(0, 1)];
        let m = edge_metrics(&[], &truth, 4);
        assert_eq!(m.sensitivity, Some(0.0));
        assert_eq!(m.fdr, None);
        assert_eq!(m.specificity, Some(1.0));
    }

    #[test]
    fn metrics_hand_example_enumerates_all_pairs() {
        // p = 4: pairs {01,02,03,12,13,23}; truth {01,23}, est {01,02}.
        let truth = vec![(0, 1), (2, 3)];
        let est = vec![(0, 1), (0, 2)];
        let m = edge_metrics(&est, &truth, 4);
        assert_eq!((m.true_pos, m.false_pos, m.false_neg, m.true_neg), (1, 1, 1, 3));
        assert_eq!(m.sensitivity, Some(0.5));
        assert_eq!(m.specificity, Some(0.75));
        assert_eq!(m.fdr, Some(0.5));
    }

    #[test]
    fn metrics_normalize_pair_order() {
        let m = edge_metrics(&[(1, 0)], &[(0, 1)], 3);
        assert_eq!(m.true_pos, 1);
        assert_eq!(m.sensitivity, Some(1.0));
        // Both sides empty: sensitivity and FDR are undefined, specificity 1.
        let m = edge_metrics(&[], &[], 3);
        assert_eq!(m.sensitivity, None);
        assert_eq!(m.fdr, None);
        assert_eq!(m.specificity, Some(1.0));
    }
}
