//! Variable partitions, the covariance thresholding path, and partition
//! agreement (adjusted Rand index).
//!
//! Thresholding the sample covariance at level λ keeps the edges
//! `{(i, j) : |S_ij| > λ}` (strict inequality, matching the convention that a
//! soft-threshold at exactly λ = |S_ij| zeroes the entry); the connected
//! components of that graph partition the variables. Sweeping λ over the
//! observed off-diagonal magnitudes yields a nested family of candidate
//! partitions, computed here incrementally with a union-find in a single
//! descending pass.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::covariance::CovMatrix;
use crate::error::{Error, Result};

/// A partition of the variable indices `0..p` into disjoint blocks.
///
/// Canonical form: indices sorted within each block, blocks sorted by their
/// smallest member. Two partitions compare equal iff they group identically.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    blocks: Vec<Vec<usize>>,
    p: usize,
}

impl Partition {
    /// Build a partition from blocks, validating that they cover `0..p`
    /// exactly once (p = total index count) with no empty block, then
    /// canonicalizing.
    pub fn new(blocks: Vec<Vec<usize>>) -> Result<Self> {
        let p: usize = blocks.iter().map(|b| b.len()).sum();
        if p == 0 {
            return Err(Error::InvalidPartition("no blocks".into()));
        }
        let mut seen = vec![false; p];
        for block in &blocks {
            if block.is_empty() {
                return Err(Error::InvalidPartition("empty block".into()));
            }
            for &i in block {
                if i >= p {
                    return Err(Error::InvalidPartition(format!(
                        "index {i} out of range for p = {p}"
                    )));
                }
                if seen[i] {
                    return Err(Error::InvalidPartition(format!("index {i} repeated")));
                }
                seen[i] = true;
            }
        }
        let mut blocks = blocks;
        for block in &mut blocks {
            block.sort_unstable();
        }
        blocks.sort_by_key(|b| b[0]);
        Ok(Self { blocks, p })
    }

    /// Partition with every variable in its own block.
    pub fn singletons(p: usize) -> Self {
        Self {
            blocks: (0..p).map(|i| vec![i]).collect(),
            p,
        }
    }

    /// Partition with all variables in one block.
    pub fn one_block(p: usize) -> Self {
        Self {
            blocks: vec![(0..p).collect()],
            p,
        }
    }

    /// Build from per-variable labels (arbitrary ids; equal label = same block).
    pub fn from_labels(labels: &[usize]) -> Self {
        let p = labels.len();
        let mut by_label: std::collections::BTreeMap<usize, Vec<usize>> =
            std::collections::BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            by_label.entry(l).or_default().push(i);
        }
        let mut blocks: Vec<Vec<usize>> = by_label.into_values().collect();
        blocks.sort_by_key(|b| b[0]);
        Self { blocks, p }
    }

    /// Number of variables.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of blocks.
    pub fn k(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// Block label for each variable (labels are block positions in canonical
    /// order).
    pub fn labels(&self) -> Vec<usize> {
        let mut labels = vec![0usize; self.p];
        for (b, block) in self.blocks.iter().enumerate() {
            for &i in block {
                labels[i] = b;
            }
        }
        labels
    }

    /// Model dimension: number of free off-diagonal parameters in a
    /// block-diagonal covariance with these blocks, Σ_k p_k(p_k−1)/2.
    pub fn dimension(&self) -> usize {
        self.blocks.iter().map(|b| b.len() * (b.len() - 1) / 2).sum()
    }

    /// Does every block of `self` fit inside a single block of `other`?
    pub fn refines(&self, other: &Partition) -> bool {
        if self.p != other.p {
            return false;
        }
        let labels = other.labels();
        self.blocks
            .iter()
            .all(|block| block.iter().all(|&i| labels[i] == labels[block[0]]))
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, block) in self.blocks.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{{")?;
            for (j, v) in block.iter().enumerate() {
                if j > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{v}")?;
            }
            write!(f, "}}")?;
        }
        Ok(())
    }
}

impl Serialize for Partition {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            blocks: &'a [Vec<usize>],
        }
        Repr { blocks: &self.blocks }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Partition {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Repr {
            blocks: Vec<Vec<usize>>,
        }
        let repr = Repr::deserialize(deserializer)?;
        Partition::new(repr.blocks).map_err(serde::de::Error::custom)
    }
}

/// One candidate on the thresholding path: the smallest sweep level λ at which
/// this partition appears, together with the partition itself.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdStep {
    pub lambda: f64,
    pub partition: Partition,
}

/// Disjoint-set forest with union by size and path compression.
pub(crate) struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(p: usize) -> Self {
        Self {
            parent: (0..p).collect(),
            size: vec![1; p],
        }
    }

    pub(crate) fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]]; // halve the path
            i = self.parent[i];
        }
        i
    }

    /// Merge the sets containing a and b; true if they were distinct.
    pub(crate) fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (big, small) = if self.size[ra] >= self.size[rb] { (ra, rb) } else { (rb, ra) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
        true
    }

    pub(crate) fn partition(&mut self) -> Partition {
        let p = self.parent.len();
        let labels: Vec<usize> = (0..p).map(|i| self.find(i)).collect();
        Partition::from_labels(&labels)
    }
}

/// Connected components of an explicit edge list on `p` vertices.
pub fn components_from_edges(p: usize, edges: &[(usize, usize)]) -> Partition {
    let mut uf = UnionFind::new(p);
    for &(i, j) in edges {
        uf.union(i, j);
    }
    uf.partition()
}

/// Connected components of the graph with edges `{(i,j) : |S_ij| > λ}`.
pub fn components_at(s: &CovMatrix, lambda: f64) -> Partition {
    let p = s.p();
    let v = s.values();
    let mut uf = UnionFind::new(p);
    for i in 0..p {
        for j in 0..i {
            if v[[i, j]].abs() > lambda {
                uf.union(i, j);
            }
        }
    }
    uf.partition()
}

/// The full thresholding path: one step per distinct partition as λ sweeps
/// the observed off-diagonal magnitudes (plus the λ = 0 endpoint).
///
/// Each step records the smallest sweep level producing its partition; steps
/// are ordered by increasing λ, so the first is the coarsest reachable
/// partition (components at λ = 0) and the last is all singletons. Built
/// incrementally: edges are merged into a union-find in descending magnitude
/// order, one group of tied magnitudes at a time, so the whole path costs one
/// sort plus near-linear merging rather than a component search per level.
pub fn threshold_path(s: &CovMatrix) -> Vec<ThresholdStep> {
    let p = s.p();
    let v = s.values();
    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(p * (p - 1) / 2);
    for i in 0..p {
        for j in 0..i {
            let mag = v[[i, j]].abs();
            if mag > 0.0 {
                edges.push((mag, j, i));
            }
        }
    }
    if edges.is_empty() {
        return vec![ThresholdStep {
            lambda: 0.0,
            partition: Partition::singletons(p),
        }];
    }
    edges.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut uf = UnionFind::new(p);
    let mut steps = vec![ThresholdStep {
        lambda: edges[0].0,
        partition: Partition::singletons(p),
    }];
    let mut idx = 0;
    while idx < edges.len() {
        let level = edges[idx].0;
        while idx < edges.len() && edges[idx].0 == level {
            uf.union(edges[idx].1, edges[idx].2);
            idx += 1;
        }
        // The partition just formed holds for λ ∈ [next level, current level);
        // its representative λ is the smallest sweep value that produces it.
        let next_lambda = if idx < edges.len() { edges[idx].0 } else { 0.0 };
        let part = uf.partition();
        let last = steps.last_mut().expect("path starts non-empty");
        if part == last.partition {
            last.lambda = next_lambda;
        } else {
            steps.push(ThresholdStep {
                lambda: next_lambda,
                partition: part,
            });
        }
    }
    steps.reverse();
    steps
}

/// Adjusted Rand index (permutation-model corrected pair agreement) between
/// two partitions of the same index set. 1 for identical partitions, ~0 for
/// independent ones; can be negative for systematic disagreement.
pub fn adjusted_rand_index(a: &Partition, b: &Partition) -> Result<f64> {
    if a.p() != b.p() {
        return Err(Error::MismatchedIndexSets {
            left: a.p(),
            right: b.p(),
        });
    }
    let n = a.p();
    let la = a.labels();
    let lb = b.labels();
    // Contingency counts n_uv = |block_u(a) ∩ block_v(b)|.
    let mut counts = std::collections::HashMap::<(usize, usize), u64>::new();
    for i in 0..n {
        *counts.entry((la[i], lb[i])).or_insert(0) += 1;
    }
    let choose2 = |x: u64| -> f64 { (x * x.saturating_sub(1)) as f64 / 2.0 };
    let index: f64 = counts.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = a.blocks().iter().map(|blk| choose2(blk.len() as u64)).sum();
    let sum_b: f64 = b.blocks().iter().map(|blk| choose2(blk.len() as u64)).sum();
    let total = choose2(n as u64);
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    let denom = max_index - expected;
    if denom.abs() < 1e-12 {
        // Degenerate only when both partitions are all-singletons or both are
        // one block — identical either way.
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}
