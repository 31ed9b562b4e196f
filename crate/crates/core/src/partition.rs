//! Partition algebra on variables and on pair indices.
//!
//! A [`Partition`] groups the `d` variables into clusters. It induces a
//! partition of the `p = d(d-1)/2` pair positions into blocks: position `r`
//! belongs to block `(k1, k2)` when its two variables fall in clusters `k1`
//! and `k2`. [`BlockStructure`] holds those blocks and the averaging projector
//! they define. The finer cell structure of the `p x p` covariance of the
//! vectorized Kendall matrix is indexed by [`CellKey`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::pairs::{pair_count, PairIndex};

/// Largest `p` for which dense `p x p` objects are materialized.
pub const DENSE_LIMIT: usize = 10_000;

/// Disjoint cover of `0..d` by nonempty clusters, kept in canonical order:
/// members ascending, clusters ordered by their smallest member.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    d: usize,
    clusters: Vec<Vec<usize>>,
    labels: Vec<usize>,
}

impl Partition {
    pub fn new(d: usize, clusters: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; d];
        for c in &clusters {
            if c.is_empty() {
                return Err(Error::Validation("empty cluster".into()));
            }
            for &i in c {
                if i >= d {
                    return Err(Error::Index {
                        index: i + 1,
                        max: d,
                    });
                }
                if seen[i] {
                    return Err(Error::Validation(format!(
                        "variable {} appears in more than one cluster",
                        i + 1
                    )));
                }
                seen[i] = true;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Validation(format!(
                "variable {} is not covered by any cluster",
                i + 1
            )));
        }
        Ok(Self::canonical(d, clusters))
    }

    fn canonical(d: usize, mut clusters: Vec<Vec<usize>>) -> Self {
        for c in clusters.iter_mut() {
            c.sort_unstable();
        }
        clusters.sort_unstable_by_key(|c| c[0]);
        let mut labels = vec![0; d];
        for (k, c) in clusters.iter().enumerate() {
            for &i in c {
                labels[i] = k;
            }
        }
        Self {
            d,
            clusters,
            labels,
        }
    }

    /// Builds the partition whose cluster of variable `i` is `labels[i]`
    /// (arbitrary label values; only equality matters).
    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            groups.entry(l).or_default().push(i);
        }
        Self::new(labels.len(), groups.into_values().collect())
    }

    pub fn singletons(d: usize) -> Self {
        Self::canonical(d, (0..d).map(|i| vec![i]).collect())
    }

    pub fn single_cluster(d: usize) -> Self {
        Self::canonical(d, vec![(0..d).collect()])
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of clusters `K`.
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    /// Cluster label of variable `i`, in canonical cluster order.
    #[inline]
    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Number of nonempty pair blocks `L = K(K-1)/2 + #{k : |G_k| > 1}`.
    pub fn block_count(&self) -> usize {
        let k = self.clusters.len();
        k * k.saturating_sub(1) / 2 + self.clusters.iter().filter(|c| c.len() > 1).count()
    }

    /// Cluster membership matrix: entry `(i, j)` is 1 iff `i` and `j` share a cluster.
    pub fn delta_matrix(&self) -> DMatrix<u8> {
        DMatrix::from_fn(self.d, self.d, |i, j| {
            u8::from(self.labels[i] == self.labels[j])
        })
    }

    /// True iff `self` has strictly more clusters than `coarser` and each of
    /// its clusters lies inside a cluster of `coarser`.
    pub fn is_refinement_of(&self, coarser: &Partition) -> Result<bool> {
        if self.d != coarser.d {
            return Err(Error::arg(format!(
                "partitions live on different dimensions ({} vs {})",
                self.d, coarser.d
            )));
        }
        if self.len() <= coarser.len() {
            return Ok(false);
        }
        Ok(self.clusters.iter().all(|c| {
            let target = coarser.labels[c[0]];
            c.iter().all(|&i| coarser.labels[i] == target)
        }))
    }

    /// Merges clusters `a` and `b` (canonical labels).
    pub fn merge(&self, a: usize, b: usize) -> Result<Partition> {
        let k = self.len();
        if a == b || a >= k || b >= k {
            return Err(Error::arg(format!(
                "cannot merge clusters {} and {} of a {k}-cluster partition",
                a + 1,
                b + 1
            )));
        }
        let mut clusters = Vec::with_capacity(k - 1);
        let (lo, hi) = (a.min(b), a.max(b));
        for (idx, c) in self.clusters.iter().enumerate() {
            if idx == hi {
                continue;
            }
            let mut c = c.clone();
            if idx == lo {
                c.extend_from_slice(&self.clusters[hi]);
            }
            clusters.push(c);
        }
        Ok(Self::canonical(self.d, clusters))
    }

    /// 1-based clusters, as used in JSON and error messages.
    pub fn to_one_based(&self) -> Vec<Vec<usize>> {
        self.clusters
            .iter()
            .map(|c| c.iter().map(|i| i + 1).collect())
            .collect()
    }

    /// Parses 1-based clusters; `d` is the largest index present.
    pub fn from_one_based(clusters: Vec<Vec<usize>>) -> Result<Self> {
        let d = clusters.iter().flatten().copied().max().unwrap_or(0);
        if clusters.iter().flatten().any(|&i| i == 0) {
            return Err(Error::Validation("cluster indices are 1-based".into()));
        }
        let zero_based = clusters
            .into_iter()
            .map(|c| c.into_iter().map(|i| i - 1).collect())
            .collect();
        Self::new(d, zero_based)
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, c) in self.clusters.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{{")?;
            for (m, i) in c.iter().enumerate() {
                if m > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{}", i + 1)?;
            }
            write!(f, "}}")?;
        }
        write!(f, "}}")
    }
}

impl Serialize for Partition {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_one_based().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Partition {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<Vec<usize>>::deserialize(deserializer)?;
        Partition::from_one_based(raw).map_err(serde::de::Error::custom)
    }
}

/// Overlap pattern between the variable pairs behind two pair positions.
/// Cluster labels are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarphiKey {
    /// The pairs share no variable.
    NoOverlap,
    /// The pairs share exactly one variable, lying in the given cluster.
    OneShared(usize),
    /// Same pair; the clusters of its two variables, ordered.
    TwoShared(usize, usize),
}

/// Key of a covariance cell: ordered block-label pair plus overlap pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub phi: (usize, usize),
    pub varphi: VarphiKey,
}

/// Partition of the pair positions induced by a variable [`Partition`].
#[derive(Debug, Clone)]
pub struct BlockStructure {
    partition: Partition,
    index: PairIndex,
    block_of: Vec<usize>,
    blocks: Vec<Vec<usize>>,
    keys: Vec<(usize, usize)>,
}

impl BlockStructure {
    pub fn new(partition: &Partition) -> Result<Self> {
        let index = PairIndex::new(partition.dim())?;
        Ok(Self::with_index(partition, index))
    }

    pub(crate) fn with_index(partition: &Partition, index: PairIndex) -> Self {
        let k = partition.len();
        // canonical block labels: (k1, k2) with k1 <= k2 in lexicographic order
        let mut table = vec![usize::MAX; k * k];
        let mut keys = Vec::with_capacity(partition.block_count());
        for k1 in 0..k {
            for k2 in k1..k {
                if k1 == k2 && partition.clusters[k1].len() < 2 {
                    continue;
                }
                table[k1 * k + k2] = keys.len();
                keys.push((k1, k2));
            }
        }
        let mut blocks = vec![Vec::new(); keys.len()];
        let mut block_of = Vec::with_capacity(index.len());
        for (r, &(i, j)) in index.pairs().iter().enumerate() {
            let (a, b) = (partition.label(i), partition.label(j));
            let l = table[a.min(b) * k + a.max(b)];
            block_of.push(l);
            blocks[l].push(r);
        }
        Self {
            partition: partition.clone(),
            index,
            block_of,
            blocks,
            keys,
        }
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn pair_index(&self) -> &PairIndex {
        &self.index
    }

    pub fn p(&self) -> usize {
        self.index.len()
    }

    /// Number of blocks `L`.
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    #[inline]
    pub fn block_of(&self, r: usize) -> usize {
        self.block_of[r]
    }

    pub fn block_labels(&self) -> &[usize] {
        &self.block_of
    }

    /// Cluster pair `(k1, k2)`, `k1 <= k2`, behind block `l`.
    pub fn block_key(&self, l: usize) -> (usize, usize) {
        self.keys[l]
    }

    /// Label of the block with key `(k1, k2)`, `k1 <= k2`, if that block exists.
    pub fn block_index(&self, k1: usize, k2: usize) -> Option<usize> {
        self.keys.binary_search(&(k1, k2)).ok()
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.p() {
            return Err(Error::arg(format!(
                "expected a vector of length {}, got {}",
                self.p(),
                v.len()
            )));
        }
        Ok(())
    }

    /// Block means of `v`, one per block.
    pub fn block_means(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v)?;
        Ok(self
            .blocks
            .iter()
            .map(|b| b.iter().map(|&r| v[r]).sum::<f64>() / b.len() as f64)
            .collect())
    }

    /// Expands per-block values to a length-`p` vector (`B x`).
    pub fn expand(&self, per_block: &[f64]) -> Vec<f64> {
        self.block_of.iter().map(|&l| per_block[l]).collect()
    }

    /// Applies the projector `BB+` without forming it: every entry is
    /// replaced by the mean of its block.
    pub fn gamma_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let means = self.block_means(v)?;
        Ok(self.expand(&means))
    }

    /// Dense `p x L` block membership matrix.
    pub fn membership_matrix(&self) -> Result<DMatrix<f64>> {
        self.guard()?;
        Ok(DMatrix::from_fn(self.p(), self.len(), |r, l| {
            f64::from(u8::from(self.block_of[r] == l))
        }))
    }

    /// Dense projector `Γ = BB+`; entry `(r, s)` is `1/|B_l|` when both lie in block `l`.
    pub fn gamma_matrix(&self) -> Result<DMatrix<f64>> {
        self.guard()?;
        let p = self.p();
        let mut g = DMatrix::zeros(p, p);
        for b in &self.blocks {
            let w = 1.0 / b.len() as f64;
            for &r in b {
                for &s in b {
                    g[(r, s)] = w;
                }
            }
        }
        Ok(g)
    }

    fn guard(&self) -> Result<()> {
        if self.p() > DENSE_LIMIT {
            return Err(Error::Capacity {
                p: self.p(),
                limit: DENSE_LIMIT,
            });
        }
        Ok(())
    }

    /// Ordered pair of block labels of positions `r` and `s`.
    #[inline]
    pub fn phi(&self, r: usize, s: usize) -> (usize, usize) {
        let (a, b) = (self.block_of[r], self.block_of[s]);
        (a.min(b), a.max(b))
    }

    /// Overlap pattern of the pairs at positions `r` and `s`.
    #[inline]
    pub fn varphi(&self, r: usize, s: usize) -> VarphiKey {
        varphi_of(&self.partition, self.index.pair(r), self.index.pair(s))
    }

    #[inline]
    pub fn cell_key(&self, r: usize, s: usize) -> CellKey {
        CellKey {
            phi: self.phi(r, s),
            varphi: self.varphi(r, s),
        }
    }

    /// Groups all `(r, s)` with `r <= s` by cell key.
    pub fn sigma_cells(&self) -> Result<BTreeMap<CellKey, Vec<(usize, usize)>>> {
        self.guard()?;
        let mut cells: BTreeMap<CellKey, Vec<(usize, usize)>> = BTreeMap::new();
        for r in 0..self.p() {
            for s in r..self.p() {
                cells.entry(self.cell_key(r, s)).or_default().push((r, s));
            }
        }
        Ok(cells)
    }

    /// Dense cell ids for the upper triangle, in first-seen order, plus the
    /// number of cells. Used to average `p x p` matrices without storing
    /// cell member lists.
    pub(crate) fn cell_ids(&self) -> Result<(Vec<u32>, usize)> {
        self.guard()?;
        let p = self.p();
        let mut ids: HashMap<CellKey, u32> = HashMap::new();
        let mut out = Vec::with_capacity(p * (p + 1) / 2);
        for r in 0..p {
            for s in r..p {
                let key = self.cell_key(r, s);
                let next = ids.len() as u32;
                out.push(*ids.entry(key).or_insert(next));
            }
        }
        Ok((out, ids.len()))
    }
}

/// Overlap pattern between two pairs of variables under `partition`.
pub fn varphi_of(partition: &Partition, a: (usize, usize), b: (usize, usize)) -> VarphiKey {
    let shared = [a.0, a.1]
        .into_iter()
        .filter(|&i| i == b.0 || i == b.1)
        .collect::<Vec<_>>();
    match shared.as_slice() {
        [] => VarphiKey::NoOverlap,
        [i] => VarphiKey::OneShared(partition.label(*i)),
        _ => {
            let (k1, k2) = (partition.label(a.0), partition.label(a.1));
            VarphiKey::TwoShared(k1.min(k2), k1.max(k2))
        }
    }
}

/// Same as [`BlockStructure::varphi`], from the partition alone.
pub fn varphi(partition: &Partition, r: usize, s: usize) -> Result<VarphiKey> {
    let idx = PairIndex::new(partition.dim())?;
    Ok(varphi_of(partition, idx.to_pair(r)?, idx.to_pair(s)?))
}

/// Upper bound on the number of dense entries `p(p+1)/2` for dimension `d`.
pub fn dense_entries(d: usize) -> usize {
    let p = pair_count(d);
    p * (p + 1) / 2
}
