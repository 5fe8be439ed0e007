//! Dense undirected graphs, their symmetric normalization, and edge-flip
//! bookkeeping.

use std::collections::VecDeque;
use std::sync::Arc;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Node features, kept dense for inspection and as compressed rows for the
/// sparse products the models run every epoch.
#[derive(Debug, Clone)]
pub struct Features {
    dense: Array2<f64>,
    rows: SparseRows,
}

impl Features {
    pub fn new(dense: Array2<f64>) -> Self {
        let rows = SparseRows::from_dense(&dense);
        Features { dense, rows }
    }

    /// The `n × n` identity, used for graphs that come without attributes.
    pub fn identity(n: usize) -> Self {
        Features::new(Array2::eye(n))
    }

    pub fn dense(&self) -> &Array2<f64> {
        &self.dense
    }

    pub fn sparse(&self) -> &SparseRows {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.dense.nrows()
    }

    pub fn dim(&self) -> usize {
        self.dense.ncols()
    }

    fn select_rows(&self, keep: &[usize]) -> Features {
        let d = self.dim();
        let mut out = Array2::zeros((keep.len(), d));
        for (new, &old) in keep.iter().enumerate() {
            out.row_mut(new).assign(&self.dense.row(old));
        }
        Features::new(out)
    }
}

/// Compressed sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    pub n_cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseRows {
    pub fn from_dense(m: &Array2<f64>) -> Self {
        let mut indptr = Vec::with_capacity(m.nrows() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in m.rows() {
            for (j, &x) in row.iter().enumerate() {
                if x != 0.0 {
                    indices.push(j);
                    values.push(x);
                }
            }
            indptr.push(indices.len());
        }
        SparseRows {
            n_cols: m.ncols(),
            indptr,
            indices,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// `self · rhs` for a dense right-hand side.
    pub fn matmul(&self, rhs: &Array2<f64>) -> Array2<f64> {
        assert_eq!(self.n_cols, rhs.nrows(), "sparse matmul shape");
        let k = rhs.ncols();
        let mut out = Array2::zeros((self.n_rows(), k));
        let slice = out.as_slice_mut().expect("standard layout");
        crate::par::for_each_row(slice, k, |i, row| {
            for (j, x) in self.row(i) {
                for (o, r) in row.iter_mut().zip(rhs.row(j)) {
                    *o += x * r;
                }
            }
        });
        out
    }

    /// `selfᵀ · rhs` for a dense right-hand side.
    pub fn t_matmul(&self, rhs: &Array2<f64>) -> Array2<f64> {
        assert_eq!(self.n_rows(), rhs.nrows(), "sparse t_matmul shape");
        let k = rhs.ncols();
        let mut out = Array2::zeros((self.n_cols, k));
        for i in 0..self.n_rows() {
            let r = rhs.row(i);
            for (j, x) in self.row(i) {
                for (o, v) in out.row_mut(j).iter_mut().zip(r) {
                    *o += x * v;
                }
            }
        }
        out
    }
}

/// An undirected, unweighted graph with node features, labels and a
/// labeled/unlabeled split.
///
/// Values are immutable: edits such as [`Graph::flip_edge`] return a new
/// graph and share features, labels and split with the original.
#[derive(Debug, Clone)]
pub struct Graph {
    n: usize,
    adjacency: Vec<u8>,
    degrees: Vec<usize>,
    features: Arc<Features>,
    labels: Arc<Vec<usize>>,
    n_classes: usize,
    labeled: Arc<Vec<bool>>,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.adjacency == other.adjacency
            && self.labels == other.labels
            && self.labeled == other.labeled
            && self.n_classes == other.n_classes
            && self.features.dense == other.features.dense
    }
}

impl Graph {
    /// Builds a graph from an undirected edge list. The node count is the
    /// number of feature rows; duplicate pairs in either orientation collapse.
    pub fn new(
        edges: &[(usize, usize)],
        features: Features,
        labels: Vec<usize>,
        n_classes: usize,
        labeled: Vec<bool>,
    ) -> Result<Self> {
        let n = features.n_rows();
        if labels.len() != n {
            return Err(Error::Dimension(format!("{} labels for {} nodes", labels.len(), n)));
        }
        if labeled.len() != n {
            return Err(Error::Dimension(format!(
                "labeled mask of length {} for {} nodes",
                labeled.len(),
                n
            )));
        }
        if let Some((node, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= n_classes) {
            return Err(Error::LabelOutOfRange { node, label, n_classes });
        }
        let mut adjacency = vec![0u8; n * n];
        for &(i, j) in edges {
            for index in [i, j] {
                if index >= n {
                    return Err(Error::NodeOutOfRange { index, n_nodes: n });
                }
            }
            if i == j {
                return Err(Error::SelfLoop(i));
            }
            adjacency[i * n + j] = 1;
            adjacency[j * n + i] = 1;
        }
        let degrees = (0..n)
            .map(|i| adjacency[i * n..(i + 1) * n].iter().map(|&a| a as usize).sum())
            .collect();
        Ok(Graph {
            n,
            adjacency,
            degrees,
            features: Arc::new(features),
            labels: Arc::new(labels),
            n_classes,
            labeled: Arc::new(labeled),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n + j] == 1
    }

    /// Row `i` of the adjacency matrix as 0/1 bytes.
    pub fn adjacency_row(&self, i: usize) -> &[u8] {
        &self.adjacency[i * self.n..(i + 1) * self.n]
    }

    pub fn adjacency_dense(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.n, self.n), |(i, j)| self.adjacency[i * self.n + j] as f64)
    }

    pub fn degree(&self, i: usize) -> usize {
        self.degrees[i]
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn n_edges(&self) -> usize {
        self.degrees.iter().sum::<usize>() / 2
    }

    /// Unordered pairs `i < j` that carry an edge, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.n_edges());
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.has_edge(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency_row(i)
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == 1)
            .map(|(j, _)| j)
    }

    pub fn features(&self) -> &Features {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn labeled_mask(&self) -> &[bool] {
        &self.labeled
    }

    pub fn labeled_nodes(&self) -> Vec<usize> {
        (0..self.n).filter(|&v| self.labeled[v]).collect()
    }

    pub fn unlabeled_nodes(&self) -> Vec<usize> {
        (0..self.n).filter(|&v| !self.labeled[v]).collect()
    }

    /// Same structure and attributes with a different labeled/unlabeled split.
    pub fn with_labeled_mask(&self, labeled: Vec<bool>) -> Result<Graph> {
        if labeled.len() != self.n {
            return Err(Error::Dimension(format!(
                "labeled mask of length {} for {} nodes",
                labeled.len(),
                self.n
            )));
        }
        Ok(Graph {
            labeled: Arc::new(labeled),
            ..self.clone()
        })
    }

    /// Errors unless both sides of the split are nonempty.
    pub fn require_split(&self) -> Result<()> {
        if !self.labeled.iter().any(|&l| l) {
            return Err(Error::NoLabeledNodes);
        }
        if self.labeled.iter().all(|&l| l) {
            return Err(Error::NoUnlabeledNodes);
        }
        Ok(())
    }

    /// Returns a copy with the pair `(i, j)` toggled in both directions.
    pub fn flip_edge(&self, i: usize, j: usize) -> Result<Graph> {
        for index in [i, j] {
            if index >= self.n {
                return Err(Error::NodeOutOfRange { index, n_nodes: self.n });
            }
        }
        if i == j {
            return Err(Error::SelfLoop(i));
        }
        let mut g = self.clone();
        let n = self.n;
        let new = 1 - g.adjacency[i * n + j];
        g.adjacency[i * n + j] = new;
        g.adjacency[j * n + i] = new;
        if new == 1 {
            g.degrees[i] += 1;
            g.degrees[j] += 1;
        } else {
            g.degrees[i] -= 1;
            g.degrees[j] -= 1;
        }
        Ok(g)
    }

    /// Number of unordered node pairs whose adjacency differs. Half the raw
    /// entrywise ℓ0 distance of the two adjacency matrices.
    pub fn count_flips(&self, other: &Graph) -> Result<usize> {
        if self.n != other.n {
            return Err(Error::SizeMismatch(self.n, other.n));
        }
        let raw = self
            .adjacency
            .iter()
            .zip(&other.adjacency)
            .filter(|(a, b)| a != b)
            .count();
        Ok(raw / 2)
    }

    /// Connected components as sorted node lists, ordered by smallest member.
    pub fn connected_components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.n];
        let mut components = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..self.n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            queue.push_back(start);
            let mut members = Vec::new();
            while let Some(v) = queue.pop_front() {
                members.push(v);
                for u in self.neighbors(v) {
                    if !seen[u] {
                        seen[u] = true;
                        queue.push_back(u);
                    }
                }
            }
            members.sort_unstable();
            components.push(members);
        }
        components
    }

    /// Induced subgraph on the largest connected component with nodes
    /// renumbered in increasing original order. Among equally large
    /// components the one holding the smallest node index wins.
    pub fn largest_connected_component(&self) -> Graph {
        let components = self.connected_components();
        let mut best: Option<&Vec<usize>> = None;
        for c in &components {
            // components arrive ordered by minimum index, so strict > keeps the earliest tie
            if best.is_none_or(|b| c.len() > b.len()) {
                best = Some(c);
            }
        }
        match best {
            Some(keep) if keep.len() < self.n => self.induced_subgraph(keep),
            _ => self.clone(),
        }
    }

    /// Subgraph induced by `keep` (strictly increasing original indices).
    pub fn induced_subgraph(&self, keep: &[usize]) -> Graph {
        let m = keep.len();
        let mut adjacency = vec![0u8; m * m];
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate() {
                adjacency[a * m + b] = self.adjacency[i * self.n + j];
            }
        }
        let degrees = (0..m)
            .map(|i| adjacency[i * m..(i + 1) * m].iter().map(|&a| a as usize).sum())
            .collect();
        Graph {
            n: m,
            adjacency,
            degrees,
            features: Arc::new(self.features.select_rows(keep)),
            labels: Arc::new(keep.iter().map(|&v| self.labels[v]).collect()),
            n_classes: self.n_classes,
            labeled: Arc::new(keep.iter().map(|&v| self.labeled[v]).collect()),
        }
    }

    /// Relabels nodes so that old node `v` becomes `perm[v]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.n {
            return Err(Error::Dimension(format!(
                "permutation of length {} for {} nodes",
                perm.len(),
                self.n
            )));
        }
        let mut inverse = vec![usize::MAX; self.n];
        for (old, &new) in perm.iter().enumerate() {
            if new >= self.n || inverse[new] != usize::MAX {
                return Err(Error::InvalidParameter("not a permutation".into()));
            }
            inverse[new] = old;
        }
        let edges: Vec<_> = self.edges().into_iter().map(|(i, j)| (perm[i], perm[j])).collect();
        let features = self.features.select_rows(&inverse);
        let labels = inverse.iter().map(|&v| self.labels[v]).collect();
        let labeled = inverse.iter().map(|&v| self.labeled[v]).collect();
        Graph::new(&edges, features, labels, self.n_classes, labeled)
    }

    pub fn normalize(&self) -> NormalizedAdjacency {
        NormalizedAdjacency::from_graph(self)
    }
}

/// `Â = D^{-1/2} (A + I) D^{-1/2}` where `D` holds the row sums of `A + I`.
///
/// Stored as the sparse pattern of `A + I` plus the inverse square-root
/// degrees; entries are formed on demand. Also accepts real-valued symmetric
/// adjacencies so gradients can be checked on relaxed inputs.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    n: usize,
    degrees: Vec<f64>,
    inv_sqrt_deg: Vec<f64>,
    // pattern of A + I, diagonal included, column indices ascending
    indptr: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn from_graph(g: &Graph) -> Self {
        let n = g.n_nodes();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(2 * g.n_edges() + n);
        indptr.push(0);
        for i in 0..n {
            for (j, &a) in g.adjacency_row(i).iter().enumerate() {
                if a == 1 || i == j {
                    indices.push(j);
                }
            }
            indptr.push(indices.len());
        }
        let weights = vec![1.0; indices.len()];
        let degrees: Vec<f64> = (0..n).map(|i| (g.degree(i) + 1) as f64).collect();
        Self::assemble(n, degrees, indptr, indices, weights)
    }

    /// Normalizes `A + I` for a real symmetric `A` with zero diagonal.
    /// Row sums of `A + I` must be positive.
    pub fn from_weighted(a: &Array2<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension("adjacency must be square".into()));
        }
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        let mut degrees = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                let w = if i == j { 1.0 + a[[i, j]] } else { a[[i, j]] };
                if w != 0.0 {
                    indices.push(j);
                    weights.push(w);
                    degrees[i] += w;
                }
            }
            indptr.push(indices.len());
            if degrees[i] <= 0.0 {
                return Err(Error::InvalidParameter(format!("row {i} of A + I has nonpositive sum")));
            }
        }
        Ok(Self::assemble(n, degrees, indptr, indices, weights))
    }

    fn assemble(n: usize, degrees: Vec<f64>, indptr: Vec<usize>, indices: Vec<usize>, weights: Vec<f64>) -> Self {
        let inv_sqrt_deg = degrees.iter().map(|d| d.sqrt().recip()).collect();
        NormalizedAdjacency {
            n,
            degrees,
            inv_sqrt_deg,
            indptr,
            indices,
            weights,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    /// Row sums of `A + I`.
    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn inv_sqrt_degrees(&self) -> &[f64] {
        &self.inv_sqrt_deg
    }

    /// Nonzero entries `(j, Â_ij)` of row `i`, diagonal included.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        let si = self.inv_sqrt_deg[i];
        self.indices[span.clone()]
            .iter()
            .zip(&self.weights[span])
            .map(move |(&j, &w)| (j, w * si * self.inv_sqrt_deg[j]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.indptr[i]..self.indptr[i + 1];
        match self.indices[span.clone()].binary_search(&j) {
            Ok(pos) => self.weights[span.start + pos] * self.inv_sqrt_deg[i] * self.inv_sqrt_deg[j],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                out[[i, j]] = v;
            }
        }
        out
    }

    /// `Â · m`.
    pub fn propagate(&self, m: &Array2<f64>) -> Array2<f64> {
        assert_eq!(m.nrows(), self.n, "propagate shape");
        let k = m.ncols();
        let mut out = Array2::zeros((self.n, k));
        let slice = out.as_slice_mut().expect("standard layout");
        crate::par::for_each_row(slice, k, |i, row| {
            for (j, a) in self.row(i) {
                for (o, x) in row.iter_mut().zip(m.row(j)) {
                    *o += a * x;
                }
            }
        });
        out
    }
}
