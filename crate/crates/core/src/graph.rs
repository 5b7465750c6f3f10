//! Graph, attribute and label containers plus the structural diagnostics
//! built on them: symmetric normalization, homophily ratio, inter-class
//! attribute distance and the Laplacian-smoothing objective.

use ndarray::{Array2, ArrayView2, Axis};

use crate::dense::l2_normalize_rows;
use crate::error::{Error, Result};

/// Undirected graph in CSR form. Every undirected edge is stored in both
/// directions; `num_edges` counts each undirected edge once.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    num_nodes: usize,
    num_edges: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
    weighted: bool,
}

impl SparseGraph {
    /// Builds an unweighted graph from an undirected edge list. Duplicate
    /// edges (in either orientation) are merged; self-loops are rejected.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let weighted: Vec<(usize, usize, f64)> = edges.iter().map(|&(i, j)| (i, j, 1.0)).collect();
        let mut g = Self::from_weighted_edges(num_nodes, &weighted)?;
        g.weighted = false;
        Ok(g)
    }

    /// Builds a weighted graph. Duplicate edges keep the first weight seen.
    pub fn from_weighted_edges(num_nodes: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut canon: Vec<(usize, usize, f64)> = Vec::with_capacity(edges.len());
        for &(i, j, w) in edges {
            if i >= num_nodes || j >= num_nodes {
                return Err(Error::invalid(format!(
                    "edge ({i}, {j}) out of range for {num_nodes} nodes"
                )));
            }
            if i == j {
                return Err(Error::invalid(format!("self-loop at node {i}")));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::invalid(format!("edge ({i}, {j}) has weight {w}")));
            }
            canon.push((i.min(j), i.max(j), w));
        }
        // stable sort keeps first occurrence ahead of later duplicates
        canon.sort_by_key(|&(i, j, _)| (i, j));
        canon.dedup_by_key(|&mut (i, j, _)| (i, j));

        let num_edges = canon.len();
        let mut triples = Vec::with_capacity(2 * num_edges);
        for &(i, j, w) in &canon {
            triples.push((i, j, w));
            triples.push((j, i, w));
        }
        let mut g = Self::from_triples(num_nodes, triples);
        g.num_edges = num_edges;
        g.weighted = true;
        Ok(g)
    }

    /// Builds CSR from directed triples; caller guarantees symmetry. Diagonal
    /// entries are allowed here and are not counted as edges.
    pub(crate) fn from_triples(num_nodes: usize, mut triples: Vec<(usize, usize, f64)>) -> Self {
        triples.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_offsets = vec![0usize; num_nodes + 1];
        for &(i, _, _) in &triples {
            row_offsets[i + 1] += 1;
        }
        for i in 0..num_nodes {
            row_offsets[i + 1] += row_offsets[i];
        }
        let num_edges = triples.iter().filter(|&&(i, j, _)| i < j).count();
        let col_indices = triples.iter().map(|t| t.1).collect();
        let values = triples.iter().map(|t| t.2).collect();
        SparseGraph {
            num_nodes,
            num_edges,
            row_offsets,
            col_indices,
            values,
            weighted: true,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn is_weighted(&self) -> bool {
        self.weighted
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Stored `(column, value)` pairs of row `i`, columns ascending.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// Number of off-diagonal neighbours of `i`.
    pub fn degree(&self, i: usize) -> usize {
        self.row(i).filter(|&(j, _)| j != i).count()
    }

    /// Sum of stored weights in row `i`.
    pub fn weighted_degree(&self, i: usize) -> f64 {
        self.row(i).map(|(_, w)| w).sum()
    }

    pub fn weighted_degrees(&self) -> Vec<f64> {
        (0..self.num_nodes).map(|i| self.weighted_degree(i)).collect()
    }

    /// Entry `(i, j)`, zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        match self.col_indices[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    /// Undirected edges `(i, j, w)` with `i < j`, in lexicographic order.
    /// The position in this sequence is the canonical edge id.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.num_nodes).flat_map(move |i| self.row(i).filter(move |&(j, _)| j > i).map(move |(j, w)| (i, j, w)))
    }

    pub fn has_self_loops(&self) -> bool {
        (0..self.num_nodes).any(|i| self.row(i).any(|(j, _)| j == i))
    }

    /// Sparse-dense product `self · x`.
    pub fn spmm(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.nrows() != self.num_nodes {
            return Err(Error::shape(format!(
                "graph has {} nodes, matrix has {} rows",
                self.num_nodes,
                x.nrows()
            )));
        }
        let mut out = Array2::<f64>::zeros((self.num_nodes, x.ncols()));
        for (i, mut out_row) in out.axis_iter_mut(Axis(0)).enumerate() {
            for (j, w) in self.row(i) {
                out_row.scaled_add(w, &x.row(j));
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.num_nodes, self.num_nodes));
        for i in 0..self.num_nodes {
            for (j, w) in self.row(i) {
                out[[i, j]] = w;
            }
        }
        out
    }

    /// Subgraph induced by `nodes`; node `nodes[k]` becomes node `k`.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> SparseGraph {
        let mut position = vec![usize::MAX; self.num_nodes];
        for (k, &v) in nodes.iter().enumerate() {
            position[v] = k;
        }
        let mut triples = Vec::new();
        for (k, &v) in nodes.iter().enumerate() {
            for (u, w) in self.row(v) {
                if position[u] != usize::MAX {
                    triples.push((k, position[u], w));
                }
            }
        }
        let mut g = SparseGraph::from_triples(nodes.len(), triples);
        g.weighted = self.weighted;
        g
    }

    /// Returns a copy whose values are replaced by `f(i, j, value)`.
    pub(crate) fn map_values(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> SparseGraph {
        let mut out = self.clone();
        for i in 0..self.num_nodes {
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                out.values[k] = f(i, self.col_indices[k], self.values[k]);
            }
        }
        out.weighted = true;
        out
    }
}

/// Role of a node in the experimental split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
    Unused,
}

/// Attributed, labelled graph with a train/val/test split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub graph: SparseGraph,
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub split: Vec<Split>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        graph: SparseGraph,
        features: Array2<f64>,
        labels: Vec<usize>,
        split: Vec<Split>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = graph.num_nodes();
        if features.nrows() != n {
            return Err(Error::shape(format!(
                "feature matrix has {} rows for {n} nodes",
                features.nrows()
            )));
        }
        if labels.len() != n || split.len() != n {
            return Err(Error::shape(format!(
                "{} labels / {} split entries for {n} nodes",
                labels.len(),
                split.len()
            )));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(Error::invalid(format!(
                "node {i} has label {y} but there are {num_classes} classes"
            )));
        }
        if graph.has_self_loops() {
            return Err(Error::invalid("input graph contains self-loops"));
        }
        Ok(Dataset {
            name: name.into(),
            graph,
            features,
            labels,
            split,
            num_classes,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        self.split
            .iter()
            .enumerate()
            .filter(|&(_, &s)| s == which)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.indices(Split::Train)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.indices(Split::Test)
    }

    /// One-hot label matrix (N × K).
    pub fn one_hot(&self) -> Array2<f64> {
        crate::dense::one_hot(&self.labels, self.num_classes)
    }

    /// Dataset restricted to `nodes` (used for the inductive protocol).
    pub fn induced(&self, nodes: &[usize]) -> Dataset {
        Dataset {
            name: format!("{}[induced]", self.name),
            graph: self.graph.induced_subgraph(nodes),
            features: self.features.select(Axis(0), nodes),
            labels: nodes.iter().map(|&i| self.labels[i]).collect(),
            split: nodes.iter().map(|&i| self.split[i]).collect(),
            num_classes: self.num_classes,
        }
    }
}

/// Symmetric normalization `D^{-1/2} A D^{-1/2}`. Isolated nodes keep an
/// all-zero row and column.
pub fn normalized_adjacency(graph: &SparseGraph) -> SparseGraph {
    let inv_sqrt: Vec<f64> = graph
        .weighted_degrees()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    graph.map_values(|i, j, w| w * inv_sqrt[i] * inv_sqrt[j])
}

/// Fraction of undirected edges whose endpoints share a label.
pub fn homophily_ratio(graph: &SparseGraph, labels: &[usize]) -> Result<f64> {
    if labels.len() != graph.num_nodes() {
        return Err(Error::shape(format!(
            "{} labels for {} nodes",
            labels.len(),
            graph.num_nodes()
        )));
    }
    let m = graph.num_edges();
    if m == 0 {
        return Err(Error::EmptyEdgeSet);
    }
    let same = graph.edges().filter(|&(i, j, _)| labels[i] == labels[j]).count();
    Ok(same as f64 / m as f64)
}

/// Inter-class attribute distance.
///
/// Rows are L2-normalized (zero rows stay zero), squared distances are summed
/// over all ordered pairs of nodes with different labels, and the sum is
/// divided by `2 · Σ_{x≠y} |class x| · |class y|`. Empty classes contribute
/// nothing; fewer than two populated classes is an error.
pub fn icad(features: &ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    if labels.len() != features.nrows() {
        return Err(Error::shape(format!(
            "{} labels for {} feature rows",
            labels.len(),
            features.nrows()
        )));
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let x = l2_normalize_rows(features);
    let d = x.ncols();

    let mut counts = vec![0f64; k];
    let mut sq_norms = vec![0f64; k];
    let mut sums = Array2::<f64>::zeros((k, d));
    for (row, &y) in x.axis_iter(Axis(0)).zip(labels) {
        counts[y] += 1.0;
        sq_norms[y] += row.dot(&row);
        sums.row_mut(y).scaled_add(1.0, &row);
    }
    let populated = counts.iter().filter(|&&c| c > 0.0).count();
    if populated < 2 {
        return Err(Error::IcadUndefined(format!(
            "{populated} populated class(es); need at least 2"
        )));
    }

    // Σ_{i∈a, j∈b} ‖x_i − x_j‖² = n_b S_a + n_a S_b − 2 s_a·s_b
    let mut numerator = 0.0;
    let mut pair_count = 0.0;
    for a in 0..k {
        for b in 0..k {
            if a == b {
                continue;
            }
            numerator += counts[b] * sq_norms[a] + counts[a] * sq_norms[b] - 2.0 * sums.row(a).dot(&sums.row(b));
            pair_count += counts[a] * counts[b];
        }
    }
    Ok((numerator / (2.0 * pair_count)).max(0.0))
}

/// Graph-Laplacian-smoothing objective
/// `(1−α)‖Z−X‖²_F + α Σ_{(i,j)∈E} w_ij ‖Z_i/√d_i − Z_j/√d_j‖²`,
/// each undirected edge counted once.
pub fn gls_objective(graph: &SparseGraph, z: &ArrayView2<f64>, x: &ArrayView2<f64>, alpha: f64) -> Result<f64> {
    if z.dim() != x.dim() {
        return Err(Error::shape(format!("Z is {:?}, X is {:?}", z.dim(), x.dim())));
    }
    if z.nrows() != graph.num_nodes() {
        return Err(Error::shape(format!(
            "Z has {} rows for {} nodes",
            z.nrows(),
            graph.num_nodes()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha = {alpha} outside [0, 1]")));
    }
    let fit: f64 = (z - x).iter().map(|v| v * v).sum();
    let inv_sqrt: Vec<f64> = graph
        .weighted_degrees()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut smooth = 0.0;
    for (i, j, w) in graph.edges() {
        let diff = &z.row(i) * inv_sqrt[i] - &z.row(j) * inv_sqrt[j];
        smooth += w * diff.dot(&diff);
    }
    Ok((1.0 - alpha) * fit + alpha * smooth)
}
