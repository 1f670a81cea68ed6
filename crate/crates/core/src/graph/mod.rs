//! Undirected simple graphs in CSR form with node features and partial labels.

mod io;
mod split;

pub use io::{load_cora, load_graph, save_graph};
pub use split::{
    connected_component_sample, connected_component_sample_within, SplitPlan, SplitSpec,
    TestLabelPlan,
};

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    features: Matrix,
    labels: Vec<Option<usize>>,
    num_classes: usize,
    /// `1/sqrt(deg(v) + 1)`, the self-loop-augmented normalizer.
    norm: Vec<f64>,
}

impl Graph {
    /// Builds a graph from an edge list. Edges are symmetrized and
    /// deduplicated; self-loops are dropped.
    pub fn new(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Matrix,
        labels: Vec<Option<usize>>,
        num_classes: usize,
    ) -> Result<Self> {
        if features.rows() != num_nodes {
            return Err(Error::NodeCount(format!(
                "{num_nodes} nodes but {} feature rows",
                features.rows()
            )));
        }
        if labels.len() != num_nodes {
            return Err(Error::NodeCount(format!(
                "{num_nodes} nodes but {} label slots",
                labels.len()
            )));
        }
        if let Some((v, c)) = labels
            .iter()
            .enumerate()
            .find_map(|(v, c)| c.filter(|&c| c >= num_classes).map(|c| (v, c)))
        {
            return Err(Error::InvalidGraph(format!(
                "node {v} has class {c} but there are {num_classes} classes"
            )));
        }
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for (u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u}, {v}) references a node outside 0..{num_nodes}"
                )));
            }
            if u != v {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
            targets.extend_from_slice(list);
            offsets.push(targets.len());
        }
        Ok(Self::from_csr(offsets, targets, features, labels, num_classes))
    }

    fn from_csr(
        offsets: Vec<usize>,
        targets: Vec<usize>,
        features: Matrix,
        labels: Vec<Option<usize>>,
        num_classes: usize,
    ) -> Self {
        let norm = offsets
            .windows(2)
            .map(|w| 1.0 / ((w[1] - w[0] + 1) as f64).sqrt())
            .collect();
        Self {
            offsets,
            targets,
            features,
            labels,
            num_classes,
            norm,
        }
    }

    /// Graph with a constant single feature and no labels.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        Self::new(
            num_nodes,
            edges.iter().copied(),
            Matrix::filled(num_nodes, 1, 1.0),
            vec![None; num_nodes],
            1,
        )
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.targets.len() / 2
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    #[inline]
    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    pub fn csr(&self) -> (&[usize], &[usize]) {
        (&self.offsets, &self.targets)
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Undirected edges with `u < v`, in CSR order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .filter(move |&&v| u < v)
                .map(move |&v| (u, v))
        })
    }

    pub fn labeled_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&v| self.labels[v].is_some())
            .collect()
    }

    /// Same topology and features with a different label vector.
    pub fn with_labels(&self, labels: Vec<Option<usize>>, num_classes: usize) -> Result<Self> {
        Self::new(
            self.num_nodes(),
            self.edges(),
            self.features.clone(),
            labels,
            num_classes,
        )
    }

    /// Keeps only the labels of `visible`; every other node becomes unlabeled.
    pub fn restrict_labels(&self, visible: &[usize]) -> Self {
        let mut labels = vec![None; self.num_nodes()];
        for &v in visible {
            labels[v] = self.labels[v];
        }
        let mut g = self.clone();
        g.labels = labels;
        g
    }

    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        Self::new(
            self.num_nodes(),
            self.edges(),
            features,
            self.labels.clone(),
            self.num_classes,
        )
    }

    /// Relabels nodes: node `v` of `self` becomes node `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_nodes();
        if perm.len() != n {
            return Err(Error::Parameter(format!(
                "permutation of length {} for {n} nodes",
                perm.len()
            )));
        }
        let mut features = Matrix::zeros(n, self.feature_dim());
        let mut labels = vec![None; n];
        for v in 0..n {
            features.row_mut(perm[v]).copy_from_slice(self.features.row(v));
            labels[perm[v]] = self.labels[v];
        }
        Self::new(
            n,
            self.edges().map(|(u, v)| (perm[u], perm[v])),
            features,
            labels,
            self.num_classes,
        )
    }

    /// Induced subgraph on `nodes`; node `nodes[i]` becomes node `i`.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Self {
        let mut index = vec![usize::MAX; self.num_nodes()];
        for (i, &v) in nodes.iter().enumerate() {
            index[v] = i;
        }
        let mut offsets = Vec::with_capacity(nodes.len() + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for &v in nodes {
            let mut list: Vec<usize> = self
                .neighbors(v)
                .iter()
                .filter_map(|&u| (index[u] != usize::MAX).then_some(index[u]))
                .collect();
            list.sort_unstable();
            targets.extend(list);
            offsets.push(targets.len());
        }
        let features = self.features.select_rows(nodes);
        let labels = nodes.iter().map(|&v| self.labels[v]).collect();
        Self::from_csr(offsets, targets, features, labels, self.num_classes)
    }

    /// Hop distances from `src`; `None` for unreachable nodes.
    pub fn bfs_distances(&self, src: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.num_nodes()];
        let mut queue = VecDeque::new();
        dist[src] = Some(0);
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &w in self.neighbors(u) {
                if dist[w].is_none() {
                    dist[w] = Some(du + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// `D̃^{-1/2}(A+I)D̃^{-1/2} · h` by sparse row traversal.
    pub fn sym_norm_propagate(&self, h: &Matrix) -> Result<Matrix> {
        if h.rows() != self.num_nodes() {
            return Err(Error::dim(
                "sym_norm_propagate",
                (self.num_nodes(), self.num_nodes()),
                h.shape(),
            ));
        }
        let mut out = Matrix::zeros(h.rows(), h.cols());
        for v in 0..self.num_nodes() {
            let nv = self.norm[v];
            let row = out.row_mut(v);
            let self_w = nv * nv;
            for (o, x) in row.iter_mut().zip(h.row(v)) {
                *o = self_w * x;
            }
            for &u in self.neighbors(v) {
                let w = nv * self.norm[u];
                for (o, x) in row.iter_mut().zip(h.row(u)) {
                    *o += w * x;
                }
            }
        }
        Ok(out)
    }

    /// Draws a fresh neighbor sample: per node, `min(deg, k)` distinct
    /// neighbors chosen uniformly. `None` keeps the whole neighborhood and
    /// consumes no randomness.
    pub fn sample_neighbors<R: Rng + ?Sized>(
        &self,
        sample_size: Option<usize>,
        rng: &mut R,
    ) -> NeighborSample {
        let picks = (0..self.num_nodes())
            .map(|v| {
                let nbrs = self.neighbors(v);
                match sample_size {
                    Some(k) if nbrs.len() > k => rand::seq::index::sample(rng, nbrs.len(), k)
                        .into_iter()
                        .map(|i| nbrs[i])
                        .collect(),
                    _ => nbrs.to_vec(),
                }
            })
            .collect();
        NeighborSample { picks }
    }

    /// Mean of `h` over a uniform without-replacement sample of at most
    /// `sample_size` neighbors. Isolated nodes aggregate to a zero row.
    pub fn mean_neighbor_aggregate<R: Rng + ?Sized>(
        &self,
        h: &Matrix,
        sample_size: usize,
        rng: &mut R,
    ) -> Result<(Matrix, NeighborSample)> {
        if sample_size == 0 {
            return Err(Error::Parameter("neighbor sample size must be at least 1".into()));
        }
        let sample = self.sample_neighbors(Some(sample_size), rng);
        let agg = sample.aggregate(h)?;
        Ok((agg, sample))
    }

    /// Induced subgraph on every node within `d` hops of `center`.
    pub fn d_hop_egonet(&self, center: usize, d: usize) -> Egonet {
        let dist = self.bfs_distances(center);
        let nodes: Vec<usize> = (0..self.num_nodes())
            .filter(|&v| dist[v].is_some_and(|x| x <= d))
            .collect();
        let center_idx = nodes.binary_search(&center).expect("center is within 0 hops");
        Egonet {
            graph: self.induced_subgraph(&nodes),
            center: center_idx,
            nodes,
        }
    }
}

/// Sampled neighbor lists, kept so the aggregation can be differentiated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborSample {
    picks: Vec<Vec<usize>>,
}

impl NeighborSample {
    pub fn picks(&self, v: usize) -> &[usize] {
        &self.picks[v]
    }

    pub fn aggregate(&self, h: &Matrix) -> Result<Matrix> {
        if h.rows() != self.picks.len() {
            return Err(Error::dim(
                "neighbor aggregate",
                (self.picks.len(), self.picks.len()),
                h.shape(),
            ));
        }
        let mut out = Matrix::zeros(h.rows(), h.cols());
        for (v, picks) in self.picks.iter().enumerate() {
            if picks.is_empty() {
                continue;
            }
            let inv = 1.0 / picks.len() as f64;
            let row = out.row_mut(v);
            for &u in picks {
                for (o, x) in row.iter_mut().zip(h.row(u)) {
                    *o += x;
                }
            }
            row.iter_mut().for_each(|o| *o *= inv);
        }
        Ok(out)
    }

    /// Adjoint of [`NeighborSample::aggregate`].
    pub fn backward(&self, upstream: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(upstream.rows(), upstream.cols());
        for (v, picks) in self.picks.iter().enumerate() {
            if picks.is_empty() {
                continue;
            }
            let inv = 1.0 / picks.len() as f64;
            for &u in picks {
                let g: Vec<f64> = upstream.row(v).iter().map(|x| x * inv).collect();
                for (o, x) in out.row_mut(u).iter_mut().zip(g) {
                    *o += x;
                }
            }
        }
        out
    }
}

/// A d-hop egonet together with the position of its center and the
/// original ids of its nodes (sorted ascending).
#[derive(Debug, Clone)]
pub struct Egonet {
    pub graph: Graph,
    pub center: usize,
    pub nodes: Vec<usize>,
}
