//! Graph data model: symmetric adjacency, node features, labels, masks,
//! plus dataset ingestion and the structural transforms used in training.

mod citation;
mod json;
mod sbm;
mod transform;
mod tu;

pub use citation::{load_citation, LoadedCitation};
pub use json::{batch_from_json, batch_to_json, graph_from_json, graph_to_json};
pub use sbm::sbm_generate;
pub use transform::{drop_edge, edge_adjacency, masked_adjacency};
pub use tu::load_tu;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{SparseMatrix, Tensor};

/// Train/validation/test node masks. Pairwise disjoint; may be empty for
/// graphs that are classified as a whole.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Masks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl Masks {
    pub fn empty(n: usize) -> Self {
        Masks {
            train: vec![false; n],
            val: vec![false; n],
            test: vec![false; n],
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        for (name, m) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            if m.len() != n {
                return Err(Error::Config(format!(
                    "{name} mask has {} entries for {n} nodes",
                    m.len()
                )));
            }
        }
        for i in 0..n {
            let picks = self.train[i] as u8 + self.val[i] as u8 + self.test[i] as u8;
            if picks > 1 {
                return Err(Error::Config(format!("node {i} appears in multiple masks")));
            }
        }
        Ok(())
    }
}

/// Undirected graph with dense node features.
///
/// The adjacency never stores self-loops; layer types that need them (GCN,
/// attention over self) add them internally. Values are immutable after
/// construction; transforms return new graphs.
#[derive(Clone, Debug)]
pub struct Graph {
    n_nodes: usize,
    adjacency: Arc<SparseMatrix>,
    features: Tensor,
    /// CSR copy of `features` kept for graphs whose feature matrix is large
    /// and mostly zeros (bag-of-words citation data); the first-layer
    /// projection then runs as a sparse product.
    sparse_features: Option<Arc<SparseMatrix>>,
    labels: Vec<usize>,
    masks: Masks,
}

impl Graph {
    /// Build from an undirected edge list. Self-loops and duplicate edges are
    /// dropped; both directions of each surviving edge are stored.
    pub fn new(
        n_nodes: usize,
        edges: &[(usize, usize)],
        features: Tensor,
        labels: Vec<usize>,
        masks: Masks,
    ) -> Result<Graph> {
        if features.rows() != n_nodes {
            return Err(Error::Config(format!(
                "feature matrix has {} rows for {} nodes",
                features.rows(),
                n_nodes
            )));
        }
        if !labels.is_empty() && labels.len() != n_nodes {
            return Err(Error::Config(format!(
                "{} labels for {} nodes",
                labels.len(),
                n_nodes
            )));
        }
        masks.check(n_nodes)?;
        let mut canonical: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= n_nodes || b >= n_nodes {
                return Err(Error::Config(format!("edge ({a},{b}) out of bounds")));
            }
            if a == b {
                continue;
            }
            canonical.push((a.min(b), a.max(b)));
        }
        canonical.sort_unstable();
        canonical.dedup();
        let mut triplets = Vec::with_capacity(canonical.len() * 2);
        for &(a, b) in &canonical {
            triplets.push((a, b, 1.0));
            triplets.push((b, a, 1.0));
        }
        let sparse_features = Self::maybe_sparse(&features);
        Ok(Graph {
            n_nodes,
            adjacency: Arc::new(SparseMatrix::from_triplets(n_nodes, n_nodes, &triplets)),
            features,
            sparse_features,
            labels,
            masks,
        })
    }

    fn maybe_sparse(features: &Tensor) -> Option<Arc<SparseMatrix>> {
        if features.len() < 4096 {
            return None;
        }
        let sparse = SparseMatrix::from_dense(features);
        (sparse.density() <= 0.25).then(|| Arc::new(sparse))
    }

    /// Same graph with a replacement adjacency (used by edge transforms).
    pub(crate) fn with_adjacency(&self, adjacency: SparseMatrix) -> Graph {
        Graph {
            n_nodes: self.n_nodes,
            adjacency: Arc::new(adjacency),
            features: self.features.clone(),
            sparse_features: self.sparse_features.clone(),
            labels: self.labels.clone(),
            masks: self.masks.clone(),
        }
    }

    /// Sparse view of the features when one is kept.
    pub fn features_sparse(&self) -> Option<&Arc<SparseMatrix>> {
        self.sparse_features.as_ref()
    }

    #[cfg(test)]
    pub(crate) fn force_dense_features(mut self) -> Graph {
        self.sparse_features = None;
        self
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Number of undirected edges.
    pub fn n_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn adjacency(&self) -> &Arc<SparseMatrix> {
        &self.adjacency
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn has_labels(&self) -> bool {
        !self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.iter().map(|l| l + 1).max().unwrap_or(0)
    }

    pub fn masks(&self) -> &Masks {
        &self.masks
    }

    pub fn degree_vector(&self) -> Vec<usize> {
        (0..self.n_nodes).map(|v| self.adjacency.row_nnz(v)).collect()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        self.adjacency.row(v).0
    }

    /// Canonical edge list with stable ids (pairs ordered `i < j`,
    /// lexicographically sorted).
    pub fn edge_indexing(&self) -> EdgeIndexing {
        let edges: Vec<(usize, usize)> = self
            .adjacency
            .iter_entries()
            .filter(|(a, b, _)| a < b)
            .map(|(a, b, _)| (a, b))
            .collect();
        EdgeIndexing {
            n_nodes: self.n_nodes,
            edges,
            features: None,
        }
    }

    /// Adjacency pattern plus self-loops, for attention neighborhoods.
    pub fn adjacency_with_self_loops(&self) -> SparseMatrix {
        let mut triplets: Vec<(usize, usize, f64)> = self.adjacency.iter_entries().collect();
        for i in 0..self.n_nodes {
            triplets.push((i, i, 1.0));
        }
        SparseMatrix::from_triplets(self.n_nodes, self.n_nodes, &triplets)
    }

    /// Symmetric GCN propagation matrix `D^-1/2 (A + I) D^-1/2`.
    pub fn gcn_norm_adjacency(&self) -> SparseMatrix {
        let with_loops = self.adjacency_with_self_loops();
        let inv_sqrt: Vec<f64> = (0..self.n_nodes)
            .map(|v| 1.0 / (with_loops.row_nnz(v) as f64).sqrt())
            .collect();
        let triplets: Vec<(usize, usize, f64)> = with_loops
            .iter_entries()
            .map(|(r, c, _)| (r, c, inv_sqrt[r] * inv_sqrt[c]))
            .collect();
        SparseMatrix::from_triplets(self.n_nodes, self.n_nodes, &triplets)
    }

    /// Row-normalized adjacency `D^-1 A`; zero rows for isolated nodes.
    pub fn row_norm_adjacency(&self) -> SparseMatrix {
        let triplets: Vec<(usize, usize, f64)> = self
            .adjacency
            .iter_entries()
            .map(|(r, c, _)| (r, c, 1.0 / self.adjacency.row_nnz(r) as f64))
            .collect();
        SparseMatrix::from_triplets(self.n_nodes, self.n_nodes, &triplets)
    }
}

/// Canonical edge list with stable dense edge ids `0..M-1`.
#[derive(Clone, Debug)]
pub struct EdgeIndexing {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    /// Optional edge feature matrix, one row per edge id.
    pub features: Option<Tensor>,
}

impl EdgeIndexing {
    pub fn new(n_nodes: usize, mut edges: Vec<(usize, usize)>) -> Self {
        for e in edges.iter_mut() {
            *e = (e.0.min(e.1), e.0.max(e.1));
        }
        edges.sort_unstable();
        edges.dedup();
        EdgeIndexing {
            n_nodes,
            edges,
            features: None,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Endpoints of an edge id.
    pub fn lookup(&self, edge_id: usize) -> (usize, usize) {
        self.edges[edge_id]
    }
}

/// A dataset of graphs for whole-graph classification.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub graphs: Vec<Graph>,
    /// One class label per graph.
    pub labels: Vec<usize>,
    /// Fold assignment per graph (empty until [`GraphBatch::assign_folds`]).
    pub folds: Vec<usize>,
}

impl GraphBatch {
    pub fn new(graphs: Vec<Graph>, labels: Vec<usize>) -> Result<Self> {
        if graphs.len() != labels.len() {
            return Err(Error::Config(format!(
                "{} graphs but {} labels",
                graphs.len(),
                labels.len()
            )));
        }
        Ok(GraphBatch {
            graphs,
            labels,
            folds: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.iter().map(|l| l + 1).max().unwrap_or(0)
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs.first().map_or(0, Graph::feature_dim)
    }

    /// Shuffle graphs with the given seed and deal them round-robin into
    /// `n_folds` folds. The same seed always yields the same assignment.
    pub fn assign_folds(&mut self, n_folds: usize, seed: u64) -> Result<()> {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        if self.graphs.len() < n_folds {
            return Err(Error::Config(format!(
                "{} graphs cannot fill {n_folds} folds",
                self.graphs.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.graphs.len()).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        let mut folds = vec![0usize; self.graphs.len()];
        for (pos, &g) in order.iter().enumerate() {
            folds[g] = pos % n_folds;
        }
        self.folds = folds;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Graph {
        // 0 - 1 - 2
        Graph::new(
            3,
            &[(0, 1), (1, 2)],
            Tensor::zeros(3, 2),
            vec![0, 1, 0],
            Masks::empty(3),
        )
        .unwrap()
    }

    #[test]
    fn builder_drops_self_loops_and_duplicates() {
        let g = Graph::new(
            3,
            &[(0, 1), (1, 0), (2, 2), (1, 2), (1, 2)],
            Tensor::zeros(3, 1),
            vec![],
            Masks::empty(3),
        )
        .unwrap();
        assert_eq!(g.n_edges(), 2);
        assert!(g.adjacency().is_symmetric());
        assert!(!g.adjacency().has_diagonal_entry());
    }

    #[test]
    fn degree_vector_sums_to_twice_edges() {
        let g = path3();
        assert_eq!(g.degree_vector(), vec![1, 2, 1]);
        assert_eq!(g.degree_vector().iter().sum::<usize>(), 2 * g.n_edges());
    }

    #[test]
    fn masks_must_be_disjoint() {
        let mut masks = Masks::empty(2);
        masks.train[0] = true;
        masks.val[0] = true;
        let r = Graph::new(2, &[(0, 1)], Tensor::zeros(2, 1), vec![], masks);
        assert!(r.is_err());
    }

    #[test]
    fn gcn_norm_rows() {
        let g = path3();
        let p = g.gcn_norm_adjacency();
        // Node 0: self-loop degree 2, neighbor 1 has degree 3.
        let expect = 1.0 / (2.0_f64.sqrt() * 3.0_f64.sqrt());
        let (cols, vals) = p.row(0);
        assert_eq!(cols, &[0, 1]);
        assert!((vals[0] - 0.5).abs() < 1e-12);
        assert!((vals[1] - expect).abs() < 1e-12);
    }

    #[test]
    fn row_norm_handles_isolated_nodes() {
        let g = Graph::new(3, &[(0, 1)], Tensor::zeros(3, 1), vec![], Masks::empty(3)).unwrap();
        let p = g.row_norm_adjacency();
        assert_eq!(p.row_nnz(2), 0);
        assert_eq!(p.row(0).1, &[1.0]);
    }

    #[test]
    fn edge_indexing_is_canonical() {
        let g = path3();
        let e = g.edge_indexing();
        assert_eq!(e.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(e.lookup(1), (1, 2));
    }

    #[test]
    fn fold_assignment_is_deterministic_and_partitions() {
        let g = path3();
        let graphs: Vec<Graph> = (0..25).map(|_| g.clone()).collect();
        let labels = vec![0usize; 25];
        let mut b1 = GraphBatch::new(graphs.clone(), labels.clone()).unwrap();
        let mut b2 = GraphBatch::new(graphs, labels).unwrap();
        b1.assign_folds(10, 7).unwrap();
        b2.assign_folds(10, 7).unwrap();
        assert_eq!(b1.folds, b2.folds);
        for f in 0..10 {
            assert!(b1.folds.iter().any(|x| *x == f), "fold {f} empty");
        }
    }

    #[test]
    fn too_few_graphs_for_folds() {
        let g = path3();
        let mut b = GraphBatch::new(vec![g.clone(), g], vec![0, 1]).unwrap();
        assert!(b.assign_folds(10, 0).is_err());
    }
}
