//! Structural transforms: label-masked adjacency, edge adjacency, and
//! random edge dropping. All of them preserve symmetry and never introduce
//! self-loops.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{EdgeIndexing, Graph};
use crate::tensor::SparseMatrix;

/// Adjacency restricted to cross-class pairs.
///
/// Only training labels count as known: an edge is removed exactly when both
/// endpoints are train-labeled with the same class. Edges with an unlabeled
/// endpoint are kept, since an unknown pair cannot be ruled same-class.
pub fn masked_adjacency(g: &Graph) -> SparseMatrix {
    let labels = g.labels();
    let train = &g.masks().train;
    let known = |v: usize| !train.is_empty() && train[v] && !labels.is_empty();
    let triplets: Vec<(usize, usize, f64)> = g
        .adjacency()
        .iter_entries()
        .filter(|&(a, b, _)| !(known(a) && known(b) && labels[a] == labels[b]))
        .collect();
    SparseMatrix::from_triplets(g.n_nodes(), g.n_nodes(), &triplets)
}

/// M x M edge adjacency: entry (i, j) is 1 exactly when the distinct edges
/// `i` and `j` share an endpoint.
pub fn edge_adjacency(e: &EdgeIndexing) -> SparseMatrix {
    let m = e.n_edges();
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); e.n_nodes()];
    for (id, &(a, b)) in e.edges().iter().enumerate() {
        incident[a].push(id);
        incident[b].push(id);
    }
    let mut triplets = Vec::new();
    for edge_ids in &incident {
        for (k, &i) in edge_ids.iter().enumerate() {
            for &j in &edge_ids[k + 1..] {
                triplets.push((i, j, 1.0));
                triplets.push((j, i, 1.0));
            }
        }
    }
    // Two distinct simple edges share at most one endpoint, so no triplet is
    // produced twice and values stay exactly 1.
    SparseMatrix::from_triplets(m, m, &triplets)
}

/// Remove `floor(ratio * M)` undirected edges uniformly without replacement.
/// The input graph is untouched; the same seed removes the same subset.
pub fn drop_edge(g: &Graph, ratio: f64, seed: u64) -> Graph {
    assert!((0.0..1.0).contains(&ratio), "drop ratio must be in [0,1)");
    let indexing = g.edge_indexing();
    let m = indexing.n_edges();
    let n_drop = (ratio * m as f64).floor() as usize;
    if n_drop == 0 {
        return g.clone();
    }
    let mut ids: Vec<usize> = (0..m).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let mut keep: Vec<usize> = ids[n_drop..].to_vec();
    keep.sort_unstable();
    let mut triplets = Vec::with_capacity(keep.len() * 2);
    for id in keep {
        let (a, b) = indexing.lookup(id);
        triplets.push((a, b, 1.0));
        triplets.push((b, a, 1.0));
    }
    g.with_adjacency(SparseMatrix::from_triplets(g.n_nodes(), g.n_nodes(), &triplets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Masks;
    use crate::tensor::Tensor;

    fn labeled_graph(edges: &[(usize, usize)], labels: Vec<usize>, train_all: bool) -> Graph {
        let n = labels.len();
        let mut masks = Masks::empty(n);
        if train_all {
            masks.train = vec![true; n];
        }
        Graph::new(n, edges, Tensor::zeros(n, 1), labels, masks).unwrap()
    }

    #[test]
    fn masked_adjacency_same_class_everywhere_is_empty() {
        let g = labeled_graph(&[(0, 1), (1, 2), (0, 2)], vec![1, 1, 1], true);
        let a = masked_adjacency(&g);
        assert_eq!(a.nnz(), 0);
    }

    #[test]
    fn masked_adjacency_keeps_cross_class_edges() {
        let g = labeled_graph(&[(0, 1)], vec![0, 1], true);
        let a = masked_adjacency(&g);
        assert_eq!(a.nnz(), 2);
        assert!(a.is_symmetric());
    }

    #[test]
    fn masked_adjacency_matches_pairwise_label_oracle() {
        // 4 nodes, 2 classes, mixed edges; brute-force pair loop as oracle.
        let edges = [(0, 1), (0, 2), (1, 2), (2, 3)];
        let labels = vec![0, 0, 1, 1];
        let g = labeled_graph(&edges, labels.clone(), true);
        let a = masked_adjacency(&g);
        for i in 0..4 {
            for j in 0..4 {
                let adjacent = g.adjacency().has_entry(i, j);
                let expect = adjacent && labels[i] != labels[j];
                assert_eq!(a.has_entry(i, j), expect, "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn masked_adjacency_keeps_unlabeled_endpoints() {
        // Same class on both ends but only node 0 is train-labeled.
        let mut masks = Masks::empty(2);
        masks.train[0] = true;
        let g = Graph::new(2, &[(0, 1)], Tensor::zeros(2, 1), vec![0, 0], masks).unwrap();
        assert_eq!(masked_adjacency(&g).nnz(), 2);
    }

    #[test]
    fn edge_adjacency_disjoint_and_path_and_triangle() {
        // Two disjoint edges: all off-diagonal zero.
        let e = EdgeIndexing::new(4, vec![(0, 1), (2, 3)]);
        assert_eq!(edge_adjacency(&e).nnz(), 0);

        // Path of two edges sharing node 1.
        let e = EdgeIndexing::new(3, vec![(0, 1), (1, 2)]);
        let a = edge_adjacency(&e);
        assert!(a.has_entry(0, 1) && a.has_entry(1, 0));

        // Triangle: every pair of its 3 edges shares a node.
        let e = EdgeIndexing::new(3, vec![(0, 1), (0, 2), (1, 2)]);
        let a = edge_adjacency(&e);
        assert_eq!(a.nnz(), 6);
        assert!(!a.has_diagonal_entry());
    }

    #[test]
    fn drop_edge_zero_ratio_is_identity() {
        let g = labeled_graph(&[(0, 1), (1, 2)], vec![0, 1, 0], false);
        let dropped = drop_edge(&g, 0.0, 42);
        assert_eq!(dropped.n_edges(), g.n_edges());
    }

    #[test]
    fn drop_edge_count_symmetry_and_determinism() {
        // 10 undirected edges on a 5-clique.
        let mut edges = Vec::new();
        for i in 0..5 {
            for j in (i + 1)..5 {
                edges.push((i, j));
            }
        }
        let g = labeled_graph(&edges, vec![0; 5], false);
        assert_eq!(g.n_edges(), 10);
        let d1 = drop_edge(&g, 0.5, 7);
        assert_eq!(d1.n_edges(), 5);
        assert!(d1.adjacency().is_symmetric());
        assert!(!d1.adjacency().has_diagonal_entry());
        let d2 = drop_edge(&g, 0.5, 7);
        assert_eq!(d1.adjacency(), d2.adjacency());
        let d3 = drop_edge(&g, 0.5, 8);
        assert_ne!(d1.adjacency(), d3.adjacency());
        // Original untouched.
        assert_eq!(g.n_edges(), 10);
    }
}
