//! Stochastic block model generator for desk-scale synthetic experiments.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, Masks};
use crate::tensor::Tensor;

/// Sample a stochastic block model graph.
///
/// Nodes are grouped into `blocks` consecutive blocks of `nodes_per_block`;
/// an undirected edge appears with probability `p_in` inside a block and
/// `p_out` across blocks. Labels are block ids. Features are the one-hot
/// block centroid (index `block % feat_dim`) plus unit Gaussian noise.
///
/// The first 20 nodes of each block form the training mask; of the rest,
/// up to 500 (at most half) go to validation and the remainder to test.
pub fn sbm_generate(
    blocks: usize,
    nodes_per_block: usize,
    p_in: f64,
    p_out: f64,
    feat_dim: usize,
    seed: u64,
) -> Graph {
    assert!(
        (0.0..=1.0).contains(&p_out) && p_out <= p_in && p_in <= 1.0,
        "need 0 <= p_out <= p_in <= 1"
    );
    assert!(blocks > 0 && nodes_per_block > 0 && feat_dim > 0);
    let n = blocks * nodes_per_block;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let labels: Vec<usize> = (0..n).map(|v| v / nodes_per_block).collect();

    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }

    let mut rows = Vec::with_capacity(n);
    for v in 0..n {
        let mut row = vec![0.0; feat_dim];
        row[labels[v] % feat_dim] = 1.0;
        for x in row.iter_mut() {
            *x += gaussian(&mut rng);
        }
        rows.push(row);
    }
    let features = Tensor::from_rows(&rows);

    let mut masks = Masks::empty(n);
    let mut per_class = vec![0usize; blocks];
    for v in 0..n {
        if per_class[labels[v]] < 20 {
            masks.train[v] = true;
            per_class[labels[v]] += 1;
        }
    }
    let remaining: Vec<usize> = (0..n).filter(|v| !masks.train[*v]).collect();
    let n_val = (remaining.len() / 2).min(500);
    for (k, &v) in remaining.iter().enumerate() {
        if k < n_val {
            masks.val[v] = true;
        } else {
            masks.test[v] = true;
        }
    }

    Graph::new(n, &edges, features, labels, masks).expect("generated graph is valid")
}

/// Standard normal via Box-Muller.
fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = sbm_generate(2, 10, 0.6, 0.1, 4, 9);
        let b = sbm_generate(2, 10, 0.6, 0.1, 4, 9);
        assert_eq!(a.adjacency(), b.adjacency());
        assert_eq!(a.features().values(), b.features().values());
        let c = sbm_generate(2, 10, 0.6, 0.1, 4, 10);
        assert_ne!(a.adjacency(), c.adjacency());
    }

    #[test]
    fn extreme_probabilities_give_disjoint_cliques() {
        let g = sbm_generate(2, 3, 1.0, 0.0, 2, 1);
        // Two disjoint triangles.
        assert_eq!(g.n_edges(), 6);
        for v in 0..6 {
            for &u in g.neighbors(v) {
                assert_eq!(g.labels()[u], g.labels()[v]);
            }
        }
    }

    #[test]
    fn train_mask_is_twenty_per_class() {
        let g = sbm_generate(3, 50, 0.2, 0.05, 4, 2);
        let train = &g.masks().train;
        for b in 0..3 {
            let count = (0..150)
                .filter(|v| g.labels()[*v] == b && train[*v])
                .count();
            assert_eq!(count, 20);
        }
        // Masks partition the remaining nodes between val and test.
        let n_val = g.masks().val.iter().filter(|m| **m).count();
        let n_test = g.masks().test.iter().filter(|m| **m).count();
        assert_eq!(n_val + n_test, 150 - 60);
        assert!(n_val > 0 && n_test > 0);
    }

    #[test]
    fn uniform_probability_has_uniform_density() {
        // With p_in == p_out the within/across edge densities must agree.
        // Chi-square over 100 seeds at the 1% level: critical value for
        // 1 degree of freedom is 6.635.
        let p = 0.3;
        let mut within = 0u64;
        let mut across = 0u64;
        let mut within_total = 0u64;
        let mut across_total = 0u64;
        for seed in 0..100 {
            let g = sbm_generate(2, 8, p, p, 2, seed);
            for i in 0..16 {
                for j in (i + 1)..16 {
                    let same = g.labels()[i] == g.labels()[j];
                    let connected = g.adjacency().has_entry(i, j);
                    if same {
                        within_total += 1;
                        within += connected as u64;
                    } else {
                        across_total += 1;
                        across += connected as u64;
                    }
                }
            }
        }
        let chi = |observed: u64, total: u64| {
            let expect = p * total as f64;
            let diff = observed as f64 - expect;
            diff * diff / expect + diff * diff / ((1.0 - p) * total as f64)
        };
        let stat = chi(within, within_total) + chi(across, across_total);
        assert!(stat < 6.635 * 2.0, "edge density not uniform: chi2 = {stat}");
    }
}
