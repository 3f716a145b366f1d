//! Independent brute-force references. Everything here recomputes results
//! with explicit per-element loops and shares no code path with the
//! implementations it checks; the `check` subcommand and the acceptance
//! suite both run through [`run_all`].

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::distill::{adr_loss, graph_embed_loss, logit_loss, ndr, total_loss, DistillConfig};
use crate::error::Result;
use crate::graph::{edge_adjacency, EdgeIndexing, Graph, Masks};
use crate::layers::{Backbone, ForwardMode, LayerStack, ModelConfig, ReadoutKind, Task};
use crate::tensor::{SparseMatrix, Tape, Tensor, COSINE_EPS};

/// Outcome of one oracle property.
#[derive(Clone, Debug)]
pub struct OracleReport {
    pub name: String,
    pub trials: usize,
    pub max_dev: f64,
    pub tol: f64,
    pub pass: bool,
}

impl OracleReport {
    fn new(name: &str, trials: usize, max_dev: f64, tol: f64) -> Self {
        OracleReport {
            name: name.to_string(),
            trials,
            max_dev,
            tol,
            pass: max_dev <= tol,
        }
    }
}

impl std::fmt::Display for OracleReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {} max_dev={:.3e} tol={:.3e} trials={}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.max_dev,
            self.tol,
            self.trials
        )
    }
}

/// Explicit per-node neighbor iteration version of the discrepancy metric.
/// Returns values and validity under the same degeneracy rules as the
/// matrix form.
pub fn ndr_loop_oracle(g: &Graph, x: &Tensor) -> (Vec<f64>, Vec<bool>) {
    let d = x.cols();
    let mut values = vec![0.0; g.n_nodes()];
    let mut validity = vec![false; g.n_nodes()];
    for v in 0..g.n_nodes() {
        let mut agg = vec![0.0; d];
        for &c in g.neighbors(v) {
            for (a, xv) in agg.iter_mut().zip(x.row(c)) {
                *a += xv;
            }
        }
        let na = x.row(v).iter().map(|t| t * t).sum::<f64>().sqrt();
        let nb = agg.iter().map(|t| t * t).sum::<f64>().sqrt();
        if na < COSINE_EPS || nb < COSINE_EPS {
            continue;
        }
        let dot: f64 = x.row(v).iter().zip(&agg).map(|(a, b)| a * b).sum();
        values[v] = 1.0 - dot / (na * nb);
        validity[v] = true;
    }
    (values, validity)
}

/// Pair-wise vs neighbor-wise distance, both normalized by the directed edge
/// count. `d2` sums `||X_v - X_c||_p` over all directed edges; `d1` sums
/// `||X_v - mean of neighbors||_p` over nodes with at least one neighbor
/// (the aggregate is undefined for isolated nodes, which contribute to
/// neither side). Returns `(d2, d1)`.
pub fn prop1_oracle(g: &Graph, x: &Tensor, p: u32) -> (f64, f64) {
    assert!(p == 1 || p == 2, "p must be 1 or 2");
    let d = x.cols();
    let norm = |row: &[f64]| -> f64 {
        match p {
            1 => row.iter().map(|v| v.abs()).sum(),
            _ => row.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    };
    let n_directed = (2 * g.n_edges()) as f64;
    if n_directed == 0.0 {
        return (0.0, 0.0);
    }
    let mut d2 = 0.0;
    let mut d1 = 0.0;
    for v in 0..g.n_nodes() {
        let neigh = g.neighbors(v);
        if neigh.is_empty() {
            continue;
        }
        let mut mean = vec![0.0; d];
        for &c in neigh {
            let mut diff = vec![0.0; d];
            for k in 0..d {
                diff[k] = x.get(v, k) - x.get(c, k);
                mean[k] += x.get(c, k) / neigh.len() as f64;
            }
            d2 += norm(&diff);
        }
        let diff: Vec<f64> = (0..d).map(|k| x.get(v, k) - mean[k]).collect();
        d1 += norm(&diff);
    }
    (d2 / n_directed, d1 / n_directed)
}

/// O(M^2) endpoint-set intersection over all edge pairs.
pub fn edge_adj_oracle(e: &EdgeIndexing) -> Vec<Vec<bool>> {
    let m = e.n_edges();
    let mut out = vec![vec![false; m]; m];
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let (a, b) = e.lookup(i);
            let (c, d) = e.lookup(j);
            out[i][j] = a == c || a == d || b == c || b == d;
        }
    }
    out
}

/// Central finite differences against the tape adjoint for every entry of
/// every parameter. `eval` must be deterministic (no dropout).
///
/// Stop-gradient targets are held frozen at their base-point values during
/// the difference evaluations, so the function being differenced is exactly
/// the one whose partial derivative the tape computes.
pub fn grad_check(
    name: &str,
    params: &[Tensor],
    eval: &dyn Fn(&mut Tape, &[Tensor]) -> Result<Tensor>,
    h: f64,
    tol: f64,
) -> Result<OracleReport> {
    let mut tape = Tape::new();
    let watched: Vec<Tensor> = params.iter().map(|p| tape.watch(p)).collect();
    let loss = eval(&mut tape, &watched)?;
    let frozen_targets = tape.stop_gradient_values();
    let grads = tape.backward(&loss)?;
    let analytic: Vec<Tensor> = watched
        .iter()
        .map(|w| grads.get(w).expect("watched tensor is on the tape"))
        .collect();

    let eval_at = |bumped: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::with_pinned_stop_gradients(frozen_targets.clone());
        let watched: Vec<Tensor> = bumped.iter().map(|p| tape.watch(p)).collect();
        Ok(eval(&mut tape, &watched)?.item())
    };

    let mut max_dev = 0.0f64;
    let mut trials = 0usize;
    for p in 0..params.len() {
        for i in 0..params[p].len() {
            let bump = |delta: f64| -> Vec<Tensor> {
                let mut copy: Vec<Tensor> = params.to_vec();
                let mut vals = copy[p].values().to_vec();
                vals[i] += delta;
                copy[p] = Tensor::from_vec(copy[p].rows(), copy[p].cols(), vals);
                copy
            };
            let plus = eval_at(&bump(h))?;
            let minus = eval_at(&bump(-h))?;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[p].values()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            max_dev = max_dev.max(rel);
            trials += 1;
        }
    }
    Ok(OracleReport::new(name, trials, max_dev, tol))
}

fn random_graph(rng: &mut ChaCha8Rng, max_n: usize) -> (Graph, Tensor) {
    let n = rng.gen_range(2..=max_n);
    let d = rng.gen_range(1..=8);
    let p = rng.gen_range(0.05..0.4);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let mut feats: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    // Occasionally zero out a row to exercise the degeneracy rules.
    if rng.gen::<f64>() < 0.2 {
        let row = rng.gen_range(0..n);
        for k in 0..d {
            feats[row * d + k] = 0.0;
        }
    }
    let x = Tensor::from_vec(n, d, feats);
    let g = Graph::new(n, &edges, x.clone(), vec![0; n], Masks::empty(n)).unwrap();
    (g, x)
}

fn check_ndr_matrix_vs_loop(trials: usize, max_n: usize) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0xD15C);
    let mut max_dev = 0.0f64;
    for _ in 0..trials {
        let (g, x) = random_graph(&mut rng, max_n);
        let mut tape = Tape::new();
        let v = ndr(&mut tape, &g, &x).unwrap();
        let (expect, expect_valid) = ndr_loop_oracle(&g, &x);
        for i in 0..g.n_nodes() {
            if v.validity[i] != expect_valid[i] {
                max_dev = 1.0;
            } else if v.validity[i] {
                max_dev = max_dev.max((v.values[i] - expect[i]).abs());
            }
        }
    }
    OracleReport::new("ndr_matrix_vs_loop", trials, max_dev, 1e-10)
}

fn check_spmm_vs_densify(trials: usize) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5B33);
    let mut max_dev = 0.0f64;
    for _ in 0..trials {
        let (n, m, d) = (rng.gen_range(1..8), rng.gen_range(1..8), rng.gen_range(1..5));
        let mut triplets = Vec::new();
        for r in 0..n {
            for c in 0..m {
                if rng.gen::<f64>() < 0.4 {
                    triplets.push((r, c, rng.gen_range(-3i32..=3) as f64));
                }
            }
        }
        let sp = Arc::new(SparseMatrix::from_triplets(n, m, &triplets));
        let x = Tensor::from_vec(
            m,
            d,
            (0..m * d).map(|_| rng.gen_range(-3i32..=3) as f64).collect(),
        );
        let mut tape = Tape::new();
        let a = tape.spmm(&sp, &x).unwrap();
        let dense = sp.to_dense();
        let b = tape.matmul(&dense, &x).unwrap();
        for (u, v) in a.values().iter().zip(b.values()) {
            max_dev = max_dev.max((u - v).abs());
        }
    }
    OracleReport::new("spmm_vs_densified_matmul", trials, max_dev, 0.0)
}

fn check_edge_adjacency(trials: usize) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0xED6E);
    let mut max_dev = 0.0f64;
    for _ in 0..trials {
        let (g, _) = random_graph(&mut rng, 20);
        let e = g.edge_indexing();
        if e.n_edges() > 200 {
            continue;
        }
        let fast = edge_adjacency(&e);
        let brute = edge_adj_oracle(&e);
        for i in 0..e.n_edges() {
            for j in 0..e.n_edges() {
                let got = fast.has_entry(i, j);
                if got != brute[i][j] {
                    max_dev = 1.0;
                }
            }
        }
        if fast.has_diagonal_entry() {
            max_dev = 1.0;
        }
    }
    OracleReport::new("edge_adjacency_vs_bruteforce", trials, max_dev, 0.0)
}

fn check_prop1(trials: usize, p: u32) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9301 + p as u64);
    // Deviation is how far d1 exceeds d2; the claim is d2 >= d1.
    let mut max_dev = f64::NEG_INFINITY;
    for _ in 0..trials {
        let (g, x) = random_graph(&mut rng, 40);
        let (d2, d1) = prop1_oracle(&g, &x, p);
        max_dev = max_dev.max(d1 - d2);
    }
    OracleReport::new(&format!("prop1_inequality_p{p}"), trials, max_dev.max(0.0), 1e-12)
}

fn check_grad_linear_mse() -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x11EA);
    let x = Tensor::from_vec(4, 3, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let t = Tensor::from_vec(4, 2, (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let w = Tensor::from_vec(3, 2, (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect());
    grad_check(
        "grad_linear_mse",
        &[w],
        &move |tape, params| {
            let y = tape.matmul(&x, &params[0])?;
            let diff = tape.sub(&y, &t)?;
            let sq = tape.mul(&diff, &diff)?;
            Ok(tape.sum_all(&sq))
        },
        1e-6,
        1e-9,
    )
}

fn toy_labeled_graph(rng: &mut ChaCha8Rng) -> Graph {
    let edges = [(0, 1), (0, 2), (1, 2), (2, 3), (3, 4), (4, 5)];
    let feats = Tensor::from_vec(6, 5, (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let labels = vec![0, 1, 0, 1, 0, 1];
    let mut masks = Masks::empty(6);
    masks.train = vec![true, true, true, true, false, false];
    masks.val = vec![false, false, false, false, true, false];
    masks.test = vec![false, false, false, false, false, true];
    Graph::new(6, &edges, feats, labels, masks).unwrap()
}

fn model_config(n_layers: usize, hidden: usize) -> ModelConfig {
    ModelConfig {
        backbone: Backbone::Gcn,
        n_layers,
        hidden_dim: hidden,
        n_heads: 1,
        dropout: 0.0,
        activation: None,
        readout: ReadoutKind::Mean,
    }
}

fn check_grad_gcn_ce() -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6CCE);
    let g = toy_labeled_graph(&mut rng);
    let stack = LayerStack::new(model_config(2, 5), 5, 2, false, &mut rng)?;
    let params: Vec<Tensor> = stack.params().into_iter().map(|(_, t)| t.clone()).collect();
    let labels = Arc::new(g.labels().to_vec());
    let mask = Arc::new(g.masks().train.clone());
    grad_check(
        "grad_gcn_cross_entropy",
        &params,
        &move |tape, watched| {
            let bound = stack.bound_with(watched.to_vec())?;
            let fwd = bound.forward(tape, &g, Task::Node, ForwardMode::Eval, false)?;
            tape.softmax_cross_entropy(&fwd.logits, &labels, &mask)
        },
        1e-6,
        1e-5,
    )
}

/// Gradient of the complete combined objective (all four terms active,
/// degree weighting and the learnable transform on) on a 6-node 3-layer toy.
pub fn check_grad_full_objective() -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF011);
    let g = toy_labeled_graph(&mut rng);
    let mut stack = LayerStack::new(model_config(3, 4), 5, 2, true, &mut rng)?;
    // Randomize the transform away from identity so its gradient is generic.
    {
        let mut params = stack.params_mut();
        let t = params.last_mut().unwrap();
        let noisy: Vec<f64> = t
            .values()
            .iter()
            .map(|v| v + rng.gen_range(-0.3..0.3))
            .collect();
        **t = Tensor::from_vec(t.rows(), t.cols(), noisy);
    }
    let dcfg = DistillConfig {
        alpha: 0.7,
        beta: 1.3,
        gamma: 0.9,
        degree_weighting: true,
        learnable_transform: true,
        ..DistillConfig::baseline()
    };
    let params: Vec<Tensor> = stack.params().into_iter().map(|(_, t)| t.clone()).collect();
    let labels = Arc::new(g.labels().to_vec());
    let mask = Arc::new(g.masks().train.clone());
    grad_check(
        "grad_full_objective",
        &params,
        &move |tape, watched| {
            let bound = stack.bound_with(watched.to_vec())?;
            let parts = crate::train::loss_parts(
                tape,
                &bound,
                &g,
                Task::Node,
                &labels,
                &mask,
                &dcfg,
                false,
                ForwardMode::Eval,
            )?;
            total_loss(tape, &parts.ce, &parts.logit, &parts.adr, &parts.graph_embed, &dcfg)
        },
        1e-6,
        1e-5,
    )
}

/// Stop-gradient audit: with only a distillation loss on the tape, the
/// target-side leaf must receive exactly zero adjoint while the blocked
/// amount is visibly nonzero. Deviation is the worst leaked adjoint.
pub fn check_stop_gradient_contract() -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5706);
    let mut max_dev = 0.0f64;
    let mut trials = 0;

    // Graph-embedding loss: shallowest readout is frozen.
    let mut tape = Tape::new();
    let g1 = tape.watch(&Tensor::from_vec(1, 3, (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()));
    let g2 = tape.watch(&Tensor::from_vec(1, 3, (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()));
    let loss = graph_embed_loss(&mut tape, &[g1.clone(), g2.clone()])?;
    let grads = tape.backward(&loss)?;
    max_dev = max_dev.max(grads.get(&g1).unwrap().max_abs());
    if grads.stop_gradient_blocks().iter().all(|(_, _, n)| *n == 0.0) {
        max_dev = 1.0;
    }
    trials += 1;

    // Logit loss: final logits are frozen.
    let mut tape = Tape::new();
    let inter = tape.watch(&Tensor::from_vec(4, 3, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()));
    let fin = tape.watch(&Tensor::from_vec(4, 3, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()));
    let mask = Arc::new(vec![true, true, false, true]);
    let loss = logit_loss(&mut tape, &[inter.clone()], &fin, &mask)?;
    let grads = tape.backward(&loss)?;
    max_dev = max_dev.max(grads.get(&fin).unwrap().max_abs());
    if grads.get(&inter).unwrap().max_abs() == 0.0 {
        max_dev = 1.0;
    }
    trials += 1;

    // Retaining loss, both directions: the teacher-side NDR leaf is frozen.
    for direction in [
        crate::distill::Direction::Shallow2Deep,
        crate::distill::Direction::Deep2Shallow,
    ] {
        let g = {
            let x = Tensor::from_vec(3, 2, (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect());
            Graph::new(3, &[(0, 1), (1, 2)], x, vec![0; 3], Masks::empty(3)).unwrap()
        };
        let mut tape = Tape::new();
        let shallow = tape.watch(&Tensor::column(&[0.9, 0.8, 0.7]));
        let deep = tape.watch(&Tensor::column(&[0.2, 0.3, 0.1]));
        let make = |t: &Tensor, layer: usize| crate::distill::NdrVector {
            values: t.values().to_vec(),
            validity: vec![true; 3],
            layer,
            tensor: t.clone(),
        };
        let cfg = DistillConfig {
            beta: 1.0,
            direction,
            ..DistillConfig::baseline()
        };
        let (loss, _) = adr_loss(&mut tape, &g, &[make(&shallow, 1), make(&deep, 2)], None, &cfg)?;
        if loss.item() > 0.0 {
            let grads = tape.backward(&loss)?;
            let (frozen, online) = match direction {
                crate::distill::Direction::Shallow2Deep => (&shallow, &deep),
                crate::distill::Direction::Deep2Shallow => (&deep, &shallow),
            };
            max_dev = max_dev.max(grads.get(frozen).unwrap().max_abs());
            if grads.get(online).unwrap().max_abs() == 0.0 {
                max_dev = 1.0;
            }
        }
        trials += 1;
    }

    Ok(OracleReport::new("stop_gradient_contract", trials, max_dev, 0.0))
}

/// The full oracle suite, as run by `check`.
pub fn run_all() -> Result<Vec<OracleReport>> {
    Ok(vec![
        check_ndr_matrix_vs_loop(100, 100),
        check_spmm_vs_densify(50),
        check_edge_adjacency(50),
        check_prop1(100, 1),
        check_prop1(100, 2),
        check_grad_linear_mse()?,
        check_grad_gcn_ce()?,
        check_grad_full_objective()?,
        check_stop_gradient_contract()?,
    ])
}
