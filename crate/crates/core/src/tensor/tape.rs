//! Define-by-run reverse-mode gradient tape.
//!
//! The tape is rebuilt on every forward pass, which keeps the semantics of
//! per-epoch stochastic transforms (dropout, edge dropping) trivially
//! correct. Nodes are appended in execution order, so the node vector is
//! already a topological order and the backward sweep is a single reverse
//! iteration.
//!
//! A tape and the tensors recorded on it are confined to one thread.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{gemm, SparseMatrix, Tensor};

pub type NodeId = usize;

/// Recorded operand: optional tape node plus a shared copy of the forward
/// value (needed by most backward rules even for untracked constants).
#[derive(Clone)]
struct Arg {
    node: Option<NodeId>,
    rows: usize,
    cols: usize,
    data: Arc<Vec<f64>>,
}

impl Arg {
    fn of(t: &Tensor) -> Arg {
        Arg {
            node: t.node(),
            rows: t.rows(),
            cols: t.cols(),
            data: t.shared_data(),
        }
    }
}

enum Step {
    Leaf,
    StopGradient {
        input: NodeId,
    },
    Matmul {
        a: Arg,
        b: Arg,
    },
    Spmm {
        a: Arc<SparseMatrix>,
        b: Arg,
    },
    Add {
        a: Arg,
        b: Arg,
    },
    /// Row-vector bias broadcast over all rows of `a`.
    AddBias {
        a: Arg,
        bias: Arg,
    },
    Sub {
        a: Arg,
        b: Arg,
    },
    Mul {
        a: Arg,
        b: Arg,
    },
    Scale {
        a: Arg,
        factor: f64,
    },
    Relu {
        a: Arg,
    },
    LeakyRelu {
        a: Arg,
        slope: f64,
    },
    Elu {
        a: Arg,
        alpha: f64,
    },
    /// Forward already multiplied by the inverted-scaled keep mask.
    Dropout {
        a: Arg,
        scaled_mask: Vec<f64>,
    },
    ConcatCols {
        parts: Vec<Arg>,
    },
    MeanRows {
        a: Arg,
    },
    SumRows {
        a: Arg,
    },
    MaxRows {
        a: Arg,
        argmax: Vec<usize>,
    },
    SumAll {
        a: Arg,
    },
    RowCosineDist {
        a: Arg,
        b: Arg,
        valid: Arc<Vec<bool>>,
    },
    SoftmaxRows {
        a: Arg,
    },
    SoftmaxCrossEntropy {
        logits: Arg,
        labels: Arc<Vec<usize>>,
        mask: Arc<Vec<bool>>,
        n_masked: usize,
    },
    /// Mean over masked rows of KL(p || softmax(online)), p held by `target`.
    KlFixedRows {
        online: Arg,
        target: Arg,
        mask: Arc<Vec<bool>>,
        n_masked: usize,
    },
    /// Fused single-head attention aggregation over a fixed neighborhood
    /// structure (which must already include self-loops where wanted).
    GatAttention {
        z: Arg,
        s_src: Arg,
        s_dst: Arg,
        neigh: Arc<SparseMatrix>,
        slope: f64,
        attn: Vec<f64>,
    },
}

struct Node {
    rows: usize,
    cols: usize,
    data: Arc<Vec<f64>>,
    step: Step,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    adj: Vec<Option<Vec<f64>>>,
    shapes: Vec<(usize, usize)>,
    /// For every stop-gradient node: (sg node, its input, L2 norm of the
    /// adjoint that arrived at the sg node and was blocked there).
    blocked: Vec<(NodeId, NodeId, f64)>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. a recorded tensor. Zero-filled when no
    /// path reached it; `None` when the tensor was never on the tape.
    pub fn get(&self, t: &Tensor) -> Option<Tensor> {
        let id = t.node()?;
        Some(self.node_adjoint(id))
    }

    pub fn node_adjoint(&self, id: NodeId) -> Tensor {
        let (r, c) = self.shapes[id];
        match &self.adj[id] {
            Some(v) => Tensor::from_vec(r, c, v.clone()),
            None => Tensor::zeros(r, c),
        }
    }

    /// Max-abs adjoint entry for a node,0.0 if untouched.
    pub fn node_adjoint_max_abs(&self, id: NodeId) -> f64 {
        self.adj[id]
            .as_ref()
            .map_or(0.0, |v| v.iter().fold(0.0_f64, |m, x| m.max(x.abs())))
    }

    /// Stop-gradient audit: one entry per stop-gradient node on the tape,
    /// reporting how much adjoint was intercepted there.
    pub fn stop_gradient_blocks(&self) -> &[(NodeId, NodeId, f64)] {
        &self.blocked
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Values to substitute into stop-gradient outputs, in call order; used
    /// by finite-difference checks to hold distillation targets frozen while
    /// parameters are perturbed.
    pinned_sg: Vec<Vec<f64>>,
    sg_values: Vec<Vec<f64>>,
}

fn lse(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, v) in out.iter_mut().zip(row) {
        *o = (v - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<f64>, step: Step) -> Tensor {
        let id = self.nodes.len();
        let rc = Arc::new(data);
        self.nodes.push(Node {
            rows,
            cols,
            data: Arc::clone(&rc),
            step,
        });
        Tensor::with_node(rows, cols, rc, id)
    }

    /// Register a tensor as a learnable leaf of this tape.
    pub fn watch(&mut self, t: &Tensor) -> Tensor {
        let id = self.nodes.len();
        self.nodes.push(Node {
            rows: t.rows(),
            cols: t.cols(),
            data: t.shared_data(),
            step: Step::Leaf,
        });
        Tensor::with_node(t.rows(), t.cols(), t.shared_data(), id)
    }

    /// Tape that substitutes `values` (in call order) for the outputs of its
    /// stop-gradient nodes. A finite-difference pass built this way
    /// evaluates the same function the adjoint differentiates: targets stay
    /// at their base-point values while parameters move.
    pub fn with_pinned_stop_gradients(values: Vec<Vec<f64>>) -> Self {
        Tape {
            nodes: Vec::new(),
            pinned_sg: values,
            sg_values: Vec::new(),
        }
    }

    /// Forward values of every stop-gradient call so far, in call order.
    pub fn stop_gradient_values(&self) -> Vec<Vec<f64>> {
        self.sg_values.clone()
    }

    /// Identity forward; blocks all adjoint flow into `a` on backward.
    pub fn stop_gradient(&mut self, a: &Tensor) -> Tensor {
        let call = self.sg_values.len();
        let values = match self.pinned_sg.get(call) {
            Some(pinned) if pinned.len() == a.len() => pinned.clone(),
            _ => a.values().to_vec(),
        };
        self.sg_values.push(values.clone());
        match a.node() {
            Some(input) => self.push(a.rows(), a.cols(), values, Step::StopGradient { input }),
            // Nothing to block; plain (possibly pinned) copy off the tape.
            None => Tensor::from_vec(a.rows(), a.cols(), values),
        }
    }

    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.cols() != b.rows() {
            return Err(Error::dim(
                "matmul",
                format!("{}x{} times {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
            ));
        }
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, a.values(), false, b.values(), false, 0.0, &mut out);
        Ok(self.push(
            m,
            n,
            out,
            Step::Matmul {
                a: Arg::of(a),
                b: Arg::of(b),
            },
        ))
    }

    pub fn spmm(&mut self, a: &Arc<SparseMatrix>, b: &Tensor) -> Result<Tensor> {
        if a.cols() != b.rows() {
            return Err(Error::dim(
                "spmm",
                format!("{}x{} times {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
            ));
        }
        let d = b.cols();
        let mut out = vec![0.0; a.rows() * d];
        a.mul_dense_into(b.values(), d, &mut out);
        Ok(self.push(
            a.rows(),
            d,
            out,
            Step::Spmm {
                a: Arc::clone(a),
                b: Arg::of(b),
            },
        ))
    }

    fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
        if a.shape() != b.shape() {
            return Err(Error::dim(
                op,
                format!("{}x{} vs {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::same_shape("add", a, b)?;
        let out = a.values().iter().zip(b.values()).map(|(x, y)| x + y).collect();
        Ok(self.push(
            a.rows(),
            a.cols(),
            out,
            Step::Add {
                a: Arg::of(a),
                b: Arg::of(b),
            },
        ))
    }

    /// `a + bias` with `bias` a 1 x d row vector broadcast over rows.
    pub fn add_bias(&mut self, a: &Tensor, bias: &Tensor) -> Result<Tensor> {
        if bias.rows() != 1 || bias.cols() != a.cols() {
            return Err(Error::dim(
                "add_bias",
                format!("{}x{} plus bias {}x{}", a.rows(), a.cols(), bias.rows(), bias.cols()),
            ));
        }
        let d = a.cols();
        let mut out = a.values().to_vec();
        for r in 0..a.rows() {
            for c in 0..d {
                out[r * d + c] += bias.values()[c];
            }
        }
        Ok(self.push(
            a.rows(),
            d,
            out,
            Step::AddBias {
                a: Arg::of(a),
                bias: Arg::of(bias),
            },
        ))
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::same_shape("sub", a, b)?;
        let out = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
        Ok(self.push(
            a.rows(),
            a.cols(),
            out,
            Step::Sub {
                a: Arg::of(a),
                b: Arg::of(b),
            },
        ))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::same_shape("mul", a, b)?;
        let out = a.values().iter().zip(b.values()).map(|(x, y)| x * y).collect();
        Ok(self.push(
            a.rows(),
            a.cols(),
            out,
            Step::Mul {
                a: Arg::of(a),
                b: Arg::of(b),
            },
        ))
    }

    pub fn scale(&mut self, a: &Tensor, factor: f64) -> Tensor {
        let out = a.values().iter().map(|x| x * factor).collect();
        self.push(a.rows(), a.cols(), out, Step::Scale { a: Arg::of(a), factor })
    }

    pub fn relu(&mut self, a: &Tensor) -> Tensor {
        let out = a.values().iter().map(|x| x.max(0.0)).collect();
        self.push(a.rows(), a.cols(), out, Step::Relu { a: Arg::of(a) })
    }

    pub fn leaky_relu(&mut self, a: &Tensor, slope: f64) -> Tensor {
        let out = a
            .values()
            .iter()
            .map(|&x| if x > 0.0 { x } else { slope * x })
            .collect();
        self.push(a.rows(), a.cols(), out, Step::LeakyRelu { a: Arg::of(a), slope })
    }

    pub fn elu(&mut self, a: &Tensor, alpha: f64) -> Tensor {
        let out = a
            .values()
            .iter()
            .map(|&x| if x > 0.0 { x } else { alpha * (x.exp() - 1.0) })
            .collect();
        self.push(a.rows(), a.cols(), out, Step::Elu { a: Arg::of(a), alpha })
    }

    /// Inverted dropout: keeps entries with probability `1 - p` and rescales
    /// them by `1/(1-p)`. `p = 0` is the identity.
    pub fn dropout<R: rand::Rng>(&mut self, a: &Tensor, p: f64, rng: &mut R) -> Tensor {
        assert!((0.0..1.0).contains(&p), "dropout rate must be in [0,1)");
        if p == 0.0 {
            return a.clone();
        }
        let keep = 1.0 - p;
        let scale = 1.0 / keep;
        let mask: Vec<f64> = (0..a.len())
            .map(|_| if rng.gen::<f64>() < keep { scale } else { 0.0 })
            .collect();
        let out = a.values().iter().zip(&mask).map(|(x, m)| x * m).collect();
        self.push(
            a.rows(),
            a.cols(),
            out,
            Step::Dropout {
                a: Arg::of(a),
                scaled_mask: mask,
            },
        )
    }

    /// Horizontal concatenation (rows kept, feature columns appended).
    pub fn concat_cols(&mut self, parts: &[&Tensor]) -> Result<Tensor> {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = parts[0].rows();
        if parts.iter().any(|p| p.rows() != rows) {
            return Err(Error::dim("concat_cols", "row counts differ"));
        }
        let total: usize = parts.iter().map(|p| p.cols()).sum();
        let mut out = vec![0.0; rows * total];
        let mut base = 0;
        for p in parts {
            let d = p.cols();
            for r in 0..rows {
                out[r * total + base..r * total + base + d].copy_from_slice(p.row(r));
            }
            base += d;
        }
        Ok(self.push(
            rows,
            total,
            out,
            Step::ConcatCols {
                parts: parts.iter().map(|p| Arg::of(p)).collect(),
            },
        ))
    }

    /// Column-wise mean over rows; returns a 1 x d row vector.
    pub fn mean_rows(&mut self, a: &Tensor) -> Result<Tensor> {
        if a.rows() == 0 {
            return Err(Error::dim("mean_rows", "empty input"));
        }
        let (n, d) = a.shape();
        let mut out = vec![0.0; d];
        for r in 0..n {
            for c in 0..d {
                out[c] += a.values()[r * d + c];
            }
        }
        for o in out.iter_mut() {
            *o /= n as f64;
        }
        Ok(self.push(1, d, out, Step::MeanRows { a: Arg::of(a) }))
    }

    pub fn sum_rows(&mut self, a: &Tensor) -> Result<Tensor> {
        if a.rows() == 0 {
            return Err(Error::dim("sum_rows", "empty input"));
        }
        let (n, d) = a.shape();
        let mut out = vec![0.0; d];
        for r in 0..n {
            for c in 0..d {
                out[c] += a.values()[r * d + c];
            }
        }
        Ok(self.push(1, d, out, Step::SumRows { a: Arg::of(a) }))
    }

    /// Column-wise max over rows; subgradient flows to the first maximal row.
    pub fn max_rows(&mut self, a: &Tensor) -> Result<Tensor> {
        if a.rows() == 0 {
            return Err(Error::dim("max_rows", "empty input"));
        }
        let (n, d) = a.shape();
        let mut out = vec![f64::NEG_INFINITY; d];
        let mut argmax = vec![0usize; d];
        for r in 0..n {
            for c in 0..d {
                let v = a.values()[r * d + c];
                if v > out[c] {
                    out[c] = v;
                    argmax[c] = r;
                }
            }
        }
        Ok(self.push(
            1,
            d,
            out,
            Step::MaxRows {
                a: Arg::of(a),
                argmax,
            },
        ))
    }

    pub fn sum_all(&mut self, a: &Tensor) -> Tensor {
        let s: f64 = a.values().iter().sum();
        self.push(1, 1, vec![s], Step::SumAll { a: Arg::of(a) })
    }

    /// Per-row cosine distance `1 - cos(a_v, b_v)` with norm clamping.
    ///
    /// Rows where either norm falls below `eps` produce value 0 and a `false`
    /// entry in the returned validity mask; no gradient flows through them.
    pub fn rowwise_cosine_distance(
        &mut self,
        a: &Tensor,
        b: &Tensor,
        eps: f64,
    ) -> Result<(Tensor, Arc<Vec<bool>>)> {
        Self::same_shape("rowwise_cosine_distance", a, b)?;
        assert!(eps > 0.0, "cosine eps must be positive");
        let (n, d) = a.shape();
        let mut out = vec![0.0; n];
        let mut valid = vec![false; n];
        for r in 0..n {
            let ra = &a.values()[r * d..(r + 1) * d];
            let rb = &b.values()[r * d..(r + 1) * d];
            let na = ra.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = rb.iter().map(|v| v * v).sum::<f64>().sqrt();
            if na < eps || nb < eps {
                continue;
            }
            let dot: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
            out[r] = 1.0 - dot / (na * nb);
            valid[r] = true;
        }
        let valid = Arc::new(valid);
        let t = self.push(
            n,
            1,
            out,
            Step::RowCosineDist {
                a: Arg::of(a),
                b: Arg::of(b),
                valid: Arc::clone(&valid),
            },
        );
        Ok((t, valid))
    }

    pub fn softmax_rows(&mut self, a: &Tensor) -> Tensor {
        let (n, d) = a.shape();
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            softmax_row(a.row(r), &mut out[r * d..(r + 1) * d]);
        }
        self.push(n, d, out, Step::SoftmaxRows { a: Arg::of(a) })
    }

    /// Mean over masked rows of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: &Tensor,
        labels: &Arc<Vec<usize>>,
        mask: &Arc<Vec<bool>>,
    ) -> Result<Tensor> {
        let (n, c) = logits.shape();
        if labels.len() != n || mask.len() != n {
            return Err(Error::dim(
                "softmax_cross_entropy",
                format!("{n} rows but {} labels / {} mask bits", labels.len(), mask.len()),
            ));
        }
        let n_masked = mask.iter().filter(|m| **m).count();
        if n_masked == 0 {
            return Err(Error::Config("cross entropy over an empty mask".into()));
        }
        let mut total = 0.0;
        for r in 0..n {
            if !mask[r] {
                continue;
            }
            let label = labels[r];
            if label >= c {
                return Err(Error::Config(format!(
                    "label {label} out of range for {c} classes (row {r})"
                )));
            }
            let row = logits.row(r);
            total += lse(row) - row[label];
        }
        let loss = total / n_masked as f64;
        Ok(self.push(
            1,
            1,
            vec![loss],
            Step::SoftmaxCrossEntropy {
                logits: Arg::of(logits),
                labels: Arc::clone(labels),
                mask: Arc::clone(mask),
                n_masked,
            },
        ))
    }

    /// Mean over masked rows of `KL(target_probs || softmax(online))`.
    ///
    /// `target_probs` holds fixed per-row distributions (usually the output
    /// of `softmax_rows` applied to a stop-gradient node). Gradient flows to
    /// both operands; blocking the target side is the stop-gradient's job.
    pub fn kl_to_fixed_rows(
        &mut self,
        online: &Tensor,
        target_probs: &Tensor,
        mask: &Arc<Vec<bool>>,
    ) -> Result<Tensor> {
        Self::same_shape("kl_to_fixed_rows", online, target_probs)?;
        let (n, c) = online.shape();
        if mask.len() != n {
            return Err(Error::dim(
                "kl_to_fixed_rows",
                format!("{n} rows but {} mask bits", mask.len()),
            ));
        }
        let n_masked = mask.iter().filter(|m| **m).count();
        if n_masked == 0 {
            return Err(Error::Config("KL over an empty mask".into()));
        }
        let mut total = 0.0;
        for r in 0..n {
            if !mask[r] {
                continue;
            }
            let q = online.row(r);
            let p = target_probs.row(r);
            let z = lse(q);
            for j in 0..c {
                if p[j] > 0.0 {
                    total += p[j] * (p[j].ln() - (q[j] - z));
                }
            }
        }
        let loss = total / n_masked as f64;
        Ok(self.push(
            1,
            1,
            vec![loss],
            Step::KlFixedRows {
                online: Arg::of(online),
                target: Arg::of(target_probs),
                mask: Arc::clone(mask),
                n_masked,
            },
        ))
    }

    /// Single-head attention aggregation: for each node `i`, softmax over its
    /// neighborhood of `leaky_relu(s_src[i] + s_dst[j])`, then the weighted
    /// sum of `z_j`. The neighborhood pattern comes from `neigh` (values
    /// ignored); callers add self-loops beforehand.
    pub fn gat_attention(
        &mut self,
        z: &Tensor,
        s_src: &Tensor,
        s_dst: &Tensor,
        neigh: &Arc<SparseMatrix>,
        slope: f64,
    ) -> Result<Tensor> {
        let (n, d) = z.shape();
        if neigh.rows() != n || neigh.cols() != n || s_src.shape() != (n, 1) || s_dst.shape() != (n, 1) {
            return Err(Error::dim(
                "gat_attention",
                format!(
                    "z {}x{}, scores {}x{}/{}x{}, neighborhood {}x{}",
                    n,
                    d,
                    s_src.rows(),
                    s_src.cols(),
                    s_dst.rows(),
                    s_dst.cols(),
                    neigh.rows(),
                    neigh.cols()
                ),
            ));
        }
        let mut attn = vec![0.0; neigh.nnz()];
        let mut out = vec![0.0; n * d];
        let mut offset = 0;
        for i in 0..n {
            let (cols, _) = neigh.row(i);
            let deg = cols.len();
            if deg == 0 {
                continue;
            }
            let scores: Vec<f64> = cols
                .iter()
                .map(|&j| {
                    let e = s_src.values()[i] + s_dst.values()[j];
                    if e > 0.0 {
                        e
                    } else {
                        slope * e
                    }
                })
                .collect();
            let alpha = &mut attn[offset..offset + deg];
            softmax_row(&scores, alpha);
            let dst = &mut out[i * d..(i + 1) * d];
            for (&j, &a) in cols.iter().zip(alpha.iter()) {
                let src = &z.values()[j * d..(j + 1) * d];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += a * s;
                }
            }
            offset += deg;
        }
        Ok(self.push(
            n,
            d,
            out,
            Step::GatAttention {
                z: Arg::of(z),
                s_src: Arg::of(s_src),
                s_dst: Arg::of(s_dst),
                neigh: Arc::clone(neigh),
                slope,
                attn,
            },
        ))
    }

    /// Reverse sweep from a scalar loss. Returns adjoints for every node;
    /// leaves hold the gradients callers care about.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        let root = loss
            .node()
            .ok_or_else(|| Error::Config("backward on a tensor not recorded on this tape".into()))?;
        if !loss.is_scalar() {
            return Err(Error::dim(
                "backward",
                format!("loss must be 1x1, got {}x{}", loss.rows(), loss.cols()),
            ));
        }
        let n = self.nodes.len();
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; n];
        adj[root] = Some(vec![1.0]);
        let mut blocked = Vec::new();

        for id in (0..n).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            self.apply_backward(id, node, &g, &mut adj, &mut blocked);
            adj[id] = Some(g);
        }

        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| (n.rows, n.cols)).collect(),
            adj,
            blocked,
        })
    }

    fn apply_backward(
        &self,
        id: NodeId,
        node: &Node,
        g: &[f64],
        adj: &mut [Option<Vec<f64>>],
        blocked: &mut Vec<(NodeId, NodeId, f64)>,
    ) {
        fn accum(adj: &mut [Option<Vec<f64>>], arg: &Arg, contribution: &[f64]) {
            if let Some(target) = arg.node {
                let buf = adj[target].get_or_insert_with(|| vec![0.0; contribution.len()]);
                for (b, c) in buf.iter_mut().zip(contribution) {
                    *b += c;
                }
            }
        }
        fn wants(arg: &Arg) -> bool {
            arg.node.is_some()
        }

        match &node.step {
            Step::Leaf => {}
            Step::StopGradient { input } => {
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                blocked.push((id, *input, norm));
            }
            Step::Matmul { a, b } => {
                let (m, k, n) = (a.rows, a.cols, b.cols);
                if wants(a) {
                    // dA = G * B^T
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, 1.0, g, false, &b.data, true, 0.0, &mut da);
                    accum(adj, a, &da);
                }
                if wants(b) {
                    // dB = A^T * G
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, 1.0, &a.data, true, g, false, 0.0, &mut db);
                    accum(adj, b, &db);
                }
            }
            Step::Spmm { a, b } => {
                if wants(b) {
                    let d = b.cols;
                    let mut db = vec![0.0; b.rows * d];
                    a.mul_dense_transposed_into(g, d, &mut db);
                    accum(adj, b, &db);
                }
            }
            Step::Add { a, b } => {
                accum(adj, a, g);
                accum(adj, b, g);
            }
            Step::AddBias { a, bias } => {
                accum(adj, a, g);
                if wants(bias) {
                    let d = bias.cols;
                    let mut db = vec![0.0; d];
                    for r in 0..a.rows {
                        for c in 0..d {
                            db[c] += g[r * d + c];
                        }
                    }
                    accum(adj, bias, &db);
                }
            }
            Step::Sub { a, b } => {
                accum(adj, a, g);
                if wants(b) {
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    accum(adj, b, &neg);
                }
            }
            Step::Mul { a, b } => {
                if wants(a) {
                    let da: Vec<f64> = g.iter().zip(b.data.iter()).map(|(g, y)| g * y).collect();
                    accum(adj, a, &da);
                }
                if wants(b) {
                    let db: Vec<f64> = g.iter().zip(a.data.iter()).map(|(g, x)| g * x).collect();
                    accum(adj, b, &db);
                }
            }
            Step::Scale { a, factor } => {
                if wants(a) {
                    let da: Vec<f64> = g.iter().map(|v| v * factor).collect();
                    accum(adj, a, &da);
                }
            }
            Step::Relu { a } => {
                if wants(a) {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(a.data.iter())
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect();
                    accum(adj, a, &da);
                }
            }
            Step::LeakyRelu { a, slope } => {
                if wants(a) {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(a.data.iter())
                        .map(|(g, &x)| if x > 0.0 { *g } else { g * slope })
                        .collect();
                    accum(adj, a, &da);
                }
            }
            Step::Elu { a, alpha } => {
                if wants(a) {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(a.data.iter())
                        .map(|(g, &x)| if x > 0.0 { *g } else { g * alpha * x.exp() })
                        .collect();
                    accum(adj, a, &da);
                }
            }
            Step::Dropout { a, scaled_mask } => {
                if wants(a) {
                    let da: Vec<f64> = g.iter().zip(scaled_mask).map(|(g, m)| g * m).collect();
                    accum(adj, a, &da);
                }
            }
            Step::ConcatCols { parts } => {
                let total = node.cols;
                let mut base = 0;
                for p in parts {
                    if wants(p) {
                        let d = p.cols;
                        let mut dp = vec![0.0; p.rows * d];
                        for r in 0..p.rows {
                            dp[r * d..(r + 1) * d]
                                .copy_from_slice(&g[r * total + base..r * total + base + d]);
                        }
                        accum(adj, p, &dp);
                    }
                    base += p.cols;
                }
            }
            Step::MeanRows { a } => {
                if wants(a) {
                    let (n, d) = (a.rows, a.cols);
                    let mut da = vec![0.0; n * d];
                    for r in 0..n {
                        for c in 0..d {
                            da[r * d + c] = g[c] / n as f64;
                        }
                    }
                    accum(adj, a, &da);
                }
            }
            Step::SumRows { a } => {
                if wants(a) {
                    let (n, d) = (a.rows, a.cols);
                    let mut da = vec![0.0; n * d];
                    for r in 0..n {
                        da[r * d..(r + 1) * d].copy_from_slice(g);
                    }
                    accum(adj, a, &da);
                }
            }
            Step::MaxRows { a, argmax } => {
                if wants(a) {
                    let d = a.cols;
                    let mut da = vec![0.0; a.rows * d];
                    for (c, &r) in argmax.iter().enumerate() {
                        da[r * d + c] = g[c];
                    }
                    accum(adj, a, &da);
                }
            }
            Step::SumAll { a } => {
                if wants(a) {
                    let da = vec![g[0]; a.rows * a.cols];
                    accum(adj, a, &da);
                }
            }
            Step::RowCosineDist { a, b, valid } => {
                let (n, d) = (a.rows, a.cols);
                let mut da = vec![0.0; n * d];
                let mut db = vec![0.0; n * d];
                for r in 0..n {
                    if !valid[r] || g[r] == 0.0 {
                        continue;
                    }
                    let ra = &a.data[r * d..(r + 1) * d];
                    let rb = &b.data[r * d..(r + 1) * d];
                    let na = ra.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let nb = rb.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let dot: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
                    let inv = 1.0 / (na * nb);
                    for j in 0..d {
                        da[r * d + j] = g[r] * (dot * ra[j] / (na * na) - rb[j]) * inv;
                        db[r * d + j] = g[r] * (dot * rb[j] / (nb * nb) - ra[j]) * inv;
                    }
                }
                if wants(a) {
                    accum(adj, a, &da);
                }
                if wants(b) {
                    accum(adj, b, &db);
                }
            }
            Step::SoftmaxRows { a } => {
                if wants(a) {
                    let (n, d) = (a.rows, a.cols);
                    let out = &node.data;
                    let mut da = vec![0.0; n * d];
                    for r in 0..n {
                        let s = &out[r * d..(r + 1) * d];
                        let gr = &g[r * d..(r + 1) * d];
                        let dot: f64 = s.iter().zip(gr).map(|(x, y)| x * y).sum();
                        for j in 0..d {
                            da[r * d + j] = s[j] * (gr[j] - dot);
                        }
                    }
                    accum(adj, a, &da);
                }
            }
            Step::SoftmaxCrossEntropy {
                logits,
                labels,
                mask,
                n_masked,
            } => {
                if wants(logits) {
                    let (n, c) = (logits.rows, logits.cols);
                    let scale = g[0] / *n_masked as f64;
                    let mut dl = vec![0.0; n * c];
                    let mut probs = vec![0.0; c];
                    for r in 0..n {
                        if !mask[r] {
                            continue;
                        }
                        softmax_row(&logits.data[r * c..(r + 1) * c], &mut probs);
                        for j in 0..c {
                            let onehot = if j == labels[r] { 1.0 } else { 0.0 };
                            dl[r * c + j] = scale * (probs[j] - onehot);
                        }
                    }
                    accum(adj, logits, &dl);
                }
            }
            Step::KlFixedRows {
                online,
                target,
                mask,
                n_masked,
            } => {
                let (n, c) = (online.rows, online.cols);
                let scale = g[0] / *n_masked as f64;
                let mut dq = vec![0.0; n * c];
                let mut dp = vec![0.0; n * c];
                let mut probs = vec![0.0; c];
                for r in 0..n {
                    if !mask[r] {
                        continue;
                    }
                    let qrow = &online.data[r * c..(r + 1) * c];
                    let prow = &target.data[r * c..(r + 1) * c];
                    softmax_row(qrow, &mut probs);
                    let z = lse(qrow);
                    for j in 0..c {
                        dq[r * c + j] = scale * (probs[j] - prow[j]);
                        if prow[j] > 0.0 {
                            dp[r * c + j] = scale * (prow[j].ln() + 1.0 - (qrow[j] - z));
                        }
                    }
                }
                if wants(online) {
                    accum(adj, online, &dq);
                }
                if wants(target) {
                    accum(adj, target, &dp);
                }
            }
            Step::GatAttention {
                z,
                s_src,
                s_dst,
                neigh,
                slope,
                attn,
            } => {
                let (n, d) = (z.rows, z.cols);
                let mut dz = vec![0.0; n * d];
                let mut dsrc = vec![0.0; n];
                let mut ddst = vec![0.0; n];
                let mut offset = 0;
                for i in 0..n {
                    let (cols, _) = neigh.row(i);
                    let deg = cols.len();
                    if deg == 0 {
                        continue;
                    }
                    let alpha = &attn[offset..offset + deg];
                    let gi = &g[i * d..(i + 1) * d];
                    // d alpha_ij = g_i . z_j ; softmax backward per row.
                    let dalpha: Vec<f64> = cols
                        .iter()
                        .map(|&j| {
                            let zj = &z.data[j * d..(j + 1) * d];
                            gi.iter().zip(zj).map(|(x, y)| x * y).sum()
                        })
                        .collect();
                    let dot: f64 = alpha.iter().zip(&dalpha).map(|(a, da)| a * da).sum();
                    for (idx, &j) in cols.iter().enumerate() {
                        let a = alpha[idx];
                        // dz_j += alpha * g_i
                        let dzj = &mut dz[j * d..(j + 1) * d];
                        for (o, gv) in dzj.iter_mut().zip(gi) {
                            *o += a * gv;
                        }
                        let de_pre = a * (dalpha[idx] - dot);
                        let e = s_src.data[i] + s_dst.data[j];
                        let de = if e > 0.0 { de_pre } else { de_pre * slope };
                        dsrc[i] += de;
                        ddst[j] += de;
                    }
                    offset += deg;
                }
                if wants(z) {
                    accum(adj, z, &dz);
                }
                if wants(s_src) {
                    accum(adj, s_src, &dsrc);
                }
                if wants(s_dst) {
                    accum(adj, s_dst, &ddst);
                }
            }
        }
    }
}
