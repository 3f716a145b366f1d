//! GNN layer stacks: GCN, mean-aggregating GraphSage and GAT forwards, plus
//! readout operators and the prediction heads (a linear classifier on the
//! final hidden states and a shared 2-layer MLP that produces intermediate
//! logits from every hidden layer).

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::{SparseMatrix, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Gcn,
    Sage,
    Gat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Elu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadoutKind {
    Mean,
    Sum,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Node,
    Graph,
}

fn default_heads() -> usize {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub n_layers: usize,
    pub hidden_dim: usize,
    /// Attention heads; only meaningful for the GAT backbone.
    #[serde(default = "default_heads")]
    pub n_heads: usize,
    #[serde(default)]
    pub dropout: f64,
    /// Defaults to ReLU for GCN/GraphSage and ELU for GAT.
    #[serde(default)]
    pub activation: Option<Activation>,
    #[serde(default = "ModelConfig::default_readout")]
    pub readout: ReadoutKind,
}

impl ModelConfig {
    fn default_readout() -> ReadoutKind {
        ReadoutKind::Mean
    }

    pub fn activation(&self) -> Activation {
        self.activation.unwrap_or(match self.backbone {
            Backbone::Gat => Activation::Elu,
            _ => Activation::Relu,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers < 1 {
            return Err(Error::Config("n_layers must be at least 1".into()));
        }
        if self.hidden_dim < 1 {
            return Err(Error::Config("hidden_dim must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0,1)", self.dropout)));
        }
        if self.backbone == Backbone::Gat {
            if self.n_heads == 0 {
                return Err(Error::Config("GAT needs at least one head".into()));
            }
            if self.hidden_dim % self.n_heads != 0 {
                return Err(Error::Config(format!(
                    "hidden_dim {} not divisible by {} heads",
                    self.hidden_dim, self.n_heads
                )));
            }
        }
        Ok(())
    }
}

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug)]
pub struct GatHead {
    pub w: Tensor,
    pub a_src: Tensor,
    pub a_dst: Tensor,
}

#[derive(Clone, Debug)]
pub enum LayerParams {
    Gcn { w: Tensor, b: Tensor },
    Sage { w_self: Tensor, w_neigh: Tensor, b: Tensor },
    Gat { heads: Vec<GatHead> },
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

/// Shared-weights 2-layer MLP head for intermediate logits.
#[derive(Clone, Debug)]
pub struct MlpHead {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// All learnable state of a model.
#[derive(Clone, Debug)]
pub struct LayerStack {
    pub config: ModelConfig,
    pub in_dim: usize,
    pub n_classes: usize,
    pub layers: Vec<LayerParams>,
    pub head: MlpHead,
    pub classifier: Linear,
    /// Optional linear map applied to online-side embeddings before the
    /// discrepancy computation; starts as identity.
    pub transform: Option<Tensor>,
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect(),
    )
}

impl LayerStack {
    pub fn new(
        config: ModelConfig,
        in_dim: usize,
        n_classes: usize,
        with_transform: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<LayerStack> {
        config.validate()?;
        if in_dim == 0 || n_classes == 0 {
            return Err(Error::Config(format!(
                "degenerate model: in_dim={in_dim}, n_classes={n_classes}"
            )));
        }
        let h = config.hidden_dim;
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let d_in = if l == 0 { in_dim } else { h };
            let layer = match config.backbone {
                Backbone::Gcn => LayerParams::Gcn {
                    w: glorot(d_in, h, rng),
                    b: Tensor::zeros(1, h),
                },
                Backbone::Sage => LayerParams::Sage {
                    w_self: glorot(d_in, h, rng),
                    w_neigh: glorot(d_in, h, rng),
                    b: Tensor::zeros(1, h),
                },
                Backbone::Gat => {
                    let last = l + 1 == config.n_layers;
                    // Hidden layers concatenate h/H-wide heads; the last layer
                    // averages full-width heads.
                    let dh = if last { h } else { h / config.n_heads };
                    let heads = (0..config.n_heads)
                        .map(|_| GatHead {
                            w: glorot(d_in, dh, rng),
                            a_src: glorot(dh, 1, rng),
                            a_dst: glorot(dh, 1, rng),
                        })
                        .collect();
                    LayerParams::Gat { heads }
                }
            };
            layers.push(layer);
        }
        let head = MlpHead {
            w1: glorot(h, h, rng),
            b1: Tensor::zeros(1, h),
            w2: glorot(h, n_classes, rng),
            b2: Tensor::zeros(1, n_classes),
        };
        let classifier = Linear {
            w: glorot(h, n_classes, rng),
            b: Tensor::zeros(1, n_classes),
        };
        let transform = with_transform.then(|| Tensor::identity(h));
        Ok(LayerStack {
            config,
            in_dim,
            n_classes,
            layers,
            head,
            classifier,
            transform,
        })
    }

    /// Learnable tensors in a stable order (used by the optimizer and the
    /// checkpoint format).
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerParams::Gcn { w, b } => {
                    out.push((format!("layer{l}.w"), w));
                    out.push((format!("layer{l}.b"), b));
                }
                LayerParams::Sage { w_self, w_neigh, b } => {
                    out.push((format!("layer{l}.w_self"), w_self));
                    out.push((format!("layer{l}.w_neigh"), w_neigh));
                    out.push((format!("layer{l}.b"), b));
                }
                LayerParams::Gat { heads } => {
                    for (k, head) in heads.iter().enumerate() {
                        out.push((format!("layer{l}.head{k}.w"), &head.w));
                        out.push((format!("layer{l}.head{k}.a_src"), &head.a_src));
                        out.push((format!("layer{l}.head{k}.a_dst"), &head.a_dst));
                    }
                }
            }
        }
        out.push(("head.w1".into(), &self.head.w1));
        out.push(("head.b1".into(), &self.head.b1));
        out.push(("head.w2".into(), &self.head.w2));
        out.push(("head.b2".into(), &self.head.b2));
        out.push(("classifier.w".into(), &self.classifier.w));
        out.push(("classifier.b".into(), &self.classifier.b));
        if let Some(t) = &self.transform {
            out.push(("transform".into(), t));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for layer in self.layers.iter_mut() {
            match layer {
                LayerParams::Gcn { w, b } => {
                    out.push(w);
                    out.push(b);
                }
                LayerParams::Sage { w_self, w_neigh, b } => {
                    out.push(w_self);
                    out.push(w_neigh);
                    out.push(b);
                }
                LayerParams::Gat { heads } => {
                    for head in heads.iter_mut() {
                        out.push(&mut head.w);
                        out.push(&mut head.a_src);
                        out.push(&mut head.a_dst);
                    }
                }
            }
        }
        out.push(&mut self.head.w1);
        out.push(&mut self.head.b1);
        out.push(&mut self.head.w2);
        out.push(&mut self.head.b2);
        out.push(&mut self.classifier.w);
        out.push(&mut self.classifier.b);
        if let Some(t) = &mut self.transform {
            out.push(t);
        }
        out
    }

    /// Assemble a bound stack from already-watched tensors in
    /// [`LayerStack::params`] order (the finite-difference oracle drives
    /// this directly).
    pub fn bound_with(&self, watched: Vec<Tensor>) -> Result<BoundStack> {
        let expected = self.params().len();
        if watched.len() != expected {
            return Err(Error::Config(format!(
                "{} watched tensors for {} parameters",
                watched.len(),
                expected
            )));
        }
        let flat = watched.clone();
        let mut it = watched.into_iter();
        let mut next = || it.next().expect("length checked above");
        let layers = self
            .layers
            .iter()
            .map(|layer| match layer {
                LayerParams::Gcn { .. } => LayerParams::Gcn {
                    w: next(),
                    b: next(),
                },
                LayerParams::Sage { .. } => LayerParams::Sage {
                    w_self: next(),
                    w_neigh: next(),
                    b: next(),
                },
                LayerParams::Gat { heads } => LayerParams::Gat {
                    heads: heads
                        .iter()
                        .map(|_| GatHead {
                            w: next(),
                            a_src: next(),
                            a_dst: next(),
                        })
                        .collect(),
                },
            })
            .collect();
        let head = MlpHead {
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
        };
        let classifier = Linear {
            w: next(),
            b: next(),
        };
        let transform = self.transform.as_ref().map(|_| next());
        Ok(BoundStack {
            config: self.config.clone(),
            layers,
            head,
            classifier,
            transform,
            flat_params: flat,
        })
    }

    /// Watch every parameter on a tape; the bound stack runs forwards and the
    /// parallel tensor list maps gradients back to [`LayerStack::params_mut`]
    /// order.
    pub fn bind(&self, tape: &mut Tape) -> BoundStack {
        let mut flat = Vec::new();
        let mut watch = |t: &Tensor, flat: &mut Vec<Tensor>| {
            let w = tape.watch(t);
            flat.push(w.clone());
            w
        };
        let layers = self
            .layers
            .iter()
            .map(|layer| match layer {
                LayerParams::Gcn { w, b } => LayerParams::Gcn {
                    w: watch(w, &mut flat),
                    b: watch(b, &mut flat),
                },
                LayerParams::Sage { w_self, w_neigh, b } => LayerParams::Sage {
                    w_self: watch(w_self, &mut flat),
                    w_neigh: watch(w_neigh, &mut flat),
                    b: watch(b, &mut flat),
                },
                LayerParams::Gat { heads } => LayerParams::Gat {
                    heads: heads
                        .iter()
                        .map(|h| GatHead {
                            w: watch(&h.w, &mut flat),
                            a_src: watch(&h.a_src, &mut flat),
                            a_dst: watch(&h.a_dst, &mut flat),
                        })
                        .collect(),
                },
            })
            .collect();
        let head = MlpHead {
            w1: watch(&self.head.w1, &mut flat),
            b1: watch(&self.head.b1, &mut flat),
            w2: watch(&self.head.w2, &mut flat),
            b2: watch(&self.head.b2, &mut flat),
        };
        let classifier = Linear {
            w: watch(&self.classifier.w, &mut flat),
            b: watch(&self.classifier.b, &mut flat),
        };
        let transform = self.transform.as_ref().map(|t| watch(t, &mut flat));
        BoundStack {
            config: self.config.clone(),
            layers,
            head,
            classifier,
            transform,
            flat_params: flat,
        }
    }
}

/// Parameters of one model watched on one tape.
pub struct BoundStack {
    pub config: ModelConfig,
    pub layers: Vec<LayerParams>,
    pub head: MlpHead,
    pub classifier: Linear,
    pub transform: Option<Tensor>,
    pub flat_params: Vec<Tensor>,
}

pub enum ForwardMode<'r> {
    Train { rng: &'r mut ChaCha8Rng },
    Eval,
}

/// Hidden states and predictions from one forward pass.
pub struct ForwardOutput {
    /// X^(0) .. X^(L): raw features followed by each layer's post-activation
    /// output, exactly `n_layers + 1` tensors.
    pub hidden: Vec<Tensor>,
    /// Final logits: per node for node tasks, 1 x C for graph tasks.
    pub logits: Tensor,
    /// Logits from the shared head on layers 1..L-1 (empty when L == 1).
    pub intermediate: Vec<Tensor>,
    /// Graph embeddings G^(1)..G^(L), populated when requested or on graph
    /// tasks.
    pub readouts: Vec<Tensor>,
}

fn apply_activation(tape: &mut Tape, x: &Tensor, act: Activation) -> Tensor {
    match act {
        Activation::Relu => tape.relu(x),
        Activation::LeakyRelu => tape.leaky_relu(x, LEAKY_SLOPE),
        Activation::Elu => tape.elu(x, 1.0),
    }
}

/// Permutation-invariant aggregation of node embeddings into a 1 x d row.
pub fn readout(tape: &mut Tape, x: &Tensor, kind: ReadoutKind) -> Result<Tensor> {
    if x.rows() == 0 {
        return Err(Error::Config("readout of an empty graph".into()));
    }
    match kind {
        ReadoutKind::Mean => tape.mean_rows(x),
        ReadoutKind::Sum => tape.sum_rows(x),
        ReadoutKind::Max => tape.max_rows(x),
    }
}

/// Logits from the shared 2-layer head: per node for node tasks, from the
/// readout vector for graph tasks.
pub fn intermediate_logits(
    tape: &mut Tape,
    x_l: &Tensor,
    head: &MlpHead,
    readout_kind: ReadoutKind,
    task: Task,
) -> Result<Tensor> {
    if x_l.cols() != head.w1.rows() {
        return Err(Error::Config(format!(
            "shared head expects width {}, layer provides {}; equal hidden \
             dims are required when intermediate logits are in play",
            head.w1.rows(),
            x_l.cols()
        )));
    }
    let input = match task {
        Task::Node => x_l.clone(),
        Task::Graph => readout(tape, x_l, readout_kind)?,
    };
    let h = tape.matmul(&input, &head.w1)?;
    let h = tape.add_bias(&h, &head.b1)?;
    let h = tape.relu(&h);
    let out = tape.matmul(&h, &head.w2)?;
    tape.add_bias(&out, &head.b2)
}

impl BoundStack {
    /// Run the stack over a graph, capturing every hidden state.
    pub fn forward(
        &self,
        tape: &mut Tape,
        g: &Graph,
        task: Task,
        mut mode: ForwardMode,
        want_readouts: bool,
    ) -> Result<ForwardOutput> {
        let n_layers = self.layers.len();
        let act = self.config.activation();
        let dropout = self.config.dropout;

        // Propagation structures are cheap relative to the dense math and
        // depend on the (possibly edge-dropped) graph of this pass.
        let prop: Arc<SparseMatrix> = match self.config.backbone {
            Backbone::Gcn => Arc::new(g.gcn_norm_adjacency()),
            Backbone::Sage => Arc::new(g.row_norm_adjacency()),
            Backbone::Gat => Arc::new(g.adjacency_with_self_loops()),
        };

        let mut hidden: Vec<Tensor> = Vec::with_capacity(n_layers + 1);
        hidden.push(g.features().clone());
        let mut x = g.features().clone();
        for (l, layer) in self.layers.iter().enumerate() {
            // The layer input: either the (dropout-masked) previous hidden
            // state, or a sparse view of the raw features for the first
            // layer of bag-of-words-style graphs. Sparse dropout masks only
            // stored nonzeros, which is the same distribution.
            let mut sparse_input: Option<Arc<SparseMatrix>> = None;
            if l == 0 {
                if let Some(fs) = g.features_sparse() {
                    sparse_input = Some(match &mut mode {
                        ForwardMode::Train { rng } if dropout > 0.0 => {
                            Arc::new(fs.dropout(dropout, rng))
                        }
                        _ => Arc::clone(fs),
                    });
                }
            }
            if sparse_input.is_none() {
                if let ForwardMode::Train { rng } = &mut mode {
                    if dropout > 0.0 {
                        x = tape.dropout(&x, dropout, rng);
                    }
                }
            }
            let project = |tape: &mut Tape, w: &Tensor| -> Result<Tensor> {
                match &sparse_input {
                    Some(s) => tape.spmm(s, w),
                    None => tape.matmul(&x, w),
                }
            };
            let last = l + 1 == n_layers;
            let out = match layer {
                LayerParams::Gcn { w, b } => {
                    let xw = project(tape, w)?;
                    let agg = tape.spmm(&prop, &xw)?;
                    let pre = tape.add_bias(&agg, b)?;
                    apply_activation(tape, &pre, act)
                }
                LayerParams::Sage { w_self, w_neigh, b } => {
                    let own = project(tape, w_self)?;
                    let xw = project(tape, w_neigh)?;
                    let agg = tape.spmm(&prop, &xw)?;
                    let sum = tape.add(&own, &agg)?;
                    let pre = tape.add_bias(&sum, b)?;
                    apply_activation(tape, &pre, act)
                }
                LayerParams::Gat { heads } => {
                    let mut outs = Vec::with_capacity(heads.len());
                    for head in heads {
                        let z = project(tape, &head.w)?;
                        let s_src = tape.matmul(&z, &head.a_src)?;
                        let s_dst = tape.matmul(&z, &head.a_dst)?;
                        outs.push(tape.gat_attention(&z, &s_src, &s_dst, &prop, LEAKY_SLOPE)?);
                    }
                    if last {
                        // Average full-width heads, no activation.
                        let mut acc = outs[0].clone();
                        for o in &outs[1..] {
                            acc = tape.add(&acc, o)?;
                        }
                        tape.scale(&acc, 1.0 / outs.len() as f64)
                    } else {
                        let refs: Vec<&Tensor> = outs.iter().collect();
                        let cat = tape.concat_cols(&refs)?;
                        apply_activation(tape, &cat, act)
                    }
                }
            };
            x = out;
            hidden.push(x.clone());
        }

        let need_readouts = want_readouts || task == Task::Graph;
        let mut readouts = Vec::new();
        if need_readouts {
            for x_l in hidden.iter().skip(1) {
                readouts.push(readout(tape, x_l, self.config.readout)?);
            }
        }

        let class_in = match task {
            Task::Node => hidden[n_layers].clone(),
            Task::Graph => readouts[n_layers - 1].clone(),
        };
        let logits = tape.matmul(&class_in, &self.classifier.w)?;
        let logits = tape.add_bias(&logits, &self.classifier.b)?;

        let mut intermediate = Vec::new();
        for x_l in hidden.iter().take(n_layers).skip(1) {
            intermediate.push(intermediate_logits(
                tape,
                x_l,
                &self.head,
                self.config.readout,
                task,
            )?);
        }

        Ok(ForwardOutput {
            hidden,
            logits,
            intermediate,
            readouts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Masks;
    use rand::SeedableRng;

    fn config(backbone: Backbone, n_layers: usize, hidden: usize) -> ModelConfig {
        ModelConfig {
            backbone,
            n_layers,
            hidden_dim: hidden,
            n_heads: 2,
            dropout: 0.0,
            activation: None,
            readout: ReadoutKind::Mean,
        }
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn graph(n: usize, edges: &[(usize, usize)], d: usize, seed: u64) -> Graph {
        use rand::Rng;
        let mut r = rng(seed);
        let feats = Tensor::from_vec(n, d, (0..n * d).map(|_| r.gen_range(-1.0..1.0)).collect());
        Graph::new(n, edges, feats, vec![0; n], Masks::empty(n)).unwrap()
    }

    #[test]
    fn gcn_single_isolated_node_uses_self_loop_only() {
        let g = graph(1, &[], 3, 1);
        let stack = LayerStack::new(config(Backbone::Gcn, 1, 4), 3, 2, false, &mut rng(2)).unwrap();
        let mut tape = Tape::new();
        let bound = stack.bind(&mut tape);
        let out = bound.forward(&mut tape, &g, Task::Node, ForwardMode::Eval, false).unwrap();
        // sigma(X W): self-loop normalization is 1 for an isolated node.
        let mut expect = vec![0.0; 4];
        if let LayerParams::Gcn { w, .. } = &stack.layers[0] {
            for c in 0..4 {
                for k in 0..3 {
                    expect[c] += g.features().get(0, k) * w.get(k, c);
                }
                expect[c] = expect[c].max(0.0);
            }
        }
        for c in 0..4 {
            assert!((out.hidden[1].get(0, c) - expect[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn gcn_matches_densified_normalized_adjacency_oracle() {
        let g = graph(4, &[(0, 1), (1, 2), (2, 3)], 3, 3);
        let stack = LayerStack::new(config(Backbone::Gcn, 1, 5), 3, 2, false, &mut rng(4)).unwrap();
        let mut tape = Tape::new();
        let bound = stack.bind(&mut tape);
        let out = bound.forward(&mut tape, &g, Task::Node, ForwardMode::Eval, false).unwrap();

        // Dense hand computation of relu(D^-1/2 (A+I) D^-1/2 X W + b).
        let p = g.gcn_norm_adjacency().to_dense();
        let (w, b) = match &stack.layers[0] {
            LayerParams::Gcn { w, b } => (w, b),
            _ => unreachable!(),
        };
        for i in 0..4 {
            for c in 0..5 {
                let mut agg = 0.0;
                for j in 0..4 {
                    let mut xw = 0.0;
                    for k in 0..3 {
                        xw += g.features().get(j, k) * w.get(k, c);
                    }
                    agg += p.get(i, j) * xw;
                }
                let expect = (agg + b.get(0, c)).max(0.0);
                assert!((out.hidden[1].get(i, c) - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gcn_isolated_components_are_independent() {
        // Two components; changing one component's features must not change
        // the other's outputs.
        let edges = [(0, 1), (2, 3)];
        let g1 = graph(4, &edges, 3, 5);
        let mut feats = g1.features().values().to_vec();
        for v in feats.iter_mut().skip(2 * 3) {
            *v += 1.0; // perturb nodes 2,3 only
        }
        let g2 = Graph::new(
            4,
            &edges,
            Tensor::from_vec(4, 3, feats),
            vec![0; 4],
            Masks::empty(4),
        )
        .unwrap();
        let stack = LayerStack::new(config(Backbone::Gcn, 2, 4), 3, 2, false, &mut rng(6)).unwrap();
        let mut t1 = Tape::new();
        let o1 = stack.bind(&mut t1).forward(&mut t1, &g1, Task::Node, ForwardMode::Eval, false).unwrap();
        let mut t2 = Tape::new();
        let o2 = stack.bind(&mut t2).forward(&mut t2, &g2, Task::Node, ForwardMode::Eval, false).unwrap();
        for l in 1..=2 {
            for c in 0..4 {
                assert_eq!(o1.hidden[l].get(0, c), o2.hidden[l].get(0, c));
                assert_eq!(o1.hidden[l].get(1, c), o2.hidden[l].get(1, c));
            }
        }
    }

    #[test]
    fn sage_edgeless_graph_is_mlp() {
        let g = graph(3, &[], 3, 7);
        let stack = LayerStack::new(config(Backbone::Sage, 1, 4), 3, 2, false, &mut rng(8)).unwrap();
        let (w_self, b) = match &stack.layers[0] {
            LayerParams::Sage { w_self, b, .. } => (w_self, b),
            _ => unreachable!(),
        };
        let mut tape = Tape::new();
        let bound = stack.bind(&mut tape);
        let out = bound.forward(&mut tape, &g, Task::Node, ForwardMode::Eval, false).unwrap();
        for i in 0..3 {
            for c in 0..4 {
                let mut v = 0.0;
                for k in 0..3 {
                    v += g.features().get(i, k) * w_self.get(k, c);
                }
                let expect = (v + b.get(0, c)).max(0.0);
                assert!((out.hidden[1].get(i, c) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sage_matches_per_node_mean_aggregation_loop() {
        let g = graph(4, &[(0, 1), (0, 2), (2, 3)], 3, 9);
        let stack = LayerStack::new(config(Backbone::Sage, 1, 4), 3, 2, false, &mut rng(10)).unwrap();
        let (w_self, w_neigh, b) = match &stack.layers[0] {
            LayerParams::Sage { w_self, w_neigh, b } => (w_self, w_neigh, b),
            _ => unreachable!(),
        };
        let mut tape = Tape::new();
        let bound = stack.bind(&mut tape);
        let out = bound.forward(&mut tape, &g, Task::Node, ForwardMode::Eval, false).unwrap();
        for i in 0..4 {
            let neigh = g.neighbors(i);
            let mut mean = vec![0.0; 3];
            for &j in neigh {
                for k in 0..3 {
                    mean[k] += g.features().get(j, k) / neigh.len() as f64;
                }
            }
            for c in 0..4 {
                let mut v = b.get(0, c);
                for k in 0..3 {
                    v += g.features().get(i, k) * w_self.get(k, c) + mean[k] * w_neigh.get(k, c);
                }
                let expect = v.max(0.0);
                assert!((out.hidden[1].get(i, c) - expect).abs() < 1e-10, "node {i} col {c}");
            }
        }
    }

    #[test]
    fn gat_three_node_oracle_single_head() {
        // 1 head, 1 layer (so heads average trivially and stay unactivated):
        // hand-rolled softmax-weighted sum as the oracle.
        let g = graph(3, &[(0, 1), (1, 2)], 2, 11);
        let mut cfg = config(Backbone::Gat, 1, 3);
        cfg.n_heads = 1;
        let stack = LayerStack::new(cfg, 2, 2, false, &mut rng(12)).unwrap();
        let head = match &stack.layers[0] {
            LayerParams::Gat { heads } => &heads[0],
            _ => unreachable!(),
        };
        let mut tape = Tape::new();
        let bound = stack.bind(&mut tape);
        let out = bound.forward(&mut tape, &g, Task::Node, ForwardMode::Eval, false).unwrap();

        // z = X W, s = z a
        let mut z = vec![[0.0; 3]; 3];
        for i in 0..3 {
            for c in 0..3 {
                for k in 0..2 {
                    z[i][c] += g.features().get(i, k) * head.w.get(k, c);
                }
            }
        }
        let score = |i: usize, arr: &Tensor| -> f64 {
            (0..3).map(|c| z[i][c] * arr.get(c, 0)).sum()
        };
        for i in 0..3 {
            let mut neigh: Vec<usize> = g.neighbors(i).to_vec();
            neigh.push(i);
            neigh.sort_unstable();
            let raw: Vec<f64> = neigh
                .iter()
                .map(|&j| {
                    let e = score(i, &head.a_src) + score(j, &head.a_dst);
                    if e > 0.0 {
                        e
                    } else {
                        0.2 * e
                    }
                })
                .collect();
            let mx = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = raw.iter().map(|v| (v - mx).exp()).collect();
            let denom: f64 = exps.iter().sum();
            for c in 0..3 {
                let expect: f64 = neigh
                    .iter()
                    .zip(&exps)
                    .map(|(&j, e)| e / denom * z[j][c])
                    .sum();
                assert!((out.hidden[1].get(i, c) - expect).abs() < 1e-10, "node {i} col {c}");
            }
        }
    }

    #[test]
    fn hidden_cache_has_l_plus_one_entries() {
        let g = graph(5, &[(0, 1), (1, 2), (3, 4)], 3, 13);
        for backbone in [Backbone::Gcn, Backbone::Sage, Backbone::Gat] {
            let stack =
                LayerStack::new(config(backbone, 3, 4), 3, 2, false, &mut rng(14)).unwrap();
            let mut tape = Tape::new();
            let bound = stack.bind(&mut tape);
            let out = bound.forward(&mut tape, &g, Task::Node, ForwardMode::Eval, true).unwrap();
            assert_eq!(out.hidden.len(), 4);
            assert_eq!(out.readouts.len(), 3);
            assert_eq!(out.intermediate.len(), 2);
            assert!(out.hidden.iter().all(Tensor::all_finite));
        }
    }

    #[test]
    fn readout_trivial_cases_and_permutation_invariance() {
        let mut tape = Tape::new();
        let same = Tensor::from_rows(&vec![vec![2.0, -1.0]; 4]);
        let m = readout(&mut tape, &same, ReadoutKind::Mean).unwrap();
        assert_eq!(m.values(), &[2.0, -1.0]);
        let s = readout(&mut tape, &same, ReadoutKind::Sum).unwrap();
        assert_eq!(s.values(), &[8.0, -4.0]);
        let x = readout(&mut tape, &same, ReadoutKind::Max).unwrap();
        assert_eq!(x.values(), &[2.0, -1.0]);

        let a = Tensor::from_rows(&[vec![1.0, 5.0], vec![3.0, 2.0], vec![-1.0, 4.0]]);
        let b = Tensor::from_rows(&[vec![-1.0, 4.0], vec![1.0, 5.0], vec![3.0, 2.0]]);
        for kind in [ReadoutKind::Mean, ReadoutKind::Sum, ReadoutKind::Max] {
            let ra = readout(&mut tape, &a, kind).unwrap();
            let rb = readout(&mut tape, &b, kind).unwrap();
            for (x, y) in ra.values().iter().zip(rb.values()) {
                assert!((x - y).abs() < 1e-12);
            }
        }

        assert!(readout(&mut tape, &Tensor::zeros(0, 2), ReadoutKind::Mean).is_err());

        // Mean against the direct arithmetic oracle on a random 5x3.
        let r = graph(5, &[], 3, 15);
        let m = readout(&mut tape, r.features(), ReadoutKind::Mean).unwrap();
        for c in 0..3 {
            let expect: f64 = (0..5).map(|i| r.features().get(i, c)).sum::<f64>() / 5.0;
            assert!((m.get(0, c) - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn intermediate_logits_zero_head_and_oracle() {
        let x = graph(4, &[], 3, 16).features().clone();
        let zero_head = MlpHead {
            w1: Tensor::zeros(3, 3),
            b1: Tensor::zeros(1, 3),
            w2: Tensor::zeros(3, 2),
            b2: Tensor::zeros(1, 2),
        };
        let mut tape = Tape::new();
        let out = intermediate_logits(&mut tape, &x, &zero_head, ReadoutKind::Mean, Task::Node).unwrap();
        assert!(out.values().iter().all(|v| *v == 0.0));

        // Two-matmul oracle.
        let mut r = rng(17);
        let head = MlpHead {
            w1: glorot(3, 3, &mut r),
            b1: Tensor::zeros(1, 3),
            w2: glorot(3, 2, &mut r),
            b2: Tensor::zeros(1, 2),
        };
        let out = intermediate_logits(&mut tape, &x, &head, ReadoutKind::Mean, Task::Node).unwrap();
        for i in 0..4 {
            for c in 0..2 {
                let mut v = 0.0;
                for j in 0..3 {
                    let mut h = 0.0;
                    for k in 0..3 {
                        h += x.get(i, k) * head.w1.get(k, j);
                    }
                    v += h.max(0.0) * head.w2.get(j, c);
                }
                assert!((out.get(i, c) - v).abs() < 1e-10);
            }
        }

        // Width mismatch is a configuration error.
        let narrow = Tensor::zeros(4, 2);
        assert!(intermediate_logits(&mut tape, &narrow, &head, ReadoutKind::Mean, Task::Node).is_err());
    }

    #[test]
    fn sparse_feature_path_matches_dense() {
        use rand::Rng;
        // 80 nodes x 64 features at ~5% density triggers the sparse view.
        let mut r = rng(20);
        let n = 80;
        let d = 64;
        let feats: Vec<f64> = (0..n * d)
            .map(|_| if r.gen::<f64>() < 0.05 { r.gen_range(0.1..1.0) } else { 0.0 })
            .collect();
        let mut edges = Vec::new();
        for i in 0..n {
            edges.push((i, (i + 1) % n));
        }
        let g = Graph::new(n, &edges, Tensor::from_vec(n, d, feats), vec![0; n], Masks::empty(n))
            .unwrap();
        assert!(g.features_sparse().is_some());
        let dense_g = g.clone().force_dense_features();

        for backbone in [Backbone::Gcn, Backbone::Sage, Backbone::Gat] {
            let stack =
                LayerStack::new(config(backbone, 2, 4), d, 2, false, &mut rng(21)).unwrap();
            let mut t1 = Tape::new();
            let o1 = stack
                .bind(&mut t1)
                .forward(&mut t1, &g, Task::Node, ForwardMode::Eval, false)
                .unwrap();
            let mut t2 = Tape::new();
            let o2 = stack
                .bind(&mut t2)
                .forward(&mut t2, &dense_g, Task::Node, ForwardMode::Eval, false)
                .unwrap();
            for (a, b) in o1.logits.values().iter().zip(o2.logits.values()) {
                assert!((a - b).abs() < 1e-10, "{backbone:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let g = graph(6, &[(0, 1), (1, 2), (2, 3), (4, 5)], 3, 18);
        let stack = LayerStack::new(config(Backbone::Gat, 2, 4), 3, 2, false, &mut rng(19)).unwrap();
        let run = || {
            let mut tape = Tape::new();
            let bound = stack.bind(&mut tape);
            bound
                .forward(&mut tape, &g, Task::Node, ForwardMode::Eval, false)
                .unwrap()
                .logits
                .values()
                .to_vec()
        };
        assert_eq!(run(), run());
    }
}
