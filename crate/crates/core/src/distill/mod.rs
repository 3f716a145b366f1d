//! Self-distillation machinery: the neighborhood discrepancy rate (NDR)
//! metric at node and edge level, the adaptive discrepancy retaining (ADR)
//! regularizer, graph-embedding and intermediate-logit distillation, and the
//! combined training objective.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{edge_adjacency, masked_adjacency, EdgeIndexing, Graph};
use crate::tensor::{SparseMatrix, Tape, Tensor, COSINE_EPS};

/// Which side of each adjacent layer pair acts as the (frozen) target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Shallower layer supervises the deeper one (the default scheme).
    Shallow2Deep,
    /// Deeper layer supervises the shallower one.
    Deep2Shallow,
}

/// Summary statistic used for teacher selection and the starting layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndicatorStat {
    /// Mean over valid entries; invariant to graph size.
    Mean,
    /// Euclidean norm over valid entries.
    L2,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    /// Weight of the intermediate-logit loss.
    #[serde(default)]
    pub alpha: f64,
    /// Weight of the discrepancy-retaining loss.
    #[serde(default)]
    pub beta: f64,
    /// Weight of the graph-embedding loss.
    #[serde(default)]
    pub gamma: f64,
    #[serde(default = "DistillConfig::default_direction")]
    pub direction: Direction,
    #[serde(default)]
    pub degree_weighting: bool,
    /// Aggregate neighborhoods over cross-class edges only (node tasks).
    #[serde(default)]
    pub masked_ndr: bool,
    /// Pass online-side embeddings through a trained linear map first.
    #[serde(default)]
    pub learnable_transform: bool,
    #[serde(default = "DistillConfig::default_stat")]
    pub indicator_stat: IndicatorStat,
}

impl DistillConfig {
    fn default_direction() -> Direction {
        Direction::Shallow2Deep
    }

    fn default_stat() -> IndicatorStat {
        IndicatorStat::Mean
    }

    /// All loss weights zero: plain supervised training.
    pub fn baseline() -> Self {
        DistillConfig {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            direction: Direction::Shallow2Deep,
            degree_weighting: false,
            masked_ndr: false,
            learnable_transform: false,
            indicator_stat: IndicatorStat::Mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return Err(Error::Config(format!(
                "loss weights must be nonnegative (alpha={}, beta={}, gamma={})",
                self.alpha, self.beta, self.gamma
            )));
        }
        Ok(())
    }

    pub fn is_baseline(&self) -> bool {
        self.alpha == 0.0 && self.beta == 0.0 && self.gamma == 0.0
    }
}

/// Per-node (or per-edge) discrepancy values of one layer.
///
/// Valid entries lie in `[0, 2]`; entries are invalid exactly for rows whose
/// own embedding or aggregated neighborhood falls below the cosine epsilon
/// (isolated nodes have an all-zero aggregate).
#[derive(Clone, Debug)]
pub struct NdrVector {
    pub values: Vec<f64>,
    pub validity: Vec<bool>,
    /// 1-based layer index this vector was computed from (0 = unset).
    pub layer: usize,
    /// Differentiable column tensor on the tape.
    pub tensor: Tensor,
}

impl NdrVector {
    pub fn n_valid(&self) -> usize {
        self.validity.iter().filter(|v| **v).count()
    }

    /// Summary statistic over valid entries (0.0 when none are valid).
    pub fn summary(&self, stat: IndicatorStat) -> f64 {
        let valid: Vec<f64> = self
            .values
            .iter()
            .zip(&self.validity)
            .filter_map(|(v, ok)| ok.then_some(*v))
            .collect();
        if valid.is_empty() {
            return 0.0;
        }
        match stat {
            IndicatorStat::Mean => valid.iter().sum::<f64>() / valid.len() as f64,
            IndicatorStat::L2 => valid.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }

    /// Every valid entry within `[0, 2]` (up to roundoff).
    pub fn in_range(&self) -> bool {
        self.values
            .iter()
            .zip(&self.validity)
            .all(|(v, ok)| !ok || (-1e-12..=2.0 + 1e-12).contains(v))
    }
}

fn ndr_with_aggregate(
    tape: &mut Tape,
    aggregate_matrix: &Arc<SparseMatrix>,
    x: &Tensor,
) -> Result<NdrVector> {
    let agg = tape.spmm(aggregate_matrix, x)?;
    let (dist, valid) = tape.rowwise_cosine_distance(x, &agg, COSINE_EPS)?;
    Ok(NdrVector {
        values: dist.values().to_vec(),
        validity: valid.to_vec(),
        layer: 0,
        tensor: dist,
    })
}

/// Neighborhood discrepancy of each node: one minus the cosine similarity
/// between its embedding and the sum of its neighbors' embeddings. The raw
/// adjacency is used; cosine normalization makes the degree inverse
/// redundant. Differentiable w.r.t. `x`.
pub fn ndr(tape: &mut Tape, g: &Graph, x: &Tensor) -> Result<NdrVector> {
    if x.rows() != g.n_nodes() {
        return Err(Error::dim(
            "ndr",
            format!("{} embedding rows for {} nodes", x.rows(), g.n_nodes()),
        ));
    }
    ndr_with_aggregate(tape, g.adjacency(), x)
}

/// NDR over the label-masked adjacency: neighborhoods aggregate cross-class
/// neighbors only, so same-class smoothing is not counted as discrepancy.
pub fn ndr_masked(tape: &mut Tape, g: &Graph, x: &Tensor) -> Result<NdrVector> {
    if !g.has_labels() {
        return Err(Error::Config(
            "masked NDR needs node labels; graph-classification batches have none".into(),
        ));
    }
    if x.rows() != g.n_nodes() {
        return Err(Error::dim(
            "ndr_masked",
            format!("{} embedding rows for {} nodes", x.rows(), g.n_nodes()),
        ));
    }
    let masked = Arc::new(masked_adjacency(g));
    ndr_with_aggregate(tape, &masked, x)
}

/// Edge-level NDR over the edge adjacency (edges are neighbors when they
/// share an endpoint).
pub fn edge_ndr(tape: &mut Tape, e: &EdgeIndexing, edge_feats: &Tensor) -> Result<NdrVector> {
    if edge_feats.rows() != e.n_edges() {
        return Err(Error::dim(
            "edge_ndr",
            format!("{} feature rows for {} edges", edge_feats.rows(), e.n_edges()),
        ));
    }
    let adj = Arc::new(edge_adjacency(e));
    ndr_with_aggregate(tape, &adj, edge_feats)
}

/// NDR for every captured hidden layer `X^(1)..X^(L)`, with layer indices
/// filled in. `hidden` is the full cache including `X^(0)`.
pub fn ndr_per_layer(
    tape: &mut Tape,
    g: &Graph,
    hidden: &[Tensor],
    masked: bool,
) -> Result<Vec<NdrVector>> {
    let mut out = Vec::with_capacity(hidden.len().saturating_sub(1));
    for (l, x) in hidden.iter().enumerate().skip(1) {
        let mut v = if masked {
            ndr_masked(tape, g, x)?
        } else {
            ndr(tape, g, x)?
        };
        v.layer = l;
        out.push(v);
    }
    Ok(out)
}

/// Linear knowledge transformation applied to online-side embeddings before
/// their discrepancy is computed; `w_f` is trained jointly.
pub fn learnable_transform(tape: &mut Tape, x: &Tensor, w_f: &Tensor) -> Result<Tensor> {
    if x.cols() != w_f.rows() {
        return Err(Error::dim(
            "learnable_transform",
            format!("{}x{} times {}x{}", x.rows(), x.cols(), w_f.rows(), w_f.cols()),
        ));
    }
    tape.matmul(x, w_f)
}

/// Outcome of one ADR evaluation.
#[derive(Clone, Debug)]
pub struct AdrReport {
    /// Summary statistic of s^(l) for l = 1..L.
    pub summaries: Vec<f64>,
    /// Starting layer for retaining: argmax of the summary over l in
    /// 1..L-1, earliest on ties. 1-based.
    pub l_star: usize,
    /// Teacher-selection outcome for every adjacent pair (l, l+1),
    /// l = 1..L-1; only pairs at or beyond `l_star` enter the loss.
    pub indicators: Vec<bool>,
    pub loss: f64,
}

impl AdrReport {
    /// Pattern string like `"01-"` is not used; plain 0/1 per pair.
    pub fn indicator_pattern(&self) -> String {
        self.indicators.iter().map(|b| if *b { '1' } else { '0' }).collect()
    }
}

/// Adaptive discrepancy retaining loss.
///
/// For each adjacent layer pair from the starting layer `l*` upward, if the
/// teacher side's NDR summary exceeds the student side's, add the
/// (optionally degree-weighted) squared error between the student NDR and
/// the stop-gradient of the teacher NDR, over rows valid in both vectors.
/// In `Shallow2Deep` the teacher of pair (l, l+1) is layer l; in
/// `Deep2Shallow` it is layer l+1.
///
/// `online_override` substitutes the student-side vectors (used with the
/// learnable transform); summaries, `l*` and the indicators are always taken
/// from the plain `ndrs`, which reflect the network's actual smoothness.
pub fn adr_loss(
    tape: &mut Tape,
    g: &Graph,
    ndrs: &[NdrVector],
    online_override: Option<&[NdrVector]>,
    cfg: &DistillConfig,
) -> Result<(Tensor, AdrReport)> {
    let n_layers = ndrs.len();
    if n_layers < 2 {
        return Err(Error::Config(format!(
            "discrepancy retaining needs at least 2 layers, got {n_layers}"
        )));
    }
    if let Some(o) = online_override {
        if o.len() != n_layers {
            return Err(Error::Config(format!(
                "{} override vectors for {n_layers} layers",
                o.len()
            )));
        }
    }

    let summaries: Vec<f64> = ndrs.iter().map(|s| s.summary(cfg.indicator_stat)).collect();

    // argmax over l in {1..L-1}, earliest layer on ties.
    let mut l_star = 1usize;
    for l in 2..n_layers {
        if summaries[l - 1] > summaries[l_star - 1] {
            l_star = l;
        }
    }

    let degrees = g.degree_vector();
    let max_degree = degrees.iter().copied().max().unwrap_or(0).max(1) as f64;

    let mut indicators = Vec::with_capacity(n_layers - 1);
    let mut total: Option<Tensor> = None;
    for l in 1..n_layers {
        let (teacher_idx, student_idx) = match cfg.direction {
            Direction::Shallow2Deep => (l, l + 1),
            Direction::Deep2Shallow => (l + 1, l),
        };
        let indicator = summaries[teacher_idx - 1] > summaries[student_idx - 1];
        indicators.push(indicator);
        if l < l_star || !indicator {
            continue;
        }

        let teacher = &ndrs[teacher_idx - 1];
        let student = match online_override {
            Some(o) => &o[student_idx - 1],
            None => &ndrs[student_idx - 1],
        };
        // Rows invalid on either side are excluded via a zero weight.
        let weights: Vec<f64> = (0..g.n_nodes())
            .map(|v| {
                if !teacher.validity[v] || !student.validity[v] {
                    0.0
                } else if cfg.degree_weighting {
                    degrees[v] as f64 / max_degree
                } else {
                    1.0
                }
            })
            .collect();
        let w = Tensor::column(&weights);
        let frozen = tape.stop_gradient(&teacher.tensor);
        let diff = tape.sub(&student.tensor, &frozen)?;
        let weighted = tape.mul(&diff, &w)?;
        let sq = tape.mul(&weighted, &weighted)?;
        let term = tape.sum_all(&sq);
        total = Some(match total {
            Some(t) => tape.add(&t, &term)?,
            None => term,
        });
    }

    let loss = total.unwrap_or_else(|| Tensor::scalar(0.0));
    let report = AdrReport {
        summaries,
        l_star,
        indicators,
        loss: loss.item(),
    };
    Ok((loss, report))
}

/// Graph-embedding distillation: squared distance from each readout to the
/// stop-gradient of its shallower neighbor, summed over adjacent pairs.
/// Gradient therefore flows only into the deeper embeddings.
pub fn graph_embed_loss(tape: &mut Tape, readouts: &[Tensor]) -> Result<Tensor> {
    if readouts.len() < 2 {
        return Ok(Tensor::scalar(0.0));
    }
    let d = readouts[0].cols();
    if readouts.iter().any(|r| r.cols() != d || r.rows() != 1) {
        return Err(Error::Config(
            "graph-embedding distillation requires equal hidden dims across layers".into(),
        ));
    }
    let mut total: Option<Tensor> = None;
    for pair in readouts.windows(2) {
        let frozen = tape.stop_gradient(&pair[0]);
        let diff = tape.sub(&pair[1], &frozen)?;
        let sq = tape.mul(&diff, &diff)?;
        let term = tape.sum_all(&sq);
        total = Some(match total {
            Some(t) => tape.add(&t, &term)?,
            None => term,
        });
    }
    Ok(total.unwrap())
}

/// Intermediate-logit distillation: mean over intermediate layers and masked
/// rows of `KL(SG(softmax(final)) || softmax(intermediate))`, temperature 1.
/// Gradient flows only into the intermediate heads and features.
pub fn logit_loss(
    tape: &mut Tape,
    intermediate: &[Tensor],
    final_logits: &Tensor,
    mask: &Arc<Vec<bool>>,
) -> Result<Tensor> {
    if intermediate.is_empty() {
        return Ok(Tensor::scalar(0.0));
    }
    let frozen = tape.stop_gradient(final_logits);
    let target = tape.softmax_rows(&frozen);
    let mut total: Option<Tensor> = None;
    for logits in intermediate {
        let term = tape.kl_to_fixed_rows(logits, &target, mask)?;
        total = Some(match total {
            Some(t) => tape.add(&t, &term)?,
            None => term,
        });
    }
    Ok(tape.scale(&total.unwrap(), 1.0 / intermediate.len() as f64))
}

/// Combined objective `CE + alpha*L_L + beta*L_N + gamma*L_G`. Terms with a
/// zero weight are skipped entirely, so the baseline configuration is
/// bit-identical to plain cross-entropy training.
pub fn total_loss(
    tape: &mut Tape,
    ce: &Tensor,
    l_logit: &Tensor,
    l_ndr: &Tensor,
    l_graph: &Tensor,
    cfg: &DistillConfig,
) -> Result<Tensor> {
    let mut total = ce.clone();
    for (weight, term) in [(cfg.alpha, l_logit), (cfg.beta, l_ndr), (cfg.gamma, l_graph)] {
        if weight != 0.0 {
            let scaled = tape.scale(term, weight);
            total = tape.add(&total, &scaled)?;
        }
    }
    Ok(total)
}
