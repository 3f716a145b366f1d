//! Canonical JSON form for graphs and graph batches.
//!
//! Layout:
//! ```json
//! {
//!   "n": 3,
//!   "edges": [[0, 1], [1, 2]],
//!   "features": [[...], [...], [...]],
//!   "labels": [0, 1, 0],
//!   "masks": { "train": [0], "val": [1], "test": [2] }
//! }
//! ```
//! Edges are `i < j` pairs sorted lexicographically; masks are sorted node
//! index lists. `labels` may be empty for graphs classified as a whole.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphBatch, Masks};
use crate::tensor::Tensor;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MasksJson {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphJson {
    n: usize,
    edges: Vec<(usize, usize)>,
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    masks: MasksJson,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BatchJson {
    graphs: Vec<GraphJson>,
    labels: Vec<usize>,
    #[serde(default)]
    folds: Vec<usize>,
}

fn indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, m)| m.then_some(i))
        .collect()
}

fn mask_from_indices(n: usize, idx: &[usize], name: &str) -> Result<Vec<bool>> {
    let mut mask = vec![false; n];
    for &i in idx {
        if i >= n {
            return Err(Error::Config(format!("{name} mask index {i} out of range for n={n}")));
        }
        mask[i] = true;
    }
    Ok(mask)
}

fn encode(g: &Graph) -> GraphJson {
    GraphJson {
        n: g.n_nodes(),
        edges: g.edge_indexing().edges().to_vec(),
        features: (0..g.n_nodes()).map(|r| g.features().row(r).to_vec()).collect(),
        labels: g.labels().to_vec(),
        masks: MasksJson {
            train: indices(&g.masks().train),
            val: indices(&g.masks().val),
            test: indices(&g.masks().test),
        },
    }
}

fn decode(j: GraphJson) -> Result<Graph> {
    let features = if j.n == 0 {
        Tensor::zeros(0, 0)
    } else {
        if j.features.len() != j.n {
            return Err(Error::Config(format!(
                "{} feature rows for n={}",
                j.features.len(),
                j.n
            )));
        }
        Tensor::from_rows(&j.features)
    };
    let masks = Masks {
        train: mask_from_indices(j.n, &j.masks.train, "train")?,
        val: mask_from_indices(j.n, &j.masks.val, "val")?,
        test: mask_from_indices(j.n, &j.masks.test, "test")?,
    };
    Graph::new(j.n, &j.edges, features, j.labels, masks)
}

pub fn graph_to_json(g: &Graph) -> String {
    serde_json::to_string_pretty(&encode(g)).expect("graph serialization cannot fail")
}

pub fn graph_from_json(text: &str) -> Result<Graph> {
    decode(serde_json::from_str(text)?)
}

pub fn batch_to_json(b: &GraphBatch) -> String {
    let j = BatchJson {
        graphs: b.graphs.iter().map(encode).collect(),
        labels: b.labels.clone(),
        folds: b.folds.clone(),
    };
    serde_json::to_string_pretty(&j).expect("batch serialization cannot fail")
}

pub fn batch_from_json(text: &str) -> Result<GraphBatch> {
    let j: BatchJson = serde_json::from_str(text)?;
    let graphs: Vec<Graph> = j.graphs.into_iter().map(decode).collect::<Result<_>>()?;
    let mut batch = GraphBatch::new(graphs, j.labels)?;
    if !j.folds.is_empty() {
        if j.folds.len() != batch.len() {
            return Err(Error::Config(format!(
                "{} fold entries for {} graphs",
                j.folds.len(),
                batch.len()
            )));
        }
        batch.folds = j.folds;
    }
    Ok(batch)
}
