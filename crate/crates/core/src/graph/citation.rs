//! Loader for the plain-text citation format:
//!
//! - `.content` lines: `<id>\t<w1>\t...\t<wd>\t<class>`
//! - `.cites`   lines: `<cited>\t<citing>`
//!
//! Node order follows the `.content` file. Features are row-normalized,
//! class names are numbered by first appearance, and the semi-supervised
//! split takes the first 20 nodes per class as training, the next 500 nodes
//! as validation and the following 1000 as test (all by file order; smaller
//! files truncate naturally).

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{Graph, Masks};
use crate::tensor::Tensor;

#[derive(Debug)]
pub struct LoadedCitation {
    pub graph: Graph,
    /// Citation lines whose ids did not appear in the content file.
    pub dangling: usize,
}

const TRAIN_PER_CLASS: usize = 20;
const VAL_SIZE: usize = 500;
const TEST_SIZE: usize = 1000;

pub fn load_citation(content_path: &Path, cites_path: &Path) -> Result<LoadedCitation> {
    let content = std::fs::File::open(content_path)?;
    let mut ids: Vec<String> = Vec::new();
    let mut id_to_index: HashMap<String, usize> = HashMap::new();
    let mut feature_rows: Vec<Vec<f64>> = Vec::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let path_str = content_path.display().to_string();

    for (lineno, line) in BufReader::new(content).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(Error::Parse {
                path: path_str.clone(),
                line: lineno + 1,
                detail: format!("expected id, features and class, got {} fields", fields.len()),
            });
        }
        let id = fields[0].to_string();
        let class = fields[fields.len() - 1].trim().to_string();
        let mut row = Vec::with_capacity(fields.len() - 2);
        for f in &fields[1..fields.len() - 1] {
            row.push(f.trim().parse::<f64>().map_err(|e| Error::Parse {
                path: path_str.clone(),
                line: lineno + 1,
                detail: format!("bad feature value {f:?}: {e}"),
            })?);
        }
        if let Some(first) = feature_rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse {
                    path: path_str.clone(),
                    line: lineno + 1,
                    detail: format!("{} features, expected {}", row.len(), first.len()),
                });
            }
        }
        if id_to_index.contains_key(&id) {
            return Err(Error::Parse {
                path: path_str.clone(),
                line: lineno + 1,
                detail: format!("duplicate node id {id:?}"),
            });
        }
        let class_idx = match class_names.iter().position(|c| *c == class) {
            Some(i) => i,
            None => {
                class_names.push(class);
                class_names.len() - 1
            }
        };
        id_to_index.insert(id.clone(), ids.len());
        ids.push(id);
        labels.push(class_idx);
        feature_rows.push(row);
    }
    if ids.is_empty() {
        return Err(Error::Dataset(format!("{path_str} contains no nodes")));
    }

    // Row-normalize: each row sums to 1, all-zero rows stay zero.
    for row in feature_rows.iter_mut() {
        let s: f64 = row.iter().sum();
        if s != 0.0 {
            for v in row.iter_mut() {
                *v /= s;
            }
        }
    }
    let features = Tensor::from_rows(&feature_rows);
    let n = ids.len();

    let cites = std::fs::File::open(cites_path)?;
    let cites_str = cites_path.display().to_string();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut dangling = 0usize;
    for (lineno, line) in BufReader::new(cites).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(a), Some(b)) = (parts.next(), parts.next()) else {
            return Err(Error::Parse {
                path: cites_str.clone(),
                line: lineno + 1,
                detail: "expected two node ids".into(),
            });
        };
        match (id_to_index.get(a), id_to_index.get(b)) {
            (Some(&x), Some(&y)) => edges.push((x, y)),
            _ => dangling += 1,
        }
    }

    let masks = semi_supervised_masks(&labels, n);
    let graph = Graph::new(n, &edges, features, labels, masks)?;
    Ok(LoadedCitation { graph, dangling })
}

/// First 20 nodes per class (file order) train, next 500 nodes validate,
/// next 1000 test.
fn semi_supervised_masks(labels: &[usize], n: usize) -> Masks {
    let n_classes = labels.iter().map(|l| l + 1).max().unwrap_or(0);
    let mut masks = Masks::empty(n);
    let mut per_class = vec![0usize; n_classes];
    for (v, &c) in labels.iter().enumerate() {
        if per_class[c] < TRAIN_PER_CLASS {
            masks.train[v] = true;
            per_class[c] += 1;
        }
    }
    let mut val_left = VAL_SIZE;
    let mut test_left = TEST_SIZE;
    for v in 0..n {
        if masks.train[v] {
            continue;
        }
        if val_left > 0 {
            masks.val[v] = true;
            val_left -= 1;
        } else if test_left > 0 {
            masks.test[v] = true;
            test_left -= 1;
        }
    }
    masks
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &Path, name: &str, content: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        p
    }

    #[test]
    fn toy_fixture_loads() {
        let dir = tempfile::tempdir().unwrap();
        let content = "n1\t1\t0\t1\tA\nn2\t0\t1\t0\tB\nn3\t1\t1\t0\tA\nn4\t0\t0\t1\tB\nn5\t1\t0\t0\tA\n";
        let cites = "n1\tn2\nn3\tn4\n";
        let cp = write_file(dir.path(), "toy.content", content);
        let ep = write_file(dir.path(), "toy.cites", cites);
        let loaded = load_citation(&cp, &ep).unwrap();
        let g = &loaded.graph;
        assert_eq!(g.n_nodes(), 5);
        assert_eq!(g.n_edges(), 2);
        assert_eq!(g.feature_dim(), 3);
        assert_eq!(g.n_classes(), 2);
        assert_eq!(loaded.dangling, 0);
        // Row normalization: node n1 had two words.
        assert!((g.features().get(0, 0) - 0.5).abs() < 1e-12);
        // All five nodes fit in the 20-per-class training budget.
        assert!(g.masks().train.iter().all(|m| *m));
    }

    #[test]
    fn self_citation_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let cp = write_file(dir.path(), "a.content", "x\t1\tA\ny\t1\tB\n");
        let ep = write_file(dir.path(), "a.cites", "x\tx\nx\ty\n");
        let loaded = load_citation(&cp, &ep).unwrap();
        assert_eq!(loaded.graph.n_edges(), 1);
    }

    #[test]
    fn dangling_citations_are_counted_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let cp = write_file(dir.path(), "b.content", "x\t1\tA\ny\t1\tB\n");
        let ep = write_file(dir.path(), "b.cites", "x\tzz\nx\ty\n");
        let loaded = load_citation(&cp, &ep).unwrap();
        assert_eq!(loaded.dangling, 1);
        assert_eq!(loaded.graph.n_edges(), 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let cp = write_file(dir.path(), "c.content", "x\t1\tA\ny\tnotanumber\tB\n");
        let ep = write_file(dir.path(), "c.cites", "");
        let err = load_citation(&cp, &ep).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn split_layout_with_many_nodes() {
        // 60 nodes, 2 classes alternating: 40 train, then 20 val.
        let dir = tempfile::tempdir().unwrap();
        let mut content = String::new();
        for i in 0..60 {
            content.push_str(&format!("n{i}\t1\t{}\n", if i % 2 == 0 { "A" } else { "B" }));
        }
        let cp = write_file(dir.path(), "d.content", &content);
        let ep = write_file(dir.path(), "d.cites", "n0\tn1\n");
        let g = load_citation(&cp, &ep).unwrap().graph;
        assert_eq!(g.masks().train.iter().filter(|m| **m).count(), 40);
        assert_eq!(g.masks().val.iter().filter(|m| **m).count(), 20);
        assert_eq!(g.masks().test.iter().filter(|m| **m).count(), 0);
    }
}
