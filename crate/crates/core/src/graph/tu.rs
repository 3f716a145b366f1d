//! Loader for the TU graph-kernel text layout:
//!
//! - `NAME_A.txt`: one `i, j` pair per line, 1-based global node ids
//! - `NAME_graph_indicator.txt`: graph id (1-based) per node line
//! - `NAME_graph_labels.txt`: one class label per graph line
//! - `NAME_node_labels.txt` (optional): one integer label per node line
//! - `NAME_node_attributes.txt` (optional): comma-separated floats per node
//!
//! Node attributes, when present, become features directly; otherwise node
//! labels are one-hot encoded; failing both, every node gets a constant 1.
//! Graph labels are remapped to `0..C-1` by sorted value.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphBatch, Masks};
use crate::tensor::Tensor;

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let f = std::fs::File::open(path)
        .map_err(|e| Error::Dataset(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(line);
        }
    }
    Ok(out)
}

fn parse_int(path: &Path, lineno: usize, s: &str) -> Result<i64> {
    s.trim().parse::<i64>().map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: lineno + 1,
        detail: format!("bad integer {s:?}: {e}"),
    })
}

pub fn load_tu(dataset_dir: &Path, name: &str) -> Result<GraphBatch> {
    let file = |suffix: &str| -> PathBuf { dataset_dir.join(format!("{name}_{suffix}.txt")) };
    let a_path = file("A");
    let indicator_path = file("graph_indicator");
    let labels_path = file("graph_labels");
    for p in [&a_path, &indicator_path, &labels_path] {
        if !p.exists() {
            return Err(Error::Dataset(format!("missing mandatory file {}", p.display())));
        }
    }

    // Which graph each global node belongs to (0-based on both sides).
    let indicator_lines = read_lines(&indicator_path)?;
    let mut node_graph = Vec::with_capacity(indicator_lines.len());
    for (i, line) in indicator_lines.iter().enumerate() {
        let gid = parse_int(&indicator_path, i, line)?;
        if gid < 1 {
            return Err(Error::Parse {
                path: indicator_path.display().to_string(),
                line: i + 1,
                detail: format!("graph id {gid} is not positive"),
            });
        }
        node_graph.push((gid - 1) as usize);
    }
    let n_total = node_graph.len();
    let n_graphs = node_graph.iter().map(|g| g + 1).max().unwrap_or(0);

    let label_lines = read_lines(&labels_path)?;
    if label_lines.len() != n_graphs {
        return Err(Error::Dataset(format!(
            "{} graph labels for {} graphs",
            label_lines.len(),
            n_graphs
        )));
    }
    let raw_labels: Vec<i64> = label_lines
        .iter()
        .enumerate()
        .map(|(i, l)| parse_int(&labels_path, i, l))
        .collect::<Result<_>>()?;
    let mut classes: Vec<i64> = raw_labels.clone();
    classes.sort_unstable();
    classes.dedup();
    let graph_labels: Vec<usize> = raw_labels
        .iter()
        .map(|l| classes.binary_search(l).unwrap())
        .collect();

    // Local node numbering inside each graph, in global node order.
    let mut local_index = vec![0usize; n_total];
    let mut graph_sizes = vec![0usize; n_graphs];
    for (v, &g) in node_graph.iter().enumerate() {
        local_index[v] = graph_sizes[g];
        graph_sizes[g] += 1;
    }

    let mut per_graph_edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_graphs];
    for (lineno, line) in read_lines(&a_path)?.iter().enumerate() {
        let mut parts = line.split(',');
        let (Some(a), Some(b)) = (parts.next(), parts.next()) else {
            return Err(Error::Parse {
                path: a_path.display().to_string(),
                line: lineno + 1,
                detail: "expected `i, j`".into(),
            });
        };
        let a = parse_int(&a_path, lineno, a)? - 1;
        let b = parse_int(&a_path, lineno, b)? - 1;
        if a < 0 || b < 0 || a as usize >= n_total || b as usize >= n_total {
            return Err(Error::Parse {
                path: a_path.display().to_string(),
                line: lineno + 1,
                detail: format!("node id out of range in `{line}`"),
            });
        }
        let (a, b) = (a as usize, b as usize);
        if node_graph[a] != node_graph[b] {
            return Err(Error::Dataset(format!(
                "edge ({}, {}) crosses graph boundary ({} vs {})",
                a + 1,
                b + 1,
                node_graph[a] + 1,
                node_graph[b] + 1
            )));
        }
        per_graph_edges[node_graph[a]].push((local_index[a], local_index[b]));
    }

    let features = node_features(dataset_dir, name, n_total)?;

    let mut graphs = Vec::with_capacity(n_graphs);
    let mut cursor = vec![0usize; n_graphs];
    let mut rows_per_graph: Vec<Vec<Vec<f64>>> =
        graph_sizes.iter().map(|&s| vec![Vec::new(); s]).collect();
    for (v, &g) in node_graph.iter().enumerate() {
        rows_per_graph[g][cursor[g]] = features[v].clone();
        cursor[g] += 1;
    }
    for g in 0..n_graphs {
        let feat = Tensor::from_rows(&rows_per_graph[g]);
        graphs.push(Graph::new(
            graph_sizes[g],
            &per_graph_edges[g],
            feat,
            Vec::new(),
            Masks::empty(graph_sizes[g]),
        )?);
    }
    GraphBatch::new(graphs, graph_labels)
}

fn node_features(dir: &Path, name: &str, n_total: usize) -> Result<Vec<Vec<f64>>> {
    let attr_path = dir.join(format!("{name}_node_attributes.txt"));
    if attr_path.exists() {
        let lines = read_lines(&attr_path)?;
        if !lines.is_empty() {
            if lines.len() != n_total {
                return Err(Error::Dataset(format!(
                    "{} attribute lines for {} nodes",
                    lines.len(),
                    n_total
                )));
            }
            let mut rows = Vec::with_capacity(n_total);
            let mut width = None;
            for (i, line) in lines.iter().enumerate() {
                let row: Vec<f64> = line
                    .split(',')
                    .map(|s| {
                        s.trim().parse::<f64>().map_err(|e| Error::Parse {
                            path: attr_path.display().to_string(),
                            line: i + 1,
                            detail: format!("bad attribute {s:?}: {e}"),
                        })
                    })
                    .collect::<Result<_>>()?;
                if *width.get_or_insert(row.len()) != row.len() {
                    return Err(Error::Parse {
                        path: attr_path.display().to_string(),
                        line: i + 1,
                        detail: "ragged attribute rows".into(),
                    });
                }
                rows.push(row);
            }
            return Ok(rows);
        }
        // Present but empty: fall through to node labels.
    }

    let labels_path = dir.join(format!("{name}_node_labels.txt"));
    if labels_path.exists() {
        let lines = read_lines(&labels_path)?;
        if lines.len() != n_total {
            return Err(Error::Dataset(format!(
                "{} node label lines for {} nodes",
                lines.len(),
                n_total
            )));
        }
        let raw: Vec<i64> = lines
            .iter()
            .enumerate()
            .map(|(i, l)| parse_int(&labels_path, i, l))
            .collect::<Result<_>>()?;
        let mut values = raw.clone();
        values.sort_unstable();
        values.dedup();
        let dim = values.len();
        return Ok(raw
            .iter()
            .map(|l| {
                let mut row = vec![0.0; dim];
                row[values.binary_search(l).unwrap()] = 1.0;
                row
            })
            .collect());
    }

    Ok(vec![vec![1.0]; n_total])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &Path, name: &str, content: &str) {
        let mut f = std::fs::File::create(dir.join(name)).unwrap();
        f.write_all(content.as_bytes()).unwrap();
    }

    /// Triangle on nodes 1-3 (graph 1) plus a single edge 4-5 (graph 2).
    fn toy_dataset(dir: &Path) {
        write_file(dir, "TOY_A.txt", "1, 2\n2, 1\n2, 3\n3, 2\n1, 3\n3, 1\n4, 5\n5, 4\n");
        write_file(dir, "TOY_graph_indicator.txt", "1\n1\n1\n2\n2\n");
        write_file(dir, "TOY_graph_labels.txt", "1\n-1\n");
    }

    #[test]
    fn two_graph_fixture() {
        let dir = tempfile::tempdir().unwrap();
        toy_dataset(dir.path());
        let batch = load_tu(dir.path(), "TOY").unwrap();
        assert_eq!(batch.len(), 2);
        assert_eq!(batch.graphs[0].n_nodes(), 3);
        assert_eq!(batch.graphs[0].n_edges(), 3);
        assert_eq!(batch.graphs[1].n_nodes(), 2);
        assert_eq!(batch.graphs[1].n_edges(), 1);
        // Labels {1, -1} remap to {1, 0}.
        assert_eq!(batch.labels, vec![1, 0]);
        // No label/attribute files: constant feature.
        assert_eq!(batch.graphs[0].feature_dim(), 1);
    }

    #[test]
    fn node_labels_become_one_hots() {
        let dir = tempfile::tempdir().unwrap();
        toy_dataset(dir.path());
        write_file(dir.path(), "TOY_node_labels.txt", "1\n2\n1\n2\n1\n");
        write_file(dir.path(), "TOY_node_attributes.txt", "");
        let batch = load_tu(dir.path(), "TOY").unwrap();
        assert_eq!(batch.graphs[0].feature_dim(), 2);
        assert_eq!(batch.graphs[0].features().row(0), &[1.0, 0.0]);
        assert_eq!(batch.graphs[0].features().row(1), &[0.0, 1.0]);
    }

    #[test]
    fn attributes_take_precedence() {
        let dir = tempfile::tempdir().unwrap();
        toy_dataset(dir.path());
        write_file(
            dir.path(),
            "TOY_node_attributes.txt",
            "0.5, 1.0\n0.25, 2.0\n0.0, 3.0\n1.0, 4.0\n2.0, 5.0\n",
        );
        let batch = load_tu(dir.path(), "TOY").unwrap();
        assert_eq!(batch.graphs[0].feature_dim(), 2);
        assert_eq!(batch.graphs[1].features().row(0), &[1.0, 4.0]);
    }

    #[test]
    fn boundary_crossing_edge_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        toy_dataset(dir.path());
        write_file(dir.path(), "TOY_A.txt", "1, 2\n3, 4\n");
        let err = load_tu(dir.path(), "TOY").unwrap_err();
        assert!(matches!(err, Error::Dataset(_)));
    }

    #[test]
    fn missing_mandatory_file_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "TOY_A.txt", "1, 2\n");
        let err = load_tu(dir.path(), "TOY").unwrap_err();
        assert!(matches!(err, Error::Dataset(_)));
    }
}
