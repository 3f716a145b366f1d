//! End-to-end CLI checks through the compiled binary.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_smoothkit"))
}

fn write(path: &Path, content: &str) {
    std::fs::write(path, content).unwrap();
}

#[test]
fn check_subcommand_passes() {
    let out = bin().arg("check").output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "check failed:\n{stdout}");
    assert!(stdout.lines().all(|l| l.starts_with("PASS")), "{stdout}");
    assert!(stdout.contains("ndr_matrix_vs_loop"));
    assert!(stdout.contains("prop1_inequality_p1"));
    assert!(stdout.contains("grad_full_objective"));
}

#[test]
fn unknown_flag_exits_2_with_usage() {
    let out = bin().arg("train").arg("--bogus").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.to_lowercase().contains("usage"), "{stderr}");
}

#[test]
fn convert_train_profile_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let graph_path = dir.path().join("toy.json");

    // Synthesize a graph.
    let out = bin()
        .args([
            "convert",
            "sbm",
            "--blocks",
            "2",
            "--nodes-per-block",
            "40",
            "--p-in",
            "0.4",
            "--p-out",
            "0.05",
            "--feat-dim",
            "8",
            "--seed",
            "3",
            "--out",
        ])
        .arg(&graph_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // Train a small baseline with a checkpoint and metrics.
    let config_path = dir.path().join("job.json");
    let metrics_path = dir.path().join("metrics.csv");
    let ckpt_path = dir.path().join("model");
    write(
        &config_path,
        &format!(
            r#"{{
  "data": {{ "kind": "graph_json", "path": {graph:?} }},
  "train": {{
    "model": {{ "backbone": "gcn", "n_layers": 2, "hidden_dim": 8 }},
    "lr": 0.02,
    "epochs": 5,
    "seed": 1,
    "task": "node"
  }},
  "metrics_csv": {metrics:?},
  "checkpoint": {ckpt:?}
}}"#,
            graph = graph_path,
            metrics = metrics_path,
            ckpt = ckpt_path
        ),
    );
    let out = bin().args(["train", "--config"]).arg(&config_path).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&metrics_path).unwrap();
    assert_eq!(csv.lines().count(), 6, "header + 5 epochs:\n{csv}");
    // Baseline: distillation loss columns are exactly zero.
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[2], "0.000000000", "loss_logit column");
        assert_eq!(fields[3], "0.000000000", "loss_ndr column");
        assert_eq!(fields[4], "0.000000000", "loss_graph column");
    }
    assert!(ckpt_path.with_extension("json").exists());
    assert!(ckpt_path.with_extension("bin").exists());

    // Profile the checkpoint.
    let out = bin()
        .args(["profile-ndr", "--checkpoint"])
        .arg(&ckpt_path)
        .arg("--graph")
        .arg(&graph_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("layer"), "{stdout}");
    assert!(stdout.lines().count() >= 4, "{stdout}");
}

#[test]
fn convert_citation_and_tu() {
    let dir = tempfile::tempdir().unwrap();
    write(
        &dir.path().join("toy.content"),
        "a\t1\t0\tX\nb\t0\t1\tY\nc\t1\t1\tX\n",
    );
    write(&dir.path().join("toy.cites"), "a\tb\nb\tc\nzz\ta\n");
    let out_path = dir.path().join("toy.json");
    let out = bin()
        .args(["convert", "citation", "--content"])
        .arg(dir.path().join("toy.content"))
        .arg("--cites")
        .arg(dir.path().join("toy.cites"))
        .arg("--out")
        .arg(&out_path)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("1 dangling"));
    let g = smoothkit::graph::graph_from_json(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(g.n_nodes(), 3);
    assert_eq!(g.n_edges(), 2);

    write(&dir.path().join("T_A.txt"), "1, 2\n2, 1\n3, 4\n4, 3\n");
    write(&dir.path().join("T_graph_indicator.txt"), "1\n1\n2\n2\n");
    write(&dir.path().join("T_graph_labels.txt"), "0\n1\n");
    let batch_path = dir.path().join("batch.json");
    let out = bin()
        .args(["convert", "tu", "--dir"])
        .arg(dir.path())
        .args(["--name", "T", "--out"])
        .arg(&batch_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let b = smoothkit::graph::batch_from_json(&std::fs::read_to_string(&batch_path).unwrap()).unwrap();
    assert_eq!(b.len(), 2);
}

#[test]
fn grid_subcommand_ranks() {
    let dir = tempfile::tempdir().unwrap();
    let graph_path = dir.path().join("g.json");
    let g = smoothkit::graph::sbm_generate(2, 30, 0.4, 0.05, 4, 9);
    write(&graph_path, &smoothkit::graph::graph_to_json(&g));
    let config_path = dir.path().join("grid.json");
    let out_csv = dir.path().join("grid_out.csv");
    write(
        &config_path,
        &format!(
            r#"{{
  "data": {{ "kind": "graph_json", "path": {graph:?} }},
  "train": {{
    "model": {{ "backbone": "gcn", "n_layers": 2, "hidden_dim": 8 }},
    "lr": 0.02,
    "epochs": 4,
    "seed": 1,
    "task": "node"
  }},
  "grid": {{ "beta": [0.0, 0.5], "seeds": [1, 2] }},
  "out_csv": {out:?}
}}"#,
            graph = graph_path,
            out = out_csv
        ),
    );
    let out = bin().args(["grid", "--config"]).arg(&config_path).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&out_csv).unwrap();
    assert_eq!(csv.lines().count(), 3, "header + 2 combos:\n{csv}");

    // Config with an unknown key is rejected.
    let bad = dir.path().join("bad.json");
    write(&bad, r#"{ "data": { "kind": "graph_json", "path": "x" }, "trains": {} }"#);
    let out = bin().args(["grid", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}
