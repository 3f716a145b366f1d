//! Command-line interface: training runs, grid search, dataset conversion,
//! discrepancy profiling of saved checkpoints, and the oracle check suite.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use smoothkit::distill::ndr_per_layer;
use smoothkit::graph::{
    batch_from_json, batch_to_json, graph_from_json, graph_to_json, load_citation, load_tu,
    sbm_generate, Graph, GraphBatch,
};
use smoothkit::layers::{load_checkpoint, save_checkpoint, CheckpointMeta, ForwardMode, Task};
use smoothkit::tensor::Tape;
use smoothkit::train::{
    grid_search, train_graph, train_node_with, GridSpace, MetricsLog, TrainConfig, TrainData,
};
use smoothkit::{Error, Result};

#[derive(Parser)]
#[command(name = "smoothkit", version, about = "GNN training with self-distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a JSON job config.
    Train(TrainArgs),
    /// Grid search over loss weights / optimizer settings.
    Grid(GridArgs),
    /// Per-layer neighborhood discrepancy report for a saved checkpoint.
    ProfileNdr(ProfileArgs),
    /// Convert raw datasets into the canonical JSON form.
    #[command(subcommand)]
    Convert(ConvertCmd),
    /// Run the oracle suite (brute-force cross-checks, gradient checks).
    Check,
}

#[derive(Args)]
struct TrainArgs {
    /// Path to a JSON job config (see README for the schema).
    #[arg(long)]
    config: PathBuf,
    /// Metrics CSV output (overrides the config).
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Checkpoint output path, without extension (overrides the config).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    config: PathBuf,
    /// Ranked results CSV (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProfileArgs {
    /// Checkpoint path without extension (expects .json + .bin).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Graph in canonical JSON form.
    #[arg(long)]
    graph: PathBuf,
}

#[derive(Subcommand)]
enum ConvertCmd {
    /// Citation text files to canonical graph JSON.
    Citation {
        #[arg(long)]
        content: PathBuf,
        #[arg(long)]
        cites: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// TU-format directory to canonical batch JSON.
    Tu {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthetic stochastic block model graph to canonical JSON.
    Sbm {
        #[arg(long)]
        blocks: usize,
        #[arg(long)]
        nodes_per_block: usize,
        #[arg(long)]
        p_in: f64,
        #[arg(long)]
        p_out: f64,
        #[arg(long, default_value_t = 8)]
        feat_dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Where a job's dataset comes from.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum DataSpec {
    Citation { content: PathBuf, cites: PathBuf },
    GraphJson { path: PathBuf },
    BatchJson { path: PathBuf },
    Tu { dir: PathBuf, name: String },
    Sbm {
        blocks: usize,
        nodes_per_block: usize,
        p_in: f64,
        p_out: f64,
        feat_dim: usize,
        seed: u64,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JobConfig {
    data: DataSpec,
    train: TrainConfig,
    #[serde(default)]
    metrics_csv: Option<PathBuf>,
    #[serde(default)]
    checkpoint: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridJobConfig {
    data: DataSpec,
    train: TrainConfig,
    grid: GridSpace,
    #[serde(default)]
    out_csv: Option<PathBuf>,
}

fn load_data(spec: &DataSpec) -> Result<TrainData> {
    Ok(match spec {
        DataSpec::Citation { content, cites } => {
            let loaded = load_citation(content, cites)?;
            if loaded.dangling > 0 {
                eprintln!("warning: skipped {} dangling citation lines", loaded.dangling);
            }
            TrainData::Node(loaded.graph)
        }
        DataSpec::GraphJson { path } => {
            TrainData::Node(graph_from_json(&std::fs::read_to_string(path)?)?)
        }
        DataSpec::BatchJson { path } => {
            TrainData::Batch(batch_from_json(&std::fs::read_to_string(path)?)?)
        }
        DataSpec::Tu { dir, name } => TrainData::Batch(load_tu(dir, name)?),
        DataSpec::Sbm {
            blocks,
            nodes_per_block,
            p_in,
            p_out,
            feat_dim,
            seed,
        } => TrainData::Node(sbm_generate(
            *blocks,
            *nodes_per_block,
            *p_in,
            *p_out,
            *feat_dim,
            *seed,
        )),
    })
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let job: JobConfig = serde_json::from_str(&std::fs::read_to_string(&args.config)?)?;
    let data = load_data(&job.data)?;
    if data.task() != job.train.task {
        return Err(Error::Config(format!(
            "config task {:?} does not match the dataset kind",
            job.train.task
        )));
    }
    let metrics_path = args.metrics.clone().or(job.metrics_csv);
    let ckpt_path = args.checkpoint.clone().or(job.checkpoint);

    match data {
        TrainData::Node(g) => {
            let outcome = train_node_with(&g, &job.train, &mut |row| {
                if row.epoch % 50 == 0 || row.epoch + 1 == job.train.epochs {
                    eprintln!(
                        "epoch {:4}  loss {:.4}  val {:.4}  test {:.4}",
                        row.epoch, row.loss_total, row.val_acc, row.test_acc
                    );
                }
            })?;
            println!(
                "best epoch {}  val_acc {:.4}  test_acc {:.4}",
                outcome.best_epoch, outcome.best_val_acc, outcome.test_acc
            );
            write_metrics(&outcome.log, metrics_path.as_deref())?;
            if let Some(path) = ckpt_path {
                let meta = CheckpointMeta {
                    task: Task::Node,
                    seed: job.train.seed,
                    epoch: outcome.best_epoch,
                };
                save_checkpoint(&outcome.stack, &meta, &path)?;
                println!("checkpoint written to {}.json/.bin", path.display());
            }
        }
        TrainData::Batch(b) => {
            let outcome = train_graph(&b, &job.train)?;
            for fold in &outcome.folds {
                eprintln!(
                    "fold {:2}  best epoch {:4}  val {:.4}  test {:.4}",
                    fold.fold, fold.best_epoch, fold.val_acc, fold.test_acc
                );
            }
            println!(
                "cv mean test_acc {:.4} +- {:.4} over {} folds",
                outcome.mean_test_acc,
                outcome.std_test_acc,
                outcome.folds.len()
            );
            if let Some(path) = metrics_path {
                // One CSV per fold, suffixed _fold<k>.
                for fold in &outcome.folds {
                    let p = fold_path(&path, fold.fold);
                    fold.log.write_csv(&p)?;
                }
                println!("per-fold metrics written next to {}", path.display());
            }
        }
    }
    Ok(())
}

fn fold_path(base: &Path, fold: usize) -> PathBuf {
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("metrics");
    let ext = base.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    base.with_file_name(format!("{stem}_fold{fold}.{ext}"))
}

fn write_metrics(log: &MetricsLog, path: Option<&Path>) -> Result<()> {
    if let Some(path) = path {
        log.write_csv(path)?;
        println!("metrics written to {}", path.display());
    }
    Ok(())
}

fn cmd_grid(args: &GridArgs) -> Result<()> {
    let job: GridJobConfig = serde_json::from_str(&std::fs::read_to_string(&args.config)?)?;
    let data = load_data(&job.data)?;
    if data.task() != job.train.task {
        return Err(Error::Config(format!(
            "config task {:?} does not match the dataset kind",
            job.train.task
        )));
    }
    let outcome = grid_search(&data, &job.train, &job.grid)?;
    print!("{}", outcome.to_csv());
    if let Some(path) = args.out.clone().or(job.out_csv) {
        std::fs::write(&path, outcome.to_csv())?;
        eprintln!("grid results written to {}", path.display());
    }
    Ok(())
}

fn cmd_profile(args: &ProfileArgs) -> Result<()> {
    let (stack, meta) = load_checkpoint(&args.checkpoint)?;
    let g = graph_from_json(&std::fs::read_to_string(&args.graph)?)?;
    let mut tape = Tape::new();
    let bound = stack.bind(&mut tape);
    let fwd = bound.forward(&mut tape, &g, meta.task, ForwardMode::Eval, false)?;
    let ndrs = ndr_per_layer(&mut tape, &g, &fwd.hidden, false)?;
    println!("checkpoint: task {:?}, seed {}, epoch {}", meta.task, meta.seed, meta.epoch);
    println!("layer  mean_ndr   l2_ndr     valid/total");
    for v in &ndrs {
        println!(
            "{:5}  {:9.6}  {:9.6}  {}/{}",
            v.layer,
            v.summary(smoothkit::distill::IndicatorStat::Mean),
            v.summary(smoothkit::distill::IndicatorStat::L2),
            v.n_valid(),
            g.n_nodes()
        );
    }
    Ok(())
}

fn cmd_convert(cmd: &ConvertCmd) -> Result<()> {
    match cmd {
        ConvertCmd::Citation { content, cites, out } => {
            let loaded = load_citation(content, cites)?;
            if loaded.dangling > 0 {
                eprintln!("warning: skipped {} dangling citation lines", loaded.dangling);
            }
            std::fs::write(out, graph_to_json(&loaded.graph))?;
            report_graph(&loaded.graph, out);
        }
        ConvertCmd::Tu { dir, name, out } => {
            let batch: GraphBatch = load_tu(dir, name)?;
            std::fs::write(out, batch_to_json(&batch))?;
            println!(
                "wrote {} graphs, {} classes to {}",
                batch.len(),
                batch.n_classes(),
                out.display()
            );
        }
        ConvertCmd::Sbm {
            blocks,
            nodes_per_block,
            p_in,
            p_out,
            feat_dim,
            seed,
            out,
        } => {
            let g = sbm_generate(*blocks, *nodes_per_block, *p_in, *p_out, *feat_dim, *seed);
            std::fs::write(out, graph_to_json(&g))?;
            report_graph(&g, out);
        }
    }
    Ok(())
}

fn report_graph(g: &Graph, out: &Path) {
    println!(
        "wrote graph: {} nodes, {} edges, {} features, {} classes to {}",
        g.n_nodes(),
        g.n_edges(),
        g.feature_dim(),
        g.n_classes(),
        out.display()
    );
}

fn cmd_check() -> Result<bool> {
    let reports = smoothkit::oracle::run_all()?;
    let mut all_pass = true;
    for r in &reports {
        println!("{r}");
        all_pass &= r.pass;
    }
    Ok(all_pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Grid(args) => cmd_grid(args),
        Command::ProfileNdr(args) => cmd_profile(args),
        Command::Convert(cmd) => cmd_convert(cmd),
        Command::Check => {
            return match cmd_check() {
                Ok(true) => ExitCode::SUCCESS,
                Ok(false) => ExitCode::FAILURE,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
