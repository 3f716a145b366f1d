//! Grid search over loss weights and optimizer settings, ranked by mean
//! validation accuracy over seeds. Combinations run on a small worker pool
//! capped by the `SMOOTHKIT_THREADS` environment variable (default 1).

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::{run_once, TrainConfig, TrainData};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpace {
    #[serde(default)]
    pub alpha: Option<Vec<f64>>,
    #[serde(default)]
    pub beta: Option<Vec<f64>>,
    #[serde(default)]
    pub gamma: Option<Vec<f64>>,
    #[serde(default)]
    pub lr: Option<Vec<f64>>,
    #[serde(default)]
    pub weight_decay: Option<Vec<f64>>,
    #[serde(default)]
    pub drop_edge_ratio: Option<Vec<f64>>,
    /// Each combination is averaged over these seeds.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridRow {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub drop_edge_ratio: f64,
    pub n_seeds: usize,
    pub mean_val_acc: f64,
    pub mean_test_acc: f64,
}

#[derive(Clone, Debug)]
pub struct GridOutcome {
    /// Ranked best-first by mean validation accuracy.
    pub rows: Vec<GridRow>,
}

impl GridOutcome {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "rank,alpha,beta,gamma,lr,weight_decay,drop_edge_ratio,n_seeds,mean_val_acc,mean_test_acc\n",
        );
        for (rank, r) in self.rows.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{:.6},{:.6}\n",
                rank + 1,
                r.alpha,
                r.beta,
                r.gamma,
                r.lr,
                r.weight_decay,
                r.drop_edge_ratio,
                r.n_seeds,
                r.mean_val_acc,
                r.mean_test_acc
            ));
        }
        out
    }
}

/// Worker cap from `SMOOTHKIT_THREADS`; absent, empty or unparsable means 1.
pub fn worker_count() -> usize {
    std::env::var("SMOOTHKIT_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n >= 1)
        .unwrap_or(1)
}

fn axis(values: &Option<Vec<f64>>, fallback: f64) -> Vec<f64> {
    match values {
        Some(v) if !v.is_empty() => v.clone(),
        _ => vec![fallback],
    }
}

/// Run every combination in the (finite) cartesian space and rank the
/// results. Each worker trains on its own copy of nothing: the dataset is
/// shared read-only.
pub fn grid_search(data: &TrainData, base: &TrainConfig, space: &GridSpace) -> Result<GridOutcome> {
    base.validate()?;
    let alphas = axis(&space.alpha, base.distill.alpha);
    let betas = axis(&space.beta, base.distill.beta);
    let gammas = axis(&space.gamma, base.distill.gamma);
    let lrs = axis(&space.lr, base.lr);
    let wds = axis(&space.weight_decay, base.weight_decay);
    let des = axis(&space.drop_edge_ratio, base.drop_edge_ratio);
    let seeds = match &space.seeds {
        Some(s) if !s.is_empty() => s.clone(),
        _ => vec![base.seed],
    };

    let mut combos = Vec::new();
    for &a in &alphas {
        for &b in &betas {
            for &g in &gammas {
                for &lr in &lrs {
                    for &wd in &wds {
                        for &de in &des {
                            combos.push((a, b, g, lr, wd, de));
                        }
                    }
                }
            }
        }
    }

    let run_combo = |&(a, b, g, lr, wd, de): &(f64, f64, f64, f64, f64, f64)| -> Result<GridRow> {
        let mut val_sum = 0.0;
        let mut test_sum = 0.0;
        for &seed in &seeds {
            let mut cfg = base.clone();
            cfg.distill.alpha = a;
            cfg.distill.beta = b;
            cfg.distill.gamma = g;
            cfg.lr = lr;
            cfg.weight_decay = wd;
            cfg.drop_edge_ratio = de;
            cfg.seed = seed;
            let (val, test) = run_once(data, &cfg)?;
            val_sum += val;
            test_sum += test;
        }
        Ok(GridRow {
            alpha: a,
            beta: b,
            gamma: g,
            lr,
            weight_decay: wd,
            drop_edge_ratio: de,
            n_seeds: seeds.len(),
            mean_val_acc: val_sum / seeds.len() as f64,
            mean_test_acc: test_sum / seeds.len() as f64,
        })
    };

    let workers = worker_count().min(combos.len().max(1));
    let mut rows: Vec<GridRow> = if workers <= 1 {
        combos.iter().map(run_combo).collect::<Result<_>>()?
    } else {
        let next = Mutex::new(0usize);
        let results: Mutex<Vec<Option<Result<GridRow>>>> =
            Mutex::new((0..combos.len()).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let idx = {
                        let mut n = next.lock().unwrap();
                        if *n >= combos.len() {
                            break;
                        }
                        let idx = *n;
                        *n += 1;
                        idx
                    };
                    let row = run_combo(&combos[idx]);
                    results.lock().unwrap()[idx] = Some(row);
                });
            }
        });
        results
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|r| r.ok_or_else(|| Error::Config("grid worker dropped a job".into()))?)
            .collect::<Result<_>>()?
    };

    rows.sort_by(|a, b| {
        let ka = if a.mean_val_acc.is_nan() { f64::NEG_INFINITY } else { a.mean_val_acc };
        let kb = if b.mean_val_acc.is_nan() { f64::NEG_INFINITY } else { b.mean_val_acc };
        kb.partial_cmp(&ka).unwrap()
    });
    Ok(GridOutcome { rows })
}
