//! Per-epoch training metrics and their CSV form.

use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// One training epoch worth of measurements.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub loss_ce: f64,
    pub loss_logit: f64,
    pub loss_ndr: f64,
    pub loss_graph: f64,
    pub loss_total: f64,
    /// Summary per layer 1..L; empty when NDR logging is off.
    pub ndr_summaries: Vec<f64>,
    /// 0 when the retaining loss was not evaluated this epoch.
    pub l_star: usize,
    /// One '0'/'1' per adjacent layer pair; empty when not evaluated.
    pub indicator_pattern: String,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub seconds: f64,
}

/// Append-only per-epoch log; one row per epoch.
#[derive(Clone, Debug)]
pub struct MetricsLog {
    /// Number of model layers (fixes the NDR column count).
    pub n_layers: usize,
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn new(n_layers: usize) -> Self {
        MetricsLog {
            n_layers,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: MetricsRow) {
        self.rows.push(row);
    }

    pub fn header(&self) -> String {
        let mut cols = vec![
            "epoch".to_string(),
            "loss_ce".into(),
            "loss_logit".into(),
            "loss_ndr".into(),
            "loss_graph".into(),
            "loss_total".into(),
        ];
        for l in 1..=self.n_layers {
            cols.push(format!("ndr_{l}"));
        }
        cols.extend([
            "l_star".into(),
            "indicator_pattern".into(),
            "train_acc".into(),
            "val_acc".into(),
            "test_acc".into(),
            "seconds".into(),
        ]);
        cols.join(",")
    }

    fn format_row(&self, row: &MetricsRow) -> String {
        let mut fields = vec![
            row.epoch.to_string(),
            format!("{:.9}", row.loss_ce),
            format!("{:.9}", row.loss_logit),
            format!("{:.9}", row.loss_ndr),
            format!("{:.9}", row.loss_graph),
            format!("{:.9}", row.loss_total),
        ];
        for l in 0..self.n_layers {
            match row.ndr_summaries.get(l) {
                Some(v) => fields.push(format!("{v:.9}")),
                None => fields.push(String::new()),
            }
        }
        fields.push(row.l_star.to_string());
        fields.push(row.indicator_pattern.clone());
        fields.push(format!("{:.6}", row.train_acc));
        fields.push(format!("{:.6}", row.val_acc));
        fields.push(format!("{:.6}", row.test_acc));
        fields.push(format!("{:.4}", row.seconds));
        fields.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for row in &self.rows {
            out.push_str(&self.format_row(row));
            out.push('\n');
        }
        out
    }

    /// CSV with the wall-clock column stripped, for determinism comparisons.
    pub fn to_csv_without_time(&self) -> String {
        self.to_csv()
            .lines()
            .map(|l| match l.rfind(',') {
                Some(idx) => &l[..idx],
                None => l,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}
