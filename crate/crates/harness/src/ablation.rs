//! Ablation grids over schedules, pretrained branches, fusion modes and
//! single modalities.

use std::fmt::{self, Display, Write as _};
use std::path::Path;
use std::str::FromStr;

use log::{info, warn};
use trisleep_core::{FusionMode, MetricsReport, Schedule};
use trisleep_sync::{Modality, Trimodal};

use crate::config::ExperimentConfig;
use crate::data::Splits;
use crate::error::Result;
use crate::experiment::{run_finetune, run_pretrain, save_pretrained};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Schedules,
    Pretraining,
    Fusion,
    Modalities,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Schedules, Suite::Pretraining, Suite::Fusion, Suite::Modalities];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Schedules => "schedules",
            Suite::Pretraining => "pretraining",
            Suite::Fusion => "fusion",
            Suite::Modalities => "modalities",
        }
    }

    /// Row labels in table order.
    pub fn rows(self) -> Vec<String> {
        match self {
            Suite::Schedules => Schedule::PRESETS.iter().map(|s| s.to_string()).collect(),
            Suite::Pretraining => PRETRAINING_ROWS.iter().map(|(label, _)| label.to_string()).collect(),
            Suite::Fusion => ["early", "late", "cross"].map(String::from).to_vec(),
            Suite::Modalities => ["audio", "ecg", "imu", "cross"].map(String::from).to_vec(),
        }
    }
}

impl Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| format!("unknown suite `{s}` (expected schedules, pretraining, fusion or modalities)"))
    }
}

/// Pretrained branch subsets, as `(label, [audio, ecg, imu])`.
pub const PRETRAINING_ROWS: [(&str, [bool; 3]); 5] = [
    ("none", [false, false, false]),
    ("imu", [false, false, true]),
    ("audio+imu", [true, false, true]),
    ("ecg+imu", [false, true, true]),
    ("all", [true, true, true]),
];

#[derive(Debug, Clone)]
pub enum CellStatus {
    Converged(MetricsReport),
    NonFinite,
    NoImprovement,
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub label: String,
    pub status: CellStatus,
    pub initial_test_loss: Option<f64>,
    pub test_loss: Option<f64>,
}

impl Cell {
    pub fn report(&self) -> Option<&MetricsReport> {
        match &self.status {
            CellStatus::Converged(r) => Some(r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub suite: Suite,
    pub cells: Vec<Cell>,
}

fn metric(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

impl AblationTable {
    pub fn cell(&self, label: &str) -> Option<&Cell> {
        self.cells.iter().find(|c| c.label == label)
    }

    /// Aligned text table; metrics of non-converged cells read `-`.
    pub fn to_text(&self) -> String {
        let header = ["setting", "accuracy", "f1", "kappa", "test_ce", "status"];
        let mut rows = vec![header.map(String::from).to_vec()];
        for c in &self.cells {
            let r = c.report();
            let status = match &c.status {
                CellStatus::Converged(_) => "ok".to_string(),
                CellStatus::NonFinite => "non-finite loss".to_string(),
                CellStatus::NoImprovement => "no improvement".to_string(),
                CellStatus::Failed(e) => format!("failed: {e}"),
            };
            rows.push(vec![
                c.label.clone(),
                metric(r.map(|r| r.accuracy)),
                metric(r.and_then(|r| r.f1)),
                metric(r.and_then(|r| r.kappa)),
                metric(r.and(c.test_loss)),
                status,
            ]);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = format!("# suite: {}\n", self.suite);
        for row in rows {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (v, w))| if j + 1 == widths.len() { v.clone() } else { format!("{v:<w$}") })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }

    pub fn to_json(&self) -> String {
        let cells: Vec<serde_json::Value> = self
            .cells
            .iter()
            .map(|c| {
                let status = match &c.status {
                    CellStatus::Converged(_) => "ok".to_string(),
                    CellStatus::NonFinite => "non-finite".to_string(),
                    CellStatus::NoImprovement => "no-improvement".to_string(),
                    CellStatus::Failed(e) => format!("failed: {e}"),
                };
                let r = c.report();
                serde_json::json!({
                    "setting": c.label,
                    "status": status,
                    "accuracy": r.map(|r| r.accuracy),
                    "precision": r.and_then(|r| r.precision),
                    "recall": r.and_then(|r| r.recall),
                    "f1": r.and_then(|r| r.f1),
                    "kappa": r.and_then(|r| r.kappa),
                    "initial_test_loss": c.initial_test_loss,
                    "test_loss": c.test_loss,
                })
            })
            .collect();
        let value = serde_json::json!({ "suite": self.suite.name(), "cells": cells });
        serde_json::to_string_pretty(&value).expect("plain values serialize")
    }
}

/// The configs of every cell in `suite`, derived from `base`. The
/// pretraining suite refers to `pretrained_<modality>.lbck` in `workdir`.
pub fn suite_configs(suite: Suite, base: &ExperimentConfig, workdir: &Path) -> Result<Vec<(String, ExperimentConfig)>> {
    let mut out = Vec::new();
    for label in suite.rows() {
        let mut cfg = base.clone();
        match suite {
            Suite::Schedules => {
                cfg.fusion = FusionMode::Cross;
                cfg.schedule = label.parse()?;
            }
            Suite::Pretraining => {
                let (_, used) = PRETRAINING_ROWS
                    .iter()
                    .find(|(l, _)| *l == label)
                    .expect("rows come from the table");
                cfg.pretrained = Trimodal::from_fn(|m| {
                    used[m.code() as usize].then(|| workdir.join(format!("pretrained_{}.lbck", m.name())))
                });
            }
            Suite::Fusion | Suite::Modalities => cfg.fusion = label.parse()?,
        }
        out.push((label, cfg));
    }
    Ok(out)
}

fn run_cell(label: String, cfg: &ExperimentConfig, splits: &Splits) -> Cell {
    match run_finetune(cfg, splits) {
        Ok(run) => {
            let status = if !run.history.losses.iter().all(|l| l.is_finite()) || !run.test_loss.is_finite() {
                CellStatus::NonFinite
            } else if run.test_loss >= run.initial_test_loss {
                CellStatus::NoImprovement
            } else {
                CellStatus::Converged(run.report)
            };
            info!("{label}: {:.4} -> {:.4} test CE", run.initial_test_loss, run.test_loss);
            Cell {
                label,
                status,
                initial_test_loss: Some(run.initial_test_loss),
                test_loss: Some(run.test_loss),
            }
        }
        Err(e) => {
            warn!("{label}: {e}");
            Cell {
                label,
                status: CellStatus::Failed(e.to_string()),
                initial_test_loss: None,
                test_loss: None,
            }
        }
    }
}

/// Runs every cell of `suite`. Cells that fail or do not converge are kept
/// in the table with `-` metrics.
pub fn run_ablation(suite: Suite, base: &ExperimentConfig, splits: &Splits, workdir: &Path) -> Result<AblationTable> {
    base.seed()?;
    if suite == Suite::Pretraining {
        let outcomes = run_pretrain(base, &Modality::ALL)?;
        save_pretrained(base, &outcomes, workdir)?;
    }
    let cells = suite_configs(suite, base, workdir)?
        .into_iter()
        .map(|(label, cfg)| run_cell(label, &cfg, splits))
        .collect();
    Ok(AblationTable { suite, cells })
}

