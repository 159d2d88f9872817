//! Experiment reports and trajectory tables.

use std::path::Path;

use recycle_core::eval::{BleuScore, SignificanceResult};
use recycle_core::nmt::TrajectoryPoint;
use recycle_core::stats::FragmentationReport;
use recycle_core::transform::MappingReport;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::experiment::ExperimentSpec;
use crate::io::write_tsv;

/// Relative reduction in steps, in percent.
pub fn speedup_pct(baseline_steps: u64, method_steps: u64) -> f64 {
    if baseline_steps == 0 {
        return 0.0;
    }
    (baseline_steps as f64 - method_steps as f64) / baseline_steps as f64 * 100.0
}

/// First local step at which dev BLEU reaches `target`.
pub fn steps_to_reach(trajectory: &[TrajectoryPoint], target: f64) -> Option<u64> {
    trajectory.iter().find(|p| p.bleu >= target).map(|p| p.step)
}

pub fn write_trajectory(path: &Path, trajectory: &[TrajectoryPoint]) -> Result<()> {
    let rows: Vec<Vec<String>> = trajectory
        .iter()
        .map(|p| vec![p.step.to_string(), format!("{:.4}", p.bleu), format!("{:.6}", p.loss), format!("{:.6e}", p.lr)])
        .collect();
    write_tsv(path, &["step", "bleu", "loss", "lr"], &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParentInfo {
    /// False when the parent came from an existing checkpoint.
    pub trained_here: bool,
    pub step: u64,
    pub best_dev_bleu: Option<f64>,
    pub vocab_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline_report: String,
    pub baseline_mode: String,
    pub baseline_test_bleu: f64,
    pub baseline_best_dev_bleu: f64,
    pub baseline_steps: u64,
    pub delta_bleu: f64,
    pub speedup_pct: f64,
    /// Steps this run needed to reach the baseline's best dev BLEU.
    pub steps_to_baseline_best: Option<u64>,
    /// This run (B) against the baseline (A).
    pub better_than_baseline: SignificanceResult,
    /// The baseline (B) against this run (A).
    pub worse_than_baseline: SignificanceResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub mode: String,
    pub freeze: String,
    pub parent: Option<ParentInfo>,
    pub vocab_hash: String,
    pub vocab_size: usize,
    pub mapping: Option<MappingReport>,
    /// Child training targets under the vocabulary the child trains with.
    pub target_fragmentation: FragmentationReport,
    pub best_dev_bleu: f64,
    /// Updates until the checkpoint selected on dev.
    pub steps_to_best: u64,
    pub steps_trained: u64,
    pub stopped_early: bool,
    pub moments_carried: bool,
    pub first_lr: Option<f64>,
    pub filtered_train: usize,
    pub test: BleuScore,
    pub signature: String,
    /// File name of the test translations inside the output directory.
    pub test_hypotheses: String,
    pub comparison: Option<Comparison>,
    pub trajectory: Vec<TrajectoryPoint>,
}

pub const TABLE_HEADER: [&str; 6] = ["system", "BLEU", "Steps", "dBLEU", "Speed-up", "signature"];

impl ExperimentReport {
    pub fn table_row(&self) -> Vec<String> {
        let (delta, speed) = match &self.comparison {
            Some(c) => (format!("{:+.2}", c.delta_bleu), format!("{:.0}%", c.speedup_pct)),
            None => ("-".into(), "-".into()),
        };
        vec![
            self.mode.clone(),
            format!("{:.2}", self.test.score),
            self.steps_to_best.to_string(),
            delta,
            speed,
            self.signature.clone(),
        ]
    }

    pub fn write_table(&self, path: &Path) -> Result<()> {
        write_tsv(path, &TABLE_HEADER, &[self.table_row()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn speedup_of_published_steps() {
        assert_eq!(speedup_pct(270_000, 110_000).round(), 59.0);
        assert_eq!(speedup_pct(100, 100), 0.0);
        assert!(speedup_pct(100, 150) < 0.0);
        assert_eq!(speedup_pct(0, 5), 0.0);
    }

    #[test]
    fn reach_uses_first_point() {
        let t: Vec<TrajectoryPoint> = [(0, 0.0), (100, 5.0), (200, 9.0), (300, 8.0)]
            .iter()
            .map(|&(step, bleu)| TrajectoryPoint { step, bleu, ..Default::default() })
            .collect();
        assert_eq!(steps_to_reach(&t, 8.0), Some(200));
        assert_eq!(steps_to_reach(&t, 0.0), Some(0));
        assert_eq!(steps_to_reach(&t, 9.5), None);
    }
}
