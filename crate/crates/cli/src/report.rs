//! The `report.json` emitted by every run. The schema ships in
//! `docs/report.schema.json`; emission goes through typed structs so the
//! field order (and therefore the bytes) is a pure function of the run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use fairmtl_core::metrics::MetricsReport;
use fairmtl_core::{Error, Result};

use crate::config::ExperimentConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Final test metrics of the best checkpoint, plus relative aggregates when
/// a same-seed single-task reference exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub acc: Vec<f64>,
    pub eo: Vec<f64>,
    pub ara: Option<f64>,
    pub areo: Option<f64>,
    /// Mean over tasks of `acc - eo`.
    pub composite: f64,
}

/// One training segment: the whole run for multi-task methods, one per task
/// for stl.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub label: String,
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Per-epoch validation metrics.
    pub validation_history: Vec<MetricsReport>,
}

/// Files written alongside the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactList {
    pub trace: String,
    pub checkpoints: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub method: String,
    pub seed: u64,
    /// Echo of the experiment configuration the run was launched with.
    pub config: ExperimentConfig,
    pub segments: Vec<SegmentReport>,
    #[serde(rename = "final")]
    pub final_metrics: FinalMetrics,
    pub artifacts: ArtifactList,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report always serializes");
        out.push('\n');
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&content)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_config() -> ExperimentConfig {
        serde_json::from_str(
            r#"{
                "trunk_dims": [4, 8],
                "n_tasks": 2,
                "data": {"synthetic": {"n": 100, "d": 4, "n_tasks": 2, "bias": [0.4, 0.4], "noise": 0.05}},
                "out_dir": "out",
                "methods": ["vanilla"],
                "seeds": [1]
            }"#,
        )
        .unwrap()
    }

    fn sample_report() -> RunReport {
        RunReport {
            schema_version: SCHEMA_VERSION,
            method: "vanilla".into(),
            seed: 1,
            config: sample_config(),
            segments: vec![SegmentReport {
                label: "all".into(),
                epochs_run: 2,
                best_epoch: 1,
                validation_history: vec![
                    MetricsReport {
                        acc: vec![0.6, 0.7],
                        eo: vec![0.2, 0.1],
                        ara: None,
                        areo: None,
                    },
                    MetricsReport {
                        acc: vec![0.7, 0.8],
                        eo: vec![0.15, 0.1],
                        ara: None,
                        areo: None,
                    },
                ],
            }],
            final_metrics: FinalMetrics {
                acc: vec![0.7, 0.8],
                eo: vec![0.15, 0.1],
                ara: None,
                areo: None,
                composite: 0.625,
            },
            artifacts: ArtifactList {
                trace: "trace.csv".into(),
                checkpoints: vec!["checkpoint.bin".into()],
            },
        }
    }

    #[test]
    fn report_round_trips() {
        let report = sample_report();
        let json = report.to_json();
        let back: RunReport = serde_json::from_str(&json).unwrap();
        assert_eq!(report, back);
    }

    #[test]
    fn serialization_is_stable() {
        let report = sample_report();
        assert_eq!(report.to_json(), report.to_json());
        let json = report.to_json();
        assert!(json.contains("\"final\""));
        assert!(json.contains("\"schema_version\": 1"));
    }
}
