//! Run report: data-quality counters, metric tables and artifact paths.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::SiteConfig;
use super::dataset::QualityCounters;
use super::stages::{load_metrics, load_quality, manifest_outputs, EvaluationSummary};
use super::Stage;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ran,
    /// Outputs from an earlier run were still current.
    Reused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub status: StageStatus,
    pub seconds: f64,
}

/// Summary of a run. Timings are kept out of the serialized report, which
/// must be identical across runs with the same seed; they are written to
/// `timings.json` instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub config_fingerprint: String,
    pub quality: BTreeMap<String, QualityCounters>,
    pub metrics: Option<EvaluationSummary>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    #[serde(skip)]
    pub timings: Vec<StageTiming>,
}

/// Builds a report from whatever the stages have written so far.
pub fn assemble_report(cfg: &SiteConfig, out: &Path) -> Result<RunReport> {
    let mut artifacts = manifest_outputs(out);
    artifacts.sort();
    artifacts.dedup();
    Ok(RunReport {
        seed: cfg.seed,
        config_fingerprint: cfg.fingerprint(),
        quality: load_quality(out)?,
        metrics: load_metrics(out)?,
        artifacts,
        timings: Vec::new(),
    })
}
