//! End-to-end orchestration: stages with persisted, hash-checked outputs.
//!
//! Every stage writes under `<out>/<stage>/` and records a manifest in
//! `<out>/manifests/`. A stage whose manifest still matches the
//! configuration and the current file hashes is reused instead of rerun.
//! Inputs from different observation points are assumed frame-aligned.

pub mod config;
pub mod dataset;
pub mod manifest;
pub mod plot;
pub mod report;
pub mod stages;

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{derive_seed, ObservationPoint, PointRole, SiteConfig};
pub use dataset::{build_dataset, prepare_series, Dataset, PreparedSeries, QualityCounters};
pub use manifest::{sha256_file, Manifest, StageIo};
pub use plot::{emit_plot_data, PlotSeries};
pub use report::{assemble_report, RunReport, StageStatus, StageTiming};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Simulate,
    Track,
    Params,
    Preprocess,
    Train,
    Predict,
    Warn,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Simulate,
        Stage::Track,
        Stage::Params,
        Stage::Preprocess,
        Stage::Train,
        Stage::Predict,
        Stage::Warn,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Track => "track",
            Stage::Params => "params",
            Stage::Preprocess => "preprocess",
            Stage::Train => "train",
            Stage::Predict => "predict",
            Stage::Warn => "warn",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    /// Parses a comma-separated list such as `track,params`, or `all`.
    pub fn parse_list(text: &str) -> Result<Vec<Stage>> {
        if text.trim() == "all" {
            return Ok(Stage::ALL.to_vec());
        }
        let mut out = text
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(Stage::from_str)
            .collect::<Result<Vec<_>>>()?;
        if out.is_empty() {
            return Err(Error::Config("stages: empty stage list".into()));
        }
        out.sort();
        out.dedup();
        Ok(out)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config(format!("stages: unknown stage `{s}`")))
    }
}

pub const TIMINGS: &str = "timings.json";

fn tag(stage: Stage, e: Error) -> Error {
    Error::Stage {
        stage: stage.as_str().into(),
        source: Box::new(e),
    }
}

/// Runs the selected stages in pipeline order. A failing stage stops the
/// run; files it already wrote are kept but its manifest is not.
pub fn run_pipeline(cfg: &SiteConfig, out: &Path, stages: &[Stage]) -> Result<RunReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut selected = stages.to_vec();
    selected.sort();
    selected.dedup();
    let fingerprint = cfg.fingerprint();
    let mut timings = Vec::with_capacity(selected.len());

    for stage in selected {
        let started = Instant::now();
        let current = Manifest::load(out, stage.as_str()).is_some_and(|m| m.is_current(out, &fingerprint));
        let status = if current {
            log::info!("{stage}: outputs current, reusing");
            StageStatus::Reused
        } else {
            log::info!("{stage}: running");
            Manifest::remove(out, stage.as_str()).map_err(|e| tag(stage, e))?;
            let mut io = StageIo::new(out);
            stages::run(stage, cfg, &mut io).map_err(|e| tag(stage, e))?;
            io.into_manifest(stage.as_str(), &fingerprint)
                .and_then(|m| m.save(out))
                .map_err(|e| tag(stage, e))?;
            StageStatus::Ran
        };
        timings.push(StageTiming {
            stage,
            status,
            seconds: started.elapsed().as_secs_f64(),
        });
    }

    let path = out.join(TIMINGS);
    std::fs::write(&path, serde_json::to_string_pretty(&timings)?).map_err(|e| Error::io(&path, e))?;
    let mut report = assemble_report(cfg, out)?;
    report.timings = timings;
    Ok(report)
}
