//! Site configuration: observation points, segment topology and every
//! stage setting, read from a single TOML document.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::congestion::CongestionConfig;
use crate::error::{Error, Result};
use crate::flow::{DetectionLinePair, SegmentGeometry, SpeedModel, SpeedModelParams};
use crate::neural::{LogisticConfig, ModelKind, TrainConfig};
use crate::preprocess::CleanConfig;
use crate::scenario::{FeatureNoise, TrajectoryScenario};
use crate::tracking::TrackerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointRole {
    /// Split chronologically into training and validation parts.
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationPoint {
    pub id: String,
    pub role: PointRole,
    pub lines: DetectionLinePair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSettings {
    /// Length of each point's parameter series, minutes.
    pub duration_min: f64,
    /// Congestion events per point.
    pub events: usize,
    pub noise: FeatureNoise,
    /// Share of samples replaced by gross measurement errors, half of
    /// them impossible speeds and half density spikes.
    pub outlier_fraction: f64,
    /// Template for each point's tracking clip; the seed is replaced.
    pub trajectory: TrajectoryScenario,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        SimulationSettings {
            duration_min: 500.0,
            events: 3,
            noise: FeatureNoise::default(),
            outlier_fraction: 0.01,
            trajectory: TrajectoryScenario::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSettings {
    pub seq_len: usize,
    /// Label horizon in minutes; defaults to the warning lead.
    pub horizon_min: Option<f64>,
    pub train_stride: usize,
    pub test_stride: usize,
}

impl Default for WindowSettings {
    fn default() -> Self {
        WindowSettings {
            seq_len: 10,
            horizon_min: None,
            train_stride: 10,
            test_stride: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub hidden_dim: usize,
    pub attention_dim: Option<usize>,
    /// Model whose probabilities drive the warnings.
    pub warning_model: ModelKind,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            hidden_dim: 64,
            attention_dim: None,
            warning_model: ModelKind::GruAttention,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SiteConfig {
    pub seed: u64,
    pub fps: f64,
    /// Frames between parameter samples.
    pub sample_every: u64,
    /// Share of each training point's series used for training; the rest
    /// is validation.
    pub train_fraction: f64,
    pub points: Vec<ObservationPoint>,
    pub segments: Vec<SegmentGeometry>,
    pub speed: SpeedModelParams,
    pub congestion: CongestionConfig,
    pub clean: CleanConfig,
    pub simulation: SimulationSettings,
    pub window: WindowSettings,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub logistic: LogisticConfig,
    pub tracker: TrackerConfig,
}

impl Default for SiteConfig {
    fn default() -> Self {
        let ids = ["32.31.250.103", "32.31.250.105", "32.31.250.107", "32.31.250.108"];
        let points = ids
            .iter()
            .enumerate()
            .map(|(i, id)| ObservationPoint {
                id: id.to_string(),
                role: if i < 3 { PointRole::Train } else { PointRole::Test },
                lines: DetectionLinePair::vertical(600.0, 80.0, 280.0, 400.0),
            })
            .collect();
        let segments = ids
            .windows(2)
            .zip([2.5, 2.5, 3.0])
            .map(|(pair, length_km)| SegmentGeometry {
                length_km,
                lanes: 2,
                upstream_point: pair[0].to_string(),
                downstream_point: pair[1].to_string(),
            })
            .collect();
        SiteConfig {
            seed: 2024,
            fps: 25.0,
            sample_every: 25,
            train_fraction: 0.7,
            points,
            segments,
            speed: SpeedModelParams {
                model: SpeedModel::Greenberg,
                ..SpeedModelParams::default()
            },
            congestion: CongestionConfig::default(),
            // congested Greenberg speeds sit far below the 60 km/h default
            clean: CleanConfig {
                speed_min: 0.0,
                ..CleanConfig::default()
            },
            simulation: SimulationSettings::default(),
            window: WindowSettings::default(),
            model: ModelSettings::default(),
            train: TrainConfig {
                epochs: 40,
                early_stop_patience: 5,
                ..TrainConfig::default()
            },
            logistic: LogisticConfig::default(),
            tracker: TrackerConfig::deep_sort(),
        }
    }
}

fn field(path: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{path}: {msg}"))
}

fn with_path(path: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        Error::Config(m) => field(path, m),
        other => other,
    })
}

impl SiteConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SiteConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Seconds between parameter samples.
    pub fn sample_period_s(&self) -> f64 {
        self.sample_every as f64 / self.fps
    }

    /// Label horizon in samples.
    pub fn horizon_samples(&self) -> usize {
        let minutes = self.window.horizon_min.unwrap_or(self.congestion.warning_lead_min);
        (minutes * 60.0 / self.sample_period_s()).round() as usize
    }

    /// Segment used for a point's density: the one it feeds, or for the
    /// last point the one it closes.
    pub fn segment_for(&self, point: &str) -> Option<&SegmentGeometry> {
        self.segments
            .iter()
            .find(|s| s.upstream_point == point)
            .or_else(|| self.segments.iter().find(|s| s.downstream_point == point))
    }

    pub fn points_with(&self, role: PointRole) -> impl Iterator<Item = (usize, &ObservationPoint)> {
        self.points.iter().enumerate().filter(move |(_, p)| p.role == role)
    }

    /// Hex sha256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(field("fps", "must be positive"));
        }
        if self.sample_every == 0 {
            return Err(field("sample_every", "must be positive"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(field("train_fraction", "must lie in (0, 1)"));
        }
        if self.points.is_empty() {
            return Err(field("points", "at least one observation point is required"));
        }
        let mut ids = BTreeSet::new();
        for (i, p) in self.points.iter().enumerate() {
            let path = format!("points[{i}]");
            if p.id.is_empty() || p.id.contains(['/', '\\']) || p.id.starts_with('.') {
                return Err(field(&format!("{path}.id"), format!("`{}` is not a usable point id", p.id)));
            }
            if !ids.insert(p.id.as_str()) {
                return Err(field(&format!("{path}.id"), format!("duplicate point `{}`", p.id)));
            }
            with_path(&format!("{path}.lines"), p.lines.validate())?;
        }
        if self.points_with(PointRole::Train).next().is_none() {
            return Err(field("points", "no point has role `train`"));
        }
        if self.points_with(PointRole::Test).next().is_none() {
            return Err(field("points", "no point has role `test`"));
        }
        for (i, s) in self.segments.iter().enumerate() {
            let path = format!("segments[{i}]");
            with_path(&path, s.validate())?;
            for (name, id) in [("upstream_point", &s.upstream_point), ("downstream_point", &s.downstream_point)] {
                if !ids.contains(id.as_str()) {
                    return Err(field(&format!("{path}.{name}"), format!("undefined point `{id}`")));
                }
            }
        }
        for p in &self.points {
            if self.segment_for(&p.id).is_none() {
                return Err(field("segments", format!("point `{}` belongs to no segment", p.id)));
            }
        }
        with_path("speed", self.speed.validate())?;
        with_path("congestion", self.congestion.validate())?;
        if !(self.clean.speed_min < self.clean.speed_max && self.clean.sigma_k > 0.0) {
            return Err(field("clean", "need speed_min < speed_max and sigma_k > 0"));
        }
        let sim = &self.simulation;
        if !(sim.duration_min > 0.0) {
            return Err(field("simulation.duration_min", "must be positive"));
        }
        if !(0.0..=1.0).contains(&sim.outlier_fraction) {
            return Err(field("simulation.outlier_fraction", "must lie in [0, 1]"));
        }
        with_path("simulation.trajectory", sim.trajectory.validate())?;
        let w = &self.window;
        if w.seq_len == 0 || w.train_stride == 0 || w.test_stride == 0 {
            return Err(field("window", "seq_len and strides must be positive"));
        }
        if w.horizon_min.is_some_and(|h| !(h > 0.0)) {
            return Err(field("window.horizon_min", "must be positive"));
        }
        if self.model.hidden_dim == 0 || self.model.attention_dim == Some(0) {
            return Err(field("model", "dimensions must be positive"));
        }
        with_path("train", self.train.validate())?;
        if !(self.logistic.learning_rate > 0.0) {
            return Err(field("logistic.learning_rate", "must be positive"));
        }
        with_path("tracker", self.tracker.validate())
    }
}

/// Derives an independent seed for one consumer of randomness from the
/// run's top-level seed.
pub fn derive_seed(root: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(tag.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
