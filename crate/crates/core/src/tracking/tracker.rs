//! Tracking-by-detection: per-frame predict, associate, update and manage
//! track lifecycle. IoU-only association reproduces SORT; fused association
//! combines a gated Mahalanobis motion term with appearance cosine distance.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::assignment::hungarian_assign;
use super::kalman::{
    kalman_predict, kalman_update, mahalanobis_sq, projected_inverse, KalmanModel, TrackState,
};
use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};

/// Measurement dimension: (cx, cy, area, aspect).
pub const MEASUREMENT_DIM: usize = 4;
/// State dimension: measurement plus one velocity per component.
pub const STATE_DIM: usize = 2 * MEASUREMENT_DIM;

/// 0.95 quantile of the chi-square distribution with 4 degrees of freedom.
pub const CHI2_95_4DOF: f64 = 9.4877;

const EMBEDDING_NORM_TOL: f64 = 1e-6;

/// A single detector output for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub embedding: Option<Vec<f64>>,
}

impl Detection {
    pub fn new(bbox: BoundingBox, embedding: Option<Vec<f64>>) -> Result<Self> {
        let d = Detection { bbox, embedding };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if let Some(e) = &self.embedding {
            let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > EMBEDDING_NORM_TOL {
                return Err(Error::Data(format!(
                    "embedding norm {norm} is not 1 within {EMBEDDING_NORM_TOL}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Deleted,
}

impl TrackStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrackStatus::Tentative => "tentative",
            TrackStatus::Confirmed => "confirmed",
            TrackStatus::Deleted => "deleted",
        }
    }
}

impl std::str::FromStr for TrackStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tentative" => Ok(TrackStatus::Tentative),
            "confirmed" => Ok(TrackStatus::Confirmed),
            "deleted" => Ok(TrackStatus::Deleted),
            other => Err(Error::Data(format!("unknown track status `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Track {
    pub id: u64,
    pub state: TrackState,
    /// Most recent appearance embeddings, oldest first.
    pub gallery: VecDeque<Vec<f64>>,
    /// Consecutive frames with a matched detection.
    pub hits: u32,
    /// Consecutive frames without a matched detection.
    pub misses: u32,
    pub status: TrackStatus,
}

impl Track {
    pub fn bbox(&self) -> BoundingBox {
        state_to_box(&self.state.mean)
    }
}

/// Motion and appearance noise scaling, relative to the box height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub position_weight: f64,
    pub velocity_weight: f64,
    /// Process noise of the aspect ratio.
    pub aspect_std: f64,
    pub aspect_velocity_std: f64,
    /// Measurement noise of the aspect ratio.
    pub aspect_measurement_std: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            position_weight: 1.0 / 20.0,
            velocity_weight: 1.0 / 160.0,
            aspect_std: 1e-2,
            aspect_velocity_std: 1e-5,
            aspect_measurement_std: 1e-1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssociationMode {
    /// `1 - IoU` cost, as in SORT.
    Iou,
    /// `λ·motion + (1-λ)·appearance`.
    Fused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub mode: AssociationMode,
    /// Weight of the motion term in the fused cost.
    pub lambda: f64,
    /// Minimum IoU for a pair to be allowed in IoU mode.
    pub min_iou: f64,
    /// Squared Mahalanobis gate; the motion term is `min(d² / gate, 1)`.
    pub chi2_gate: f64,
    /// Pairs with appearance distance above this are forbidden.
    pub max_cosine_distance: f64,
    pub min_hits: u32,
    pub max_misses: u32,
    pub gallery_capacity: usize,
    pub noise: NoiseConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig::deep_sort()
    }
}

impl TrackerConfig {
    /// Fused motion + appearance association.
    pub fn deep_sort() -> Self {
        TrackerConfig {
            mode: AssociationMode::Fused,
            lambda: 0.7,
            min_iou: 0.3,
            chi2_gate: CHI2_95_4DOF,
            max_cosine_distance: 0.4,
            min_hits: 3,
            max_misses: 30,
            gallery_capacity: 100,
            noise: NoiseConfig::default(),
        }
    }

    /// IoU-only association with SORT's lifecycle: a track is dropped once
    /// it misses more than one consecutive frame.
    pub fn sort() -> Self {
        TrackerConfig {
            mode: AssociationMode::Iou,
            max_misses: 1,
            ..TrackerConfig::deep_sort()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.min_iou) {
            return Err(Error::Config(format!("min_iou {} outside [0, 1]", self.min_iou)));
        }
        if self.chi2_gate <= 0.0 {
            return Err(Error::Config("chi2_gate must be positive".into()));
        }
        if self.min_hits == 0 {
            return Err(Error::Config("min_hits must be at least 1".into()));
        }
        if self.gallery_capacity == 0 {
            return Err(Error::Config("gallery_capacity must be at least 1".into()));
        }
        Ok(())
    }
}

/// Box → measurement `(cx, cy, area, aspect)`.
pub fn box_to_measurement(b: &BoundingBox) -> DVector<f64> {
    DVector::from_vec(vec![b.cx, b.cy, b.w * b.h, b.w / b.h])
}

/// First four state components → box. Area and aspect are floored to keep
/// the box valid when a coasting track's area velocity drives it negative.
pub fn state_to_box(mean: &DVector<f64>) -> BoundingBox {
    let area = mean[2].max(1e-6);
    let aspect = mean[3].max(1e-6);
    let w = (area * aspect).sqrt();
    let h = (area / aspect).sqrt();
    BoundingBox::unit_conf(mean[0], mean[1], w, h)
}

/// Constant-velocity model with noise scaled by the current box size.
pub fn motion_model(b: &BoundingBox, noise: &NoiseConfig) -> KalmanModel {
    let mut model = KalmanModel::constant_velocity(MEASUREMENT_DIM);
    let h = b.h;
    let area = b.area();
    let pos = noise.position_weight * h;
    let vel = noise.velocity_weight * h;
    let q = [
        pos,
        pos,
        2.0 * noise.position_weight * area,
        noise.aspect_std,
        vel,
        vel,
        2.0 * noise.velocity_weight * area,
        noise.aspect_velocity_std,
    ];
    let r = [pos, pos, 2.0 * noise.position_weight * area, noise.aspect_measurement_std];
    model.process_noise = DMatrix::from_diagonal(&DVector::from_iterator(
        STATE_DIM,
        q.iter().map(|s| s * s),
    ));
    model.measurement_noise = DMatrix::from_diagonal(&DVector::from_iterator(
        MEASUREMENT_DIM,
        r.iter().map(|s| s * s),
    ));
    model
}

/// Initial state for a new track: measured position, zero velocity.
pub fn initial_state(b: &BoundingBox, noise: &NoiseConfig) -> TrackState {
    let z = box_to_measurement(b);
    let mut mean = DVector::zeros(STATE_DIM);
    mean.rows_mut(0, MEASUREMENT_DIM).copy_from(&z);
    let h = b.h;
    let area = b.area();
    let std = [
        2.0 * noise.position_weight * h,
        2.0 * noise.position_weight * h,
        4.0 * noise.position_weight * area,
        noise.aspect_std,
        10.0 * noise.velocity_weight * h,
        10.0 * noise.velocity_weight * h,
        20.0 * noise.velocity_weight * area,
        noise.aspect_velocity_std,
    ];
    let cov = DMatrix::from_diagonal(&DVector::from_iterator(STATE_DIM, std.iter().map(|s| s * s)));
    TrackState::new(mean, cov)
}

/// Min over the gallery of `1 - <g, e>`.
pub fn cosine_distance(gallery: &VecDeque<Vec<f64>>, embedding: &[f64]) -> Option<f64> {
    gallery
        .iter()
        .map(|g| 1.0 - g.iter().zip(embedding).map(|(a, b)| a * b).sum::<f64>())
        .min_by(f64::total_cmp)
}

/// `λ·h1 + (1-λ)·h2`.
pub fn fused_cost(motion: f64, appearance: f64, lambda: f64) -> f64 {
    lambda * motion + (1.0 - lambda) * appearance
}

/// Squared Mahalanobis distance of a detection to a track's current state.
pub fn track_mahalanobis(track: &Track, det: &Detection, noise: &NoiseConfig) -> Result<f64> {
    let model = motion_model(&track.bbox(), noise);
    mahalanobis_sq(&track.state, &box_to_measurement(&det.bbox), &model)
}

/// One output row per live track that was matched (or born) this frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub frame: u64,
    pub track_id: u64,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub status: TrackStatus,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameEvents {
    pub frame: u64,
    pub births: Vec<u64>,
    pub deaths: Vec<u64>,
    /// `(track id, detection index)`.
    pub matches: Vec<(u64, usize)>,
    pub records: Vec<TrackRecord>,
}

/// Multi-object tracker state for one video stream.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    tracks: Vec<Track>,
    next_id: u64,
    warned_motion_only: bool,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Tracker {
            config,
            tracks: Vec::new(),
            next_id: 1,
            warned_motion_only: false,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Live tracks in creation order.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Advances the tracker by one frame.
    pub fn step(&mut self, frame: u64, detections: &[Detection]) -> Result<FrameEvents> {
        for t in &mut self.tracks {
            let model = motion_model(&t.bbox(), &self.config.noise);
            t.state = kalman_predict(&t.state, &model)?;
        }

        let (cost, gate) = self.cost_matrix(detections)?;
        let pairs = hungarian_assign(&cost, gate);

        let mut events = FrameEvents {
            frame,
            ..FrameEvents::default()
        };
        let mut track_matched = vec![false; self.tracks.len()];
        let mut det_matched = vec![false; detections.len()];
        for &(ti, di) in &pairs {
            track_matched[ti] = true;
            det_matched[di] = true;
            let det = &detections[di];
            let track = &mut self.tracks[ti];
            let model = motion_model(&track.bbox(), &self.config.noise);
            track.state = kalman_update(&track.state, &box_to_measurement(&det.bbox), &model)?;
            if let Some(e) = &det.embedding {
                track.gallery.push_back(e.clone());
                while track.gallery.len() > self.config.gallery_capacity {
                    track.gallery.pop_front();
                }
            }
            track.hits += 1;
            track.misses = 0;
            if track.status == TrackStatus::Tentative && track.hits >= self.config.min_hits {
                track.status = TrackStatus::Confirmed;
            }
            events.matches.push((track.id, di));
        }

        for (ti, track) in self.tracks.iter_mut().enumerate() {
            if track_matched[ti] {
                continue;
            }
            track.misses += 1;
            track.hits = 0;
            let expired = match track.status {
                TrackStatus::Tentative => true,
                _ => track.misses > self.config.max_misses,
            };
            if expired {
                track.status = TrackStatus::Deleted;
                events.deaths.push(track.id);
            }
        }
        self.tracks.retain(|t| t.status != TrackStatus::Deleted);

        for (di, det) in detections.iter().enumerate() {
            if det_matched[di] {
                continue;
            }
            let id = self.next_id;
            self.next_id += 1;
            let status = if self.config.min_hits <= 1 {
                TrackStatus::Confirmed
            } else {
                TrackStatus::Tentative
            };
            self.tracks.push(Track {
                id,
                state: initial_state(&det.bbox, &self.config.noise),
                gallery: det.embedding.iter().cloned().collect(),
                hits: 1,
                misses: 0,
                status,
            });
            events.births.push(id);
        }

        for t in self.tracks.iter().filter(|t| t.misses == 0) {
            let b = t.bbox();
            events.records.push(TrackRecord {
                frame,
                track_id: t.id,
                cx: b.cx,
                cy: b.cy,
                w: b.w,
                h: b.h,
                status: t.status,
            });
        }
        Ok(events)
    }

    fn cost_matrix(&mut self, detections: &[Detection]) -> Result<(Vec<Vec<f64>>, f64)> {
        let cfg = &self.config;
        match cfg.mode {
            AssociationMode::Iou => {
                let gate = 1.0 - cfg.min_iou;
                let cost = self
                    .tracks
                    .iter()
                    .map(|t| {
                        let pred = t.bbox();
                        detections.iter().map(|d| 1.0 - iou(&pred, &d.bbox)).collect()
                    })
                    .collect();
                Ok((cost, gate))
            }
            AssociationMode::Fused => {
                let has_embeddings = detections.iter().all(|d| d.embedding.is_some());
                if !has_embeddings && !detections.is_empty() && !self.warned_motion_only {
                    log::warn!("detections carry no appearance embeddings; using motion-only cost");
                    self.warned_motion_only = true;
                }
                let cfg = &self.config;
                // Motion term ∈ [0,1), appearance ∈ [0,2]: allowed costs stay below 2.
                let gate = 2.0;
                let forbidden = gate + 1.0;
                let mut cost = Vec::with_capacity(self.tracks.len());
                for t in &self.tracks {
                    let model = motion_model(&t.bbox(), &cfg.noise);
                    let (projected, s_inv) = projected_inverse(&t.state, &model)?;
                    let mut row = Vec::with_capacity(detections.len());
                    for d in detections {
                        let r = box_to_measurement(&d.bbox) - &projected;
                        let d2 = (r.transpose() * &s_inv * &r)[(0, 0)].max(0.0);
                        let motion = (d2 / cfg.chi2_gate).min(1.0);
                        if motion >= 1.0 {
                            row.push(forbidden);
                            continue;
                        }
                        let appearance = d
                            .embedding
                            .as_deref()
                            .and_then(|e| cosine_distance(&t.gallery, e));
                        let c = match appearance {
                            Some(a) if a > cfg.max_cosine_distance => forbidden,
                            Some(a) => fused_cost(motion, a, cfg.lambda),
                            None => motion,
                        };
                        row.push(c);
                    }
                    cost.push(row);
                }
                Ok((cost, gate))
            }
        }
    }
}

/// Runs a tracker over a whole frame-indexed detection stream.
pub fn run_tracker(
    config: &TrackerConfig,
    frames: &[(u64, Vec<Detection>)],
) -> Result<Vec<FrameEvents>> {
    let mut tracker = Tracker::new(config.clone())?;
    frames
        .iter()
        .map(|(frame, dets)| tracker.step(*frame, dets))
        .collect()
}
