//! Seeded synthetic data with ground truth: lane traffic seen by a camera
//! for tracker evaluation, and congestion waves in flow/density/speed series
//! for predictor evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::congestion::{
    congestion_index, episode_flags, sustained_congestion, CongestionConfig, CongestionEpisode,
};
use crate::error::{Error, Result};
use crate::flow::{greenberg_speed, ParameterSample, SpeedModel, SpeedModelParams};
use crate::geometry::BoundingBox;
use crate::io::DetectionRecord;
use crate::tracking::{Detection, LabeledBox};

/// The farther vehicle of an overtaking pair is hidden for a few frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occlusion {
    pub occluder: u64,
    pub occluded: u64,
    pub start_frame: u64,
    /// Exclusive.
    pub end_frame: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryScenario {
    pub n_vehicles: usize,
    pub frame_count: u64,
    pub fps: f64,
    pub image_width: f64,
    /// Lane centre rows in pixels, farthest lane first.
    pub lane_y: Vec<f64>,
    /// Mean speed per lane, px/frame.
    pub lane_speed_px: Vec<f64>,
    pub speed_jitter_px: f64,
    /// Minimum initial gap between vehicles of one lane.
    pub min_headway_px: f64,
    /// Length of each overtaking occlusion; 0 disables occlusions.
    pub occlusion_frames: u64,
    /// Additional hand-placed occlusions.
    pub extra_occlusions: Vec<Occlusion>,
    pub lane_change_probability: f64,
    /// Frames taken by one lane change.
    pub lane_change_frames: u64,
    pub detection_noise_px: f64,
    pub dropout: f64,
    pub embedding_dim: usize,
    pub embedding_noise: f64,
    pub seed: u64,
}

impl Default for TrajectoryScenario {
    fn default() -> Self {
        TrajectoryScenario {
            n_vehicles: 20,
            frame_count: 300,
            fps: 25.0,
            image_width: 1280.0,
            lane_y: vec![300.0, 324.0, 348.0, 372.0],
            lane_speed_px: vec![6.0, 4.5, 3.0, 1.5],
            speed_jitter_px: 0.1,
            min_headway_px: 160.0,
            occlusion_frames: 5,
            extra_occlusions: Vec::new(),
            lane_change_probability: 0.0,
            lane_change_frames: 25,
            detection_noise_px: 1.0,
            dropout: 0.0,
            embedding_dim: 128,
            embedding_noise: 0.02,
            seed: 7,
        }
    }
}

impl TrajectoryScenario {
    pub fn validate(&self) -> Result<()> {
        if self.lane_y.is_empty() || self.lane_y.len() != self.lane_speed_px.len() {
            return Err(Error::Config(
                "scenario.lane_y and scenario.lane_speed_px must be non-empty and equally long".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.dropout) || !(0.0..=1.0).contains(&self.lane_change_probability) {
            return Err(Error::Config("scenario probabilities must lie in [0, 1]".into()));
        }
        if self.detection_noise_px < 0.0 || self.embedding_noise < 0.0 || self.speed_jitter_px < 0.0 {
            return Err(Error::Config("scenario noise levels must be non-negative".into()));
        }
        if !(self.fps > 0.0) || !(self.image_width > 0.0) {
            return Err(Error::Config("scenario.fps and scenario.image_width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Vehicle {
    x0: f64,
    speed: f64,
    lane: usize,
    /// `(start frame, target lane)`.
    lane_change: Option<(u64, usize)>,
    w: f64,
    h: f64,
    class_id: u32,
    identity: Vec<f64>,
}

impl Vehicle {
    fn x(&self, frame: u64) -> f64 {
        self.x0 + self.speed * frame as f64
    }

    fn y(&self, frame: u64, s: &TrajectoryScenario) -> f64 {
        let base = s.lane_y[self.lane];
        match self.lane_change {
            Some((start, target)) if frame > start => {
                let t = ((frame - start) as f64 / s.lane_change_frames.max(1) as f64).min(1.0);
                base + (s.lane_y[target] - base) * t
            }
            _ => base,
        }
    }

    fn visible(&self, frame: u64, s: &TrajectoryScenario) -> bool {
        let x = self.x(frame);
        x >= 0.0 && x <= s.image_width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryOutput {
    pub ground_truth: Vec<LabeledBox>,
    /// Detections with the true identity in `id_hint`.
    pub detections: Vec<DetectionRecord>,
    pub occlusions: Vec<Occlusion>,
    pub frame_count: u64,
}

impl TrajectoryOutput {
    /// One detection list per frame, including empty frames.
    pub fn frames(&self) -> Vec<(u64, Vec<Detection>)> {
        crate::io::frames_from_records(&self.detections, self.frame_count)
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// Overtakes between adjacent lanes, each hiding the farther vehicle for
/// `occlusion_frames` frames centred on the moment the two align. Windows
/// that would overlap an earlier one involving either vehicle are skipped.
fn overtaking_occlusions(vehicles: &[Vehicle], s: &TrajectoryScenario) -> Vec<Occlusion> {
    let mut out: Vec<Occlusion> = Vec::new();
    if s.occlusion_frames == 0 {
        return out;
    }
    let half = s.occlusion_frames / 2;
    let mut candidates = Vec::new();
    for a in 0..vehicles.len() {
        for b in a + 1..vehicles.len() {
            let (va, vb) = (&vehicles[a], &vehicles[b]);
            if va.lane.abs_diff(vb.lane) != 1 || va.speed == vb.speed {
                continue;
            }
            let t = (vb.x0 - va.x0) / (va.speed - vb.speed);
            if !(t >= half as f64) {
                continue;
            }
            let f = t.round() as u64;
            if f + s.occlusion_frames > s.frame_count {
                continue;
            }
            let start = f - half;
            let end = start + s.occlusion_frames;
            let all_visible = (start..end).all(|fr| va.visible(fr, s) && vb.visible(fr, s));
            if !all_visible {
                continue;
            }
            let (near, far) = if va.y(f, s) > vb.y(f, s) { (a, b) } else { (b, a) };
            candidates.push(Occlusion {
                occluder: near as u64 + 1,
                occluded: far as u64 + 1,
                start_frame: start,
                end_frame: end,
            });
        }
    }
    candidates.sort_by_key(|o| (o.start_frame, o.occluded, o.occluder));
    for c in candidates {
        let clash = out.iter().any(|o| {
            let involved = [o.occluder, o.occluded];
            let shares = involved.contains(&c.occluder) || involved.contains(&c.occluded);
            shares && c.start_frame < o.end_frame + 1 && o.start_frame < c.end_frame + 1
        });
        if !clash {
            out.push(c);
        }
    }
    out
}

/// Generates ground-truth boxes and noisy detections. Vehicles drive along
/// lanes at constant speed; embeddings are a fixed random unit vector per
/// identity plus Gaussian noise, renormalized.
pub fn generate_trajectories(s: &TrajectoryScenario) -> Result<TrajectoryOutput> {
    s.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let lanes = s.lane_y.len();

    let mut heads: Vec<f64> = (0..lanes)
        .map(|_| rng.random_range(0.3..1.0) * s.image_width)
        .collect();
    let mut vehicles = Vec::with_capacity(s.n_vehicles);
    for i in 0..s.n_vehicles {
        let lane = i % lanes;
        let truck = rng.random_bool(0.2);
        let (w, h, class_id) = if truck { (96.0, 40.0, 7) } else { (64.0, 32.0, 2) };
        let x0 = heads[lane];
        heads[lane] -= s.min_headway_px + w + rng.random_range(0.0..80.0);
        let speed = s.lane_speed_px[lane] + rng.random_range(-1.0..=1.0) * s.speed_jitter_px;
        let lane_change = if rng.random_bool(s.lane_change_probability) {
            let target = if lane == 0 {
                1.min(lanes - 1)
            } else if lane == lanes - 1 || rng.random_bool(0.5) {
                lane - 1
            } else {
                lane + 1
            };
            let start = rng.random_range(0..s.frame_count.max(1));
            (target != lane).then_some((start, target))
        } else {
            None
        };
        let identity = random_unit(&mut rng, s.embedding_dim.max(1));
        vehicles.push(Vehicle {
            x0,
            speed,
            lane,
            lane_change,
            w,
            h,
            class_id,
            identity,
        });
    }

    let mut occlusions = overtaking_occlusions(&vehicles, s);
    occlusions.extend(s.extra_occlusions.iter().copied());
    let hidden = |v: u64, f: u64| {
        occlusions
            .iter()
            .any(|o| o.occluded == v && (o.start_frame..o.end_frame).contains(&f))
    };

    let pos_noise = Normal::new(0.0, s.detection_noise_px.max(0.0)).expect("finite σ");
    let size_noise = Normal::new(0.0, 0.5 * s.detection_noise_px.max(0.0)).expect("finite σ");
    let emb_noise = Normal::new(0.0, s.embedding_noise.max(0.0)).expect("finite σ");

    let mut ground_truth = Vec::new();
    let mut detections = Vec::new();
    for f in 0..s.frame_count {
        for (i, v) in vehicles.iter().enumerate() {
            if !v.visible(f, s) {
                continue;
            }
            let id = i as u64 + 1;
            let (cx, cy) = (v.x(f), v.y(f, s));
            ground_truth.push(LabeledBox {
                frame: f,
                id,
                bbox: BoundingBox::unit_conf(cx, cy, v.w, v.h),
            });
            let dropped = rng.random::<f64>() < s.dropout;
            let noise = [
                pos_noise.sample(&mut rng),
                pos_noise.sample(&mut rng),
                size_noise.sample(&mut rng),
                size_noise.sample(&mut rng),
            ];
            let confidence = rng.random_range(0.6..0.99);
            let mut embedding: Vec<f64> = v.identity.iter().map(|x| x + emb_noise.sample(&mut rng)).collect();
            if dropped || hidden(id, f) {
                continue;
            }
            normalize(&mut embedding);
            let bbox = BoundingBox {
                cx: cx + noise[0],
                cy: cy + noise[1],
                w: (v.w + noise[2]).max(1.0),
                h: (v.h + noise[3]).max(1.0),
                confidence,
                class_id: v.class_id,
            };
            detections.push(DetectionRecord {
                frame: f,
                id_hint: Some(id),
                detection: Detection {
                    bbox,
                    embedding: (s.embedding_dim > 0).then_some(embedding),
                },
            });
        }
    }
    Ok(TrajectoryOutput {
        ground_truth,
        detections,
        occlusions,
        frame_count: s.frame_count,
    })
}

/// Density ramps up from the base level, holds at the peak, and ramps down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CongestionEvent {
    /// Start of the ramp-up, minutes from the series start.
    pub onset_min: f64,
    pub ramp_up_min: f64,
    pub hold_min: f64,
    pub ramp_down_min: f64,
    /// Peak density, vehicles/km.
    pub peak_density: f64,
}

impl Default for CongestionEvent {
    fn default() -> Self {
        CongestionEvent {
            onset_min: 60.0,
            ramp_up_min: 20.0,
            hold_min: 40.0,
            ramp_down_min: 3.0,
            peak_density: 80.0,
        }
    }
}

impl CongestionEvent {
    fn extra_density(&self, minute: f64, base: f64) -> f64 {
        let rise = self.peak_density - base;
        let t = minute - self.onset_min;
        let up = self.ramp_up_min.max(1e-9);
        let down = self.ramp_down_min.max(1e-9);
        if t < 0.0 {
            0.0
        } else if t < up {
            rise * t / up
        } else if t < up + self.hold_min {
            rise
        } else if t < up + self.hold_min + down {
            rise * (1.0 - (t - up - self.hold_min) / down)
        } else {
            0.0
        }
    }
}

/// Measurement noise standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureNoise {
    /// vehicles/second
    pub flow: f64,
    /// vehicles/km
    pub density: f64,
    /// km/h
    pub speed: f64,
}

impl Default for FeatureNoise {
    fn default() -> Self {
        FeatureNoise {
            flow: 0.01,
            density: 0.5,
            speed: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CongestionScenario {
    pub duration_min: f64,
    pub sample_period_s: f64,
    pub fps: f64,
    /// Free-flow density, vehicles/km.
    pub base_density: f64,
    /// Amplitude of a slow sinusoidal drift of the base density.
    pub base_drift: f64,
    pub drift_period_min: f64,
    pub events: Vec<CongestionEvent>,
    pub noise: FeatureNoise,
    pub speed: SpeedModelParams,
    pub congestion: CongestionConfig,
    pub seed: u64,
}

impl Default for CongestionScenario {
    fn default() -> Self {
        CongestionScenario {
            duration_min: 300.0,
            sample_period_s: 1.0,
            fps: 25.0,
            base_density: 10.0,
            base_drift: 1.5,
            drift_period_min: 47.0,
            events: vec![CongestionEvent::default()],
            noise: FeatureNoise::default(),
            speed: SpeedModelParams {
                model: SpeedModel::Greenberg,
                ..SpeedModelParams::default()
            },
            congestion: CongestionConfig::default(),
            seed: 11,
        }
    }
}

impl CongestionScenario {
    /// Spreads `n_events` default-shaped events over the series, one per
    /// equal slot, with a seeded onset inside each slot.
    pub fn with_spread_events(duration_min: f64, n_events: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e7e7);
        let shape = CongestionEvent::default();
        let span = shape.ramp_up_min + shape.hold_min + shape.ramp_down_min;
        let slot = duration_min / n_events.max(1) as f64;
        let events = (0..n_events)
            .map(|i| {
                // leave room for the warning lead before and recovery after
                let lo = 20.0;
                let hi = (slot - span - 20.0).max(lo + 1.0);
                CongestionEvent {
                    onset_min: slot * i as f64 + rng.random_range(lo..hi),
                    ..shape
                }
            })
            .collect();
        CongestionScenario {
            duration_min,
            events,
            seed,
            ..CongestionScenario::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_min > 0.0 && self.sample_period_s > 0.0 && self.fps > 0.0) {
            return Err(Error::Config(
                "scenario duration, sample period and fps must be positive".into(),
            ));
        }
        if !(self.base_density > self.base_drift.abs()) {
            return Err(Error::Config("base density must exceed its drift amplitude".into()));
        }
        if self
            .events
            .iter()
            .any(|e| !(e.peak_density > 0.0 && e.peak_density < self.speed.jam_density))
        {
            return Err(Error::Config("event peak density must lie in (0, jam density)".into()));
        }
        self.speed.validate()?;
        self.congestion.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSeriesOutput {
    /// Noisy measurements.
    pub samples: Vec<ParameterSample>,
    pub noiseless: Vec<ParameterSample>,
    /// Congestion index of the noiseless series.
    pub rho: Vec<f64>,
    pub episodes: Vec<CongestionEpisode>,
    /// Per-sample membership in a sustained-congestion episode.
    pub labels: Vec<bool>,
}

/// Generates flow/density/speed samples. Speed follows the Greenberg
/// relation of the true density, flow is `k·v / 3600` vehicles/second, and
/// labels come from the noiseless congestion index.
pub fn generate_parameter_series(s: &CongestionScenario) -> Result<ParameterSeriesOutput> {
    s.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let n = (s.duration_min * 60.0 / s.sample_period_s).round() as usize;
    let kj = s.speed.jam_density;
    let nz = |sd: f64| Normal::new(0.0, sd.max(0.0)).expect("finite σ");
    let (nq, nk, nv) = (nz(s.noise.flow), nz(s.noise.density), nz(s.noise.speed));

    let mut samples = Vec::with_capacity(n);
    let mut noiseless = Vec::with_capacity(n);
    let mut rho = Vec::with_capacity(n);
    for i in 0..n {
        let minute = i as f64 * s.sample_period_s / 60.0;
        let drift = s.base_drift * (2.0 * std::f64::consts::PI * minute / s.drift_period_min).sin();
        let base = s.base_density + drift;
        let extra = s
            .events
            .iter()
            .map(|e| e.extra_density(minute, base))
            .fold(0.0, f64::max);
        let k = (base + extra).clamp(1e-3, kj - 1e-3);
        let v = greenberg_speed(k, &s.speed)?;
        let q = k * v / 3600.0;
        let frame = (i as f64 * s.sample_period_s * s.fps).round() as u64;
        noiseless.push(ParameterSample {
            frame,
            flow: q,
            density: k,
            speed: v,
        });
        rho.push(congestion_index(k, v, &s.congestion));

        let dq = nq.sample(&mut rng);
        let dk = nk.sample(&mut rng);
        let dv = nv.sample(&mut rng);
        samples.push(ParameterSample {
            frame,
            flow: (q + dq).max(0.0),
            density: (k + dk).clamp(1e-3, kj - 1e-3),
            speed: (v + dv).max(0.0),
        });
    }
    let episodes = sustained_congestion(&rho, s.sample_period_s, &s.congestion);
    let labels = episode_flags(n, &episodes);
    Ok(ParameterSeriesOutput {
        samples,
        noiseless,
        rho,
        episodes,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::pearson;

    #[test]
    fn zero_noise_detections_equal_ground_truth() {
        let s = TrajectoryScenario {
            occlusion_frames: 0,
            detection_noise_px: 0.0,
            ..Default::default()
        };
        let out = generate_trajectories(&s).unwrap();
        assert_eq!(out.detections.len(), out.ground_truth.len());
        for (d, g) in out.detections.iter().zip(&out.ground_truth) {
            let b = &d.detection.bbox;
            assert_eq!((d.frame, d.id_hint), (g.frame, Some(g.id)));
            assert_eq!((b.cx, b.cy, b.w, b.h), (g.bbox.cx, g.bbox.cy, g.bbox.w, g.bbox.h));
        }
    }

    #[test]
    fn full_dropout_leaves_only_ground_truth() {
        let s = TrajectoryScenario {
            dropout: 1.0,
            ..Default::default()
        };
        let out = generate_trajectories(&s).unwrap();
        assert!(out.detections.is_empty());
        assert!(!out.ground_truth.is_empty());
        assert_eq!(out.frames().len(), s.frame_count as usize);
    }

    #[test]
    fn trajectories_are_deterministic() {
        let s = TrajectoryScenario::default();
        assert_eq!(generate_trajectories(&s).unwrap(), generate_trajectories(&s).unwrap());
    }

    #[test]
    fn default_scene_has_overtaking_occlusions() {
        let out = generate_trajectories(&TrajectoryScenario::default()).unwrap();
        assert!(out.occlusions.len() >= 5, "{}", out.occlusions.len());
        for o in &out.occlusions {
            assert_eq!(o.end_frame - o.start_frame, 5);
            let hidden = out
                .detections
                .iter()
                .filter(|d| d.id_hint == Some(o.occluded) && (o.start_frame..o.end_frame).contains(&d.frame))
                .count();
            assert_eq!(hidden, 0);
        }
    }

    #[test]
    fn no_events_means_no_labels() {
        let s = CongestionScenario {
            events: vec![],
            duration_min: 90.0,
            ..Default::default()
        };
        let out = generate_parameter_series(&s).unwrap();
        assert!(out.labels.iter().all(|l| !l));
        assert!(out.episodes.is_empty());
    }

    #[test]
    fn one_event_one_episode() {
        let out = generate_parameter_series(&CongestionScenario::default()).unwrap();
        let oracle = sustained_congestion(&out.rho, 1.0, &CongestionConfig::default());
        assert_eq!(out.episodes, oracle);
        assert_eq!(out.episodes.len(), 1);
        assert!(out.samples.iter().all(|s| s.density > 0.0 && s.density < 180.0));
    }

    #[test]
    fn speed_density_anticorrelated() {
        let out = generate_parameter_series(&CongestionScenario::default()).unwrap();
        let k: Vec<f64> = out.noiseless.iter().map(|s| s.density).collect();
        let v: Vec<f64> = out.noiseless.iter().map(|s| s.speed).collect();
        assert!(pearson(&k, &v).unwrap() <= -0.95);
    }

    #[test]
    fn parameter_series_deterministic() {
        let s = CongestionScenario::with_spread_events(300.0, 2, 5);
        assert_eq!(
            generate_parameter_series(&s).unwrap(),
            generate_parameter_series(&s).unwrap()
        );
    }
}
