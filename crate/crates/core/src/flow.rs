//! Traffic-flow parameters from trajectories: dual-line crossing counts,
//! segment density and model-based speed (Greenshields / Greenberg).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tracking::{TrackRecord, TrackStatus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub start: Point,
    pub end: Point,
}

impl Line {
    pub fn new(start: Point, end: Point) -> Self {
        Line { start, end }
    }
}

/// Two virtual detection lines a vehicle must cross in sequence to be counted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionLinePair {
    pub line_a: Line,
    pub line_b: Line,
}

impl DetectionLinePair {
    pub fn new(line_a: Line, line_b: Line) -> Result<Self> {
        let pair = DetectionLinePair { line_a, line_b };
        pair.validate()?;
        Ok(pair)
    }

    /// Vertical lines at `x` and `x + separation`, spanning `y0..y1`.
    pub fn vertical(x: f64, separation: f64, y0: f64, y1: f64) -> Self {
        DetectionLinePair {
            line_a: Line::new(Point::new(x, y0), Point::new(x, y1)),
            line_b: Line::new(Point::new(x + separation, y0), Point::new(x + separation, y1)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, l) in [("line_a", &self.line_a), ("line_b", &self.line_b)] {
            if l.start == l.end {
                return Err(Error::Config(format!("{name} has coincident endpoints")));
            }
        }
        if segments_intersect(&self.line_a, &self.line_b) {
            return Err(Error::Config("detection lines intersect".into()));
        }
        Ok(())
    }
}

/// Signed area test: positive on the left of `line` (start → end), negative
/// on the right, zero when collinear.
pub fn side_of_line(p: Point, line: &Line) -> f64 {
    let (s, e) = (line.start, line.end);
    (e.x - s.x) * (p.y - s.y) - (e.y - s.y) * (p.x - s.x)
}

fn segments_intersect(a: &Line, b: &Line) -> bool {
    let d1 = side_of_line(b.start, a);
    let d2 = side_of_line(b.end, a);
    let d3 = side_of_line(a.start, b);
    let d4 = side_of_line(a.end, b);
    d1 * d2 <= 0.0 && d3 * d4 <= 0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingDirection {
    AToB,
    BToA,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossingEvent {
    pub track_id: u64,
    pub frame: u64,
    pub direction: CrossingDirection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Which {
    A,
    B,
}

/// Per-line memory of the last position strictly off the line.
#[derive(Debug, Clone, Copy)]
struct SideMemory {
    sign: f64,
    at: Point,
}

fn crossed(mem: &mut Option<SideMemory>, p: Point, line: &Line) -> bool {
    let s = side_of_line(p, line);
    if s == 0.0 {
        return false;
    }
    let sign = s.signum();
    let hit = match mem {
        Some(m) if m.sign != sign => {
            // The movement must pass through the drawn segment, not its extension.
            let path = Line::new(m.at, p);
            side_of_line(line.start, &path) * side_of_line(line.end, &path) <= 0.0
        }
        _ => false,
    };
    *mem = Some(SideMemory { sign, at: p });
    hit
}

/// Crossing events for one track's centroid sequence (ordered by frame).
///
/// A pass is counted when the centroid crosses one line and then the other
/// within `max_gap_frames`. The pending crossing is consumed by the count, so
/// oscillating across a single line never produces an event.
pub fn detect_crossings(
    track_id: u64,
    positions: &[(u64, Point)],
    lines: &DetectionLinePair,
    max_gap_frames: u64,
) -> Vec<CrossingEvent> {
    let mut mem_a = None;
    let mut mem_b = None;
    let mut pending: Option<(Which, u64)> = None;
    let mut out = Vec::new();

    for &(frame, p) in positions {
        let hit_a = crossed(&mut mem_a, p, &lines.line_a);
        let hit_b = crossed(&mut mem_b, p, &lines.line_b);
        for (hit, which) in [(hit_a, Which::A), (hit_b, Which::B)] {
            if !hit {
                continue;
            }
            match pending {
                Some((prev, f0)) if prev != which && frame - f0 <= max_gap_frames => {
                    let direction = if prev == Which::A {
                        CrossingDirection::AToB
                    } else {
                        CrossingDirection::BToA
                    };
                    out.push(CrossingEvent {
                        track_id,
                        frame,
                        direction,
                    });
                    pending = None;
                }
                _ => pending = Some((which, frame)),
            }
        }
    }
    out
}

/// Crossing events for every track in a record stream, ordered by frame then track.
pub fn crossings_from_records(
    records: &[TrackRecord],
    lines: &DetectionLinePair,
    max_gap_frames: u64,
) -> Vec<CrossingEvent> {
    let mut per_track: BTreeMap<u64, Vec<(u64, Point)>> = BTreeMap::new();
    for r in records {
        per_track
            .entry(r.track_id)
            .or_default()
            .push((r.frame, Point::new(r.cx, r.cy)));
    }
    let mut events: Vec<CrossingEvent> = per_track
        .iter_mut()
        .flat_map(|(&id, pts)| {
            pts.sort_by_key(|(f, _)| *f);
            detect_crossings(id, pts, lines, max_gap_frames)
        })
        .collect();
    events.sort_by_key(|e| (e.frame, e.track_id));
    events
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowUnit {
    #[default]
    PerSecond,
    PerMinute,
}

impl FlowUnit {
    pub fn rate(&self, count: usize, window_secs: f64) -> f64 {
        let per_sec = count as f64 / window_secs;
        match self {
            FlowUnit::PerSecond => per_sec,
            FlowUnit::PerMinute => per_sec * 60.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowWindow {
    /// First frame after the window (the reporting boundary).
    pub end_frame: u64,
    pub count: usize,
    pub rate: f64,
}

/// Tumbling-window counts over `[0, total_frames)`.
pub fn flow_series(
    events: &[CrossingEvent],
    window_frames: u64,
    total_frames: u64,
    fps: f64,
    unit: FlowUnit,
) -> Vec<FlowWindow> {
    if window_frames == 0 {
        return Vec::new();
    }
    let n = total_frames.div_ceil(window_frames) as usize;
    let mut counts = vec![0usize; n];
    for e in events {
        let i = (e.frame / window_frames) as usize;
        if i < n {
            counts[i] += 1;
        }
    }
    let window_secs = window_frames as f64 / fps;
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| FlowWindow {
            end_frame: (i as u64 + 1) * window_frames,
            count,
            rate: unit.rate(count, window_secs),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentGeometry {
    pub length_km: f64,
    pub lanes: u32,
    pub upstream_point: String,
    pub downstream_point: String,
}

impl SegmentGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_km > 0.0) {
            return Err(Error::Config(format!(
                "segment length must be positive, got {}",
                self.length_km
            )));
        }
        if self.lanes == 0 {
            return Err(Error::Config("segment needs at least one lane".into()));
        }
        Ok(())
    }
}

/// Vehicles per kilometre.
pub fn density(vehicle_count: usize, segment: &SegmentGeometry) -> f64 {
    vehicle_count as f64 / segment.length_km
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedModel {
    Greenshields,
    Greenberg,
    /// Greenberg at or above the density switch threshold, Greenshields below.
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeedModelParams {
    pub model: SpeedModel,
    /// km/h
    pub free_speed: f64,
    /// vehicles/km
    pub jam_density: f64,
    /// vehicles/km
    pub density_switch_threshold: f64,
}

impl Default for SpeedModelParams {
    fn default() -> Self {
        SpeedModelParams {
            model: SpeedModel::Auto,
            free_speed: 35.0,
            jam_density: 180.0,
            density_switch_threshold: 10.0,
        }
    }
}

impl SpeedModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.free_speed > 0.0) || !(self.jam_density > 0.0) {
            return Err(Error::Config(
                "speed model needs positive free speed and jam density".into(),
            ));
        }
        Ok(())
    }
}

/// `v_f (1 - k / k_j)`, clamped to `[0, v_f]`.
pub fn greenshields_speed(k: f64, p: &SpeedModelParams) -> f64 {
    if k > p.jam_density {
        log::warn!("density {k} exceeds jam density {}; speed clamped to 0", p.jam_density);
        return 0.0;
    }
    if k < 0.0 {
        log::warn!("negative density {k}; using free-flow speed");
        return p.free_speed;
    }
    p.free_speed * (1.0 - k / p.jam_density)
}

/// `v_f ln(k_j / k)`; densities above jam density clamp to 0.
pub fn greenberg_speed(k: f64, p: &SpeedModelParams) -> Result<f64> {
    if !(k > 0.0) {
        return Err(Error::Domain(format!(
            "Greenberg speed is undefined for density {k}"
        )));
    }
    if k > p.jam_density {
        log::warn!("density {k} exceeds jam density {}; speed clamped to 0", p.jam_density);
        return Ok(0.0);
    }
    Ok(p.free_speed * (p.jam_density / k).ln())
}

/// Which relation applies at density `k`.
pub fn select_speed_model(k: f64, p: &SpeedModelParams) -> SpeedModel {
    match p.model {
        SpeedModel::Auto if k >= p.density_switch_threshold => SpeedModel::Greenberg,
        SpeedModel::Auto => SpeedModel::Greenshields,
        fixed => fixed,
    }
}

/// Model-based speed at density `k`. Greenberg's singularity at `k <= 0`
/// falls back to the free-flow speed.
pub fn model_speed(k: f64, p: &SpeedModelParams) -> f64 {
    match select_speed_model(k, p) {
        SpeedModel::Greenberg => greenberg_speed(k, p).unwrap_or(p.free_speed),
        _ => greenshields_speed(k, p),
    }
}

/// Mean centroid speed in km/h from consecutive positions, for cross-checks
/// against the model-based speed. `None` with fewer than two positions.
pub fn displacement_speed_kmh(positions: &[(u64, Point)], fps: f64, meters_per_pixel: f64) -> Option<f64> {
    let (first, last) = (positions.first()?, positions.last()?);
    let frames = last.0.checked_sub(first.0)?;
    if frames == 0 {
        return None;
    }
    let pixels: f64 = positions
        .windows(2)
        .map(|w| ((w[1].1.x - w[0].1.x).powi(2) + (w[1].1.y - w[0].1.y).powi(2)).sqrt())
        .sum();
    let secs = frames as f64 / fps;
    Some(pixels * meters_per_pixel / secs * 3.6)
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs[..n].iter().zip(&ys[..n]) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// One row of the per-observation-point parameter series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterSample {
    pub frame: u64,
    pub flow: f64,
    pub density: f64,
    pub speed: f64,
}

/// Axis-aligned image region whose vehicles count toward segment density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageRegion {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl ImageRegion {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsConfig {
    pub fps: f64,
    /// One sample every this many frames.
    pub sample_every: u64,
    pub max_crossing_gap_frames: u64,
    pub unit: FlowUnit,
    pub region: Option<ImageRegion>,
    pub speed: SpeedModelParams,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        ParamsConfig {
            fps: 25.0,
            sample_every: 25,
            max_crossing_gap_frames: 50,
            unit: FlowUnit::PerSecond,
            region: None,
            speed: SpeedModelParams::default(),
        }
    }
}

/// Parameter series from tracker output: one sample per `sample_every`
/// frames. Flow counts dual-line crossings in the preceding interval,
/// density counts confirmed tracks inside the region, speed follows the
/// configured speed model.
pub fn parameters_from_tracks(
    records: &[TrackRecord],
    total_frames: u64,
    lines: &DetectionLinePair,
    segment: &SegmentGeometry,
    cfg: &ParamsConfig,
) -> Result<Vec<ParameterSample>> {
    segment.validate()?;
    lines.validate()?;
    if cfg.sample_every == 0 {
        return Err(Error::Config("sample_every must be positive".into()));
    }
    let events = crossings_from_records(records, lines, cfg.max_crossing_gap_frames);
    let flows = flow_series(&events, cfg.sample_every, total_frames, cfg.fps, cfg.unit);

    let mut live: BTreeMap<u64, usize> = BTreeMap::new();
    for r in records {
        if r.status != TrackStatus::Confirmed {
            continue;
        }
        let inside = cfg.region.is_none_or(|reg| reg.contains(r.cx, r.cy));
        if inside {
            *live.entry(r.frame).or_default() += 1;
        }
    }

    Ok(flows
        .iter()
        .map(|w| {
            let frame = w.end_frame - 1;
            let k = density(live.get(&frame).copied().unwrap_or(0), segment);
            ParameterSample {
                frame,
                flow: w.rate,
                density: k,
                speed: model_speed(k, &cfg.speed),
            }
        })
        .collect())
}
