//! Stage bodies. Each stage reads upstream artifacts through [`StageIo`]
//! and writes only under its own directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::config::{derive_seed, PointRole, SiteConfig};
use super::dataset::{
    build_dataset, fit_normalizer, predict_logistic, predict_model, prepare_series, train_logistic, train_model,
    PreparedSeries, QualityCounters,
};
use super::manifest::{Manifest, StageIo};
use super::plot::{emit_plot_data, meta_path, PlotSeries};
use super::report::{assemble_report, RunReport};
use super::Stage;
use crate::congestion::{
    congestion_index, emit_warnings, evaluate_warnings, write_episode_table, write_warning_table, CongestionEpisode,
    WarningEvaluation,
};
use crate::error::{Error, Result};
use crate::flow::{parameters_from_tracks, ParameterSample, ParamsConfig};
use crate::io::{
    frames_from_records, read_detections, read_ground_truth, read_parameters, read_rows, read_tracks,
    write_detections, write_ground_truth, write_parameters, write_rows, write_tracks, Rejection,
};
use crate::neural::{
    classification_metrics, Checkpoint, ClassificationMetrics, LogisticParams, ModelKind, SequenceModel, TrainingLog,
};
use crate::preprocess::{Normalizer, WindowedSample};
use crate::scenario::{generate_parameter_series, generate_trajectories, CongestionScenario, TrajectoryScenario};
use crate::tracking::{evaluate_tracking, hypotheses_from_records, run_tracker, TrackRecord, TrackerConfig, TrackingMetrics};

pub const NORMALIZER: &str = "preprocess/normalizer.json";
pub const QUALITY: &str = "preprocess/quality.json";
pub const METRICS: &str = "evaluate/metrics.json";
pub const REPORT: &str = "report/report.json";

pub fn model_file(kind: ModelKind) -> String {
    format!("train/{}.json", kind.as_str())
}
pub const LOGISTIC_FILE: &str = "train/logistic.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub(crate) fn run(stage: Stage, cfg: &SiteConfig, io: &mut StageIo) -> Result<()> {
    match stage {
        Stage::Simulate => simulate(cfg, io),
        Stage::Track => track(cfg, io),
        Stage::Params => params(cfg, io),
        Stage::Preprocess => preprocess(cfg, io),
        Stage::Train => train(cfg, io),
        Stage::Predict => predict(cfg, io),
        Stage::Warn => warn(cfg, io),
        Stage::Evaluate => evaluate(cfg, io),
        Stage::Report => report(cfg, io),
    }
}

/// Trajectory clip for one point, seeded from the run seed.
pub fn point_trajectory_scenario(cfg: &SiteConfig, index: usize) -> TrajectoryScenario {
    TrajectoryScenario {
        fps: cfg.fps,
        seed: derive_seed(cfg.seed, &format!("trajectory/{index}")),
        ..cfg.simulation.trajectory.clone()
    }
}

/// Parameter-series scenario for one point, seeded from the run seed.
pub fn point_series_scenario(cfg: &SiteConfig, index: usize) -> CongestionScenario {
    let sim = &cfg.simulation;
    CongestionScenario {
        sample_period_s: cfg.sample_period_s(),
        fps: cfg.fps,
        noise: sim.noise,
        speed: cfg.speed,
        congestion: cfg.congestion,
        ..CongestionScenario::with_spread_events(
            sim.duration_min,
            sim.events,
            derive_seed(cfg.seed, &format!("series/{index}")),
        )
    }
}

fn simulate(cfg: &SiteConfig, io: &mut StageIo) -> Result<()> {
    for (i, p) in cfg.points.iter().enumerate() {
        let traj = generate_trajectories(&point_trajectory_scenario(cfg, i))?;
        write_detections(&io.output(&format!("simulate/{}/detections.csv", p.id))?, &traj.detections)?;
        write_ground_truth(&io.output(&format!("simulate/{}/ground_truth.csv", p.id))?, &traj.ground_truth)?;

        let mut series = generate_parameter_series(&point_series_scenario(cfg, i))?;
        inject_outliers(
            &mut series.samples,
            cfg.simulation.outlier_fraction,
            derive_seed(cfg.seed, &format!("outliers/{i}")),
        );
        write_parameters(&io.output(&format!("simulate/{}/series.csv", p.id))?, &series.samples)?;
        write_episode_table(&io.output(&format!("simulate/{}/episodes.csv", p.id))?, &series.episodes)?;
    }
    Ok(())
}

/// Replaces a seeded share of samples with gross errors: even picks get an
/// impossible speed, odd picks a density spike.
pub fn inject_outliers(samples: &mut [ParameterSample], fraction: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = ((samples.len() as f64) * fraction).round() as usize;
    let picks = rand::seq::index::sample(&mut rng, samples.len(), n.min(samples.len()));
    for (j, i) in picks.into_iter().enumerate() {
        if j % 2 == 0 {
            samples[i].speed = rng.random_range(160.0..250.0);
        } else {
            samples[i].density += rng.random_range(100.0..150.0);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSummary {
    pub detections: usize,
    pub frames: u64,
    pub rejected: Vec<Rejection>,
    pub fused_tracks: usize,
    pub sort_tracks: usize,
}

fn distinct_tracks(records: &[TrackRecord]) -> usize {
    records.iter().map(|r| r.track_id).collect::<std::collections::BTreeSet<_>>().len()
}

fn track(cfg: &SiteConfig, io: &mut StageIo) -> Result<()> {
    for p in &cfg.points {
        let ingest = read_detections(&io.input(&format!("simulate/{}/detections.csv", p.id))?)?;
        let frames = ingest.records.iter().map(|r| r.frame + 1).max().unwrap_or(0);
        let stream = frames_from_records(&ingest.records, frames);
        let mut summary = TrackSummary {
            detections: ingest.records.len(),
            frames,
            rejected: ingest.rejected,
            fused_tracks: 0,
            sort_tracks: 0,
        };
        for (name, tc) in [("tracks", &cfg.tracker), ("tracks_sort", &TrackerConfig::sort())] {
            let records: Vec<TrackRecord> = run_tracker(tc, &stream)?.into_iter().flat_map(|e| e.records).collect();
            if name == "tracks" {
                summary.fused_tracks = distinct_tracks(&records);
            } else {
                summary.sort_tracks = distinct_tracks(&records);
            }
            write_tracks(&io.output(&format!("track/{}/{name}.csv", p.id))?, &records)?;
        }
        write_json(&io.output(&format!("track/{}/summary.json", p.id))?, &summary)?;
    }
    Ok(())
}

fn params(cfg: &SiteConfig, io: &mut StageIo) -> Result<()> {
    for p in &cfg.points {
        let records = read_tracks(&io.input(&format!("track/{}/tracks.csv", p.id))?)?;
        let frames = records.iter().map(|r| r.frame + 1).max().unwrap_or(0);
        let segment = cfg
            .segment_for(&p.id)
            .ok_or_else(|| Error::Config(format!("point `{}` belongs to no segment", p.id)))?;
        let pc = ParamsConfig {
            fps: cfg.fps,
            sample_every: cfg.sample_every,
            speed: cfg.speed,
            ..ParamsConfig::default()
        };
        let samples = parameters_from_tracks(&records, frames, &p.lines, segment, &pc)?;
        write_parameters(&io.output(&format!("params/{}.csv", p.id))?, &samples)?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct EpisodeRow {
    #[allow(dead_code)]
    episode_id: usize,
    start_s: f64,
    end_s: f64,
    peak_rho: f64,
}

/// Reads an episode table back into sample-index episodes.
pub fn read_episodes(path: &Path, sample_period_s: f64) -> Result<Vec<CongestionEpisode>> {
    let rows: Vec<EpisodeRow> = read_rows(path)?;
    Ok(rows
        .into_iter()
        .map(|r| CongestionEpisode {
            start: (r.start_s / sample_period_s).round() as usize,
            end: (r.end_s / sample_period_s).round() as usize,
            start_s: r.start_s,
            end_s: r.end_s,
            peak_rho: r.peak_rho,
        })
        .collect())
}

fn preprocess(cfg: &SiteConfig, io: &mut StageIo) -> Result<()> {
    let mut prepared = Vec::with_capacity(cfg.points.len());
    let mut quality = BTreeMap::new();
    for p in &cfg.points {
        let raw = read_parameters(&io.input(&format!("simulate/{}/series.csv", p.id))?)?;
        let s = prepare_series(&raw, &cfg.clean, &cfg.congestion, cfg.sample_period_s())?;
        write_parameters(&io.output(&format!("preprocess/{}/series.csv", p.id))?, &s.samples())?;
        write_episode_table(&io.output(&format!("preprocess/{}/episodes.csv", p.id))?, &s.episodes)?;
        quality.insert(p.id.clone(), s.quality);
        prepared.push((p.role, s));
    }
    let refs: Vec<(PointRole, &PreparedSeries)> = prepared.iter().map(|(r, s)| (*r, s)).collect();
    let norm = fit_normalizer(&refs, cfg.train_fraction)?;
    norm.save(&io.output(NORMALIZER)?)?;
    write_json(&io.output(QUALITY)?, &quality)
}

/// Reads the cleaned series and episodes written by the preprocess stage.
fn load_prepared(cfg: &SiteConfig, io: &mut StageIo, id: &str) -> Result<PreparedSeries> {
    let samples = read_parameters(&io.input(&format!("preprocess/{id}/series.csv"))?)?;
    let episodes = read_episodes(&io.input(&format!("preprocess/{id}/episodes.csv"))?, cfg.sample_period_s())?;
    Ok(PreparedSeries {
        frames: samples.iter().map(|s| s.frame).collect(),
        rows: samples.iter().map(|s| [s.flow, s.density, s.speed]).collect(),
        rho: samples.iter().map(|s| congestion_index(s.density, s.speed, &cfg.congestion)).collect(),
        quality: QualityCounters::default(),
        episodes,
    })
}

fn load_dataset(cfg: &SiteConfig, io: &mut StageIo, roles: &[PointRole]) -> Result<super::dataset::Dataset> {
    let norm = Normalizer::load(&io.input(NORMALIZER)?)?;
    let mut series = Vec::new();
    for p in cfg.points.iter().filter(|p| roles.contains(&p.role)) {
        series.push((p.id.as_str(), p.role, load_prepared(cfg, io, &p.id)?));
    }
    let refs: Vec<(&str, PointRole, &PreparedSeries)> = series.iter().map(|(i, r, s)| (*i, *r, s)).collect();
    build_dataset(cfg, &refs, &norm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub train_windows: usize,
    pub val_windows: usize,
    pub train_positive_fraction: f64,
    pub logs: BTreeMap<String, TrainingLog>,
}

fn train(cfg: &SiteConfig, io: &mut StageIo) -> Result<()> {
    let ds = load_dataset(cfg, io, &[PointRole::Train])?;
    if ds.train.is_empty() || ds.val.is_empty() {
        return Err(Error::Data("too few samples for training and validation windows".into()));
    }
    let mut logs = BTreeMap::new();
    for kind in [ModelKind::Gru, ModelKind::GruAttention] {
        let (model, log) = train_model(cfg, kind, &ds)?;
        log::info!(
            "{}: best epoch {} of {}, validation loss {:.5}",
            kind.as_str(),
            log.best_epoch,
            log.epochs.len(),
            log.best_val_loss
        );
        let ck = Checkpoint {
            train_config: Some(cfg.train),
            normalizer: Some(NORMALIZER.into()),
            log: Some(log.clone()),
            ..Checkpoint::new(model)
        };
        ck.save(&io.output(&model_file(kind))?)?;
        logs.insert(kind.as_str().to_string(), log);
    }
    let logistic = train_logistic(cfg, &ds)?;
    write_json(&io.output(LOGISTIC_FILE)?, &logistic)?;
    let summary = TrainSummary {
        train_windows: ds.train.len(),
        val_windows: ds.val.len(),
        train_positive_fraction: ds.train_balance(),
        logs,
    };
    write_json(&io.output("train/summary.json")?, &summary)
}

/// One test window's predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub end_index: usize,
    pub time_s: f64,
    pub label: u8,
    pub gru: f64,
    pub gru_attention: f64,
    pub logistic: f64,
}

impl PredictionRow {
    pub fn probability(&self, kind: ModelKind) -> f64 {
        match kind {
            ModelKind::Gru => self.gru,
            ModelKind::GruAttention => self.gru_attention,
        }
    }
}

const PREDICTION_COLUMNS: [&str; 6] = ["end_index", "time_s", "label", "gru", "gru_attention", "logistic"];

fn load_model(io: &mut StageIo, kind: ModelKind) -> Result<SequenceModel> {
    Ok(Checkpoint::load(&io.input(&model_file(kind))?)?.model)
}

fn predict(cfg: &SiteConfig, io: &mut StageIo) -> Result<()> {
    let gru = load_model(io, ModelKind::Gru)?;
    let att = load_model(io, ModelKind::GruAttention)?;
    let logistic: LogisticParams = read_json(&io.input(LOGISTIC_FILE)?)?;
    let ds = load_dataset(cfg, io, &[PointRole::Test])?;
    let period = cfg.sample_period_s();
    for (id, windows) in &ds.test {
        let pg = predict_model(&gru, windows);
        let pa = predict_model(&att, windows);
        let pl = predict_logistic(&logistic, windows);
        let rows = windows.iter().enumerate().map(|(i, w): (usize, &WindowedSample)| PredictionRow {
            end_index: w.end_index,
            time_s: w.end_index as f64 * period,
            label: w.label,
            gru: pg[i],
            gru_attention: pa[i],
            logistic: pl[i],
        });
        write_rows(&io.output(&format!("predict/{id}.csv"))?, &PREDICTION_COLUMNS, rows)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarningRow {
    pub warning_id: usize,
    pub time_s: f64,
}

fn test_ids(cfg: &SiteConfig) -> Vec<String> {
    cfg.points_with(PointRole::Test).map(|(_, p)| p.id.clone()).collect()
}

fn warn(cfg: &SiteConfig, io: &mut StageIo) -> Result<()> {
    for id in test_ids(cfg) {
        let rows: Vec<PredictionRow> = read_rows(&io.input(&format!("predict/{id}.csv"))?)?;
        let p: Vec<f64> = rows.iter().map(|r| r.probability(cfg.model.warning_model)).collect();
        let t: Vec<f64> = rows.iter().map(|r| r.time_s).collect();
        let warnings = emit_warnings(&p, &t, cfg.congestion.debounce_samples, cfg.congestion.rearm_min * 60.0);
        write_rows(
            &io.output(&format!("warn/{id}.csv"))?,
            &["warning_id", "time_s"],
            warnings.iter().enumerate().map(|(i, &time_s)| WarningRow {
                warning_id: i + 1,
                time_s,
            }),
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingComparison {
    pub fused: TrackingMetrics,
    pub sort: TrackingMetrics,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    /// Test-set metrics per model name.
    pub classification: BTreeMap<String, ClassificationMetrics>,
    /// Warning evaluation per test point.
    pub warnings: BTreeMap<String, WarningEvaluation>,
    /// Tracker comparison per point; present when tracks and ground truth exist.
    pub tracking: BTreeMap<String, TrackingComparison>,
}

fn evaluate(cfg: &SiteConfig, io: &mut StageIo) -> Result<()> {
    let mut summary = EvaluationSummary::default();
    let mut all: Vec<PredictionRow> = Vec::new();
    for id in test_ids(cfg) {
        let rows: Vec<PredictionRow> = read_rows(&io.input(&format!("predict/{id}.csv"))?)?;
        let warnings: Vec<WarningRow> = read_rows(&io.input(&format!("warn/{id}.csv"))?)?;
        let episodes = read_episodes(&io.input(&format!("preprocess/{id}/episodes.csv"))?, cfg.sample_period_s())?;
        let starts: Vec<f64> = episodes.iter().map(|e| e.start_s).collect();
        let times: Vec<f64> = warnings.iter().map(|w| w.time_s).collect();
        let ev = evaluate_warnings(&times, &starts, &cfg.congestion);
        write_warning_table(&io.output(&format!("evaluate/warnings_{id}.csv"))?, &ev.events)?;
        summary.warnings.insert(id, ev);
        all.extend(rows);
    }
    let labels: Vec<u8> = all.iter().map(|r| r.label).collect();
    let columns: [(&str, fn(&PredictionRow) -> f64); 3] = [
        ("gru", |r| r.gru),
        ("gru_attention", |r| r.gru_attention),
        ("logistic", |r| r.logistic),
    ];
    for (name, get) in columns {
        let p: Vec<f64> = all.iter().map(get).collect();
        summary.classification.insert(name.to_string(), classification_metrics(&p, &labels)?);
    }
    for p in &cfg.points {
        let base = io_paths_exist(io, &p.id);
        if !base {
            continue;
        }
        let gt = read_ground_truth(&io.input(&format!("simulate/{}/ground_truth.csv", p.id))?)?;
        let mut m = Vec::new();
        for name in ["tracks", "tracks_sort"] {
            let records = read_tracks(&io.input(&format!("track/{}/{name}.csv", p.id))?)?;
            m.push(evaluate_tracking(&gt, &hypotheses_from_records(&records), 0.5)?);
        }
        let sort = m.pop().expect("two evaluations");
        let fused = m.pop().expect("two evaluations");
        summary.tracking.insert(p.id.clone(), TrackingComparison { fused, sort });
    }
    write_json(&io.output(METRICS)?, &summary)
}

fn io_paths_exist(io: &StageIo, id: &str) -> bool {
    [
        format!("simulate/{id}/ground_truth.csv"),
        format!("track/{id}/tracks.csv"),
        format!("track/{id}/tracks_sort.csv"),
    ]
    .iter()
    .all(|rel| io.root().join(rel).is_file())
}

fn report(cfg: &SiteConfig, io: &mut StageIo) -> Result<()> {
    let period = cfg.sample_period_s();
    for p in &cfg.points {
        let rel = format!("preprocess/{}/series.csv", p.id);
        if !io.root().join(&rel).is_file() {
            continue;
        }
        let s = read_parameters(&io.input(&rel)?)?;
        let trend = [
            PlotSeries::new("speed", s.iter().map(|r| (r.frame as f64, r.speed)).collect()),
            PlotSeries::new("density", s.iter().map(|r| (r.frame as f64, r.density)).collect()),
        ];
        let mut meta = Map::new();
        meta.insert("point".into(), p.id.clone().into());
        meta.insert("x".into(), "frame".into());
        meta.insert("units".into(), serde_json::json!({"speed": "km/h", "density": "veh/km"}));
        plot(io, &format!("report/plots/trend_{}.csv", p.id), &trend, &meta)?;

        let rho = [PlotSeries::new(
            "rho",
            s.iter()
                .enumerate()
                .map(|(i, r)| (i as f64 * period, congestion_index(r.density, r.speed, &cfg.congestion)))
                .collect(),
        )];
        let mut meta = Map::new();
        meta.insert("point".into(), p.id.clone().into());
        meta.insert("x".into(), "time_s".into());
        meta.insert("threshold".into(), cfg.congestion.rho_threshold.into());
        plot(io, &format!("report/plots/rho_{}.csv", p.id), &rho, &meta)?;
    }
    for id in test_ids(cfg) {
        let rel = format!("predict/{id}.csv");
        if !io.root().join(&rel).is_file() {
            continue;
        }
        let rows: Vec<PredictionRow> = read_rows(&io.input(&rel)?)?;
        let series = [
            PlotSeries::new("label", rows.iter().map(|r| (r.time_s, r.label as f64)).collect()),
            PlotSeries::new("gru", rows.iter().map(|r| (r.time_s, r.gru)).collect()),
            PlotSeries::new("gru_attention", rows.iter().map(|r| (r.time_s, r.gru_attention)).collect()),
            PlotSeries::new("logistic", rows.iter().map(|r| (r.time_s, r.logistic)).collect()),
        ];
        let mut meta = Map::new();
        meta.insert("point".into(), id.clone().into());
        meta.insert("x".into(), "time_s".into());
        meta.insert("y".into(), Value::from("probability of congestion within the horizon"));
        plot(io, &format!("report/plots/prediction_{id}.csv"), &series, &meta)?;
    }
    let mut report: RunReport = assemble_report(cfg, io.root())?;
    report.artifacts.extend(io.outputs().iter().cloned());
    report.artifacts.sort();
    report.artifacts.dedup();
    write_json(&io.output(REPORT)?, &report)
}

fn plot(io: &mut StageIo, rel: &str, series: &[PlotSeries], meta: &Map<String, Value>) -> Result<()> {
    let path = io.output(rel)?;
    emit_plot_data(&path, series, meta)?;
    let meta_rel = meta_path(Path::new(rel));
    io.output(&meta_rel.to_string_lossy())?;
    Ok(())
}

/// Loads the evaluation summary if the evaluate stage has run.
pub fn load_metrics(out: &Path) -> Result<Option<EvaluationSummary>> {
    let path = out.join(METRICS);
    if path.is_file() {
        read_json(&path).map(Some)
    } else {
        Ok(None)
    }
}

pub fn load_quality(out: &Path) -> Result<BTreeMap<String, QualityCounters>> {
    let path = out.join(QUALITY);
    if path.is_file() {
        read_json(&path)
    } else {
        Ok(BTreeMap::new())
    }
}

/// Outputs recorded by every stage manifest present under `out`.
pub fn manifest_outputs(out: &Path) -> Vec<String> {
    Stage::ALL
        .iter()
        .filter_map(|s| Manifest::load(out, s.as_str()))
        .flat_map(|m| m.outputs.into_keys())
        .collect()
}
