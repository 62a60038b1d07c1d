//! From raw parameter series to labeled, normalized windows.

use serde::{Deserialize, Serialize};

use super::config::{PointRole, SiteConfig};
use crate::congestion::{congestion_index, episode_flags, sustained_congestion, CongestionConfig, CongestionEpisode};
use crate::error::Result;
use crate::flow::ParameterSample;
use crate::neural::{
    logistic_fit, logistic_predict, predict, train, LogisticParams, ModelConfig, ModelKind, SequenceModel,
    TrainingLog,
};
use crate::preprocess::{
    chronological_split, clean, interpolate, window, CleanConfig, MaskedSeries, Normalizer, RemovalReason,
    WindowConfig, WindowedSample, N_FEATURES,
};

use super::config::derive_seed;

/// Data-quality counters for one series.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityCounters {
    pub samples: usize,
    pub speed_bound_removed: usize,
    pub sigma_removed: usize,
    pub gaps_filled: usize,
    pub episodes: usize,
}

/// A cleaned, gap-free series with its congestion episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSeries {
    pub frames: Vec<u64>,
    pub rows: Vec<[f64; N_FEATURES]>,
    pub rho: Vec<f64>,
    pub episodes: Vec<CongestionEpisode>,
    pub quality: QualityCounters,
}

impl PreparedSeries {
    pub fn congested(&self) -> Vec<bool> {
        episode_flags(self.rows.len(), &self.episodes)
    }

    pub fn samples(&self) -> Vec<ParameterSample> {
        self.frames
            .iter()
            .zip(&self.rows)
            .map(|(&frame, r)| ParameterSample {
                frame,
                flow: r[0],
                density: r[1],
                speed: r[2],
            })
            .collect()
    }
}

/// Cleans and interpolates a measured series, then finds sustained
/// congestion in the congestion index of the cleaned values.
pub fn prepare_series(
    samples: &[ParameterSample],
    clean_cfg: &CleanConfig,
    congestion: &CongestionConfig,
    sample_period_s: f64,
) -> Result<PreparedSeries> {
    let masked = MaskedSeries::from_samples(samples);
    let (cleaned, report) = clean(&masked, clean_cfg);
    let gaps_filled = cleaned.missing_count();
    let rows = interpolate(&cleaned)?;
    let rho: Vec<f64> = rows.iter().map(|r| congestion_index(r[1], r[2], congestion)).collect();
    let episodes = sustained_congestion(&rho, sample_period_s, congestion);
    Ok(PreparedSeries {
        frames: cleaned.frames,
        quality: QualityCounters {
            samples: rows.len(),
            speed_bound_removed: report.count(RemovalReason::SpeedBound),
            sigma_removed: report.count(RemovalReason::SigmaRule),
            gaps_filled,
            episodes: episodes.len(),
        },
        rows,
        rho,
        episodes,
    })
}

/// Fits the normalizer on the training part of every training point, so
/// validation and test statistics never leak into it.
pub fn fit_normalizer(points: &[(PointRole, &PreparedSeries)], train_fraction: f64) -> Result<Normalizer> {
    let rows: Vec<[f64; N_FEATURES]> = points
        .iter()
        .filter(|(role, _)| *role == PointRole::Train)
        .flat_map(|(_, s)| {
            let cut = ((s.rows.len() as f64) * train_fraction).round() as usize;
            s.rows[..cut.min(s.rows.len())].to_vec()
        })
        .collect();
    Normalizer::fit(&rows)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<WindowedSample>,
    pub val: Vec<WindowedSample>,
    /// Per test point, in configuration order.
    pub test: Vec<(String, Vec<WindowedSample>)>,
}

impl Dataset {
    /// Share of positive labels in the training windows.
    pub fn train_balance(&self) -> f64 {
        let pos = self.train.iter().filter(|w| w.label == 1).count();
        pos as f64 / self.train.len().max(1) as f64
    }

    pub fn test_windows(&self) -> impl Iterator<Item = &WindowedSample> {
        self.test.iter().flat_map(|(_, w)| w)
    }
}

/// Windows every point: training points are split chronologically into
/// training and validation windows at `train_stride`, test points are
/// windowed at `test_stride`.
pub fn build_dataset(
    cfg: &SiteConfig,
    points: &[(&str, PointRole, &PreparedSeries)],
    normalizer: &Normalizer,
) -> Result<Dataset> {
    let horizon = cfg.horizon_samples();
    let mut ds = Dataset::default();
    for (id, role, series) in points {
        let rows = normalizer.apply(&series.rows);
        let flags = series.congested();
        match role {
            PointRole::Train => {
                let wc = WindowConfig {
                    seq_len: cfg.window.seq_len,
                    horizon,
                    stride: cfg.window.train_stride,
                };
                let (tr, va) = chronological_split(&window(&rows, &flags, &wc)?, cfg.train_fraction);
                ds.train.extend(tr);
                ds.val.extend(va);
            }
            PointRole::Test => {
                let wc = WindowConfig {
                    seq_len: cfg.window.seq_len,
                    horizon,
                    stride: cfg.window.test_stride,
                };
                ds.test.push((id.to_string(), window(&rows, &flags, &wc)?));
            }
        }
    }
    Ok(ds)
}

/// Trains one recurrent model. Both architectures share the same
/// initialization and shuffling seeds for a given run seed.
pub fn train_model(cfg: &SiteConfig, kind: ModelKind, ds: &Dataset) -> Result<(SequenceModel, TrainingLog)> {
    let model = SequenceModel::new(
        ModelConfig {
            kind,
            hidden_dim: cfg.model.hidden_dim,
            attention_dim: cfg.model.attention_dim,
            ..ModelConfig::default()
        },
        derive_seed(cfg.seed, "model-init"),
    )?;
    let tc = crate::neural::TrainConfig {
        seed: derive_seed(cfg.seed, "shuffle"),
        ..cfg.train
    };
    train(model, &ds.train, &ds.val, &tc)
}

/// Logistic regression on the last time step of each window.
pub fn train_logistic(cfg: &SiteConfig, ds: &Dataset) -> Result<LogisticParams> {
    let x: Vec<[f64; N_FEATURES]> = ds.train.iter().map(last_step).collect();
    let y: Vec<u8> = ds.train.iter().map(|w| w.label).collect();
    logistic_fit(&x, &y, &cfg.logistic)
}

pub fn last_step(w: &WindowedSample) -> [f64; N_FEATURES] {
    *w.sequence.last().expect("windows are non-empty")
}

pub fn predict_logistic(params: &LogisticParams, windows: &[WindowedSample]) -> Vec<f64> {
    windows.iter().map(|w| logistic_predict(params, &last_step(w))).collect()
}

pub fn predict_model(model: &SequenceModel, windows: &[WindowedSample]) -> Vec<f64> {
    predict(model, windows)
}
