//! Cleaning, gap filling, normalization and windowing of parameter series.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::ParameterSample;

pub const FEATURES: [&str; 3] = ["flow", "density", "speed"];
pub const N_FEATURES: usize = 3;
const SPEED: usize = 2;

/// A parameter series where individual feature values may be missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedSeries {
    pub frames: Vec<u64>,
    pub values: Vec<[Option<f64>; N_FEATURES]>,
}

impl MaskedSeries {
    pub fn from_samples(samples: &[ParameterSample]) -> Self {
        MaskedSeries {
            frames: samples.iter().map(|s| s.frame).collect(),
            values: samples
                .iter()
                .map(|s| [Some(s.flow), Some(s.density), Some(s.speed)])
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().flatten().filter(|v| v.is_none()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleanConfig {
    /// Hard speed bounds in km/h.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Width of the acceptance band in standard deviations.
    pub sigma_k: f64,
    /// Upper bound on sigma-clipping passes; clipping stops earlier once a
    /// pass removes nothing.
    pub max_passes: usize,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig {
            speed_min: 60.0,
            speed_max: 140.0,
            sigma_k: 3.0,
            max_passes: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalReason {
    SpeedBound,
    SigmaRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub index: usize,
    pub feature: usize,
    pub value: f64,
    pub reason: RemovalReason,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleanReport {
    pub removals: Vec<Removal>,
}

impl CleanReport {
    pub fn count(&self, reason: RemovalReason) -> usize {
        self.removals.iter().filter(|r| r.reason == reason).count()
    }
}

fn mean_std(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Two-stage outlier removal. Speeds outside the hard bounds are marked
/// missing first; then each feature is sigma-clipped against the mean and
/// standard deviation of its surviving values, repeating until a pass
/// removes nothing. Surviving values are never modified.
pub fn clean(series: &MaskedSeries, cfg: &CleanConfig) -> (MaskedSeries, CleanReport) {
    let mut out = series.clone();
    let mut report = CleanReport::default();

    for (i, row) in out.values.iter_mut().enumerate() {
        if let Some(v) = row[SPEED] {
            if v < cfg.speed_min || v > cfg.speed_max {
                row[SPEED] = None;
                report.removals.push(Removal {
                    index: i,
                    feature: SPEED,
                    value: v,
                    reason: RemovalReason::SpeedBound,
                });
            }
        }
    }

    for f in 0..N_FEATURES {
        for _ in 0..cfg.max_passes {
            let Some((mean, std)) = mean_std(out.values.iter().filter_map(|r| r[f])) else {
                break;
            };
            let band = cfg.sigma_k * std;
            let mut removed = false;
            for (i, row) in out.values.iter_mut().enumerate() {
                if let Some(v) = row[f] {
                    if (v - mean).abs() > band {
                        row[f] = None;
                        removed = true;
                        report.removals.push(Removal {
                            index: i,
                            feature: f,
                            value: v,
                            reason: RemovalReason::SigmaRule,
                        });
                    }
                }
            }
            if !removed {
                break;
            }
        }
    }
    report.removals.sort_by_key(|r| (r.index, r.feature));
    (out, report)
}

/// Fills missing values linearly between the nearest present neighbours;
/// leading and trailing gaps take the nearest present value.
pub fn interpolate(series: &MaskedSeries) -> Result<Vec<[f64; N_FEATURES]>> {
    let n = series.len();
    let mut out = vec![[0.0; N_FEATURES]; n];
    for f in 0..N_FEATURES {
        let present: Vec<(usize, f64)> = series
            .values
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r[f].map(|v| (i, v)))
            .collect();
        let (Some(&first), Some(&last)) = (present.first(), present.last()) else {
            if n == 0 {
                continue;
            }
            return Err(Error::Data(format!(
                "feature `{}` is missing at every sample",
                FEATURES[f]
            )));
        };
        for row in out.iter_mut().take(first.0 + 1) {
            row[f] = first.1;
        }
        for row in out.iter_mut().skip(last.0) {
            row[f] = last.1;
        }
        for pair in present.windows(2) {
            let ((i0, v0), (i1, v1)) = (pair[0], pair[1]);
            out[i0][f] = v0;
            let span = (i1 - i0) as f64;
            for (step, row) in out[i0 + 1..i1].iter_mut().enumerate() {
                let t = (step + 1) as f64 / span;
                row[f] = v0 + (v1 - v0) * t;
            }
            out[i1][f] = v1;
        }
    }
    Ok(out)
}

/// Per-feature standardization fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub features: Vec<String>,
    pub mean: [f64; N_FEATURES],
    pub std: [f64; N_FEATURES],
}

impl Normalizer {
    pub fn fit(training: &[[f64; N_FEATURES]]) -> Result<Self> {
        if training.is_empty() {
            return Err(Error::Config("cannot fit a normalizer on an empty split".into()));
        }
        let mut mean = [0.0; N_FEATURES];
        let mut std = [0.0; N_FEATURES];
        for f in 0..N_FEATURES {
            let (m, s) = mean_std(training.iter().map(|r| r[f])).unwrap_or((0.0, 0.0));
            if !(s > 0.0) {
                return Err(Error::Config(format!(
                    "feature `{}` has zero variance in the training split",
                    FEATURES[f]
                )));
            }
            mean[f] = m;
            std[f] = s;
        }
        Ok(Normalizer {
            features: FEATURES.iter().map(|s| s.to_string()).collect(),
            mean,
            std,
        })
    }

    pub fn apply(&self, rows: &[[f64; N_FEATURES]]) -> Vec<[f64; N_FEATURES]> {
        rows.iter()
            .map(|r| std::array::from_fn(|f| (r[f] - self.mean[f]) / self.std[f]))
            .collect()
    }

    pub fn invert(&self, rows: &[[f64; N_FEATURES]]) -> Vec<[f64; N_FEATURES]> {
        rows.iter()
            .map(|r| std::array::from_fn(|f| r[f] * self.std[f] + self.mean[f]))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Fixed-length input sequence with a binary congestion label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedSample {
    pub sequence: Vec<[f64; N_FEATURES]>,
    pub label: u8,
    /// Index of the window's last sample in the source series.
    pub end_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub seq_len: usize,
    /// Label horizon in samples.
    pub horizon: usize,
    /// Distance between consecutive window end positions.
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            seq_len: 10,
            horizon: 30 * 60,
            stride: 1,
        }
    }
}

/// Slides a `seq_len` window over `rows`. A window ending at sample `t` is
/// labeled 1 iff any sample in `(t, t + horizon]` lies inside a sustained
/// congestion episode (`congested[i]`).
pub fn window(rows: &[[f64; N_FEATURES]], congested: &[bool], cfg: &WindowConfig) -> Result<Vec<WindowedSample>> {
    if congested.len() != rows.len() {
        return Err(Error::Data(format!(
            "{} labels for {} samples",
            congested.len(),
            rows.len()
        )));
    }
    if cfg.seq_len == 0 || cfg.stride == 0 {
        return Err(Error::Config("seq_len and stride must be positive".into()));
    }
    if rows.len() < cfg.seq_len {
        return Ok(Vec::new());
    }
    // prefix[i] = congested samples in [0, i)
    let mut prefix = vec![0usize; congested.len() + 1];
    for (i, &c) in congested.iter().enumerate() {
        prefix[i + 1] = prefix[i] + c as usize;
    }
    let n = rows.len();
    Ok((cfg.seq_len - 1..n)
        .step_by(cfg.stride)
        .map(|end| {
            let lo = (end + 1).min(n);
            let hi = (end + 1 + cfg.horizon).min(n);
            let label = (prefix[hi] - prefix[lo] > 0) as u8;
            WindowedSample {
                sequence: rows[end + 1 - cfg.seq_len..=end].to_vec(),
                label,
                end_index: end,
            }
        })
        .collect())
}

/// Chronological split: the first `train_fraction` of the samples form the
/// training part, the rest validation.
pub fn chronological_split<T: Clone>(items: &[T], train_fraction: f64) -> (Vec<T>, Vec<T>) {
    let cut = ((items.len() as f64) * train_fraction).round() as usize;
    let cut = cut.min(items.len());
    (items[..cut].to_vec(), items[cut..].to_vec())
}
