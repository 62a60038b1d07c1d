//! Congestion index, sustained-congestion episodes and warning evaluation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CongestionConfig {
    /// Road design capacity, vehicles per hour.
    pub k_c: f64,
    /// Free-flow speed, km/h.
    pub v_f_free: f64,
    pub rho_threshold: f64,
    pub sustained_fraction: f64,
    pub sustained_window_min: f64,
    pub warning_lead_min: f64,
    /// Slack before the lead window in which a warning still counts.
    pub match_tolerance_min: f64,
    /// Consecutive samples above 0.5 required to emit a warning.
    pub debounce_samples: usize,
    /// Minutes the probability must stay at or below 0.5 before another
    /// warning can be emitted.
    pub rearm_min: f64,
}

impl Default for CongestionConfig {
    fn default() -> Self {
        CongestionConfig {
            k_c: 2200.0,
            v_f_free: 120.0,
            rho_threshold: 0.016,
            sustained_fraction: 0.8,
            sustained_window_min: 30.0,
            warning_lead_min: 10.0,
            match_tolerance_min: 1.0,
            debounce_samples: 3,
            rearm_min: 5.0,
        }
    }
}

impl CongestionConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k_c", self.k_c),
            ("v_f_free", self.v_f_free),
            ("rho_threshold", self.rho_threshold),
            ("sustained_window_min", self.sustained_window_min),
            ("warning_lead_min", self.warning_lead_min),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("congestion.{name} must be positive, got {v}")));
            }
        }
        if !(self.sustained_fraction > 0.0 && self.sustained_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "congestion.sustained_fraction must lie in (0, 1], got {}",
                self.sustained_fraction
            )));
        }
        if !(self.match_tolerance_min >= 0.0) {
            return Err(Error::Config("congestion.match_tolerance_min must be non-negative".into()));
        }
        if !(self.rearm_min >= 0.0) {
            return Err(Error::Config("congestion.rearm_min must be non-negative".into()));
        }
        if self.debounce_samples == 0 {
            return Err(Error::Config("congestion.debounce_samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// `ρ = (k_a / k_c)(1 - v_a / v_f)`, clamped at zero when traffic runs
/// faster than free flow.
pub fn congestion_index(k_a: f64, v_a: f64, cfg: &CongestionConfig) -> f64 {
    ((k_a / cfg.k_c) * (1.0 - v_a / cfg.v_f_free)).max(0.0)
}

pub fn is_congested(rho: f64, cfg: &CongestionConfig) -> bool {
    rho > cfg.rho_threshold
}

/// A sustained-congestion episode over sample indices `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CongestionEpisode {
    pub start: usize,
    pub end: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub peak_rho: f64,
}

/// Finds sustained-congestion episodes in a regularly sampled ρ series.
///
/// Every window of `sustained_window_min` whose congested fraction reaches
/// `sustained_fraction` qualifies. Overlapping qualifying windows merge,
/// and each merged run is trimmed to its first and last congested sample.
pub fn sustained_congestion(
    rho: &[f64],
    sample_period_s: f64,
    cfg: &CongestionConfig,
) -> Vec<CongestionEpisode> {
    let w = (cfg.sustained_window_min * 60.0 / sample_period_s).round() as usize;
    if w == 0 || rho.len() < w {
        return Vec::new();
    }
    let flags: Vec<bool> = rho.iter().map(|&r| is_congested(r, cfg)).collect();
    let need = cfg.sustained_fraction * w as f64;

    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut count = flags[..w].iter().filter(|&&f| f).count();
    for s in 0..=rho.len() - w {
        if s > 0 {
            count -= flags[s - 1] as usize;
            count += flags[s + w - 1] as usize;
        }
        if count as f64 >= need - 1e-9 {
            match runs.last_mut() {
                Some(last) if s <= last.1 => last.1 = s + w,
                _ => runs.push((s, s + w)),
            }
        }
    }

    runs.into_iter()
        .filter_map(|(lo, hi)| {
            let first = (lo..hi).find(|&i| flags[i])?;
            let last = (lo..hi).rev().find(|&i| flags[i])?;
            let peak = rho[first..=last].iter().cloned().fold(f64::MIN, f64::max);
            Some(CongestionEpisode {
                start: first,
                end: last + 1,
                start_s: first as f64 * sample_period_s,
                end_s: (last + 1) as f64 * sample_period_s,
                peak_rho: peak,
            })
        })
        .collect()
}

/// Per-sample membership in any episode.
pub fn episode_flags(len: usize, episodes: &[CongestionEpisode]) -> Vec<bool> {
    let mut flags = vec![false; len];
    for e in episodes {
        for f in flags.iter_mut().take(e.end.min(len)).skip(e.start) {
            *f = true;
        }
    }
    flags
}

/// Emits a warning time whenever the probability has exceeded 0.5 for
/// `debounce_samples` consecutive samples. After a warning the emitter
/// re-arms only once the probability has stayed at or below 0.5 for at
/// least `debounce_samples` samples spanning `rearm_s` seconds.
pub fn emit_warnings(probabilities: &[f64], times_s: &[f64], debounce_samples: usize, rearm_s: f64) -> Vec<f64> {
    let mut warnings = Vec::new();
    let mut above = 0usize;
    let mut below = 0usize;
    let mut below_since = f64::NAN;
    let mut armed = true;
    for (&p, &t) in probabilities.iter().zip(times_s) {
        if p > 0.5 {
            above += 1;
            below = 0;
            if armed && above >= debounce_samples {
                warnings.push(t);
                armed = false;
            }
        } else {
            if below == 0 {
                below_since = t;
            }
            below += 1;
            above = 0;
            if below >= debounce_samples && t - below_since >= rearm_s {
                armed = true;
            }
        }
    }
    warnings
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarningEventRow {
    pub event_id: usize,
    pub actual_start_s: f64,
    pub warning_time_s: Option<f64>,
    pub lead_error_minutes: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarningEvaluation {
    pub episodes: usize,
    pub warnings_issued: usize,
    pub matched: usize,
    pub missed: usize,
    pub false_warnings: usize,
    pub warning_accuracy: f64,
    pub missed_rate: f64,
    /// False warnings as a share of warnings issued; 0 when none were issued.
    pub false_rate: f64,
    /// `None` when no episode was matched.
    pub mean_lead_error_minutes: Option<f64>,
    /// Share of matched events whose lead error is within one minute.
    pub within_one_minute: Option<f64>,
    pub events: Vec<WarningEventRow>,
}

/// Matches warnings to episode starts. A warning matches an episode when it
/// falls in `[start - lead - tolerance, start]`; each episode takes the
/// unused warning with the smallest lead error. Times are in seconds.
pub fn evaluate_warnings(
    warnings_s: &[f64],
    episode_starts_s: &[f64],
    cfg: &CongestionConfig,
) -> WarningEvaluation {
    let lead = cfg.warning_lead_min * 60.0;
    let tol = cfg.match_tolerance_min * 60.0;
    let mut used = vec![false; warnings_s.len()];
    let mut events = Vec::with_capacity(episode_starts_s.len());

    for (id, &start) in episode_starts_s.iter().enumerate() {
        let best = warnings_s
            .iter()
            .enumerate()
            .filter(|&(i, &w)| !used[i] && w >= start - lead - tol && w <= start)
            .map(|(i, &w)| (i, w, ((start - w) - lead).abs()))
            .min_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
        let row = match best {
            Some((i, w, err_s)) => {
                used[i] = true;
                WarningEventRow {
                    event_id: id + 1,
                    actual_start_s: start,
                    warning_time_s: Some(w),
                    lead_error_minutes: Some(err_s / 60.0),
                }
            }
            None => WarningEventRow {
                event_id: id + 1,
                actual_start_s: start,
                warning_time_s: None,
                lead_error_minutes: None,
            },
        };
        events.push(row);
    }

    let n = episode_starts_s.len();
    let matched = events.iter().filter(|e| e.warning_time_s.is_some()).count();
    let false_warnings = used.iter().filter(|u| !**u).count();
    let errors: Vec<f64> = events.iter().filter_map(|e| e.lead_error_minutes).collect();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    WarningEvaluation {
        episodes: n,
        warnings_issued: warnings_s.len(),
        matched,
        missed: n - matched,
        false_warnings,
        warning_accuracy: ratio(matched, n),
        missed_rate: ratio(n - matched, n),
        false_rate: ratio(false_warnings, warnings_s.len()),
        mean_lead_error_minutes: (!errors.is_empty())
            .then(|| errors.iter().sum::<f64>() / errors.len() as f64),
        within_one_minute: (!errors.is_empty())
            .then(|| ratio(errors.iter().filter(|e| **e <= 1.0).count(), errors.len())),
        events,
    }
}

/// Writes the per-event table with columns
/// `event_id,actual_start,warning_time,lead_error_minutes`.
pub fn write_warning_table(path: &Path, events: &[WarningEventRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["event_id", "actual_start", "warning_time", "lead_error_minutes"])?;
    for e in events {
        w.write_record([
            e.event_id.to_string(),
            e.actual_start_s.to_string(),
            e.warning_time_s.map(|v| v.to_string()).unwrap_or_default(),
            e.lead_error_minutes.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes detected episodes as `episode_id,start_s,end_s,peak_rho`.
pub fn write_episode_table(path: &Path, episodes: &[CongestionEpisode]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["episode_id", "start_s", "end_s", "peak_rho"])?;
    for (i, e) in episodes.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            e.start_s.to_string(),
            e.end_s.to_string(),
            e.peak_rho.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
