//! Tidy plot data: `x,series_name,y` rows plus a small JSON sidecar.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::io::write_rows;

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl PlotSeries {
    pub fn new(name: &str, points: Vec<(f64, f64)>) -> Self {
        PlotSeries {
            name: name.to_string(),
            points,
        }
    }
}

#[derive(Serialize)]
struct Row<'a> {
    x: f64,
    series_name: &'a str,
    y: f64,
}

/// Path of the metadata sidecar for a plot file.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Writes the series as tidy CSV, series after series, and the metadata
/// (axis names, reference values) next to it.
pub fn emit_plot_data(path: &Path, series: &[PlotSeries], meta: &Map<String, Value>) -> Result<()> {
    let rows = series.iter().flat_map(|s| {
        s.points.iter().map(|&(x, y)| Row {
            x,
            series_name: &s.name,
            y,
        })
    });
    write_rows(path, &["x", "series_name", "y"], rows)?;
    let mp = meta_path(path);
    std::fs::write(&mp, serde_json::to_string_pretty(meta)?).map_err(|e| Error::io(&mp, e))
}
