//! CSV formats shared by the generators, the pipeline and external tools.
//!
//! Detections: `frame,id_hint,cx,cy,w,h,confidence,class` followed by
//! optional embedding columns `e0..e{D-1}`. `id_hint` is left empty for
//! real detector output and carries the true identity for synthetic data.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::ParameterSample;
use crate::geometry::BoundingBox;
use crate::tracking::{Detection, LabeledBox, TrackRecord};

pub const DETECTION_COLUMNS: [&str; 8] = ["frame", "id_hint", "cx", "cy", "w", "h", "confidence", "class"];

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub frame: u64,
    pub id_hint: Option<u64>,
    pub detection: Detection,
}

/// A row that parsed but violates a detection invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionIngest {
    pub records: Vec<DetectionRecord>,
    pub rejected: Vec<Rejection>,
}

pub fn write_detections(path: &Path, records: &[DetectionRecord]) -> Result<()> {
    let dim = records
        .iter()
        .filter_map(|r| r.detection.embedding.as_ref().map(Vec::len))
        .max()
        .unwrap_or(0);
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = DETECTION_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..dim).map(|i| format!("e{i}")));
    w.write_record(&header)?;
    for r in records {
        let b = &r.detection.bbox;
        let mut row = vec![
            r.frame.to_string(),
            r.id_hint.map(|v| v.to_string()).unwrap_or_default(),
            b.cx.to_string(),
            b.cy.to_string(),
            b.w.to_string(),
            b.h.to_string(),
            b.confidence.to_string(),
            b.class_id.to_string(),
        ];
        match &r.detection.embedding {
            Some(e) if e.len() == dim => row.extend(e.iter().map(|v| v.to_string())),
            Some(e) => {
                return Err(Error::Data(format!(
                    "frame {}: embedding has {} values but the file has {dim} columns",
                    r.frame,
                    e.len()
                )))
            }
            None => row.extend(std::iter::repeat_n(String::new(), dim)),
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: u64, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column: column as u64 + 1,
        message: message.into(),
    }
}

fn field<T: std::str::FromStr>(
    path: &Path,
    line: u64,
    rec: &csv::StringRecord,
    col: usize,
    name: &str,
) -> Result<T> {
    let raw = rec.get(col).unwrap_or("").trim();
    raw.parse()
        .map_err(|_| parse_err(path, line, col, format!("cannot parse {name} from `{raw}`")))
}

/// Reads a detection file. Malformed fields abort with a line and column;
/// rows that parse but break a box or embedding invariant are skipped and
/// listed in [`DetectionIngest::rejected`]. An empty file yields no rows.
pub fn read_detections(path: &Path) -> Result<DetectionIngest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Ok(DetectionIngest::default());
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    for (i, want) in DETECTION_COLUMNS.iter().enumerate() {
        if headers.get(i).map(str::trim) != Some(*want) {
            return Err(parse_err(path, 1, i, format!("expected column `{want}`")));
        }
    }
    let dim = headers.len() - DETECTION_COLUMNS.len();
    for i in 0..dim {
        let col = DETECTION_COLUMNS.len() + i;
        if headers.get(col).map(str::trim) != Some(format!("e{i}").as_str()) {
            return Err(parse_err(path, 1, col, format!("expected column `e{i}`")));
        }
    }

    let mut out = DetectionIngest::default();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != headers.len() {
            return Err(parse_err(
                path,
                line,
                rec.len().min(headers.len()),
                format!("expected {} fields, found {}", headers.len(), rec.len()),
            ));
        }
        let frame: u64 = field(path, line, &rec, 0, "frame")?;
        let id_hint = match rec.get(1).unwrap_or("").trim() {
            "" => None,
            _ => Some(field(path, line, &rec, 1, "id_hint")?),
        };
        let bbox = BoundingBox {
            cx: field(path, line, &rec, 2, "cx")?,
            cy: field(path, line, &rec, 3, "cy")?,
            w: field(path, line, &rec, 4, "w")?,
            h: field(path, line, &rec, 5, "h")?,
            confidence: field(path, line, &rec, 6, "confidence")?,
            class_id: field(path, line, &rec, 7, "class")?,
        };
        let base = DETECTION_COLUMNS.len();
        let filled = (base..base + dim).filter(|&c| !rec[c].trim().is_empty()).count();
        let embedding = if filled == 0 {
            None
        } else if filled < dim {
            let col = (base..base + dim).find(|&c| rec[c].trim().is_empty()).unwrap_or(base);
            return Err(parse_err(path, line, col, "embedding is only partially filled"));
        } else {
            let mut e = Vec::with_capacity(dim);
            for c in base..base + dim {
                e.push(field(path, line, &rec, c, &format!("e{}", c - base))?);
            }
            Some(e)
        };
        let detection = Detection { bbox, embedding };
        match detection.validate() {
            Ok(()) => out.records.push(DetectionRecord {
                frame,
                id_hint,
                detection,
            }),
            Err(e) => out.rejected.push(Rejection {
                line,
                reason: e.to_string(),
            }),
        }
    }
    Ok(out)
}

/// Groups detections into one entry per frame in `0..frame_count`, with
/// empty lists for frames that have no detections.
pub fn frames_from_records(records: &[DetectionRecord], frame_count: u64) -> Vec<(u64, Vec<Detection>)> {
    let mut by_frame: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
    for r in records {
        by_frame.entry(r.frame).or_default().push(r.detection.clone());
    }
    let last = by_frame.keys().next_back().map_or(0, |f| f + 1);
    (0..frame_count.max(last))
        .map(|f| (f, by_frame.remove(&f).unwrap_or_default()))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct GroundTruthRow {
    frame: u64,
    id: u64,
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

/// Ground truth as `frame,id,cx,cy,w,h`.
pub fn write_ground_truth(path: &Path, boxes: &[LabeledBox]) -> Result<()> {
    write_rows(
        path,
        &["frame", "id", "cx", "cy", "w", "h"],
        boxes.iter().map(|b| GroundTruthRow {
            frame: b.frame,
            id: b.id,
            cx: b.bbox.cx,
            cy: b.bbox.cy,
            w: b.bbox.w,
            h: b.bbox.h,
        }),
    )
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<LabeledBox>> {
    let rows: Vec<GroundTruthRow> = read_rows(path)?;
    Ok(rows
        .into_iter()
        .map(|r| LabeledBox {
            frame: r.frame,
            id: r.id,
            bbox: BoundingBox::unit_conf(r.cx, r.cy, r.w, r.h),
        })
        .collect())
}

/// Track records as `frame,track_id,cx,cy,w,h,status`.
pub fn write_tracks(path: &Path, records: &[TrackRecord]) -> Result<()> {
    write_rows(
        path,
        &["frame", "track_id", "cx", "cy", "w", "h", "status"],
        records.iter(),
    )
}

pub fn read_tracks(path: &Path) -> Result<Vec<TrackRecord>> {
    read_rows(path)
}

/// Parameter series as `frame,flow,density,speed`.
pub fn write_parameters(path: &Path, samples: &[ParameterSample]) -> Result<()> {
    write_rows(path, &["frame", "flow", "density", "speed"], samples.iter())
}

pub fn read_parameters(path: &Path) -> Result<Vec<ParameterSample>> {
    read_rows(path)
}

/// Writes serializable rows; an empty iterator still produces the header.
pub fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads rows with named columns, reporting the line and column of the
/// first field that fails to parse.
pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    })?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        match rec {
            Ok(v) => out.push(v),
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                let column = match e.kind() {
                    csv::ErrorKind::Deserialize { err, .. } => err.field().unwrap_or(0) as usize,
                    _ => 0,
                };
                return Err(parse_err(path, line, column, e.to_string()));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(frame: u64, cx: f64, embedding: Option<Vec<f64>>) -> DetectionRecord {
        DetectionRecord {
            frame,
            id_hint: Some(3),
            detection: Detection::new(BoundingBox::new(cx, 50.0, 20.0, 10.0, 0.875, 2).unwrap(), embedding)
                .unwrap(),
        }
    }

    #[test]
    fn detections_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let e = vec![0.6, 0.8, 0.0];
        let recs = vec![record(0, 10.1, Some(e.clone())), record(2, 1.0 / 3.0, Some(e))];
        write_detections(&path, &recs).unwrap();
        let back = read_detections(&path).unwrap();
        assert_eq!(back.records, recs);
        assert!(back.rejected.is_empty());
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("frame,id_hint,cx,cy,w,h,confidence,class,e0,e1,e2\n"));
    }

    #[test]
    fn empty_file_is_empty_stream() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "").unwrap();
        assert!(read_detections(&path).unwrap().records.is_empty());
    }

    #[test]
    fn invalid_box_is_rejected_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(
            &path,
            "frame,id_hint,cx,cy,w,h,confidence,class\n0,,10,10,5,5,0.9,0\n1,,10,10,0,5,0.9,0\n",
        )
        .unwrap();
        let ing = read_detections(&path).unwrap();
        assert_eq!(ing.records.len(), 1);
        assert_eq!(ing.rejected.len(), 1);
        assert_eq!(ing.rejected[0].line, 3);
    }

    #[test]
    fn malformed_field_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(
            &path,
            "frame,id_hint,cx,cy,w,h,confidence,class\n0,,10,10,5,5,0.9,0\n1,,10,abc,5,5,0.9,0\n",
        )
        .unwrap();
        match read_detections(&path) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (3, 4)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn frames_are_contiguous() {
        let recs = vec![record(1, 5.0, None), record(3, 6.0, None)];
        let frames = frames_from_records(&recs, 5);
        assert_eq!(frames.iter().map(|f| f.1.len()).collect::<Vec<_>>(), vec![0, 1, 0, 1, 0]);
    }

    #[test]
    fn empty_series_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        write_parameters(&path, &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "frame,flow,density,speed\n");
        assert!(read_parameters(&path).unwrap().is_empty());
    }
}
