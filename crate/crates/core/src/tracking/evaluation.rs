//! CLEAR-MOT style evaluation of tracker output against ground truth.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::assignment::hungarian_assign;
use super::tracker::{FrameEvents, TrackRecord, TrackStatus};
use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};

/// A box with an identity at a frame, for either ground truth or hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub frame: u64,
    pub id: u64,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingMetrics {
    pub mota: f64,
    pub id_switches: usize,
    pub fragmentations: usize,
    pub false_negatives: usize,
    pub false_positives: usize,
    pub matches: usize,
    pub ground_truth_count: usize,
    /// Fraction of ground-truth identities matched in at least 80% of the
    /// frames they appear in ("mostly tracked").
    pub mostly_tracked: f64,
}

fn by_frame(boxes: &[LabeledBox]) -> BTreeMap<u64, Vec<&LabeledBox>> {
    let mut out: BTreeMap<u64, Vec<&LabeledBox>> = BTreeMap::new();
    for b in boxes {
        out.entry(b.frame).or_default().push(b);
    }
    out
}

/// Evaluates hypotheses against ground truth.
///
/// Per frame, correspondences from the previous frame are kept while their
/// IoU stays at or above `iou_threshold`; the rest are matched with
/// [`hungarian_assign`] on `1 - IoU`. An identity switch is counted whenever
/// a ground-truth object is matched to a different hypothesis id than the
/// one it was last matched to.
pub fn evaluate_tracking(
    ground_truth: &[LabeledBox],
    hypotheses: &[LabeledBox],
    iou_threshold: f64,
) -> Result<TrackingMetrics> {
    if ground_truth.is_empty() {
        return Err(Error::UndefinedMetric(
            "MOTA is undefined without ground truth objects".into(),
        ));
    }
    let gt_frames = by_frame(ground_truth);
    let hyp_frames = by_frame(hypotheses);
    let frames: BTreeSet<u64> = gt_frames.keys().chain(hyp_frames.keys()).copied().collect();

    let mut last_match: HashMap<u64, u64> = HashMap::new();
    let mut tracked_prev: HashMap<u64, bool> = HashMap::new();
    let mut gt_frames_seen: HashMap<u64, usize> = HashMap::new();
    let mut gt_frames_matched: HashMap<u64, usize> = HashMap::new();
    let mut prev_pairs: HashMap<u64, u64> = HashMap::new();

    let (mut fn_, mut fp, mut idsw, mut frag, mut matched_total) = (0, 0, 0, 0, 0);
    let empty = Vec::new();

    for frame in frames {
        let gts = gt_frames.get(&frame).unwrap_or(&empty);
        let hyps = hyp_frames.get(&frame).unwrap_or(&empty);

        let mut pairs: Vec<(usize, usize)> = Vec::new();
        let mut gt_used = vec![false; gts.len()];
        let mut hyp_used = vec![false; hyps.len()];

        // Keep still-valid correspondences from the previous frame.
        for (gi, g) in gts.iter().enumerate() {
            if let Some(&h_id) = prev_pairs.get(&g.id) {
                if let Some(hi) = hyps.iter().position(|h| h.id == h_id) {
                    if !hyp_used[hi] && iou(&g.bbox, &hyps[hi].bbox) >= iou_threshold {
                        pairs.push((gi, hi));
                        gt_used[gi] = true;
                        hyp_used[hi] = true;
                    }
                }
            }
        }

        let free_g: Vec<usize> = (0..gts.len()).filter(|&i| !gt_used[i]).collect();
        let free_h: Vec<usize> = (0..hyps.len()).filter(|&i| !hyp_used[i]).collect();
        let cost: Vec<Vec<f64>> = free_g
            .iter()
            .map(|&gi| {
                free_h
                    .iter()
                    .map(|&hi| 1.0 - iou(&gts[gi].bbox, &hyps[hi].bbox))
                    .collect()
            })
            .collect();
        for (r, c) in hungarian_assign(&cost, 1.0 - iou_threshold) {
            pairs.push((free_g[r], free_h[c]));
        }

        let mut current_pairs = HashMap::new();
        let mut matched_gt = BTreeSet::new();
        for &(gi, hi) in &pairs {
            let (g, h) = (gts[gi], hyps[hi]);
            if let Some(&prev) = last_match.get(&g.id) {
                if prev != h.id {
                    idsw += 1;
                }
            }
            last_match.insert(g.id, h.id);
            current_pairs.insert(g.id, h.id);
            matched_gt.insert(g.id);
        }
        matched_total += pairs.len();
        fn_ += gts.len() - pairs.len();
        fp += hyps.len() - pairs.len();

        for g in gts {
            *gt_frames_seen.entry(g.id).or_default() += 1;
            let now = matched_gt.contains(&g.id);
            if now {
                *gt_frames_matched.entry(g.id).or_default() += 1;
            }
            let before = tracked_prev.get(&g.id).copied();
            if now && before == Some(false) && last_seen_tracked(&gt_frames_matched, g.id) {
                frag += 1;
            }
            tracked_prev.insert(g.id, now);
        }
        prev_pairs = current_pairs;
    }

    let gt_count = ground_truth.len();
    let mota = 1.0 - (fn_ + fp + idsw) as f64 / gt_count as f64;
    let ids = gt_frames_seen.len();
    let mostly = gt_frames_seen
        .iter()
        .filter(|(id, &n)| {
            let m = gt_frames_matched.get(id).copied().unwrap_or(0);
            m as f64 >= 0.8 * n as f64
        })
        .count();

    Ok(TrackingMetrics {
        mota,
        id_switches: idsw,
        fragmentations: frag,
        false_negatives: fn_,
        false_positives: fp,
        matches: matched_total,
        ground_truth_count: gt_count,
        mostly_tracked: mostly as f64 / ids as f64,
    })
}

/// True when the object had been matched at some earlier frame, so that a
/// resumed match after a gap counts as a fragmentation.
fn last_seen_tracked(matched: &HashMap<u64, usize>, id: u64) -> bool {
    matched.get(&id).copied().unwrap_or(0) > 1
}

/// Collects tracker records into hypotheses. Tracks that never reached
/// confirmed status are dropped; confirmed tracks keep their earlier
/// tentative records.
pub fn hypotheses_from_events(events: &[FrameEvents]) -> Vec<LabeledBox> {
    let records: Vec<TrackRecord> = events.iter().flat_map(|e| e.records.iter().cloned()).collect();
    hypotheses_from_records(&records)
}

/// Same as [`hypotheses_from_events`] for a flat record stream, e.g. one
/// read back from a track file.
pub fn hypotheses_from_records(records: &[TrackRecord]) -> Vec<LabeledBox> {
    let confirmed: BTreeSet<u64> = records
        .iter()
        .filter(|r| r.status == TrackStatus::Confirmed)
        .map(|r| r.track_id)
        .collect();
    records
        .iter()
        .filter(|r| confirmed.contains(&r.track_id))
        .map(|r| LabeledBox {
            frame: r.frame,
            id: r.track_id,
            bbox: BoundingBox::unit_conf(r.cx, r.cy, r.w, r.h),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lb(frame: u64, id: u64, cx: f64) -> LabeledBox {
        LabeledBox {
            frame,
            id,
            bbox: BoundingBox::unit_conf(cx, 50.0, 20.0, 20.0),
        }
    }

    fn two_targets(frames: u64) -> Vec<LabeledBox> {
        (0..frames)
            .flat_map(|f| [lb(f, 1, 100.0 + f as f64), lb(f, 2, 300.0 - f as f64)])
            .collect()
    }

    #[test]
    fn perfect_tracking() {
        let gt = two_targets(10);
        let m = evaluate_tracking(&gt, &gt, 0.5).unwrap();
        assert_eq!(m.mota, 1.0);
        assert_eq!(m.id_switches, 0);
        assert_eq!(m.fragmentations, 0);
        assert_eq!(m.mostly_tracked, 1.0);
    }

    #[test]
    fn empty_hypotheses_give_zero_mota() {
        let gt = two_targets(10);
        let m = evaluate_tracking(&gt, &[], 0.5).unwrap();
        assert_eq!(m.mota, 0.0);
        assert_eq!(m.false_negatives, 20);
    }

    #[test]
    fn empty_ground_truth_is_undefined() {
        assert!(matches!(
            evaluate_tracking(&[], &[], 0.5),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn single_swap_counts_two_switches() {
        // Hand oracle: hypothesis ids 10/20 follow targets 1/2 for frames 0..5,
        // then exchange targets; each target changes hypothesis once.
        let gt = two_targets(10);
        let hyp: Vec<LabeledBox> = gt
            .iter()
            .map(|g| {
                let swapped = g.frame >= 5;
                let id = match (g.id, swapped) {
                    (1, false) | (2, true) => 10,
                    _ => 20,
                };
                LabeledBox { id, ..*g }
            })
            .collect();
        let m = evaluate_tracking(&gt, &hyp, 0.5).unwrap();
        assert_eq!(m.id_switches, 2);
        assert!((m.mota - (1.0 - 2.0 / 20.0)).abs() < 1e-12);
    }

    #[test]
    fn gap_counts_fragmentation() {
        let gt: Vec<LabeledBox> = (0..10).map(|f| lb(f, 1, 100.0)).collect();
        let hyp: Vec<LabeledBox> = gt.iter().filter(|g| !(4..6).contains(&g.frame)).copied().collect();
        let m = evaluate_tracking(&gt, &hyp, 0.5).unwrap();
        assert_eq!(m.fragmentations, 1);
        assert_eq!(m.false_negatives, 2);
        assert_eq!(m.id_switches, 0);
    }
}
