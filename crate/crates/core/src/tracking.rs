//! Deterministic IoU tracker linking per-frame detections into tubelets.
//!
//! Within a frame every (detection, active track) pair whose IoU against the
//! track's last box reaches `iou_min` is a candidate; candidates are accepted
//! greedily by descending IoU, ties going to the lower detection index and
//! then the lower track id. Unmatched detections open new tracks. A track that
//! has missed more than `max_gap` sampled frames is closed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BBox, Detection, Frame, Tubelet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerParams {
    pub iou_min: f64,
    /// Sampled frames a track may miss before it is closed.
    pub max_gap: u32,
    pub min_track_len: usize,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self { iou_min: 0.3, max_gap: 2, min_track_len: 2 }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_min > 0.0 && self.iou_min <= 1.0) {
            return Err(Error::Config(format!("tracker iou_min {} must be in (0, 1]", self.iou_min)));
        }
        if self.min_track_len == 0 {
            return Err(Error::Config("tracker min_track_len must be >= 1".into()));
        }
        Ok(())
    }
}

struct Track {
    id: usize,
    detections: Vec<Detection>,
}

impl Track {
    fn last(&self) -> &Detection {
        &self.detections[self.detections.len() - 1]
    }
}

/// Greedy matching of detections to track boxes. `tracks` holds
/// `(track id, last box)`; returns `(detection index, position in tracks)`.
pub fn greedy_match(tracks: &[(usize, BBox)], detections: &[BBox], iou_min: f64) -> Vec<(usize, usize)> {
    let mut candidates = Vec::new();
    for (di, det) in detections.iter().enumerate() {
        for (ti, (_, last)) in tracks.iter().enumerate() {
            let iou = det.iou(last);
            if iou >= iou_min {
                candidates.push((iou, di, ti));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.1.cmp(&b.1))
            .then(tracks[a.2].0.cmp(&tracks[b.2].0))
    });

    let mut det_used = vec![false; detections.len()];
    let mut track_used = vec![false; tracks.len()];
    let mut matches = Vec::new();
    for (_, di, ti) in candidates {
        if !det_used[di] && !track_used[ti] {
            det_used[di] = true;
            track_used[ti] = true;
            matches.push((di, ti));
        }
    }
    matches
}

/// Tubelet id for the `n`-th emitted tubelet of a video.
pub fn tubelet_id(n: usize) -> String {
    format!("t{n:04}")
}

/// Link detections (keyed by sampled frame) into tubelets.
///
/// Output is sorted by first frame, then by order of track creation, and
/// renumbered `t0000`, `t0001`, ... in that order.
pub fn link_detections(
    frames: &BTreeMap<Frame, Vec<Detection>>,
    params: &TrackerParams,
    fps_sampled: f64,
) -> Result<Vec<Tubelet>> {
    params.validate()?;
    let mut active: Vec<Track> = Vec::new();
    let mut closed: Vec<Track> = Vec::new();
    let mut next_id = 0usize;

    for (&frame, dets) in frames {
        if let Some(bad) = dets.iter().find(|d| d.frame != frame) {
            return Err(Error::InvalidDetection {
                frame: bad.frame,
                reason: format!("filed under frame {frame}"),
            });
        }

        let (still, expired): (Vec<_>, Vec<_>) = active
            .into_iter()
            .partition(|t| frame - t.last().frame - 1 <= params.max_gap);
        active = still;
        closed.extend(expired);

        let track_boxes: Vec<(usize, BBox)> = active.iter().map(|t| (t.id, t.last().bbox)).collect();
        let det_boxes: Vec<BBox> = dets.iter().map(|d| d.bbox).collect();
        let matches = greedy_match(&track_boxes, &det_boxes, params.iou_min);

        let mut matched = vec![false; dets.len()];
        for (di, ti) in matches {
            matched[di] = true;
            active[ti].detections.push(dets[di].clone());
        }
        for (di, det) in dets.iter().enumerate() {
            if !matched[di] {
                active.push(Track { id: next_id, detections: vec![det.clone()] });
                next_id += 1;
            }
        }
    }
    closed.extend(active);

    let mut kept: Vec<Track> = closed
        .into_iter()
        .filter(|t| t.detections.len() >= params.min_track_len)
        .collect();
    kept.sort_by_key(|t| (t.detections[0].frame, t.id));

    kept.into_iter()
        .enumerate()
        .map(|(n, t)| Tubelet::new(tubelet_id(n), t.detections, fps_sampled))
        .collect()
}
