//! Temporal and volumetric IoU metrics, upper-bound oracles and the
//! trimmed-query midpoint shift diagnostic.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grounding::interpolate_tubelet;
use crate::model::{box_iou, temporal_iou, BBox, Detection, Frame, GroundTruthAnnotation, TemporalSpan, Tubelet};

/// Recall thresholds reported by default.
pub const RECALL_THRESHOLDS: [f64; 3] = [0.1, 0.3, 0.5];

pub fn tiou_metric(pred: &TemporalSpan, gt: &TemporalSpan) -> Result<f64> {
    temporal_iou(pred, gt)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViouOutcome {
    pub viou: f64,
    /// Frames of the temporal intersection without a predicted box.
    pub missing_frames: Vec<Frame>,
}

/// Sum of per-frame box IoUs over the temporal intersection, divided by the
/// size of the temporal union.
pub fn viou_metric(
    pred_span: &TemporalSpan,
    pred_boxes: &BTreeMap<Frame, BBox>,
    gt: &GroundTruthAnnotation,
) -> Result<ViouOutcome> {
    let gt_span = gt.span();
    if !pred_span.same_rate(&gt_span) {
        return Err(Error::Config(format!(
            "prediction at {} fps vs annotation at {} fps",
            pred_span.fps_sampled, gt_span.fps_sampled
        )));
    }
    let Some((lo, hi)) = pred_span.intersection(&gt_span) else {
        return Ok(ViouOutcome { viou: 0.0, missing_frames: Vec::new() });
    };
    let union = pred_span.len_frames() + gt_span.len_frames() - (u64::from(hi - lo) + 1);
    let mut total = 0.0;
    let mut missing_frames = Vec::new();
    for frame in lo..=hi {
        match pred_boxes.get(&frame) {
            Some(b) => total += box_iou(b, &gt.boxes()[&frame]),
            None => missing_frames.push(frame),
        }
    }
    if !missing_frames.is_empty() {
        log::warn!("{}: {} overlap frames lack a predicted box", gt.video_id, missing_frames.len());
    }
    Ok(ViouOutcome { viou: total / union as f64, missing_frames })
}

/// Fraction of samples whose vIoU is strictly greater than `r`.
pub fn viou_at_r(vious: &[f64], r: f64) -> Result<f64> {
    if vious.is_empty() {
        return Err(Error::Empty("vIoU list"));
    }
    Ok(vious.iter().filter(|&&v| v > r).count() as f64 / vious.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEval {
    pub video_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    pub tiou: f64,
    pub viou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMetrics {
    pub count: usize,
    pub m_tiou: f64,
    pub m_viou: f64,
    /// `(R, fraction with vIoU > R)`, ascending in R.
    pub viou_at: Vec<(f64, f64)>,
}

impl CorpusMetrics {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a SampleEval>) -> Result<Self> {
        let samples: Vec<&SampleEval> = samples.into_iter().collect();
        if samples.is_empty() {
            return Err(Error::Empty("evaluation samples"));
        }
        let n = samples.len() as f64;
        let vious: Vec<f64> = samples.iter().map(|s| s.viou).collect();
        let viou_at = RECALL_THRESHOLDS
            .iter()
            .map(|&r| viou_at_r(&vious, r).map(|v| (r, v)))
            .collect::<Result<_>>()?;
        Ok(Self {
            count: samples.len(),
            m_tiou: samples.iter().map(|s| s.tiou).sum::<f64>() / n,
            m_viou: vious.iter().sum::<f64>() / n,
            viou_at,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub samples: Vec<SampleEval>,
    pub corpus: CorpusMetrics,
    /// Per-tag breakdown for samples carrying a query tag.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_tag: BTreeMap<String, CorpusMetrics>,
}

impl EvalResult {
    pub fn from_samples(mut samples: Vec<SampleEval>) -> Result<Self> {
        samples.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        let corpus = CorpusMetrics::from_samples(&samples)?;
        let mut tags: BTreeMap<String, Vec<&SampleEval>> = BTreeMap::new();
        for s in &samples {
            if let Some(tag) = &s.tag {
                tags.entry(tag.clone()).or_default().push(s);
            }
        }
        let by_tag = tags
            .into_iter()
            .map(|(tag, group)| CorpusMetrics::from_samples(group).map(|m| (tag, m)))
            .collect::<Result<_>>()?;
        Ok(Self { samples, corpus, by_tag })
    }

    /// Aligned plain-text table, metrics as percentages.
    pub fn to_table(&self) -> String {
        let mut header = format!("{:<16} {:>6} {:>8} {:>8}", "split", "n", "m_tIoU", "m_vIoU");
        for (r, _) in &self.corpus.viou_at {
            let _ = write!(header, " {:>9}", format!("vIoU@{r}"));
        }
        let mut out = header;
        out.push('\n');
        let mut row = |name: &str, m: &CorpusMetrics| {
            let _ = write!(out, "{:<16} {:>6} {:>8.2} {:>8.2}", name, m.count, 100.0 * m.m_tiou, 100.0 * m.m_viou);
            for (_, v) in &m.viou_at {
                let _ = write!(out, " {:>9.2}", 100.0 * v);
            }
            out.push('\n');
        };
        row("all", &self.corpus);
        for (tag, m) in &self.by_tag {
            row(tag, m);
        }
        out
    }
}

/// Best per-frame detection inside the ground-truth span; frames without
/// detections contribute 0.
pub fn upper_bound_detection(gt: &GroundTruthAnnotation, frames: &BTreeMap<Frame, Vec<Detection>>) -> f64 {
    let span = gt.span();
    let total: f64 = gt
        .boxes()
        .iter()
        .map(|(frame, gt_box)| {
            frames
                .get(frame)
                .into_iter()
                .flatten()
                .map(|d| box_iou(&d.bbox, gt_box))
                .fold(0.0, f64::max)
        })
        .sum();
    total / span.len_frames() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpperBoundMode {
    /// Each tubelet, gap-filled, is evaluated over its own span.
    OwnSpan,
    /// Each tubelet, gap-filled, is first clipped to the ground-truth span.
    ClipToGt,
}

fn tubelet_viou(gt: &GroundTruthAnnotation, t: &Tubelet, mode: UpperBoundMode) -> Result<f64> {
    let filled = interpolate_tubelet(t, 1);
    let mut span = filled.span();
    if mode == UpperBoundMode::ClipToGt {
        match span.intersection(&gt.span()) {
            Some((lo, hi)) => span = TemporalSpan::new(lo, hi, span.fps_sampled)?,
            None => return Ok(0.0),
        }
    }
    let boxes: BTreeMap<Frame, BBox> = filled.boxes().into_iter().filter(|(f, _)| span.contains_frame(*f)).collect();
    Ok(viou_metric(&span, &boxes, gt)?.viou)
}

/// The tubelet with the highest vIoU against the annotation (ties: earlier
/// first frame, then smaller id).
pub fn upper_bound_tubelet(gt: &GroundTruthAnnotation, tubelets: &[Tubelet], mode: UpperBoundMode) -> Result<(String, f64)> {
    let mut best: Option<(f64, Frame, &str)> = None;
    for t in tubelets {
        let v = tubelet_viou(gt, t, mode)?;
        let key = (v, t.first_frame(), t.id());
        let better = match best {
            None => true,
            Some(b) => v > b.0 || (v == b.0 && (key.1, key.2) < (b.1, b.2)),
        };
        if better {
            best = Some(key);
        }
    }
    best.map(|(v, _, id)| (id.to_string(), v)).ok_or(Error::Empty("tubelets"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrimSide {
    Start,
    End,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shift {
    Left,
    Right,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftRecord {
    pub trim_side: TrimSide,
    pub shift: Shift,
    /// Midpoint displacement in sampled frames (trimmed minus full).
    pub delta: f64,
}

impl ShiftRecord {
    /// Dropping the first action should move the prediction right, dropping
    /// the last one should move it left.
    pub fn is_correct(&self) -> bool {
        matches!((self.trim_side, self.shift), (TrimSide::Start, Shift::Right) | (TrimSide::End, Shift::Left))
    }
}

pub fn shift_classify(full: &TemporalSpan, trimmed: &TemporalSpan, trim_side: TrimSide, eps_frames: f64) -> ShiftRecord {
    let delta = trimmed.midpoint() - full.midpoint();
    let shift = if delta.abs() < eps_frames {
        Shift::None
    } else if delta > 0.0 {
        Shift::Right
    } else {
        Shift::Left
    };
    ShiftRecord { trim_side, shift, delta }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SideTally {
    pub total: usize,
    pub wrong_direction: usize,
    pub no_shift: usize,
    /// Percentage counting both wrong-direction and no-shift as incorrect.
    pub pct_incorrect: Option<f64>,
    /// Percentage counting only wrong-direction shifts.
    pub pct_wrong_direction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSummary {
    pub start: SideTally,
    pub end: SideTally,
}

pub fn shift_report(records: &[ShiftRecord]) -> Result<ShiftSummary> {
    if records.is_empty() {
        return Err(Error::Empty("shift records"));
    }
    let tally = |side: TrimSide| {
        let mut t = SideTally::default();
        for r in records.iter().filter(|r| r.trim_side == side) {
            t.total += 1;
            match r.shift {
                Shift::None => t.no_shift += 1,
                _ if !r.is_correct() => t.wrong_direction += 1,
                _ => {}
            }
        }
        if t.total > 0 {
            let n = t.total as f64;
            t.pct_incorrect = Some(100.0 * (t.wrong_direction + t.no_shift) as f64 / n);
            t.pct_wrong_direction = Some(100.0 * t.wrong_direction as f64 / n);
        }
        t
    };
    Ok(ShiftSummary { start: tally(TrimSide::Start), end: tally(TrimSide::End) })
}
