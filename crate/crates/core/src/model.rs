//! Domain types shared by every stage: boxes, detections, tubelets, spans,
//! query records and ground-truth annotations, plus the two IoU primitives.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampled-frame index.
pub type Frame = u32;

/// Axis-aligned box in corner format, pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let coords = [x1, y1, x2, y2];
        let valid = coords.iter().all(|c| c.is_finite() && *c >= 0.0) && x1 < x2 && y1 < y2;
        if !valid {
            return Err(Error::InvalidBox(coords));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        if self == other {
            return 1.0;
        }
        let inter = self.intersection_area(other);
        if inter == 0.0 {
            return 0.0;
        }
        let union = self.area() + other.area() - inter;
        (inter / union).clamp(0.0, 1.0)
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

/// Intersection over union of two boxes; symmetric, 0 when disjoint.
pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

/// Lowercase, strip ASCII punctuation, collapse whitespace.
pub fn normalize_text(raw: &str) -> String {
    raw.split_whitespace()
        .map(|tok| {
            tok.chars()
                .filter(|c| !c.is_ascii_punctuation())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|tok| !tok.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// One detected box on one sampled frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: Frame,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub confidence: f64,
    pub soft_labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

impl Detection {
    pub fn new(frame: Frame, bbox: BBox, confidence: f64, soft_labels: Vec<String>) -> Result<Self> {
        let det = Self { frame, bbox, confidence, soft_labels, embedding: None };
        det.validate()?;
        Ok(det)
    }

    pub fn with_embedding(mut self, embedding: Vec<f64>) -> Result<Self> {
        self.embedding = Some(embedding);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| Error::InvalidDetection { frame: self.frame, reason: reason.into() };
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(fail("confidence outside [0, 1]"));
        }
        if self.soft_labels.is_empty() || self.label().is_empty() {
            return Err(fail("soft_labels must contain at least one non-empty label"));
        }
        if let Some(emb) = &self.embedding {
            if emb.is_empty() || emb.iter().any(|v| !v.is_finite()) {
                return Err(fail("embedding must be non-empty and finite"));
            }
        }
        Ok(())
    }

    /// The detection's normalized label: all soft labels joined, lowercased,
    /// punctuation stripped.
    pub fn label(&self) -> String {
        normalize_text(&self.soft_labels.join(" "))
    }
}

/// Inclusive interval of sampled frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalSpan {
    pub start: Frame,
    pub end: Frame,
    pub fps_sampled: f64,
}

impl TemporalSpan {
    pub fn new(start: Frame, end: Frame, fps_sampled: f64) -> Result<Self> {
        if start > end || !(fps_sampled.is_finite() && fps_sampled > 0.0) {
            return Err(Error::InvalidSpan { start, end, fps: fps_sampled });
        }
        Ok(Self { start, end, fps_sampled })
    }

    /// Number of frames covered, endpoints included.
    pub fn len_frames(&self) -> u64 {
        u64::from(self.end - self.start) + 1
    }

    pub fn duration_seconds(&self) -> f64 {
        self.len_frames() as f64 / self.fps_sampled
    }

    pub fn midpoint(&self) -> f64 {
        (f64::from(self.start) + f64::from(self.end)) / 2.0
    }

    pub fn contains_frame(&self, frame: Frame) -> bool {
        self.start <= frame && frame <= self.end
    }

    /// `self` fully contains `other`.
    pub fn contains(&self, other: &TemporalSpan) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn intersection(&self, other: &TemporalSpan) -> Option<(Frame, Frame)> {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        (lo <= hi).then_some((lo, hi))
    }

    pub fn same_rate(&self, other: &TemporalSpan) -> bool {
        (self.fps_sampled - other.fps_sampled).abs() <= 1e-9 * self.fps_sampled.max(1.0)
    }
}

/// Frame-count IoU of two inclusive spans.
pub fn temporal_iou(a: &TemporalSpan, b: &TemporalSpan) -> Result<f64> {
    if !a.same_rate(b) {
        return Err(Error::Config(format!(
            "temporal IoU between spans sampled at {} and {} fps",
            a.fps_sampled, b.fps_sampled
        )));
    }
    let Some((lo, hi)) = a.intersection(b) else {
        return Ok(0.0);
    };
    let inter = u64::from(hi - lo) + 1;
    let union = a.len_frames() + b.len_frames() - inter;
    Ok(inter as f64 / union as f64)
}

/// Detections of one tracked subject, strictly increasing in frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Tubelet {
    id: String,
    detections: Vec<Detection>,
    fps_sampled: f64,
}

impl Tubelet {
    pub fn new(id: impl Into<String>, detections: Vec<Detection>, fps_sampled: f64) -> Result<Self> {
        let id = id.into();
        let fail = |reason: String| Error::InvalidTubelet { id: id.clone(), reason };
        if detections.is_empty() {
            return Err(fail("no detections".into()));
        }
        if !(fps_sampled.is_finite() && fps_sampled > 0.0) {
            return Err(fail(format!("fps_sampled {fps_sampled} must be > 0")));
        }
        if let Some(w) = detections.windows(2).find(|w| w[0].frame >= w[1].frame) {
            return Err(fail(format!("frames not strictly increasing at {} -> {}", w[0].frame, w[1].frame)));
        }
        for det in &detections {
            det.validate().map_err(|e| fail(e.to_string()))?;
        }
        Ok(Self { id, detections, fps_sampled })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn into_detections(self) -> Vec<Detection> {
        self.detections
    }

    pub fn fps_sampled(&self) -> f64 {
        self.fps_sampled
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn first_frame(&self) -> Frame {
        self.detections[0].frame
    }

    pub fn last_frame(&self) -> Frame {
        self.detections[self.detections.len() - 1].frame
    }

    pub fn span(&self) -> TemporalSpan {
        TemporalSpan { start: self.first_frame(), end: self.last_frame(), fps_sampled: self.fps_sampled }
    }

    pub fn mean_confidence(&self) -> f64 {
        self.detections.iter().map(|d| d.confidence).sum::<f64>() / self.detections.len() as f64
    }

    pub fn boxes(&self) -> BTreeMap<Frame, BBox> {
        self.detections.iter().map(|d| (d.frame, d.bbox)).collect()
    }

    /// Same tubelet with a different id.
    pub fn renamed(&self, id: impl Into<String>) -> Self {
        Self { id: id.into(), ..self.clone() }
    }
}

/// One sub-action phrase; `action_indices` refer to the caption's action
/// order and are absent when the extraction did not provide them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "PhraseRepr")]
pub struct SubActionPhrase {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_indices: Option<Vec<u32>>,
}

/// Phrases may be written as a bare string or as `{text, action_indices}`.
#[derive(Deserialize)]
#[serde(untagged)]
enum PhraseRepr {
    Bare(String),
    Full {
        text: String,
        #[serde(default)]
        action_indices: Option<Vec<u32>>,
    },
}

impl From<PhraseRepr> for SubActionPhrase {
    fn from(r: PhraseRepr) -> Self {
        match r {
            PhraseRepr::Bare(text) => Self { text, action_indices: None },
            PhraseRepr::Full { text, action_indices } => Self { text, action_indices },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub video_id: String,
    pub caption: String,
    pub subject_phrase: String,
    /// Action count -> phrases containing exactly that many actions.
    #[serde(default)]
    pub sub_actions: BTreeMap<u32, Vec<SubActionPhrase>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_embedding: Option<Vec<f64>>,
    /// Free-form category carried into evaluation breakdowns
    /// (e.g. "declarative" / "interrogative").
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

impl QueryRecord {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Error::InvalidSample(format!("query for `{}`: {msg}", self.video_id));
        if self.subject_phrase.trim().is_empty() {
            return Err(fail("empty subject_phrase".into()));
        }
        for (expected, key) in (1u32..).zip(self.sub_actions.keys()) {
            if *key != expected {
                return Err(fail(format!("sub_actions keys must be 1..n, found {key} where {expected} expected")));
            }
        }
        if let Some(q) = &self.query_embedding {
            if q.is_empty() || q.iter().any(|v| !v.is_finite()) {
                return Err(fail("query_embedding must be non-empty and finite".into()));
            }
        }
        Ok(())
    }
}

/// Ground-truth span plus one box per frame of the span.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthAnnotation {
    pub video_id: String,
    span: TemporalSpan,
    boxes: BTreeMap<Frame, BBox>,
}

impl GroundTruthAnnotation {
    pub fn new(video_id: impl Into<String>, span: TemporalSpan, boxes: BTreeMap<Frame, BBox>) -> Result<Self> {
        let video_id = video_id.into();
        let covered = boxes.len() as u64 == span.len_frames()
            && boxes.keys().next() == Some(&span.start)
            && boxes.keys().next_back() == Some(&span.end);
        if !covered {
            return Err(Error::InvalidSample(format!(
                "annotation for `{video_id}` must have exactly one box per frame of [{}, {}]",
                span.start, span.end
            )));
        }
        Ok(Self { video_id, span, boxes })
    }

    pub fn span(&self) -> TemporalSpan {
        self.span
    }

    pub fn boxes(&self) -> &BTreeMap<Frame, BBox> {
        &self.boxes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn span(s: u32, e: u32) -> TemporalSpan {
        TemporalSpan::new(s, e, 5.0).unwrap()
    }

    /// Counts unit pixels covered by both / either box; only valid for
    /// integer-aligned boxes.
    fn pixel_iou(a: &BBox, b: &BBox) -> f64 {
        let (mut inter, mut union) = (0u32, 0u32);
        for x in 0..16 {
            for y in 0..16 {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                let ia = a.x1() < cx && cx < a.x2() && a.y1() < cy && cy < a.y2();
                let ib = b.x1() < cx && cx < b.x2() && b.y1() < cy && cy < b.y2();
                inter += u32::from(ia && ib);
                union += u32::from(ia || ib);
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn box_iou_examples() {
        let a = bb(0.0, 0.0, 2.0, 2.0);
        assert_eq!(box_iou(&a, &a), 1.0);
        assert_eq!(box_iou(&bb(0.0, 0.0, 1.0, 1.0), &bb(2.0, 2.0, 3.0, 3.0)), 0.0);
        let b = bb(1.0, 1.0, 3.0, 3.0);
        let oracle = pixel_iou(&a, &b);
        assert!((oracle - 1.0 / 7.0).abs() < 1e-12);
        assert!((box_iou(&a, &b) - oracle).abs() < 1e-12);
    }

    #[test]
    fn touching_boxes_do_not_overlap() {
        assert_eq!(box_iou(&bb(0.0, 0.0, 1.0, 1.0), &bb(1.0, 0.0, 2.0, 1.0)), 0.0);
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(BBox::new(1.0, 0.0, 1.0, 2.0).is_err());
        assert!(BBox::new(-1.0, 0.0, 1.0, 2.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 2.0).is_err());
        assert!(serde_json::from_str::<BBox>("[3, 0, 1, 1]").is_err());
    }

    #[test]
    fn temporal_iou_examples() {
        assert_eq!(temporal_iou(&span(0, 10), &span(0, 10)).unwrap(), 1.0);
        assert_eq!(temporal_iou(&span(0, 4), &span(6, 10)).unwrap(), 0.0);
        assert!((temporal_iou(&span(0, 6), &span(3, 9)).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn temporal_iou_rejects_mixed_rates() {
        let other = TemporalSpan::new(0, 3, 25.0).unwrap();
        assert!(temporal_iou(&span(0, 3), &other).unwrap_err().is_config());
    }

    #[test]
    fn span_duration() {
        let s = TemporalSpan::new(2, 6, 2.5).unwrap();
        assert_eq!(s.len_frames(), 5);
        assert_eq!(s.duration_seconds(), 2.0);
        assert!(TemporalSpan::new(3, 2, 1.0).is_err());
        assert!(TemporalSpan::new(0, 2, 0.0).is_err());
    }

    #[test]
    fn normalize_text_strips_punctuation() {
        assert_eq!(normalize_text("  The Woman, in  red! "), "the woman in red");
        assert_eq!(normalize_text("..."), "");
    }

    #[test]
    fn tubelet_invariants() {
        let det = |f| Detection::new(f, bb(0.0, 0.0, 1.0, 1.0), 0.5, vec!["man".into()]).unwrap();
        assert!(Tubelet::new("t", vec![], 1.0).is_err());
        assert!(Tubelet::new("t", vec![det(2), det(2)], 1.0).is_err());
        let t = Tubelet::new("t", vec![det(2), det(5)], 1.0).unwrap();
        assert_eq!((t.span().start, t.span().end), (2, 5));
    }

    #[test]
    fn detection_validation() {
        let b = bb(0.0, 0.0, 1.0, 1.0);
        assert!(Detection::new(0, b, 1.2, vec!["man".into()]).is_err());
        assert!(Detection::new(0, b, 0.5, vec![]).is_err());
        let d = Detection::new(0, b, 0.5, vec!["man".into()]).unwrap();
        assert!(d.clone().with_embedding(vec![]).is_err());
        assert!(d.with_embedding(vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn query_keys_must_be_consecutive() {
        let mut q = QueryRecord {
            video_id: "v".into(),
            caption: "c".into(),
            subject_phrase: "the man".into(),
            sub_actions: BTreeMap::new(),
            query_embedding: None,
            tag: None,
        };
        q.sub_actions.insert(1, vec![]);
        q.sub_actions.insert(3, vec![]);
        assert!(q.validate().is_err());
        q.sub_actions.remove(&3);
        assert!(q.validate().is_ok());
    }

    #[test]
    fn annotation_requires_full_coverage() {
        let b = bb(0.0, 0.0, 1.0, 1.0);
        let boxes: BTreeMap<_, _> = [(0, b), (2, b)].into_iter().collect();
        assert!(GroundTruthAnnotation::new("v", span(0, 2), boxes).is_err());
        let boxes: BTreeMap<_, _> = (0..=2).map(|f| (f, b)).collect();
        assert!(GroundTruthAnnotation::new("v", span(0, 2), boxes).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_box() -> impl Strategy<Value = BBox> {
            (0u32..8, 0u32..8, 1u32..5, 1u32..5)
                .prop_map(|(x, y, w, h)| bb(x as f64, y as f64, (x + w) as f64, (y + h) as f64))
        }

        fn arb_span() -> impl Strategy<Value = TemporalSpan> {
            (0u32..40, 0u32..20).prop_map(|(s, len)| span(s, s + len))
        }

        fn frame_set_iou(a: &TemporalSpan, b: &TemporalSpan) -> f64 {
            let fa: std::collections::BTreeSet<u32> = (a.start..=a.end).collect();
            let fb: std::collections::BTreeSet<u32> = (b.start..=b.end).collect();
            fa.intersection(&fb).count() as f64 / fa.union(&fb).count() as f64
        }

        proptest! {
            #[test]
            fn box_iou_symmetric_bounded(a in arb_box(), b in arb_box()) {
                let ab = box_iou(&a, &b);
                prop_assert_eq!(ab, box_iou(&b, &a));
                prop_assert!((0.0..=1.0).contains(&ab));
                prop_assert_eq!(ab == 1.0, a == b);
                prop_assert!((ab - pixel_iou(&a, &b)).abs() < 1e-12);
            }

            #[test]
            fn temporal_iou_matches_frame_sets(a in arb_span(), b in arb_span()) {
                let t = temporal_iou(&a, &b).unwrap();
                prop_assert_eq!(t, temporal_iou(&b, &a).unwrap());
                prop_assert_eq!(t, frame_set_iou(&a, &b));
                prop_assert_eq!(t == 1.0, a == b);
            }
        }
    }
}
