//! JSON Lines record formats and readers/writers with per-line diagnostics.
//!
//! Frame indices in every file are sampled-frame indices; the sampling rate
//! of each video lives in its metadata record.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::ShiftRecord;
use crate::grounding::{CandidateScore, Prediction};
use crate::model::{BBox, Detection, Frame, GroundTruthAnnotation, TemporalSpan, Tubelet};

/// Reads one JSON record per non-blank line; `check` runs on every parsed
/// record and its error is reported against the line.
pub fn read_jsonl_with<T, F>(path: &Path, mut check: F) -> Result<Vec<T>>
where
    T: DeserializeOwned,
    F: FnMut(&T) -> Result<()>,
{
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { path: path.to_path_buf(), line: i + 1, msg };
        let record: T = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        check(&record).map_err(|e| parse_err(e.to_string()))?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_jsonl_with(path, |_| Ok(()))
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    write_text(path, &to_jsonl(records)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub video_id: String,
    #[serde(flatten)]
    pub detection: Detection,
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    read_jsonl_with(path, |r: &DetectionRecord| r.detection.validate())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeletRecord {
    pub video_id: String,
    pub id: String,
    pub fps_sampled: f64,
    pub detections: Vec<Detection>,
}

impl TubeletRecord {
    pub fn from_tubelet(video_id: &str, t: &Tubelet) -> Self {
        Self {
            video_id: video_id.to_string(),
            id: t.id().to_string(),
            fps_sampled: t.fps_sampled(),
            detections: t.detections().to_vec(),
        }
    }

    pub fn to_tubelet(&self) -> Result<Tubelet> {
        Tubelet::new(self.id.clone(), self.detections.clone(), self.fps_sampled)
    }
}

/// Tubelets grouped by video, in file order within each video.
pub fn read_tubelets(path: &Path) -> Result<BTreeMap<String, Vec<Tubelet>>> {
    let records = read_jsonl_with(path, |r: &TubeletRecord| r.to_tubelet().map(|_| ()))?;
    let mut out: BTreeMap<String, Vec<Tubelet>> = BTreeMap::new();
    for r in records {
        let t = r.to_tubelet()?;
        out.entry(r.video_id).or_default().push(t);
    }
    Ok(out)
}

pub fn tubelet_records<'a>(groups: impl IntoIterator<Item = (&'a String, &'a Vec<Tubelet>)>) -> Vec<TubeletRecord> {
    groups
        .into_iter()
        .flat_map(|(vid, ts)| ts.iter().map(move |t| TubeletRecord::from_tubelet(vid, t)))
        .collect()
}

pub use crate::model::QueryRecord;

pub fn read_queries(path: &Path) -> Result<Vec<QueryRecord>> {
    read_jsonl_with(path, |q: &QueryRecord| q.validate())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRange {
    pub start: Frame,
    pub end: Frame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub video_id: String,
    pub span: FrameRange,
    pub boxes: BTreeMap<Frame, BBox>,
}

impl AnnotationRecord {
    pub fn from_annotation(gt: &GroundTruthAnnotation) -> Self {
        let s = gt.span();
        Self {
            video_id: gt.video_id.clone(),
            span: FrameRange { start: s.start, end: s.end },
            boxes: gt.boxes().clone(),
        }
    }

    pub fn to_annotation(&self, fps_sampled: f64) -> Result<GroundTruthAnnotation> {
        let span = TemporalSpan::new(self.span.start, self.span.end, fps_sampled)?;
        GroundTruthAnnotation::new(self.video_id.clone(), span, self.boxes.clone())
    }
}

/// Temporal proposal from an external temporal-localization model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrmSpanRecord {
    pub video_id: String,
    pub start: Frame,
    pub end: Frame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub video_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps_sampled: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps_raw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_frames: Option<u32>,
}

impl VideoMeta {
    /// Sampling rate, from `fps_sampled` or derived as `fps_raw / stride`.
    pub fn effective_fps(&self, detection_stride: u32) -> Result<f64> {
        let fps = self.fps_sampled.or(self.fps_raw.map(|raw| raw / f64::from(detection_stride.max(1))));
        match fps {
            Some(f) if f.is_finite() && f > 0.0 => Ok(f),
            Some(f) => Err(Error::InvalidSample(format!("video `{}` has non-positive fps {f}", self.video_id))),
            None => Err(Error::InvalidSample(format!("video `{}` needs fps_sampled or fps_raw", self.video_id))),
        }
    }
}

/// Sampling rate per video id.
pub fn read_meta(path: &Path, detection_stride: u32) -> Result<BTreeMap<String, f64>> {
    let records = read_jsonl_with(path, |m: &VideoMeta| m.effective_fps(detection_stride).map(|_| ()))?;
    let mut out = BTreeMap::new();
    for m in records {
        let fps = m.effective_fps(detection_stride)?;
        if out.insert(m.video_id.clone(), fps).is_some() {
            return Err(Error::InvalidSample(format!("duplicate metadata for video `{}`", m.video_id)));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub video_id: String,
    pub tubelet_id: String,
    pub start: Frame,
    pub end: Frame,
    pub boxes: BTreeMap<Frame, BBox>,
    pub fallback: bool,
    pub scores: Vec<CandidateScore>,
}

impl From<&Prediction> for PredictionRecord {
    fn from(p: &Prediction) -> Self {
        Self {
            video_id: p.video_id.clone(),
            tubelet_id: p.tubelet_id.clone(),
            start: p.span.start,
            end: p.span.end,
            boxes: p.boxes.clone(),
            fallback: p.fallback,
            scores: p.scores.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpperBoundRecord {
    pub video_id: String,
    pub detection_viou: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tubelet_id: Option<String>,
    pub tubelet_viou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftLine {
    pub video_id: String,
    #[serde(flatten)]
    pub record: ShiftRecord,
}
