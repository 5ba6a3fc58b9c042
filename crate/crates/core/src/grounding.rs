//! Tubelet scoring and joint spatio-temporal inference.
//!
//! Inference takes a temporal proposal (the span predicted by a temporal
//! grounding model, or the whole video), keeps tubelets compatible with it,
//! fills their missing frames, optionally trims them to the proposal, scores
//! each one and returns the best.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{temporal_iou, BBox, Detection, Frame, QueryRecord, TemporalSpan, Tubelet};

/// Cosine similarity; a zero-norm vector scores 0.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: b.len(), got: a.len() });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        log::warn!("zero-norm embedding scored as similarity 0");
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Mean over detections of the per-detection cosine similarity to the query.
pub fn sim_avg<V: AsRef<[f64]>>(tubelet_embeddings: &[V], query_embedding: &[f64]) -> Result<f64> {
    if tubelet_embeddings.is_empty() {
        return Err(Error::Empty("tubelet embeddings"));
    }
    let mut total = 0.0;
    for emb in tubelet_embeddings {
        total += cosine(emb.as_ref(), query_embedding)?;
    }
    Ok(total / tubelet_embeddings.len() as f64)
}

/// `-log(exp(p/τ) / (exp(p/τ) + Σ exp(n/τ)))`, evaluated without overflow.
pub fn contrastive_loss_from_scores(positive: f64, negatives: &[f64], temperature: f64) -> Result<f64> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::Config(format!("temperature {temperature} must be > 0")));
    }
    let pos = positive / temperature;
    let max_neg = negatives.iter().map(|n| n / temperature).fold(f64::NEG_INFINITY, f64::max);
    if negatives.is_empty() {
        return Ok(0.0);
    }
    if max_neg <= pos {
        // log(1 + Σ exp(n - p)) with every exponent <= 0
        let tail: f64 = negatives.iter().map(|n| (n / temperature - pos).exp()).sum();
        Ok(tail.ln_1p())
    } else {
        let sum: f64 = (pos - max_neg).exp() + negatives.iter().map(|n| (n / temperature - max_neg).exp()).sum::<f64>();
        Ok(max_neg + sum.ln() - pos)
    }
}

/// One training sample: the positive tubelet's per-detection features, the
/// other tubelets of the same video, and the query feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveSample {
    pub positive: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<Vec<f64>>>,
    pub query: Vec<f64>,
}

impl ContrastiveSample {
    fn tubelets(&self) -> impl Iterator<Item = &Vec<Vec<f64>>> {
        std::iter::once(&self.positive).chain(&self.negatives)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveBatch {
    pub samples: Vec<ContrastiveSample>,
    pub temperature: f64,
}

/// Spatial contrastive loss, averaged over the batch. For sample i the
/// negatives are its own non-positive tubelets plus every tubelet of every
/// other sample, all scored against sample i's query.
pub fn spatial_contrastive_loss(batch: &ContrastiveBatch) -> Result<f64> {
    if batch.samples.is_empty() {
        return Err(Error::Empty("contrastive batch"));
    }
    let dim = batch.samples[0].query.len();
    for s in &batch.samples {
        let mismatch = std::iter::once(s.query.len())
            .chain(s.tubelets().flatten().map(Vec::len))
            .find(|&d| d != dim);
        if let Some(got) = mismatch {
            return Err(Error::DimensionMismatch { expected: dim, got });
        }
    }

    let mut total = 0.0;
    for (i, sample) in batch.samples.iter().enumerate() {
        let positive = sim_avg(&sample.positive, &sample.query)?;
        let mut negatives = Vec::new();
        for neg in &sample.negatives {
            negatives.push(sim_avg(neg, &sample.query)?);
        }
        for (j, other) in batch.samples.iter().enumerate() {
            if j != i {
                for tub in other.tubelets() {
                    negatives.push(sim_avg(tub, &sample.query)?);
                }
            }
        }
        total += contrastive_loss_from_scores(positive, &negatives, batch.temperature)?;
    }
    Ok(total / batch.samples.len() as f64)
}

/// Word-level negative log-likelihood of a caption reconstruction, from
/// per-word probabilities supplied by an external model.
pub fn reconstruction_nll(word_probs: &[f64]) -> Result<f64> {
    const FLOOR: f64 = 1e-12;
    if word_probs.is_empty() {
        return Err(Error::Empty("word probabilities"));
    }
    let mut nll = 0.0;
    for &p in word_probs {
        if p.is_nan() || p > 1.0 {
            return Err(Error::InvalidSample(format!("word probability {p} outside (0, 1]")));
        }
        nll -= p.max(FLOOR).ln();
    }
    Ok(nll)
}

/// Higher score wins, then earlier first frame, then smaller id.
fn ranks_before(a: (f64, Frame, &str), b: (f64, Frame, &str)) -> bool {
    match a.0.total_cmp(&b.0) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => (a.1, a.2) < (b.1, b.2),
    }
}

fn argmax_tubelet<'a>(scored: impl IntoIterator<Item = (&'a Tubelet, f64)>) -> Option<(&'a Tubelet, f64)> {
    let mut best: Option<(&Tubelet, f64)> = None;
    for (t, s) in scored {
        let better = match best {
            None => true,
            Some((bt, bs)) => ranks_before((s, t.first_frame(), t.id()), (bs, bt.first_frame(), bt.id())),
        };
        if better {
            best = Some((t, s));
        }
    }
    best
}

/// Baseline: the tubelet with the highest mean detection confidence.
pub fn wgdino_select(tubelets: &[Tubelet]) -> Result<(String, f64)> {
    argmax_tubelet(tubelets.iter().map(|t| (t, t.mean_confidence())))
        .map(|(t, s)| (t.id().to_string(), s))
        .ok_or(Error::Empty("tubelets"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    MeanConfidence,
    EmbeddingSim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    FilterAndTrim,
    FilterOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceParams {
    pub t_filt: f64,
    pub mode: InferenceMode,
    pub fill_stride: u32,
}

impl Default for InferenceParams {
    fn default() -> Self {
        Self { t_filt: 0.2, mode: InferenceMode::FilterAndTrim, fill_stride: 1 }
    }
}

impl InferenceParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.t_filt) {
            return Err(Error::Config(format!("t_filt {} outside [0, 1]", self.t_filt)));
        }
        if self.fill_stride == 0 {
            return Err(Error::Config("fill_stride must be >= 1".into()));
        }
        Ok(())
    }
}

/// Keeps tubelets whose span contains the proposal, lies inside it, or
/// overlaps it with temporal IoU >= `t_filt`. Order is preserved.
pub fn select_candidates(tubelets: &[Tubelet], proposal: &TemporalSpan, params: &InferenceParams) -> Result<Vec<Tubelet>> {
    let mut out = Vec::new();
    for t in tubelets {
        let span = t.span();
        let tiou = temporal_iou(&span, proposal)?;
        if span.contains(proposal) || proposal.contains(&span) || (tiou > 0.0 && tiou >= params.t_filt) {
            out.push(t.clone());
        }
    }
    Ok(out)
}

/// Fills every `fill_stride`-th frame of the span (counted from its start)
/// that has no detection with a copy of the temporally nearest detection;
/// equidistant neighbours resolve to the earlier one.
pub fn interpolate_tubelet(t: &Tubelet, fill_stride: u32) -> Tubelet {
    let stride = fill_stride.max(1) as usize;
    let dets = t.detections();
    let mut out: Vec<Detection> = Vec::with_capacity(t.span().len_frames() as usize);
    let mut next = 0; // first detection with frame >= current
    for frame in (t.first_frame()..=t.last_frame()).step_by(stride) {
        while dets[next].frame < frame {
            out.push(dets[next].clone());
            next += 1;
        }
        if dets[next].frame == frame {
            continue;
        }
        let before = &dets[next - 1];
        let after = &dets[next];
        let source = if frame - before.frame <= after.frame - frame { before } else { after };
        out.push(Detection { frame, ..source.clone() });
    }
    out.extend(dets[next..].iter().cloned());
    Tubelet::new(t.id(), out, t.fps_sampled()).expect("interpolation keeps frames ordered")
}

/// Restricts the tubelet to its intersection with the proposal
/// (`FilterAndTrim`) or returns it unchanged (`FilterOnly`).
pub fn trim_tubelet(t: &Tubelet, proposal: &TemporalSpan, mode: InferenceMode) -> Result<Tubelet> {
    if mode == InferenceMode::FilterOnly {
        return Ok(t.clone());
    }
    let lo = t.first_frame().max(proposal.start);
    let hi = t.last_frame().min(proposal.end);
    let kept: Vec<Detection> = t.detections().iter().filter(|d| lo <= d.frame && d.frame <= hi).cloned().collect();
    if kept.is_empty() {
        return Err(Error::EmptyTrim { id: t.id().to_string(), start: proposal.start, end: proposal.end });
    }
    Tubelet::new(t.id(), kept, t.fps_sampled())
}

pub fn score_tubelet(t: &Tubelet, query: &QueryRecord, scorer: ScorerKind) -> Result<f64> {
    match scorer {
        ScorerKind::MeanConfidence => Ok(t.mean_confidence()),
        ScorerKind::EmbeddingSim => {
            let q = query
                .query_embedding
                .as_deref()
                .ok_or_else(|| Error::MissingScorerInput(format!("query for `{}` has no embedding", query.video_id)))?;
            let embs = t
                .detections()
                .iter()
                .map(|d| {
                    d.embedding.as_deref().ok_or_else(|| {
                        Error::MissingScorerInput(format!("tubelet `{}` frame {} has no embedding", t.id(), d.frame))
                    })
                })
                .collect::<Result<Vec<&[f64]>>>()?;
            sim_avg(&embs, q)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub tubelet_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub video_id: String,
    pub tubelet_id: String,
    pub span: TemporalSpan,
    pub boxes: BTreeMap<Frame, BBox>,
    /// Every scored candidate, in candidate order.
    pub scores: Vec<CandidateScore>,
    /// True when no tubelet passed the temporal filter and all were scored.
    pub fallback: bool,
}

/// Full joint inference for one query.
pub fn ground(
    query: &QueryRecord,
    tubelets: &[Tubelet],
    proposal: &TemporalSpan,
    scorer: ScorerKind,
    params: &InferenceParams,
) -> Result<Prediction> {
    params.validate()?;
    let mut candidates = select_candidates(tubelets, proposal, params)?;
    let fallback = candidates.is_empty();
    if fallback {
        log::warn!("no tubelet passed the temporal filter for `{}`; scoring all", query.video_id);
        candidates = tubelets.to_vec();
    }
    if candidates.is_empty() {
        return Err(Error::InvalidSample(format!("no candidate tubelets for `{}`", query.video_id)));
    }

    let mut prepared = Vec::with_capacity(candidates.len());
    for t in &candidates {
        let filled = interpolate_tubelet(t, params.fill_stride);
        // a fallback candidate may not overlap the proposal at all; keep it whole
        let prepared_t = match trim_tubelet(&filled, proposal, params.mode) {
            Err(Error::EmptyTrim { .. }) if fallback => filled,
            other => other?,
        };
        let score = score_tubelet(&prepared_t, query, scorer)?;
        prepared.push((prepared_t, score));
    }

    let (best, _) = argmax_tubelet(prepared.iter().map(|(t, s)| (t, *s))).expect("non-empty candidates");
    Ok(Prediction {
        video_id: query.video_id.clone(),
        tubelet_id: best.id().to_string(),
        span: best.span(),
        boxes: best.boxes(),
        scores: prepared
            .iter()
            .map(|(t, s)| CandidateScore { tubelet_id: t.id().to_string(), score: *s })
            .collect(),
        fallback,
    })
}
