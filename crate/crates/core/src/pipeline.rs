//! End-to-end orchestration: load inputs, cross-check ids, run per-video
//! work on a bounded worker pool and write sorted outputs plus a manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::curriculum::{
    cgs_stage_assignment, congestion, satcl_stage_assignment, CongestionRecord, Stage, StagedPhrase,
};
use crate::denoise::denoise_tubelets;
use crate::error::{Error, Result};
use crate::eval::{tiou_metric, upper_bound_detection, upper_bound_tubelet, viou_metric, EvalResult, SampleEval};
use crate::grounding::ground;
use crate::io::{
    read_detections, read_jsonl, read_meta, read_queries, tubelet_records, write_json, write_jsonl, write_text,
    AnnotationRecord, DetectionRecord, PredictionRecord, TrmSpanRecord, TubeletRecord, UpperBoundRecord,
};
use crate::model::{Detection, Frame, GroundTruthAnnotation, QueryRecord, TemporalSpan, Tubelet};
use crate::slf::{slf_filter, CategoryLexicon};
use crate::tracking::link_detections;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineInputs {
    pub detections: PathBuf,
    pub queries: PathBuf,
    pub meta: PathBuf,
    pub trm_spans: PathBuf,
    pub annotations: Option<PathBuf>,
}

/// Parsed inputs; `fps` maps every known video id to its sampling rate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub fps: BTreeMap<String, f64>,
    pub detections: Vec<DetectionRecord>,
    pub queries: Vec<QueryRecord>,
    pub trm_spans: Vec<TrmSpanRecord>,
    pub annotations: Vec<AnnotationRecord>,
}

impl Dataset {
    pub fn load(inputs: &PipelineInputs, config: &PipelineConfig) -> Result<Self> {
        Ok(Self {
            fps: read_meta(&inputs.meta, config.detection_stride)?,
            detections: read_detections(&inputs.detections)?,
            queries: read_queries(&inputs.queries)?,
            trm_spans: read_jsonl(&inputs.trm_spans)?,
            annotations: match &inputs.annotations {
                Some(p) => read_jsonl(p)?,
                None => Vec::new(),
            },
        })
    }
}

/// Everything `run` writes, in output order.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutputs {
    pub tubelets: Vec<TubeletRecord>,
    pub congestion: Vec<CongestionRecord>,
    pub stages_cgs: Vec<Stage>,
    pub stages_satcl: Vec<Stage>,
    pub satcl_phrases: Vec<StagedPhrase>,
    pub satcl_rejected: Vec<RejectedPhrase>,
    pub predictions: Vec<PredictionRecord>,
    pub eval: Option<EvalResult>,
    pub upper_bound: Vec<UpperBoundRecord>,
    /// True when no detection survived loading; the CLI reports this as a
    /// data error.
    pub no_data: bool,
}

/// One sub-action phrase that kept its query out of the temporal curriculum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedPhrase {
    pub video_id: String,
    pub action_count: u32,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub config: serde_json::Value,
    pub no_data: bool,
    pub counts: BTreeMap<String, usize>,
}

struct Indexed<'a> {
    queries: BTreeMap<&'a str, &'a QueryRecord>,
    proposals: BTreeMap<&'a str, &'a TrmSpanRecord>,
    annotations: BTreeMap<&'a str, &'a AnnotationRecord>,
}

fn unique<'a, T>(items: &'a [T], id: impl Fn(&T) -> &str, what: &str) -> Result<BTreeMap<&'a str, &'a T>> {
    let mut out = BTreeMap::new();
    for item in items {
        if out.insert(id(item), item).is_some() {
            return Err(Error::InvalidSample(format!("duplicate {what} for video `{}`", id(item))));
        }
    }
    Ok(out)
}

fn mismatch(id: &str, context: &str) -> Error {
    Error::IdMismatch { id: id.to_string(), context: context.to_string() }
}

/// Every record must refer to a video in the metadata, every query needs a
/// proposal and every proposal or annotation needs a query.
fn cross_check(data: &Dataset) -> Result<Indexed<'_>> {
    if let Some(r) = data.detections.iter().find(|r| !data.fps.contains_key(&r.video_id)) {
        return Err(mismatch(&r.video_id, "detections (no metadata record)"));
    }
    let queries = unique(&data.queries, |q| &q.video_id, "query")?;
    let proposals = unique(&data.trm_spans, |t| &t.video_id, "temporal proposal")?;
    let annotations = unique(&data.annotations, |a| &a.video_id, "annotation")?;
    if let Some(id) = queries.keys().find(|id| !data.fps.contains_key(**id)) {
        return Err(mismatch(id, "queries (no metadata record)"));
    }
    if let Some(id) = queries.keys().find(|id| !proposals.contains_key(*id)) {
        return Err(mismatch(id, "queries (no temporal proposal)"));
    }
    if let Some(id) = proposals.keys().find(|id| !queries.contains_key(*id)) {
        return Err(mismatch(id, "temporal proposals (no query)"));
    }
    if let Some(id) = annotations.keys().find(|id| !queries.contains_key(*id)) {
        return Err(mismatch(id, "annotations (no query)"));
    }
    Ok(Indexed { queries, proposals, annotations })
}

struct VideoResult {
    tubelets: Vec<Tubelet>,
    congestion: Option<CongestionRecord>,
    prediction: Option<PredictionRecord>,
    sample: Option<SampleEval>,
    upper_bound: Option<UpperBoundRecord>,
}

fn process_video(
    video_id: &str,
    fps: f64,
    detections: &[&Detection],
    idx: &Indexed<'_>,
    config: &PipelineConfig,
    lex: &CategoryLexicon,
) -> Result<VideoResult> {
    let mut frames: BTreeMap<Frame, Vec<Detection>> = BTreeMap::new();
    for d in detections.iter().filter(|d| d.confidence >= config.confidence_floor) {
        frames.entry(d.frame).or_default().push((*d).clone());
    }
    let tubelets = link_detections(&frames, &config.tracker, fps)?;
    let query = idx.queries.get(video_id).copied();

    // training-side view: denoised, optionally soft-label filtered
    let denoised = denoise_tubelets(&tubelets, &config.denoise, lex);
    let filtered = match query {
        Some(q) if config.slf.enabled => slf_filter(&denoised, &q.subject_phrase, lex, config.slf.variability_min).kept,
        _ => denoised.clone(),
    };
    let staged = if config.cgs.after_slf { &filtered } else { &denoised };
    let congestion = match congestion(staged) {
        Ok(c) => Some(CongestionRecord { video_id: video_id.to_string(), n_tubelets: staged.len(), congestion: c }),
        Err(Error::InvalidSample(_)) => {
            log::warn!("video `{video_id}` has no tubelets; left out of congestion staging");
            None
        }
        Err(e) => return Err(e),
    };

    let mut prediction = None;
    if let Some(q) = query {
        let proposal_rec = idx.proposals[video_id];
        let proposal = TemporalSpan::new(proposal_rec.start, proposal_rec.end, fps)?;
        let mut candidates = tubelets.clone();
        if config.slf.enabled && config.slf.at_inference {
            let kept = slf_filter(&tubelets, &q.subject_phrase, lex, config.slf.variability_min).kept;
            if kept.is_empty() {
                log::warn!("soft-label filter removed every candidate for `{video_id}`; using all tubelets");
            } else {
                candidates = kept;
            }
        }
        if candidates.is_empty() {
            log::warn!("video `{video_id}` has no tubelets; no prediction");
        } else {
            prediction = Some(ground(q, &candidates, &proposal, config.scorer, &config.inference)?);
        }
    }

    let (mut sample, mut upper_bound) = (None, None);
    if let (Some(q), Some(ann)) = (query, idx.annotations.get(video_id)) {
        let gt: GroundTruthAnnotation = ann.to_annotation(fps)?;
        let (tiou, viou) = match &prediction {
            Some(p) => (tiou_metric(&p.span, &gt.span())?, viou_metric(&p.span, &p.boxes, &gt)?.viou),
            None => (0.0, 0.0),
        };
        sample = Some(SampleEval { video_id: video_id.to_string(), tag: q.tag.clone(), tiou, viou });
        let (tubelet_id, tubelet_viou) = if tubelets.is_empty() {
            (None, 0.0)
        } else {
            let (id, v) = upper_bound_tubelet(&gt, &tubelets, config.upper_bound)?;
            (Some(id), v)
        };
        upper_bound = Some(UpperBoundRecord {
            video_id: video_id.to_string(),
            detection_viou: upper_bound_detection(&gt, &frames),
            tubelet_id,
            tubelet_viou,
        });
    }

    Ok(VideoResult {
        tubelets,
        congestion,
        prediction: prediction.as_ref().map(PredictionRecord::from),
        sample,
        upper_bound,
    })
}

pub fn run_pipeline(config: &PipelineConfig, data: &Dataset) -> Result<PipelineOutputs> {
    config.validate()?;
    let idx = cross_check(data)?;
    let lex = config.category_lexicon();

    let mut by_video: BTreeMap<&str, Vec<&Detection>> = data.fps.keys().map(|k| (k.as_str(), Vec::new())).collect();
    for r in &data.detections {
        by_video.get_mut(r.video_id.as_str()).expect("cross-checked").push(&r.detection);
    }
    let no_data = by_video.values().flatten().all(|d| d.confidence < config.confidence_floor);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let work: Vec<(&str, &Vec<&Detection>)> = by_video.iter().map(|(k, v)| (*k, v)).collect();
    let results: Vec<VideoResult> = pool.install(|| {
        work.par_iter()
            .map(|(vid, dets)| process_video(vid, data.fps[*vid], dets, &idx, config, &lex))
            .collect::<Result<_>>()
    })?;

    let video_ids: Vec<String> = by_video.keys().map(|k| k.to_string()).collect();
    let grouped: BTreeMap<String, Vec<Tubelet>> =
        video_ids.iter().cloned().zip(results.iter().map(|r| r.tubelets.clone())).collect();
    let congestion: Vec<CongestionRecord> = results.iter().filter_map(|r| r.congestion.clone()).collect();
    let cgs = cgs_stage_assignment(&congestion, &config.cgs)?;
    let satcl = satcl_stage_assignment(&data.queries, &config.satcl)?;
    let samples: Vec<SampleEval> = results.iter().filter_map(|r| r.sample.clone()).collect();
    let eval = if samples.is_empty() || no_data { None } else { Some(EvalResult::from_samples(samples)?) };

    Ok(PipelineOutputs {
        tubelets: tubelet_records(&grouped),
        congestion,
        stages_cgs: cgs.stages,
        stages_satcl: satcl.plan.stages,
        satcl_phrases: satcl.phrases,
        satcl_rejected: satcl
            .rejected
            .iter()
            .flat_map(|v| {
                v.violations.iter().map(|x| RejectedPhrase {
                    video_id: v.video_id.clone(),
                    action_count: x.action_count,
                    position: x.position,
                })
            })
            .collect(),
        predictions: results.iter().filter_map(|r| r.prediction.clone()).collect(),
        eval,
        upper_bound: results.iter().filter_map(|r| r.upper_bound.clone()).collect(),
        no_data,
    })
}

pub const OUTPUT_FILES: [&str; 11] = [
    "tubelets.jsonl",
    "congestion.jsonl",
    "stages_cgs.jsonl",
    "stages_satcl.jsonl",
    "satcl_phrases.jsonl",
    "satcl_rejected.jsonl",
    "predictions.jsonl",
    "upper_bound.jsonl",
    "eval.json",
    "eval.txt",
    "manifest.json",
];

/// Writes every output file into `dir`; evaluation files are only written
/// when annotations produced at least one sample.
pub fn write_outputs(dir: &Path, config: &PipelineConfig, out: &PipelineOutputs) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut counts = BTreeMap::new();
    let mut stream = |name: &str, n: usize, write: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        write(&dir.join(name))?;
        counts.insert(name.to_string(), n);
        Ok(())
    };
    stream("tubelets.jsonl", out.tubelets.len(), &|p| write_jsonl(p, &out.tubelets))?;
    stream("congestion.jsonl", out.congestion.len(), &|p| write_jsonl(p, &out.congestion))?;
    stream("stages_cgs.jsonl", out.stages_cgs.len(), &|p| write_jsonl(p, &out.stages_cgs))?;
    stream("stages_satcl.jsonl", out.stages_satcl.len(), &|p| write_jsonl(p, &out.stages_satcl))?;
    stream("satcl_phrases.jsonl", out.satcl_phrases.len(), &|p| write_jsonl(p, &out.satcl_phrases))?;
    stream("satcl_rejected.jsonl", out.satcl_rejected.len(), &|p| write_jsonl(p, &out.satcl_rejected))?;
    stream("predictions.jsonl", out.predictions.len(), &|p| write_jsonl(p, &out.predictions))?;
    stream("upper_bound.jsonl", out.upper_bound.len(), &|p| write_jsonl(p, &out.upper_bound))?;
    if let Some(eval) = &out.eval {
        stream("eval.json", eval.samples.len(), &|p| write_json(p, eval))?;
        stream("eval.txt", eval.samples.len(), &|p| write_text(p, &eval.to_table()))?;
    }
    let manifest = Manifest {
        config_hash: config.config_hash(),
        config: serde_json::from_str(&config.canonical_json())?,
        no_data: out.no_data,
        counts,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Loads, runs and writes; returns the manifest.
pub fn run_to_dir(config: &PipelineConfig, inputs: &PipelineInputs, out_dir: &Path) -> Result<Manifest> {
    config.validate()?;
    let data = Dataset::load(inputs, config)?;
    let outputs = run_pipeline(config, &data)?;
    write_outputs(out_dir, config, &outputs)
}
