//! Reference pipeline assembled from the brute-force oracles. Produces the
//! same files as `tubeground run`; used to generate and check the goldens.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use tubelet_grounding::config::PipelineConfig;
use tubelet_grounding::curriculum::{CongestionRecord, Stage, StagedPhrase};
use tubelet_grounding::denoise::DenoiseStrategy;
use tubelet_grounding::eval::{CorpusMetrics, EvalResult, SampleEval, UpperBoundMode};
use tubelet_grounding::grounding::{CandidateScore, InferenceMode, ScorerKind};
use tubelet_grounding::io::{
    read_detections, read_jsonl, read_meta, read_queries, to_jsonl, AnnotationRecord, PredictionRecord, TrmSpanRecord,
    TubeletRecord, UpperBoundRecord,
};
use tubelet_grounding::pipeline::{Manifest, RejectedPhrase};
use tubelet_grounding::{Detection, QueryRecord};

use super::{congestion, coords, interpolate, iou, mode, recall_at, tiou, track, viou};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Cat {
    Male,
    Female,
    Neutral,
}

fn words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.chars().filter(|c| !c.is_ascii_punctuation()).collect::<String>().to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

fn word_cat(w: &str) -> Cat {
    match w {
        "man" | "boy" => Cat::Male,
        "woman" | "girl" | "lady" => Cat::Female,
        _ => Cat::Neutral,
    }
}

fn phrase_cat(text: &str) -> Cat {
    let specific: BTreeSet<u8> = words(text)
        .iter()
        .filter_map(|w| match word_cat(w) {
            Cat::Male => Some(0),
            Cat::Female => Some(1),
            Cat::Neutral => None,
        })
        .collect();
    match specific.iter().collect::<Vec<_>>().as_slice() {
        [0] => Cat::Male,
        [1] => Cat::Female,
        _ => Cat::Neutral,
    }
}

fn label(d: &Detection) -> String {
    words(&d.soft_labels.join(" ")).join(" ")
}

#[derive(Clone, Debug)]
struct Tub {
    id: String,
    dets: Vec<Detection>,
}

impl Tub {
    fn span(&self) -> (u32, u32) {
        (self.dets[0].frame, self.dets[self.dets.len() - 1].frame)
    }
}

fn conflicting(t: &Tub) -> bool {
    let cats: BTreeSet<u8> = t
        .dets
        .iter()
        .filter_map(|d| match phrase_cat(&label(d)) {
            Cat::Male => Some(0),
            Cat::Female => Some(1),
            Cat::Neutral => None,
        })
        .collect();
    cats.len() >= 2
}

fn denoise(ts: &[Tub], strategy: DenoiseStrategy, min_duration_s: f64, fps: f64) -> Vec<Tub> {
    let mut out = Vec::new();
    for t in ts {
        if strategy == DenoiseStrategy::None || !conflicting(t) {
            out.push(t.clone());
            continue;
        }
        let labels: Vec<String> = t.dets.iter().map(label).collect();
        let m = mode(&labels);
        out.push(Tub { id: t.id.clone(), dets: t.dets.iter().filter(|d| label(d) == m).cloned().collect() });
        if strategy == DenoiseStrategy::SwitchAddition {
            // maximal same-label runs away from the mode
            let mut runs: Vec<(usize, usize)> = Vec::new();
            for i in 0..labels.len() {
                if labels[i] == m {
                    continue;
                }
                match runs.last_mut() {
                    Some(r) if r.1 + 1 == i && labels[r.0] == labels[i] => r.1 = i,
                    _ => runs.push((i, i)),
                }
            }
            for (k, (a, b)) in runs.iter().enumerate() {
                let frames = t.dets[*b].frame - t.dets[*a].frame + 1;
                if f64::from(frames) / fps > min_duration_s {
                    out.push(Tub { id: format!("{}_sw{k}", t.id), dets: t.dets[*a..=*b].to_vec() });
                }
            }
        }
    }
    out
}

fn slf(ts: &[Tub], subject: &str, variability_min: f64) -> Vec<Tub> {
    let s = phrase_cat(subject);
    if s == Cat::Neutral {
        return ts.to_vec();
    }
    ts.iter()
        .filter(|t| {
            let cats: Vec<Cat> = t.dets.iter().map(|d| phrase_cat(&label(d))).collect();
            let ty = mode(&cats);
            let labels: Vec<String> = t.dets.iter().map(label).collect();
            let m = mode(&labels);
            let frac = labels.iter().filter(|l| **l != m).count() as f64 / labels.len() as f64;
            ty == s || ty == Cat::Neutral || frac >= variability_min
        })
        .cloned()
        .collect()
}

fn mean_cosine(dets: &[Detection], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for d in dets {
        total += super::cosine(d.embedding.as_ref().unwrap(), q);
    }
    total / dets.len() as f64
}

fn mean_conf(dets: &[Detection]) -> f64 {
    let mut total = 0.0;
    for d in dets {
        total += d.confidence;
    }
    total / dets.len() as f64
}

fn better(a: (f64, u32, &str), b: (f64, u32, &str)) -> bool {
    if a.0 != b.0 {
        return a.0 > b.0;
    }
    (a.1, a.2) < (b.1, b.2)
}

fn ground(q: &QueryRecord, ts: &[Tub], proposal: (u32, u32), c: &PipelineConfig) -> PredictionRecord {
    let contains = |a: (u32, u32), b: (u32, u32)| a.0 <= b.0 && b.1 <= a.1;
    let mut cands: Vec<&Tub> = ts
        .iter()
        .filter(|t| {
            let s = t.span();
            let v = tiou(s, proposal);
            contains(s, proposal) || contains(proposal, s) || (v > 0.0 && v >= c.inference.t_filt)
        })
        .collect();
    let fallback = cands.is_empty();
    if fallback {
        cands = ts.iter().collect();
    }
    let mut prepared: Vec<(Tub, f64)> = Vec::new();
    for t in cands {
        let filled = interpolate(&t.dets, c.inference.fill_stride);
        let dets = match c.inference.mode {
            InferenceMode::FilterOnly => filled,
            InferenceMode::FilterAndTrim => {
                let kept: Vec<Detection> =
                    filled.iter().filter(|d| proposal.0 <= d.frame && d.frame <= proposal.1).cloned().collect();
                if kept.is_empty() {
                    assert!(fallback, "selected candidate must overlap the proposal");
                    filled
                } else {
                    kept
                }
            }
        };
        let score = match c.scorer {
            ScorerKind::MeanConfidence => mean_conf(&dets),
            ScorerKind::EmbeddingSim => mean_cosine(&dets, q.query_embedding.as_ref().unwrap()),
        };
        prepared.push((Tub { id: t.id.clone(), dets }, score));
    }
    let mut best = 0;
    for i in 1..prepared.len() {
        let (t, s) = &prepared[i];
        let (bt, bs) = &prepared[best];
        if better((*s, t.span().0, &t.id), (*bs, bt.span().0, &bt.id)) {
            best = i;
        }
    }
    let winner = &prepared[best].0;
    PredictionRecord {
        video_id: q.video_id.clone(),
        tubelet_id: winner.id.clone(),
        start: winner.span().0,
        end: winner.span().1,
        boxes: winner.dets.iter().map(|d| (d.frame, d.bbox)).collect(),
        fallback,
        scores: prepared.iter().map(|(t, s)| CandidateScore { tubelet_id: t.id.clone(), score: *s }).collect(),
    }
}

fn boxes_of(dets: &[Detection]) -> BTreeMap<u32, [f64; 4]> {
    dets.iter().map(|d| (d.frame, coords(&d.bbox))).collect()
}

fn tubelet_bound(ts: &[Tub], gt: (u32, u32), gt_boxes: &BTreeMap<u32, [f64; 4]>, mode: UpperBoundMode) -> (String, f64) {
    let mut best: Option<(f64, u32, String)> = None;
    for t in ts {
        let filled = interpolate(&t.dets, 1);
        let mut span = t.span();
        if mode == UpperBoundMode::ClipToGt {
            span = (span.0.max(gt.0), span.1.min(gt.1));
        }
        let v = if span.0 > span.1 {
            0.0
        } else {
            let boxes: BTreeMap<u32, [f64; 4]> =
                boxes_of(&filled).into_iter().filter(|(f, _)| span.0 <= *f && *f <= span.1).collect();
            viou(span, &boxes, gt, gt_boxes)
        };
        if best.as_ref().map_or(true, |b| better((v, t.span().0, &t.id), (b.0, b.1, &b.2))) {
            best = Some((v, t.span().0, t.id.clone()));
        }
    }
    let (v, _, id) = best.unwrap();
    (id, v)
}

fn corpus(samples: &[&SampleEval]) -> CorpusMetrics {
    let n = samples.len() as f64;
    let (mut t, mut v) = (0.0, 0.0);
    for s in samples {
        t += s.tiou;
        v += s.viou;
    }
    let vious: Vec<f64> = samples.iter().map(|s| s.viou).collect();
    CorpusMetrics {
        count: samples.len(),
        m_tiou: t / n,
        m_viou: v / n,
        viou_at: [0.1, 0.3, 0.5].iter().map(|&r| (r, recall_at(&vious, r))).collect(),
    }
}

/// Runs the reference pipeline over a fixture directory laid out like the
/// micro-fixture; returns file name -> contents.
pub fn run(dir: &Path) -> BTreeMap<String, String> {
    let c = PipelineConfig::from_json_file(&dir.join("config.json")).unwrap();
    assert!(c.lexicon.is_none(), "reference pipeline knows only the built-in lexicon");
    let fps = read_meta(&dir.join("meta.jsonl"), c.detection_stride).unwrap();
    let detections = read_detections(&dir.join("detections.jsonl")).unwrap();
    let mut queries = read_queries(&dir.join("queries.jsonl")).unwrap();
    queries.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    let proposals: BTreeMap<String, TrmSpanRecord> = read_jsonl::<TrmSpanRecord>(&dir.join("trm_spans.jsonl"))
        .unwrap()
        .into_iter()
        .map(|r| (r.video_id.clone(), r))
        .collect();
    let annotations: BTreeMap<String, AnnotationRecord> = read_jsonl::<AnnotationRecord>(&dir.join("annotations.jsonl"))
        .unwrap()
        .into_iter()
        .map(|r| (r.video_id.clone(), r))
        .collect();

    let mut tubelet_recs = Vec::new();
    let mut cong = Vec::new();
    let mut preds = Vec::new();
    let mut samples = Vec::new();
    let mut bounds = Vec::new();
    for (vid, &rate) in &fps {
        let mut frames: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();
        for r in detections.iter().filter(|r| &r.video_id == vid && r.detection.confidence >= c.confidence_floor) {
            frames.entry(r.detection.frame).or_default().push(r.detection.clone());
        }
        let tubs: Vec<Tub> = track(&frames, c.tracker.iou_min, c.tracker.max_gap, c.tracker.min_track_len)
            .into_iter()
            .enumerate()
            .map(|(n, dets)| Tub { id: format!("t{n:04}"), dets })
            .collect();
        for t in &tubs {
            tubelet_recs.push(TubeletRecord {
                video_id: vid.clone(),
                id: t.id.clone(),
                fps_sampled: rate,
                detections: t.dets.clone(),
            });
        }
        let query = queries.iter().find(|q| &q.video_id == vid);

        let denoised = denoise(&tubs, c.denoise.strategy, c.denoise.min_duration_s, rate);
        let staged = match query {
            Some(q) if c.slf.enabled && c.cgs.after_slf => slf(&denoised, &q.subject_phrase, c.slf.variability_min),
            _ => denoised,
        };
        if !staged.is_empty() {
            let spans: Vec<(u32, u32)> = staged.iter().map(Tub::span).collect();
            cong.push(CongestionRecord { video_id: vid.clone(), n_tubelets: staged.len(), congestion: congestion(&spans) });
        }

        let Some(q) = query else { continue };
        assert!(!c.slf.at_inference, "reference pipeline grounds on all tracked tubelets");
        let p = &proposals[vid];
        let pred = (!tubs.is_empty()).then(|| ground(q, &tubs, (p.start, p.end), &c));
        if let Some(ann) = annotations.get(vid) {
            let gt = (ann.span.start, ann.span.end);
            let gt_boxes: BTreeMap<u32, [f64; 4]> = ann.boxes.iter().map(|(f, b)| (*f, coords(b))).collect();
            let (t, v) = match &pred {
                Some(p) => {
                    let pb: BTreeMap<u32, [f64; 4]> = p.boxes.iter().map(|(f, b)| (*f, coords(b))).collect();
                    (tiou((p.start, p.end), gt), viou((p.start, p.end), &pb, gt, &gt_boxes))
                }
                None => (0.0, 0.0),
            };
            samples.push(SampleEval { video_id: vid.clone(), tag: q.tag.clone(), tiou: t, viou: v });
            let mut det_total = 0.0;
            for (f, b) in &gt_boxes {
                let mut best = 0.0f64;
                for d in frames.get(f).into_iter().flatten() {
                    best = best.max(iou(coords(&d.bbox), *b));
                }
                det_total += best;
            }
            let (tubelet_id, tubelet_viou) = if tubs.is_empty() {
                (None, 0.0)
            } else {
                let (id, v) = tubelet_bound(&tubs, gt, &gt_boxes, c.upper_bound);
                (Some(id), v)
            };
            bounds.push(UpperBoundRecord {
                video_id: vid.clone(),
                detection_viou: det_total / (gt.1 - gt.0 + 1) as f64,
                tubelet_id,
                tubelet_viou,
            });
        }
        if let Some(p) = pred {
            preds.push(p);
        }
    }

    // congestion staging: a sample enters at the first stage whose threshold it meets
    let n = c.cgs.n_stages;
    let entry = |x: f64| {
        (1..=n)
            .find(|&k| {
                let step = k as f64 * c.cgs.delta;
                k == n
                    || match c.cgs.direction {
                        tubelet_grounding::curriculum::Direction::HighToLow => x >= 1.0 - step - 1e-9,
                        tubelet_grounding::curriculum::Direction::LowToHigh => x <= step + 1e-9,
                    }
            })
            .unwrap()
    };
    let stages_cgs: Vec<Stage> = (1..=n)
        .map(|k| Stage {
            stage: k,
            member_ids: cong
                .iter()
                .filter(|r| if c.cgs.cumulative { entry(r.congestion) <= k } else { entry(r.congestion) == k })
                .map(|r| r.video_id.clone())
                .collect(),
        })
        .collect();

    // sub-action staging
    let mut phrases = Vec::new();
    let mut rejected = Vec::new();
    for q in &queries {
        let bad: Vec<RejectedPhrase> = q
            .sub_actions
            .iter()
            .flat_map(|(k, list)| list.iter().enumerate().map(move |(pos, p)| (*k, pos, p)))
            .filter(|(k, _, p)| match &p.action_indices {
                None => false,
                Some(idx) => idx.len() != *k as usize || idx.windows(2).any(|w| w[1] != w[0] + 1),
            })
            .map(|(k, pos, _)| RejectedPhrase { video_id: q.video_id.clone(), action_count: k, position: pos })
            .collect();
        if !bad.is_empty() {
            rejected.extend(bad);
            continue;
        }
        for (k, list) in &q.sub_actions {
            for (pos, p) in list.iter().enumerate() {
                phrases.push(StagedPhrase {
                    id: format!("{}:{k}:{pos}", q.video_id),
                    video_id: q.video_id.clone(),
                    action_count: *k,
                    text: p.text.clone(),
                });
            }
        }
    }
    let last = c.satcl.n_stages as u32;
    let stages_satcl: Vec<Stage> = (1..=last)
        .map(|k| Stage {
            stage: k as usize,
            member_ids: phrases
                .iter()
                .filter(|p| {
                    let e = p.action_count.min(last);
                    if c.satcl.cumulative { e <= k } else { e == k }
                })
                .map(|p| p.id.clone())
                .collect(),
        })
        .collect();

    let mut files = BTreeMap::new();
    let mut counts = BTreeMap::new();
    let mut put = |name: &str, n: usize, text: String| {
        counts.insert(name.to_string(), n);
        files.insert(name.to_string(), text);
    };
    put("tubelets.jsonl", tubelet_recs.len(), to_jsonl(&tubelet_recs).unwrap());
    put("congestion.jsonl", cong.len(), to_jsonl(&cong).unwrap());
    put("stages_cgs.jsonl", stages_cgs.len(), to_jsonl(&stages_cgs).unwrap());
    put("stages_satcl.jsonl", stages_satcl.len(), to_jsonl(&stages_satcl).unwrap());
    put("satcl_phrases.jsonl", phrases.len(), to_jsonl(&phrases).unwrap());
    put("satcl_rejected.jsonl", rejected.len(), to_jsonl(&rejected).unwrap());
    put("predictions.jsonl", preds.len(), to_jsonl(&preds).unwrap());
    put("upper_bound.jsonl", bounds.len(), to_jsonl(&bounds).unwrap());
    let no_data = frames_empty(&detections, c.confidence_floor);
    if !samples.is_empty() && !no_data {
        let all: Vec<&SampleEval> = samples.iter().collect();
        let mut tags: BTreeMap<String, Vec<&SampleEval>> = BTreeMap::new();
        for s in &samples {
            if let Some(t) = &s.tag {
                tags.entry(t.clone()).or_default().push(s);
            }
        }
        let result = EvalResult {
            corpus: corpus(&all),
            by_tag: tags.iter().map(|(t, g)| (t.clone(), corpus(g))).collect(),
            samples: samples.clone(),
        };
        put("eval.json", samples.len(), serde_json::to_string_pretty(&result).unwrap() + "\n");
        put("eval.txt", samples.len(), result.to_table());
    }
    let manifest = Manifest {
        config_hash: c.config_hash(),
        config: serde_json::from_str(&c.canonical_json()).unwrap(),
        no_data,
        counts,
    };
    files.insert("manifest.json".into(), serde_json::to_string_pretty(&manifest).unwrap() + "\n");
    files
}

fn frames_empty(detections: &[tubelet_grounding::io::DetectionRecord], floor: f64) -> bool {
    detections.iter().all(|r| r.detection.confidence < floor)
}
