//! Brute-force reference implementations for the integration tests.
//!
//! Everything here works on plain frame sets and exhaustive enumeration and
//! shares no algorithm code with the library; only record types and the
//! serializers are reused, so outputs can be compared byte for byte.
#![allow(dead_code)]

pub mod reference;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;

use tubelet_grounding::Detection;

pub fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn micro_dir() -> PathBuf {
    crate_dir().join("tests").join("fixtures").join("micro")
}

pub fn golden_dir() -> PathBuf {
    crate_dir().join("tests").join("golden").join("micro")
}

/// All files of a directory, name -> contents.
pub fn read_dir_files(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        out.insert(name, std::fs::read_to_string(&path).unwrap());
    }
    out
}

/// Runs the CLI `run` subcommand on the micro-fixture.
pub fn run_cli_micro(out_dir: &Path, parallelism: usize) -> std::process::Output {
    let m = micro_dir();
    Command::new(env!("CARGO_BIN_EXE_tubeground"))
        .arg("run")
        .arg("--detections")
        .arg(m.join("detections.jsonl"))
        .arg("--queries")
        .arg(m.join("queries.jsonl"))
        .arg("--meta")
        .arg(m.join("meta.jsonl"))
        .arg("--trm-spans")
        .arg(m.join("trm_spans.jsonl"))
        .arg("--annotations")
        .arg(m.join("annotations.jsonl"))
        .arg("--config")
        .arg(m.join("config.json"))
        .arg("--parallelism")
        .arg(parallelism.to_string())
        .arg("--out-dir")
        .arg(out_dir)
        .output()
        .unwrap()
}

pub fn coords(b: &tubelet_grounding::BBox) -> [f64; 4] {
    (*b).into()
}

/// Box IoU from raw corners.
pub fn iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let w = a[2].min(b[2]) - a[0].max(b[0]);
    let h = a[3].min(b[3]) - a[1].max(b[1]);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    let area = |c: [f64; 4]| (c[2] - c[0]) * (c[3] - c[1]);
    inter / (area(a) + area(b) - inter)
}

pub fn frame_set(start: u32, end: u32) -> BTreeSet<u32> {
    (start..=end).collect()
}

/// Temporal IoU by counting frames of explicit sets.
pub fn tiou(a: (u32, u32), b: (u32, u32)) -> f64 {
    let (sa, sb) = (frame_set(a.0, a.1), frame_set(b.0, b.1));
    let inter = sa.intersection(&sb).count();
    let union = sa.union(&sb).count();
    inter as f64 / union as f64
}

/// Volumetric IoU: per-frame box IoU summed over the set intersection,
/// divided by the set union. A missing predicted box contributes 0.
pub fn viou(
    pred: (u32, u32),
    pred_boxes: &BTreeMap<u32, [f64; 4]>,
    gt: (u32, u32),
    gt_boxes: &BTreeMap<u32, [f64; 4]>,
) -> f64 {
    let (sp, sg) = (frame_set(pred.0, pred.1), frame_set(gt.0, gt.1));
    let mut total = 0.0;
    for f in sp.intersection(&sg) {
        if let Some(p) = pred_boxes.get(f) {
            total += iou(*p, gt_boxes[f]);
        }
    }
    total / sp.union(&sg).count() as f64
}

/// Mean tIoU over all unordered pairs; a lone span counts as 1.
pub fn congestion(spans: &[(u32, u32)]) -> f64 {
    if spans.len() == 1 {
        return 1.0;
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..spans.len() {
        for j in i + 1..spans.len() {
            total += tiou(spans[i], spans[j]);
            pairs += 1;
        }
    }
    total / pairs as f64
}

/// Fraction of values strictly above `r`.
pub fn recall_at(values: &[f64], r: f64) -> f64 {
    values.iter().filter(|v| **v > r).count() as f64 / values.len() as f64
}

type Key = (f64, usize, usize);

/// `a` is preferred over `b`: higher IoU, then lower detection index, then
/// lower track id.
fn key_better(a: Key, b: Key) -> bool {
    if a.0 != b.0 {
        return a.0 > b.0;
    }
    (a.1, a.2) < (b.1, b.2)
}

/// Compare two matchings by their best-first key sequences; on a shared
/// prefix the longer one wins.
fn seq_better(a: &[Key], b: &[Key]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x != y {
            return key_better(*x, *y);
        }
    }
    a.len() > b.len()
}

fn sorted_keys(m: &[Key]) -> Vec<Key> {
    let mut v = m.to_vec();
    v.sort_by(|a, b| {
        if key_better(*a, *b) {
            std::cmp::Ordering::Less
        } else if key_better(*b, *a) {
            std::cmp::Ordering::Greater
        } else {
            std::cmp::Ordering::Equal
        }
    });
    v
}

/// Enumerates every partial one-to-one assignment of detections to tracks
/// with IoU >= `iou_min` and returns the one the greedy rule selects.
fn best_assignment(ious: &[Vec<f64>], track_ids: &[usize], iou_min: f64) -> Vec<(usize, usize)> {
    fn rec(
        d: usize,
        ious: &[Vec<f64>],
        track_ids: &[usize],
        iou_min: f64,
        used: &mut Vec<bool>,
        current: &mut Vec<(usize, usize)>,
        best: &mut Option<(Vec<Key>, Vec<(usize, usize)>)>,
    ) {
        if d == ious.len() {
            let keys: Vec<Key> = current.iter().map(|&(di, ti)| (ious[di][ti], di, track_ids[ti])).collect();
            let keys = sorted_keys(&keys);
            if best.as_ref().map_or(true, |(bk, _)| seq_better(&keys, bk)) {
                *best = Some((keys, current.clone()));
            }
            return;
        }
        rec(d + 1, ious, track_ids, iou_min, used, current, best);
        for t in 0..track_ids.len() {
            if !used[t] && ious[d][t] >= iou_min {
                used[t] = true;
                current.push((d, t));
                rec(d + 1, ious, track_ids, iou_min, used, current, best);
                current.pop();
                used[t] = false;
            }
        }
    }
    let mut best = None;
    rec(0, ious, track_ids, iou_min, &mut vec![false; track_ids.len()], &mut Vec::new(), &mut best);
    best.map(|(_, m)| m).unwrap_or_default()
}

/// Reference tracker: tubelets as detection lists, ordered by first frame
/// then creation.
pub fn track(
    frames: &BTreeMap<u32, Vec<Detection>>,
    iou_min: f64,
    max_gap: u32,
    min_len: usize,
) -> Vec<Vec<Detection>> {
    struct T {
        created: usize,
        dets: Vec<Detection>,
        open: bool,
    }
    let mut tracks: Vec<T> = Vec::new();
    for (&frame, dets) in frames {
        for t in tracks.iter_mut().filter(|t| t.open) {
            let last = t.dets.last().unwrap().frame;
            if frame - last - 1 > max_gap {
                t.open = false;
            }
        }
        let open: Vec<usize> = (0..tracks.len()).filter(|&i| tracks[i].open).collect();
        let ious: Vec<Vec<f64>> = dets
            .iter()
            .map(|d| open.iter().map(|&i| iou(coords(&tracks[i].dets.last().unwrap().bbox), coords(&d.bbox))).collect())
            .collect();
        let ids: Vec<usize> = open.iter().map(|&i| tracks[i].created).collect();
        let assignment = best_assignment(&ious, &ids, iou_min);
        let mut matched = vec![false; dets.len()];
        for (di, ti) in assignment {
            matched[di] = true;
            tracks[open[ti]].dets.push(dets[di].clone());
        }
        for (di, d) in dets.iter().enumerate() {
            if !matched[di] {
                let created = tracks.len();
                tracks.push(T { created, dets: vec![d.clone()], open: true });
            }
        }
    }
    let mut kept: Vec<T> = tracks.into_iter().filter(|t| t.dets.len() >= min_len).collect();
    kept.sort_by_key(|t| (t.dets[0].frame, t.created));
    kept.into_iter().map(|t| t.dets).collect()
}

/// Dominant item; ties resolved by earliest first occurrence.
pub fn mode<T: PartialEq + Clone>(items: &[T]) -> T {
    let mut best = 0;
    let mut best_count = 0;
    for (i, item) in items.iter().enumerate() {
        if items[..i].contains(item) {
            continue;
        }
        let c = items.iter().filter(|x| *x == item).count();
        if c > best_count {
            best = i;
            best_count = c;
        }
    }
    items[best].clone()
}

/// Nearest-detection gap filling by scanning every detection; equidistant
/// candidates resolve to the earlier frame.
pub fn interpolate(dets: &[Detection], stride: u32) -> Vec<Detection> {
    let first = dets[0].frame;
    let last = dets[dets.len() - 1].frame;
    let mut by_frame: BTreeMap<u32, Detection> = dets.iter().map(|d| (d.frame, d.clone())).collect();
    let mut f = first;
    while f <= last {
        if !by_frame.contains_key(&f) {
            let mut best: Option<&Detection> = None;
            for d in dets {
                let dist = d.frame.abs_diff(f);
                if best.map_or(true, |b| dist < b.frame.abs_diff(f)) {
                    best = Some(d);
                }
            }
            let mut copy = best.unwrap().clone();
            copy.frame = f;
            by_frame.insert(f, copy);
        }
        f += stride;
    }
    by_frame.into_values().collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Contrastive loss by the textbook formula.
pub fn contrastive_naive(pos: f64, negs: &[f64], tau: f64) -> f64 {
    let num = (pos / tau).exp();
    let den = num + negs.iter().map(|n| (n / tau).exp()).sum::<f64>();
    -(num / den).ln()
}
