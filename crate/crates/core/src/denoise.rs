//! Soft-label switching analysis and the two train-set denoising strategies.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{box_iou, Detection, Frame, Tubelet};
use crate::slf::{has_conflicting_labels, CategoryLexicon};

/// Most frequent item; ties go to the item that occurs first.
pub fn mode_first_occurrence<T, I>(items: I) -> Option<T>
where
    T: Eq + Hash + Clone,
    I: IntoIterator<Item = T>,
{
    let mut counts: HashMap<T, (usize, usize)> = HashMap::new();
    for (pos, item) in items.into_iter().enumerate() {
        counts.entry(item).or_insert((0, pos)).0 += 1;
    }
    counts
        .into_iter()
        .max_by(|(_, (ca, pa)), (_, (cb, pb))| ca.cmp(cb).then(pb.cmp(pa)))
        .map(|(item, _)| item)
}

pub fn tubelet_mode_label(t: &Tubelet) -> String {
    mode_first_occurrence(t.detections().iter().map(Detection::label)).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchPoint {
    pub frame: Frame,
    /// IoU between the box before the switch and the box at the switch.
    pub iou: f64,
}

/// A maximal run of consecutive detections sharing one non-mode label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchedRun {
    pub start: Frame,
    pub end: Frame,
    pub label: String,
    pub duration_seconds: f64,
    /// Index range into the tubelet's detections.
    #[serde(skip)]
    pub(crate) detections: std::ops::Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchReport {
    pub mode_label: String,
    pub switching_fraction: f64,
    pub switch_points: Vec<SwitchPoint>,
    pub switched_runs: Vec<SwitchedRun>,
}

pub fn analyze_switching(t: &Tubelet) -> SwitchReport {
    let dets = t.detections();
    let labels: Vec<String> = dets.iter().map(Detection::label).collect();
    let mode_label = mode_first_occurrence(labels.iter().cloned()).unwrap_or_default();
    let off_mode = labels.iter().filter(|l| **l != mode_label).count();

    let switch_points = (1..dets.len())
        .filter(|&i| labels[i] != labels[i - 1])
        .map(|i| SwitchPoint { frame: dets[i].frame, iou: box_iou(&dets[i - 1].bbox, &dets[i].bbox) })
        .collect();

    let mut switched_runs = Vec::new();
    let mut i = 0;
    while i < dets.len() {
        if labels[i] == mode_label {
            i += 1;
            continue;
        }
        let start = i;
        while i + 1 < dets.len() && labels[i + 1] == labels[start] {
            i += 1;
        }
        let (first, last) = (dets[start].frame, dets[i].frame);
        switched_runs.push(SwitchedRun {
            start: first,
            end: last,
            label: labels[start].clone(),
            duration_seconds: f64::from(last - first + 1) / t.fps_sampled(),
            detections: start..i + 1,
        });
        i += 1;
    }

    SwitchReport {
        mode_label,
        switching_fraction: off_mode as f64 / dets.len() as f64,
        switch_points,
        switched_runs,
    }
}

/// Only the mode-label detections survive.
pub fn denoise_switch_dropping(t: &Tubelet) -> Tubelet {
    let mode = tubelet_mode_label(t);
    let kept: Vec<Detection> = t.detections().iter().filter(|d| d.label() == mode).cloned().collect();
    // mode occurs at least once, so `kept` is non-empty and stays ordered
    Tubelet::new(t.id(), kept, t.fps_sampled()).expect("mode-label subset of a valid tubelet")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchAddition {
    /// Mode remainder first (keeps the parent id), then extracted runs.
    pub tubelets: Vec<Tubelet>,
    pub dropped: Vec<Detection>,
}

/// Id of the sub-tubelet extracted from run `run_index` of `parent`.
pub fn run_tubelet_id(parent: &str, run_index: usize) -> String {
    format!("{parent}_sw{run_index}")
}

/// Non-mode runs longer than `min_duration_s` become independent tubelets;
/// the remaining non-mode detections are dropped.
pub fn denoise_switch_addition(t: &Tubelet, min_duration_s: f64) -> SwitchAddition {
    let report = analyze_switching(t);
    if report.switched_runs.is_empty() {
        return SwitchAddition { tubelets: vec![t.clone()], dropped: Vec::new() };
    }
    let dets = t.detections();
    let remainder: Vec<Detection> = dets.iter().filter(|d| d.label() == report.mode_label).cloned().collect();
    let mut tubelets =
        vec![Tubelet::new(t.id(), remainder, t.fps_sampled()).expect("mode-label subset of a valid tubelet")];
    let mut dropped = Vec::new();
    for (idx, run) in report.switched_runs.iter().enumerate() {
        let run_dets = dets[run.detections.clone()].to_vec();
        if run.duration_seconds > min_duration_s {
            tubelets.push(
                Tubelet::new(run_tubelet_id(t.id(), idx), run_dets, t.fps_sampled())
                    .expect("contiguous slice of a valid tubelet"),
            );
        } else {
            dropped.extend(run_dets);
        }
    }
    debug_assert_eq!(
        dets.len(),
        tubelets.iter().map(Tubelet::len).sum::<usize>() + dropped.len(),
        "switch-addition must partition the input detections"
    );
    SwitchAddition { tubelets, dropped }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenoiseStrategy {
    None,
    SwitchDropping,
    SwitchAddition,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiseParams {
    pub strategy: DenoiseStrategy,
    pub min_duration_s: f64,
}

impl Default for DenoiseParams {
    fn default() -> Self {
        Self { strategy: DenoiseStrategy::SwitchDropping, min_duration_s: 1.0 }
    }
}

impl DenoiseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_duration_s.is_finite() && self.min_duration_s > 0.0) {
            return Err(Error::Config(format!("min_duration_s {} must be > 0", self.min_duration_s)));
        }
        Ok(())
    }
}

/// Applies the configured strategy to the tubelets that mix specific
/// categories; every other tubelet passes through untouched.
pub fn denoise_tubelets(tubelets: &[Tubelet], params: &DenoiseParams, lex: &CategoryLexicon) -> Vec<Tubelet> {
    let mut out = Vec::with_capacity(tubelets.len());
    for t in tubelets {
        if params.strategy == DenoiseStrategy::None || !has_conflicting_labels(t, lex) {
            out.push(t.clone());
            continue;
        }
        match params.strategy {
            DenoiseStrategy::SwitchDropping => out.push(denoise_switch_dropping(t)),
            DenoiseStrategy::SwitchAddition => out.extend(denoise_switch_addition(t, params.min_duration_s).tubelets),
            DenoiseStrategy::None => unreachable!(),
        }
    }
    out
}
