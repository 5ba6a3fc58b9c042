//! Curriculum construction: congestion-guided spatial stages and
//! sub-action temporal stages.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{temporal_iou, QueryRecord, Tubelet};

/// Slack applied to stage thresholds so that values such as 0.4 are not
/// pushed to a later stage by the rounding of `1 - 3 * 0.2`.
const THRESHOLD_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HighToLow,
    LowToHigh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub stage: usize,
    pub member_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stages: Vec<Stage>,
    pub cumulative: bool,
    pub direction: Direction,
}

impl StagePlan {
    /// Members entering at each stage (the set difference with the previous
    /// stage when cumulative, the stage itself otherwise).
    pub fn additional_counts(&self) -> Vec<usize> {
        if !self.cumulative {
            return self.stages.iter().map(|s| s.member_ids.len()).collect();
        }
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        self.stages
            .iter()
            .map(|s| s.member_ids.iter().filter(|id| seen.insert(id.as_str())).count())
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.member_ids.len()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CongestionRecord {
    pub video_id: String,
    pub n_tubelets: usize,
    pub congestion: f64,
}

/// Average pairwise temporal IoU over all unordered tubelet pairs. A single
/// tubelet counts as fully congested (1.0).
pub fn congestion(tubelets: &[Tubelet]) -> Result<f64> {
    match tubelets.len() {
        0 => Err(Error::InvalidSample("congestion of a sample with no tubelets".into())),
        1 => Ok(1.0),
        n => {
            let mut total = 0.0;
            for i in 0..n - 1 {
                for j in i + 1..n {
                    total += temporal_iou(&tubelets[i].span(), &tubelets[j].span())?;
                }
            }
            let pairs = (n * (n - 1) / 2) as f64;
            Ok(total / pairs)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CgsParams {
    pub n_stages: usize,
    pub delta: f64,
    pub direction: Direction,
    pub cumulative: bool,
    /// Compute congestion on soft-label-filtered tubelets.
    pub after_slf: bool,
}

impl Default for CgsParams {
    fn default() -> Self {
        Self { n_stages: 5, delta: 0.2, direction: Direction::HighToLow, cumulative: true, after_slf: true }
    }
}

impl CgsParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_stages == 0 || !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::Config(format!(
                "CGS needs n_stages >= 1 and delta > 0 (got {} / {})",
                self.n_stages, self.delta
            )));
        }
        if self.n_stages as f64 * self.delta > 1.0 + THRESHOLD_EPS {
            return Err(Error::Config(format!(
                "CGS n_stages * delta = {} exceeds 1",
                self.n_stages as f64 * self.delta
            )));
        }
        Ok(())
    }
}

/// Stage (1-based) at which a sample with `congestion` first enters.
fn entry_stage(c: f64, params: &CgsParams) -> usize {
    for k in 1..params.n_stages {
        let step = k as f64 * params.delta;
        let inside = match params.direction {
            Direction::HighToLow => c >= 1.0 - step - THRESHOLD_EPS,
            Direction::LowToHigh => c <= step + THRESHOLD_EPS,
        };
        if inside {
            return k;
        }
    }
    params.n_stages
}

/// Stage k (high-to-low) holds samples with congestion >= 1 - k * delta; the
/// last stage's threshold is clamped so it covers everything.
pub fn cgs_stage_assignment(records: &[CongestionRecord], params: &CgsParams) -> Result<StagePlan> {
    params.validate()?;
    if let Some(bad) = records.iter().find(|r| !(0.0..=1.0).contains(&r.congestion)) {
        return Err(Error::InvalidSample(format!("congestion {} for `{}` outside [0, 1]", bad.congestion, bad.video_id)));
    }
    let entries: Vec<usize> = records.iter().map(|r| entry_stage(r.congestion, params)).collect();
    let stages = (1..=params.n_stages)
        .map(|k| Stage {
            stage: k,
            member_ids: records
                .iter()
                .zip(&entries)
                .filter(|(_, &e)| if params.cumulative { e <= k } else { e == k })
                .map(|(r, _)| r.video_id.clone())
                .collect(),
        })
        .collect();
    Ok(StagePlan { stages, cumulative: params.cumulative, direction: params.direction })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubActionViolation {
    pub action_count: u32,
    pub position: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubActionValidation {
    pub video_id: String,
    pub violations: Vec<SubActionViolation>,
    /// Phrases without action indices; contiguity could not be checked.
    pub unchecked: usize,
}

impl SubActionValidation {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Every phrase under key k must carry exactly k strictly increasing,
/// contiguous action indices.
pub fn validate_subactions(q: &QueryRecord) -> SubActionValidation {
    let mut violations = Vec::new();
    let mut unchecked = 0;
    for (expected, key) in (1u32..).zip(q.sub_actions.keys()) {
        if *key != expected {
            violations.push(SubActionViolation {
                action_count: *key,
                position: 0,
                reason: format!("keys must be consecutive from 1; expected {expected}"),
            });
            break;
        }
    }
    for (&k, phrases) in &q.sub_actions {
        for (pos, phrase) in phrases.iter().enumerate() {
            let Some(idx) = &phrase.action_indices else {
                unchecked += 1;
                continue;
            };
            let mut fail = |reason: String| violations.push(SubActionViolation { action_count: k, position: pos, reason });
            if idx.len() != k as usize {
                fail(format!("{} action indices under key {k}", idx.len()));
            } else if idx.windows(2).any(|w| w[0] >= w[1]) {
                fail(format!("indices {idx:?} not strictly increasing"));
            } else if idx.windows(2).any(|w| w[1] != w[0] + 1) {
                fail(format!("indices {idx:?} are non-contiguous"));
            }
        }
    }
    if unchecked > 0 {
        log::warn!("query `{}`: {unchecked} sub-action phrases lack action indices; contiguity unchecked", q.video_id);
    }
    SubActionValidation { video_id: q.video_id.clone(), violations, unchecked }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagedPhrase {
    pub id: String,
    pub video_id: String,
    pub action_count: u32,
    pub text: String,
}

/// Member id of phrase `position` under key `action_count`.
pub fn phrase_id(video_id: &str, action_count: u32, position: usize) -> String {
    format!("{video_id}:{action_count}:{position}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SatclPlan {
    pub plan: StagePlan,
    pub phrases: Vec<StagedPhrase>,
    pub rejected: Vec<SubActionValidation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SatclParams {
    pub n_stages: usize,
    pub cumulative: bool,
}

impl Default for SatclParams {
    fn default() -> Self {
        Self { n_stages: 4, cumulative: true }
    }
}

/// Stage k holds phrases with at most k actions (exactly k when not
/// cumulative); longer phrases fold into the last stage. Queries whose
/// sub-actions fail validation are left out and reported in `rejected`.
pub fn satcl_stage_assignment(queries: &[QueryRecord], params: &SatclParams) -> Result<SatclPlan> {
    if params.n_stages == 0 {
        return Err(Error::Config("SA-TCL n_stages must be >= 1".into()));
    }
    let mut rejected = Vec::new();
    let mut phrases = Vec::new();
    let mut order: Vec<&QueryRecord> = queries.iter().collect();
    order.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    for q in order {
        let validation = validate_subactions(q);
        if !validation.is_valid() {
            log::warn!("query `{}` rejected from SA-TCL: {} violations", q.video_id, validation.violations.len());
            rejected.push(validation);
            continue;
        }
        for (&k, list) in &q.sub_actions {
            for (pos, p) in list.iter().enumerate() {
                phrases.push(StagedPhrase {
                    id: phrase_id(&q.video_id, k, pos),
                    video_id: q.video_id.clone(),
                    action_count: k,
                    text: p.text.clone(),
                });
            }
        }
    }

    let last = params.n_stages as u32;
    let stages = (1..=last)
        .map(|k| Stage {
            stage: k as usize,
            member_ids: phrases
                .iter()
                .filter(|p| {
                    let entry = p.action_count.min(last);
                    if params.cumulative { entry <= k } else { entry == k }
                })
                .map(|p| p.id.clone())
                .collect(),
        })
        .collect();
    Ok(SatclPlan {
        plan: StagePlan { stages, cumulative: params.cumulative, direction: Direction::LowToHigh },
        phrases,
        rejected,
    })
}
