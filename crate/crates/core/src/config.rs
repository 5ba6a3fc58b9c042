//! Pipeline configuration: JSON file with per-module defaults, validation and
//! a stable hash over every effective parameter.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curriculum::{CgsParams, SatclParams};
use crate::denoise::DenoiseParams;
use crate::error::{Error, Result};
use crate::eval::UpperBoundMode;
use crate::grounding::{InferenceParams, ScorerKind};
use crate::slf::{Category, CategoryLexicon, SlfParams};
use crate::tracking::TrackerParams;

/// Environment variable holding the worker-pool size.
pub const WORKERS_ENV: &str = "TUBEGROUND_WORKERS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Raw frames between detector runs; converts `fps_raw` to sampled fps.
    pub detection_stride: u32,
    /// Detections below this confidence are discarded on load.
    pub confidence_floor: f64,
    pub tracker: TrackerParams,
    pub denoise: DenoiseParams,
    pub slf: SlfParams,
    pub cgs: CgsParams,
    pub satcl: SatclParams,
    pub inference: InferenceParams,
    pub scorer: ScorerKind,
    pub upper_bound: UpperBoundMode,
    /// Midpoint tolerance, in sampled frames, for the shift diagnostic.
    pub shift_eps_frames: f64,
    /// Replaces the built-in category lexicon when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<BTreeMap<String, Category>>,
    /// Worker threads; does not affect outputs and is excluded from the hash.
    pub parallelism: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            detection_stride: 5,
            confidence_floor: 0.4,
            tracker: TrackerParams::default(),
            denoise: DenoiseParams::default(),
            slf: SlfParams::default(),
            cgs: CgsParams::default(),
            satcl: SatclParams::default(),
            inference: InferenceParams::default(),
            scorer: ScorerKind::MeanConfidence,
            upper_bound: UpperBoundMode::ClipToGt,
            shift_eps_frames: 0.5,
            lexicon: None,
            parallelism: 1,
        }
    }
}

impl PipelineConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.detection_stride == 0 {
            return Err(Error::Config("detection_stride must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.confidence_floor) {
            return Err(Error::Config(format!("confidence_floor {} outside [0, 1]", self.confidence_floor)));
        }
        if !(self.shift_eps_frames.is_finite() && self.shift_eps_frames >= 0.0) {
            return Err(Error::Config(format!("shift_eps_frames {} must be >= 0", self.shift_eps_frames)));
        }
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be >= 1".into()));
        }
        if self.satcl.n_stages == 0 {
            return Err(Error::Config("SA-TCL n_stages must be >= 1".into()));
        }
        self.tracker.validate()?;
        self.denoise.validate()?;
        self.slf.validate()?;
        self.cgs.validate()?;
        self.inference.validate()
    }

    pub fn category_lexicon(&self) -> CategoryLexicon {
        match &self.lexicon {
            Some(map) => CategoryLexicon::from_map(map.clone()),
            None => CategoryLexicon::default(),
        }
    }

    /// Canonical JSON of every output-affecting parameter.
    pub fn canonical_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let serde_json::Value::Object(map) = &mut value {
            map.remove("parallelism");
        }
        // serde_json's default map is ordered by key, so this is canonical
        serde_json::to_string(&value).expect("value serializes")
    }

    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}
