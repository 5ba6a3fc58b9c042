//! Soft-label filtering: map detector soft labels and caption subjects onto
//! coarse categories and keep the tubelets compatible with the subject.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoise::{analyze_switching, mode_first_occurrence};
use crate::error::{Error, Result};
use crate::model::{normalize_text, Tubelet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Male,
    Female,
    Neutral,
}

/// Token -> category map. Unknown tokens are neutral.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryLexicon {
    tokens: HashMap<String, Category>,
}

impl Default for CategoryLexicon {
    fn default() -> Self {
        use Category::*;
        let seed = [
            ("man", Male),
            ("boy", Male),
            ("woman", Female),
            ("girl", Female),
            ("lady", Female),
            ("person", Neutral),
            ("child", Neutral),
            ("kid", Neutral),
        ];
        Self { tokens: seed.into_iter().map(|(t, c)| (t.to_string(), c)).collect() }
    }
}

impl CategoryLexicon {
    pub fn from_map(map: impl IntoIterator<Item = (String, Category)>) -> Self {
        Self { tokens: map.into_iter().map(|(t, c)| (normalize_text(&t), c)).collect() }
    }

    /// Reads a JSON object `{token: "male" | "female" | "neutral"}`. The file
    /// replaces the built-in seed entirely.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map: BTreeMap<String, Category> = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("lexicon {}: {e}", path.display())))?;
        Ok(Self::from_map(map))
    }

    pub fn lookup(&self, token: &str) -> Category {
        self.tokens.get(token).copied().unwrap_or(Category::Neutral)
    }

    /// Stable view of the entries, for hashing and display.
    pub fn entries(&self) -> BTreeMap<&str, Category> {
        self.tokens.iter().map(|(t, c)| (t.as_str(), *c)).collect()
    }
}

/// A phrase is specific when exactly one non-neutral category appears among
/// its tokens; mixtures of specific categories and generic phrases are neutral.
pub fn normalize_label(raw: &str, lex: &CategoryLexicon) -> Category {
    let text = normalize_text(raw);
    let mut found: Option<Category> = None;
    for token in text.split(' ') {
        match (lex.lookup(token), found) {
            (Category::Neutral, _) => {}
            (c, None) => found = Some(c),
            (c, Some(prev)) if c != prev => return Category::Neutral,
            _ => {}
        }
    }
    found.unwrap_or(Category::Neutral)
}

pub fn subject_category(subject_phrase: &str, lex: &CategoryLexicon) -> Category {
    normalize_label(subject_phrase, lex)
}

/// Dominant category over the tubelet's detections (earliest occurrence wins ties).
pub fn tubelet_type(t: &Tubelet, lex: &CategoryLexicon) -> Category {
    mode_first_occurrence(t.detections().iter().map(|d| normalize_label(&d.label(), lex)))
        .unwrap_or(Category::Neutral)
}

/// True when the detections of `t` carry two or more distinct specific
/// categories (e.g. some "man", some "woman").
pub fn has_conflicting_labels(t: &Tubelet, lex: &CategoryLexicon) -> bool {
    let mut seen: Option<Category> = None;
    for det in t.detections() {
        let c = normalize_label(&det.label(), lex);
        if c == Category::Neutral {
            continue;
        }
        match seen {
            None => seen = Some(c),
            Some(prev) if prev != c => return true,
            _ => {}
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlfParams {
    pub enabled: bool,
    /// Tubelets with at least this switching fraction are always kept.
    pub variability_min: f64,
    /// Also apply the filter to inference candidates.
    pub at_inference: bool,
}

impl Default for SlfParams {
    fn default() -> Self {
        Self { enabled: true, variability_min: 0.3, at_inference: false }
    }
}

impl SlfParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.variability_min) {
            return Err(Error::Config(format!("variability_min {} outside [0, 1]", self.variability_min)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlfSelection {
    pub subject: Category,
    pub kept: Vec<Tubelet>,
}

impl SlfSelection {
    /// An empty selection is legal but worth surfacing.
    pub fn is_empty_warning(&self) -> bool {
        self.kept.is_empty()
    }
}

pub fn slf_filter(
    tubelets: &[Tubelet],
    subject_phrase: &str,
    lex: &CategoryLexicon,
    variability_min: f64,
) -> SlfSelection {
    let subject = subject_category(subject_phrase, lex);
    let kept: Vec<Tubelet> = if subject == Category::Neutral {
        tubelets.to_vec()
    } else {
        tubelets
            .iter()
            .filter(|t| {
                let ty = tubelet_type(t, lex);
                ty == subject
                    || ty == Category::Neutral
                    || analyze_switching(t).switching_fraction >= variability_min
            })
            .cloned()
            .collect()
    };
    if kept.is_empty() && !tubelets.is_empty() {
        log::warn!("soft-label filter kept none of {} tubelets for subject `{subject_phrase}`", tubelets.len());
    }
    SlfSelection { subject, kept }
}
