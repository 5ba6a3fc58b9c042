//! Tubelet-based spatio-temporal video grounding pipeline.
//!
//! Per-frame detections are linked into tubelets, cleaned of soft-label
//! switches, filtered by subject type, staged into spatial (congestion) and
//! temporal (sub-action) curricula, grounded against queries with pluggable
//! scorers, and evaluated with tIoU / vIoU metrics and upper-bound oracles.

pub mod config;
pub mod curriculum;
pub mod denoise;
pub mod error;
pub mod eval;
pub mod fixture;
pub mod grounding;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod slf;
pub mod tracking;

pub use error::{Error, Result};
pub use model::{box_iou, temporal_iou, BBox, Detection, Frame, GroundTruthAnnotation, QueryRecord, SubActionPhrase, TemporalSpan, Tubelet};
