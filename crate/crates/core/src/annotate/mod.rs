//! Vision-language annotation of markings.
//!
//! Each marking goes through a fixed sequence of questions: presence,
//! legibility, orientation (one call carrying all four rotations),
//! multiplicity, then one content call per sub-marking asking for the
//! transcription or symbol name together with a style description. Every
//! backend call, failed or not, is written to the audit log.

mod backend;
mod batch;
pub mod crop;
pub mod parse;
mod protocol;
mod reconcile;
mod templates;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::{Legibility, MarkingKind, Rotation, Stage};

pub use backend::{
    AnnotationBackend, BackendError, BackendInfo, BackendRequest, HttpBackend, MockBackend,
    TranscriptEntry,
};
pub use batch::{annotate_batch, apply_outcomes, plan_batch, run_batch, BatchFailure, BatchOptions, BatchSummary};
pub use crop::{BlankCrops, CropError, CropSource, FileCrops};
pub use protocol::{annotate_marking, MarkingOutcome, ProtocolOptions};
pub use reconcile::{reconcile_all, reconcile_marking, ReconcileOutcome, ReconcileSummary};
pub use templates::{PromptContext, PromptTemplates};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Step {
    Presence,
    Legibility,
    Orientation,
    Multiplicity,
    /// Transcription and description of the sub-marking at this index.
    Content(u32),
}

impl Step {
    /// Transcript key: `presence`, `legibility`, `orientation`,
    /// `multiplicity`, `content.<index>`.
    pub fn key(self) -> String {
        match self {
            Step::Presence => "presence".into(),
            Step::Legibility => "legibility".into(),
            Step::Orientation => "orientation".into(),
            Step::Multiplicity => "multiplicity".into(),
            Step::Content(i) => format!("content.{i}"),
        }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubMarking {
    pub kind: MarkingKind,
    pub text: Option<String>,
    pub symbol_name: Option<String>,
    pub description: String,
    /// Stage as judged by the backend, when it offered one.
    pub stage: Option<Stage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationResult {
    pub marking_id: String,
    pub has_marking: bool,
    pub legibility: Option<Legibility>,
    pub rotation_applied: Option<Rotation>,
    pub sub_markings: Vec<SubMarking>,
}

impl AnnotationResult {
    fn empty(marking_id: &str) -> Self {
        Self {
            marking_id: marking_id.to_string(),
            has_marking: false,
            legibility: None,
            rotation_applied: None,
            sub_markings: Vec::new(),
        }
    }
}
