use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::geometry::BoundingBox;

/// Version written into every persisted record.
pub const SCHEMA_VERSION: u32 = 1;

/// Seizure number. Always positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct SeizureId(u32);

impl SeizureId {
    pub fn new(id: u32) -> Option<Self> {
        (id > 0).then_some(Self(id))
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

impl TryFrom<u32> for SeizureId {
    type Error = String;

    fn try_from(value: u32) -> Result<Self, Self::Error> {
        SeizureId::new(value).ok_or_else(|| "seizure id must be positive".to_string())
    }
}

impl From<SeizureId> for u32 {
    fn from(id: SeizureId) -> u32 {
        id.0
    }
}

impl fmt::Display for SeizureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::str::FromStr for SeizureId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let n: u32 = s
            .trim()
            .parse()
            .map_err(|_| format!("invalid seizure id {s:?}"))?;
        SeizureId::new(n).ok_or_else(|| format!("seizure id must be positive, got {n}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub schema_version: u32,
    pub image_id: String,
    pub seizure: SeizureId,
    /// Path as written in the manifest, resolved against the image root.
    pub uri: String,
    pub width_px: u32,
    pub height_px: u32,
}

/// Crop orientation in degrees clockwise.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub enum Rotation {
    #[default]
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];

    pub fn degrees(self) -> u16 {
        match self {
            Rotation::R0 => 0,
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }

    pub fn from_degrees(deg: u16) -> Option<Self> {
        match deg {
            0 => Some(Rotation::R0),
            90 => Some(Rotation::R90),
            180 => Some(Rotation::R180),
            270 => Some(Rotation::R270),
            _ => None,
        }
    }
}

impl TryFrom<u16> for Rotation {
    type Error = String;

    fn try_from(value: u16) -> Result<Self, Self::Error> {
        Rotation::from_degrees(value).ok_or_else(|| format!("rotation must be 0, 90, 180 or 270, got {value}"))
    }
}

impl From<Rotation> for u16 {
    fn from(r: Rotation) -> u16 {
        r.degrees()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    PreSeizure,
    PostSeizure,
    #[default]
    Unknown,
}

impl Stage {
    /// Maps the canonical stage labels (`pre_seizure`, `post_seizure`).
    pub fn from_label(label: &str) -> Option<Stage> {
        match label {
            "pre_seizure" => Some(Stage::PreSeizure),
            "post_seizure" => Some(Stage::PostSeizure),
            _ => None,
        }
    }

    pub fn as_label(self) -> &'static str {
        match self {
            Stage::PreSeizure => "pre_seizure",
            Stage::PostSeizure => "post_seizure",
            Stage::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Legibility {
    Legible,
    Illegible,
    #[default]
    Unknown,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkingKind {
    Textual,
    Symbolic,
    None,
    #[default]
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Human,
    Propagated,
    Vlm,
}

/// One label applied to a marking. `created_at` is the catalog's logical
/// clock (a monotonically increasing sequence number), which keeps automated
/// runs reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelAssignment {
    pub label: String,
    pub source: LabelSource,
    pub probability: f64,
    pub created_at: u64,
}

impl LabelAssignment {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(format!("probability {} outside [0, 1]", self.probability));
        }
        if self.source == LabelSource::Human && self.probability != 1.0 {
            return Err("human labels carry probability 1.0".to_string());
        }
        if self.label.trim().is_empty() {
            return Err("empty label".to_string());
        }
        Ok(())
    }
}

/// Where a marking stands in the vision-language annotation protocol.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationStatus {
    #[default]
    Pending,
    Annotated,
    NoMarking,
    Illegible,
    NeedsRetry,
    NeedsReview,
}

impl AnnotationStatus {
    /// Whether a batch run should leave the marking alone (unless forced).
    pub fn is_settled(self) -> bool {
        matches!(
            self,
            AnnotationStatus::Annotated
                | AnnotationStatus::NoMarking
                | AnnotationStatus::Illegible
                | AnnotationStatus::NeedsReview
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marking {
    pub schema_version: u32,
    pub marking_id: String,
    pub image_id: String,
    pub seizure: SeizureId,
    pub bbox: BoundingBox,
    pub rotation: Rotation,
    /// Sub-marking index within the crop; non-zero only for markings split
    /// off by annotation.
    #[serde(default)]
    pub part: u32,
    pub confidence: f64,
    /// Detections merged into this box.
    pub member_count: usize,
    pub stage: Stage,
    pub legibility: Legibility,
    pub kind: MarkingKind,
    pub text: Option<String>,
    pub symbol_name: Option<String>,
    pub description: Option<String>,
    pub annotation: AnnotationStatus,
    pub labels: Vec<LabelAssignment>,
}

impl Marking {
    /// A freshly extracted marking with nothing known beyond its box.
    pub fn extracted(image: &ImageRecord, bbox: BoundingBox, confidence: f64, member_count: usize) -> Self {
        let rotation = Rotation::R0;
        Self {
            schema_version: SCHEMA_VERSION,
            marking_id: marking_id(&image.image_id, &bbox, rotation, 0),
            image_id: image.image_id.clone(),
            seizure: image.seizure,
            bbox,
            rotation,
            part: 0,
            confidence,
            member_count,
            stage: Stage::Unknown,
            legibility: Legibility::Unknown,
            kind: MarkingKind::Unknown,
            text: None,
            symbol_name: None,
            description: None,
            annotation: AnnotationStatus::Pending,
            labels: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.text.is_some() && self.kind != MarkingKind::Textual {
            return Err("text present on a non-textual marking".to_string());
        }
        if self.symbol_name.is_some() && self.kind != MarkingKind::Symbolic {
            return Err("symbol_name present on a non-symbolic marking".to_string());
        }
        for (i, a) in self.labels.iter().enumerate() {
            a.validate()?;
            if self.labels[..i]
                .iter()
                .any(|b| b.label == a.label && b.source == a.source)
            {
                return Err(format!("duplicate label {:?} from {:?}", a.label, a.source));
            }
        }
        Ok(())
    }

    pub fn has_label(&self, label: &str, source: LabelSource) -> bool {
        self.labels
            .iter()
            .any(|l| l.label == label && l.source == source)
    }

    pub fn labels_from(&self, source: LabelSource) -> impl Iterator<Item = &LabelAssignment> {
        self.labels.iter().filter(move |l| l.source == source)
    }

    /// Appends a label unless the same (label, source) pair is already held.
    /// Returns whether anything was added.
    pub fn push_label(&mut self, assignment: LabelAssignment) -> bool {
        if self.has_label(&assignment.label, assignment.source) {
            return false;
        }
        self.labels.push(assignment);
        true
    }
}

/// Stable marking identifier derived from provenance.
pub fn marking_id(image_id: &str, bbox: &BoundingBox, rotation: Rotation, part: u32) -> String {
    let mut hasher = Sha256::new();
    hasher.update(image_id.as_bytes());
    for v in [bbox.x_min, bbox.y_min, bbox.x_max, bbox.y_max] {
        hasher.update([0x1f]);
        hasher.update(v.to_bits().to_be_bytes());
    }
    hasher.update([0x1f]);
    hasher.update(rotation.degrees().to_be_bytes());
    if part > 0 {
        hasher.update([0x1f]);
        hasher.update(part.to_be_bytes());
    }
    let digest = hasher.finalize();
    format!("mk-{}", hex::encode(&digest[..8]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueName {
    InitialLabeling,
    IllegibleReview,
    ConflictReview,
}

impl QueueName {
    pub const ALL: [QueueName; 3] = [
        QueueName::InitialLabeling,
        QueueName::IllegibleReview,
        QueueName::ConflictReview,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QueueName::InitialLabeling => "initial_labeling",
            QueueName::IllegibleReview => "illegible_review",
            QueueName::ConflictReview => "conflict_review",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        QueueName::ALL.into_iter().find(|q| q.as_str() == s)
    }
}

impl fmt::Display for QueueName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Open,
    Done,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewTask {
    pub schema_version: u32,
    pub task_id: String,
    pub marking_id: String,
    pub queue: QueueName,
    pub status: TaskStatus,
    pub assigned_label: Option<String>,
    /// Transcription entered during illegible adjudication.
    pub corrected_text: Option<String>,
    pub reviewer: Option<String>,
    /// Logical creation time; open tasks are served in this order.
    pub created_seq: u64,
    pub decided_at: Option<DateTime<Utc>>,
}

/// A disagreement between label sources, kept for audit and review.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictRecord {
    pub schema_version: u32,
    pub seq: u64,
    pub marking_id: String,
    pub field: String,
    pub kept: String,
    pub kept_source: String,
    pub other: String,
    pub other_source: String,
}

/// One prompt/response exchange with an annotation backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub schema_version: u32,
    pub marking_id: String,
    pub step: String,
    pub attempt: u32,
    pub prompt: String,
    pub image_count: usize,
    pub response: Option<String>,
    pub error: Option<String>,
}
