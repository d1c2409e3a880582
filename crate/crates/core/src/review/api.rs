//! Request and response bodies of the review service.

use serde::{Deserialize, Serialize};

use crate::catalog::{LabelSource, Legibility, Marking, MarkingFilter, ReviewTask, SeizureId, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub task: ReviewTask,
    pub marking: Marking,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueQuery {
    pub seizure: Option<u32>,
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRequest {
    pub reviewer: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropQuery {
    pub rotation: Option<u16>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchQuery {
    pub q: String,
}

/// Flat query-string form of [`MarkingFilter`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MarkingQuery {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seizure: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub legibility: Option<Legibility>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<LabelSource>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

impl MarkingQuery {
    pub fn filter(&self) -> Result<MarkingFilter, String> {
        let seizure = match self.seizure {
            Some(s) => Some(SeizureId::new(s).ok_or_else(|| format!("invalid seizure {s}"))?),
            None => None,
        };
        Ok(MarkingFilter {
            seizure,
            stage: self.stage,
            legibility: self.legibility,
            label: self.label.clone(),
            source: self.source,
            text_substring: self.text.clone(),
            description_substring: self.description.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub images: usize,
    pub markings: usize,
    pub open_tasks: std::collections::BTreeMap<String, usize>,
}
