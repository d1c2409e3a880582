use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::catalog::{AnnotationStatus, AuditEntry, Legibility, Marking, Rotation, SCHEMA_VERSION};

use super::crop::{encode_png, rotate};
use super::{
    parse, AnnotationBackend, AnnotationResult, BackendError, BackendRequest, CropSource,
    PromptContext, PromptTemplates, Step,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolOptions {
    /// Extra attempts after a failed call.
    pub retries: u32,
    /// Wait before the first retry; doubles for each further retry.
    pub backoff_ms: u64,
    pub call_timeout_ms: u64,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        Self {
            retries: 2,
            backoff_ms: 250,
            call_timeout_ms: 60_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkingOutcome {
    pub status: AnnotationStatus,
    pub result: AnnotationResult,
    pub audit: Vec<AuditEntry>,
    /// Why the marking needs a retry or review.
    pub failure: Option<String>,
    /// Response text that did not fit the answer grammar.
    pub unparsed: Option<String>,
}

impl MarkingOutcome {
    pub fn calls(&self) -> usize {
        self.audit.len()
    }
}

struct Session<'a> {
    marking: &'a Marking,
    backend: &'a dyn AnnotationBackend,
    templates: &'a PromptTemplates,
    opts: ProtocolOptions,
    audit: Vec<AuditEntry>,
}

impl Session<'_> {
    async fn ask(&mut self, step: Step, ctx: &PromptContext<'_>, images: Vec<Vec<u8>>) -> Result<String, BackendError> {
        let prompt = self.templates.render(step, ctx);
        let mut attempt = 0;
        loop {
            let request = BackendRequest {
                marking_id: self.marking.marking_id.clone(),
                step,
                attempt,
                prompt: prompt.clone(),
                images: images.clone(),
            };
            let limit = Duration::from_millis(self.opts.call_timeout_ms);
            let answer = match tokio::time::timeout(limit, self.backend.answer(&request)).await {
                Ok(r) => r,
                Err(_) => Err(BackendError::Timeout),
            };
            self.audit.push(AuditEntry {
                schema_version: SCHEMA_VERSION,
                marking_id: self.marking.marking_id.clone(),
                step: step.key(),
                attempt,
                prompt: prompt.clone(),
                image_count: images.len(),
                response: answer.as_ref().ok().cloned(),
                error: answer.as_ref().err().map(ToString::to_string),
            });
            match answer {
                Ok(text) => return Ok(text),
                Err(e) if attempt >= self.opts.retries => return Err(e),
                Err(_) => {
                    let wait = self.opts.backoff_ms.saturating_mul(1 << attempt.min(16));
                    if wait > 0 {
                        tokio::time::sleep(Duration::from_millis(wait)).await;
                    }
                    attempt += 1;
                }
            }
        }
    }
}

fn finish(
    session: Session<'_>,
    status: AnnotationStatus,
    result: AnnotationResult,
    failure: Option<String>,
    unparsed: Option<String>,
) -> MarkingOutcome {
    MarkingOutcome {
        status,
        result,
        audit: session.audit,
        failure,
        unparsed,
    }
}

/// Runs the question sequence for one marking. Never touches the catalog.
pub async fn annotate_marking(
    marking: &Marking,
    backend: &dyn AnnotationBackend,
    crops: &dyn CropSource,
    templates: &PromptTemplates,
    opts: ProtocolOptions,
) -> MarkingOutcome {
    let mut s = Session {
        marking,
        backend,
        templates,
        opts,
        audit: Vec::new(),
    };
    let mut result = AnnotationResult::empty(&marking.marking_id);
    let mut ctx = PromptContext {
        marking_id: &marking.marking_id,
        seizure: marking.seizure.get(),
        index: 1,
        count: 1,
    };

    let crop = match crops.crop(marking) {
        Ok(c) => c,
        Err(e) => return finish(s, AnnotationStatus::NeedsRetry, result, Some(e.to_string()), None),
    };
    let upright = encode_png(&crop);

    macro_rules! ask {
        ($step:expr, $images:expr) => {
            match s.ask($step, &ctx, $images).await {
                Ok(text) => text,
                Err(e) => {
                    let why = format!("{}: {e}", $step);
                    return finish(s, AnnotationStatus::NeedsRetry, result, Some(why), None);
                }
            }
        };
    }
    macro_rules! parse_or_review {
        ($step:expr, $parsed:expr, $raw:expr) => {
            match $parsed {
                Ok(v) => v,
                Err(e) => {
                    let why = format!("{}: {e}", $step);
                    return finish(s, AnnotationStatus::NeedsReview, result, Some(why), Some($raw));
                }
            }
        };
    }

    let raw = ask!(Step::Presence, vec![upright.clone()]);
    result.has_marking = parse_or_review!(Step::Presence, parse::presence(&raw), raw);
    if !result.has_marking {
        return finish(s, AnnotationStatus::NoMarking, result, None, None);
    }

    let raw = ask!(Step::Legibility, vec![upright.clone()]);
    let legibility = parse_or_review!(Step::Legibility, parse::legibility(&raw), raw);
    result.legibility = Some(legibility);
    if legibility == Legibility::Illegible {
        return finish(s, AnnotationStatus::Illegible, result, None, None);
    }

    let variants: Vec<Vec<u8>> = Rotation::ALL
        .into_iter()
        .map(|r| encode_png(&rotate(&crop, r)))
        .collect();
    let raw = ask!(Step::Orientation, variants);
    let (rotation, mut review) = match parse::orientation(&raw) {
        Ok(r) => (r, None),
        Err(e) => (Rotation::R0, Some((format!("{}: {e}; kept 0", Step::Orientation), raw))),
    };
    result.rotation_applied = Some(rotation);
    let turned = encode_png(&rotate(&crop, rotation));

    let raw = ask!(Step::Multiplicity, vec![turned.clone()]);
    let count = parse_or_review!(Step::Multiplicity, parse::multiplicity(&raw), raw);
    ctx.count = count;
    for i in 0..count {
        ctx.index = i + 1;
        let raw = ask!(Step::Content(i), vec![turned.clone()]);
        let sub = parse_or_review!(Step::Content(i), parse::content(&raw), raw);
        result.sub_markings.push(sub);
    }

    match review.take() {
        Some((why, raw)) => finish(s, AnnotationStatus::NeedsReview, result, Some(why), Some(raw)),
        None => finish(s, AnnotationStatus::Annotated, result, None, None),
    }
}
