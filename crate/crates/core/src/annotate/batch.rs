use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use crate::catalog::{
    marking_id, AnnotationStatus, Catalog, CatalogError, LabelSource, Legibility, Marking,
    MarkingKind, QueueName, Rotation,
};
use crate::review;

use super::{
    annotate_marking, reconcile_marking, AnnotationBackend, CropSource, MarkingOutcome,
    PromptTemplates, ProtocolOptions, SubMarking,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchOptions {
    pub concurrency: usize,
    /// Re-annotate markings that already have a settled annotation.
    pub force: bool,
    pub protocol: ProtocolOptions,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            concurrency: 4,
            force: false,
            protocol: ProtocolOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchFailure {
    pub marking_id: String,
    pub status: AnnotationStatus,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub annotated: usize,
    pub illegible: usize,
    pub no_marking: usize,
    pub needs_retry: usize,
    pub needs_review: usize,
    pub skipped: usize,
    /// Markings created by splitting multi-marking crops.
    pub split_off: usize,
    pub backend_calls: usize,
    pub failures: Vec<BatchFailure>,
}

/// Markings to send, in id order. Sub-markings produced by an earlier split
/// are never re-sent; settled markings only when forced.
pub fn plan_batch(catalog: &Catalog, ids: &[String], force: bool) -> Result<(Vec<Marking>, usize), CatalogError> {
    let mut ids: Vec<&String> = ids.iter().collect();
    ids.sort();
    ids.dedup();
    let mut jobs = Vec::new();
    let mut skipped = 0;
    for id in ids {
        let m = catalog
            .marking(id)
            .ok_or_else(|| CatalogError::UnknownMarking(id.clone()))?;
        if m.part > 0 || (!force && m.annotation.is_settled()) {
            skipped += 1;
        } else {
            jobs.push(m.clone());
        }
    }
    Ok((jobs, skipped))
}

/// Annotates every job with at most `concurrency` markings in flight.
/// Outcomes come back in job order regardless of completion order.
pub async fn run_batch(
    jobs: &[Marking],
    backend: &dyn AnnotationBackend,
    crops: &dyn CropSource,
    templates: &PromptTemplates,
    opts: BatchOptions,
) -> Vec<MarkingOutcome> {
    let mut indexed: Vec<(usize, MarkingOutcome)> = stream::iter(jobs.iter().enumerate())
        .map(|(i, m)| async move { (i, annotate_marking(m, backend, crops, templates, opts.protocol).await) })
        .buffer_unordered(opts.concurrency.max(1))
        .collect()
        .await;
    indexed.sort_by_key(|(i, _)| *i);
    indexed.into_iter().map(|(_, o)| o).collect()
}

fn apply_content(m: &mut Marking, sub: &SubMarking, rotation: Rotation) {
    m.rotation = rotation;
    m.legibility = Legibility::Legible;
    m.kind = sub.kind;
    m.text = sub.text.clone();
    m.symbol_name = sub.symbol_name.clone();
    m.description = Some(sub.description.clone());
}

fn add_vlm_stage(catalog: &mut Catalog, id: &str, sub: &SubMarking) -> Result<(), CatalogError> {
    if let Some(stage) = sub.stage {
        // the backend gives no calibrated probability
        catalog.add_label(id, stage.as_label(), LabelSource::Vlm, 1.0)?;
    }
    reconcile_marking(catalog, id)?;
    Ok(())
}

/// Writes outcomes into the catalog, in the order given.
pub fn apply_outcomes(
    catalog: &mut Catalog,
    outcomes: Vec<MarkingOutcome>,
    skipped: usize,
) -> Result<BatchSummary, CatalogError> {
    let mut summary = BatchSummary {
        skipped,
        ..Default::default()
    };
    for out in outcomes {
        let id = out.result.marking_id.clone();
        summary.backend_calls += out.calls();
        catalog.append_audit(out.audit);
        let Some(m) = catalog.marking_mut(&id) else {
            return Err(CatalogError::UnknownMarking(id));
        };
        m.annotation = out.status;
        if let Some(l) = out.result.legibility {
            m.legibility = l;
        }
        match out.status {
            AnnotationStatus::NoMarking => {
                m.kind = MarkingKind::None;
                m.text = None;
                m.symbol_name = None;
                summary.no_marking += 1;
            }
            AnnotationStatus::Illegible => {
                summary.illegible += 1;
                review::enqueue(catalog, QueueName::IllegibleReview, [id.as_str()]).map_err(|e| match e {
                    review::ReviewError::Catalog(c) => c,
                    other => CatalogError::InvalidMarking {
                        marking_id: id.clone(),
                        reason: other.to_string(),
                    },
                })?;
            }
            AnnotationStatus::NeedsRetry => summary.needs_retry += 1,
            AnnotationStatus::NeedsReview => summary.needs_review += 1,
            AnnotationStatus::Annotated => summary.annotated += 1,
            AnnotationStatus::Pending => {}
        }
        if let Some(reason) = out.failure {
            summary.failures.push(BatchFailure {
                marking_id: id.clone(),
                status: out.status,
                reason,
            });
        }

        let rotation = out.result.rotation_applied.unwrap_or_default();
        let Some((first, rest)) = out.result.sub_markings.split_first() else {
            continue;
        };
        let parent = {
            let m = catalog.marking_mut(&id).expect("checked above");
            apply_content(m, first, rotation);
            m.clone()
        };
        add_vlm_stage(catalog, &id, first)?;

        let mut children = Vec::new();
        for (i, sub) in rest.iter().enumerate() {
            let part = i as u32 + 1;
            let mut child = parent.clone();
            child.marking_id = marking_id(&parent.image_id, &parent.bbox, Rotation::R0, part);
            child.part = part;
            child.labels.clear();
            child.stage = Default::default();
            apply_content(&mut child, sub, rotation);
            children.push((child, sub));
        }
        summary.split_off += children.len();
        let subs: Vec<(String, &SubMarking)> = children.iter().map(|(c, s)| (c.marking_id.clone(), *s)).collect();
        catalog.upsert_markings(children.iter().map(|(c, _)| c.clone()).collect())?;
        for (child_id, sub) in subs {
            add_vlm_stage(catalog, &child_id, sub)?;
        }
    }
    Ok(summary)
}

/// Plans, runs and applies a batch against one catalog.
pub async fn annotate_batch(
    catalog: &mut Catalog,
    ids: &[String],
    backend: &dyn AnnotationBackend,
    crops: &dyn CropSource,
    templates: &PromptTemplates,
    opts: BatchOptions,
) -> Result<BatchSummary, CatalogError> {
    let (jobs, skipped) = plan_batch(catalog, ids, opts.force)?;
    let outcomes = run_batch(&jobs, backend, crops, templates, opts).await;
    apply_outcomes(catalog, outcomes, skipped)
}
