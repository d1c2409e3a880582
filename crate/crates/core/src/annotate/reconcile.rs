use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, CatalogError, LabelSource, QueueName, Stage};
use crate::review;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconcileOutcome {
    pub marking_id: String,
    pub stage: Stage,
    pub decided_by: Option<LabelSource>,
    pub new_conflicts: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconcileSummary {
    pub markings: usize,
    pub stage_changed: usize,
    pub new_conflicts: usize,
}

const PRECEDENCE: [LabelSource; 3] = [LabelSource::Human, LabelSource::Propagated, LabelSource::Vlm];

fn source_name(s: LabelSource) -> &'static str {
    match s {
        LabelSource::Human => "human",
        LabelSource::Propagated => "propagated",
        LabelSource::Vlm => "vlm",
    }
}

/// Resolves a marking's stage from its stage labels, human over propagated
/// over vlm, taking each source's most recent stage label. Each disagreement
/// with the winning value is logged once; disagreements not settled by a
/// human also open a conflict-review task.
pub fn reconcile_marking(catalog: &mut Catalog, marking_id: &str) -> Result<ReconcileOutcome, CatalogError> {
    let m = catalog
        .marking(marking_id)
        .ok_or_else(|| CatalogError::UnknownMarking(marking_id.to_string()))?;
    let per_source: Vec<(LabelSource, Stage)> = PRECEDENCE
        .into_iter()
        .filter_map(|src| {
            m.labels_from(src)
                .filter_map(|l| Stage::from_label(&l.label).map(|s| (l.created_at, s)))
                .max_by_key(|(t, _)| *t)
                .map(|(_, s)| (src, s))
        })
        .collect();

    let Some(&(winner, stage)) = per_source.first() else {
        return Ok(ReconcileOutcome {
            marking_id: marking_id.to_string(),
            stage: m.stage,
            decided_by: None,
            new_conflicts: 0,
        });
    };
    let mut new_conflicts = 0;
    let mut needs_review = false;
    for &(src, other) in &per_source[1..] {
        if other == stage {
            continue;
        }
        if winner != LabelSource::Human {
            needs_review = true;
        }
        let kept = (stage.as_label(), source_name(winner));
        let lost = (other.as_label(), source_name(src));
        let seen = catalog.conflicts().iter().any(|c| {
            c.marking_id == marking_id
                && c.field == "stage"
                && (c.kept.as_str(), c.kept_source.as_str()) == kept
                && (c.other.as_str(), c.other_source.as_str()) == lost
        });
        if !seen {
            catalog.record_conflict(marking_id, "stage", kept, lost);
            new_conflicts += 1;
        }
    }
    catalog.marking_mut(marking_id).expect("checked above").stage = stage;
    if needs_review {
        review::enqueue(catalog, QueueName::ConflictReview, [marking_id]).map_err(|e| match e {
            review::ReviewError::Catalog(c) => c,
            other => CatalogError::InvalidMarking {
                marking_id: marking_id.to_string(),
                reason: other.to_string(),
            },
        })?;
    }
    Ok(ReconcileOutcome {
        marking_id: marking_id.to_string(),
        stage,
        decided_by: Some(winner),
        new_conflicts,
    })
}

pub fn reconcile_all(catalog: &mut Catalog) -> Result<ReconcileSummary, CatalogError> {
    let ids: Vec<(String, Stage)> = catalog.markings().map(|m| (m.marking_id.clone(), m.stage)).collect();
    let mut summary = ReconcileSummary::default();
    for (id, before) in ids {
        let out = reconcile_marking(catalog, &id)?;
        summary.markings += 1;
        summary.new_conflicts += out.new_conflicts;
        if out.stage != before {
            summary.stage_changed += 1;
        }
    }
    Ok(summary)
}
