//! Human review queues: sampled initial labeling, illegible adjudication and
//! stage-conflict review.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod api;

use crate::annotate::reconcile_marking;
use crate::catalog::{
    Catalog, CatalogError, LabelSource, Legibility, MarkingKind, QueueName, ReviewTask, SeizureId,
    Stage, TaskStatus, SCHEMA_VERSION,
};

pub const ILLEGIBLE: &str = "illegible";
pub const LEGIBLE: &str = "legible";
pub const SYMBOLIC: &str = "symbolic";

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("task {task_id} is already {status:?}")]
    TaskClosed { task_id: String, status: TaskStatus },
    #[error("label {label:?} is not accepted by queue {queue}; expected one of {allowed:?}")]
    InvalidLabel {
        queue: QueueName,
        label: String,
        allowed: Vec<String>,
    },
    #[error("label {0:?} requires corrected text")]
    MissingText(String),
    #[error("reviewer must be named")]
    MissingReviewer,
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

pub fn task_id(queue: QueueName, marking_id: &str) -> String {
    format!("{}-{marking_id}", queue.as_str())
}

/// Opens a task per marking unless that (marking, queue) pair already has
/// one in any state. Returns how many were created.
pub fn enqueue<'a>(
    catalog: &mut Catalog,
    queue: QueueName,
    marking_ids: impl IntoIterator<Item = &'a str>,
) -> Result<usize, ReviewError> {
    let mut created = 0;
    for id in marking_ids {
        if catalog.marking(id).is_none() {
            return Err(CatalogError::UnknownMarking(id.to_string()).into());
        }
        let tid = task_id(queue, id);
        if catalog.task(&tid).is_some() {
            continue;
        }
        let created_seq = catalog.tick();
        catalog.insert_task(ReviewTask {
            schema_version: SCHEMA_VERSION,
            task_id: tid,
            marking_id: id.to_string(),
            queue,
            status: TaskStatus::Open,
            assigned_label: None,
            corrected_text: None,
            reviewer: None,
            created_seq,
            decided_at: None,
        });
        created += 1;
    }
    Ok(created)
}

/// Open tasks in creation order, optionally restricted to one seizure.
pub fn open_tasks(
    catalog: &Catalog,
    queue: QueueName,
    seizure: Option<SeizureId>,
    limit: Option<usize>,
) -> Vec<&ReviewTask> {
    let mut tasks: Vec<&ReviewTask> = catalog
        .tasks()
        .filter(|t| t.queue == queue && t.status == TaskStatus::Open)
        .filter(|t| match seizure {
            Some(s) => catalog.marking(&t.marking_id).is_some_and(|m| m.seizure == s),
            None => true,
        })
        .collect();
    tasks.sort_by(|a, b| (a.created_seq, &a.task_id).cmp(&(b.created_seq, &b.task_id)));
    tasks.truncate(limit.unwrap_or(usize::MAX));
    tasks
}

pub fn open_count(catalog: &Catalog, queue: QueueName) -> usize {
    catalog
        .tasks()
        .filter(|t| t.queue == queue && t.status == TaskStatus::Open)
        .count()
}

/// Labels a queue accepts, or `None` for free text.
pub fn allowed_labels(queue: QueueName) -> Option<Vec<&'static str>> {
    match queue {
        QueueName::InitialLabeling => None,
        QueueName::IllegibleReview => Some(vec![ILLEGIBLE, LEGIBLE, SYMBOLIC]),
        QueueName::ConflictReview => Some(vec![
            Stage::PreSeizure.as_label(),
            Stage::PostSeizure.as_label(),
        ]),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    /// Human labels already in use, with how often each was given.
    pub labels: BTreeMap<String, usize>,
    pub constrained: BTreeMap<String, Vec<String>>,
}

pub fn vocabulary(catalog: &Catalog) -> Vocabulary {
    let mut labels = BTreeMap::new();
    for m in catalog.markings() {
        for l in m.labels_from(LabelSource::Human) {
            *labels.entry(l.label.clone()).or_default() += 1;
        }
    }
    let constrained = QueueName::ALL
        .into_iter()
        .filter_map(|q| {
            allowed_labels(q).map(|a| (q.as_str().to_string(), a.into_iter().map(String::from).collect()))
        })
        .collect();
    Vocabulary { labels, constrained }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct LabelSubmission {
    pub task_id: String,
    pub label: String,
    pub reviewer: String,
    #[serde(default)]
    pub text: Option<String>,
}

fn open_task<'a>(catalog: &'a Catalog, task_id: &str) -> Result<&'a ReviewTask, ReviewError> {
    let task = catalog
        .task(task_id)
        .ok_or_else(|| ReviewError::UnknownTask(task_id.to_string()))?;
    if task.status != TaskStatus::Open {
        return Err(ReviewError::TaskClosed {
            task_id: task_id.to_string(),
            status: task.status,
        });
    }
    Ok(task)
}

/// Applies a reviewer's decision and closes the task. Nothing is modified if
/// the submission is rejected.
pub fn submit_label(
    catalog: &mut Catalog,
    submission: &LabelSubmission,
    now: DateTime<Utc>,
) -> Result<ReviewTask, ReviewError> {
    let task = open_task(catalog, &submission.task_id)?.clone();
    let label = submission.label.trim();
    let reviewer = submission.reviewer.trim();
    if reviewer.is_empty() {
        return Err(ReviewError::MissingReviewer);
    }
    if let Some(allowed) = allowed_labels(task.queue) {
        if !allowed.contains(&label) {
            return Err(ReviewError::InvalidLabel {
                queue: task.queue,
                label: label.to_string(),
                allowed: allowed.into_iter().map(String::from).collect(),
            });
        }
    } else if label.is_empty() {
        return Err(ReviewError::InvalidLabel {
            queue: task.queue,
            label: String::new(),
            allowed: Vec::new(),
        });
    }
    let text = submission
        .text
        .as_deref()
        .map(str::trim)
        .filter(|t| !t.is_empty());
    if task.queue == QueueName::IllegibleReview && label != ILLEGIBLE && text.is_none() {
        return Err(ReviewError::MissingText(label.to_string()));
    }

    let mid = task.marking_id.as_str();
    match task.queue {
        QueueName::InitialLabeling | QueueName::ConflictReview => {
            catalog.add_label(mid, label, LabelSource::Human, 1.0)?;
            reconcile_marking(catalog, mid)?;
        }
        QueueName::IllegibleReview if label == ILLEGIBLE => {
            catalog.add_label(mid, ILLEGIBLE, LabelSource::Human, 1.0)?;
            let m = catalog.marking_mut(mid).expect("task marking exists");
            m.legibility = Legibility::Illegible;
        }
        QueueName::IllegibleReview => {
            let text = text.expect("checked above").to_string();
            let m = catalog.marking_mut(mid).expect("task marking exists");
            let previous = m.legibility;
            m.legibility = Legibility::Legible;
            m.annotation = crate::catalog::AnnotationStatus::Annotated;
            if label == SYMBOLIC {
                m.kind = MarkingKind::Symbolic;
                m.text = None;
                m.symbol_name = Some(text);
            } else {
                m.kind = MarkingKind::Textual;
                m.symbol_name = None;
                m.text = Some(text);
            }
            if previous == Legibility::Illegible {
                catalog.record_conflict(mid, "legibility", (LEGIBLE, "human"), (ILLEGIBLE, "vlm"));
            }
        }
    }

    let t = catalog.task_mut(&task.task_id).expect("task exists");
    t.status = TaskStatus::Done;
    t.assigned_label = Some(label.to_string());
    t.corrected_text = text.map(String::from);
    t.reviewer = Some(reviewer.to_string());
    t.decided_at = Some(now);
    Ok(t.clone())
}

pub fn skip_task(
    catalog: &mut Catalog,
    task_id: &str,
    reviewer: &str,
    now: DateTime<Utc>,
) -> Result<ReviewTask, ReviewError> {
    open_task(catalog, task_id)?;
    if reviewer.trim().is_empty() {
        return Err(ReviewError::MissingReviewer);
    }
    let t = catalog.task_mut(task_id).expect("checked above");
    t.status = TaskStatus::Skipped;
    t.reviewer = Some(reviewer.trim().to_string());
    t.decided_at = Some(now);
    Ok(t.clone())
}

/// Human labels from completed initial-labeling tasks: the training set for
/// propagation.
pub fn reviewed_labels(catalog: &Catalog, seizure: Option<SeizureId>) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = catalog
        .tasks()
        .filter(|t| t.queue == QueueName::InitialLabeling && t.status == TaskStatus::Done)
        .filter(|t| match seizure {
            Some(s) => catalog.marking(&t.marking_id).is_some_and(|m| m.seizure == s),
            None => true,
        })
        .filter_map(|t| Some((t.marking_id.clone(), t.assigned_label.clone()?)))
        .collect();
    out.sort();
    out
}


#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImportReport {
    pub applied: usize,
    /// Decisions for tasks that are closed or were never opened.
    pub not_open: usize,
    pub errors: Vec<String>,
}

/// Applies reviewer decisions from a file (see
/// [`formats::parse_decisions`](crate::formats::parse_decisions)) to open
/// tasks. Re-importing the same file changes nothing.
pub fn import_decisions(catalog: &mut Catalog, text: &str, reviewer: &str, now: DateTime<Utc>) -> ImportReport {
    let parsed = crate::formats::parse_decisions(text);
    let mut report = ImportReport {
        errors: parsed.errors.iter().map(|e| e.to_string()).collect(),
        ..Default::default()
    };
    for d in parsed.records {
        let id = task_id(d.queue, &d.marking_id);
        let sub = LabelSubmission {
            task_id: id.clone(),
            label: d.label,
            reviewer: reviewer.to_string(),
            text: d.text,
        };
        match submit_label(catalog, &sub, now) {
            Ok(_) => report.applied += 1,
            Err(ReviewError::UnknownTask(_) | ReviewError::TaskClosed { .. }) => report.not_open += 1,
            Err(e) => report.errors.push(format!("{id}: {e}")),
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Marking;
    use crate::geometry::BoundingBox;

    fn now() -> DateTime<Utc> {
        DateTime::from_timestamp(1_700_000_000, 0).unwrap()
    }

    fn catalog(n: usize) -> (Catalog, Vec<String>) {
        let mut c = Catalog::in_memory();
        c.ingest_images("a\t5\ta.png\t500\t500\nb\t2\tb.png\t500\t500\n", None);
        let mut ids = Vec::new();
        for i in 0..n {
            let img = c.image(if i % 2 == 0 { "a" } else { "b" }).unwrap().clone();
            let x = i as f64 * 10.0;
            let m = Marking::extracted(&img, BoundingBox::new(x, 0.0, x + 5.0, 5.0).unwrap(), 0.9, 1);
            ids.push(m.marking_id.clone());
            c.upsert_markings(vec![m]).unwrap();
        }
        (c, ids)
    }

    fn submit(task_id: &str, label: &str, text: Option<&str>) -> LabelSubmission {
        LabelSubmission {
            task_id: task_id.into(),
            label: label.into(),
            reviewer: "rh".into(),
            text: text.map(String::from),
        }
    }

    #[test]
    fn enqueue_is_idempotent_and_ordered() {
        let (mut c, ids) = catalog(25);
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        assert_eq!(enqueue(&mut c, QueueName::InitialLabeling, refs.clone()).unwrap(), 25);
        assert_eq!(enqueue(&mut c, QueueName::InitialLabeling, refs).unwrap(), 0);
        let first10 = open_tasks(&c, QueueName::InitialLabeling, None, Some(10));
        assert_eq!(first10.len(), 10);
        let got: Vec<&str> = first10.iter().map(|t| t.marking_id.as_str()).collect();
        assert_eq!(got, ids[..10].iter().map(String::as_str).collect::<Vec<_>>());
        assert!(open_tasks(&c, QueueName::IllegibleReview, None, None).is_empty());
        let s5 = open_tasks(&c, QueueName::InitialLabeling, SeizureId::new(5), None);
        assert_eq!(s5.len(), 13);
    }

    #[test]
    fn submission_writes_human_label_and_rejects_double_submit() {
        let (mut c, ids) = catalog(1);
        enqueue(&mut c, QueueName::InitialLabeling, [ids[0].as_str()]).unwrap();
        let tid = task_id(QueueName::InitialLabeling, &ids[0]);
        let done = submit_label(&mut c, &submit(&tid, "post_seizure", None), now()).unwrap();
        assert_eq!(done.status, TaskStatus::Done);
        assert_eq!(done.decided_at, Some(now()));
        let m = c.marking(&ids[0]).unwrap();
        assert!(m.has_label("post_seizure", LabelSource::Human));
        assert_eq!(m.stage, Stage::PostSeizure);

        let before = c.marking(&ids[0]).unwrap().clone();
        let err = submit_label(&mut c, &submit(&tid, "BB", None), now()).unwrap_err();
        assert!(matches!(err, ReviewError::TaskClosed { .. }));
        assert_eq!(c.marking(&ids[0]).unwrap(), &before);
        assert_eq!(reviewed_labels(&c, None), vec![(ids[0].clone(), "post_seizure".into())]);
    }

    #[test]
    fn illegible_adjudication_with_text_makes_marking_legible() {
        let (mut c, ids) = catalog(1);
        {
            let m = c.marking_mut(&ids[0]).unwrap();
            m.legibility = Legibility::Illegible;
            m.annotation = crate::catalog::AnnotationStatus::Illegible;
        }
        enqueue(&mut c, QueueName::IllegibleReview, [ids[0].as_str()]).unwrap();
        let tid = task_id(QueueName::IllegibleReview, &ids[0]);
        assert!(matches!(
            submit_label(&mut c, &submit(&tid, "BB", None), now()),
            Err(ReviewError::InvalidLabel { .. })
        ));
        assert!(matches!(
            submit_label(&mut c, &submit(&tid, LEGIBLE, None), now()),
            Err(ReviewError::MissingText(_))
        ));
        submit_label(&mut c, &submit(&tid, LEGIBLE, Some("BB")), now()).unwrap();
        let m = c.marking(&ids[0]).unwrap();
        assert_eq!(m.legibility, Legibility::Legible);
        assert_eq!(m.kind, MarkingKind::Textual);
        assert_eq!(m.text.as_deref(), Some("BB"));
        assert_eq!(c.conflicts().len(), 1);
        assert_eq!(c.conflicts()[0].field, "legibility");
    }

    #[test]
    fn confirming_illegible_keeps_it() {
        let (mut c, ids) = catalog(1);
        c.marking_mut(&ids[0]).unwrap().legibility = Legibility::Illegible;
        enqueue(&mut c, QueueName::IllegibleReview, [ids[0].as_str()]).unwrap();
        let tid = task_id(QueueName::IllegibleReview, &ids[0]);
        submit_label(&mut c, &submit(&tid, ILLEGIBLE, None), now()).unwrap();
        assert_eq!(c.marking(&ids[0]).unwrap().legibility, Legibility::Illegible);
        assert!(c.conflicts().is_empty());
    }

    #[test]
    fn skip_closes_without_labels() {
        let (mut c, ids) = catalog(2);
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        enqueue(&mut c, QueueName::InitialLabeling, refs).unwrap();
        let tid = task_id(QueueName::InitialLabeling, &ids[0]);
        skip_task(&mut c, &tid, "wf", now()).unwrap();
        assert_eq!(open_count(&c, QueueName::InitialLabeling), 1);
        assert!(c.marking(&ids[0]).unwrap().labels.is_empty());
        assert!(matches!(skip_task(&mut c, &tid, "wf", now()), Err(ReviewError::TaskClosed { .. })));
        assert!(reviewed_labels(&c, None).is_empty());
    }

    #[test]
    fn vocabulary_counts_human_labels() {
        let (mut c, ids) = catalog(3);
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        enqueue(&mut c, QueueName::InitialLabeling, refs).unwrap();
        for (id, label) in ids.iter().zip(["BB", "BB", "XO"]) {
            let tid = task_id(QueueName::InitialLabeling, id);
            submit_label(&mut c, &submit(&tid, label, None), now()).unwrap();
        }
        let v = vocabulary(&c);
        assert_eq!(v.labels["BB"], 2);
        assert_eq!(v.labels["XO"], 1);
        assert_eq!(v.constrained["conflict_review"], vec!["pre_seizure", "post_seizure"]);
    }
}
