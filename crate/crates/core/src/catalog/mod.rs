//! The marking catalog: images, markings, labels, review tasks and audit
//! records, persisted as a directory of newline-delimited JSON files plus an
//! `index.json`.
//!
//! All mutation goes through `&mut Catalog`; the service wraps it in a lock so
//! writes are serialized while readers see a consistent snapshot. Record files
//! are rewritten whole, in key order, so identical state always produces
//! identical bytes.

mod model;
mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use model::*;
pub(crate) use store::write_atomic;

use crate::formats::{self, LineError};
use crate::geometry::PostprocessCounters;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("unsupported schema version {found} in {path} (expected {expected})")]
    SchemaVersion {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("marking {marking_id} references unknown image {image_id}")]
    DanglingImage { marking_id: String, image_id: String },
    #[error("invalid marking {marking_id}: {reason}")]
    InvalidMarking { marking_id: String, reason: String },
    #[error("unknown seizure {0}")]
    UnknownSeizure(SeizureId),
    #[error("sampling fraction {0} outside (0, 1]")]
    InvalidFraction(f64),
    #[error("unknown marking {0}")]
    UnknownMarking(String),
    #[error("unknown image {0}")]
    UnknownImage(String),
}

/// Pipeline stages whose completion is recorded in the index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageName {
    Ingest,
    Postprocess,
    Sample,
    Propagate,
    Annotate,
    Reconcile,
    Analyze,
}

impl StageName {
    pub fn as_str(self) -> &'static str {
        match self {
            StageName::Ingest => "ingest",
            StageName::Postprocess => "postprocess",
            StageName::Sample => "sample",
            StageName::Propagate => "propagate",
            StageName::Annotate => "annotate",
            StageName::Reconcile => "reconcile",
            StageName::Analyze => "analyze",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogIndex {
    pub schema_version: u32,
    /// Logical clock; bumped for every label, task and conflict.
    pub seq: u64,
    pub image_count: usize,
    pub marking_count: usize,
    pub task_count: usize,
    pub stages: BTreeSet<StageName>,
    pub postprocess: PostprocessCounters,
}

impl Default for CatalogIndex {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seq: 0,
            image_count: 0,
            marking_count: 0,
            task_count: 0,
            stages: BTreeSet::new(),
            postprocess: PostprocessCounters::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub added: usize,
    pub already_present: usize,
    pub errors: Vec<LineError>,
    pub warnings: Vec<String>,
}

/// Conjunctive marking filter. Substring matches ignore case.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarkingFilter {
    pub seizure: Option<SeizureId>,
    pub stage: Option<Stage>,
    pub legibility: Option<Legibility>,
    pub label: Option<String>,
    pub source: Option<LabelSource>,
    pub text_substring: Option<String>,
    pub description_substring: Option<String>,
}

impl MarkingFilter {
    pub fn matches(&self, m: &Marking) -> bool {
        fn contains_ci(hay: Option<&str>, needle: &str) -> bool {
            hay.is_some_and(|h| h.to_lowercase().contains(&needle.to_lowercase()))
        }
        self.seizure.is_none_or(|s| m.seizure == s)
            && self.stage.is_none_or(|s| m.stage == s)
            && self.legibility.is_none_or(|l| m.legibility == l)
            && match (&self.label, self.source) {
                (Some(label), source) => m
                    .labels
                    .iter()
                    .any(|l| &l.label == label && source.is_none_or(|s| l.source == s)),
                (None, Some(source)) => m.labels.iter().any(|l| l.source == source),
                (None, None) => true,
            }
            && self
                .text_substring
                .as_deref()
                .is_none_or(|q| contains_ci(m.text.as_deref(), q))
            && self
                .description_substring
                .as_deref()
                .is_none_or(|q| contains_ci(m.description.as_deref(), q))
    }
}

#[derive(Debug, Clone, Default)]
pub struct Catalog {
    root: Option<PathBuf>,
    index: CatalogIndex,
    images: BTreeMap<String, ImageRecord>,
    markings: BTreeMap<String, Marking>,
    tasks: BTreeMap<String, ReviewTask>,
    conflicts: Vec<ConflictRecord>,
    audit: Vec<AuditEntry>,
}

impl Catalog {
    /// A catalog that is never written to disk.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens the catalog stored in `dir`, or an empty one bound to `dir` if
    /// nothing has been saved there yet.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, CatalogError> {
        store::load(dir.into())
    }

    /// Writes every record file and the index, each atomically. No-op for
    /// in-memory catalogs.
    pub fn save(&mut self) -> Result<(), CatalogError> {
        self.index.image_count = self.images.len();
        self.index.marking_count = self.markings.len();
        self.index.task_count = self.tasks.len();
        match &self.root {
            Some(root) => store::save(root, self),
            None => Ok(()),
        }
    }

    /// Binds the catalog to `dir` and saves it there.
    pub fn save_to(&mut self, dir: impl Into<PathBuf>) -> Result<(), CatalogError> {
        self.root = Some(dir.into());
        self.save()
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn index(&self) -> &CatalogIndex {
        &self.index
    }

    /// Advances and returns the logical clock.
    pub fn tick(&mut self) -> u64 {
        self.index.seq += 1;
        self.index.seq
    }

    pub fn mark_stage(&mut self, stage: StageName) {
        self.index.stages.insert(stage);
    }

    pub fn stage_done(&self, stage: StageName) -> bool {
        self.index.stages.contains(&stage)
    }

    pub fn set_postprocess_counters(&mut self, counters: PostprocessCounters) {
        self.index.postprocess = counters;
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageRecord> {
        self.images.values()
    }

    pub fn image(&self, image_id: &str) -> Option<&ImageRecord> {
        self.images.get(image_id)
    }

    pub fn markings(&self) -> impl Iterator<Item = &Marking> {
        self.markings.values()
    }

    pub fn marking(&self, marking_id: &str) -> Option<&Marking> {
        self.markings.get(marking_id)
    }

    pub fn marking_mut(&mut self, marking_id: &str) -> Option<&mut Marking> {
        self.markings.get_mut(marking_id)
    }

    pub fn seizures(&self) -> BTreeSet<SeizureId> {
        self.images.values().map(|i| i.seizure).collect()
    }

    pub fn tasks(&self) -> impl Iterator<Item = &ReviewTask> {
        self.tasks.values()
    }

    pub fn task(&self, task_id: &str) -> Option<&ReviewTask> {
        self.tasks.get(task_id)
    }

    pub(crate) fn task_mut(&mut self, task_id: &str) -> Option<&mut ReviewTask> {
        self.tasks.get_mut(task_id)
    }

    pub(crate) fn insert_task(&mut self, task: ReviewTask) {
        self.tasks.insert(task.task_id.clone(), task);
    }

    pub fn conflicts(&self) -> &[ConflictRecord] {
        &self.conflicts
    }

    pub fn record_conflict(
        &mut self,
        marking_id: &str,
        field: &str,
        kept: (&str, &str),
        other: (&str, &str),
    ) -> &ConflictRecord {
        let seq = self.tick();
        self.conflicts.push(ConflictRecord {
            schema_version: SCHEMA_VERSION,
            seq,
            marking_id: marking_id.to_string(),
            field: field.to_string(),
            kept: kept.0.to_string(),
            kept_source: kept.1.to_string(),
            other: other.0.to_string(),
            other_source: other.1.to_string(),
        });
        self.conflicts.last().expect("just pushed")
    }

    pub fn audit(&self) -> &[AuditEntry] {
        &self.audit
    }

    pub fn append_audit(&mut self, entries: impl IntoIterator<Item = AuditEntry>) {
        self.audit.extend(entries);
    }

    /// Adds the manifest's images. Existing image ids are left untouched, so
    /// re-ingesting a manifest adds nothing. Bad lines are reported and
    /// skipped; image files that cannot be found under `base_dir` are added
    /// with a warning.
    pub fn ingest_images(&mut self, manifest: &str, base_dir: Option<&Path>) -> IngestReport {
        let parsed = formats::parse_manifest(manifest);
        let mut report = IngestReport {
            errors: parsed.errors,
            ..Default::default()
        };
        for entry in parsed.records {
            if let Some(existing) = self.images.get(&entry.image_id) {
                if existing.seizure != entry.seizure
                    || existing.uri != entry.path
                    || (existing.width_px, existing.height_px) != (entry.width, entry.height)
                {
                    report.warnings.push(format!(
                        "line {}: image {} already ingested with different attributes; keeping the original",
                        entry.line, entry.image_id
                    ));
                }
                report.already_present += 1;
                continue;
            }
            if let Some(base) = base_dir {
                let path = base.join(&entry.path);
                if std::fs::File::open(&path).is_err() {
                    report.warnings.push(format!(
                        "line {}: image file {} is not readable",
                        entry.line,
                        path.display()
                    ));
                }
            }
            self.images.insert(
                entry.image_id.clone(),
                ImageRecord {
                    schema_version: SCHEMA_VERSION,
                    image_id: entry.image_id,
                    seizure: entry.seizure,
                    uri: entry.path,
                    width_px: entry.width,
                    height_px: entry.height,
                },
            );
            report.added += 1;
        }
        report
    }

    fn check_marking(&self, m: &Marking) -> Result<(), CatalogError> {
        let image = self
            .images
            .get(&m.image_id)
            .ok_or_else(|| CatalogError::DanglingImage {
                marking_id: m.marking_id.clone(),
                image_id: m.image_id.clone(),
            })?;
        let invalid = |reason: String| CatalogError::InvalidMarking {
            marking_id: m.marking_id.clone(),
            reason,
        };
        if m.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!("schema version {}", m.schema_version)));
        }
        if m.seizure != image.seizure {
            return Err(invalid(format!(
                "seizure {} differs from image seizure {}",
                m.seizure, image.seizure
            )));
        }
        if !m.bbox.within_image(image.width_px, image.height_px) {
            return Err(invalid(format!(
                "bbox outside {}x{} image",
                image.width_px, image.height_px
            )));
        }
        m.validate().map_err(invalid)
    }

    /// Inserts or replaces markings. The whole batch is validated before
    /// anything is written. Replacing a marking keeps every label it already
    /// held; labels on the incoming record are appended.
    pub fn upsert_markings(&mut self, markings: Vec<Marking>) -> Result<usize, CatalogError> {
        for m in &markings {
            self.check_marking(m)?;
        }
        let written = markings.len();
        for mut m in markings {
            if let Some(old) = self.markings.remove(&m.marking_id) {
                let incoming = std::mem::replace(&mut m.labels, old.labels);
                for l in incoming {
                    m.push_label(l);
                }
            }
            self.markings.insert(m.marking_id.clone(), m);
        }
        Ok(written)
    }

    /// Appends a label to a marking. Returns `Ok(false)` if the marking
    /// already holds that (label, source) pair.
    pub fn add_label(
        &mut self,
        marking_id: &str,
        label: &str,
        source: LabelSource,
        probability: f64,
    ) -> Result<bool, CatalogError> {
        if !self.markings.contains_key(marking_id) {
            return Err(CatalogError::UnknownMarking(marking_id.to_string()));
        }
        let created_at = self.tick();
        let assignment = LabelAssignment {
            label: label.to_string(),
            source,
            probability,
            created_at,
        };
        assignment
            .validate()
            .map_err(|reason| CatalogError::InvalidMarking {
                marking_id: marking_id.to_string(),
                reason,
            })?;
        let marking = self.markings.get_mut(marking_id).expect("checked above");
        Ok(marking.push_label(assignment))
    }

    /// Number of markings to review for a population of `population`:
    /// `max(ceil(fraction * population), minimum)`, capped at the population.
    pub fn review_sample_size(population: usize, fraction: f64, minimum: usize) -> usize {
        // guard against 0.1 * 900 = 90.00000000000001 rounding up
        let scaled = (fraction * population as f64 - 1e-9).ceil().max(0.0) as usize;
        scaled.max(minimum).min(population)
    }

    /// Uniform sample of a seizure's markings, without replacement. The
    /// result is sorted and depends only on the catalog contents and `seed`.
    pub fn sample_for_review(
        &self,
        seizure: SeizureId,
        fraction: f64,
        minimum: usize,
        seed: u64,
    ) -> Result<Vec<String>, CatalogError> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(CatalogError::InvalidFraction(fraction));
        }
        if !self.images.values().any(|i| i.seizure == seizure) {
            return Err(CatalogError::UnknownSeizure(seizure));
        }
        let population: Vec<&String> = self
            .markings
            .values()
            .filter(|m| m.seizure == seizure)
            .map(|m| &m.marking_id)
            .collect();
        let n = Self::review_sample_size(population.len(), fraction, minimum);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ u64::from(seizure.get()).rotate_left(32));
        let mut picked: Vec<String> = rand::seq::index::sample(&mut rng, population.len(), n)
            .into_iter()
            .map(|i| population[i].clone())
            .collect();
        picked.sort();
        Ok(picked)
    }

    pub fn query(&self, filter: &MarkingFilter) -> Vec<&Marking> {
        self.markings.values().filter(|m| filter.matches(m)).collect()
    }

    /// Every marking references an existing image.
    pub fn check_integrity(&self) -> Result<(), CatalogError> {
        for m in self.markings.values() {
            self.check_marking(m)?;
        }
        for t in self.tasks.values() {
            if !self.markings.contains_key(&t.marking_id) {
                return Err(CatalogError::UnknownMarking(t.marking_id.clone()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;

    const MANIFEST: &str = "a\t1\ta.png\t100\t80\nb\t1\tb.png\t100\t80\nc\t2\tc.png\t50\t50\n";

    fn catalog() -> Catalog {
        let mut c = Catalog::in_memory();
        c.ingest_images(MANIFEST, None);
        c
    }

    fn marking(c: &Catalog, image: &str, x: f64) -> Marking {
        let img = c.image(image).unwrap();
        Marking::extracted(img, BoundingBox::new(x, 0.0, x + 5.0, 5.0).unwrap(), 0.9, 1)
    }

    #[test]
    fn ingest_counts_and_idempotence() {
        let mut c = Catalog::in_memory();
        let r = c.ingest_images(MANIFEST, None);
        assert_eq!((r.added, r.errors.len()), (3, 0));
        let before = c.images.clone();
        let r = c.ingest_images(MANIFEST, None);
        assert_eq!((r.added, r.already_present), (0, 3));
        assert_eq!(c.images, before);
    }

    #[test]
    fn ingest_skips_malformed_lines() {
        let mut c = Catalog::in_memory();
        let text = "a\t1\ta.png\t1\t1\nb\t1\tb.png\t1\t1\nc\t1\tc.png\t1\nd\t1\td.png\t1\t1\ne\t1\te.png\t1\t1\n";
        let r = c.ingest_images(text, None);
        assert_eq!(r.added, 4);
        assert_eq!(r.errors.len(), 1);
        assert_eq!(r.errors[0].line, 3);
    }

    #[test]
    fn ingest_warns_on_unreadable_paths() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.png"), b"x").unwrap();
        let mut c = Catalog::in_memory();
        let r = c.ingest_images("a\t1\ta.png\t1\t1\nb\t1\tmissing.png\t1\t1\n", Some(dir.path()));
        assert_eq!(r.added, 2);
        assert_eq!(r.warnings.len(), 1);
        assert!(r.warnings[0].contains("missing.png"));
    }

    #[test]
    fn upsert_preserves_labels() {
        let mut c = catalog();
        let m = marking(&c, "a", 0.0);
        let id = m.marking_id.clone();
        assert_eq!(c.upsert_markings(vec![m.clone()]).unwrap(), 1);
        c.add_label(&id, "BB", LabelSource::Human, 1.0).unwrap();
        let mut updated = m;
        updated.description = Some("block letters".into());
        assert_eq!(c.upsert_markings(vec![updated]).unwrap(), 1);
        let stored = c.marking(&id).unwrap();
        assert_eq!(stored.description.as_deref(), Some("block letters"));
        assert!(stored.has_label("BB", LabelSource::Human));
    }

    #[test]
    fn upsert_rejects_dangling_images() {
        let mut c = catalog();
        let mut m = marking(&c, "a", 0.0);
        m.image_id = "nope".into();
        let err = c.upsert_markings(vec![m]).unwrap_err();
        assert!(err.to_string().contains("nope"));
        assert_eq!(c.markings().count(), 0);
    }

    #[test]
    fn upsert_rejects_boxes_outside_image() {
        let mut c = catalog();
        let img = c.image("c").unwrap().clone();
        let m = Marking::extracted(&img, BoundingBox::new(40.0, 40.0, 60.0, 45.0).unwrap(), 0.5, 1);
        assert!(matches!(
            c.upsert_markings(vec![m]),
            Err(CatalogError::InvalidMarking { .. })
        ));
    }

    #[test]
    fn labels_are_unique_per_source() {
        let mut c = catalog();
        let m = marking(&c, "a", 0.0);
        let id = m.marking_id.clone();
        c.upsert_markings(vec![m]).unwrap();
        assert!(c.add_label(&id, "BB", LabelSource::Propagated, 0.95).unwrap());
        assert!(!c.add_label(&id, "BB", LabelSource::Propagated, 0.97).unwrap());
        assert!(c.add_label(&id, "BB", LabelSource::Human, 1.0).unwrap());
        assert_eq!(c.marking(&id).unwrap().labels.len(), 2);
    }

    #[test]
    fn sample_sizes() {
        assert_eq!(Catalog::review_sample_size(5795, 0.10, 100), 580);
        assert_eq!(Catalog::review_sample_size(50, 0.10, 100), 50);
        assert_eq!(Catalog::review_sample_size(900, 0.10, 100), 100);
        assert_eq!(Catalog::review_sample_size(1000, 0.10, 100), 100);
        assert_eq!(Catalog::review_sample_size(1001, 0.10, 100), 101);
    }

    #[test]
    fn sampling_is_seeded() {
        let mut c = catalog();
        let ms: Vec<Marking> = (0..30).map(|i| marking(&c, "a", f64::from(i) * 2.0)).collect();
        c.upsert_markings(ms).unwrap();
        let s1 = SeizureId::new(1).unwrap();
        let a = c.sample_for_review(s1, 0.1, 5, 7).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a, c.sample_for_review(s1, 0.1, 5, 7).unwrap());
        assert_ne!(a, c.sample_for_review(s1, 0.1, 5, 8).unwrap());
        assert!(matches!(
            c.sample_for_review(SeizureId::new(9).unwrap(), 0.1, 5, 7),
            Err(CatalogError::UnknownSeizure(_))
        ));
        assert!(matches!(
            c.sample_for_review(s1, 0.0, 5, 7),
            Err(CatalogError::InvalidFraction(_))
        ));
    }

    #[test]
    fn query_filters_conjunctively() {
        let mut c = catalog();
        let mut ms = Vec::new();
        for (i, text) in ["BB", "bb", "xBBx", "B8"].iter().enumerate() {
            let mut m = marking(&c, "a", i as f64 * 6.0);
            m.kind = MarkingKind::Textual;
            m.text = Some(text.to_string());
            m.stage = if i == 0 { Stage::PostSeizure } else { Stage::PreSeizure };
            ms.push(m);
        }
        c.upsert_markings(ms).unwrap();
        let bb = MarkingFilter {
            text_substring: Some("BB".into()),
            ..Default::default()
        };
        assert_eq!(c.query(&bb).len(), 3);
        assert_eq!(c.query(&MarkingFilter::default()).len(), 4);
        let post = MarkingFilter {
            stage: Some(Stage::PostSeizure),
            ..bb
        };
        assert_eq!(c.query(&post).len(), 1);
    }
}
