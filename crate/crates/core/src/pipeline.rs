//! Stage runner: ingest → postprocess → sample → (human review gate) →
//! propagate → annotate → reconcile → analyze.
//!
//! Each stage is safe to re-run. Reports go to the reports directory as JSON
//! with the active configuration in a header, plus plain-text tables for the
//! analysis results.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, render_links_table, render_occurrence_table};
use crate::annotate::{self, AnnotationBackend, BatchSummary, FileCrops, HttpBackend, MockBackend, PromptTemplates};
use crate::catalog::{write_atomic, Catalog, CatalogError, IngestReport, Marking, QueueName, SeizureId, StageName};
use crate::config::{BackendKind, ConfigError, PipelineConfig};
use crate::eval::{evaluate_corpus, CorpusEval};
use crate::formats::{self, LineError};
use crate::geometry::{postprocess_image, Detection, PostprocessCounters};
use crate::propagation::{self, PropagationError, PropagationReport};
use crate::review;

/// Broad failure classes; the CLI maps each to its own exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureClass {
    Config,
    Data,
    Runtime,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot read {path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("stage {stage} cannot run yet: {hint}")]
    Prerequisite { stage: &'static str, hint: String },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Propagation(PropagationError),
    #[error("annotation backend: {0}")]
    Backend(String),
    #[error("cannot write report {path}: {message}")]
    Report { path: PathBuf, message: String },
}

impl PipelineError {
    pub fn class(&self) -> FailureClass {
        match self {
            PipelineError::Config(_) => FailureClass::Config,
            PipelineError::Input { .. } | PipelineError::Prerequisite { .. } => FailureClass::Data,
            PipelineError::Catalog(CatalogError::Corrupt { .. } | CatalogError::SchemaVersion { .. }) => FailureClass::Data,
            PipelineError::Propagation(
                PropagationError::NoReviewedLabels
                | PropagationError::DimensionMismatch { .. }
                | PropagationError::NonFinite,
            ) => FailureClass::Data,
            _ => FailureClass::Runtime,
        }
    }
}

impl From<PropagationError> for PipelineError {
    fn from(e: PropagationError) -> Self {
        match e {
            PropagationError::NoReviewedLabels => PipelineError::Prerequisite {
                stage: "propagate",
                hint: "no completed initial_labeling tasks; review the sample first (`tuskmarks serve`)".into(),
            },
            other => PipelineError::Propagation(other),
        }
    }
}

fn read_input(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|e| PipelineError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    stage: &'a str,
    config: &'a PipelineConfig,
    report: &'a T,
}

/// One line naming every threshold in force, for text report headers.
pub fn threshold_header(cfg: &PipelineConfig) -> String {
    let pp = &cfg.postprocess;
    let p = &cfg.propagation;
    let a = &cfg.analysis;
    format!(
        "# seed={} dedup_iou={} exterior_coverage={} merge_size=[{},{}] merge_gap={} merge_collinearity={} \
         eval_coverage={} sample_fraction={} sample_min={} variance_target={} min_label_share={} \
         assign_threshold={} svm_c={} recurrence={} frequency_threshold={} confusables={}\n",
        cfg.seed.map_or("unset".to_string(), |s| s.to_string()),
        pp.dedup_iou,
        pp.exterior_coverage,
        pp.merge.min_size_ratio,
        pp.merge.max_size_ratio,
        pp.merge.gap_factor,
        pp.merge.collinearity_factor,
        cfg.evaluation.coverage_threshold,
        cfg.sampling.fraction,
        cfg.sampling.minimum,
        p.variance_target,
        p.min_label_share,
        p.assign_threshold,
        p.c,
        a.recurrence_threshold,
        a.frequency_threshold,
        a.confusables,
    )
}

pub struct Reports {
    dir: PathBuf,
}

impl Reports {
    pub fn new(cfg: &PipelineConfig) -> Self {
        Self {
            dir: cfg.resolve(&cfg.paths.reports),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let path = self.dir.join(name);
        let fail = |message: String| PipelineError::Report {
            path: path.clone(),
            message,
        };
        std::fs::create_dir_all(&self.dir).map_err(|e| fail(e.to_string()))?;
        write_atomic(&path, bytes).map_err(|e| fail(e.to_string()))
    }

    pub fn json<T: Serialize>(&self, cfg: &PipelineConfig, stage: &str, report: &T) -> Result<(), PipelineError> {
        let mut bytes = serde_json::to_vec_pretty(&Envelope {
            stage,
            config: cfg,
            report,
        })
        .expect("reports serialize");
        bytes.push(b'\n');
        self.write_bytes(&format!("{stage}.json"), &bytes)
    }

    pub fn text(&self, cfg: &PipelineConfig, name: &str, body: &str) -> Result<(), PipelineError> {
        self.write_bytes(name, format!("{}{body}", threshold_header(cfg)).as_bytes())
    }
}

pub fn ingest(cfg: &PipelineConfig, catalog: &mut Catalog) -> Result<IngestReport, PipelineError> {
    let manifest = read_input(&cfg.resolve(&cfg.paths.manifest))?;
    let report = catalog.ingest_images(&manifest, Some(&cfg.resolve(&cfg.paths.images)));
    for w in &report.warnings {
        tracing::warn!(stage = "ingest", "{w}");
    }
    catalog.mark_stage(StageName::Ingest);
    Reports::new(cfg).json(cfg, "ingest", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PostprocessReport {
    pub images_with_detections: usize,
    pub markings: usize,
    pub counters: PostprocessCounters,
    pub per_image: BTreeMap<String, PostprocessCounters>,
    pub parse_errors: Vec<LineError>,
    pub unknown_images: Vec<String>,
}

pub fn postprocess(cfg: &PipelineConfig, catalog: &mut Catalog) -> Result<PostprocessReport, PipelineError> {
    if !catalog.stage_done(StageName::Ingest) {
        return Err(PipelineError::Prerequisite {
            stage: "postprocess",
            hint: "run `ingest` first".into(),
        });
    }
    let parsed = formats::parse_detections(&read_input(&cfg.resolve(&cfg.paths.detections))?);
    let mut by_image: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for d in parsed.records {
        by_image.entry(d.image_id.clone()).or_default().push(d);
    }
    let mut report = PostprocessReport {
        parse_errors: parsed.errors,
        ..Default::default()
    };
    let jobs: Vec<(&crate::catalog::ImageRecord, &Vec<Detection>)> = by_image
        .iter()
        .filter_map(|(id, dets)| match catalog.image(id) {
            Some(img) => Some((img, dets)),
            None => {
                report.unknown_images.push(id.clone());
                None
            }
        })
        .collect();
    let results: Vec<(String, Vec<Marking>, PostprocessCounters)> = jobs
        .par_iter()
        .map(|(img, dets)| {
            let out = postprocess_image(dets, img.width_px, img.height_px, &cfg.postprocess);
            let ms = out
                .extractions
                .iter()
                .map(|e| Marking::extracted(img, e.bbox, e.confidence, e.member_count))
                .collect();
            (img.image_id.clone(), ms, out.counters)
        })
        .collect();
    let mut markings = Vec::new();
    for (id, ms, counters) in results {
        report.counters += counters;
        report.per_image.insert(id, counters);
        report.markings += ms.len();
        markings.extend(ms);
    }
    report.images_with_detections = report.per_image.len();
    catalog.upsert_markings(markings)?;
    catalog.set_postprocess_counters(report.counters);
    catalog.mark_stage(StageName::Postprocess);
    Reports::new(cfg).json(cfg, "postprocess", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub seed: u64,
    pub per_seizure: BTreeMap<SeizureId, SeizureSample>,
    pub tasks_created: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeizureSample {
    pub markings: usize,
    pub sampled: usize,
}

/// Draws each seizure's review sample and opens initial-labeling tasks. A
/// catalog that has been sampled once is not sampled again.
pub fn sample(cfg: &PipelineConfig, catalog: &mut Catalog) -> Result<SampleReport, PipelineError> {
    let seed = cfg.require_seed()?;
    if !catalog.stage_done(StageName::Postprocess) {
        return Err(PipelineError::Prerequisite {
            stage: "sample",
            hint: "run `postprocess` first".into(),
        });
    }
    let mut report = SampleReport {
        seed,
        ..Default::default()
    };
    if catalog.stage_done(StageName::Sample) {
        return Ok(report);
    }
    for s in catalog.seizures() {
        let population = catalog.markings().filter(|m| m.seizure == s).count();
        let ids = catalog.sample_for_review(s, cfg.sampling.fraction, cfg.sampling.minimum, seed)?;
        report.per_seizure.insert(
            s,
            SeizureSample {
                markings: population,
                sampled: ids.len(),
            },
        );
        report.tasks_created += review::enqueue(catalog, QueueName::InitialLabeling, ids.iter().map(String::as_str))
            .map_err(|e| PipelineError::Prerequisite {
                stage: "sample",
                hint: e.to_string(),
            })?;
    }
    catalog.mark_stage(StageName::Sample);
    Reports::new(cfg).json(cfg, "sample", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateStatus {
    pub open_tasks: usize,
    pub open_by_seizure: BTreeMap<SeizureId, usize>,
    pub completed_tasks: usize,
}

impl GateStatus {
    pub fn of(catalog: &Catalog) -> Self {
        let mut open_by_seizure = BTreeMap::new();
        let mut completed_tasks = 0;
        for t in catalog.tasks().filter(|t| t.queue == QueueName::InitialLabeling) {
            match t.status {
                crate::catalog::TaskStatus::Open => {
                    if let Some(m) = catalog.marking(&t.marking_id) {
                        *open_by_seizure.entry(m.seizure).or_insert(0) += 1;
                    }
                }
                crate::catalog::TaskStatus::Done => completed_tasks += 1,
                crate::catalog::TaskStatus::Skipped => {}
            }
        }
        Self {
            open_tasks: open_by_seizure.values().sum(),
            open_by_seizure,
            completed_tasks,
        }
    }

    pub fn is_open(&self) -> bool {
        self.open_tasks == 0
    }

    pub fn instructions(&self) -> String {
        format!(
            "{} initial_labeling task(s) are waiting for review. Start the review service with \
             `tuskmarks serve`, label the sample, then run `tuskmarks pipeline` again to resume.",
            self.open_tasks
        )
    }
}

pub fn propagate(cfg: &PipelineConfig, catalog: &mut Catalog) -> Result<PropagationReport, PipelineError> {
    let seed = cfg.require_seed()?;
    if !catalog.stage_done(StageName::Sample) {
        return Err(PipelineError::Prerequisite {
            stage: "propagate",
            hint: "run `sample` and review the sampled markings first".into(),
        });
    }
    let path = cfg.resolve(&cfg.paths.embeddings);
    let (_, parsed) = formats::parse_embeddings(&read_input(&path)?).map_err(|e| PipelineError::Input {
        path: path.clone(),
        message: e.to_string(),
    })?;
    if let Some(e) = parsed.errors.first() {
        return Err(PipelineError::Input {
            path,
            message: e.to_string(),
        });
    }
    let run = propagation::run(catalog, &parsed.records, &cfg.propagation, seed)?;
    propagation::apply_assignments(catalog, &run.assignments)?;
    let models_dir = cfg.resolve(&cfg.paths.models);
    std::fs::create_dir_all(&models_dir).map_err(|e| PipelineError::Report {
        path: models_dir.clone(),
        message: e.to_string(),
    })?;
    run.models.save(&models_dir.join("propagation.json"))?;
    catalog.mark_stage(StageName::Propagate);
    Reports::new(cfg).json(cfg, "propagate", &run.report)?;
    Ok(run.report)
}

pub fn build_backend(cfg: &PipelineConfig) -> Result<Box<dyn AnnotationBackend>, PipelineError> {
    let a = &cfg.annotation;
    match a.backend {
        BackendKind::Mock => {
            let path = a.transcript.as_ref().ok_or_else(|| {
                PipelineError::Config(ConfigError::Invalid("annotation.transcript is required for the mock backend".into()))
            })?;
            let path = cfg.resolve(path);
            let text = read_input(&path)?;
            let backend = MockBackend::from_jsonl(&text).map_err(|message| PipelineError::Input { path, message })?;
            Ok(Box::new(backend))
        }
        BackendKind::Http => {
            let url = a.url.clone().ok_or_else(|| {
                PipelineError::Config(ConfigError::Invalid("annotation.url is required for the http backend".into()))
            })?;
            let backend = HttpBackend::new(url, Duration::from_millis(a.call_timeout_ms))
                .map_err(|e| PipelineError::Backend(e.to_string()))?;
            Ok(Box::new(backend))
        }
    }
}

pub fn templates(cfg: &PipelineConfig) -> Result<PromptTemplates, PipelineError> {
    match &cfg.paths.templates {
        None => Ok(PromptTemplates::default()),
        Some(dir) => {
            let dir = cfg.resolve(dir);
            PromptTemplates::load(&dir).map_err(|e| PipelineError::Input {
                path: dir,
                message: e.to_string(),
            })
        }
    }
}

/// Annotates every marking that is not yet settled (all of them with
/// `force`), then resolves stages.
pub async fn annotate(
    cfg: &PipelineConfig,
    catalog: &mut Catalog,
    backend: &dyn AnnotationBackend,
    force: bool,
) -> Result<BatchSummary, PipelineError> {
    if !catalog.stage_done(StageName::Postprocess) {
        return Err(PipelineError::Prerequisite {
            stage: "annotate",
            hint: "run `postprocess` first".into(),
        });
    }
    let templates = templates(cfg)?;
    let crops = FileCrops::new(cfg.resolve(&cfg.paths.images), catalog);
    let ids: Vec<String> = catalog.markings().map(|m| m.marking_id.clone()).collect();
    let summary = annotate::annotate_batch(
        catalog,
        &ids,
        backend,
        &crops,
        &templates,
        cfg.annotation.batch_options(force),
    )
    .await?;
    catalog.mark_stage(StageName::Annotate);
    Reports::new(cfg).json(cfg, "annotate", &summary)?;
    Ok(summary)
}

pub fn reconcile(cfg: &PipelineConfig, catalog: &mut Catalog) -> Result<annotate::ReconcileSummary, PipelineError> {
    let summary = annotate::reconcile_all(catalog)?;
    catalog.mark_stage(StageName::Reconcile);
    Reports::new(cfg).json(cfg, "reconcile", &summary)?;
    Ok(summary)
}

/// Builds the signature index and link reports and writes them, with
/// plain-text tables alongside.
pub fn analyze(cfg: &PipelineConfig, catalog: &mut Catalog) -> Result<analysis::AnalysisReport, PipelineError> {
    let result = analysis::analyze(catalog, &cfg.analysis);
    let reports = Reports::new(cfg);
    reports.json(cfg, "analyze", &result.report)?;
    reports.json(cfg, "signatures", &result.index)?;
    reports.json(cfg, "xo", &result.xo)?;
    reports.text(cfg, "links.txt", &render_links_table(&result.report.links))?;
    reports.text(cfg, "occurrences.txt", &render_occurrence_table(&result.index, &catalog.seizures()))?;
    reports.text(cfg, "frequency.txt", &result.report.frequency.render_text())?;
    catalog.mark_stage(StageName::Analyze);
    Ok(result.report)
}

fn read_eval_boxes(path: &Path) -> Result<formats::BoxesByImage, PipelineError> {
    let parsed = formats::parse_eval_boxes(&read_input(path)?);
    if let Some(e) = parsed.errors.first() {
        return Err(PipelineError::Input {
            path: path.to_path_buf(),
            message: e.to_string(),
        });
    }
    Ok(formats::group_eval_boxes(&parsed.records))
}

/// Scores detections against ground-truth boxes. Without a predictions file
/// the extracted markings in the catalog are scored.
pub fn evaluate(
    cfg: &PipelineConfig,
    catalog: &Catalog,
    ground_truth: &Path,
    predictions: Option<&Path>,
) -> Result<CorpusEval, PipelineError> {
    let gt = read_eval_boxes(ground_truth)?;
    let (preds, source) = match predictions {
        Some(p) => (read_eval_boxes(p)?, p.to_path_buf()),
        None => {
            let mut by_image = formats::BoxesByImage::new();
            for m in catalog.markings().filter(|m| m.part == 0) {
                by_image.entry(m.image_id.clone()).or_default().push(m.bbox);
            }
            (by_image, PathBuf::from("catalog"))
        }
    };
    let result = evaluate_corpus(&gt, &preds, cfg.evaluation.coverage_threshold).map_err(|e| PipelineError::Input {
        path: source,
        message: e.to_string(),
    })?;
    let reports = Reports::new(cfg);
    reports.json(cfg, "evaluate", &result)?;
    reports.text(cfg, "evaluate.txt", &result.render_text())?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutcome {
    pub stages_run: Vec<StageName>,
    /// Set when the run stopped for human review.
    pub gate: Option<GateStatus>,
}

impl PipelineOutcome {
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let names: Vec<&str> = self.stages_run.iter().map(|s| s.as_str()).collect();
        let _ = writeln!(s, "stages run: {}", names.join(", "));
        if let Some(g) = &self.gate {
            let _ = writeln!(s, "halted at the review gate: {}", g.instructions());
            for (seizure, n) in &g.open_by_seizure {
                let _ = writeln!(s, "  seizure {seizure}: {n} open");
            }
        } else {
            let _ = writeln!(s, "pipeline complete");
        }
        s
    }
}

/// Runs every stage that can run, saving the catalog after each. Stops at
/// the review gate while initial-labeling tasks are open.
pub async fn run(
    cfg: &PipelineConfig,
    catalog: &mut Catalog,
    backend: Option<&dyn AnnotationBackend>,
) -> Result<PipelineOutcome, PipelineError> {
    cfg.require_seed()?;
    let mut stages_run = Vec::new();
    let mut step = |catalog: &mut Catalog, stage: StageName| -> Result<(), PipelineError> {
        tracing::info!(stage = stage.as_str(), "stage complete");
        catalog.save()?;
        stages_run.push(stage);
        Ok(())
    };
    if !catalog.stage_done(StageName::Ingest) {
        ingest(cfg, catalog)?;
        step(catalog, StageName::Ingest)?;
    }
    if !catalog.stage_done(StageName::Postprocess) {
        postprocess(cfg, catalog)?;
        step(catalog, StageName::Postprocess)?;
    }
    if !catalog.stage_done(StageName::Sample) {
        sample(cfg, catalog)?;
        step(catalog, StageName::Sample)?;
    }
    let gate = GateStatus::of(catalog);
    if !gate.is_open() {
        tracing::info!(open_tasks = gate.open_tasks, "waiting for review");
        return Ok(PipelineOutcome {
            stages_run,
            gate: Some(gate),
        });
    }
    if !catalog.stage_done(StageName::Propagate) {
        propagate(cfg, catalog)?;
        step(catalog, StageName::Propagate)?;
    }
    let owned;
    let backend = match backend {
        Some(b) => b,
        None => {
            owned = build_backend(cfg)?;
            owned.as_ref()
        }
    };
    annotate(cfg, catalog, backend, false).await?;
    step(catalog, StageName::Annotate)?;
    reconcile(cfg, catalog)?;
    step(catalog, StageName::Reconcile)?;
    analyze(cfg, catalog)?;
    step(catalog, StageName::Analyze)?;
    Ok(PipelineOutcome { stages_run, gate: None })
}
