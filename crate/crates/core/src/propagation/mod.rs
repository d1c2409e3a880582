//! Label propagation: reviewed markings train one calibrated RBF-SVM per
//! common label in a PCA-reduced embedding space, and unreviewed markings
//! take the most probable label whose probability clears the threshold.

mod pca;
mod platt;
mod svm;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotate::reconcile_marking;
use crate::catalog::{write_atomic, Catalog, CatalogError, LabelSource, SeizureId};
use crate::formats::EmbeddingRecord;
use crate::review;

pub use pca::{fit_projection, Projection};
pub use platt::Sigmoid;
pub use svm::{rbf, solve, RbfSvm, SvmParams, SvmSolution};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PropagationError {
    #[error("need at least 2 vectors, got {0}")]
    TooFewVectors(usize),
    #[error("embeddings have zero total variance")]
    ZeroVariance,
    #[error("non-finite embedding value")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{0}")]
    InvalidParameter(String),
    #[error("SVM for label {label:?} did not converge within {iterations} iterations")]
    NonConvergence { label: String, iterations: usize },
    #[error("no reviewed labels: complete initial labeling before propagating")]
    NoReviewedLabels,
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("writing models: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagationScope {
    /// Separate models per seizure, trained on that seizure's review sample.
    #[default]
    PerSeizure,
    /// One set of models over the whole corpus.
    Corpus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagationConfig {
    pub variance_target: f64,
    /// Minimum share of reviewed markings a label needs to get a model.
    pub min_label_share: f64,
    pub assign_threshold: f64,
    pub c: f64,
    /// Fixed RBF width; `None` uses `1 / (k * mean feature variance)`.
    pub gamma: Option<f64>,
    pub eps: f64,
    pub max_iter: usize,
    pub folds: usize,
    pub scope: PropagationScope,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            variance_target: 0.75,
            min_label_share: 0.05,
            assign_threshold: 0.90,
            c: 1.0,
            gamma: None,
            eps: 1e-3,
            max_iter: 1_000_000,
            folds: 5,
            scope: PropagationScope::PerSeizure,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<(), PropagationError> {
        let bad = |what: &str, v: f64| Err(PropagationError::InvalidParameter(format!("{what} {v} out of range")));
        if !(self.variance_target > 0.0 && self.variance_target <= 1.0) {
            return bad("variance_target", self.variance_target);
        }
        if !(self.min_label_share > 0.0 && self.min_label_share <= 1.0) {
            return bad("min_label_share", self.min_label_share);
        }
        if !(self.assign_threshold > 0.0 && self.assign_threshold <= 1.0) {
            return bad("assign_threshold", self.assign_threshold);
        }
        if self.c.is_nan() || self.c <= 0.0 {
            return bad("c", self.c);
        }
        if let Some(g) = self.gamma {
            if g.is_nan() || g <= 0.0 {
                return bad("gamma", g);
            }
        }
        if self.folds < 2 {
            return bad("folds", self.folds as f64);
        }
        Ok(())
    }

    fn svm(&self) -> SvmParams {
        SvmParams {
            c: self.c,
            eps: self.eps,
            max_iter: self.max_iter,
        }
    }
}

/// Labels given to at least `min_share` of the distinct reviewed markings.
pub fn eligible_labels(human_labels: &[(String, String)], min_share: f64) -> Vec<String> {
    let reviewed: BTreeSet<&str> = human_labels.iter().map(|(m, _)| m.as_str()).collect();
    if reviewed.is_empty() {
        return Vec::new();
    }
    let mut per_label: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (m, l) in human_labels {
        per_label.entry(l).or_default().insert(m);
    }
    let n = reviewed.len() as f64;
    per_label
        .into_iter()
        .filter(|(_, ms)| ms.len() as f64 / n >= min_share - 1e-12)
        .map(|(l, _)| l.to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelModel {
    pub label: String,
    pub svm: RbfSvm,
    pub calibration: Sigmoid,
    pub positives: usize,
    pub negatives: usize,
    pub iterations: usize,
}

impl LabelModel {
    pub fn probability(&self, v: &[f64]) -> f64 {
        self.calibration.probability(self.svm.decision(v))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedLabel {
    pub label: String,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModels {
    pub gamma: f64,
    pub models: Vec<LabelModel>,
    pub skipped: Vec<SkippedLabel>,
}

/// `1 / (k * mean per-feature variance)`, or 1 for constant data.
pub fn default_gamma(points: &[Vec<f64>]) -> f64 {
    let (n, k) = (points.len(), points.first().map_or(0, Vec::len));
    if n < 2 || k == 0 {
        return 1.0;
    }
    let mut total = 0.0;
    for j in 0..k {
        let mean = points.iter().map(|p| p[j]).sum::<f64>() / n as f64;
        total += points.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / n as f64;
    }
    let mean_var = total / k as f64;
    if mean_var > 0.0 {
        1.0 / (k as f64 * mean_var)
    } else {
        1.0
    }
}

fn label_seed(seed: u64, label: &str) -> u64 {
    let digest = Sha256::digest(label.as_bytes());
    seed ^ u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Decision values for every point from models that never saw it, using
/// class-stratified folds.
fn cross_validated_margins(
    points: &[Vec<f64>],
    y: &[f64],
    gamma: f64,
    cfg: &PropagationConfig,
    seed: u64,
    label: &str,
) -> Result<Vec<f64>, PropagationError> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let folds = cfg.folds.min(points.len());
    let mut fold_of = vec![0usize; points.len()];
    for class in [1.0, -1.0] {
        let mut idx: Vec<usize> = (0..points.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            fold_of[i] = pos % folds;
        }
    }
    let mut margins = vec![0.0; points.len()];
    for f in 0..folds {
        let (train, test): (Vec<usize>, Vec<usize>) = (0..points.len()).partition(|&i| fold_of[i] != f);
        if test.is_empty() {
            continue;
        }
        let tx: Vec<Vec<f64>> = train.iter().map(|&i| points[i].clone()).collect();
        let ty: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let has_both = ty.iter().any(|&t| t > 0.0) && ty.iter().any(|&t| t < 0.0);
        if !has_both {
            // a fold holding every example of one class: its members get the
            // uninformative margin 0
            continue;
        }
        let model = svm::train(&tx, &ty, gamma, cfg.svm(), label)?;
        for i in test {
            margins[i] = model.decision(&points[i]);
        }
    }
    Ok(margins)
}

/// Trains one calibrated one-vs-rest model per eligible label. Labels with
/// fewer than 2 positive or 2 negative examples are skipped.
pub fn train_label_models(
    points: &[Vec<f64>],
    point_labels: &[BTreeSet<String>],
    eligible: &[String],
    cfg: &PropagationConfig,
    seed: u64,
) -> Result<TrainedModels, PropagationError> {
    cfg.validate()?;
    let gamma = cfg.gamma.unwrap_or_else(|| default_gamma(points));
    let results: Vec<Result<Result<LabelModel, SkippedLabel>, PropagationError>> = eligible
        .par_iter()
        .map(|label| {
            let y: Vec<f64> = point_labels
                .iter()
                .map(|ls| if ls.contains(label) { 1.0 } else { -1.0 })
                .collect();
            let positives = y.iter().filter(|&&t| t > 0.0).count();
            let negatives = y.len() - positives;
            if positives < 2 || negatives < 2 {
                tracing::warn!(label, positives, negatives, "skipping label without enough examples");
                return Ok(Err(SkippedLabel {
                    label: label.clone(),
                    positives,
                    negatives,
                }));
            }
            let margins = cross_validated_margins(points, &y, gamma, cfg, label_seed(seed, label), label)?;
            let truth: Vec<bool> = y.iter().map(|&t| t > 0.0).collect();
            let calibration = platt::fit(&margins, &truth);
            let solution = svm::solve(points, &y, gamma, cfg.svm(), label)?;
            Ok(Ok(LabelModel {
                label: label.clone(),
                svm: RbfSvm::from_solution(points, &y, gamma, &solution),
                calibration,
                positives,
                negatives,
                iterations: solution.iterations,
            }))
        })
        .collect();
    let mut out = TrainedModels {
        gamma,
        models: Vec::new(),
        skipped: Vec::new(),
    };
    for r in results {
        match r? {
            Ok(m) => out.models.push(m),
            Err(s) => out.skipped.push(s),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub marking_id: String,
    pub label: String,
    pub probability: f64,
}

/// For each vector, the label of the most probable model at or above
/// `threshold`; ties go to the lexicographically smaller label.
pub fn propagate(models: &[LabelModel], vectors: &[(String, Vec<f64>)], threshold: f64) -> Vec<Assignment> {
    let mut ordered: Vec<&LabelModel> = models.iter().collect();
    ordered.sort_by(|a, b| a.label.cmp(&b.label));
    vectors
        .par_iter()
        .filter_map(|(id, v)| {
            let mut best: Option<(&str, f64)> = None;
            for m in &ordered {
                let p = m.probability(v);
                if p >= threshold && best.is_none_or(|(_, bp)| p > bp) {
                    best = Some((&m.label, p));
                }
            }
            best.map(|(label, probability)| Assignment {
                marking_id: id.clone(),
                label: label.to_string(),
                probability,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeModels {
    pub scope: String,
    pub seizure: Option<SeizureId>,
    pub projection: Projection,
    pub trained: TrainedModels,
}

/// Versioned model state, written next to the catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub config: PropagationConfig,
    pub seed: u64,
    pub scopes: Vec<ScopeModels>,
}

impl ModelFile {
    pub fn save(&self, path: &Path) -> Result<(), PropagationError> {
        let mut bytes = serde_json::to_vec_pretty(self).map_err(|e| PropagationError::Io(e.to_string()))?;
        bytes.push(b'\n');
        write_atomic(path, &bytes).map_err(|e| PropagationError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PropagationError> {
        let text = std::fs::read_to_string(path).map_err(|e| PropagationError::Io(e.to_string()))?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| PropagationError::Io(e.to_string()))?;
        if file.schema_version != MODEL_SCHEMA_VERSION {
            return Err(PropagationError::Io(format!(
                "model schema version {} unsupported (expected {MODEL_SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        Ok(file)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeReport {
    pub scope: String,
    pub embeddings: usize,
    pub reviewed: usize,
    pub components: usize,
    pub gamma: f64,
    pub eligible: Vec<String>,
    pub trained: Vec<String>,
    pub skipped: Vec<SkippedLabel>,
    pub candidates: usize,
    pub assigned: usize,
    pub by_label: BTreeMap<String, usize>,
    /// Set when the scope could not be processed.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationReport {
    pub config: PropagationConfig,
    pub seed: u64,
    pub embeddings_unmatched: usize,
    pub scopes: Vec<ScopeReport>,
    pub assigned: usize,
    pub candidates: usize,
}

pub struct PropagationRun {
    pub report: PropagationReport,
    pub models: ModelFile,
    pub assignments: Vec<Assignment>,
}

/// Fits models from the completed initial-labeling tasks and computes
/// assignments for markings that carry no human label. The catalog is not
/// modified; see [`apply_assignments`].
pub fn run(
    catalog: &Catalog,
    embeddings: &[EmbeddingRecord],
    cfg: &PropagationConfig,
    seed: u64,
) -> Result<PropagationRun, PropagationError> {
    cfg.validate()?;
    let reviewed_all = review::reviewed_labels(catalog, None);
    if reviewed_all.is_empty() {
        return Err(PropagationError::NoReviewedLabels);
    }
    let mut known: Vec<&EmbeddingRecord> = Vec::new();
    let mut unmatched = 0;
    for e in embeddings {
        if catalog.marking(&e.marking_id).is_some() {
            known.push(e);
        } else {
            unmatched += 1;
        }
    }
    known.sort_by(|a, b| a.marking_id.cmp(&b.marking_id));
    known.dedup_by(|a, b| a.marking_id == b.marking_id);

    let scopes: Vec<(String, Option<SeizureId>)> = match cfg.scope {
        PropagationScope::Corpus => vec![("corpus".into(), None)],
        PropagationScope::PerSeizure => catalog
            .seizures()
            .into_iter()
            .map(|s| (format!("seizure {s}"), Some(s)))
            .collect(),
    };

    let mut report = PropagationReport {
        config: cfg.clone(),
        seed,
        embeddings_unmatched: unmatched,
        scopes: Vec::new(),
        assigned: 0,
        candidates: 0,
    };
    let mut models = ModelFile {
        schema_version: MODEL_SCHEMA_VERSION,
        config: cfg.clone(),
        seed,
        scopes: Vec::new(),
    };
    let mut assignments = Vec::new();

    for (name, seizure) in scopes {
        let in_scope: Vec<&EmbeddingRecord> = known
            .iter()
            .copied()
            .filter(|e| seizure.is_none_or(|s| catalog.marking(&e.marking_id).is_some_and(|m| m.seizure == s)))
            .collect();
        let reviewed = review::reviewed_labels(catalog, seizure);
        let mut sr = ScopeReport {
            scope: name.clone(),
            embeddings: in_scope.len(),
            reviewed: reviewed.len(),
            components: 0,
            gamma: 0.0,
            eligible: Vec::new(),
            trained: Vec::new(),
            skipped: Vec::new(),
            candidates: 0,
            assigned: 0,
            by_label: BTreeMap::new(),
            note: None,
        };
        if reviewed.is_empty() {
            sr.note = Some("no reviewed markings".into());
            report.scopes.push(sr);
            continue;
        }
        let vectors: Vec<Vec<f64>> = in_scope.iter().map(|e| e.values.clone()).collect();
        let projection = match fit_projection(&vectors, cfg.variance_target) {
            Ok(p) => p,
            Err(e @ (PropagationError::TooFewVectors(_) | PropagationError::ZeroVariance)) => {
                sr.note = Some(e.to_string());
                report.scopes.push(sr);
                continue;
            }
            Err(e) => return Err(e),
        };
        sr.components = projection.k();

        let by_id: BTreeMap<&str, Vec<f64>> = in_scope
            .iter()
            .map(|e| Ok((e.marking_id.as_str(), projection.project(&e.values)?)))
            .collect::<Result<_, PropagationError>>()?;
        let mut label_sets: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
        for (m, l) in &reviewed {
            if by_id.contains_key(m.as_str()) {
                label_sets.entry(m.as_str()).or_default().insert(l.clone());
            }
        }
        let train_points: Vec<Vec<f64>> = label_sets.keys().map(|m| by_id[m].clone()).collect();
        let train_labels: Vec<BTreeSet<String>> = label_sets.values().cloned().collect();
        let with_embeddings: Vec<(String, String)> = reviewed
            .iter()
            .filter(|(m, _)| by_id.contains_key(m.as_str()))
            .cloned()
            .collect();
        sr.eligible = eligible_labels(&with_embeddings, cfg.min_label_share);

        let trained = train_label_models(&train_points, &train_labels, &sr.eligible, cfg, seed)?;
        sr.gamma = trained.gamma;
        sr.trained = trained.models.iter().map(|m| m.label.clone()).collect();
        sr.skipped = trained.skipped.clone();

        let candidates: Vec<(String, Vec<f64>)> = by_id
            .iter()
            .filter(|(id, _)| {
                !label_sets.contains_key(*id)
                    && catalog
                        .marking(id)
                        .is_some_and(|m| m.labels_from(LabelSource::Human).next().is_none())
            })
            .map(|(id, v)| (id.to_string(), v.clone()))
            .collect();
        sr.candidates = candidates.len();
        let scoped = propagate(&trained.models, &candidates, cfg.assign_threshold);
        sr.assigned = scoped.len();
        for a in &scoped {
            *sr.by_label.entry(a.label.clone()).or_default() += 1;
        }
        report.assigned += sr.assigned;
        report.candidates += sr.candidates;
        report.scopes.push(sr);
        assignments.extend(scoped);
        models.scopes.push(ScopeModels {
            scope: name,
            seizure,
            projection,
            trained,
        });
    }
    assignments.sort_by(|a, b| a.marking_id.cmp(&b.marking_id));
    Ok(PropagationRun {
        report,
        models,
        assignments,
    })
}

/// Writes assignments as propagated labels and re-resolves stages.
pub fn apply_assignments(catalog: &mut Catalog, assignments: &[Assignment]) -> Result<usize, PropagationError> {
    let mut added = 0;
    for a in assignments {
        if catalog.add_label(&a.marking_id, &a.label, LabelSource::Propagated, a.probability)? {
            added += 1;
        }
        reconcile_marking(catalog, &a.marking_id)?;
    }
    Ok(added)
}
