//! Coverage-based evaluation of detector output against hand-drawn boxes.
//!
//! Recall and precision use deliberately different overlap rules:
//!
//! * a ground-truth box is a true positive when the *union* of all
//!   predictions overlapping it covers at least `threshold` of its area;
//! * a prediction is a false positive when less than `threshold` of its own
//!   area lies inside any *single* ground-truth box.
//!
//! Precision is `TP / (TP + FP)` and recall `TP / (TP + FN)`, summed over the
//! corpus. Either is `None` ("undefined") when its denominator is zero.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formats::BoxesByImage;
use crate::geometry::{union_coverage, BoundingBox};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("threshold {0} outside (0, 1]")]
    Threshold(f64),
    #[error("predictions reference images missing from the ground truth: {}", .0.join(", "))]
    UnmatchedImages(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    TruePositive,
    FalseNegative,
    /// Prediction lying mostly inside some ground-truth box.
    Matched,
    FalsePositive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemVerdict {
    pub image_id: String,
    /// `gt:<n>` or `pred:<n>`, indexing the input lists of that image.
    pub id: String,
    pub verdict: Verdict,
    pub coverage: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub true_positives: usize,
    pub false_negatives: usize,
    pub false_positives: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub per_item: Vec<ItemVerdict>,
}

impl EvalResult {
    fn finish(mut self) -> Self {
        let (tp, fp, fne) = (self.true_positives, self.false_positives, self.false_negatives);
        self.precision = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
        self.recall = (tp + fne > 0).then(|| tp as f64 / (tp + fne) as f64);
        self
    }
}

fn check_threshold(threshold: f64) -> Result<(), EvalError> {
    if threshold > 0.0 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(EvalError::Threshold(threshold))
    }
}

fn evaluate_image(image_id: &str, gt: &[BoundingBox], preds: &[BoundingBox], threshold: f64) -> EvalResult {
    let mut r = EvalResult::default();
    for (i, g) in gt.iter().enumerate() {
        let coverage = union_coverage(g, preds);
        let verdict = if coverage >= threshold {
            r.true_positives += 1;
            Verdict::TruePositive
        } else {
            r.false_negatives += 1;
            Verdict::FalseNegative
        };
        r.per_item.push(ItemVerdict {
            image_id: image_id.to_string(),
            id: format!("gt:{i}"),
            verdict,
            coverage,
        });
    }
    for (i, p) in preds.iter().enumerate() {
        let inside = gt
            .iter()
            .map(|g| p.intersection_area(g) / p.area())
            .fold(0.0, f64::max);
        let verdict = if inside < threshold {
            r.false_positives += 1;
            Verdict::FalsePositive
        } else {
            Verdict::Matched
        };
        r.per_item.push(ItemVerdict {
            image_id: image_id.to_string(),
            id: format!("pred:{i}"),
            verdict,
            coverage: inside,
        });
    }
    r.finish()
}

/// Evaluates one image.
pub fn evaluate(gt: &[BoundingBox], predictions: &[BoundingBox], threshold: f64) -> Result<EvalResult, EvalError> {
    check_threshold(threshold)?;
    Ok(evaluate_image("", gt, predictions, threshold))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusEval {
    pub threshold: f64,
    pub images: usize,
    pub total: EvalResult,
    pub per_image: BTreeMap<String, EvalResult>,
}

/// Evaluates every image of the ground truth. Images without predictions
/// count all their boxes as false negatives; predictions for images absent
/// from the ground truth are an error.
pub fn evaluate_corpus(gt: &BoxesByImage, predictions: &BoxesByImage, threshold: f64) -> Result<CorpusEval, EvalError> {
    check_threshold(threshold)?;
    let unmatched: Vec<String> = predictions
        .keys()
        .filter(|k| !gt.contains_key(*k))
        .cloned()
        .collect();
    if !unmatched.is_empty() {
        return Err(EvalError::UnmatchedImages(unmatched));
    }
    let mut total = EvalResult::default();
    let mut per_image = BTreeMap::new();
    for (image_id, gt_boxes) in gt {
        let preds = predictions.get(image_id).map(Vec::as_slice).unwrap_or(&[]);
        let mut r = evaluate_image(image_id, gt_boxes, preds, threshold);
        total.true_positives += r.true_positives;
        total.false_negatives += r.false_negatives;
        total.false_positives += r.false_positives;
        total.per_item.append(&mut r.per_item);
        per_image.insert(image_id.clone(), r);
    }
    Ok(CorpusEval {
        threshold,
        images: gt.len(),
        total: total.finish(),
        per_image,
    })
}

fn rate(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"))
}

impl CorpusEval {
    pub fn render_text(&self) -> String {
        let t = &self.total;
        let mut s = String::new();
        let _ = writeln!(s, "# detection evaluation");
        let _ = writeln!(s, "threshold: {}", self.threshold);
        let _ = writeln!(s, "images: {}", self.images);
        let _ = writeln!(s, "true_positives: {}", t.true_positives);
        let _ = writeln!(s, "false_negatives: {}", t.false_negatives);
        let _ = writeln!(s, "false_positives: {}", t.false_positives);
        let _ = writeln!(s, "precision: {}", rate(t.precision));
        let _ = writeln!(s, "recall: {}", rate(t.recall));
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<24} {:>4} {:>4} {:>4} {:>10} {:>10}", "image", "TP", "FN", "FP", "precision", "recall");
        for (id, r) in &self.per_image {
            let _ = writeln!(
                s,
                "{:<24} {:>4} {:>4} {:>4} {:>10} {:>10}",
                id,
                r.true_positives,
                r.false_negatives,
                r.false_positives,
                rate(r.precision),
                rate(r.recall)
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::tests::bx;
    use proptest::prelude::*;

    #[test]
    fn exact_match() {
        let g = bx(0.0, 0.0, 10.0, 10.0);
        let r = evaluate(&[g], &[g], 0.6).unwrap();
        assert_eq!((r.true_positives, r.false_positives, r.false_negatives), (1, 0, 0));
        assert_eq!((r.precision, r.recall), (Some(1.0), Some(1.0)));
    }

    #[test]
    fn half_covered_ground_truth() {
        let r = evaluate(&[bx(0.0, 0.0, 10.0, 10.0)], &[bx(0.0, 0.0, 10.0, 5.0)], 0.6).unwrap();
        assert_eq!((r.true_positives, r.false_negatives, r.false_positives), (0, 1, 0));
        assert_eq!(r.precision, None);
        assert_eq!(r.recall, Some(0.0));
    }

    #[test]
    fn union_for_recall_single_box_for_precision() {
        // each prediction alone covers 35% of the gt but lies fully inside it
        let g = bx(0.0, 0.0, 10.0, 10.0);
        let preds = [bx(0.0, 0.0, 3.5, 10.0), bx(6.5, 0.0, 10.0, 10.0)];
        assert!((union_coverage(&g, &preds) - 0.7).abs() < 1e-12);
        let r = evaluate(&[g], &preds, 0.6).unwrap();
        assert_eq!((r.true_positives, r.false_positives, r.false_negatives), (1, 0, 0));
    }

    #[test]
    fn prediction_straddling_two_gt_boxes_is_false_positive() {
        // 50% inside each gt; neither single box reaches 60%
        let gts = [bx(0.0, 0.0, 10.0, 10.0), bx(10.0, 0.0, 20.0, 10.0)];
        let r = evaluate(&gts, &[bx(5.0, 0.0, 15.0, 10.0)], 0.6).unwrap();
        assert_eq!(r.false_positives, 1);
    }

    #[test]
    fn coverage_boundary_is_inclusive() {
        let g = bx(0.0, 0.0, 100.0, 1.0);
        for (width, tp) in [(59.0, 0), (60.0, 1), (61.0, 1)] {
            let r = evaluate(&[g], &[bx(0.0, 0.0, width, 1.0)], 0.6).unwrap();
            assert_eq!(r.true_positives, tp, "width {width}");
        }
    }

    #[test]
    fn invalid_thresholds() {
        assert_eq!(evaluate(&[], &[], 0.0), Err(EvalError::Threshold(0.0)));
        assert!(evaluate(&[], &[], 1.5).is_err());
        assert!(evaluate(&[], &[], 1.0).is_ok());
    }

    #[test]
    fn corpus_sums_images() {
        let mut gt = BoxesByImage::new();
        let mut pred = BoxesByImage::new();
        gt.insert("a".into(), vec![bx(0.0, 0.0, 10.0, 10.0)]);
        pred.insert("a".into(), vec![bx(0.0, 0.0, 10.0, 10.0)]);
        gt.insert("b".into(), vec![bx(0.0, 0.0, 10.0, 10.0)]);
        pred.insert("b".into(), vec![bx(0.0, 0.0, 10.0, 5.0)]);
        let r = evaluate_corpus(&gt, &pred, 0.6).unwrap();
        assert_eq!(
            (r.total.true_positives, r.total.false_negatives, r.total.false_positives),
            (1, 1, 0)
        );
        assert_eq!(r.total.precision, Some(1.0));
        assert_eq!(r.total.recall, Some(0.5));
        assert!(r.render_text().contains("recall: 0.5000"));
    }

    #[test]
    fn corpus_edge_cases() {
        let empty = evaluate_corpus(&BoxesByImage::new(), &BoxesByImage::new(), 0.6).unwrap();
        assert_eq!(empty.total.precision, None);
        assert_eq!(empty.total.recall, None);
        assert!(empty.render_text().contains("precision: undefined"));

        let mut pred = BoxesByImage::new();
        pred.insert("ghost".into(), vec![bx(0.0, 0.0, 1.0, 1.0)]);
        assert_eq!(
            evaluate_corpus(&BoxesByImage::new(), &pred, 0.6),
            Err(EvalError::UnmatchedImages(vec!["ghost".into()]))
        );
    }

    fn small_box() -> impl Strategy<Value = BoundingBox> {
        (0i32..15, 0i32..15, 1i32..8, 1i32..8).prop_map(|(x, y, w, h)| {
            bx(f64::from(x), f64::from(y), f64::from(x + w), f64::from(y + h))
        })
    }

    proptest! {
        #[test]
        fn adding_a_prediction_is_monotone(
            gt in prop::collection::vec(small_box(), 0..5),
            preds in prop::collection::vec(small_box(), 0..5),
            extra in small_box(),
        ) {
            let before = evaluate(&gt, &preds, 0.6).unwrap();
            let mut more = preds.clone();
            more.push(extra);
            let after = evaluate(&gt, &more, 0.6).unwrap();
            prop_assert!(after.true_positives >= before.true_positives);
            prop_assert!(after.true_positives + after.false_positives >= before.true_positives + before.false_positives);
        }

        #[test]
        fn raising_threshold_never_raises_recall(
            gt in prop::collection::vec(small_box(), 1..5),
            preds in prop::collection::vec(small_box(), 0..5),
            lo in 1u32..100, delta in 0u32..100,
        ) {
            let t1 = f64::from(lo) / 100.0;
            let t2 = (f64::from(lo + delta) / 100.0).min(1.0);
            let r1 = evaluate(&gt, &preds, t1).unwrap().recall.unwrap();
            let r2 = evaluate(&gt, &preds, t2).unwrap().recall.unwrap();
            prop_assert!(r2 <= r1);
        }

        #[test]
        fn shuffling_inputs_changes_nothing(
            gt in prop::collection::vec(small_box(), 0..5),
            preds in prop::collection::vec(small_box(), 0..5),
        ) {
            let a = evaluate(&gt, &preds, 0.6).unwrap();
            let mut g2 = gt.clone();
            g2.reverse();
            let mut p2 = preds.clone();
            p2.reverse();
            let b = evaluate(&g2, &p2, 0.6).unwrap();
            prop_assert_eq!(
                (a.true_positives, a.false_negatives, a.false_positives),
                (b.true_positives, b.false_negatives, b.false_positives)
            );
        }
    }
}
