//! Bounding-box arithmetic and detection post-processing.
//!
//! Detector output for a single photograph goes through three stages, always
//! in this order:
//!
//! 1. [`dedup`] drops near-identical boxes, keeping the most confident one of
//!    each duplicate cluster.
//! 2. [`suppress_exteriors`] drops a large box when the union of smaller boxes
//!    overlapping it covers enough of its area.
//! 3. [`merge_fragments`] joins like-sized, proximate (and, for three or more
//!    boxes, collinear) boxes into one enclosing box.
//!
//! [`postprocess_image`] runs the stages for one image and keeps the counters needed
//! to reconcile input and output counts.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate box ({x_min}, {y_min}, {x_max}, {y_max}): need x_min < x_max and y_min < y_max")]
    Degenerate {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },
    #[error("non-finite coordinate in box")]
    NonFinite,
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f64),
}

/// Axis-aligned box in pixel coordinates.
///
/// Always non-degenerate: construction through [`BoundingBox::new`] (and
/// deserialization, which goes through the same check) rejects zero-width or
/// zero-height boxes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

#[derive(Deserialize)]
struct RawBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl TryFrom<RawBox> for BoundingBox {
    type Error = GeometryError;

    fn try_from(raw: RawBox) -> Result<Self, Self::Error> {
        BoundingBox::new(raw.x_min, raw.y_min, raw.x_max, raw.y_max)
    }
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(GeometryError::Degenerate {
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    /// Overlap region, or `None` when the boxes only touch or are disjoint.
    pub fn intersection(&self, other: &BoundingBox) -> Option<BoundingBox> {
        BoundingBox::new(
            self.x_min.max(other.x_min),
            self.y_min.max(other.y_min),
            self.x_max.min(other.x_max),
            self.y_max.min(other.y_max),
        )
        .ok()
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        self.intersection(other).map_or(0.0, |b| b.area())
    }

    /// Smallest box containing both.
    pub fn enclose(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        self.x_min <= other.x_min
            && self.y_min <= other.y_min
            && self.x_max >= other.x_max
            && self.y_max >= other.y_max
    }

    /// Whether the box lies within a `width` x `height` image.
    pub fn within_image(&self, width: u32, height: u32) -> bool {
        self.x_min >= 0.0
            && self.y_min >= 0.0
            && self.x_max <= f64::from(width)
            && self.y_max <= f64::from(height)
    }

    /// Clip to a `width` x `height` image; `None` if nothing remains.
    pub fn clamp_to_image(&self, width: u32, height: u32) -> Option<BoundingBox> {
        BoundingBox::new(
            self.x_min.max(0.0),
            self.y_min.max(0.0),
            self.x_max.min(f64::from(width)),
            self.y_max.min(f64::from(height)),
        )
        .ok()
    }

    /// Whether any edge lies on (or beyond) the image border.
    pub fn touches_image_border(&self, width: u32, height: u32) -> bool {
        self.x_min <= 0.0
            || self.y_min <= 0.0
            || self.x_max >= f64::from(width)
            || self.y_max >= f64::from(height)
    }

    /// Total order on coordinates, used wherever output order must not depend
    /// on input order.
    pub fn canonical_cmp(&self, other: &BoundingBox) -> Ordering {
        self.y_min
            .total_cmp(&other.y_min)
            .then(self.x_min.total_cmp(&other.x_min))
            .then(self.y_max.total_cmp(&other.y_max))
            .then(self.x_max.total_cmp(&other.x_max))
    }
}

/// One detector output box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub bbox: BoundingBox,
    pub confidence: f64,
}

impl Detection {
    pub fn new(
        image_id: impl Into<String>,
        bbox: BoundingBox,
        confidence: f64,
    ) -> Result<Self, GeometryError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(GeometryError::Confidence(confidence));
        }
        Ok(Self {
            image_id: image_id.into(),
            bbox,
            confidence,
        })
    }

    /// Preference order for dedup survivors: higher confidence, then larger
    /// area, then lower canonical coordinates. `Less` means "preferred".
    fn preference(&self, other: &Detection) -> Ordering {
        other
            .confidence
            .total_cmp(&self.confidence)
            .then(other.bbox.area().total_cmp(&self.bbox.area()))
            .then(self.bbox.canonical_cmp(&other.bbox))
    }
}

fn canonical_detection_cmp(a: &Detection, b: &Detection) -> Ordering {
    a.bbox
        .canonical_cmp(&b.bbox)
        .then(b.confidence.total_cmp(&a.confidence))
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Exact fraction of `target` covered by the union of `covers`.
///
/// Coordinate-compression sweep: the target is cut into vertical strips at
/// every clipped cover edge, and within each strip the y-intervals of the
/// covers spanning it are merged.
pub fn union_coverage(target: &BoundingBox, covers: &[BoundingBox]) -> f64 {
    let clipped: Vec<BoundingBox> = covers
        .iter()
        .filter_map(|c| c.intersection(target))
        .collect();
    if clipped.is_empty() {
        return 0.0;
    }

    let mut xs: Vec<f64> = Vec::with_capacity(clipped.len() * 2 + 2);
    xs.push(target.x_min);
    xs.push(target.x_max);
    for c in &clipped {
        xs.push(c.x_min);
        xs.push(c.x_max);
    }
    xs.sort_by(f64::total_cmp);
    xs.dedup();

    let mut covered = 0.0;
    let mut intervals: Vec<(f64, f64)> = Vec::with_capacity(clipped.len());
    for strip in xs.windows(2) {
        let (left, right) = (strip[0], strip[1]);
        intervals.clear();
        intervals.extend(
            clipped
                .iter()
                .filter(|c| c.x_min <= left && c.x_max >= right)
                .map(|c| (c.y_min, c.y_max)),
        );
        if intervals.is_empty() {
            continue;
        }
        intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut length = 0.0;
        let (mut start, mut end) = intervals[0];
        for &(lo, hi) in &intervals[1..] {
            if lo > end {
                length += end - start;
                start = lo;
                end = hi;
            } else if hi > end {
                end = hi;
            }
        }
        length += end - start;
        covered += (right - left) * length;
    }
    (covered / target.area()).clamp(0.0, 1.0)
}

/// Thresholds for the three post-processing stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessConfig {
    /// Boxes with IoU at or above this are duplicates.
    pub dedup_iou: f64,
    /// An exterior box is dropped when smaller boxes cover at least this
    /// fraction of it.
    pub exterior_coverage: f64,
    pub merge: MergeConfig,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            dedup_iou: 0.9,
            exterior_coverage: 0.6,
            merge: MergeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeConfig {
    /// Lower bound on height and area ratios between any two group members.
    pub min_size_ratio: f64,
    /// Upper bound on height and area ratios between any two group members.
    pub max_size_ratio: f64,
    /// Maximum horizontal and vertical gap, as a multiple of the smaller height.
    pub gap_factor: f64,
    /// Maximum perpendicular distance of a member center from the fitted
    /// line, as a multiple of the mean member height. Groups of 3+ only.
    pub collinearity_factor: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            min_size_ratio: 0.5,
            max_size_ratio: 2.0,
            gap_factor: 0.5,
            collinearity_factor: 0.25,
        }
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // lower root wins so components do not depend on call order
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }

    fn components(mut self) -> Vec<Vec<usize>> {
        let n = self.parent.len();
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            let root = self.find(i);
            groups[root].push(i);
        }
        groups.into_iter().filter(|g| !g.is_empty()).collect()
    }
}

/// Duplicate removal. Duplicate clusters are the connected components of the
/// "IoU >= threshold" relation; one detection survives per cluster.
///
/// Returns survivors in canonical order and the number removed.
pub fn dedup(dets: &[Detection], iou_threshold: f64) -> (Vec<Detection>, usize) {
    let mut sets = DisjointSet::new(dets.len());
    for i in 0..dets.len() {
        for j in (i + 1)..dets.len() {
            if iou(&dets[i].bbox, &dets[j].bbox) >= iou_threshold {
                sets.union(i, j);
            }
        }
    }
    let mut kept: Vec<Detection> = sets
        .components()
        .into_iter()
        .map(|members| {
            members
                .into_iter()
                .map(|i| &dets[i])
                .min_by(|a, b| a.preference(b))
                .expect("components are non-empty")
                .clone()
        })
        .collect();
    kept.sort_by(canonical_detection_cmp);
    let removed = dets.len() - kept.len();
    (kept, removed)
}

/// Exterior suppression. A detection is removed when the union of all other
/// strictly smaller detections overlapping it covers at least
/// `coverage_threshold` of its area. Removal is decided against the full input
/// set, so a box serving as an interior is never removed on that account.
pub fn suppress_exteriors(dets: &[Detection], coverage_threshold: f64) -> (Vec<Detection>, usize) {
    let mut kept = Vec::with_capacity(dets.len());
    for (i, outer) in dets.iter().enumerate() {
        let outer_area = outer.bbox.area();
        let interiors: Vec<BoundingBox> = dets
            .iter()
            .enumerate()
            .filter(|&(j, inner)| {
                j != i
                    && inner.bbox.area() < outer_area
                    && inner.bbox.intersection_area(&outer.bbox) > 0.0
            })
            .map(|(_, inner)| inner.bbox)
            .collect();
        if interiors.is_empty() || union_coverage(&outer.bbox, &interiors) < coverage_threshold {
            kept.push(outer.clone());
        }
    }
    kept.sort_by(canonical_detection_cmp);
    let removed = dets.len() - kept.len();
    (kept, removed)
}

/// A post-processed box: either a surviving detection or the enclosing box of
/// a merged fragment group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub bbox: BoundingBox,
    pub confidence: f64,
    /// Number of detections this box stands for (1 when not merged).
    pub member_count: usize,
    /// Boxes of the merged detections; empty when not merged.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub members: Vec<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutcome {
    pub boxes: Vec<Extraction>,
    /// Detections absorbed into merged groups.
    pub members_merged: usize,
    /// Merged groups formed.
    pub groups_formed: usize,
}

impl MergeOutcome {
    /// Reduction in box count caused by merging.
    pub fn merged_count(&self) -> usize {
        self.members_merged - self.groups_formed
    }
}

fn ratio_within(a: f64, b: f64, lo: f64, hi: f64) -> bool {
    let r = a / b;
    r >= lo && r <= hi
}

fn like_sized(a: &BoundingBox, b: &BoundingBox, cfg: &MergeConfig) -> bool {
    ratio_within(a.height(), b.height(), cfg.min_size_ratio, cfg.max_size_ratio)
        && ratio_within(a.area(), b.area(), cfg.min_size_ratio, cfg.max_size_ratio)
}

fn proximate(a: &BoundingBox, b: &BoundingBox, cfg: &MergeConfig) -> bool {
    let limit = cfg.gap_factor * a.height().min(b.height());
    let horizontal_gap = (a.x_min.max(b.x_min) - a.x_max.min(b.x_max)).max(0.0);
    let vertical_gap = (a.y_min.max(b.y_min) - a.y_max.min(b.y_max)).max(0.0);
    horizontal_gap <= limit && vertical_gap <= limit
}

/// Whether box centers lie close to their total-least-squares line.
fn collinear(boxes: &[&BoundingBox], factor: f64) -> bool {
    let n = boxes.len() as f64;
    let centers: Vec<(f64, f64)> = boxes.iter().map(|b| b.center()).collect();
    let mx = centers.iter().map(|c| c.0).sum::<f64>() / n;
    let my = centers.iter().map(|c| c.1).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in &centers {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    // direction of the principal axis of the 2x2 scatter matrix
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (nx, ny) = (-theta.sin(), theta.cos());
    let mean_height = boxes.iter().map(|b| b.height()).sum::<f64>() / n;
    let limit = factor * mean_height;
    centers
        .iter()
        .all(|&(x, y)| ((x - mx) * nx + (y - my) * ny).abs() <= limit)
}

/// Fragment merging. Candidate groups are connected components of the
/// "like-sized and proximate" relation; a component merges only if every pair
/// in it is like-sized and, with three or more members, the centers are
/// collinear. Components failing a check are left unmerged.
pub fn merge_fragments(dets: &[Detection], cfg: &MergeConfig) -> MergeOutcome {
    let mut sets = DisjointSet::new(dets.len());
    for i in 0..dets.len() {
        for j in (i + 1)..dets.len() {
            let (a, b) = (&dets[i].bbox, &dets[j].bbox);
            if like_sized(a, b, cfg) && proximate(a, b, cfg) {
                sets.union(i, j);
            }
        }
    }

    let mut outcome = MergeOutcome {
        boxes: Vec::with_capacity(dets.len()),
        members_merged: 0,
        groups_formed: 0,
    };
    for members in sets.components() {
        let boxes: Vec<&BoundingBox> = members.iter().map(|&i| &dets[i].bbox).collect();
        let mergeable = members.len() >= 2
            && boxes.iter().enumerate().all(|(i, a)| {
                boxes[i + 1..].iter().all(|b| like_sized(a, b, cfg))
            })
            && (members.len() == 2 || collinear(&boxes, cfg.collinearity_factor));
        if mergeable {
            let enclosing = boxes[1..]
                .iter()
                .fold(*boxes[0], |acc, b| acc.enclose(b));
            let confidence = members
                .iter()
                .map(|&i| dets[i].confidence)
                .fold(f64::NEG_INFINITY, f64::max);
            outcome.members_merged += members.len();
            outcome.groups_formed += 1;
            outcome.boxes.push(Extraction {
                bbox: enclosing,
                confidence,
                member_count: members.len(),
                members: boxes.iter().map(|b| **b).collect(),
            });
        } else {
            outcome.boxes.extend(members.iter().map(|&i| Extraction {
                bbox: dets[i].bbox,
                confidence: dets[i].confidence,
                member_count: 1,
                members: Vec::new(),
            }));
        }
    }
    outcome
        .boxes
        .sort_by(|a, b| a.bbox.canonical_cmp(&b.bbox).then(b.confidence.total_cmp(&a.confidence)));
    outcome
}

/// Per-stage bookkeeping. For any run,
/// `output == input - duplicates_removed - exteriors_removed - (members_merged - groups_formed)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostprocessCounters {
    pub input: usize,
    pub duplicates_removed: usize,
    pub exteriors_removed: usize,
    pub members_merged: usize,
    pub groups_formed: usize,
    pub output: usize,
}

impl PostprocessCounters {
    pub fn fragments_merged(&self) -> usize {
        self.members_merged - self.groups_formed
    }

    /// Whether the conservation identity holds.
    pub fn balanced(&self) -> bool {
        self.input
            == self.output + self.duplicates_removed + self.exteriors_removed + self.fragments_merged()
    }
}

impl std::ops::AddAssign for PostprocessCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.input += rhs.input;
        self.duplicates_removed += rhs.duplicates_removed;
        self.exteriors_removed += rhs.exteriors_removed;
        self.members_merged += rhs.members_merged;
        self.groups_formed += rhs.groups_formed;
        self.output += rhs.output;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageExtractions {
    pub extractions: Vec<Extraction>,
    pub counters: PostprocessCounters,
}

/// Full post-processing for one image's detections.
///
/// Boxes are first clipped to the image so no stage can emit anything outside
/// it; detections lying entirely outside the image must be rejected by the
/// caller beforehand.
pub fn postprocess_image(
    dets: &[Detection],
    width: u32,
    height: u32,
    cfg: &PostprocessConfig,
) -> ImageExtractions {
    let clipped: Vec<Detection> = dets
        .iter()
        .filter_map(|d| {
            d.bbox.clamp_to_image(width, height).map(|bbox| Detection {
                image_id: d.image_id.clone(),
                bbox,
                confidence: d.confidence,
            })
        })
        .collect();
    let (deduped, duplicates_removed) = dedup(&clipped, cfg.dedup_iou);
    let (interior, exteriors_removed) = suppress_exteriors(&deduped, cfg.exterior_coverage);
    let merged = merge_fragments(&interior, &cfg.merge);
    let counters = PostprocessCounters {
        input: clipped.len(),
        duplicates_removed,
        exteriors_removed,
        members_merged: merged.members_merged,
        groups_formed: merged.groups_formed,
        output: merged.boxes.len(),
    };
    debug_assert!(counters.balanced());
    ImageExtractions {
        extractions: merged.boxes,
        counters,
    }
}
