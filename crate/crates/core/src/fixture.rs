//! Synthetic data. Nothing here comes from real seizures: the occurrence
//! matrix and the frequency profile reproduce published aggregates, and
//! [`write_corpus`] generates a small self-consistent corpus on disk.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotate::TranscriptEntry;
use crate::catalog::{marking_id, Catalog, Legibility, Marking, MarkingKind, Rotation, Stage};
use crate::formats::{write_embeddings, BoxesByImage, EmbeddingRecord};
use crate::geometry::{postprocess_image, BoundingBox, Detection, PostprocessConfig};

/// A signature marking and its instance count in seizures 1 to 8.
#[derive(Debug, Clone, Copy)]
pub struct OccurrenceRow {
    pub name: &'static str,
    pub kind: MarkingKind,
    pub value: &'static str,
    pub counts: [usize; 8],
}

const fn row(name: &'static str, kind: MarkingKind, value: &'static str, counts: [usize; 8]) -> OccurrenceRow {
    OccurrenceRow { name, kind, value, counts }
}

const T: MarkingKind = MarkingKind::Textual;
const S: MarkingKind = MarkingKind::Symbolic;

/// The twenty signatures seen in more than one seizure.
pub const OCCURRENCE_ROWS: [OccurrenceRow; 20] = [
    row("Circled Z", S, "Circled Z", [0, 0, 0, 0, 152, 0, 0, 1]),
    row("Initial Pair A", T, "KT", [0, 131, 0, 0, 0, 0, 3, 4]),
    row("Initials 'BB'", T, "BB", [0, 3, 0, 0, 64, 0, 0, 24]),
    row("Initial Pair B", T, "MW", [0, 0, 0, 0, 47, 0, 0, 5]),
    row("Initial Pair C", T, "RN", [0, 42, 0, 0, 0, 0, 0, 3]),
    row("Initial Pair D", T, "JP", [0, 0, 0, 0, 12, 0, 0, 6]),
    row("Initial Pair E", T, "HF", [0, 0, 0, 0, 14, 0, 0, 1]),
    row("Initials 'VV'", T, "VV", [0, 3, 0, 0, 0, 0, 0, 8]),
    row("Initial Pair F", T, "GL", [0, 0, 0, 0, 1, 0, 0, 9]),
    row("Initial Pair G", T, "TS", [0, 1, 0, 0, 0, 0, 0, 7]),
    row("Initial Pair H", T, "AK", [0, 5, 0, 0, 0, 0, 0, 3]),
    row("Symbol A", S, "Crossed Circle", [0, 1, 0, 0, 0, 0, 0, 7]),
    row("Initials 'DD'", T, "DD", [0, 0, 0, 0, 5, 0, 0, 2]),
    row("Initial Pair I", T, "PE", [0, 0, 0, 0, 1, 0, 0, 5]),
    row("Initial Pair J", T, "NC", [0, 0, 0, 0, 0, 0, 1, 4]),
    row("Initial Pair K", T, "WY", [0, 0, 0, 0, 1, 0, 0, 3]),
    row("Other Text A", T, "KAMBI", [0, 3, 0, 0, 0, 0, 0, 1]),
    row("Initial Pair L", T, "OM", [0, 3, 0, 0, 0, 0, 0, 1]),
    row("Initial Pair M", T, "SU", [0, 0, 1, 0, 0, 0, 0, 2]),
    row("Symbol B", S, "Trident", [0, 1, 0, 0, 0, 0, 0, 1]),
];

const STYLES: [&str; 5] = [
    "block capitals in black marker",
    "rounded strokes with a forward slant",
    "thin pen, letters joined at the base",
    "heavy strokes, underlined twice",
    "tall narrow letters with serifs",
];

/// One annotated marking for [`AnnotatedCatalog`].
#[derive(Debug, Clone)]
pub struct Spec {
    pub seizure: u32,
    pub kind: MarkingKind,
    pub value: String,
    pub stage: Stage,
    pub legibility: Legibility,
    pub description: Option<String>,
    /// Box within a 200×100 photograph.
    pub bbox: BoundingBox,
}

impl Spec {
    pub fn new(seizure: u32, kind: MarkingKind, value: &str) -> Self {
        Self {
            seizure,
            kind,
            value: value.to_string(),
            stage: Stage::PreSeizure,
            legibility: Legibility::Legible,
            description: None,
            bbox: BoundingBox::new(40.0, 30.0, 120.0, 70.0).expect("valid box"),
        }
    }

    pub fn stage(mut self, stage: Stage) -> Self {
        self.stage = stage;
        self
    }

    pub fn illegible(mut self) -> Self {
        self.legibility = Legibility::Illegible;
        self
    }

    pub fn described(mut self, d: &str) -> Self {
        self.description = Some(d.to_string());
        self
    }

    pub fn at(mut self, bbox: BoundingBox) -> Self {
        self.bbox = bbox;
        self
    }
}

/// Builds an in-memory catalog of already-annotated markings, one photograph
/// per marking unless sub-markings are attached with [`Self::follow`].
#[derive(Debug, Default)]
pub struct AnnotatedCatalog {
    specs: Vec<(Spec, Option<Spec>)>,
}

impl AnnotatedCatalog {
    pub fn add(&mut self, spec: Spec) -> &mut Self {
        self.specs.push((spec, None));
        self
    }

    pub fn add_n(&mut self, n: usize, spec: Spec) -> &mut Self {
        for _ in 0..n {
            self.add(spec.clone());
        }
        self
    }

    /// Adds `spec` with `next` as the second sub-marking of the same crop.
    pub fn follow(&mut self, spec: Spec, next: Spec) -> &mut Self {
        self.specs.push((spec, Some(next)));
        self
    }

    pub fn build(&self) -> Catalog {
        let mut c = Catalog::in_memory();
        let mut manifest = String::new();
        for (i, (s, _)) in self.specs.iter().enumerate() {
            let _ = writeln!(manifest, "f{:05}\t{}\tf{:05}.png\t200\t100", i, s.seizure, i);
        }
        c.ingest_images(&manifest, None);
        let mut out = Vec::new();
        for (i, (s, next)) in self.specs.iter().enumerate() {
            let img = c.image(&format!("f{i:05}")).expect("ingested").clone();
            let mut m = Marking::extracted(&img, s.bbox, 0.9, 1);
            apply_spec(&mut m, s);
            if let Some(n) = next {
                let mut child = m.clone();
                child.part = 1;
                child.marking_id = marking_id(&img.image_id, &s.bbox, Rotation::R0, 1);
                apply_spec(&mut child, n);
                out.push(child);
            }
            out.push(m);
        }
        c.upsert_markings(out).expect("fixture markings are valid");
        c
    }
}

fn apply_spec(m: &mut Marking, s: &Spec) {
    m.kind = s.kind;
    m.stage = s.stage;
    m.legibility = s.legibility;
    m.description = s.description.clone();
    m.annotation = crate::catalog::AnnotationStatus::Annotated;
    m.text = None;
    m.symbol_name = None;
    match s.kind {
        MarkingKind::Textual => m.text = Some(s.value.clone()),
        MarkingKind::Symbolic => m.symbol_name = Some(s.value.clone()),
        _ => {}
    }
}

/// Annotated catalog whose multi-seizure signatures are exactly
/// [`OCCURRENCE_ROWS`], surrounded by markings that must not create links:
/// single-seizure repeats, post-seizure and illegible look-alikes, one-offs,
/// and X/O sequences (lambda-terminated in seizures 2 and 3 only).
pub fn occurrence_catalog() -> Catalog {
    let mut b = AnnotatedCatalog::default();
    for (r, rowdef) in OCCURRENCE_ROWS.iter().enumerate() {
        for (s, &n) in rowdef.counts.iter().enumerate() {
            for i in 0..n {
                let style = STYLES[(r + s + i) % STYLES.len()];
                b.add(Spec::new(s as u32 + 1, rowdef.kind, rowdef.value).described(style));
            }
        }
    }
    b.add_n(6, Spec::new(5, T, "QT").described(STYLES[0]))
        .add_n(4, Spec::new(2, T, "ZA").described(STYLES[1]));
    for s in [3, 7] {
        b.add_n(2, Spec::new(s, T, "LT").stage(Stage::PostSeizure).described("stencilled stock number"));
    }
    for s in [4, 6] {
        b.add_n(2, Spec::new(s, T, "RR").illegible());
    }
    b.add(Spec::new(1, T, "PQ")).add(Spec::new(4, T, "UV")).add(Spec::new(6, S, "star"));
    b.add(Spec::new(1, MarkingKind::None, ""));
    let lambda = Spec::new(2, S, "lambda").described("hooked stroke closing the row");
    b.follow(Spec::new(2, T, "XOXO").described("row of crosses and rings"), lambda.clone())
        .follow(Spec::new(2, T, "XXOX").described("row of crosses and rings"), lambda);
    b.add(Spec::new(3, T, "XOXλ").described("crosses and rings ending in a hook"));
    b.add(Spec::new(4, T, "XX")).add(Spec::new(7, T, "X"));
    // touches the right edge of its 200-pixel photograph
    b.add(Spec::new(5, T, "OXO").at(BoundingBox::new(150.0, 20.0, 200.0, 50.0).expect("valid box")));
    b.build()
}

/// Occurrence counts of 133 initial pairs totalling 1,196: sixteen pairs
/// seen ten times or more account for 909, the top two for 267 and 169.
pub fn initial_pair_profile() -> Vec<(String, usize)> {
    let high = [267, 169, 60, 55, 48, 42, 38, 35, 30, 28, 25, 24, 22, 20, 36, 10];
    let mut low = Vec::new();
    for (count, n) in [(1, 41), (2, 30), (3, 20), (4, 8), (5, 17), (9, 1)] {
        low.extend(std::iter::repeat_n(count, n));
    }
    let keys = (b'A'..=b'Z')
        .flat_map(|a| (b'A'..=b'Z').map(move |b| format!("{}{}", a as char, b as char)))
        .filter(|k| !k.chars().all(|c| c == 'X' || c == 'O'));
    keys.zip(high.into_iter().chain(low)).collect()
}

/// Annotated catalog realizing [`initial_pair_profile`], spread over eight
/// seizures, plus longer texts and symbols that belong to other categories.
pub fn frequency_catalog() -> Catalog {
    let mut b = AnnotatedCatalog::default();
    for (i, (key, n)) in initial_pair_profile().into_iter().enumerate() {
        for j in 0..n {
            // the two most common pairs stay within one seizure each
            let seizure = match i {
                0 => 5,
                1 => 2,
                _ => ((i + j) % 8) as u32 + 1,
            };
            b.add(Spec::new(seizure, T, &key));
        }
    }
    b.add_n(12, Spec::new(3, T, "KAMBI")).add_n(15, Spec::new(5, S, "star"));
    b.build()
}

/// Ground truth and predictions for 94 test photographs on which the coverage
/// protocol at 0.6 yields 504 true positives, 21 false negatives and 96 false
/// positives: precision 0.84, recall 0.96.
pub fn detection_eval_fixture() -> (BoxesByImage, BoxesByImage) {
    let bx = |x0: f64, y0: f64, x1: f64, y1: f64| BoundingBox::new(x0, y0, x1, y1).expect("valid box");
    let mut gt = BoxesByImage::new();
    let mut pred = BoxesByImage::new();
    let (mut tp, mut fne, mut fp) = (0, 0, 0);
    for img in 0..94usize {
        let id = format!("test{img:03}");
        let g = gt.entry(id.clone()).or_default();
        let p = pred.entry(id).or_default();
        let n_gt = if img < 55 { 6 } else { 5 };
        for k in 0..n_gt {
            let x = 20.0 + 110.0 * k as f64;
            let b = bx(x, 40.0, x + 80.0, 80.0);
            g.push(b);
            if fne < 21 && k == 0 {
                // a near miss: the prediction covers 59% of the marking
                p.push(bx(x, 40.0, x + 47.2, 80.0));
                fne += 1;
            } else if tp % 7 == 3 {
                // two fragments whose union covers the marking
                p.push(bx(x, 40.0, x + 42.0, 80.0));
                p.push(bx(x + 38.0, 40.0, x + 80.0, 80.0));
                tp += 1;
            } else {
                p.push(bx(x + 1.0, 41.0, x + 79.0, 79.0));
                tp += 1;
            }
        }
        // background false positives, one or two per photograph
        let n_fp = if img < 2 { 2 } else { 1 };
        for j in 0..n_fp {
            if fp < 96 {
                let y = 200.0 + 60.0 * j as f64;
                p.push(bx(30.0, y, 90.0, y + 30.0));
                fp += 1;
            }
        }
    }
    debug_assert_eq!((tp, fne, fp), (504, 21, 96));
    (gt, pred)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub seed: u64,
    pub seizures: Vec<u32>,
    pub images_per_seizure: usize,
    pub embedding_dim: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            seed: 2014,
            seizures: vec![2, 5, 8],
            images_per_seizure: 90,
            embedding_dim: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Truth {
    Text(String),
    Symbol(String),
    Post(String),
    Illegible,
    Empty,
    Xo { seq: String, lambda: bool },
    Rare(String),
}

impl Truth {
    fn review_label(&self) -> String {
        match self {
            Truth::Text(t) | Truth::Rare(t) => t.clone(),
            Truth::Symbol(s) => s.to_lowercase(),
            Truth::Post(_) => "post_seizure".into(),
            Truth::Illegible => "illegible".into(),
            Truth::Empty => "no_marking".into(),
            Truth::Xo { .. } => "xo_sequence".into(),
        }
    }

    fn cluster(&self) -> String {
        match self {
            Truth::Rare(t) => format!("rare:{t}"),
            other => other.review_label(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub images: usize,
    pub detections: usize,
    pub markings: usize,
    pub by_label: BTreeMap<String, usize>,
}

fn classes_for(index: usize, count: usize, seizure: u32) -> Vec<(Truth, u32)> {
    let mut v = vec![
        (Truth::Text("BB".into()), 24),
        (Truth::Post(String::new()), 18),
        (Truth::Illegible, 7),
        (Truth::Empty, 6),
        (Truth::Xo { seq: String::new(), lambda: index < 2 }, 6),
        (Truth::Rare(String::new()), 3),
    ];
    let specific: &[(Truth, u32)] = match index {
        0 => &[(Truth::Text("VV".into()), 18), (Truth::Text("KT".into()), 16)],
        1 => &[(Truth::Symbol("Circled Z".into()), 20), (Truth::Text("MW".into()), 14)],
        _ if index + 1 == count => &[
            (Truth::Text("VV".into()), 10),
            (Truth::Text("MW".into()), 9),
            (Truth::Symbol("Circled Z".into()), 8),
            (Truth::Text("KT".into()), 7),
        ],
        _ => &[(Truth::Text(format!("S{seizure}")), 20)],
    };
    v.extend(specific.iter().cloned());
    v
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [(T, u32)]) -> &'a T {
    let total: u32 = items.iter().map(|i| i.1).sum();
    let mut r = rng.random_range(0..total);
    for (item, w) in items {
        if r < *w {
            return item;
        }
        r -= w;
    }
    unreachable!("weights sum to total")
}

fn cluster_center(name: &str, dim: usize, seed: u64) -> Vec<f64> {
    let digest = Sha256::digest(name.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ u64::from_le_bytes(bytes));
    (0..dim).map(|_| rng.random_range(-4.0..4.0)).collect()
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let (u1, u2): (f64, f64) = (rng.random::<f64>().max(1e-300), rng.random());
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

struct Placed {
    image_id: String,
    bbox: BoundingBox,
    truth: Truth,
}

fn content_block(kind: &str, value: &str, stage: &str, description: &str) -> String {
    let field = if kind == "textual" { "text" } else { "symbol" };
    format!("kind: {kind}\n{field}: {value}\nstage: {stage}\ndescription: {description}")
}

/// Writes a synthetic corpus to `dir`: photographs, manifest, detector output,
/// embeddings, a scripted annotation transcript, reviewer decisions, evaluation
/// boxes, a rating sample, and a `tuskmarks.toml` wiring them together.
pub fn write_corpus(dir: &Path, spec: &CorpusSpec) -> io::Result<CorpusSummary> {
    const W: u32 = 320;
    const H: u32 = 240;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    std::fs::create_dir_all(dir.join("images"))?;
    let mut manifest = String::from("image_id\tseizure\tpath\twidth\theight\n");
    let mut detections = String::from("image_id\tx_min\ty_min\tx_max\ty_max\tconfidence\n");
    let mut ground_truth = String::from("image_id\tx_min\ty_min\tx_max\ty_max\n");
    let mut placed: Vec<Placed> = Vec::new();
    let mut summary = CorpusSummary::default();
    let pp = PostprocessConfig::default();
    let mut post_counter = 0;

    for (si, &seizure) in spec.seizures.iter().enumerate() {
        let classes = classes_for(si, spec.seizures.len(), seizure);
        for n in 0..spec.images_per_seizure {
            let image_id = format!("s{seizure}-{n:04}");
            let path = format!("{image_id}.png");
            let _ = writeln!(manifest, "{image_id}\t{seizure}\t{path}\t{W}\t{H}");
            // declares the photograph even when it holds no marking
            let _ = writeln!(ground_truth, "{image_id}");
            summary.images += 1;
            let mut img = GrayImage::from_pixel(W, H, Luma([214]));
            let mut dets: Vec<Detection> = Vec::new();
            let mut truths: Vec<(BoundingBox, Truth)> = Vec::new();
            let cells: Vec<(u32, u32)> = (0..3).flat_map(|c| (0..2).map(move |r| (c, r))).collect();
            let count = rng.random_range(2..=4usize);
            let mut chosen: Vec<(u32, u32)> = Vec::new();
            while chosen.len() < count {
                let c = cells[rng.random_range(0..cells.len())];
                if !chosen.contains(&c) {
                    chosen.push(c);
                }
            }
            chosen.sort();
            for (col, rowi) in chosen {
                let mut truth = pick(&mut rng, &classes).clone();
                match &mut truth {
                    Truth::Post(t) => {
                        post_counter += 1;
                        *t = format!("{seizure}/{post_counter:03}");
                    }
                    Truth::Xo { seq, .. } => {
                        let len = rng.random_range(2..=5);
                        *seq = (0..len).map(|i| if i == 0 || rng.random_bool(0.6) { 'X' } else { 'O' }).collect();
                    }
                    Truth::Rare(t) => {
                        *t = format!(
                            "{}{}",
                            (b'A' + rng.random_range(0..26u8)) as char,
                            (b'A' + rng.random_range(0..26u8)) as char
                        );
                        // keep one-offs distinct from every recurring key
                        t.push('Q');
                    }
                    _ => {}
                }
                let (cw, ch) = (W / 3, H / 2);
                let w = rng.random_range(36..=70) as f64;
                let h = rng.random_range(18..=30) as f64;
                let x0 = f64::from(col * cw) + 10.0 + rng.random_range(0.0..(f64::from(cw) - 20.0 - w)).floor();
                let y0 = f64::from(rowi * ch) + 10.0 + rng.random_range(0.0..(f64::from(ch) - 20.0 - h)).floor();
                let mut b = BoundingBox::new(x0, y0, x0 + w, y0 + h).expect("valid box");
                if matches!(truth, Truth::Xo { .. }) && col == 2 && rng.random_bool(0.5) {
                    // runs off the photograph's edge
                    b = BoundingBox::new(f64::from(W) - w, y0, f64::from(W), y0 + h).expect("valid box");
                }
                if truth != Truth::Empty {
                    for x in b.x_min as u32..b.x_max as u32 {
                        for y in b.y_min as u32..b.y_max as u32 {
                            if (x + y) % 3 != 0 {
                                img.put_pixel(x, y, Luma([40]));
                            }
                        }
                    }
                    let _ = writeln!(ground_truth, "{image_id}\t{}\t{}\t{}\t{}", b.x_min, b.y_min, b.x_max, b.y_max);
                }
                let conf = (rng.random_range(0.5..0.99f64) * 100.0).round() / 100.0;
                let mut push = |bb: BoundingBox, c: f64| dets.push(Detection::new(&image_id, bb, c).expect("valid detection"));
                let roll: f64 = rng.random();
                let textual = matches!(truth, Truth::Text(_) | Truth::Rare(_) | Truth::Post(_));
                if roll < 0.12 {
                    push(b, conf);
                    push(BoundingBox::new(b.x_min + 1.0, b.y_min, b.x_max + 1.0, b.y_max).expect("valid box"), conf - 0.05);
                } else if roll < 0.22 && textual {
                    let mid = ((b.x_min + b.x_max) / 2.0).floor();
                    push(BoundingBox::new(b.x_min, b.y_min, mid - 1.0, b.y_max).expect("valid box"), conf);
                    push(BoundingBox::new(mid + 1.0, b.y_min, b.x_max, b.y_max).expect("valid box"), conf - 0.02);
                } else if roll < 0.30 {
                    push(b, conf);
                    let outer = BoundingBox::new(b.x_min - 2.0, b.y_min - 2.0, b.x_max + 2.0, b.y_max + 2.0)
                        .expect("valid box")
                        .clamp_to_image(W, H)
                        .expect("inside image");
                    push(outer, 0.31);
                } else {
                    push(b, conf);
                }
                truths.push((b, truth));
            }
            img.save(dir.join("images").join(&path)).map_err(io::Error::other)?;
            summary.detections += dets.len();
            for d in &dets {
                let b = d.bbox;
                let _ = writeln!(
                    detections,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    d.image_id, b.x_min, b.y_min, b.x_max, b.y_max, d.confidence
                );
            }
            // the markings the pipeline will extract, matched back to truth
            let out = postprocess_image(&dets, W, H, &pp);
            for e in out.extractions {
                let truth = truths
                    .iter()
                    .map(|(b, t)| (crate::geometry::iou(b, &e.bbox), t))
                    .filter(|(v, _)| *v > 0.5)
                    .max_by(|a, b| a.0.total_cmp(&b.0))
                    .map(|(_, t)| t.clone())
                    .unwrap_or(Truth::Empty);
                placed.push(Placed {
                    image_id: image_id.clone(),
                    bbox: e.bbox,
                    truth,
                });
            }
        }
    }

    let mut transcript = String::new();
    let mut decisions = String::from("queue\tmarking_id\tlabel\ttext\n");
    let mut embeddings = Vec::new();
    let mut ratings = String::from("item\trater\tcategory\n");
    let mut text_pairs = String::from("reference\thypothesis\n");
    let mut precision = String::from("item\tassigned_label\ttrue_label\n");
    let mut centers: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let line = |t: &mut String, id: &str, step: &str, response: &str| {
        let e = TranscriptEntry {
            marking_id: id.to_string(),
            step: step.to_string(),
            response: response.to_string(),
        };
        t.push_str(&serde_json::to_string(&e).expect("entry serializes"));
        t.push('\n');
    };
    let mut illegible_seen = 0;
    let mut used_ids = BTreeSet::new();
    for (k, p) in placed.iter().enumerate() {
        let id = marking_id(&p.image_id, &p.bbox, Rotation::R0, 0);
        if !used_ids.insert(id.clone()) {
            continue;
        }
        summary.markings += 1;
        *summary.by_label.entry(p.truth.review_label()).or_default() += 1;
        let _ = writeln!(decisions, "initial_labeling\t{id}\t{}\t", p.truth.review_label());

        let center = centers
            .entry(p.truth.cluster())
            .or_insert_with(|| cluster_center(&p.truth.cluster(), spec.embedding_dim, spec.seed))
            .clone();
        embeddings.push(EmbeddingRecord {
            marking_id: id.clone(),
            values: center.iter().map(|c| ((c + 0.3 * gaussian(&mut rng)) * 1e6).round() / 1e6).collect(),
        });

        let style = STYLES[k % STYLES.len()];
        let orientation = *pick(&mut rng, &[("0", 70), ("90", 15), ("270", 10), ("180", 5)]);
        if k % 97 == 5 {
            // transient failure, recovered on retry
            line(&mut transcript, &id, "presence", "!timeout");
        }
        match &p.truth {
            Truth::Empty => line(&mut transcript, &id, "presence", "no"),
            Truth::Illegible => {
                line(&mut transcript, &id, "presence", "yes");
                line(&mut transcript, &id, "legibility", "illegible");
                illegible_seen += 1;
                if illegible_seen % 2 == 0 {
                    let _ = writeln!(decisions, "illegible_review\t{id}\tlegible\tNM");
                } else {
                    let _ = writeln!(decisions, "illegible_review\t{id}\tillegible\t");
                }
            }
            truth => {
                line(&mut transcript, &id, "presence", "yes");
                line(&mut transcript, &id, "legibility", "legible");
                line(&mut transcript, &id, "orientation", orientation);
                let (blocks, refs): (Vec<String>, Option<&str>) = match truth {
                    Truth::Text(t) | Truth::Rare(t) => (vec![content_block("textual", t, "pre_seizure", style)], Some(t)),
                    Truth::Symbol(s) => (vec![content_block("symbolic", s, "pre_seizure", style)], None),
                    Truth::Post(t) => (
                        vec![content_block("textual", t, "post_seizure", "stencilled stock number in white paint")],
                        Some(t),
                    ),
                    Truth::Xo { seq, lambda } => {
                        let mut v = vec![content_block("textual", seq, "pre_seizure", "row of crosses and rings")];
                        if *lambda {
                            v.push(content_block("symbolic", "lambda", "pre_seizure", "hooked stroke closing the row"));
                        }
                        (v, Some(seq))
                    }
                    Truth::Illegible | Truth::Empty => unreachable!("handled above"),
                };
                if k % 211 == 17 {
                    line(&mut transcript, &id, "multiplicity", "several");
                } else {
                    line(&mut transcript, &id, "multiplicity", &blocks.len().to_string());
                }
                for (i, b) in blocks.iter().enumerate() {
                    line(&mut transcript, &id, &format!("content.{i}"), b);
                }
                if let Some(r) = refs {
                    // a transcription with an occasional misread character
                    let hyp: String = r
                        .chars()
                        .map(|c| if c == 'B' && rng.random_bool(0.2) { '8' } else { c })
                        .collect();
                    let _ = writeln!(text_pairs, "{r}\t{hyp}");
                }
            }
        }

        if k % 4 == 0 {
            let stage = match p.truth {
                Truth::Post(_) => "post_seizure",
                Truth::Illegible => "illegible",
                _ => "pre_seizure",
            };
            for rater in ["r1", "r2"] {
                let alt = if rng.random_bool(0.06) {
                    ["pre_seizure", "post_seizure", "illegible"][rng.random_range(0..3)]
                } else {
                    stage
                };
                let _ = writeln!(ratings, "{id}\t{rater}\t{alt}");
            }
            let assigned = if rng.random_bool(0.9) { stage } else { "pre_seizure" };
            let _ = writeln!(precision, "{id}\t{assigned}\t{stage}");
        }
    }

    std::fs::write(dir.join("manifest.tsv"), manifest)?;
    std::fs::write(dir.join("detections.tsv"), detections)?;
    std::fs::write(dir.join("ground_truth.tsv"), ground_truth)?;
    std::fs::write(dir.join("embeddings.jsonl"), write_embeddings(spec.embedding_dim, &embeddings))?;
    std::fs::write(dir.join("transcript.jsonl"), transcript)?;
    std::fs::write(dir.join("decisions.tsv"), decisions)?;
    std::fs::write(dir.join("ratings.tsv"), ratings)?;
    std::fs::write(dir.join("transcriptions.tsv"), text_pairs)?;
    std::fs::write(dir.join("precision_sample.tsv"), precision)?;
    std::fs::write(dir.join("tuskmarks.toml"), corpus_config(spec.seed))?;
    Ok(summary)
}

fn corpus_config(seed: u64) -> String {
    format!(
        "# synthetic corpus; every threshold not listed keeps its default\n\
         seed = {seed}\n\n\
         [paths]\n\
         catalog = \"catalog\"\n\
         images = \"images\"\n\
         manifest = \"manifest.tsv\"\n\
         detections = \"detections.tsv\"\n\
         embeddings = \"embeddings.jsonl\"\n\
         reports = \"reports\"\n\
         models = \"models\"\n\n\
         [annotation]\n\
         backend = \"mock\"\n\
         transcript = \"transcript.jsonl\"\n\
         backoff_ms = 5\n"
    )
}

/// Location of the corpus files written by [`write_corpus`].
pub fn corpus_file(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
