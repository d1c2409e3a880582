//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! A criterion listed in `KNOWN_FAILURES` still runs at full strength and
//! still prints FAIL; it only stops the process from exiting non-zero. If it
//! ever passes, the run fails so the entry gets removed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tuskmarks::analysis::{self, AnalysisConfig, EvidenceKind, SignatureCategory};
use tuskmarks::annotate::{
    annotate_marking, AnnotationBackend, BackendError, BackendInfo, BackendRequest, BlankCrops, MockBackend,
    PromptTemplates, ProtocolOptions, TranscriptEntry,
};
use tuskmarks::catalog::{Catalog, Marking, SeizureId};
use tuskmarks::config::PipelineConfig;
use tuskmarks::eval::{evaluate, evaluate_corpus};
use tuskmarks::fixture;
use tuskmarks::geometry::{iou, postprocess_image, union_coverage, BoundingBox, Detection, PostprocessConfig};
use tuskmarks::metrics::{cer, edit_distance, krippendorff_alpha, CerOptions, RatingMatrix};
use tuskmarks::pipeline;
use tuskmarks::propagation::{self, fit_projection, solve, train_label_models, PropagationConfig, SvmParams};

type Check = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

const KNOWN_FAILURES: &[(&str, &str)] = &[(
    "analysis-fixture",
    "the occurrence table lists eight signatures confined to seizures 2 and 8, while the link table states seven",
)];

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
    BoundingBox::new(x0, y0, x1, y1).expect("valid box")
}

// ---------------------------------------------------------------- geometry

fn cells(b: &BoundingBox) -> impl Iterator<Item = (i64, i64)> + '_ {
    (b.x_min as i64..b.x_max as i64).flat_map(move |x| (b.y_min as i64..b.y_max as i64).map(move |y| (x, y)))
}

fn random_int_box(rng: &mut ChaCha8Rng, extent: i64) -> BoundingBox {
    let x0 = rng.random_range(0..extent - 1);
    let y0 = rng.random_range(0..extent - 1);
    let x1 = rng.random_range(x0 + 1..=extent);
    let y1 = rng.random_range(y0 + 1..=extent);
    bx(x0 as f64, y0 as f64, x1 as f64, y1 as f64)
}

fn geometry_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let target = random_int_box(&mut rng, 40);
        let n = rng.random_range(0..6);
        let covers: Vec<BoundingBox> = (0..n).map(|_| random_int_box(&mut rng, 40)).collect();

        let target_cells: BTreeSet<(i64, i64)> = cells(&target).collect();
        let covered: BTreeSet<(i64, i64)> = covers.iter().flat_map(cells).filter(|c| target_cells.contains(c)).collect();
        let oracle_cov = covered.len() as f64 / target_cells.len() as f64;
        let got = union_coverage(&target, &covers);
        worst = worst.max((got - oracle_cov).abs());

        for c in &covers {
            let other: BTreeSet<(i64, i64)> = cells(c).collect();
            let inter = target_cells.intersection(&other).count() as f64;
            let union = target_cells.union(&other).count() as f64;
            worst = worst.max((iou(&target, c) - inter / union).abs());
        }
    }
    let elapsed = start.elapsed();
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("1000 sets, max deviation {worst:e}, {:.2}s", elapsed.as_secs_f64()))
}

// --------------------------------------------------------- post-processing

fn random_detections(rng: &mut ChaCha8Rng, image: &str) -> Vec<Detection> {
    let mut dets = Vec::new();
    for _ in 0..rng.random_range(1..6) {
        let (x, y) = (rng.random_range(0.0..260.0), rng.random_range(0.0..200.0));
        let (w, h) = (rng.random_range(8.0..60.0), rng.random_range(8.0..30.0));
        let b = bx(x, y, x + w, y + h);
        let conf = rng.random_range(0.3..1.0);
        match rng.random_range(0..4) {
            0 => {
                dets.push(Detection::new(image, b, conf).unwrap());
                dets.push(Detection::new(image, bx(x + 0.5, y, x + w + 0.5, y + h), conf * 0.9).unwrap());
            }
            1 => {
                let mid = x + w / 2.0;
                dets.push(Detection::new(image, bx(x, y, mid - 1.0, y + h), conf).unwrap());
                dets.push(Detection::new(image, bx(mid + 1.0, y, x + w, y + h), conf).unwrap());
                if rng.random_bool(0.5) {
                    dets.push(Detection::new(image, bx(x - 2.0, y - 2.0, x + w + 2.0, y + h + 2.0), 0.4).unwrap());
                }
            }
            _ => dets.push(Detection::new(image, b, conf).unwrap()),
        }
    }
    dets
}

fn postprocess_bookkeeping() -> Check {
    let cfg = PostprocessConfig::default();
    let (mut images, mut merged_groups) = (0, 0);
    for seed in 0..300u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..10 {
            let id = format!("img{i}");
            let dets = random_detections(&mut rng, &id);
            let out = postprocess_image(&dets, 320, 240, &cfg);
            let c = out.counters;
            ensure(
                c.input - c.duplicates_removed - c.exteriors_removed - (c.members_merged - c.groups_formed) == c.output,
                || format!("seed {seed}: {c:?}"),
            )?;
            ensure(out.extractions.len() == c.output, || format!("seed {seed}: output count"))?;
            for e in out.extractions.iter().filter(|e| !e.members.is_empty()) {
                merged_groups += 1;
                for m in &e.members {
                    ensure(
                        e.bbox.x_min <= m.x_min && e.bbox.y_min <= m.y_min && e.bbox.x_max >= m.x_max && e.bbox.y_max >= m.y_max,
                        || format!("seed {seed}: {:?} does not enclose {m:?}", e.bbox),
                    )?;
                }
            }
            images += 1;
        }
    }
    ensure(merged_groups > 0, || "no merged groups exercised".into())?;
    Ok(format!("{images} images over 300 seeds, {merged_groups} merged boxes checked"))
}

// ---------------------------------------------------------------- evaluation

fn evaluation_protocol() -> Check {
    let g = bx(0.0, 0.0, 100.0, 10.0);
    let verdict = |w: f64| {
        let r = evaluate(&[g], &[bx(0.0, 0.0, w, 10.0)], 0.6).unwrap();
        (r.true_positives, r.false_negatives)
    };
    ensure(verdict(59.0) == (0, 1), || "coverage 0.59 should be a false negative".into())?;
    ensure(verdict(60.0) == (1, 0), || "coverage 0.60 should be a true positive".into())?;
    ensure(verdict(61.0) == (1, 0), || "coverage 0.61 should be a true positive".into())?;

    let (gt, pred) = fixture::detection_eval_fixture();
    let r = evaluate_corpus(&gt, &pred, 0.6).unwrap();
    let (p, rc) = (r.total.precision.unwrap(), r.total.recall.unwrap());
    ensure((p - 0.84).abs() <= 0.005, || format!("precision {p}"))?;
    ensure((rc - 0.96).abs() <= 0.005, || format!("recall {rc}"))?;
    Ok(format!("0.59/0.60/0.61 -> FN/TP/TP; precision {p:.4}, recall {rc:.4}"))
}

// ----------------------------------------------------------------------- PCA

fn hadamard(n: usize) -> Vec<Vec<f64>> {
    let mut h = vec![vec![1.0]];
    while h.len() < n {
        let m = h.len();
        let mut next = vec![vec![0.0; 2 * m]; 2 * m];
        for i in 0..m {
            for j in 0..m {
                next[i][j] = h[i][j];
                next[i][j + m] = h[i][j];
                next[i + m][j] = h[i][j];
                next[i + m][j + m] = -h[i][j];
            }
        }
        h = next;
    }
    h
}

fn random_rotation(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for u in &q {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            q.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    q
}

/// Points whose sample covariance is exactly `Q^T diag(spectrum) Q` up to a
/// common factor: centred, mutually orthogonal Hadamard columns as scores.
fn points_with_spectrum(rng: &mut ChaCha8Rng, spectrum: &[f64]) -> Vec<Vec<f64>> {
    let h = hadamard(16);
    let q = random_rotation(rng, spectrum.len());
    (0..16)
        .map(|i| {
            (0..spectrum.len())
                .map(|j| (0..spectrum.len()).map(|c| h[i][c + 1] * spectrum[c].sqrt() * q[c][j]).sum::<f64>() + 3.0)
                .collect()
        })
        .collect()
}

fn oracle_k(spectrum: &[u32]) -> usize {
    let mut s = spectrum.to_vec();
    s.sort_unstable_by(|a, b| b.cmp(a));
    let total: u32 = s.iter().sum();
    let mut acc = 0;
    for (i, v) in s.iter().enumerate() {
        acc += v;
        // cumulative share >= 3/4, in integers
        if 4 * acc >= 3 * total {
            return i + 1;
        }
    }
    s.len()
}

fn pca_selection() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_orth = 0.0f64;
    for case in 0..200 {
        let d = rng.random_range(2..=8);
        let spectrum: Vec<u32> = (0..d).map(|_| rng.random_range(1..=20)).collect();
        let pts = points_with_spectrum(&mut rng, &spectrum.iter().map(|&v| v as f64).collect::<Vec<_>>());
        let p = fit_projection(&pts, 0.75).map_err(|e| e.to_string())?;
        let want = oracle_k(&spectrum);
        ensure(p.k() == want, || format!("case {case}: spectrum {spectrum:?} gave k={} want {want}", p.k()))?;
        for a in 0..p.k() {
            for b in 0..p.k() {
                let dot: f64 = p.basis[a].iter().zip(&p.basis[b]).map(|(x, y)| x * y).sum();
                worst_orth = worst_orth.max((dot - if a == b { 1.0 } else { 0.0 }).abs());
            }
        }
    }
    ensure(worst_orth <= 1e-8, || format!("orthonormality off by {worst_orth:e}"))?;
    let iso = points_with_spectrum(&mut rng, &[1.0; 4]);
    let k = fit_projection(&iso, 0.75).map_err(|e| e.to_string())?.k();
    ensure(k == 3, || format!("isotropic 4-D gave k={k}"))?;
    Ok(format!("200 spectra matched, orthonormality {worst_orth:e}, isotropic k=3"))
}

// ----------------------------------------------------------------------- SVM

fn kkt_violation(x: &[Vec<f64>], y: &[f64], gamma: f64, c: f64, alpha: &[f64], rho: f64) -> f64 {
    let n = x.len();
    let mut worst = 0.0f64;
    let mut balance = 0.0;
    for i in 0..n {
        let f: f64 = (0..n).map(|j| alpha[j] * y[j] * propagation::rbf(gamma, &x[j], &x[i])).sum::<f64>() - rho;
        let m = y[i] * f;
        let v = if alpha[i] <= 1e-12 {
            (1.0 - m).max(0.0)
        } else if alpha[i] >= c - 1e-12 {
            (m - 1.0).max(0.0)
        } else {
            (m - 1.0).abs()
        };
        worst = worst.max(v);
        worst = worst.max((-alpha[i]).max(alpha[i] - c).max(0.0));
        balance += alpha[i] * y[i];
    }
    worst.max(balance.abs())
}

fn clusters(rng: &mut ChaCha8Rng, centers: &[(f64, f64, &str)], per: usize, spread: f64) -> Vec<(Vec<f64>, String)> {
    let mut out = Vec::new();
    for &(cx, cy, label) in centers {
        for _ in 0..per {
            out.push((
                vec![cx + rng.random_range(-spread..spread), cy + rng.random_range(-spread..spread)],
                label.to_string(),
            ));
        }
    }
    out
}

fn svm_and_propagation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = SvmParams::default();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(10..60);
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        let y: Vec<f64> = x.iter().map(|p| if p[0] * p[1] + rng.random_range(-0.5..0.5) > 0.0 { 1.0 } else { -1.0 }).collect();
        if y.iter().all(|&v| v == y[0]) {
            continue;
        }
        let gamma = rng.random_range(0.2..2.0);
        let s = solve(&x, &y, gamma, params, "kkt").map_err(|e| e.to_string())?;
        worst = worst.max(kkt_violation(&x, &y, gamma, params.c, &s.alpha, s.rho));
    }
    ensure(worst <= 1e-3, || format!("KKT violation {worst:e}"))?;

    let xor: Vec<(Vec<f64>, f64)> = clusters(&mut rng, &[(1.0, 1.0, "+"), (-1.0, -1.0, "+"), (1.0, -1.0, "-"), (-1.0, 1.0, "-")], 10, 0.3)
        .into_iter()
        .map(|(p, l)| (p, if l == "+" { 1.0 } else { -1.0 }))
        .collect();
    let (xx, xy): (Vec<Vec<f64>>, Vec<f64>) = xor.into_iter().unzip();
    let params_xor = SvmParams { c: 10.0, ..params };
    let model = propagation::RbfSvm::from_solution(&xx, &xy, 1.0, &solve(&xx, &xy, 1.0, params_xor, "xor").map_err(|e| e.to_string())?);
    let correct = xx.iter().zip(&xy).filter(|(p, &t)| model.decision(p) * t > 0.0).count();
    ensure(correct == xx.len(), || format!("XOR training accuracy {correct}/{}", xx.len()))?;

    let train = clusters(&mut rng, &[(0.0, 0.0, "BB"), (4.0, 0.0, "VV"), (0.0, 4.0, "KT"), (4.0, 4.0, "MW")], 25, 1.2);
    let points: Vec<Vec<f64>> = train.iter().map(|t| t.0.clone()).collect();
    let labels: Vec<BTreeSet<String>> = train.iter().map(|t| BTreeSet::from([t.1.clone()])).collect();
    let eligible: Vec<String> = ["BB", "KT", "MW", "VV"].iter().map(|s| s.to_string()).collect();
    let cfg = PropagationConfig::default();
    let models = train_label_models(&points, &labels, &eligible, &cfg, 9).map_err(|e| e.to_string())?;
    let vectors: Vec<(String, Vec<f64>)> = (0..10_000)
        .map(|i| (format!("v{i}"), vec![rng.random_range(-3.0..7.0), rng.random_range(-3.0..7.0)]))
        .collect();
    let assigned = propagation::propagate(&models.models, &vectors, 0.9);
    let below = assigned.iter().filter(|a| a.probability < 0.90).count();
    ensure(below == 0, || format!("{below} assignments below 0.90"))?;
    ensure(!assigned.is_empty(), || "no assignments at all".into())?;
    Ok(format!(
        "max KKT violation {worst:.2e}, XOR {correct}/{}, {} of 10000 assigned, none below 0.90",
        xx.len(),
        assigned.len()
    ))
}

// ---------------------------------------------------------------- annotation

struct Counting {
    inner: MockBackend,
    calls: AtomicUsize,
}

#[async_trait]
impl AnnotationBackend for Counting {
    fn info(&self) -> BackendInfo {
        self.inner.info()
    }

    async fn answer(&self, request: &BackendRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.answer(request).await
    }
}

fn entry(id: &str, step: &str, response: &str) -> TranscriptEntry {
    TranscriptEntry {
        marking_id: id.into(),
        step: step.into(),
        response: response.into(),
    }
}

fn content(text: &str) -> String {
    format!("kind: textual\ntext: {text}\nstage: pre_seizure\ndescription: block capitals")
}

async fn annotation_counts() -> Check {
    let mut c = Catalog::in_memory();
    c.ingest_images("a\t2\ta.png\t200\t100\n", None);
    let img = c.image("a").unwrap().clone();
    let boxes = [bx(0.0, 0.0, 20.0, 10.0), bx(30.0, 0.0, 50.0, 10.0), bx(60.0, 0.0, 80.0, 10.0), bx(90.0, 0.0, 110.0, 10.0)];
    let ms: Vec<Marking> = boxes.iter().map(|b| Marking::extracted(&img, *b, 0.9, 1)).collect();
    let [none, illegible, single, triple] = [0, 1, 2, 3].map(|i| ms[i].marking_id.clone());
    let mut script = vec![
        entry(&none, "presence", "no"),
        entry(&illegible, "presence", "yes"),
        entry(&illegible, "legibility", "illegible"),
    ];
    for (id, n) in [(&single, 1), (&triple, 3)] {
        script.push(entry(id, "presence", "yes"));
        script.push(entry(id, "legibility", "legible"));
        script.push(entry(id, "orientation", "0"));
        script.push(entry(id, "multiplicity", &n.to_string()));
        for i in 0..n {
            script.push(entry(id, &format!("content.{i}"), &content(&format!("T{i}"))));
        }
    }
    let backend = Counting {
        inner: MockBackend::new(script),
        calls: AtomicUsize::new(0),
    };
    let opts = ProtocolOptions {
        backoff_ms: 0,
        ..Default::default()
    };
    let templates = PromptTemplates::default();
    let mut counts = Vec::new();
    for m in &ms {
        backend.calls.store(0, Ordering::SeqCst);
        let out = annotate_marking(m, &backend, &BlankCrops, &templates, opts).await;
        counts.push(backend.calls.load(Ordering::SeqCst));
        ensure(out.failure.is_none(), || format!("{}: {:?}", m.marking_id, out.failure))?;
    }
    ensure(counts == [1, 2, 5, 7], || format!("call counts {counts:?}, want [1, 2, 5, 7]"))?;

    let mut snapshots = Vec::new();
    for run in 0..2 {
        let out = tempfile::tempdir().unwrap();
        fixture::write_corpus(out.path(), &fixture::CorpusSpec { images_per_seizure: 40, ..Default::default() })
            .map_err(|e| e.to_string())?;
        let cfg = PipelineConfig::load(Some(&out.path().join("tuskmarks.toml"))).map_err(|e| e.to_string())?;
        let mut cat = Catalog::open(cfg.resolve(&cfg.paths.catalog)).map_err(|e| e.to_string())?;
        pipeline::ingest(&cfg, &mut cat).map_err(|e| e.to_string())?;
        pipeline::postprocess(&cfg, &mut cat).map_err(|e| e.to_string())?;
        let backend = pipeline::build_backend(&cfg).map_err(|e| e.to_string())?;
        pipeline::annotate(&cfg, &mut cat, backend.as_ref(), false).await.map_err(|e| e.to_string())?;
        cat.save().map_err(|e| e.to_string())?;
        snapshots.push((run, tree_bytes(&out.path().join("catalog")), tree_bytes(&out.path().join("reports"))));
    }
    ensure(snapshots[0].1 == snapshots[1].1, || "catalogs differ between runs".into())?;
    ensure(snapshots[0].2 == snapshots[1].2, || "reports differ between runs".into())?;
    Ok(format!("calls {counts:?}; batch of 40 photographs/seizure byte-identical across 2 runs"))
}

// ------------------------------------------------------------------ analysis

fn analysis_fixture() -> Check {
    let c = fixture::occurrence_catalog();
    let cfg = AnalysisConfig::default();
    let index = analysis::build_signature_index(&c, &cfg);
    let links = analysis::cross_seizure_links(&index);
    let s = |v: &[u32]| v.iter().map(|&n| SeizureId::new(n).unwrap()).collect::<Vec<_>>();
    let expected: BTreeMap<Vec<SeizureId>, usize> = [
        (s(&[2, 8]), 7),
        (s(&[5, 8]), 8),
        (s(&[3, 8]), 1),
        (s(&[7, 8]), 1),
        (s(&[2, 5, 8]), 1),
        (s(&[2, 7, 8]), 1),
    ]
    .into_iter()
    .collect();
    let got: BTreeMap<Vec<SeizureId>, usize> = links
        .iter()
        .filter(|l| l.evidence_kind == EvidenceKind::SignatureMatch)
        .map(|l| (l.seizure_set.clone(), l.shared_signatures.len()))
        .collect();

    let freq = analysis::frequency_stats(
        &analysis::build_signature_index(&fixture::frequency_catalog(), &cfg),
        SignatureCategory::InitialPair,
        10,
        10,
    );
    let freq_ok = freq.high_frequency_keys == 16
        && freq.unique_keys == 133
        && freq.high_frequency_occurrences == 909
        && freq.total_occurrences == 1196
        && (100.0 * freq.key_share - 12.0).abs() <= 0.1
        && (100.0 * freq.occurrence_share - 76.0).abs() <= 0.1;
    let freq_detail = format!(
        "frequency {}/{} keys ({:.1}%) covering {}/{} ({:.1}%)",
        freq.high_frequency_keys,
        freq.unique_keys,
        100.0 * freq.key_share,
        freq.high_frequency_occurrences,
        freq.total_occurrences,
        100.0 * freq.occurrence_share
    );
    let render = |m: &BTreeMap<Vec<SeizureId>, usize>| {
        m.iter()
            .map(|(k, v)| format!("({}):{v}", k.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")))
            .collect::<Vec<_>>()
            .join(" ")
    };
    ensure(got == expected, || format!("links {} want {}; {freq_detail}", render(&got), render(&expected)))?;
    ensure(freq_ok, || freq_detail.clone())?;
    Ok(format!("links {}; {freq_detail}", render(&got)))
}

// ------------------------------------------------------------------- metrics

fn brute_edit(a: &[char], b: &[char], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    // top-down over suffixes, trying every alignment move
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    if let Some(&v) = memo.get(&(a.len(), b.len())) {
        return v;
    }
    let v = [
        brute_edit(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0]),
        brute_edit(&a[1..], b, memo) + 1,
        brute_edit(a, &b[1..], memo) + 1,
    ]
    .into_iter()
    .min()
    .unwrap();
    memo.insert((a.len(), b.len()), v);
    v
}

/// Nominal alpha from the coincidence matrix: `1 - (n - 1) * sum_{c != k} o_ck / sum_{c != k} n_c n_k`.
fn alpha_oracle(units: &[Vec<u8>]) -> Option<f64> {
    let mut o: BTreeMap<(u8, u8), f64> = BTreeMap::new();
    for u in units.iter().filter(|u| u.len() >= 2) {
        let m = u.len() as f64;
        for i in 0..u.len() {
            for j in 0..u.len() {
                if i != j {
                    *o.entry((u[i], u[j])).or_default() += 1.0 / (m - 1.0);
                }
            }
        }
    }
    let mut nc: BTreeMap<u8, f64> = BTreeMap::new();
    for (&(c, _), v) in &o {
        *nc.entry(c).or_default() += v;
    }
    let n: f64 = nc.values().sum();
    let disagree: f64 = o.iter().filter(|((c, k), _)| c != k).map(|(_, v)| v).sum();
    let mut expected = 0.0;
    for (c, a) in &nc {
        for (k, b) in &nc {
            if c != k {
                expected += a * b;
            }
        }
    }
    (expected > 0.0).then(|| 1.0 - (n - 1.0) * disagree / expected)
}

fn metrics_oracles() -> Check {
    let exact = cer("BB", "B8", CerOptions::default()).map_err(|e| e.to_string())?;
    ensure(exact == 0.5, || format!("cer(BB, B8) = {exact}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let alphabet = ['A', 'B', 'C', '8'];
    for i in 0..500 {
        let mut word = || -> String { (0..rng.random_range(0..=8)).map(|_| alphabet[rng.random_range(0..4)]).collect() };
        let (a, b) = (word(), word());
        let (ac, bc): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
        let want = brute_edit(&ac, &bc, &mut HashMap::new());
        ensure(edit_distance(&a, &b) == want, || format!("pair {i}: {a:?}/{b:?}"))?;
    }

    let mut worst = 0.0f64;
    let mut compared = 0;
    for case in 0..100 {
        let (items, raters, cats) = (rng.random_range(5..30), rng.random_range(2..5), rng.random_range(2..5u8));
        let mut triples = Vec::new();
        let mut units = Vec::new();
        for i in 0..items {
            let base = rng.random_range(0..cats);
            let mut unit = Vec::new();
            for r in 0..raters {
                if rng.random_bool(0.15) {
                    continue;
                }
                let v = if rng.random_bool(0.7) { base } else { rng.random_range(0..cats) };
                unit.push(v);
                triples.push((format!("i{i}"), format!("r{r}"), format!("c{v}")));
            }
            units.push(unit);
        }
        let m = RatingMatrix::from_triples(triples).map_err(|e| e.to_string())?;
        let got = match krippendorff_alpha(&m) {
            Ok(r) => r.alpha,
            Err(_) => None,
        };
        let want = alpha_oracle(&units);
        match (got, want) {
            (Some(g), Some(w)) => {
                worst = worst.max((g - w).abs());
                compared += 1;
            }
            (None, None) => {}
            other => return Err(format!("case {case}: {other:?}")),
        }
    }
    ensure(worst <= 1e-9, || format!("alpha deviation {worst:e}"))?;
    let perfect = RatingMatrix::from_triples([("a", "r1", "x"), ("a", "r2", "x"), ("b", "r1", "y"), ("b", "r2", "y")]).unwrap();
    let p = krippendorff_alpha(&perfect).map_err(|e| e.to_string())?.alpha;
    ensure(p == Some(1.0), || format!("perfect agreement gave {p:?}"))?;
    Ok(format!("cer 0.5 exact; 500 edit pairs; alpha max deviation {worst:e} over {compared} matrices"))
}

// --------------------------------------------------------------- end-to-end

fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&dir) else { continue };
        for e in entries {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn copy_tree(from: &Path, to: &Path) {
    for (rel, bytes) in tree_bytes(from) {
        let dest = to.join(rel);
        std::fs::create_dir_all(dest.parent().unwrap()).unwrap();
        std::fs::write(dest, bytes).unwrap();
    }
}

fn tuskmarks(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tuskmarks"))
        .args(args)
        .args(["--log-level", "warn"])
        .current_dir(dir)
        .env("TUSKMARKS_FIXED_CLOCK", "2024-03-01T12:00:00Z")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("tuskmarks {args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn end_to_end() -> Check {
    let bundled = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/corpus");
    let mut results = Vec::new();
    let mut slowest = Duration::ZERO;
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        copy_tree(&bundled, dir.path());
        let start = Instant::now();
        let first = tuskmarks(dir.path(), &["pipeline"])?;
        ensure(first.contains("halted at the review gate"), || first.clone())?;
        tuskmarks(dir.path(), &["review", "import", "--decisions", "decisions.tsv"])?;
        let done = tuskmarks(dir.path(), &["pipeline"])?;
        ensure(done.contains("pipeline complete"), || done.clone())?;
        slowest = slowest.max(start.elapsed());
        let tree = |d: &str| tree_bytes(&dir.path().join(d));
        results.push((tree("catalog"), tree("reports"), tree("models")));
    }
    ensure(results[0].0.len() * results[0].1.len() * results[0].2.len() > 0, || "nothing written".into())?;
    ensure(results[0].0 == results[1].0, || "catalogs differ".into())?;
    ensure(results[0].1 == results[1].1, || "reports differ".into())?;
    ensure(results[0].2 == results[1].2, || "models differ".into())?;
    ensure(slowest < Duration::from_secs(60), || format!("slowest run {slowest:?}"))?;
    Ok(format!(
        "{} catalog, {} report and {} model files identical; slowest run {:.1}s",
        results[0].0.len(),
        results[0].1.len(),
        results[0].2.len(),
        slowest.as_secs_f64()
    ))
}

fn main() {
    let runtime = tokio::runtime::Runtime::new().unwrap();
    let criteria: Vec<Criterion> = vec![
        ("geometry-oracle", Box::new(geometry_oracle)),
        ("postprocess-bookkeeping", Box::new(postprocess_bookkeeping)),
        ("evaluation-protocol", Box::new(evaluation_protocol)),
        ("pca-selection", Box::new(pca_selection)),
        ("svm-propagation", Box::new(svm_and_propagation)),
        ("annotation-orchestration", Box::new(|| runtime.block_on(annotation_counts()))),
        ("analysis-fixture", Box::new(analysis_fixture)),
        ("metrics-oracles", Box::new(metrics_oracles)),
        ("end-to-end-determinism", Box::new(end_to_end)),
    ];
    let mut unexpected = Vec::new();
    for (name, check) in &criteria {
        let known = KNOWN_FAILURES.iter().find(|(n, _)| n == name).map(|(_, why)| *why);
        match (check(), known) {
            (Ok(detail), None) => println!("PASS  {name}: {detail}"),
            (Ok(detail), Some(_)) => {
                println!("PASS  {name}: {detail} (listed as a known failure; remove the entry)");
                unexpected.push(*name);
            }
            (Err(why), None) => {
                println!("FAIL  {name}: {why}");
                unexpected.push(*name);
            }
            (Err(why), Some(reason)) => println!("FAIL  {name}: {why} [known: {reason}]"),
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected results: {}", unexpected.join(", "));
        std::process::exit(1);
    }
}
