//! Signature-marking index, cross-seizure links, frequency statistics, X/O
//! sequence search and description search. Everything here is a pure
//! function of a catalog snapshot.

mod search;
mod xo;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, Legibility, Marking, MarkingKind, SeizureId, Stage};

pub use search::{search_descriptions, SearchHit};
pub use xo::{find_xo_sequences, xo_variant_links, XoFlags, XoMatch, XoSummary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Occurrences needed before a key counts as a signature marking.
    pub recurrence_threshold: usize,
    /// Cut-off for the high-frequency subset in frequency statistics.
    pub frequency_threshold: usize,
    pub top_k: usize,
    /// Fold look-alike characters (0/O, 1/I, 5/S, 8/B) before grouping.
    pub confusables: bool,
    /// Length of an all-letter key that is treated as a pair of initials.
    pub initial_pair_len: usize,
    pub max_examples: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            recurrence_threshold: 2,
            frequency_threshold: 10,
            top_k: 10,
            confusables: false,
            initial_pair_len: 2,
            max_examples: 5,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.recurrence_threshold < 1 {
            return Err("recurrence_threshold must be at least 1".into());
        }
        if self.frequency_threshold < 1 {
            return Err("frequency_threshold must be at least 1".into());
        }
        if self.initial_pair_len < 1 {
            return Err("initial_pair_len must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignatureCategory {
    InitialPair,
    LongerText,
    Symbol,
}

impl SignatureCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            SignatureCategory::InitialPair => "initial_pair",
            SignatureCategory::LongerText => "longer_text",
            SignatureCategory::Symbol => "symbol",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "initial_pair" => Some(SignatureCategory::InitialPair),
            "longer_text" => Some(SignatureCategory::LongerText),
            "symbol" => Some(SignatureCategory::Symbol),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SignatureKey {
    pub key: String,
    pub category: SignatureCategory,
}

fn fold_confusable(c: char) -> char {
    match c {
        '0' => 'O',
        '1' => 'I',
        '5' => 'S',
        '8' => 'B',
        other => other,
    }
}

/// Uppercases and strips all whitespace. `None` when nothing is left.
pub fn normalize_text(text: &str, confusables: bool) -> Option<String> {
    let key: String = text
        .chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_uppercase)
        .map(|c| if confusables { fold_confusable(c) } else { c })
        .collect();
    (!key.is_empty()).then_some(key)
}

/// Lowercases and collapses runs of whitespace to a single space.
pub fn normalize_symbol(name: &str) -> Option<String> {
    let key = name.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    (!key.is_empty()).then_some(key)
}

fn categorize_text(key: &str, cfg: &AnalysisConfig) -> SignatureCategory {
    if key.chars().count() == cfg.initial_pair_len && key.chars().all(char::is_alphabetic) {
        SignatureCategory::InitialPair
    } else {
        SignatureCategory::LongerText
    }
}

/// Canonical signature key of a marking, or `None` if it takes no part in
/// signature analysis: post-seizure, illegible, without text or symbol, or
/// part of an X/O sequence (those are matched by [`find_xo_sequences`]).
pub fn normalize_key(m: &Marking, cfg: &AnalysisConfig) -> Option<SignatureKey> {
    if m.stage == Stage::PostSeizure || m.legibility == Legibility::Illegible {
        return None;
    }
    match m.kind {
        MarkingKind::Textual => {
            let key = normalize_text(m.text.as_deref()?, cfg.confusables)?;
            if xo::xo_sequence(&key).is_some() {
                return None;
            }
            Some(SignatureKey {
                category: categorize_text(&key, cfg),
                key,
            })
        }
        MarkingKind::Symbolic => {
            let key = normalize_symbol(m.symbol_name.as_deref()?)?;
            if xo::is_lambda_symbol(&key) {
                return None;
            }
            Some(SignatureKey {
                key,
                category: SignatureCategory::Symbol,
            })
        }
        MarkingKind::None | MarkingKind::Unknown => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureGroup {
    pub key: String,
    pub category: SignatureCategory,
    pub occurrences: BTreeMap<SeizureId, usize>,
    pub example_marking_ids: Vec<String>,
    pub recurring: bool,
}

impl SignatureGroup {
    pub fn total(&self) -> usize {
        self.occurrences.values().sum()
    }

    pub fn seizures(&self) -> BTreeSet<SeizureId> {
        self.occurrences.iter().filter(|(_, &n)| n > 0).map(|(&s, _)| s).collect()
    }
}

/// Groups markings by signature key, ordered by category then key. Keys seen
/// fewer than `recurrence_threshold` times are kept with `recurring = false`.
pub fn build_signature_index(catalog: &Catalog, cfg: &AnalysisConfig) -> Vec<SignatureGroup> {
    let mut groups: BTreeMap<SignatureKey, (BTreeMap<SeizureId, usize>, Vec<String>)> = BTreeMap::new();
    for m in catalog.markings() {
        let Some(k) = normalize_key(m, cfg) else { continue };
        let (occ, ids) = groups.entry(k).or_default();
        *occ.entry(m.seizure).or_default() += 1;
        // markings iterate in id order, so these are the smallest ids
        if ids.len() < cfg.max_examples {
            ids.push(m.marking_id.clone());
        }
    }
    groups
        .into_iter()
        .map(|(k, (occurrences, example_marking_ids))| {
            let total: usize = occurrences.values().sum();
            SignatureGroup {
                key: k.key,
                category: k.category,
                occurrences,
                example_marking_ids,
                recurring: total >= cfg.recurrence_threshold,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceKind {
    SignatureMatch,
    XoVariant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkReport {
    pub seizure_set: Vec<SeizureId>,
    pub shared_signatures: Vec<String>,
    pub evidence_kind: EvidenceKind,
}

fn link_order(a: &LinkReport, b: &LinkReport) -> std::cmp::Ordering {
    a.seizure_set
        .len()
        .cmp(&b.seizure_set.len())
        .then_with(|| a.seizure_set.cmp(&b.seizure_set))
        .then(a.evidence_kind.cmp(&b.evidence_kind))
}

/// One report per exact seizure set. A signature seen in seizures {2, 5, 8}
/// counts toward (2, 5, 8) only, never toward its pairs.
pub fn cross_seizure_links(index: &[SignatureGroup]) -> Vec<LinkReport> {
    let mut by_set: BTreeMap<Vec<SeizureId>, Vec<String>> = BTreeMap::new();
    for g in index.iter().filter(|g| g.recurring) {
        let set: Vec<SeizureId> = g.seizures().into_iter().collect();
        if set.len() >= 2 {
            by_set.entry(set).or_default().push(g.key.clone());
        }
    }
    let mut out: Vec<LinkReport> = by_set
        .into_iter()
        .map(|(seizure_set, mut shared_signatures)| {
            shared_signatures.sort();
            LinkReport {
                seizure_set,
                shared_signatures,
                evidence_kind: EvidenceKind::SignatureMatch,
            }
        })
        .collect();
    out.sort_by(link_order);
    out
}

/// Signature links plus X/O-variant links, in table order.
pub fn all_links(index: &[SignatureGroup], xo: &[XoMatch]) -> Vec<LinkReport> {
    let mut out = cross_seizure_links(index);
    out.extend(xo_variant_links(xo));
    out.sort_by(link_order);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyStats {
    pub category: SignatureCategory,
    pub threshold: usize,
    pub unique_keys: usize,
    pub total_occurrences: usize,
    pub high_frequency_keys: usize,
    pub high_frequency_occurrences: usize,
    pub key_share: f64,
    pub occurrence_share: f64,
    pub remainder_share: f64,
    pub top: Vec<(String, usize)>,
}

pub fn frequency_stats(
    index: &[SignatureGroup],
    category: SignatureCategory,
    threshold: usize,
    top_k: usize,
) -> FrequencyStats {
    let mut counts: Vec<(String, usize)> = index
        .iter()
        .filter(|g| g.category == category)
        .map(|g| (g.key.clone(), g.total()))
        .collect();
    counts.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let unique_keys = counts.len();
    let total_occurrences: usize = counts.iter().map(|c| c.1).sum();
    let high: Vec<usize> = counts.iter().map(|c| c.1).filter(|&n| n >= threshold).collect();
    let high_occ: usize = high.iter().sum();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    FrequencyStats {
        category,
        threshold,
        unique_keys,
        total_occurrences,
        high_frequency_keys: high.len(),
        high_frequency_occurrences: high_occ,
        key_share: ratio(high.len(), unique_keys),
        occurrence_share: ratio(high_occ, total_occurrences),
        remainder_share: ratio(total_occurrences - high_occ, total_occurrences),
        top: counts.into_iter().take(top_k).collect(),
    }
}

impl FrequencyStats {
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "category: {}", self.category.as_str());
        let _ = writeln!(s, "unique keys: {}", self.unique_keys);
        let _ = writeln!(s, "total occurrences: {}", self.total_occurrences);
        let _ = writeln!(
            s,
            "keys with >= {} occurrences: {} of {} ({:.1}%)",
            self.threshold,
            self.high_frequency_keys,
            self.unique_keys,
            100.0 * self.key_share
        );
        let _ = writeln!(
            s,
            "their occurrences: {} of {} ({:.1}%)",
            self.high_frequency_occurrences,
            self.total_occurrences,
            100.0 * self.occurrence_share
        );
        for (i, (k, n)) in self.top.iter().enumerate() {
            let _ = writeln!(s, "{:>3}. {k}\t{n}", i + 1);
        }
        s
    }
}

fn set_label(set: &[SeizureId]) -> String {
    set.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("+")
}

/// Seizure combinations and the evidence connecting them.
pub fn render_links_table(links: &[LinkReport]) -> String {
    let mut s = String::from("Seizures\tEvidence\n");
    for l in links {
        let evidence = match l.evidence_kind {
            EvidenceKind::XoVariant => "Lambda X/O variation".to_string(),
            EvidenceKind::SignatureMatch => {
                let n = l.shared_signatures.len();
                format!("{n} shared signature marking{}", if n == 1 { "" } else { "s" })
            }
        };
        let _ = writeln!(s, "{}\t{}", set_label(&l.seizure_set), evidence);
    }
    s
}

/// Per-seizure occurrence counts of every signature found in two or more
/// seizures, most frequent first.
pub fn render_occurrence_table(index: &[SignatureGroup], seizures: &BTreeSet<SeizureId>) -> String {
    let mut rows: Vec<&SignatureGroup> = index
        .iter()
        .filter(|g| g.recurring && g.seizures().len() >= 2)
        .collect();
    rows.sort_by(|a, b| b.total().cmp(&a.total()).then_with(|| a.key.cmp(&b.key)));
    let mut s = String::from("Signature\tCategory");
    for z in seizures {
        let _ = write!(s, "\t{z}");
    }
    s.push('\n');
    for g in rows {
        let _ = write!(s, "{}\t{}", g.key, g.category.as_str());
        for z in seizures {
            let _ = write!(s, "\t{}", g.occurrences.get(z).copied().unwrap_or(0));
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub signature_groups: usize,
    pub recurring_signatures: usize,
    pub cross_seizure_signatures: usize,
    pub indexed_markings: usize,
    pub links: Vec<LinkReport>,
    pub frequency: FrequencyStats,
    pub xo: XoSummary,
}

pub struct Analysis {
    pub index: Vec<SignatureGroup>,
    pub xo: Vec<XoMatch>,
    pub report: AnalysisReport,
}

pub fn analyze(catalog: &Catalog, cfg: &AnalysisConfig) -> Analysis {
    let index = build_signature_index(catalog, cfg);
    let xo = find_xo_sequences(catalog, cfg);
    let links = all_links(&index, &xo);
    let report = AnalysisReport {
        signature_groups: index.len(),
        recurring_signatures: index.iter().filter(|g| g.recurring).count(),
        cross_seizure_signatures: index.iter().filter(|g| g.recurring && g.seizures().len() >= 2).count(),
        indexed_markings: index.iter().map(SignatureGroup::total).sum(),
        links,
        frequency: frequency_stats(&index, SignatureCategory::InitialPair, cfg.frequency_threshold, cfg.top_k),
        xo: XoSummary::from_matches(&xo),
    };
    Analysis { index, xo, report }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{ImageRecord, Rotation, SCHEMA_VERSION};
    use crate::geometry::BoundingBox;
    use proptest::prelude::*;

    fn catalog_with(entries: &[(u32, MarkingKind, &str, Stage)]) -> Catalog {
        catalog_and_ids(entries).0
    }

    /// Also returns marking ids in entry order.
    fn catalog_and_ids(entries: &[(u32, MarkingKind, &str, Stage)]) -> (Catalog, Vec<String>) {
        let mut c = Catalog::in_memory();
        let mut manifest = String::new();
        for (i, (s, ..)) in entries.iter().enumerate() {
            manifest.push_str(&format!("img{i:04}\t{s}\timg{i:04}.png\t100\t100\n"));
        }
        c.ingest_images(&manifest, None);
        let ms: Vec<Marking> = entries
            .iter()
            .enumerate()
            .map(|(i, (_, kind, value, stage))| {
                let img: ImageRecord = c.image(&format!("img{i:04}")).unwrap().clone();
                let mut m = Marking::extracted(&img, BoundingBox::new(10.0, 10.0, 50.0, 40.0).unwrap(), 0.9, 1);
                m.kind = *kind;
                m.stage = *stage;
                m.legibility = Legibility::Legible;
                match kind {
                    MarkingKind::Textual => m.text = Some(value.to_string()),
                    MarkingKind::Symbolic => m.symbol_name = Some(value.to_string()),
                    _ => {}
                }
                assert_eq!((m.rotation, m.schema_version), (Rotation::R0, SCHEMA_VERSION));
                m
            })
            .collect::<Vec<Marking>>();
        let ids = ms.iter().map(|m| m.marking_id.clone()).collect();
        c.upsert_markings(ms).unwrap();
        (c, ids)
    }

    fn sz(n: u32) -> SeizureId {
        SeizureId::new(n).unwrap()
    }

    #[test]
    fn normalization_examples() {
        let cfg = AnalysisConfig::default();
        let (c, ids) = catalog_and_ids(&[
            (2, MarkingKind::Textual, " bb ", Stage::PreSeizure),
            (2, MarkingKind::Textual, "BB", Stage::PostSeizure),
            (5, MarkingKind::Symbolic, "Circled  Z", Stage::Unknown),
            (5, MarkingKind::Textual, "b 8", Stage::PreSeizure),
        ]);
        let keys: Vec<Option<SignatureKey>> = ids.iter().map(|id| normalize_key(c.marking(id).unwrap(), &cfg)).collect();
        assert_eq!(
            keys,
            vec![
                Some(SignatureKey { key: "BB".into(), category: SignatureCategory::InitialPair }),
                None,
                Some(SignatureKey { key: "circled z".into(), category: SignatureCategory::Symbol }),
                Some(SignatureKey { key: "B8".into(), category: SignatureCategory::LongerText }),
            ]
        );
        let folded = AnalysisConfig { confusables: true, ..cfg };
        assert_eq!(normalize_key(c.marking(&ids[3]).unwrap(), &folded).unwrap().key, "BB");
    }

    #[test]
    fn illegible_and_unannotated_are_excluded() {
        let (mut c, ids) = catalog_and_ids(&[
            (1, MarkingKind::Textual, "AB", Stage::PreSeizure),
            (1, MarkingKind::Unknown, "AB", Stage::PreSeizure),
        ]);
        c.marking_mut(&ids[0]).unwrap().legibility = Legibility::Illegible;
        assert!(c.markings().all(|m| normalize_key(m, &AnalysisConfig::default()).is_none()));
    }

    #[test]
    fn xo_sequences_are_not_signatures() {
        let c = catalog_with(&[
            (2, MarkingKind::Textual, "XOX", Stage::PreSeizure),
            (3, MarkingKind::Textual, "x o x", Stage::PreSeizure),
            (2, MarkingKind::Symbolic, "Lambda", Stage::PreSeizure),
            (3, MarkingKind::Symbolic, "lambda", Stage::PreSeizure),
            (3, MarkingKind::Textual, "BOX", Stage::PreSeizure),
        ]);
        let idx = build_signature_index(&c, &AnalysisConfig::default());
        assert_eq!(idx.iter().map(|g| g.key.as_str()).collect::<Vec<_>>(), vec!["BOX"]);
    }

    #[test]
    fn mixed_case_collapses_to_one_group() {
        let c = catalog_with(&[
            (2, MarkingKind::Textual, "bb", Stage::PreSeizure),
            (2, MarkingKind::Textual, "BB", Stage::PreSeizure),
            (5, MarkingKind::Textual, "Bb", Stage::PreSeizure),
        ]);
        let idx = build_signature_index(&c, &AnalysisConfig::default());
        assert_eq!(idx.len(), 1);
        assert_eq!(idx[0].occurrences, BTreeMap::from([(sz(2), 2), (sz(5), 1)]));
        assert!(idx[0].recurring);
    }

    #[test]
    fn unique_keys_are_kept_but_not_recurring() {
        let c = catalog_with(&[
            (1, MarkingKind::Textual, "AB", Stage::PreSeizure),
            (2, MarkingKind::Textual, "CD", Stage::PreSeizure),
            (3, MarkingKind::Symbolic, "star", Stage::PreSeizure),
        ]);
        let idx = build_signature_index(&c, &AnalysisConfig::default());
        assert_eq!(idx.len(), 3);
        assert!(idx.iter().all(|g| !g.recurring));
        assert!(cross_seizure_links(&idx).is_empty());
    }

    #[test]
    fn text_and_symbol_with_same_spelling_stay_apart() {
        let c = catalog_with(&[
            (1, MarkingKind::Textual, "z", Stage::PreSeizure),
            (2, MarkingKind::Symbolic, "Z", Stage::PreSeizure),
        ]);
        assert_eq!(build_signature_index(&c, &AnalysisConfig::default()).len(), 2);
    }

    #[test]
    fn three_way_signature_only_reports_the_exact_set() {
        let mut entries = Vec::new();
        for s in [2, 5, 8] {
            entries.push((s, MarkingKind::Textual, "BB", Stage::PreSeizure));
        }
        entries.push((2, MarkingKind::Textual, "VV", Stage::PreSeizure));
        entries.push((8, MarkingKind::Textual, "VV", Stage::PreSeizure));
        let c = catalog_with(&entries);
        let links = cross_seizure_links(&build_signature_index(&c, &AnalysisConfig::default()));
        let sets: Vec<(Vec<u32>, Vec<String>)> = links
            .iter()
            .map(|l| (l.seizure_set.iter().map(|s| s.get()).collect(), l.shared_signatures.clone()))
            .collect();
        assert_eq!(
            sets,
            vec![(vec![2, 8], vec!["VV".to_string()]), (vec![2, 5, 8], vec!["BB".to_string()])]
        );
        assert_eq!(render_links_table(&links), "Seizures\tEvidence\n2+8\t1 shared signature marking\n2+5+8\t1 shared signature marking\n");
    }

    #[test]
    fn frequency_edge_cases() {
        let c = catalog_with(&[
            (1, MarkingKind::Textual, "AB", Stage::PreSeizure),
            (1, MarkingKind::Textual, "CD", Stage::PreSeizure),
        ]);
        let idx = build_signature_index(&c, &AnalysisConfig::default());
        let f = frequency_stats(&idx, SignatureCategory::InitialPair, 10, 5);
        assert_eq!((f.unique_keys, f.total_occurrences, f.high_frequency_keys), (2, 2, 0));
        assert_eq!(f.remainder_share, 1.0);
        let empty = frequency_stats(&[], SignatureCategory::Symbol, 10, 5);
        assert_eq!((empty.unique_keys, empty.key_share), (0, 0.0));
    }

    #[test]
    fn top_keys_by_count() {
        let mut entries = Vec::new();
        for _ in 0..267 {
            entries.push((3, MarkingKind::Textual, "QR", Stage::PreSeizure));
        }
        for _ in 0..169 {
            entries.push((4, MarkingKind::Textual, "ST", Stage::PreSeizure));
        }
        entries.push((4, MarkingKind::Textual, "UV", Stage::PreSeizure));
        let c = catalog_with(&entries);
        let f = frequency_stats(&build_signature_index(&c, &AnalysisConfig::default()), SignatureCategory::InitialPair, 10, 2);
        assert_eq!(f.top, vec![("QR".to_string(), 267), ("ST".to_string(), 169)]);
    }

    fn arb_text() -> impl Strategy<Value = String> {
        proptest::string::string_regex("[ a-zA-Z0-9\\t]{0,8}").unwrap()
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(s in arb_text(), fold in any::<bool>()) {
            if let Some(k) = normalize_text(&s, fold) {
                prop_assert_eq!(normalize_text(&k, fold), Some(k.clone()));
            }
            if let Some(k) = normalize_symbol(&s) {
                prop_assert_eq!(normalize_symbol(&k), Some(k.clone()));
            }
        }

        #[test]
        fn index_and_links_are_sound(
            rows in proptest::collection::vec((1u32..6, 0usize..6, any::<bool>(), any::<bool>()), 0..60)
        ) {
            const KEYS: [&str; 6] = ["AB", "ab", "CD", "XYZ", "EF", "G H"];
            let entries: Vec<(u32, MarkingKind, &str, Stage)> = rows
                .iter()
                .map(|&(s, k, sym, post)| {
                    let kind = if sym { MarkingKind::Symbolic } else { MarkingKind::Textual };
                    let stage = if post { Stage::PostSeizure } else { Stage::PreSeizure };
                    (s, kind, KEYS[k], stage)
                })
                .collect();
            let c = catalog_with(&entries);
            let cfg = AnalysisConfig::default();
            let idx = build_signature_index(&c, &cfg);
            let keyed = c.markings().filter(|m| normalize_key(m, &cfg).is_some()).count();
            prop_assert_eq!(idx.iter().map(SignatureGroup::total).sum::<usize>(), keyed);
            let links = cross_seizure_links(&idx);
            let mut seen = BTreeSet::new();
            for l in &links {
                prop_assert!(l.seizure_set.len() >= 2);
                for key in &l.shared_signatures {
                    let g = idx.iter().find(|g| &g.key == key && g.seizures().into_iter().eq(l.seizure_set.iter().copied())).unwrap();
                    for s in &l.seizure_set {
                        prop_assert!(g.occurrences[s] > 0);
                    }
                    prop_assert!(seen.insert((g.key.clone(), g.category)));
                }
            }
            let multi = idx.iter().filter(|g| g.recurring && g.seizures().len() >= 2).count();
            prop_assert_eq!(seen.len(), multi);
            for cat in [SignatureCategory::InitialPair, SignatureCategory::LongerText, SignatureCategory::Symbol] {
                let f = frequency_stats(&idx, cat, 3, 3);
                if f.total_occurrences > 0 {
                    prop_assert!((f.occurrence_share + f.remainder_share - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}
