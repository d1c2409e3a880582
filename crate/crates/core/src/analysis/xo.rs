use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{normalize_symbol, normalize_text, AnalysisConfig, EvidenceKind, LinkReport};
use crate::catalog::{Catalog, Legibility, Marking, MarkingKind, SeizureId, Stage};

pub const LAMBDA_SIGNATURE: &str = "lambda x/o variation";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct XoFlags {
    pub pure_x: bool,
    pub xo_sequence: bool,
    pub lambda_terminated: bool,
    /// The marking's box touches the photograph's edge, so the sequence may
    /// continue beyond it.
    pub partial: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct XoMatch {
    pub marking_id: String,
    pub image_id: String,
    pub seizure: SeizureId,
    pub sequence: String,
    pub flags: XoFlags,
}

pub(super) fn is_lambda_symbol(name: &str) -> bool {
    matches!(normalize_symbol(name).as_deref(), Some("lambda" | "λ"))
}

/// The X/O run of a normalized text, if the text is nothing else (a trailing
/// lambda allowed), with whether the lambda was present.
pub(super) fn xo_sequence(key: &str) -> Option<(&str, bool)> {
    let (seq, lambda) = strip_lambda(key);
    (!seq.is_empty() && seq.chars().all(|c| c == 'X' || c == 'O') && seq.contains('X')).then_some((seq, lambda))
}

/// Splits a trailing lambda token off normalized text.
fn strip_lambda(key: &str) -> (&str, bool) {
    for token in ["LAMBDA", "Λ"] {
        if let Some(rest) = key.strip_suffix(token) {
            return (rest, true);
        }
    }
    (key, false)
}

fn followed_by_lambda(catalog: &Catalog, m: &Marking) -> bool {
    catalog.markings().any(|o| {
        o.image_id == m.image_id
            && o.bbox == m.bbox
            && o.part == m.part + 1
            && o.kind == MarkingKind::Symbolic
            && o.symbol_name.as_deref().is_some_and(is_lambda_symbol)
    })
}

/// Markings whose whole text is a sequence over {X, O} containing at least
/// one X, optionally closed by a lambda. The lambda may be written into the
/// text, be the next sub-marking of the same crop, or failing both, be
/// mentioned in the description.
pub fn find_xo_sequences(catalog: &Catalog, cfg: &AnalysisConfig) -> Vec<XoMatch> {
    let mut out = Vec::new();
    for m in catalog.markings() {
        if m.kind != MarkingKind::Textual
            || m.stage == Stage::PostSeizure
            || m.legibility == Legibility::Illegible
        {
            continue;
        }
        let Some(key) = m.text.as_deref().and_then(|t| normalize_text(t, cfg.confusables)) else {
            continue;
        };
        let Some((seq, lambda_in_text)) = xo_sequence(&key) else {
            continue;
        };
        let lambda = lambda_in_text
            || followed_by_lambda(catalog, m)
            || m.description.as_deref().is_some_and(|d| d.to_lowercase().contains("lambda"));
        let partial = catalog
            .image(&m.image_id)
            .is_some_and(|img| m.bbox.touches_image_border(img.width_px, img.height_px));
        out.push(XoMatch {
            marking_id: m.marking_id.clone(),
            image_id: m.image_id.clone(),
            seizure: m.seizure,
            sequence: seq.to_string(),
            flags: XoFlags {
                pure_x: !seq.contains('O'),
                xo_sequence: seq.contains('O'),
                lambda_terminated: lambda,
                partial,
            },
        });
    }
    out
}

/// Seizures sharing the lambda-terminated variant, reported as one link.
pub fn xo_variant_links(matches: &[XoMatch]) -> Vec<LinkReport> {
    let set: BTreeSet<SeizureId> = matches.iter().filter(|x| x.flags.lambda_terminated).map(|x| x.seizure).collect();
    if set.len() < 2 {
        return Vec::new();
    }
    vec![LinkReport {
        seizure_set: set.into_iter().collect(),
        shared_signatures: vec![LAMBDA_SIGNATURE.to_string()],
        evidence_kind: EvidenceKind::XoVariant,
    }]
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct XoSummary {
    pub matches: usize,
    pub images_with_x: usize,
    pub images_with_xo_sequence: usize,
    pub partial: usize,
    pub seizures: Vec<SeizureId>,
    pub lambda_seizures: Vec<SeizureId>,
}

impl XoSummary {
    pub fn from_matches(matches: &[XoMatch]) -> Self {
        let images = |f: fn(&XoMatch) -> bool| {
            matches.iter().filter(|x| f(x)).map(|x| &x.image_id).collect::<BTreeSet<_>>().len()
        };
        Self {
            matches: matches.len(),
            images_with_x: images(|_| true),
            images_with_xo_sequence: images(|x| x.flags.xo_sequence),
            partial: matches.iter().filter(|x| x.flags.partial).count(),
            seizures: matches.iter().map(|x| x.seizure).collect::<BTreeSet<_>>().into_iter().collect(),
            lambda_seizures: matches
                .iter()
                .filter(|x| x.flags.lambda_terminated)
                .map(|x| x.seizure)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        }
    }
}
