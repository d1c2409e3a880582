use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPrecision {
    pub assigned: usize,
    pub correct: usize,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionReport {
    pub sample_size: usize,
    pub per_label: BTreeMap<String, LabelPrecision>,
    /// Correct over all assigned, across labels. `None` for an empty sample.
    pub overall: Option<f64>,
}

/// Per-label precision from an audited sample of `(item, assigned, truth)`.
pub fn sample_precision<S: AsRef<str>>(sample: &[(S, S, S)]) -> PrecisionReport {
    let mut per_label: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (_, assigned, truth) in sample {
        let e = per_label.entry(assigned.as_ref().to_string()).or_default();
        e.0 += 1;
        if assigned.as_ref() == truth.as_ref() {
            e.1 += 1;
        }
    }
    let correct: usize = per_label.values().map(|(_, c)| c).sum();
    PrecisionReport {
        sample_size: sample.len(),
        overall: (!sample.is_empty()).then(|| correct as f64 / sample.len() as f64),
        per_label: per_label
            .into_iter()
            .map(|(label, (assigned, correct))| {
                (
                    label,
                    LabelPrecision {
                        assigned,
                        correct,
                        precision: correct as f64 / assigned as f64,
                    },
                )
            })
            .collect(),
    }
}
