use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CerError {
    #[error("reference text is empty")]
    EmptyReference,
    #[error("no transcription pairs")]
    NoPairs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CerOptions {
    /// Compare case-folded strings. On by default: tusk handwriting carries
    /// no reliable case.
    pub case_insensitive: bool,
}

impl Default for CerOptions {
    fn default() -> Self {
        Self {
            case_insensitive: true,
        }
    }
}

fn chars(s: &str, opts: CerOptions) -> Vec<char> {
    if opts.case_insensitive {
        s.chars().flat_map(char::to_uppercase).collect()
    } else {
        s.chars().collect()
    }
}

/// Levenshtein distance with unit costs, over Unicode scalar values.
pub fn edit_distance(a: &str, b: &str) -> usize {
    levenshtein(&a.chars().collect::<Vec<_>>(), &b.chars().collect::<Vec<_>>())
}

fn levenshtein(a: &[char], b: &[char]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let substitution = prev[j] + usize::from(ca != cb);
            cur[j + 1] = substitution.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn edits_and_len(reference: &str, hypothesis: &str, opts: CerOptions) -> Result<(usize, usize), CerError> {
    let r = chars(reference, opts);
    if r.is_empty() {
        return Err(CerError::EmptyReference);
    }
    Ok((levenshtein(&r, &chars(hypothesis, opts)), r.len()))
}

/// Character error rate: edit distance over reference length.
pub fn cer(reference: &str, hypothesis: &str, opts: CerOptions) -> Result<f64, CerError> {
    let (edits, len) = edits_and_len(reference, hypothesis, opts)?;
    Ok(edits as f64 / len as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusCer {
    pub pairs: usize,
    pub total_edits: usize,
    pub total_reference_chars: usize,
    /// Total edits over total reference length.
    pub overall: f64,
    /// Length-weighted rate over single-character references.
    pub single_char: Option<f64>,
    /// Length-weighted rate over references longer than one character.
    pub multi_char: Option<f64>,
    /// Unweighted mean of per-pair rates, for comparison.
    pub macro_average: f64,
}

/// Aggregate CER, length-weighted overall and per stratum.
pub fn corpus_cer(pairs: &[(String, String)], opts: CerOptions) -> Result<CorpusCer, CerError> {
    if pairs.is_empty() {
        return Err(CerError::NoPairs);
    }
    let (mut edits, mut len) = (0usize, 0usize);
    let (mut single_edits, mut single_len) = (0usize, 0usize);
    let (mut multi_edits, mut multi_len) = (0usize, 0usize);
    let mut rate_sum = 0.0;
    for (r, h) in pairs {
        let (e, n) = edits_and_len(r, h, opts)?;
        edits += e;
        len += n;
        rate_sum += e as f64 / n as f64;
        if n == 1 {
            single_edits += e;
            single_len += n;
        } else {
            multi_edits += e;
            multi_len += n;
        }
    }
    let ratio = |e: usize, n: usize| (n > 0).then(|| e as f64 / n as f64);
    Ok(CorpusCer {
        pairs: pairs.len(),
        total_edits: edits,
        total_reference_chars: len,
        overall: edits as f64 / len as f64,
        single_char: ratio(single_edits, single_len),
        multi_char: ratio(multi_edits, multi_len),
        macro_average: rate_sum / pairs.len() as f64,
    })
}
