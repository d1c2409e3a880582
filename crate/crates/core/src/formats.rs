//! Tab-separated, newline-delimited input formats.
//!
//! Every format skips blank lines and lines starting with `#` (except the
//! embedding dimension header, which is `#dim=<d>`). Parsing never stops at a
//! bad line: good records are returned alongside one [`LineError`] per bad
//! line, numbered from 1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::catalog::{QueueName, SeizureId};
use crate::geometry::{BoundingBox, Detection};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for LineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub errors: Vec<LineError>,
}

impl<T> Default for Parsed<T> {
    fn default() -> Self {
        Self {
            records: Vec::new(),
            errors: Vec::new(),
        }
    }
}

/// Yields `(line_number, fields)` for every data line. A first line whose
/// first field equals `header` is treated as a column header.
fn data_lines<'a>(text: &'a str, header: &'a str) -> impl Iterator<Item = (usize, Vec<&'a str>)> + 'a {
    text.lines().enumerate().filter_map(move |(i, raw)| {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            return None;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if i == 0 && fields[0] == header {
            return None;
        }
        Some((i + 1, fields))
    })
}

fn parse_f64(field: &str, name: &str) -> Result<f64, String> {
    let v: f64 = field
        .parse()
        .map_err(|_| format!("{name}: {field:?} is not a number"))?;
    if !v.is_finite() {
        return Err(format!("{name}: non-finite value"));
    }
    Ok(v)
}

/// One image manifest entry: `image_id, seizure, path, width, height`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub line: usize,
    pub image_id: String,
    pub seizure: SeizureId,
    pub path: String,
    pub width: u32,
    pub height: u32,
}

pub fn parse_manifest(text: &str) -> Parsed<ManifestEntry> {
    let mut out = Parsed::default();
    for (line, f) in data_lines(text, "image_id") {
        let parsed = (|| {
            if f.len() != 5 {
                return Err(format!("expected 5 tab-separated fields, found {}", f.len()));
            }
            if f[0].is_empty() {
                return Err("empty image_id".to_string());
            }
            let seizure: SeizureId = f[1].parse()?;
            if f[2].is_empty() {
                return Err("empty path".to_string());
            }
            let dim = |s: &str, name: &str| -> Result<u32, String> {
                match s.parse::<u32>() {
                    Ok(v) if v > 0 => Ok(v),
                    _ => Err(format!("{name}: expected a positive integer, got {s:?}")),
                }
            };
            Ok(ManifestEntry {
                line,
                image_id: f[0].to_string(),
                seizure,
                path: f[2].to_string(),
                width: dim(f[3], "width")?,
                height: dim(f[4], "height")?,
            })
        })();
        match parsed {
            Ok(entry) => out.records.push(entry),
            Err(message) => out.errors.push(LineError { line, message }),
        }
    }
    out
}

/// Parses detection records: `image_id, x_min, y_min, x_max, y_max, confidence`.
pub fn parse_detections(text: &str) -> Parsed<Detection> {
    let mut out = Parsed::default();
    for (line, f) in data_lines(text, "image_id") {
        let parsed = (|| {
            if f.len() != 6 {
                return Err(format!("expected 6 tab-separated fields, found {}", f.len()));
            }
            let bbox = parse_box(&f[1..5])?;
            let confidence = parse_f64(f[5], "confidence")?;
            Detection::new(f[0], bbox, confidence).map_err(|e| e.to_string())
        })();
        match parsed {
            Ok(d) => out.records.push(d),
            Err(message) => out.errors.push(LineError { line, message }),
        }
    }
    out
}

fn parse_box(f: &[&str]) -> Result<BoundingBox, String> {
    let x_min = parse_f64(f[0], "x_min")?;
    let y_min = parse_f64(f[1], "y_min")?;
    let x_max = parse_f64(f[2], "x_max")?;
    let y_max = parse_f64(f[3], "y_max")?;
    BoundingBox::new(x_min, y_min, x_max, y_max).map_err(|e| e.to_string())
}

/// Boxes grouped per image, for evaluation input.
pub type BoxesByImage = BTreeMap<String, Vec<BoundingBox>>;

/// Parses evaluation boxes: `image_id, x_min, y_min, x_max, y_max[, confidence]`.
/// A line holding only an image id declares an image with no boxes.
pub fn parse_eval_boxes(text: &str) -> Parsed<(String, Option<BoundingBox>)> {
    let mut out = Parsed::default();
    for (line, f) in data_lines(text, "image_id") {
        let parsed = match f.len() {
            1 if !f[0].is_empty() => Ok((f[0].to_string(), None)),
            5 | 6 => parse_box(&f[1..5]).map(|b| (f[0].to_string(), Some(b))),
            n => Err(format!("expected 1, 5 or 6 tab-separated fields, found {n}")),
        };
        match parsed {
            Ok(r) => out.records.push(r),
            Err(message) => out.errors.push(LineError { line, message }),
        }
    }
    out
}

pub fn group_eval_boxes(records: &[(String, Option<BoundingBox>)]) -> BoxesByImage {
    let mut map = BoxesByImage::new();
    for (image, bbox) in records {
        let entry = map.entry(image.clone()).or_default();
        if let Some(b) = bbox {
            entry.push(*b);
        }
    }
    map
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub marking_id: String,
    pub values: Vec<f64>,
}

/// Parses an embedding file. The first data line must be `#dim=<d>`; every
/// record is `marking_id<TAB>v1,v2,...,vd`.
pub fn parse_embeddings(text: &str) -> Result<(usize, Parsed<EmbeddingRecord>), LineError> {
    let mut lines = text.lines().enumerate();
    let dim = loop {
        match lines.next() {
            None => {
                return Err(LineError {
                    line: 1,
                    message: "missing #dim=<d> header".to_string(),
                })
            }
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((i, l)) => {
                let l = l.trim();
                let d = l
                    .strip_prefix("#dim=")
                    .and_then(|d| d.trim().parse::<usize>().ok())
                    .filter(|&d| d > 0);
                break d.ok_or_else(|| LineError {
                    line: i + 1,
                    message: format!("expected #dim=<d> header, found {l:?}"),
                })?;
            }
        }
    };
    let mut out = Parsed::default();
    for (i, raw) in lines {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed = (|| {
            let (id, vals) = line
                .split_once('\t')
                .ok_or_else(|| "expected marking_id<TAB>values".to_string())?;
            let values = vals
                .split(',')
                .map(|v| parse_f64(v.trim(), "value"))
                .collect::<Result<Vec<f64>, String>>()?;
            if values.len() != dim {
                return Err(format!("expected {dim} values, found {}", values.len()));
            }
            Ok(EmbeddingRecord {
                marking_id: id.trim().to_string(),
                values,
            })
        })();
        match parsed {
            Ok(r) => out.records.push(r),
            Err(message) => out.errors.push(LineError { line: i + 1, message }),
        }
    }
    Ok((dim, out))
}

/// Renders embeddings in the format read by [`parse_embeddings`].
pub fn write_embeddings(dim: usize, records: &[EmbeddingRecord]) -> String {
    let mut s = format!("#dim={dim}\n");
    for r in records {
        s.push_str(&r.marking_id);
        s.push('\t');
        let vals: Vec<String> = r.values.iter().map(|v| v.to_string()).collect();
        s.push_str(&vals.join(","));
        s.push('\n');
    }
    s
}

/// `(item, rater, category)` triples.
pub fn parse_ratings(text: &str) -> Parsed<(String, String, String)> {
    parse_triples(text, "item")
}

/// `(item, assigned_label, true_label)` triples for precision audits.
pub fn parse_precision_sample(text: &str) -> Parsed<(String, String, String)> {
    parse_triples(text, "item")
}

fn parse_triples(text: &str, header: &str) -> Parsed<(String, String, String)> {
    let mut out = Parsed::default();
    for (line, f) in data_lines(text, header) {
        if f.len() == 3 && f.iter().all(|s| !s.is_empty()) {
            out.records
                .push((f[0].to_string(), f[1].to_string(), f[2].to_string()));
        } else {
            out.errors.push(LineError {
                line,
                message: format!("expected 3 non-empty tab-separated fields, found {}", f.len()),
            });
        }
    }
    out
}

/// `(reference, hypothesis)` transcription pairs. The hypothesis may be empty.
pub fn parse_text_pairs(text: &str) -> Parsed<(String, String)> {
    let mut out = Parsed::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') || (i == 0 && line.starts_with("reference\t")) {
            continue;
        }
        match line.split_once('\t') {
            Some((r, h)) if !h.contains('\t') => out.records.push((r.to_string(), h.to_string())),
            _ => out.errors.push(LineError {
                line: i + 1,
                message: "expected reference<TAB>hypothesis".to_string(),
            }),
        }
    }
    out
}


#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub queue: QueueName,
    pub marking_id: String,
    pub label: String,
    pub text: Option<String>,
}

/// Parses reviewer decisions: `queue, marking_id, label[, text]`.
pub fn parse_decisions(text: &str) -> Parsed<Decision> {
    let mut out = Parsed::default();
    for (line, f) in data_lines(text, "queue") {
        let parsed = (|| {
            if !(3..=4).contains(&f.len()) {
                return Err(format!("expected 3 or 4 tab-separated fields, found {}", f.len()));
            }
            let queue = QueueName::parse(f[0]).ok_or_else(|| format!("unknown queue {:?}", f[0]))?;
            if f[1].is_empty() || f[2].is_empty() {
                return Err("marking_id and label must be non-empty".to_string());
            }
            Ok(Decision {
                queue,
                marking_id: f[1].to_string(),
                label: f[2].to_string(),
                text: f.get(3).filter(|t| !t.is_empty()).map(|t| t.to_string()),
            })
        })();
        match parsed {
            Ok(d) => out.records.push(d),
            Err(message) => out.errors.push(LineError { line, message }),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_reports_bad_lines_and_keeps_going() {
        let text = "image_id\tseizure\tpath\twidth\theight\n\
                    a\t1\ta.png\t10\t10\n\
                    b\t1\tb.png\t10\t10\n\
                    c\tzero\tc.png\t10\t10\n\
                    d\t2\td.png\t10\t10\n\
                    e\t2\te.png\t10\t10\n";
        let parsed = parse_manifest(text);
        assert_eq!(parsed.records.len(), 4);
        assert_eq!(parsed.errors.len(), 1);
        assert_eq!(parsed.errors[0].line, 4);
    }

    #[test]
    fn detections_reject_degenerate_boxes() {
        let text = "img\t0\t0\t10\t10\t0.9\nimg\t5\t5\t5\t9\t0.5\nimg\t0\t0\t1\t1\t1.5\n";
        let parsed = parse_detections(text);
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(
            parsed.errors.iter().map(|e| e.line).collect::<Vec<_>>(),
            vec![2, 3]
        );
    }

    #[test]
    fn embeddings_round_trip() {
        let recs = vec![
            EmbeddingRecord {
                marking_id: "m1".into(),
                values: vec![0.5, -1.25],
            },
            EmbeddingRecord {
                marking_id: "m2".into(),
                values: vec![1e-3, 2.0],
            },
        ];
        let (dim, parsed) = parse_embeddings(&write_embeddings(2, &recs)).unwrap();
        assert_eq!(dim, 2);
        assert_eq!(parsed.records, recs);
        assert!(parsed.errors.is_empty());
    }

    #[test]
    fn embeddings_need_header_and_uniform_dimension() {
        assert!(parse_embeddings("m1\t1,2\n").is_err());
        let (_, parsed) = parse_embeddings("#dim=2\nm1\t1,2\nm2\t1,2,3\n").unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.errors[0].line, 3);
    }

    #[test]
    fn eval_boxes_allow_empty_images() {
        let parsed = parse_eval_boxes("a\nb\t0\t0\t1\t1\nb\t2\t2\t3\t3\t0.4\n");
        let grouped = group_eval_boxes(&parsed.records);
        assert_eq!(grouped["a"].len(), 0);
        assert_eq!(grouped["b"].len(), 2);
    }

    #[test]
    fn text_pairs_keep_empty_hypotheses() {
        let parsed = parse_text_pairs("reference\thypothesis\nBB\tB8\nXO\t\n");
        assert_eq!(
            parsed.records,
            vec![("BB".into(), "B8".into()), ("XO".into(), String::new())]
        );
    }
}
