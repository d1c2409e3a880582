use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{Catalog, CatalogError, CatalogIndex, SCHEMA_VERSION};

const INDEX: &str = "index.json";
const IMAGES: &str = "images.jsonl";
const MARKINGS: &str = "markings.jsonl";
const TASKS: &str = "tasks.jsonl";
const CONFLICTS: &str = "conflicts.jsonl";
const AUDIT: &str = "audit.jsonl";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CatalogError + '_ {
    move |source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CatalogError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| CatalogError::Corrupt {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(SCHEMA_VERSION) => {}
            Some(v) => {
                return Err(CatalogError::SchemaVersion {
                    path: path.to_path_buf(),
                    found: v as u32,
                    expected: SCHEMA_VERSION,
                })
            }
            None => {
                return Err(CatalogError::Corrupt {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "missing schema_version".to_string(),
                })
            }
        }
        out.push(serde_json::from_value(value).map_err(|e| CatalogError::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub(super) fn load(root: PathBuf) -> Result<Catalog, CatalogError> {
    let index_path = root.join(INDEX);
    let index: CatalogIndex = match fs::read_to_string(&index_path) {
        Ok(text) => serde_json::from_str(&text).map_err(|e| CatalogError::Corrupt {
            path: index_path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => CatalogIndex::default(),
        Err(e) => return Err(io_err(&index_path)(e)),
    };
    if index.schema_version != SCHEMA_VERSION {
        return Err(CatalogError::SchemaVersion {
            path: index_path,
            found: index.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    let images: Vec<super::ImageRecord> = read_jsonl(&root.join(IMAGES))?;
    let markings: Vec<super::Marking> = read_jsonl(&root.join(MARKINGS))?;
    let tasks: Vec<super::ReviewTask> = read_jsonl(&root.join(TASKS))?;
    let catalog = Catalog {
        index,
        images: images.into_iter().map(|r| (r.image_id.clone(), r)).collect(),
        markings: markings
            .into_iter()
            .map(|m| (m.marking_id.clone(), m))
            .collect(),
        tasks: tasks.into_iter().map(|t| (t.task_id.clone(), t)).collect(),
        conflicts: read_jsonl(&root.join(CONFLICTS))?,
        audit: read_jsonl(&root.join(AUDIT))?,
        root: Some(root),
    };
    catalog.check_integrity()?;
    Ok(catalog)
}

fn render_jsonl<'a, T: Serialize + 'a>(records: impl IntoIterator<Item = &'a T>) -> Vec<u8> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("catalog records serialize");
        buf.push(b'\n');
    }
    buf
}

/// Writes `bytes` to `path` via a temporary file, fsync and rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CatalogError> {
    if fs::read(path).is_ok_and(|existing| existing == bytes) {
        return Ok(());
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

pub(super) fn save(root: &Path, c: &Catalog) -> Result<(), CatalogError> {
    fs::create_dir_all(root).map_err(io_err(root))?;
    write_atomic(&root.join(IMAGES), &render_jsonl(c.images.values()))?;
    write_atomic(&root.join(MARKINGS), &render_jsonl(c.markings.values()))?;
    write_atomic(&root.join(TASKS), &render_jsonl(c.tasks.values()))?;
    write_atomic(&root.join(CONFLICTS), &render_jsonl(c.conflicts.iter()))?;
    write_atomic(&root.join(AUDIT), &render_jsonl(c.audit.iter()))?;
    let mut index = serde_json::to_vec_pretty(&c.index).expect("index serializes");
    index.push(b'\n');
    // index last: a crash mid-save leaves the previous index pointing at
    // record files that are each internally consistent
    write_atomic(&root.join(INDEX), &index)?;
    if let Ok(dir) = fs::File::open(root) {
        let _ = dir.sync_all();
    }
    Ok(())
}
