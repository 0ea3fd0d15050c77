//! Readers and writers for the TSV/JSON dataset files.
//!
//! All files are UTF-8 with LF endings and tab-separated columns. Floats are
//! written with Rust's shortest round-trip formatting, so serialize → parse
//! is the identity. Parse errors carry the path and 1-based line number.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use super::{ClassId, ClassTable, FeatureRow, FeatureTable, LabelTable, SplitManifest, TagCorpus};
use super::{SemanticEmbeddingTable, WordEmbeddingTable};
use crate::{Error, Result};

pub(crate) fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

pub(crate) fn parse_finite(path: &Path, line: usize, field: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| parse_err(path, line, format!("invalid float {field:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite float {field:?}")));
    }
    Ok(v)
}

fn parse_dim_header(path: &Path, line: Option<&str>) -> Result<usize> {
    let line = line.ok_or_else(|| parse_err(path, 1, "empty file, expected #dim= header"))?;
    let rest = line
        .strip_prefix("#dim=")
        .ok_or_else(|| parse_err(path, 1, format!("expected #dim=<n> header, found {line:?}")))?;
    let dim: usize = rest
        .trim()
        .parse()
        .map_err(|_| parse_err(path, 1, format!("invalid dimension {rest:?}")))?;
    if dim == 0 {
        return Err(parse_err(path, 1, "dimension must be positive"));
    }
    Ok(dim)
}

/// `features.tsv`: `#dim=<d_v>` header, then `video_id<TAB>clip_index<TAB>f1..f_dv`.
pub fn read_features(path: &Path) -> Result<FeatureTable> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let dim = parse_dim_header(path, lines.next())?;
    let mut rows = Vec::new();
    let mut seen: HashSet<(String, u32)> = HashSet::new();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let mut fields = line.split('\t');
        let video_id = fields
            .next()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| parse_err(path, lineno, "missing video_id"))?
            .to_string();
        let clip_field = fields
            .next()
            .ok_or_else(|| parse_err(path, lineno, "missing clip_index"))?;
        let clip_index: u32 = clip_field
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("invalid clip_index {clip_field:?}")))?;
        let values: Vec<&str> = fields.collect();
        if values.len() != dim {
            return Err(parse_err(
                path,
                lineno,
                format!("{} feature values, expected {dim}", values.len()),
            ));
        }
        let mut feature = Vec::with_capacity(dim);
        for f in values {
            feature.push(parse_finite(path, lineno, f)?);
        }
        if !seen.insert((video_id.clone(), clip_index)) {
            return Err(parse_err(
                path,
                lineno,
                format!("duplicate clip ({video_id}, {clip_index})"),
            ));
        }
        rows.push(FeatureRow {
            video_id,
            clip_index,
            values: feature,
        });
    }
    Ok(FeatureTable { dim, rows })
}

pub fn write_features(table: &FeatureTable, path: &Path) -> Result<()> {
    let mut out = format!("#dim={}\n", table.dim);
    for row in &table.rows {
        out.push_str(&row.video_id);
        out.push('\t');
        out.push_str(&row.clip_index.to_string());
        for v in &row.values {
            out.push('\t');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    write_text(path, &out)
}

/// `labels.tsv`: `video_id<TAB>class_id`, one label per video.
pub fn read_labels(path: &Path) -> Result<LabelTable> {
    let text = read_text(path)?;
    let mut map = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let (video_id, class_field) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, lineno, "expected video_id<TAB>class_id"))?;
        let class_id: ClassId = class_field
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("invalid class_id {class_field:?}")))?;
        if map.insert(video_id.to_string(), class_id).is_some() {
            return Err(parse_err(path, lineno, format!("duplicate label for {video_id}")));
        }
    }
    Ok(LabelTable { map })
}

pub fn write_labels(labels: &LabelTable, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (video_id, class_id) in &labels.map {
        out.push_str(&format!("{video_id}\t{class_id}\n"));
    }
    write_text(path, &out)
}

/// `classes.tsv`: `class_id<TAB>class_name`; names are the retrieval query words.
pub fn read_classes(path: &Path) -> Result<ClassTable> {
    let text = read_text(path)?;
    let mut names = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let (class_field, name) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, lineno, "expected class_id<TAB>class_name"))?;
        let class_id: ClassId = class_field
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("invalid class_id {class_field:?}")))?;
        if name.is_empty() {
            return Err(parse_err(path, lineno, "empty class name"));
        }
        if names.insert(class_id, name.to_string()).is_some() {
            return Err(parse_err(path, lineno, format!("duplicate class_id {class_id}")));
        }
    }
    Ok(ClassTable { names })
}

pub fn write_classes(classes: &ClassTable, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (class_id, name) in &classes.names {
        out.push_str(&format!("{class_id}\t{name}\n"));
    }
    write_text(path, &out)
}

/// `splits.json`: object with keys "base", "val", "novel".
pub fn read_splits(path: &Path) -> Result<SplitManifest> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.line(), e.to_string()))
}

pub fn write_splits(splits: &SplitManifest, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(splits).expect("splits serialize");
    text.push('\n');
    write_text(path, &text)
}

/// `tags.tsv`: `video_id<TAB>tag1|tag2|...`; tags may contain spaces.
pub fn read_tags(path: &Path) -> Result<TagCorpus> {
    let text = read_text(path)?;
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let (video_id, tag_field) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, lineno, "expected video_id<TAB>tags"))?;
        let tags: Vec<String> = tag_field.split('|').map(str::to_string).collect();
        if tags.iter().any(String::is_empty) {
            return Err(parse_err(path, lineno, "empty tag"));
        }
        if !seen.insert(video_id.to_string()) {
            return Err(parse_err(path, lineno, format!("duplicate video_id {video_id}")));
        }
        rows.push(super::TagRow {
            video_id: video_id.to_string(),
            tags,
        });
    }
    Ok(TagCorpus { rows })
}

pub fn write_tags(corpus: &TagCorpus, path: &Path) -> Result<()> {
    let mut out = String::new();
    for row in &corpus.rows {
        out.push_str(&format!("{}\t{}\n", row.video_id, row.tags.join("|")));
    }
    write_text(path, &out)
}

fn embedding_norm_ok(values: &[f64]) -> bool {
    values.iter().any(|&v| v != 0.0)
}

/// `word_embeddings.tsv`: `#dim=<d_t>` header, then `token<TAB>v1..`.
pub fn read_word_embeddings(path: &Path) -> Result<WordEmbeddingTable> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let dim = parse_dim_header(path, lines.next())?;
    let mut map = BTreeMap::new();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let mut fields = line.split('\t');
        let token = fields
            .next()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| parse_err(path, lineno, "missing token"))?;
        let values: Vec<&str> = fields.collect();
        if values.len() != dim {
            return Err(parse_err(
                path,
                lineno,
                format!("{} values, expected {dim}", values.len()),
            ));
        }
        let mut vector = Vec::with_capacity(dim);
        for f in values {
            vector.push(parse_finite(path, lineno, f)?);
        }
        if !embedding_norm_ok(&vector) {
            return Err(parse_err(path, lineno, format!("zero-norm embedding for {token:?}")));
        }
        if map.insert(token.to_string(), vector).is_some() {
            return Err(parse_err(path, lineno, format!("duplicate token {token:?}")));
        }
    }
    Ok(WordEmbeddingTable { dim, map })
}

pub fn write_word_embeddings(table: &WordEmbeddingTable, path: &Path) -> Result<()> {
    let mut out = format!("#dim={}\n", table.dim);
    for (token, vector) in &table.map {
        out.push_str(token);
        for v in vector {
            out.push('\t');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    write_text(path, &out)
}

/// `class_embeddings.tsv`: `#dim=<d_y>` header, then `class_id<TAB>v1..`.
pub fn read_class_embeddings(path: &Path) -> Result<SemanticEmbeddingTable> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let dim = parse_dim_header(path, lines.next())?;
    let mut map = BTreeMap::new();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let mut fields = line.split('\t');
        let class_field = fields
            .next()
            .ok_or_else(|| parse_err(path, lineno, "missing class_id"))?;
        let class_id: ClassId = class_field
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("invalid class_id {class_field:?}")))?;
        let values: Vec<&str> = fields.collect();
        if values.len() != dim {
            return Err(parse_err(
                path,
                lineno,
                format!("{} values, expected {dim}", values.len()),
            ));
        }
        let mut vector = Vec::with_capacity(dim);
        for f in values {
            vector.push(parse_finite(path, lineno, f)?);
        }
        if !embedding_norm_ok(&vector) {
            return Err(parse_err(
                path,
                lineno,
                format!("zero-norm embedding for class {class_id}"),
            ));
        }
        if map.insert(class_id, vector).is_some() {
            return Err(parse_err(path, lineno, format!("duplicate class_id {class_id}")));
        }
    }
    Ok(SemanticEmbeddingTable { dim, map })
}

pub fn write_class_embeddings(table: &SemanticEmbeddingTable, path: &Path) -> Result<()> {
    let mut out = format!("#dim={}\n", table.dim);
    for (class_id, vector) in &table.map {
        out.push_str(&class_id.to_string());
        for v in vector {
            out.push('\t');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    write_text(path, &out)
}
