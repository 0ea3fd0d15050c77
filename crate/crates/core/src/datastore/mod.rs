//! Dataset formats, ingestion, validation, and min-max feature rescaling.
//!
//! A bundle directory holds `features.tsv`, `labels.tsv`, `classes.tsv`,
//! `splits.json`, and optionally `tags.tsv`, `word_embeddings.tsv`, and
//! `class_embeddings.tsv`. Loaded bundles are immutable and validated:
//! every labeled video has features, split classes are disjoint and carry
//! labels, and tag-corpus videos have features so retrieved clips exist.

pub(crate) mod formats;
mod scaler;

pub use formats::{
    read_class_embeddings, read_classes, read_features, read_labels, read_splits, read_tags,
    read_word_embeddings, write_class_embeddings, write_classes, write_features, write_labels,
    write_splits, write_tags, write_word_embeddings,
};
pub use scaler::{fit_minmax, MinMaxScaler};

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use crate::error::offender_list;
use crate::{Error, Result};

/// Class identifier as used in labels, splits, and embeddings.
pub type ClassId = u32;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub video_id: String,
    pub clip_index: u32,
    pub values: Vec<f64>,
}

/// Precomputed clip features: `dim` values per row, one row per clip.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub dim: usize,
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    /// Row indices grouped per video, clips sorted by clip_index.
    /// Row order in the file does not affect the result.
    pub fn clips_by_video(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, row) in self.rows.iter().enumerate() {
            map.entry(row.video_id.as_str()).or_default().push(i);
        }
        for indices in map.values_mut() {
            indices.sort_by_key(|&i| self.rows[i].clip_index);
        }
        map
    }
}

/// One label per video.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct LabelTable {
    pub map: BTreeMap<String, ClassId>,
}

/// Class display names; the tokens double as retrieval query words.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ClassTable {
    pub names: BTreeMap<ClassId, String>,
}

/// Disjoint base/val/novel class splits.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub base: Vec<ClassId>,
    #[serde(default)]
    pub val: Vec<ClassId>,
    pub novel: Vec<ClassId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TagRow {
    pub video_id: String,
    pub tags: Vec<String>,
}

/// User-tagged external videos available for retrieval.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TagCorpus {
    pub rows: Vec<TagRow>,
}

/// Token → d_t embedding map for tags and class-name words.
#[derive(Clone, Debug, PartialEq)]
pub struct WordEmbeddingTable {
    pub dim: usize,
    pub map: BTreeMap<String, Vec<f64>>,
}

/// Class → d_y semantic embedding map conditioning the feature generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticEmbeddingTable {
    pub dim: usize,
    pub map: BTreeMap<ClassId, Vec<f64>>,
}

/// Validated dataset bundle.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub features: FeatureTable,
    pub labels: LabelTable,
    pub classes: Option<ClassTable>,
    pub splits: SplitManifest,
    pub tags: Option<TagCorpus>,
    pub word_embeddings: Option<WordEmbeddingTable>,
    pub class_embeddings: Option<SemanticEmbeddingTable>,
}

/// File locations for one bundle; optional members may be absent.
#[derive(Clone, Debug)]
pub struct DatasetPaths {
    pub features: PathBuf,
    pub labels: PathBuf,
    pub splits: PathBuf,
    pub classes: Option<PathBuf>,
    pub tags: Option<PathBuf>,
    pub word_embeddings: Option<PathBuf>,
    pub class_embeddings: Option<PathBuf>,
}

impl DatasetPaths {
    /// Standard filenames under one directory; optional files are picked up
    /// when present.
    pub fn in_dir(dir: &Path) -> Self {
        let opt = |name: &str| {
            let p = dir.join(name);
            p.exists().then_some(p)
        };
        DatasetPaths {
            features: dir.join("features.tsv"),
            labels: dir.join("labels.tsv"),
            splits: dir.join("splits.json"),
            classes: opt("classes.tsv"),
            tags: opt("tags.tsv"),
            word_embeddings: opt("word_embeddings.tsv"),
            class_embeddings: opt("class_embeddings.tsv"),
        }
    }
}

/// Loads and validates a bundle.
pub fn load_dataset(paths: &DatasetPaths) -> Result<Dataset> {
    let dataset = Dataset {
        features: read_features(&paths.features)?,
        labels: read_labels(&paths.labels)?,
        splits: read_splits(&paths.splits)?,
        classes: paths.classes.as_deref().map(read_classes).transpose()?,
        tags: paths.tags.as_deref().map(read_tags).transpose()?,
        word_embeddings: paths
            .word_embeddings
            .as_deref()
            .map(read_word_embeddings)
            .transpose()?,
        class_embeddings: paths
            .class_embeddings
            .as_deref()
            .map(read_class_embeddings)
            .transpose()?,
    };
    validate_dataset(&dataset)?;
    Ok(dataset)
}

impl Dataset {
    pub fn load_dir(dir: &Path) -> Result<Dataset> {
        load_dataset(&DatasetPaths::in_dir(dir))
    }
}

/// Cross-reference and split-structure checks.
pub fn validate_dataset(data: &Dataset) -> Result<()> {
    let feature_videos: HashSet<&str> = data.features.rows.iter().map(|r| r.video_id.as_str()).collect();

    let missing: Vec<&String> = data
        .labels
        .map
        .keys()
        .filter(|v| !feature_videos.contains(v.as_str()))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "labels reference videos without features: {}",
            offender_list(&missing.iter().map(|s| s.as_str()).collect::<Vec<_>>(), 8)
        )));
    }

    if data.splits.base.is_empty() || data.splits.novel.is_empty() {
        return Err(Error::Validation(
            "splits: base and novel must both be nonempty".into(),
        ));
    }
    let mut seen: BTreeMap<ClassId, &str> = BTreeMap::new();
    for (name, ids) in [
        ("base", &data.splits.base),
        ("val", &data.splits.val),
        ("novel", &data.splits.novel),
    ] {
        for &id in ids {
            if let Some(prev) = seen.insert(id, name) {
                return Err(Error::Validation(format!(
                    "splits: class {id} appears in both {prev} and {name}"
                )));
            }
        }
    }
    let labeled_classes: BTreeSet<ClassId> = data.labels.map.values().copied().collect();
    let orphans: Vec<String> = seen
        .keys()
        .filter(|id| !labeled_classes.contains(id))
        .map(|id| id.to_string())
        .collect();
    if !orphans.is_empty() {
        return Err(Error::Validation(format!(
            "splits reference classes with no labeled videos: {}",
            offender_list(&orphans, 8)
        )));
    }

    if let Some(tags) = &data.tags {
        // Retrieval selects stored clips from tagged videos, so each tagged
        // video must have feature rows.
        let missing: Vec<&str> = tags
            .rows
            .iter()
            .map(|r| r.video_id.as_str())
            .filter(|v| !feature_videos.contains(v))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Validation(format!(
                "tagged videos without features: {}",
                offender_list(&missing, 8)
            )));
        }
    }
    Ok(())
}

/// Writes a full bundle into a directory with the standard filenames.
pub fn write_bundle(data: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_features(&data.features, &dir.join("features.tsv"))?;
    write_labels(&data.labels, &dir.join("labels.tsv"))?;
    write_splits(&data.splits, &dir.join("splits.json"))?;
    if let Some(classes) = &data.classes {
        write_classes(classes, &dir.join("classes.tsv"))?;
    }
    if let Some(tags) = &data.tags {
        write_tags(tags, &dir.join("tags.tsv"))?;
    }
    if let Some(words) = &data.word_embeddings {
        write_word_embeddings(words, &dir.join("word_embeddings.tsv"))?;
    }
    if let Some(sem) = &data.class_embeddings {
        write_class_embeddings(sem, &dir.join("class_embeddings.tsv"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny_features() -> FeatureTable {
        FeatureTable {
            dim: 4,
            rows: vec![
                FeatureRow {
                    video_id: "a".into(),
                    clip_index: 0,
                    values: vec![1.0, -2.5, 0.0, 3.25],
                },
                FeatureRow {
                    video_id: "a".into(),
                    clip_index: 1,
                    values: vec![0.5, 2.0, -1.0, 0.125],
                },
                FeatureRow {
                    video_id: "b".into(),
                    clip_index: 0,
                    values: vec![7.0, 0.03, 9.0, -4.5],
                },
            ],
        }
    }

    fn tiny_dataset() -> Dataset {
        Dataset {
            features: tiny_features(),
            labels: LabelTable {
                map: [("a".to_string(), 0), ("b".to_string(), 1)].into_iter().collect(),
            },
            classes: Some(ClassTable {
                names: [(0, "swing dancing".to_string()), (1, "archery".to_string())]
                    .into_iter()
                    .collect(),
            }),
            splits: SplitManifest {
                base: vec![0],
                val: vec![],
                novel: vec![1],
            },
            tags: None,
            word_embeddings: None,
            class_embeddings: None,
        }
    }

    #[test]
    fn bundle_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_dataset();
        write_bundle(&data, dir.path()).unwrap();
        let loaded = Dataset::load_dir(dir.path()).unwrap();
        assert_eq!(loaded.features, data.features);
        assert_eq!(loaded.labels, data.labels);
        assert_eq!(loaded.classes, data.classes);
        assert_eq!(loaded.splits, data.splits);
    }

    #[test]
    fn label_for_absent_video_is_named() {
        let mut data = tiny_dataset();
        data.labels.map.insert("ghost".into(), 0);
        let err = validate_dataset(&data).unwrap_err();
        assert!(err.to_string().contains("ghost"), "message: {err}");
    }

    #[test]
    fn short_feature_row_reports_its_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.tsv");
        std::fs::write(&path, "#dim=4\na\t0\t1\t2\t3\t4\nb\t0\t1\t2\t3\n").unwrap();
        let err = read_features(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":3:"), "expected line 3 in {msg}");
        assert!(msg.contains("expected 4"), "message: {msg}");
    }

    #[test]
    fn non_finite_floats_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.tsv");
        std::fs::write(&path, "#dim=2\na\t0\t1.0\tNaN\n").unwrap();
        let err = read_features(&path).unwrap_err();
        assert!(err.to_string().contains("non-finite"), "message: {err}");
    }

    #[test]
    fn duplicate_clip_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.tsv");
        std::fs::write(&path, "#dim=1\na\t0\t1.0\na\t0\t2.0\n").unwrap();
        let err = read_features(&path).unwrap_err();
        assert!(err.to_string().contains("duplicate clip"), "message: {err}");
    }

    #[test]
    fn overlapping_splits_are_rejected() {
        let mut data = tiny_dataset();
        data.splits.val = vec![1];
        let err = validate_dataset(&data).unwrap_err();
        assert!(err.to_string().contains("class 1"), "message: {err}");
    }

    #[test]
    fn zero_norm_word_embedding_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("word_embeddings.tsv");
        std::fs::write(&path, "#dim=2\nok\t1\t0\nbad\t0\t0\n").unwrap();
        let err = read_word_embeddings(&path).unwrap_err();
        assert!(err.to_string().contains("zero-norm"), "message: {err}");
    }

    #[test]
    fn tagged_video_without_features_is_rejected() {
        let mut data = tiny_dataset();
        data.tags = Some(TagCorpus {
            rows: vec![TagRow {
                video_id: "nowhere".into(),
                tags: vec!["x".into()],
            }],
        });
        let err = validate_dataset(&data).unwrap_err();
        assert!(err.to_string().contains("nowhere"), "message: {err}");
    }

    #[test]
    fn row_permutation_yields_the_same_clip_map() {
        let table = tiny_features();
        let mut reversed = table.clone();
        reversed.rows.reverse();
        let a = table.clips_by_video();
        let b = reversed.clips_by_video();
        assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
        for (video, rows) in &a {
            let values: Vec<&Vec<f64>> = rows.iter().map(|&i| &table.rows[i].values).collect();
            let other: Vec<&Vec<f64>> = b[video].iter().map(|&i| &reversed.rows[i].values).collect();
            assert_eq!(values, other, "clip order for {video} changed under permutation");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn feature_values_round_trip_exactly(values in proptest::collection::vec(-1e12f64..1e12, 1..6)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("features.tsv");
            let table = FeatureTable {
                dim: values.len(),
                rows: vec![FeatureRow { video_id: "v".into(), clip_index: 0, values: values.clone() }],
            };
            write_features(&table, &path).unwrap();
            let loaded = read_features(&path).unwrap();
            prop_assert_eq!(loaded.rows[0].values.clone(), values);
        }

        #[test]
        fn apply_minmax_stays_in_unit_interval(
            fit in proptest::collection::vec(-100f64..100.0, 3),
            fit2 in proptest::collection::vec(-100f64..100.0, 3),
            probe in proptest::collection::vec(-200f64..200.0, 3),
        ) {
            let rows: Vec<&[f64]> = vec![&fit, &fit2];
            let s = fit_minmax(rows, 3).unwrap();
            let out = s.apply(&probe).unwrap();
            prop_assert!(out.iter().all(|&v| (0.0..=1.0).contains(&v)), "out of range: {:?}", out);
        }
    }
}
