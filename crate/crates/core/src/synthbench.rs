//! Deterministic synthetic dataset bundles with recorded ground truth.
//!
//! Classes are Gaussian clusters in feature space whose means sit on a
//! sphere; semantic class embeddings are a fixed random projection of those
//! means, so semantic similarity tracks visual similarity; the tag corpus
//! plants positive videos (clips near novel-class means, tagged with the
//! class name) among random distractors. Everything is a pure function of
//! [`SynthConfig`], and `ground_truth.json` records what was planted so
//! every pipeline stage can be scored against a known ceiling.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datastore::formats::{parse_err, read_text, write_text};
use crate::datastore::{
    self, ClassId, ClassTable, Dataset, FeatureRow, FeatureTable, LabelTable,
    SemanticEmbeddingTable, SplitManifest, TagCorpus, TagRow, WordEmbeddingTable,
};
use crate::numkernel::{dot, derive_rng, RngStream};
use crate::{streams, Error, Result};

/// Non-informative tag tokens shared by the whole corpus.
const DISTRACTOR_VOCAB: usize = 100;
/// Tags per corpus video.
const TAGS_PER_VIDEO: usize = 3;
/// Distractor tag embeddings are this much smaller than class-name token
/// embeddings, so one informative tag dominates a video's tag mean and
/// planted positives outrank distractors by a wide cosine margin.
const DISTRACTOR_TAG_SCALE: f64 = 0.1;
/// Per-coordinate noise on semantic embeddings; small next to the projected
/// mean scale so semantics stay correlated with visuals.
const EMBEDDING_NOISE: f64 = 0.05;

/// Generation parameters. Dataset videos are `vid<class>_<index>`, corpus
/// videos `web<index>`, class names `act<id>`; zero padding keeps
/// lexicographic id order equal to numeric order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub base_classes: usize,
    pub val_classes: usize,
    pub novel_classes: usize,
    pub videos_per_class: usize,
    pub clips_per_video: usize,
    /// Visual feature dimension.
    pub d_v: usize,
    /// Tag/word embedding dimension.
    pub d_t: usize,
    /// Semantic class embedding dimension.
    pub d_y: usize,
    /// Radius of the sphere the class means are drawn on.
    pub sigma_sep: f64,
    /// Within-class clip noise, per coordinate.
    pub sigma_noise: f64,
    /// Tag corpus size; `distractor_frac` of it are distractors and the
    /// rest are planted positives, round-robin over the novel classes.
    pub corpus_size: usize,
    pub distractor_frac: f64,
    /// Probability that a positive video's informative tag is replaced by a
    /// random distractor tag.
    pub tag_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            base_classes: 12,
            val_classes: 4,
            novel_classes: 24,
            videos_per_class: 125,
            clips_per_video: 2,
            d_v: 16,
            d_t: 12,
            d_y: 8,
            sigma_sep: 6.0,
            sigma_noise: 1.0,
            corpus_size: 960,
            distractor_frac: 0.9,
            tag_noise: 0.0,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let total = self.base_classes + self.val_classes + self.novel_classes;
        if self.base_classes == 0 || self.novel_classes == 0 {
            return Err(Error::Config(
                "base_classes and novel_classes must both be at least 1".into(),
            ));
        }
        if total > 1000 {
            return Err(Error::Config(format!(
                "at most 1000 classes fit the act id scheme, got {total}"
            )));
        }
        if self.videos_per_class == 0 || self.videos_per_class > 9999 {
            return Err(Error::Config(format!(
                "videos_per_class must be in 1..=9999, got {}",
                self.videos_per_class
            )));
        }
        if self.clips_per_video == 0 {
            return Err(Error::Config("clips_per_video must be at least 1".into()));
        }
        if self.corpus_size > 99_999 {
            return Err(Error::Config(format!(
                "corpus_size must be at most 99999, got {}",
                self.corpus_size
            )));
        }
        for (name, dim) in [("d_v", self.d_v), ("d_t", self.d_t), ("d_y", self.d_y)] {
            if dim < 2 {
                return Err(Error::Config(format!("{name} must be at least 2, got {dim}")));
            }
        }
        if !(self.sigma_sep.is_finite() && self.sigma_sep >= 0.0) {
            return Err(Error::Config(format!(
                "sigma_sep must be finite and non-negative, got {}",
                self.sigma_sep
            )));
        }
        if !(self.sigma_noise.is_finite() && self.sigma_noise > 0.0) {
            return Err(Error::Config(format!(
                "sigma_noise must be finite and positive, got {}",
                self.sigma_noise
            )));
        }
        for (name, frac) in [
            ("distractor_frac", self.distractor_frac),
            ("tag_noise", self.tag_noise),
        ] {
            if !(frac.is_finite() && (0.0..=1.0).contains(&frac)) {
                return Err(Error::Config(format!(
                    "{name} must be in [0, 1], got {frac}"
                )));
            }
        }
        Ok(())
    }
}

/// What was planted: the true (shifted) class means, the projection behind
/// the semantic embeddings, the nonnegativity shift, and which corpus
/// videos are positives for which class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    /// Constant added to every feature coordinate; `mean - shift` recovers
    /// the centered sphere point of a class.
    pub shift: f64,
    pub class_means: BTreeMap<ClassId, Vec<f64>>,
    /// `d_y` rows of `d_v` columns; embeddings are this matrix applied to
    /// the centered means, plus noise.
    pub projection: Vec<Vec<f64>>,
    /// Corpus video id -> the novel class it was planted for.
    pub planted: BTreeMap<String, ClassId>,
}

fn unit_vector(rng: &mut RngStream, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

/// The max(0) guard can only fire on a sub-8-sigma noise outlier; the shift
/// is sized so coordinates stay positive in practice.
fn noisy_clip(mean: &[f64], sigma: f64, rng: &mut RngStream) -> Vec<f64> {
    mean.iter()
        .map(|&m| (m + sigma * rng.normal()).max(0.0))
        .collect()
}

/// Generates a full bundle. One RNG stream, fixed draw order: class means,
/// projection, embedding noise, word embeddings, dataset clips, corpus.
pub fn make_synthetic(config: &SynthConfig) -> Result<(Dataset, GroundTruth)> {
    config.validate()?;
    let mut rng = derive_rng(config.seed, streams::SYNTH);
    let total = config.base_classes + config.val_classes + config.novel_classes;
    let shift = config.sigma_sep + 8.0 * config.sigma_noise;

    let mut class_means: BTreeMap<ClassId, Vec<f64>> = BTreeMap::new();
    for id in 0..total as ClassId {
        let dir = unit_vector(&mut rng, config.d_v);
        let mean = dir
            .iter()
            .map(|&u| (u * config.sigma_sep + shift).max(0.0))
            .collect();
        class_means.insert(id, mean);
    }

    let row_scale = 1.0 / (config.d_v as f64).sqrt();
    let projection: Vec<Vec<f64>> = (0..config.d_y)
        .map(|_| (0..config.d_v).map(|_| rng.normal() * row_scale).collect())
        .collect();

    // Projecting the centered means keeps the embedding scale tied to
    // sigma_sep instead of the shift, which carries no class information.
    let mut class_embeddings: BTreeMap<ClassId, Vec<f64>> = BTreeMap::new();
    for (&id, mean) in &class_means {
        let centered: Vec<f64> = mean.iter().map(|m| m - shift).collect();
        let emb = projection
            .iter()
            .map(|row| dot(row, &centered) + EMBEDDING_NOISE * rng.normal())
            .collect();
        class_embeddings.insert(id, emb);
    }

    let mut names: BTreeMap<ClassId, String> = BTreeMap::new();
    let mut words: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for id in 0..total as ClassId {
        let name = format!("act{id:03}");
        words.insert(name.clone(), unit_vector(&mut rng, config.d_t));
        names.insert(id, name);
    }
    let vocab: Vec<String> = (0..DISTRACTOR_VOCAB).map(|i| format!("tag{i:03}")).collect();
    for token in &vocab {
        let v = unit_vector(&mut rng, config.d_t)
            .iter()
            .map(|x| x * DISTRACTOR_TAG_SCALE)
            .collect();
        words.insert(token.clone(), v);
    }

    let mut rows = Vec::new();
    let mut labels: BTreeMap<String, ClassId> = BTreeMap::new();
    for id in 0..total as ClassId {
        let mean = &class_means[&id];
        for v in 0..config.videos_per_class {
            let video_id = format!("vid{id:03}_{v:04}");
            labels.insert(video_id.clone(), id);
            for c in 0..config.clips_per_video {
                rows.push(FeatureRow {
                    video_id: video_id.clone(),
                    clip_index: c as u32,
                    values: noisy_clip(mean, config.sigma_noise, &mut rng),
                });
            }
        }
    }

    let novel_ids: Vec<ClassId> =
        ((config.base_classes + config.val_classes) as ClassId..total as ClassId).collect();
    let distractors =
        ((config.corpus_size as f64 * config.distractor_frac).round() as usize).min(config.corpus_size);
    let positives = config.corpus_size - distractors;
    let mut tag_rows = Vec::new();
    let mut planted: BTreeMap<String, ClassId> = BTreeMap::new();
    for i in 0..config.corpus_size {
        let video_id = format!("web{i:05}");
        let (mean, mut tags) = if i < positives {
            let class = novel_ids[i % novel_ids.len()];
            planted.insert(video_id.clone(), class);
            let token = if rng.uniform() < config.tag_noise {
                vocab[rng.index(vocab.len())].clone()
            } else {
                names[&class].clone()
            };
            (class_means[&class].clone(), vec![token])
        } else {
            let dir = unit_vector(&mut rng, config.d_v);
            let mean = dir
                .iter()
                .map(|&u| (u * config.sigma_sep + shift).max(0.0))
                .collect();
            (mean, Vec::new())
        };
        while tags.len() < TAGS_PER_VIDEO {
            let t = vocab[rng.index(vocab.len())].clone();
            if !tags.contains(&t) {
                tags.push(t);
            }
        }
        for c in 0..config.clips_per_video {
            rows.push(FeatureRow {
                video_id: video_id.clone(),
                clip_index: c as u32,
                values: noisy_clip(&mean, config.sigma_noise, &mut rng),
            });
        }
        tag_rows.push(TagRow { video_id, tags });
    }

    let b = config.base_classes as ClassId;
    let v = config.val_classes as ClassId;
    let dataset = Dataset {
        features: FeatureTable {
            dim: config.d_v,
            rows,
        },
        labels: LabelTable { map: labels },
        classes: Some(ClassTable { names }),
        splits: SplitManifest {
            base: (0..b).collect(),
            val: (b..b + v).collect(),
            novel: (b + v..total as ClassId).collect(),
        },
        tags: Some(TagCorpus { rows: tag_rows }),
        word_embeddings: Some(WordEmbeddingTable {
            dim: config.d_t,
            map: words,
        }),
        class_embeddings: Some(SemanticEmbeddingTable {
            dim: config.d_y,
            map: class_embeddings,
        }),
    };
    datastore::validate_dataset(&dataset)?;
    let truth = GroundTruth {
        config: *config,
        shift,
        class_means,
        projection,
        planted,
    };
    Ok((dataset, truth))
}

fn nearest_class(clip: &[f64], means: &[(ClassId, &[f64])]) -> ClassId {
    let mut best = means[0].0;
    let mut best_d = f64::INFINITY;
    for &(id, m) in means {
        let d: f64 = clip.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
        // Strictly-less keeps ties on the lowest class id.
        if d < best_d {
            best_d = d;
            best = id;
        }
    }
    best
}

/// Accuracy of assigning each labeled clip of a split to the nearest true
/// class mean, among that split's classes. An upper bound for classifiers
/// trained on the same data; keys are the nonempty split names.
pub fn bayes_oracle(data: &Dataset, truth: &GroundTruth) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (name, ids) in [
        ("base", &data.splits.base),
        ("val", &data.splits.val),
        ("novel", &data.splits.novel),
    ] {
        if ids.is_empty() {
            continue;
        }
        let mut means = Vec::with_capacity(ids.len());
        for &id in ids {
            let m = truth.class_means.get(&id).ok_or_else(|| {
                Error::Validation(format!("ground truth has no mean for class {id}"))
            })?;
            if m.len() != data.features.dim {
                return Err(Error::Shape(format!(
                    "ground truth means have dim {}, features have dim {}",
                    m.len(),
                    data.features.dim
                )));
            }
            means.push((id, m.as_slice()));
        }
        means.sort_by_key(|&(id, _)| id);
        let split_classes: HashSet<ClassId> = ids.iter().copied().collect();
        let mut correct = 0usize;
        let mut count = 0usize;
        for row in &data.features.rows {
            let Some(&label) = data.labels.map.get(&row.video_id) else {
                continue;
            };
            if !split_classes.contains(&label) {
                continue;
            }
            count += 1;
            if nearest_class(&row.values, &means) == label {
                correct += 1;
            }
        }
        if count == 0 {
            return Err(Error::Validation(format!("split {name} has no labeled clips")));
        }
        out.insert(name.to_string(), correct as f64 / count as f64);
    }
    Ok(out)
}

/// Writes the bundle files plus `ground_truth.json` into a directory.
pub fn write_synthetic(data: &Dataset, truth: &GroundTruth, dir: &Path) -> Result<()> {
    datastore::write_bundle(data, dir)?;
    let mut text = serde_json::to_string_pretty(truth).expect("ground truth serialize");
    text.push('\n');
    write_text(&dir.join("ground_truth.json"), &text)
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth> {
    let text = read_text(path)?;
    let truth: GroundTruth =
        serde_json::from_str(&text).map_err(|e| parse_err(path, e.line(), e.to_string()))?;
    truth.config.validate()?;
    for (id, mean) in &truth.class_means {
        if mean.len() != truth.config.d_v {
            return Err(Error::Validation(format!(
                "ground truth mean for class {id} has dim {}, expected {}",
                mean.len(),
                truth.config.d_v
            )));
        }
    }
    Ok(truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{train_linear, TrainConfig};
    use crate::datastore::fit_minmax;
    use crate::numkernel::Mat;
    use crate::retrieval::{build_tag_index, class_query, retrieve_candidates};

    fn small_config() -> SynthConfig {
        SynthConfig {
            base_classes: 2,
            val_classes: 1,
            novel_classes: 3,
            videos_per_class: 4,
            clips_per_video: 3,
            d_v: 4,
            d_t: 4,
            d_y: 2,
            sigma_sep: 2.0,
            sigma_noise: 0.5,
            corpus_size: 10,
            distractor_frac: 0.7,
            tag_noise: 0.0,
            seed: 1,
        }
    }

    #[test]
    fn counts_match_the_config() {
        let cfg = small_config();
        let (data, truth) = make_synthetic(&cfg).unwrap();
        assert_eq!(data.features.rows.len(), 6 * 4 * 3 + 10 * 3);
        assert_eq!(data.labels.map.len(), 24);
        assert_eq!(data.classes.as_ref().unwrap().names.len(), 6);
        assert_eq!(data.splits.base, vec![0, 1]);
        assert_eq!(data.splits.val, vec![2]);
        assert_eq!(data.splits.novel, vec![3, 4, 5]);
        let tags = data.tags.as_ref().unwrap();
        assert_eq!(tags.rows.len(), 10);
        assert!(tags.rows.iter().all(|r| r.tags.len() == TAGS_PER_VIDEO));
        assert_eq!(data.word_embeddings.as_ref().unwrap().map.len(), 6 + DISTRACTOR_VOCAB);
        assert_eq!(data.class_embeddings.as_ref().unwrap().map.len(), 6);
        // 10 corpus videos, 7 distractors: positives web00000..web00002,
        // round-robin over the novel classes.
        let planted: Vec<(&str, ClassId)> = truth
            .planted
            .iter()
            .map(|(v, &c)| (v.as_str(), c))
            .collect();
        assert_eq!(planted, vec![("web00000", 3), ("web00001", 4), ("web00002", 5)]);
    }

    #[test]
    fn vanishing_noise_pins_clips_to_their_class_mean() {
        let cfg = SynthConfig {
            sigma_noise: 1e-15,
            ..small_config()
        };
        let (data, truth) = make_synthetic(&cfg).unwrap();
        for row in &data.features.rows {
            let Some(label) = data.labels.map.get(&row.video_id) else {
                continue;
            };
            let mean = &truth.class_means[label];
            for (a, b) in row.values.iter().zip(mean) {
                assert!((a - b).abs() <= 1e-12, "clip strays from mean: {a} vs {b}");
            }
        }
    }

    #[test]
    fn wide_separation_is_nearest_mean_separable() {
        let cfg = SynthConfig {
            base_classes: 4,
            val_classes: 0,
            novel_classes: 6,
            videos_per_class: 50,
            clips_per_video: 2,
            d_v: 8,
            sigma_sep: 10.0,
            sigma_noise: 1.0,
            corpus_size: 0,
            seed: 3,
            ..SynthConfig::default()
        };
        let (data, truth) = make_synthetic(&cfg).unwrap();
        let means: Vec<(ClassId, &[f64])> = truth
            .class_means
            .iter()
            .map(|(&id, m)| (id, m.as_slice()))
            .collect();
        let mut correct = 0;
        let mut count = 0;
        for row in &data.features.rows {
            let label = data.labels.map[&row.video_id];
            count += 1;
            if nearest_class(&row.values, &means) == label {
                correct += 1;
            }
        }
        assert_eq!(count, 1000);
        let acc = correct as f64 / count as f64;
        assert!(acc >= 0.999, "nearest-mean accuracy {acc}");
    }

    #[test]
    fn bayes_scores_one_on_a_zero_noise_dataset() {
        let cfg = SynthConfig {
            sigma_noise: 1e-15,
            ..small_config()
        };
        let (data, truth) = make_synthetic(&cfg).unwrap();
        let acc = bayes_oracle(&data, &truth).unwrap();
        assert_eq!(acc["base"], 1.0);
        assert_eq!(acc["val"], 1.0);
        assert_eq!(acc["novel"], 1.0);
    }

    #[test]
    fn bayes_scores_one_when_each_split_has_one_class() {
        let cfg = SynthConfig {
            base_classes: 1,
            val_classes: 0,
            novel_classes: 1,
            videos_per_class: 5,
            clips_per_video: 2,
            d_v: 4,
            d_t: 4,
            d_y: 2,
            sigma_sep: 1.0,
            sigma_noise: 5.0,
            corpus_size: 4,
            distractor_frac: 0.5,
            tag_noise: 0.0,
            seed: 9,
        };
        let (data, truth) = make_synthetic(&cfg).unwrap();
        let acc = bayes_oracle(&data, &truth).unwrap();
        assert_eq!(acc.get("val"), None);
        assert_eq!(acc["base"], 1.0);
        assert_eq!(acc["novel"], 1.0);
    }

    #[test]
    fn same_config_reproduces_byte_identical_bundles() {
        let cfg = small_config();
        let files = [
            "features.tsv",
            "labels.tsv",
            "classes.tsv",
            "splits.json",
            "tags.tsv",
            "word_embeddings.tsv",
            "class_embeddings.tsv",
            "ground_truth.json",
        ];
        let (dir_a, dir_b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let (data_a, truth_a) = make_synthetic(&cfg).unwrap();
        write_synthetic(&data_a, &truth_a, dir_a.path()).unwrap();
        let (data_b, truth_b) = make_synthetic(&cfg).unwrap();
        write_synthetic(&data_b, &truth_b, dir_b.path()).unwrap();
        for file in files {
            let a = std::fs::read(dir_a.path().join(file)).unwrap();
            let b = std::fs::read(dir_b.path().join(file)).unwrap();
            assert_eq!(a, b, "{file} differs between identical configs");
        }
        let other = make_synthetic(&SynthConfig { seed: 2, ..cfg }).unwrap().0;
        assert_ne!(other.features, data_a.features, "seed change left features identical");
    }

    #[test]
    fn planted_positives_outrank_distractors_with_clean_tags() {
        let cfg = SynthConfig {
            base_classes: 2,
            val_classes: 0,
            novel_classes: 4,
            videos_per_class: 3,
            clips_per_video: 2,
            d_v: 8,
            d_t: 8,
            d_y: 2,
            sigma_sep: 4.0,
            sigma_noise: 1.0,
            corpus_size: 60,
            distractor_frac: 0.8,
            tag_noise: 0.0,
            seed: 5,
        };
        let (data, truth) = make_synthetic(&cfg).unwrap();
        let words = data.word_embeddings.as_ref().unwrap();
        let index = build_tag_index(data.tags.as_ref().unwrap(), words).unwrap();
        assert_eq!(index.dropped_no_vocab, 0);
        for &class in &data.splits.novel {
            let mut expected: Vec<&String> = truth
                .planted
                .iter()
                .filter(|&(_, &c)| c == class)
                .map(|(v, _)| v)
                .collect();
            expected.sort();
            assert_eq!(expected.len(), 3);
            let name = &data.classes.as_ref().unwrap().names[&class];
            let query = class_query(name, words).unwrap();
            let mut got: Vec<String> = retrieve_candidates(&query, &index, expected.len())
                .unwrap()
                .into_iter()
                .map(|(v, _)| v)
                .collect();
            got.sort();
            assert_eq!(
                got,
                expected.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
                "class {class} retrieval missed its planted videos"
            );
        }
    }

    #[test]
    fn trained_head_stays_below_the_true_mean_ceiling() {
        let cfg = SynthConfig {
            base_classes: 2,
            val_classes: 0,
            novel_classes: 6,
            videos_per_class: 850,
            clips_per_video: 2,
            d_v: 8,
            d_t: 4,
            d_y: 4,
            sigma_sep: 3.0,
            sigma_noise: 1.5,
            corpus_size: 0,
            distractor_frac: 0.0,
            tag_noise: 0.0,
            seed: 5,
        };
        let (data, truth) = make_synthetic(&cfg).unwrap();
        let class_ids = data.splits.novel.clone();
        let by_video = data.features.clips_by_video();

        // First half of each class's videos trains the head, second half is
        // the held-out test pool.
        let mut train: Vec<(usize, usize)> = Vec::new();
        let mut test: Vec<(usize, usize)> = Vec::new();
        for (pos, &class) in class_ids.iter().enumerate() {
            let videos: Vec<&str> = data
                .labels
                .map
                .iter()
                .filter(|&(_, &c)| c == class)
                .map(|(v, _)| v.as_str())
                .collect();
            for (i, video) in videos.iter().enumerate() {
                let bucket = if i < videos.len() / 2 { &mut train } else { &mut test };
                for &row in &by_video[video] {
                    bucket.push((row, pos));
                }
            }
        }
        assert!(test.len() >= 5000, "only {} test clips", test.len());

        let scaler = fit_minmax(
            train.iter().map(|&(row, _)| data.features.rows[row].values.as_slice()),
            cfg.d_v,
        )
        .unwrap();
        let scaled: Vec<Vec<f64>> = train
            .iter()
            .map(|&(row, _)| scaler.apply(&data.features.rows[row].values).unwrap())
            .collect();
        let mat = Mat::from_rows(&scaled.iter().map(|r| r.as_slice()).collect::<Vec<_>>());
        let labels: Vec<usize> = train.iter().map(|&(_, pos)| pos).collect();
        let head_cfg = TrainConfig {
            epochs: 30,
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let mut rng = derive_rng(cfg.seed, 901);
        let clf = train_linear(&class_ids, &mat, &labels, &head_cfg, &mut rng).unwrap();

        let mut correct = 0usize;
        for &(row, pos) in &test {
            let logits = clf.logits(&scaler.apply(&data.features.rows[row].values).unwrap());
            let pred = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            if pred == pos {
                correct += 1;
            }
        }
        let acc = correct as f64 / test.len() as f64;
        let ceiling = bayes_oracle(&data, &truth).unwrap()["novel"];
        assert!(acc > 0.3, "head barely beats chance: {acc}");
        assert!(
            acc <= ceiling + 0.02,
            "trained head at {acc} exceeds the true-mean ceiling {ceiling}"
        );
    }

    #[test]
    fn ground_truth_records_the_planted_geometry() {
        let cfg = SynthConfig {
            sigma_sep: 2.5,
            sigma_noise: 0.25,
            ..small_config()
        };
        let (data, truth) = make_synthetic(&cfg).unwrap();
        assert_eq!(truth.shift, 2.5 + 8.0 * 0.25);
        assert_eq!(truth.projection.len(), cfg.d_y);
        assert!(truth.projection.iter().all(|row| row.len() == cfg.d_v));
        let emb = &data.class_embeddings.as_ref().unwrap().map;
        for (id, mean) in &truth.class_means {
            let radius: f64 = mean
                .iter()
                .map(|m| (m - truth.shift) * (m - truth.shift))
                .sum::<f64>()
                .sqrt();
            assert!((radius - cfg.sigma_sep).abs() < 1e-9, "class {id} radius {radius}");
            let centered: Vec<f64> = mean.iter().map(|m| m - truth.shift).collect();
            for (row, e) in truth.projection.iter().zip(&emb[id]) {
                let noise = e - dot(row, &centered);
                assert!(noise.abs() <= 8.0 * EMBEDDING_NOISE, "embedding noise {noise}");
            }
        }
    }

    #[test]
    fn ground_truth_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let (data, truth) = make_synthetic(&small_config()).unwrap();
        write_synthetic(&data, &truth, dir.path()).unwrap();
        let loaded = read_ground_truth(&dir.path().join("ground_truth.json")).unwrap();
        assert_eq!(loaded, truth);
        let reloaded = Dataset::load_dir(dir.path()).unwrap();
        assert_eq!(reloaded.features, data.features);
        assert_eq!(reloaded.class_embeddings, data.class_embeddings);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cases = [
            SynthConfig { d_v: 1, ..SynthConfig::default() },
            SynthConfig { sigma_noise: 0.0, ..SynthConfig::default() },
            SynthConfig { distractor_frac: 1.5, ..SynthConfig::default() },
            SynthConfig { tag_noise: -0.1, ..SynthConfig::default() },
            SynthConfig { base_classes: 0, ..SynthConfig::default() },
            SynthConfig { videos_per_class: 10_000, ..SynthConfig::default() },
        ];
        for cfg in cases {
            assert!(make_synthetic(&cfg).is_err(), "config accepted: {cfg:?}");
        }
    }
}
