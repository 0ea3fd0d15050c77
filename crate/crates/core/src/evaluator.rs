//! Episodic evaluation protocols over novel classes, with optional joint
//! scoring against the base classes and the retrieval/generation stages
//! wired in by config flags.
//!
//! A run prepares shared state once (feature scaler, base head, tag index,
//! trained generator), then evaluates independent episodes. Episode `i`
//! draws all of its randomness from `derive_rng(master_seed, i)`, so runs
//! are bit-reproducible for any thread count and any episode subset.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    concat_classifiers, train_denoised, train_linear, video_predict, LinearClassifier,
    TrainConfig,
};
use crate::datastore::formats::write_text;
use crate::datastore::{fit_minmax, ClassId, Dataset, MinMaxScaler};
use crate::numkernel::{derive_rng, Mat, RngStream};
use crate::retrieval::{
    assemble_pseudo_set, build_tag_index, class_prototype, class_query, ClipRef, ClipStore,
    PseudoParams, PseudoRequest, PseudoSet, TagIndex,
};
use crate::vfgan::{generate_features, train_vfgan, EpochStats, GanParams, GanTrainConfig};
use crate::{streams, Error, Result};

/// 2ab / (a+b): the combined score for base and novel accuracy, dominated
/// by the weaker side. 0 when both inputs are 0; unit-preserving.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Full evaluation-run configuration: episode shape, protocol flags, and
/// the training budgets of every stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Novel classes per episode.
    pub n_way: usize,
    /// Support videos per episode class.
    pub k_shot: usize,
    /// Query videos per episode class.
    pub novel_queries: usize,
    /// Score queries over base and novel classes jointly and report base
    /// accuracy and the harmonic mean alongside novel accuracy.
    pub include_base: bool,
    /// Query videos per base class per episode (joint scoring only).
    pub base_queries: usize,
    /// Clips sampled per query video; videos storing fewer use all clips.
    pub clip_samples: usize,
    pub master_seed: u64,
    /// Fraction of each base class's videos (by ascending id, from the end)
    /// reserved as the base query pool. Never trained on.
    pub holdout_frac: f64,
    /// Augment novel-head training with pseudo-labeled corpus clips.
    pub use_retrieval: bool,
    /// Augment novel-head training with generated features.
    pub use_gan: bool,
    /// Mix trusted and pseudo samples half-and-half per batch instead of
    /// pooling them.
    pub use_denoising: bool,
    /// Generated features per episode class when `use_gan` is set.
    pub generated_per_class: usize,
    /// Novel videos per class in the run-level few-shot draw that feeds
    /// retrieval prototypes and generator training; `None` matches `k_shot`.
    pub gan_novel_shots: Option<usize>,
    pub pseudo: PseudoParams,
    pub base_head: TrainConfig,
    pub novel_head: TrainConfig,
    /// Generator training budget. Its `seed` field is ignored here: an eval
    /// run reseeds the generator from `master_seed` so seed sweeps vary
    /// every stage together.
    pub gan: GanTrainConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: 500,
            n_way: 5,
            k_shot: 1,
            novel_queries: 15,
            include_base: false,
            base_queries: 15,
            clip_samples: 10,
            master_seed: 42,
            holdout_frac: 0.2,
            use_retrieval: false,
            use_gan: false,
            use_denoising: false,
            generated_per_class: 300,
            gan_novel_shots: None,
            pseudo: PseudoParams::default(),
            // Head budgets differ from the generic training defaults: both
            // start from zero weights (a linear softmax head needs no
            // symmetry breaking, and init noise would swamp the gradient of
            // a 1-shot fit), and the per-episode novel head trains long
            // enough to saturate on a handful of support clips. The base
            // head trains once per run on the full base split, so it gets
            // the largest budget and ends up with the larger logit scale,
            // exactly the calibration gap joint scoring is meant to expose.
            base_head: TrainConfig {
                epochs: 200,
                learning_rate: 0.5,
                init_scale: 0.0,
                ..TrainConfig::default()
            },
            novel_head: TrainConfig {
                epochs: 100,
                learning_rate: 0.5,
                init_scale: 0.0,
                ..TrainConfig::default()
            },
            gan: GanTrainConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("episodes", self.episodes),
            ("n_way", self.n_way),
            ("k_shot", self.k_shot),
            ("novel_queries", self.novel_queries),
            ("clip_samples", self.clip_samples),
        ] {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.include_base && self.base_queries == 0 {
            return Err(Error::Config(
                "base_queries must be at least 1 when include_base is set".into(),
            ));
        }
        if !(self.holdout_frac.is_finite() && (0.0..=1.0).contains(&self.holdout_frac)) {
            return Err(Error::Config(format!(
                "holdout_frac must be in [0, 1], got {}",
                self.holdout_frac
            )));
        }
        if self.use_gan && self.generated_per_class == 0 {
            return Err(Error::Config(
                "generated_per_class must be at least 1 when use_gan is set".into(),
            ));
        }
        self.base_head.validate(false)?;
        self.novel_head.validate(self.use_denoising)?;
        if self.use_gan {
            self.gan.validate()?;
        }
        Ok(())
    }
}

/// One sampled episode. Support and query sets are disjoint per class.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    /// Chosen novel classes, ascending.
    pub classes: Vec<ClassId>,
    /// `k_shot` support videos per chosen class.
    pub support: BTreeMap<ClassId, Vec<String>>,
    /// Query videos with their true class.
    pub novel_queries: Vec<(String, ClassId)>,
    /// Base query videos with their true class; empty unless the config
    /// includes base scoring.
    pub base_queries: Vec<(String, ClassId)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub novel_acc: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub base_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hm: Option<f64>,
}

/// Aggregated run results: per-episode records plus their arithmetic means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub mean_novel_acc: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_base_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_hm: Option<f64>,
    pub episodes: Vec<EpisodeMetrics>,
}

/// Read-only state shared by all episodes of a run: the scaler fitted on
/// base training clips, every clip feature in scaled form, the base head
/// and generator (when their stages are on), and the tag index.
///
/// Classifier heads and the generator operate on scaled features; retrieval
/// cosine math (tag index, prototypes, clip selection) stays on raw
/// features.
pub struct Experiment<'a> {
    pub data: &'a Dataset,
    pub cfg: EvalConfig,
    pub scaler: MinMaxScaler,
    scaled: Vec<Vec<f64>>,
    store: ClipStore<'a>,
    class_videos: BTreeMap<ClassId, Vec<&'a str>>,
    base_train: BTreeMap<ClassId, Vec<&'a str>>,
    base_test: BTreeMap<ClassId, Vec<&'a str>>,
    pub base_head: Option<LinearClassifier>,
    pub tag_index: Option<TagIndex>,
    pub gan: Option<GanParams>,
}

impl<'a> Experiment<'a> {
    pub fn prepare(data: &'a Dataset, cfg: &EvalConfig) -> Result<Experiment<'a>> {
        cfg.validate()?;
        if cfg.n_way > data.splits.novel.len() {
            return Err(Error::Config(format!(
                "n_way {} exceeds the {} novel classes",
                cfg.n_way,
                data.splits.novel.len()
            )));
        }

        // labels.map iterates videos in ascending id order, so every
        // per-class list is sorted; the holdout convention relies on that.
        let mut class_videos: BTreeMap<ClassId, Vec<&str>> = BTreeMap::new();
        for (video, &class) in &data.labels.map {
            class_videos.entry(class).or_default().push(video.as_str());
        }

        let mut base_train = BTreeMap::new();
        let mut base_test = BTreeMap::new();
        for &class in &data.splits.base {
            let videos = class_videos.get(&class).ok_or_else(|| {
                Error::Validation(format!("base class {class} has no labeled videos"))
            })?;
            let hold = ((cfg.holdout_frac * videos.len() as f64).ceil() as usize).min(videos.len());
            let train = videos.len() - hold;
            if train == 0 {
                return Err(Error::Validation(format!(
                    "base class {class} has no training videos left after holding out {hold}"
                )));
            }
            if cfg.include_base && hold < cfg.base_queries {
                return Err(Error::Validation(format!(
                    "base class {class} holds out {hold} videos, episodes need {}",
                    cfg.base_queries
                )));
            }
            base_train.insert(class, videos[..train].to_vec());
            base_test.insert(class, videos[train..].to_vec());
        }

        let store = ClipStore::new(&data.features);
        let mut fit_rows: Vec<&[f64]> = Vec::new();
        for videos in base_train.values() {
            for video in videos {
                for &row in clips_of(&store, video)? {
                    fit_rows.push(store.feature(row));
                }
            }
        }
        let scaler = fit_minmax(fit_rows.into_iter(), data.features.dim)?;
        let scaled: Vec<Vec<f64>> = data
            .features
            .rows
            .iter()
            .map(|r| scaler.apply(&r.values))
            .collect::<Result<_>>()?;

        let tag_index = if cfg.use_retrieval {
            let tags = data.tags.as_ref().ok_or_else(|| {
                Error::Validation("retrieval needs a tag corpus (tags.tsv)".into())
            })?;
            let words = data.word_embeddings.as_ref().ok_or_else(|| {
                Error::Validation("retrieval needs word embeddings (word_embeddings.tsv)".into())
            })?;
            Some(build_tag_index(tags, words)?)
        } else {
            None
        };

        let mut exp = Experiment {
            data,
            cfg: cfg.clone(),
            scaler,
            scaled,
            store,
            class_videos,
            base_train,
            base_test,
            base_head: None,
            tag_index,
            gan: None,
        };
        if exp.cfg.include_base {
            exp.base_head = Some(exp.train_base_head()?);
        }
        if exp.cfg.use_gan {
            exp.gan = Some(exp.train_generator()?.0);
        }
        Ok(exp)
    }

    /// Base head over the base training clips, seeded from the master seed.
    pub fn train_base_head(&self) -> Result<LinearClassifier> {
        let mut ids: Vec<ClassId> = self.data.splits.base.clone();
        ids.sort_unstable();
        let mut rows: Vec<&[f64]> = Vec::new();
        let mut labels: Vec<usize> = Vec::new();
        for (pos, class) in ids.iter().enumerate() {
            for video in &self.base_train[class] {
                for &row in clips_of(&self.store, video)? {
                    rows.push(&self.scaled[row]);
                    labels.push(pos);
                }
            }
        }
        let mut rng = derive_rng(self.cfg.master_seed, streams::BASE_HEAD);
        train_linear(&ids, &Mat::from_rows(&rows), &labels, &self.cfg.base_head, &mut rng)
    }

    /// The run-level few-shot draw over novel classes: `gan_novel_shots`
    /// videos per class (default `k_shot`). Derives its own stream, so the
    /// result is the same on every call.
    pub fn novel_shot_videos(&self) -> Result<BTreeMap<ClassId, Vec<&'a str>>> {
        let shots = self.cfg.gan_novel_shots.unwrap_or(self.cfg.k_shot);
        let mut rng = derive_rng(self.cfg.master_seed, streams::NOVEL_SHOTS);
        let mut novel: Vec<ClassId> = self.data.splits.novel.clone();
        novel.sort_unstable();
        let mut out = BTreeMap::new();
        for class in novel {
            let videos = &self.class_videos[&class];
            if videos.len() < shots {
                return Err(Error::Validation(format!(
                    "class {class} has {} videos, the few-shot draw needs {shots}",
                    videos.len()
                )));
            }
            let picks = rng.sample_indices(videos.len(), shots);
            out.insert(class, picks.into_iter().map(|i| videos[i]).collect());
        }
        Ok(out)
    }

    /// Run-level pseudo-set assembly over all novel classes, with queries
    /// from class names and prototypes from the run-level few-shot draw.
    pub fn run_retrieval(&self) -> Result<PseudoSet> {
        let index = self.tag_index.as_ref().ok_or_else(|| {
            Error::Config("retrieval stage is disabled (use_retrieval = false)".into())
        })?;
        let shots = self.novel_shot_videos()?;
        let mut requests = Vec::with_capacity(shots.len());
        for (&class, videos) in &shots {
            let mut clips: Vec<&[f64]> = Vec::new();
            for video in videos {
                for &row in clips_of(&self.store, video)? {
                    clips.push(self.store.feature(row));
                }
            }
            requests.push(PseudoRequest {
                class_id: class,
                query: self.query_vec(class)?,
                prototype: class_prototype(&clips)?,
            });
        }
        let mut rng = derive_rng(self.cfg.master_seed, streams::RETRIEVE);
        assemble_pseudo_set(&requests, index, &self.store, &self.cfg.pseudo, &mut rng)
    }

    /// Trains the conditional generator on scaled base training clips, the
    /// run-level novel few-shot clips, and (when retrieval is on) the
    /// pseudo-labeled clips. Reseeded from the master seed.
    pub fn train_generator(&self) -> Result<(GanParams, Vec<EpochStats>)> {
        let embeddings = self.data.class_embeddings.as_ref().ok_or_else(|| {
            Error::Validation(
                "feature generation needs class embeddings (class_embeddings.tsv)".into(),
            )
        })?;
        let mut rows: Vec<&[f64]> = Vec::new();
        let mut ids: Vec<ClassId> = Vec::new();
        for (class, videos) in &self.base_train {
            for video in videos {
                for &row in clips_of(&self.store, video)? {
                    rows.push(&self.scaled[row]);
                    ids.push(*class);
                }
            }
        }
        for (class, videos) in self.novel_shot_videos()? {
            for video in videos {
                for &row in clips_of(&self.store, video)? {
                    rows.push(&self.scaled[row]);
                    ids.push(class);
                }
            }
        }
        if self.cfg.use_retrieval {
            let pseudo = self.run_retrieval()?;
            for entry in &pseudo.classes {
                for clip in &entry.clips {
                    let row = self.row_of(&clip.clip)?;
                    rows.push(&self.scaled[row]);
                    ids.push(entry.class_id);
                }
            }
        }
        let mut gan_cfg = self.cfg.gan.clone();
        gan_cfg.seed = self.cfg.master_seed;
        train_vfgan(&Mat::from_rows(&rows), &ids, embeddings, &gan_cfg)
    }

    fn query_vec(&self, class: ClassId) -> Result<Vec<f64>> {
        let names = self.data.classes.as_ref().ok_or_else(|| {
            Error::Validation("retrieval needs class names (classes.tsv)".into())
        })?;
        let name = names
            .names
            .get(&class)
            .ok_or_else(|| Error::Validation(format!("class {class} has no name")))?;
        let words = self.data.word_embeddings.as_ref().ok_or_else(|| {
            Error::Validation("retrieval needs word embeddings (word_embeddings.tsv)".into())
        })?;
        class_query(name, words)
    }

    fn row_of(&self, clip: &ClipRef) -> Result<usize> {
        let rows = clips_of(&self.store, &clip.video_id)?;
        rows.iter()
            .copied()
            .find(|&r| self.data.features.rows[r].clip_index == clip.clip_index)
            .ok_or_else(|| {
                Error::Validation(format!(
                    "video {} has no clip {}",
                    clip.video_id, clip.clip_index
                ))
            })
    }

    /// Scaled features of up to `clip_samples` stored clips of one video:
    /// all clips in stored order when the video has no more than that many,
    /// otherwise a without-replacement sample in ascending stored order.
    fn sample_query_clips(&self, video: &str, rng: &mut RngStream) -> Result<Vec<&[f64]>> {
        let rows = clips_of(&self.store, video)?;
        let l = self.cfg.clip_samples;
        let picked: Vec<usize> = if rows.len() <= l {
            rows.to_vec()
        } else {
            let mut picks = rng.sample_indices(rows.len(), l);
            picks.sort_unstable();
            picks.into_iter().map(|i| rows[i]).collect()
        };
        Ok(picked.into_iter().map(|r| self.scaled[r].as_slice()).collect())
    }
}

fn clips_of<'s>(store: &'s ClipStore<'_>, video: &str) -> Result<&'s [usize]> {
    store
        .clips_of(video)
        .ok_or_else(|| Error::Validation(format!("video {video} has no stored clip features")))
}

fn sample_episode_into(exp: &Experiment<'_>, rng: &mut RngStream) -> Result<Episode> {
    let cfg = &exp.cfg;
    let mut novel: Vec<ClassId> = exp.data.splits.novel.clone();
    novel.sort_unstable();
    let mut classes: Vec<ClassId> = rng
        .sample_indices(novel.len(), cfg.n_way)
        .into_iter()
        .map(|i| novel[i])
        .collect();
    classes.sort_unstable();

    let mut support = BTreeMap::new();
    let mut novel_queries = Vec::new();
    for &class in &classes {
        let videos = &exp.class_videos[&class];
        let need = cfg.k_shot + cfg.novel_queries;
        if videos.len() < need {
            return Err(Error::Validation(format!(
                "class {class} has {} videos, the episode needs {need}",
                videos.len()
            )));
        }
        let draw = rng.sample_indices(videos.len(), need);
        support.insert(
            class,
            draw[..cfg.k_shot].iter().map(|&i| videos[i].to_string()).collect(),
        );
        for &i in &draw[cfg.k_shot..] {
            novel_queries.push((videos[i].to_string(), class));
        }
    }

    let mut base_queries = Vec::new();
    if cfg.include_base {
        for (&class, pool) in &exp.base_test {
            let draw = rng.sample_indices(pool.len(), cfg.base_queries);
            for &i in &draw {
                base_queries.push((pool[i].to_string(), class));
            }
        }
    }
    Ok(Episode {
        classes,
        support,
        novel_queries,
        base_queries,
    })
}

/// The episode evaluated at `index`: reproducible on its own, independent
/// of every other episode.
pub fn sample_episode(exp: &Experiment<'_>, index: u64) -> Result<Episode> {
    let mut rng = derive_rng(exp.cfg.master_seed, index);
    sample_episode_into(exp, &mut rng)
}

/// Runs the per-episode pipeline: optional retrieval and generation, novel
/// head training, and clip-averaged query scoring. With base scoring the
/// queries run against the concatenated base+novel head.
pub fn run_episode(
    exp: &Experiment<'_>,
    episode: &Episode,
    rng: &mut RngStream,
) -> Result<EpisodeMetrics> {
    let cfg = &exp.cfg;

    let mut trusted_rows: Vec<&[f64]> = Vec::new();
    let mut trusted_labels: Vec<usize> = Vec::new();
    let mut support_raw: BTreeMap<ClassId, Vec<&[f64]>> = BTreeMap::new();
    for (pos, &class) in episode.classes.iter().enumerate() {
        for video in &episode.support[&class] {
            for &row in clips_of(&exp.store, video)? {
                trusted_rows.push(&exp.scaled[row]);
                trusted_labels.push(pos);
                support_raw.entry(class).or_default().push(exp.store.feature(row));
            }
        }
    }

    let mut pseudo_rows: Vec<&[f64]> = Vec::new();
    let mut pseudo_labels: Vec<usize> = Vec::new();
    if cfg.use_retrieval {
        let index = exp.tag_index.as_ref().expect("tag index built when retrieval is on");
        let mut requests = Vec::with_capacity(episode.classes.len());
        for &class in &episode.classes {
            requests.push(PseudoRequest {
                class_id: class,
                query: exp.query_vec(class)?,
                prototype: class_prototype(&support_raw[&class])?,
            });
        }
        let set = assemble_pseudo_set(&requests, index, &exp.store, &cfg.pseudo, rng)?;
        for entry in &set.classes {
            let pos = episode
                .classes
                .binary_search(&entry.class_id)
                .expect("pseudo entries match episode classes");
            for clip in &entry.clips {
                let row = exp.row_of(&clip.clip)?;
                pseudo_rows.push(&exp.scaled[row]);
                pseudo_labels.push(pos);
            }
        }
    }

    let mut generated: Vec<(usize, Mat)> = Vec::new();
    if cfg.use_gan {
        let gan = exp.gan.as_ref().expect("generator trained when use_gan is on");
        let embeddings = exp
            .data
            .class_embeddings
            .as_ref()
            .expect("embeddings checked during generator training");
        for (pos, &class) in episode.classes.iter().enumerate() {
            let out = generate_features(gan, class, embeddings, cfg.generated_per_class, rng)?;
            generated.push((pos, out));
        }
    }
    for (pos, mat) in &generated {
        for row in mat.row_iter() {
            trusted_rows.push(row);
            trusted_labels.push(*pos);
        }
    }

    let novel_head = if pseudo_rows.is_empty() {
        train_linear(
            &episode.classes,
            &Mat::from_rows(&trusted_rows),
            &trusted_labels,
            &cfg.novel_head,
            rng,
        )?
    } else if cfg.use_denoising {
        train_denoised(
            &episode.classes,
            &Mat::from_rows(&trusted_rows),
            &trusted_labels,
            &Mat::from_rows(&pseudo_rows),
            &pseudo_labels,
            &cfg.novel_head,
            rng,
        )?
    } else {
        trusted_rows.extend_from_slice(&pseudo_rows);
        trusted_labels.extend_from_slice(&pseudo_labels);
        train_linear(
            &episode.classes,
            &Mat::from_rows(&trusted_rows),
            &trusted_labels,
            &cfg.novel_head,
            rng,
        )?
    };

    let joint;
    let scoring: &LinearClassifier = if cfg.include_base {
        let base = exp
            .base_head
            .as_ref()
            .ok_or_else(|| Error::Validation("base head missing for joint scoring".into()))?;
        joint = concat_classifiers(base, &novel_head)?;
        &joint
    } else {
        &novel_head
    };

    let mut novel_correct = 0usize;
    for (video, truth) in &episode.novel_queries {
        let clips = exp.sample_query_clips(video, rng)?;
        let (pred, _) = video_predict(scoring, &clips)?;
        if pred == *truth {
            novel_correct += 1;
        }
    }
    let novel_acc = novel_correct as f64 / episode.novel_queries.len() as f64;
    if !cfg.include_base {
        return Ok(EpisodeMetrics {
            novel_acc,
            base_acc: None,
            hm: None,
        });
    }

    let mut base_correct = 0usize;
    for (video, truth) in &episode.base_queries {
        let clips = exp.sample_query_clips(video, rng)?;
        let (pred, _) = video_predict(scoring, &clips)?;
        if pred == *truth {
            base_correct += 1;
        }
    }
    let base_acc = base_correct as f64 / episode.base_queries.len() as f64;
    Ok(EpisodeMetrics {
        novel_acc,
        base_acc: Some(base_acc),
        hm: Some(harmonic_mean(base_acc, novel_acc)),
    })
}

/// Arithmetic means over per-episode metrics, in episode order.
pub fn aggregate(cfg: &EvalConfig, episodes: Vec<EpisodeMetrics>) -> Result<EvalReport> {
    if episodes.is_empty() {
        return Err(Error::Validation("no episodes to aggregate".into()));
    }
    let n = episodes.len() as f64;
    let mean_novel_acc = episodes.iter().map(|e| e.novel_acc).sum::<f64>() / n;
    let mean_base_acc = episodes
        .iter()
        .map(|e| e.base_acc)
        .sum::<Option<f64>>()
        .map(|s| s / n);
    let mean_hm = episodes
        .iter()
        .map(|e| e.hm)
        .sum::<Option<f64>>()
        .map(|s| s / n);
    Ok(EvalReport {
        config: cfg.clone(),
        mean_novel_acc,
        mean_base_acc,
        mean_hm,
        episodes,
    })
}

/// Prepares the run and evaluates every episode. Episodes run in parallel;
/// episode `i` owns the stream `derive_rng(master_seed, i)` and results are
/// collected in episode order, so the report does not depend on the thread
/// count. An episode failure aborts the run, reporting the lowest failing
/// episode index.
pub fn run_eval(data: &Dataset, cfg: &EvalConfig) -> Result<EvalReport> {
    let exp = Experiment::prepare(data, cfg)?;
    run_prepared(&exp)
}

/// Evaluates every episode of an already-prepared run. Callers may replace
/// prepared state first, e.g. swap in a generator loaded from a checkpoint
/// instead of the one `prepare` would train.
pub fn run_prepared(exp: &Experiment<'_>) -> Result<EvalReport> {
    let results: Vec<Result<EpisodeMetrics>> = (0..exp.cfg.episodes as u64)
        .into_par_iter()
        .map(|index| {
            let mut rng = derive_rng(exp.cfg.master_seed, index);
            sample_episode_into(&exp, &mut rng)
                .and_then(|episode| run_episode(&exp, &episode, &mut rng))
                .map_err(|e| Error::Validation(format!("episode {index}: {e}")))
        })
        .collect();
    let mut metrics = Vec::with_capacity(results.len());
    for r in results {
        metrics.push(r?);
    }
    aggregate(&exp.cfg, metrics)
}

pub fn write_report_json(report: &EvalReport, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report).expect("report serialize");
    text.push('\n');
    write_text(path, &text)
}

/// Per-episode CSV: `episode,novel_acc` plus `base_acc,hm` columns when the
/// run scored base classes.
pub fn write_report_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let joint = report.mean_base_acc.is_some();
    let mut out = String::from(if joint {
        "episode,novel_acc,base_acc,hm\n"
    } else {
        "episode,novel_acc\n"
    });
    for (i, e) in report.episodes.iter().enumerate() {
        if joint {
            out.push_str(&format!(
                "{},{},{},{}\n",
                i,
                e.novel_acc,
                e.base_acc.unwrap_or(f64::NAN),
                e.hm.unwrap_or(f64::NAN)
            ));
        } else {
            out.push_str(&format!("{},{}\n", i, e.novel_acc));
        }
    }
    write_text(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::{FeatureRow, FeatureTable, LabelTable, SplitManifest};
    use crate::synthbench::{make_synthetic, SynthConfig};
    use proptest::prelude::*;

    #[test]
    fn harmonic_mean_matches_published_spot_values() {
        assert!((harmonic_mean(88.7, 7.5) - 13.8).abs() <= 0.05);
        assert_eq!(harmonic_mean(50.0, 50.0), 50.0);
        assert_eq!(harmonic_mean(0.0, 90.0), 0.0);
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn harmonic_mean_sits_between_min_and_average(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let hm = harmonic_mean(a, b);
            prop_assert!(hm <= (a + b) / 2.0 + 1e-15);
            prop_assert!(hm >= a.min(b) - 1e-15);
            prop_assert_eq!(hm, harmonic_mean(b, a));
            if (a - b).abs() > 1e-9 && a > 0.0 && b > 0.0 {
                prop_assert!(hm < (a + b) / 2.0);
            }
        }
    }

    /// Small bundle: enough novel videos for 1-shot/15-query episodes.
    fn episode_bundle() -> (Dataset, SynthConfig) {
        let cfg = SynthConfig {
            base_classes: 2,
            val_classes: 0,
            novel_classes: 6,
            videos_per_class: 20,
            clips_per_video: 2,
            d_v: 4,
            d_t: 4,
            d_y: 2,
            sigma_sep: 4.0,
            sigma_noise: 1.0,
            corpus_size: 0,
            distractor_frac: 0.0,
            tag_noise: 0.0,
            seed: 11,
        };
        let (data, _) = make_synthetic(&cfg).unwrap();
        (data, cfg)
    }

    fn fsv_config(episodes: usize) -> EvalConfig {
        EvalConfig {
            episodes,
            n_way: 5,
            k_shot: 1,
            novel_queries: 15,
            master_seed: 7,
            ..EvalConfig::default()
        }
    }

    #[test]
    fn episode_counts_are_forced_by_the_config() {
        let (data, _) = episode_bundle();
        let exp = Experiment::prepare(&data, &fsv_config(1)).unwrap();
        let ep = sample_episode(&exp, 0).unwrap();
        assert_eq!(ep.classes.len(), 5);
        assert!(ep.classes.windows(2).all(|w| w[0] < w[1]));
        assert!(ep.support.values().all(|v| v.len() == 1));
        assert_eq!(ep.novel_queries.len(), 75);
        assert!(ep.base_queries.is_empty());
    }

    #[test]
    fn same_seed_and_index_reproduce_the_episode() {
        let (data, _) = episode_bundle();
        let exp = Experiment::prepare(&data, &fsv_config(1)).unwrap();
        assert_eq!(sample_episode(&exp, 3).unwrap(), sample_episode(&exp, 3).unwrap());
        assert_ne!(sample_episode(&exp, 3).unwrap(), sample_episode(&exp, 4).unwrap());
    }

    #[test]
    fn oversized_n_way_is_rejected() {
        let (data, _) = episode_bundle();
        let cfg = EvalConfig {
            n_way: 7,
            ..fsv_config(1)
        };
        let err = match Experiment::prepare(&data, &cfg) {
            Ok(_) => panic!("n_way above the novel split size must be rejected"),
            Err(e) => e,
        };
        assert!(err.to_string().contains("novel classes"), "message: {err}");
    }

    #[test]
    fn support_and_queries_never_overlap() {
        let (data, _) = episode_bundle();
        let exp = Experiment::prepare(&data, &fsv_config(1)).unwrap();
        for index in 0..20 {
            let ep = sample_episode(&exp, index).unwrap();
            for (video, class) in &ep.novel_queries {
                assert!(!ep.support[class].contains(video), "episode {index}: support video queried");
            }
        }
    }

    #[test]
    fn query_clip_sampling_respects_the_clip_budget() {
        let mut rows = Vec::new();
        for clip in 0..15 {
            rows.push(FeatureRow {
                video_id: "many".into(),
                clip_index: clip,
                values: vec![clip as f64, 1.0],
            });
        }
        rows.push(FeatureRow {
            video_id: "few".into(),
            clip_index: 0,
            values: vec![0.5, 2.0],
        });
        let data = Dataset {
            features: FeatureTable { dim: 2, rows },
            labels: LabelTable {
                map: [("many".to_string(), 0), ("few".to_string(), 1)].into_iter().collect(),
            },
            classes: None,
            splits: SplitManifest {
                base: vec![0],
                val: vec![],
                novel: vec![1],
            },
            tags: None,
            word_embeddings: None,
            class_embeddings: None,
        };
        let cfg = EvalConfig {
            n_way: 1,
            novel_queries: 1,
            holdout_frac: 0.0,
            ..EvalConfig::default()
        };
        let exp = Experiment::prepare(&data, &cfg).unwrap();
        let mut rng = derive_rng(1, 1);
        let clips = exp.sample_query_clips("many", &mut rng).unwrap();
        assert_eq!(clips.len(), 10, "15 stored clips must be subsampled to the budget");
        let mut seen: Vec<&[f64]> = clips.clone();
        seen.dedup();
        assert_eq!(seen.len(), 10, "clip sample must be without replacement");
        let clips = exp.sample_query_clips("few", &mut rng).unwrap();
        assert_eq!(clips.len(), 1, "videos below the budget use all stored clips");
    }

    /// One base class anchoring the scaler, five novel classes at distinct
    /// axis corners, and every video of a class carrying the same feature.
    fn degenerate_bundle() -> Dataset {
        let mut rows = Vec::new();
        let mut labels = BTreeMap::new();
        rows.push(FeatureRow {
            video_id: "base_lo".into(),
            clip_index: 0,
            values: vec![0.0; 5],
        });
        labels.insert("base_lo".to_string(), 0);
        rows.push(FeatureRow {
            video_id: "base_hi".into(),
            clip_index: 0,
            values: vec![10.0; 5],
        });
        labels.insert("base_hi".to_string(), 0);
        for class in 0..5u32 {
            let mut corner = vec![0.0; 5];
            corner[class as usize] = 10.0;
            for video in 0..3 {
                let id = format!("n{class}_{video}");
                rows.push(FeatureRow {
                    video_id: id.clone(),
                    clip_index: 0,
                    values: corner.clone(),
                });
                labels.insert(id, class + 1);
            }
        }
        Dataset {
            features: FeatureTable { dim: 5, rows },
            labels: LabelTable { map: labels },
            classes: None,
            splits: SplitManifest {
                base: vec![0],
                val: vec![],
                novel: vec![1, 2, 3, 4, 5],
            },
            tags: None,
            word_embeddings: None,
            class_embeddings: None,
        }
    }

    #[test]
    fn identical_support_and_query_features_score_perfectly() {
        let data = degenerate_bundle();
        let cfg = EvalConfig {
            episodes: 3,
            n_way: 5,
            k_shot: 1,
            novel_queries: 2,
            holdout_frac: 0.0,
            master_seed: 5,
            ..EvalConfig::default()
        };
        let report = run_eval(&data, &cfg).unwrap();
        assert_eq!(report.mean_novel_acc, 1.0);
        assert!(report.mean_base_acc.is_none());
    }

    #[test]
    fn aggregate_means_match_hand_arithmetic() {
        let cfg = fsv_config(2);
        let episodes = vec![
            EpisodeMetrics {
                novel_acc: 0.8,
                base_acc: Some(0.9),
                hm: Some(harmonic_mean(0.9, 0.8)),
            },
            EpisodeMetrics {
                novel_acc: 0.6,
                base_acc: Some(0.7),
                hm: Some(harmonic_mean(0.7, 0.6)),
            },
        ];
        let report = aggregate(&cfg, episodes.clone()).unwrap();
        assert_eq!(report.mean_novel_acc, 0.7);
        assert_eq!(report.mean_base_acc, Some(0.8));
        let mut reversed = episodes.clone();
        reversed.reverse();
        let other = aggregate(&cfg, reversed).unwrap();
        assert_eq!(report.mean_novel_acc, other.mean_novel_acc);
        assert_eq!(report.mean_base_acc, other.mean_base_acc);
        assert_eq!(report.mean_hm, other.mean_hm);

        let single = aggregate(&cfg, vec![episodes[0]]).unwrap();
        assert_eq!(single.mean_novel_acc, 0.8);
        assert_eq!(single.mean_hm, episodes[0].hm);
        assert!(aggregate(&cfg, vec![]).is_err());
    }

    #[test]
    fn reports_are_bit_reproducible() {
        let (data, _) = episode_bundle();
        let cfg = fsv_config(8);
        let a = run_eval(&data, &cfg).unwrap();
        let b = run_eval(&data, &cfg).unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        let (pa, pb) = (dir.path().join("a.json"), dir.path().join("b.json"));
        write_report_json(&a, &pa).unwrap();
        write_report_json(&b, &pb).unwrap();
        assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
    }

    #[test]
    fn csv_report_lists_one_line_per_episode() {
        let (data, _) = episode_bundle();
        let report = run_eval(&data, &fsv_config(4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("episodes.csv");
        write_report_csv(&report, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "episode,novel_acc");
        assert_eq!(lines.len(), 5);
        for (i, line) in lines[1..].iter().enumerate() {
            let (idx, acc) = line.split_once(',').unwrap();
            assert_eq!(idx.parse::<usize>().unwrap(), i);
            let acc: f64 = acc.parse().unwrap();
            assert_eq!(acc, report.episodes[i].novel_acc);
        }
    }

    #[test]
    fn joint_scoring_reports_base_novel_and_harmonic_mean() {
        let cfg = SynthConfig {
            base_classes: 3,
            val_classes: 0,
            novel_classes: 6,
            videos_per_class: 25,
            clips_per_video: 2,
            d_v: 8,
            d_t: 4,
            d_y: 4,
            sigma_sep: 5.0,
            sigma_noise: 1.0,
            corpus_size: 0,
            distractor_frac: 0.0,
            tag_noise: 0.0,
            seed: 13,
        };
        let (data, _) = make_synthetic(&cfg).unwrap();
        let eval_cfg = EvalConfig {
            episodes: 4,
            n_way: 3,
            k_shot: 1,
            novel_queries: 5,
            include_base: true,
            base_queries: 4,
            master_seed: 3,
            ..EvalConfig::default()
        };
        let report = run_eval(&data, &eval_cfg).unwrap();
        let base = report.mean_base_acc.expect("joint run reports base accuracy");
        let hm = report.mean_hm.expect("joint run reports harmonic mean");
        assert!((0.0..=1.0).contains(&report.mean_novel_acc));
        assert!((0.0..=1.0).contains(&base));
        for e in &report.episodes {
            let expect = harmonic_mean(e.base_acc.unwrap(), e.novel_acc);
            assert_eq!(e.hm.unwrap(), expect);
        }
        assert!((0.0..=1.0).contains(&hm));
    }

    #[test]
    fn imbalanced_joint_scoring_favors_base_classes() {
        let cfg = SynthConfig {
            base_classes: 4,
            val_classes: 0,
            novel_classes: 6,
            videos_per_class: 60,
            clips_per_video: 2,
            d_v: 8,
            d_t: 4,
            d_y: 4,
            sigma_sep: 4.0,
            sigma_noise: 1.0,
            corpus_size: 0,
            distractor_frac: 0.0,
            tag_noise: 0.0,
            seed: 17,
        };
        let (data, _) = make_synthetic(&cfg).unwrap();
        let eval_cfg = EvalConfig {
            episodes: 6,
            n_way: 5,
            k_shot: 1,
            novel_queries: 10,
            include_base: true,
            base_queries: 8,
            master_seed: 19,
            ..EvalConfig::default()
        };
        let report = run_eval(&data, &eval_cfg).unwrap();
        let base = report.mean_base_acc.unwrap();
        assert!(
            report.mean_novel_acc < base,
            "expected base logits to dominate: novel {} vs base {}",
            report.mean_novel_acc,
            base
        );
    }
}
