//! Flat `key = value` run configuration shared by every subcommand.
//!
//! One file drives the whole pipeline: dataset location, synthetic-bundle
//! geometry, episode shape, retrieval budget, head and generator training.
//! Lines are `key = value`, `#` starts a comment, unknown keys are
//! rejected. Every key can also be set on the command line with
//! `--set KEY=VALUE`, and the common ones have dedicated flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fsv_core::evaluator::EvalConfig;
use fsv_core::numkernel::OptimizerKind;
use fsv_core::synthbench::SynthConfig;

/// Every config key with its purpose, rendered into the long help text.
/// `RunConfig::apply` accepts exactly these keys; a test pins the two lists
/// to each other.
pub const KEY_DOCS: &[(&str, &str)] = &[
    ("data_dir", "dataset bundle directory read by every command but synth"),
    ("out_dir", "directory all outputs are written into"),
    ("seed", "master seed for the whole run (env fallback: FSV_SEED)"),
    ("threads", "worker thread cap; 0 uses every core"),
    ("synth_base_classes", "synthetic bundle: number of base classes"),
    ("synth_val_classes", "synthetic bundle: number of validation classes"),
    ("synth_novel_classes", "synthetic bundle: number of novel classes"),
    ("synth_videos_per_class", "synthetic bundle: labeled videos per class"),
    ("synth_clips_per_video", "synthetic bundle: stored clips per video"),
    ("synth_d_v", "synthetic bundle: clip feature dimension"),
    ("synth_d_t", "synthetic bundle: tag embedding dimension"),
    ("synth_d_y", "synthetic bundle: class embedding dimension"),
    ("synth_sigma_sep", "synthetic bundle: class mean separation radius"),
    ("synth_sigma_noise", "synthetic bundle: per-clip noise scale"),
    ("synth_corpus_size", "synthetic bundle: untrimmed tagged corpus size"),
    ("synth_distractor_frac", "synthetic bundle: fraction of corpus videos with no planted class"),
    ("synth_tag_noise", "synthetic bundle: probability the informative tag is replaced"),
    ("episodes", "evaluation episodes per run"),
    ("n_way", "novel classes per episode"),
    ("k_shot", "support videos per episode class"),
    ("novel_queries", "query videos per episode class"),
    ("gfsv", "score base and novel classes jointly and report the harmonic mean"),
    ("base_queries", "query videos per base class per episode (joint scoring)"),
    ("clip_samples", "clips sampled per query video"),
    ("holdout_frac", "fraction of each base class held out as its query pool"),
    ("use_retrieval", "augment the novel head with pseudo-labeled corpus clips"),
    ("use_gan", "augment the novel head with generated features"),
    ("use_denoising", "mix trusted and pseudo samples half-and-half per batch"),
    ("use_best_clips", "keep only the clips nearest the class prototype (false keeps all)"),
    ("generated_per_class", "generated features per episode class"),
    ("gan_novel_shots", "novel videos per class feeding retrieval prototypes and generator training; 0 matches k_shot"),
    ("retrieval_candidates", "videos retrieved per class query"),
    ("retrieval_best", "clips kept per class after prototype ranking"),
    ("retrieval_clips_per_candidate", "clips sampled from each retrieved video"),
    ("base_head_epochs", "base head: training epochs"),
    ("base_head_learning_rate", "base head: learning rate"),
    ("base_head_batch_size", "base head: batch size"),
    ("base_head_init_scale", "base head: weight init scale (0 starts at zero)"),
    ("base_head_optimizer", "base head: sgd or adam"),
    ("novel_head_epochs", "novel head: training epochs"),
    ("novel_head_learning_rate", "novel head: learning rate"),
    ("novel_head_batch_size", "novel head: batch size"),
    ("novel_head_init_scale", "novel head: weight init scale (0 starts at zero)"),
    ("novel_head_optimizer", "novel head: sgd or adam"),
    ("gan_epochs", "generator training: epochs"),
    ("gan_batch_size", "generator training: batch size"),
    ("gan_n_critic", "generator training: critic steps per generator step"),
    ("gan_lambda", "generator training: gradient penalty coefficient"),
    ("gan_learning_rate_d", "generator training: critic learning rate"),
    ("gan_learning_rate_g", "generator training: generator learning rate"),
    ("gan_beta1", "generator training: Adam beta1"),
    ("gan_beta2", "generator training: Adam beta2"),
    ("gan_epsilon", "generator training: Adam epsilon"),
    ("gan_class_balanced", "generator training: build batches round-robin over classes"),
];

/// Help section listing every config key with its default.
pub fn key_help() -> String {
    let defaults = RunConfig::default().keys_and_values();
    let mut out = String::from(
        "Config keys (flat `key = value` file, `#` comments; each key also \
         accepts --set KEY=VALUE):\n",
    );
    for (key, doc) in KEY_DOCS {
        let default = &defaults[*key];
        let _ = writeln!(out, "  {key} = {default}\n      {doc}");
    }
    out
}

/// Fully merged run settings. `seed` fans out to the synthetic generator
/// and the evaluation master seed when the config is finalized.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub threads: usize,
    pub synth: SynthConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            seed: 42,
            threads: 0,
            synth: SynthConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str, kind: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("config key {key}: expected {kind}, got {value:?}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("config key {key}: expected true or false, got {value:?}")),
    }
}

fn parse_optimizer(key: &str, value: &str) -> Result<OptimizerKind, String> {
    match value {
        "sgd" => Ok(OptimizerKind::Sgd),
        "adam" => Ok(OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }),
        _ => Err(format!("config key {key}: expected sgd or adam, got {value:?}")),
    }
}

fn optimizer_name(kind: &OptimizerKind) -> &'static str {
    match kind {
        OptimizerKind::Sgd => "sgd",
        OptimizerKind::Adam { .. } => "adam",
    }
}

impl RunConfig {
    /// Sets one key. Unknown keys and unparseable values are rejected with
    /// a message naming the key.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), String> {
        let e = &mut self.eval;
        match key {
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "seed" => self.seed = parse(key, value, "an unsigned integer")?,
            "threads" => self.threads = parse(key, value, "an unsigned integer")?,
            "synth_base_classes" => self.synth.base_classes = parse(key, value, "a count")?,
            "synth_val_classes" => self.synth.val_classes = parse(key, value, "a count")?,
            "synth_novel_classes" => self.synth.novel_classes = parse(key, value, "a count")?,
            "synth_videos_per_class" => {
                self.synth.videos_per_class = parse(key, value, "a count")?
            }
            "synth_clips_per_video" => self.synth.clips_per_video = parse(key, value, "a count")?,
            "synth_d_v" => self.synth.d_v = parse(key, value, "a dimension")?,
            "synth_d_t" => self.synth.d_t = parse(key, value, "a dimension")?,
            "synth_d_y" => self.synth.d_y = parse(key, value, "a dimension")?,
            "synth_sigma_sep" => self.synth.sigma_sep = parse(key, value, "a float")?,
            "synth_sigma_noise" => self.synth.sigma_noise = parse(key, value, "a float")?,
            "synth_corpus_size" => self.synth.corpus_size = parse(key, value, "a count")?,
            "synth_distractor_frac" => self.synth.distractor_frac = parse(key, value, "a float")?,
            "synth_tag_noise" => self.synth.tag_noise = parse(key, value, "a float")?,
            "episodes" => e.episodes = parse(key, value, "a count")?,
            "n_way" => e.n_way = parse(key, value, "a count")?,
            "k_shot" => e.k_shot = parse(key, value, "a count")?,
            "novel_queries" => e.novel_queries = parse(key, value, "a count")?,
            "gfsv" => e.include_base = parse_bool(key, value)?,
            "base_queries" => e.base_queries = parse(key, value, "a count")?,
            "clip_samples" => e.clip_samples = parse(key, value, "a count")?,
            "holdout_frac" => e.holdout_frac = parse(key, value, "a float")?,
            "use_retrieval" => e.use_retrieval = parse_bool(key, value)?,
            "use_gan" => e.use_gan = parse_bool(key, value)?,
            "use_denoising" => e.use_denoising = parse_bool(key, value)?,
            "use_best_clips" => e.pseudo.select_best = parse_bool(key, value)?,
            "generated_per_class" => e.generated_per_class = parse(key, value, "a count")?,
            "gan_novel_shots" => {
                let n: usize = parse(key, value, "a count (0 matches k_shot)")?;
                e.gan_novel_shots = (n > 0).then_some(n);
            }
            "retrieval_candidates" => e.pseudo.candidates = parse(key, value, "a count")?,
            "retrieval_best" => e.pseudo.best = parse(key, value, "a count")?,
            "retrieval_clips_per_candidate" => {
                e.pseudo.clips_per_candidate = parse(key, value, "a count")?
            }
            "base_head_epochs" => e.base_head.epochs = parse(key, value, "a count")?,
            "base_head_learning_rate" => e.base_head.learning_rate = parse(key, value, "a float")?,
            "base_head_batch_size" => e.base_head.batch_size = parse(key, value, "a count")?,
            "base_head_init_scale" => e.base_head.init_scale = parse(key, value, "a float")?,
            "base_head_optimizer" => e.base_head.optimizer = parse_optimizer(key, value)?,
            "novel_head_epochs" => e.novel_head.epochs = parse(key, value, "a count")?,
            "novel_head_learning_rate" => {
                e.novel_head.learning_rate = parse(key, value, "a float")?
            }
            "novel_head_batch_size" => e.novel_head.batch_size = parse(key, value, "a count")?,
            "novel_head_init_scale" => e.novel_head.init_scale = parse(key, value, "a float")?,
            "novel_head_optimizer" => e.novel_head.optimizer = parse_optimizer(key, value)?,
            "gan_epochs" => e.gan.epochs = parse(key, value, "a count")?,
            "gan_batch_size" => e.gan.batch_size = parse(key, value, "a count")?,
            "gan_n_critic" => e.gan.n_critic = parse(key, value, "a count")?,
            "gan_lambda" => e.gan.lambda = parse(key, value, "a float")?,
            "gan_learning_rate_d" => e.gan.learning_rate_d = parse(key, value, "a float")?,
            "gan_learning_rate_g" => e.gan.learning_rate_g = parse(key, value, "a float")?,
            "gan_beta1" => e.gan.beta1 = parse(key, value, "a float")?,
            "gan_beta2" => e.gan.beta2 = parse(key, value, "a float")?,
            "gan_epsilon" => e.gan.epsilon = parse(key, value, "a float")?,
            "gan_class_balanced" => e.gan.class_balanced = parse_bool(key, value)?,
            _ => return Err(format!("unknown config key {key:?}")),
        }
        Ok(())
    }

    /// Propagates the master seed into every seeded stage. Call once after
    /// all sources are merged.
    pub fn finalize(&mut self) {
        self.synth.seed = self.seed;
        self.eval.master_seed = self.seed;
        self.eval.gan.seed = self.seed;
    }

    /// Every key with its current value as the string `apply` would accept.
    /// Key order is lexicographic, so the rendering is canonical.
    pub fn keys_and_values(&self) -> BTreeMap<String, String> {
        let e = &self.eval;
        let entries: Vec<(&str, String)> = vec![
            ("data_dir", self.data_dir.display().to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("seed", self.seed.to_string()),
            ("threads", self.threads.to_string()),
            ("synth_base_classes", self.synth.base_classes.to_string()),
            ("synth_val_classes", self.synth.val_classes.to_string()),
            ("synth_novel_classes", self.synth.novel_classes.to_string()),
            ("synth_videos_per_class", self.synth.videos_per_class.to_string()),
            ("synth_clips_per_video", self.synth.clips_per_video.to_string()),
            ("synth_d_v", self.synth.d_v.to_string()),
            ("synth_d_t", self.synth.d_t.to_string()),
            ("synth_d_y", self.synth.d_y.to_string()),
            ("synth_sigma_sep", self.synth.sigma_sep.to_string()),
            ("synth_sigma_noise", self.synth.sigma_noise.to_string()),
            ("synth_corpus_size", self.synth.corpus_size.to_string()),
            ("synth_distractor_frac", self.synth.distractor_frac.to_string()),
            ("synth_tag_noise", self.synth.tag_noise.to_string()),
            ("episodes", e.episodes.to_string()),
            ("n_way", e.n_way.to_string()),
            ("k_shot", e.k_shot.to_string()),
            ("novel_queries", e.novel_queries.to_string()),
            ("gfsv", e.include_base.to_string()),
            ("base_queries", e.base_queries.to_string()),
            ("clip_samples", e.clip_samples.to_string()),
            ("holdout_frac", e.holdout_frac.to_string()),
            ("use_retrieval", e.use_retrieval.to_string()),
            ("use_gan", e.use_gan.to_string()),
            ("use_denoising", e.use_denoising.to_string()),
            ("use_best_clips", e.pseudo.select_best.to_string()),
            ("generated_per_class", e.generated_per_class.to_string()),
            ("gan_novel_shots", e.gan_novel_shots.unwrap_or(0).to_string()),
            ("retrieval_candidates", e.pseudo.candidates.to_string()),
            ("retrieval_best", e.pseudo.best.to_string()),
            ("retrieval_clips_per_candidate", e.pseudo.clips_per_candidate.to_string()),
            ("base_head_epochs", e.base_head.epochs.to_string()),
            ("base_head_learning_rate", e.base_head.learning_rate.to_string()),
            ("base_head_batch_size", e.base_head.batch_size.to_string()),
            ("base_head_init_scale", e.base_head.init_scale.to_string()),
            ("base_head_optimizer", optimizer_name(&e.base_head.optimizer).to_string()),
            ("novel_head_epochs", e.novel_head.epochs.to_string()),
            ("novel_head_learning_rate", e.novel_head.learning_rate.to_string()),
            ("novel_head_batch_size", e.novel_head.batch_size.to_string()),
            ("novel_head_init_scale", e.novel_head.init_scale.to_string()),
            ("novel_head_optimizer", optimizer_name(&e.novel_head.optimizer).to_string()),
            ("gan_epochs", e.gan.epochs.to_string()),
            ("gan_batch_size", e.gan.batch_size.to_string()),
            ("gan_n_critic", e.gan.n_critic.to_string()),
            ("gan_lambda", e.gan.lambda.to_string()),
            ("gan_learning_rate_d", e.gan.learning_rate_d.to_string()),
            ("gan_learning_rate_g", e.gan.learning_rate_g.to_string()),
            ("gan_beta1", e.gan.beta1.to_string()),
            ("gan_beta2", e.gan.beta2.to_string()),
            ("gan_epsilon", e.gan.epsilon.to_string()),
            ("gan_class_balanced", e.gan.class_balanced.to_string()),
        ];
        entries
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    /// The canonical `key = value` rendering hashed into the manifest.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for (key, value) in self.keys_and_values() {
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }
}

/// Parses a config file into `(line_number, key, value)` triples. Blank
/// lines and `#` comment lines are skipped.
pub fn parse_file(path: &Path) -> Result<Vec<(usize, String, String)>, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config file {}: {e}", path.display()))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            format!(
                "{}:{}: expected `key = value`, got {line:?}",
                path.display(),
                i + 1
            )
        })?;
        out.push((i + 1, key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_documented_key_is_accepted_and_emitted() {
        let mut cfg = RunConfig::default();
        let emitted = cfg.keys_and_values();
        assert_eq!(emitted.len(), KEY_DOCS.len());
        for (key, _) in KEY_DOCS {
            assert!(emitted.contains_key(*key), "{key} missing from keys_and_values");
            let value = emitted[*key].clone();
            cfg.apply(key, &value).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
        assert_eq!(cfg, RunConfig::default(), "defaults must round-trip through apply");
    }

    #[test]
    fn unknown_keys_and_bad_values_name_the_key() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply("frobnicate", "1").unwrap_err();
        assert!(err.contains("frobnicate"));
        let err = cfg.apply("episodes", "many").unwrap_err();
        assert!(err.contains("episodes") && err.contains("many"));
        let err = cfg.apply("use_gan", "yes").unwrap_err();
        assert!(err.contains("use_gan"));
    }

    #[test]
    fn seed_fans_out_on_finalize() {
        let mut cfg = RunConfig::default();
        cfg.apply("seed", "7").unwrap();
        cfg.finalize();
        assert_eq!(cfg.synth.seed, 7);
        assert_eq!(cfg.eval.master_seed, 7);
        assert_eq!(cfg.eval.gan.seed, 7);
    }

    #[test]
    fn file_parsing_skips_comments_and_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# run\n\nseed = 9\n  n_way=10  \n").unwrap();
        let entries = parse_file(&path).unwrap();
        assert_eq!(
            entries,
            vec![
                (3, "seed".to_string(), "9".to_string()),
                (4, "n_way".to_string(), "10".to_string()),
            ]
        );
        std::fs::write(&path, "seed 9\n").unwrap();
        let err = parse_file(&path).unwrap_err();
        assert!(err.contains(":1:"), "message: {err}");
    }

    #[test]
    fn gan_novel_shots_zero_means_match_k_shot() {
        let mut cfg = RunConfig::default();
        cfg.apply("gan_novel_shots", "3").unwrap();
        assert_eq!(cfg.eval.gan_novel_shots, Some(3));
        cfg.apply("gan_novel_shots", "0").unwrap();
        assert_eq!(cfg.eval.gan_novel_shots, None);
    }
}
