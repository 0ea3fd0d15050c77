//! `fsv`: command-line front end for the few-shot video classification
//! pipeline. Subcommands generate synthetic bundles, train the base head
//! and the feature generator, assemble pseudo-labeled sets, and run
//! episodic evaluations and parameter sweeps.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 config error, 3 missing
//! upstream artifact. Every command writes its artifacts plus a
//! `manifest.json` (config hash, seed, artifact checksums) under `--out`,
//! each file atomically via write-temp-then-rename.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use config::RunConfig;
use fsv_core::classifier::write_classifier;
use fsv_core::datastore::Dataset;
use fsv_core::evaluator::{run_prepared, write_report_csv, write_report_json, EvalConfig, Experiment};
use fsv_core::retrieval::write_pseudo_set;
use fsv_core::synthbench::{make_synthetic, write_synthetic};
use fsv_core::vfgan::{read_gan_checkpoint, write_gan_checkpoint, write_gan_log};

#[derive(Parser)]
#[command(
    name = "fsv",
    version,
    about = "Feature-space few-shot video classification pipeline",
    after_long_help = config::key_help()
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset bundle with known class geometry.
    Synth(CommonArgs),
    /// Train the base-class head and write its checkpoint.
    TrainBase(CommonArgs),
    /// Retrieve corpus videos per novel class and write the pseudo-labeled
    /// clip set.
    Retrieve(CommonArgs),
    /// Train the conditional feature generator and write its checkpoint and
    /// training log.
    TrainGan(CommonArgs),
    /// Run the episodic evaluation and write the report and per-episode CSV.
    Eval(EvalArgs),
    /// Evaluate one parameter across several values; one CSV row per value,
    /// same seed everywhere.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Config file, flat `key = value` lines with `#` comments.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Dataset bundle directory [key: data_dir].
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Output directory [key: out_dir].
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed [key: seed; env fallback: FSV_SEED].
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread cap, 0 uses every core [key: threads].
    #[arg(long)]
    threads: Option<usize>,
    /// Override any config key (repeatable, see the key list in long help).
    #[arg(long, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Evaluation episodes [key: episodes].
    #[arg(long)]
    episodes: Option<usize>,
    /// Novel classes per episode [key: n_way].
    #[arg(long)]
    n_way: Option<usize>,
    /// Support videos per episode class [key: k_shot].
    #[arg(long)]
    k_shot: Option<usize>,
    /// Score base and novel classes jointly [key: gfsv].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    gfsv: Option<bool>,
    /// Add pseudo-labeled corpus clips to novel-head training
    /// [key: use_retrieval].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    use_retrieval: Option<bool>,
    /// Add generated features to novel-head training [key: use_gan].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    use_gan: Option<bool>,
    /// Mix trusted and pseudo samples half-and-half per batch
    /// [key: use_denoising].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    use_denoising: Option<bool>,
    /// Keep only the retrieved clips nearest the class prototype; pass
    /// `false` to train on every sampled candidate clip
    /// [key: use_best_clips].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    use_best_clips: Option<bool>,
    /// Reuse a generator checkpoint instead of training one.
    #[arg(long, value_name = "FILE")]
    gan_checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Swept parameter.
    #[arg(long, value_enum)]
    param: SweepParam,
    /// Comma-separated values, one evaluation run each.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepParam {
    /// Clips kept per class by retrieval; forces use_retrieval on.
    #[value(name = "retrieved_clips")]
    RetrievedClips,
    /// Generated features per episode class; forces use_gan on.
    #[value(name = "generated_count")]
    GeneratedCount,
    /// Novel classes per episode.
    #[value(name = "n_way")]
    NWay,
}

impl SweepParam {
    fn key(self) -> &'static str {
        match self {
            SweepParam::RetrievedClips => "retrieved_clips",
            SweepParam::GeneratedCount => "generated_count",
            SweepParam::NWay => "n_way",
        }
    }
}

/// Failure with its process exit code: 1 runtime, 2 config, 3 missing
/// upstream artifact.
struct Failure {
    code: i32,
    msg: String,
}

fn fail(code: i32, msg: impl Into<String>) -> Failure {
    Failure {
        code,
        msg: msg.into(),
    }
}

/// Invalid configuration surfaces as exit 2; everything else a component
/// reports is a runtime failure.
fn core_err(e: fsv_core::Error) -> Failure {
    let code = match e {
        fsv_core::Error::Config(_) => 2,
        _ => 1,
    };
    fail(code, e.to_string())
}

fn main() {
    let cli = Cli::parse();
    if let Err(f) = run(cli.cmd) {
        eprintln!("error: {}", f.msg);
        std::process::exit(f.code);
    }
}

fn run(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Synth(common) => cmd_synth(&build_config(&common, None)?),
        Cmd::TrainBase(common) => cmd_train_base(&build_config(&common, None)?),
        Cmd::Retrieve(common) => cmd_retrieve(&build_config(&common, None)?),
        Cmd::TrainGan(common) => cmd_train_gan(&build_config(&common, None)?),
        Cmd::Eval(args) => {
            let cfg = build_config(&args.common, Some(&args))?;
            cmd_eval(&cfg, args.gan_checkpoint.as_deref())
        }
        Cmd::Sweep(args) => {
            let cfg = build_config(&args.eval.common, Some(&args.eval))?;
            cmd_sweep(&cfg, args.param, &args.values)
        }
    }
}

/// Merges all config sources. Precedence, lowest to highest: built-in
/// defaults, FSV_SEED, config file, --set overrides, named flags.
fn build_config(common: &CommonArgs, eval: Option<&EvalArgs>) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::default();
    if let Ok(seed) = std::env::var("FSV_SEED") {
        cfg.seed = seed
            .parse()
            .map_err(|_| fail(2, format!("FSV_SEED must be an unsigned integer, got {seed:?}")))?;
    }
    if let Some(path) = &common.config {
        for (line, key, value) in config::parse_file(path).map_err(|m| fail(2, m))? {
            cfg.apply(&key, &value)
                .map_err(|m| fail(2, format!("{}:{line}: {m}", path.display())))?;
        }
    }
    for entry in &common.set {
        let (key, value) = entry
            .split_once('=')
            .ok_or_else(|| fail(2, format!("--set expects KEY=VALUE, got {entry:?}")))?;
        cfg.apply(key.trim(), value.trim()).map_err(|m| fail(2, m))?;
    }
    if let Some(dir) = &common.data {
        cfg.data_dir = dir.clone();
    }
    if let Some(dir) = &common.out {
        cfg.out_dir = dir.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = common.threads {
        cfg.threads = threads;
    }
    if let Some(args) = eval {
        let e = &mut cfg.eval;
        if let Some(v) = args.episodes {
            e.episodes = v;
        }
        if let Some(v) = args.n_way {
            e.n_way = v;
        }
        if let Some(v) = args.k_shot {
            e.k_shot = v;
        }
        if let Some(v) = args.gfsv {
            e.include_base = v;
        }
        if let Some(v) = args.use_retrieval {
            e.use_retrieval = v;
        }
        if let Some(v) = args.use_gan {
            e.use_gan = v;
        }
        if let Some(v) = args.use_denoising {
            e.use_denoising = v;
        }
        if let Some(v) = args.use_best_clips {
            e.pseudo.select_best = v;
        }
    }
    cfg.finalize();
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| fail(1, format!("cannot size the thread pool: {e}")))?;
    }
    Ok(cfg)
}

/// Exit 3 when a required input file is missing, naming it.
fn require_files(dir: &Path, names: &[&str]) -> Result<(), Failure> {
    for name in names {
        let path = dir.join(name);
        if !path.exists() {
            return Err(fail(3, format!("missing required input {}", path.display())));
        }
    }
    Ok(())
}

const DATASET_FILES: &[&str] = &["features.tsv", "labels.tsv", "splits.json"];
const RETRIEVAL_FILES: &[&str] = &["tags.tsv", "word_embeddings.tsv", "classes.tsv"];
const GAN_FILES: &[&str] = &["class_embeddings.tsv"];

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, Failure> {
    require_files(&cfg.data_dir, DATASET_FILES)?;
    Dataset::load_dir(&cfg.data_dir).map_err(core_err)
}

fn tmp_sibling(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp"))
}

/// Writes through a temp sibling and renames it into place, so a crash
/// never leaves a half-written artifact under the final name.
fn atomic_write<F>(path: &Path, write: F) -> Result<(), Failure>
where
    F: FnOnce(&Path) -> fsv_core::Result<()>,
{
    let tmp = tmp_sibling(path);
    write(&tmp).map_err(core_err)?;
    fs::rename(&tmp, path)
        .map_err(|e| fail(1, format!("cannot move {} into place: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<(), Failure> {
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| fail(1, format!("cannot create {}: {e}", cfg.out_dir.display())))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Records what the run was (command, seed, full config and its hash) and
/// what it produced (artifact checksums). Identical manifests imply
/// byte-identical outputs.
fn write_manifest(cfg: &RunConfig, command: &str, artifacts: &[String]) -> Result<(), Failure> {
    let mut checksums = BTreeMap::new();
    for name in artifacts {
        let path = cfg.out_dir.join(name);
        let bytes = fs::read(&path)
            .map_err(|e| fail(1, format!("cannot read back {}: {e}", path.display())))?;
        checksums.insert(name.clone(), sha256_hex(&bytes));
    }
    let manifest = serde_json::json!({
        "command": command,
        "seed": cfg.seed,
        "config_sha256": sha256_hex(cfg.canonical_text().as_bytes()),
        "config": cfg.keys_and_values(),
        "artifacts": checksums,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialize") + "\n";
    atomic_write(&cfg.out_dir.join("manifest.json"), |tmp| {
        fs::write(tmp, &text).map_err(|e| fsv_core::Error::Validation(e.to_string()))
    })
}

fn cmd_synth(cfg: &RunConfig) -> Result<(), Failure> {
    cfg.synth.validate().map_err(core_err)?;
    let (data, truth) = make_synthetic(&cfg.synth).map_err(core_err)?;
    ensure_out_dir(cfg)?;

    // The bundle is many files; stage them in a scratch dir, then rename
    // each into the output directory for the same no-torn-file guarantee
    // as the single-file writes.
    let stage = cfg.out_dir.join(".stage-synth");
    let _ = fs::remove_dir_all(&stage);
    fs::create_dir_all(&stage).map_err(|e| fail(1, format!("cannot create {}: {e}", stage.display())))?;
    write_synthetic(&data, &truth, &stage).map_err(core_err)?;

    let mut names = Vec::new();
    let entries = fs::read_dir(&stage).map_err(|e| fail(1, format!("cannot list {}: {e}", stage.display())))?;
    for entry in entries {
        let entry = entry.map_err(|e| fail(1, e.to_string()))?;
        names.push(entry.file_name().to_string_lossy().into_owned());
    }
    names.sort();
    for name in &names {
        let to = cfg.out_dir.join(name);
        fs::rename(stage.join(name), &to)
            .map_err(|e| fail(1, format!("cannot move {} into place: {e}", to.display())))?;
        println!("wrote {}", to.display());
    }
    let _ = fs::remove_dir_all(&stage);
    write_manifest(cfg, "synth", &names)
}

/// Artifact commands never sample episodes, so the episode shape must not
/// block them: n_way is clamped to a size every nonempty novel split allows.
fn artifact_eval_config(cfg: &RunConfig) -> EvalConfig {
    let mut ecfg = cfg.eval.clone();
    ecfg.include_base = false;
    ecfg.n_way = 1;
    ecfg
}

fn cmd_train_base(cfg: &RunConfig) -> Result<(), Failure> {
    let data = load_dataset(cfg)?;
    let mut ecfg = artifact_eval_config(cfg);
    ecfg.use_retrieval = false;
    ecfg.use_gan = false;
    let exp = Experiment::prepare(&data, &ecfg).map_err(core_err)?;
    let head = exp.train_base_head().map_err(core_err)?;
    ensure_out_dir(cfg)?;
    atomic_write(&cfg.out_dir.join("base_head.tsv"), |tmp| {
        write_classifier(&head, tmp)
    })?;
    write_manifest(cfg, "train-base", &["base_head.tsv".to_string()])
}

fn cmd_retrieve(cfg: &RunConfig) -> Result<(), Failure> {
    require_files(&cfg.data_dir, RETRIEVAL_FILES)?;
    let data = load_dataset(cfg)?;
    let mut ecfg = artifact_eval_config(cfg);
    ecfg.use_retrieval = true;
    ecfg.use_gan = false;
    let exp = Experiment::prepare(&data, &ecfg).map_err(core_err)?;
    let set = exp.run_retrieval().map_err(core_err)?;
    ensure_out_dir(cfg)?;
    atomic_write(&cfg.out_dir.join("pseudo_set.tsv"), |tmp| {
        write_pseudo_set(&set, tmp)
    })?;
    write_manifest(cfg, "retrieve", &["pseudo_set.tsv".to_string()])
}

fn cmd_train_gan(cfg: &RunConfig) -> Result<(), Failure> {
    require_files(&cfg.data_dir, GAN_FILES)?;
    if cfg.eval.use_retrieval {
        require_files(&cfg.data_dir, RETRIEVAL_FILES)?;
    }
    cfg.eval.gan.validate().map_err(core_err)?;
    let data = load_dataset(cfg)?;
    let mut ecfg = artifact_eval_config(cfg);
    // prepare() would train the generator itself with use_gan set; this
    // command owns that step so it can also write the training log.
    ecfg.use_gan = false;
    let exp = Experiment::prepare(&data, &ecfg).map_err(core_err)?;
    let (gan, log) = exp.train_generator().map_err(core_err)?;
    ensure_out_dir(cfg)?;
    atomic_write(&cfg.out_dir.join("gan.ckpt"), |tmp| {
        write_gan_checkpoint(&gan, tmp)
    })?;
    atomic_write(&cfg.out_dir.join("gan_log.csv"), |tmp| write_gan_log(&log, tmp))?;
    write_manifest(
        cfg,
        "train-gan",
        &["gan.ckpt".to_string(), "gan_log.csv".to_string()],
    )
}

fn cmd_eval(cfg: &RunConfig, gan_checkpoint: Option<&Path>) -> Result<(), Failure> {
    if cfg.eval.use_retrieval {
        require_files(&cfg.data_dir, RETRIEVAL_FILES)?;
    }
    if cfg.eval.use_gan || gan_checkpoint.is_some() {
        require_files(&cfg.data_dir, GAN_FILES)?;
    }
    let data = load_dataset(cfg)?;

    let report = if let Some(ckpt) = gan_checkpoint {
        if !ckpt.exists() {
            return Err(fail(3, format!("missing generator checkpoint {}", ckpt.display())));
        }
        if cfg.eval.generated_per_class == 0 {
            return Err(fail(2, "generated_per_class must be at least 1 when a generator checkpoint is used"));
        }
        let gan = read_gan_checkpoint(ckpt).map_err(core_err)?;
        let mut ecfg = cfg.eval.clone();
        ecfg.use_gan = false;
        let mut exp = Experiment::prepare(&data, &ecfg).map_err(core_err)?;
        exp.cfg.use_gan = true;
        exp.gan = Some(gan);
        run_prepared(&exp).map_err(core_err)?
    } else {
        let exp = Experiment::prepare(&data, &cfg.eval).map_err(core_err)?;
        run_prepared(&exp).map_err(core_err)?
    };

    ensure_out_dir(cfg)?;
    atomic_write(&cfg.out_dir.join("report.json"), |tmp| {
        write_report_json(&report, tmp)
    })?;
    atomic_write(&cfg.out_dir.join("episodes.csv"), |tmp| {
        write_report_csv(&report, tmp)
    })?;
    println!("mean_novel_acc {}", report.mean_novel_acc);
    if let (Some(base), Some(hm)) = (report.mean_base_acc, report.mean_hm) {
        println!("mean_base_acc {hm_base}", hm_base = base);
        println!("mean_hm {hm}");
    }
    write_manifest(
        cfg,
        "eval",
        &["report.json".to_string(), "episodes.csv".to_string()],
    )
}

fn apply_sweep_value(ecfg: &mut EvalConfig, param: SweepParam, value: usize) {
    match param {
        SweepParam::RetrievedClips => {
            ecfg.use_retrieval = true;
            ecfg.pseudo.best = value;
        }
        SweepParam::GeneratedCount => {
            ecfg.use_gan = true;
            ecfg.generated_per_class = value;
        }
        SweepParam::NWay => ecfg.n_way = value,
    }
}

fn cmd_sweep(cfg: &RunConfig, param: SweepParam, values: &[usize]) -> Result<(), Failure> {
    if values.is_empty() {
        return Err(fail(2, "--values must list at least one value"));
    }
    for &v in values {
        if v == 0 {
            return Err(fail(2, format!("sweep value 0 is invalid for {}", param.key())));
        }
    }
    if param == SweepParam::RetrievedClips || cfg.eval.use_retrieval {
        require_files(&cfg.data_dir, RETRIEVAL_FILES)?;
    }
    if param == SweepParam::GeneratedCount || cfg.eval.use_gan {
        require_files(&cfg.data_dir, GAN_FILES)?;
    }
    let data = load_dataset(cfg)?;

    let joint = cfg.eval.include_base;
    let mut csv = if joint {
        format!("{},mean_novel_acc,mean_base_acc,mean_hm\n", param.key())
    } else {
        format!("{},mean_novel_acc\n", param.key())
    };
    for &value in values {
        let mut ecfg = cfg.eval.clone();
        apply_sweep_value(&mut ecfg, param, value);
        let exp = Experiment::prepare(&data, &ecfg).map_err(core_err)?;
        let report = run_prepared(&exp).map_err(core_err)?;
        if joint {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                value,
                report.mean_novel_acc,
                report.mean_base_acc.unwrap_or(f64::NAN),
                report.mean_hm.unwrap_or(f64::NAN)
            ));
        } else {
            csv.push_str(&format!("{},{}\n", value, report.mean_novel_acc));
        }
        println!("{} {} mean_novel_acc {}", param.key(), value, report.mean_novel_acc);
    }
    ensure_out_dir(cfg)?;
    atomic_write(&cfg.out_dir.join("sweep.csv"), |tmp| {
        fs::write(tmp, &csv).map_err(|e| fsv_core::Error::Validation(e.to_string()))
    })?;
    write_manifest(cfg, "sweep", &["sweep.csv".to_string()])
}
