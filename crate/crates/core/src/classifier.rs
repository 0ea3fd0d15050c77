//! Linear softmax classifiers over frozen clip features.
//!
//! Covers base-class training on the full base set, few-shot novel-class
//! training with optional batch denoising against a noisy pseudo set, and
//! clip-to-video prediction by averaging per-clip softmax scores. Heads are
//! bias-free: a video clip scores `W phi(x)` with one weight row per class.

use std::collections::BTreeSet;
use std::path::Path;

use crate::datastore::ClassId;
use crate::datastore::formats::{parse_err, parse_finite, read_text, write_text};
use crate::numkernel::{log_sum_exp, softmax, Mat, OptimizerKind, OptimizerState, RngStream};
use crate::{Error, Result};

/// Linear head over a fixed class list. `weights` has one row per entry of
/// `class_ids`, in the same order; logits for a clip are the row dot products.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier {
    pub class_ids: Vec<ClassId>,
    pub weights: Mat,
}

impl LinearClassifier {
    pub fn new(class_ids: Vec<ClassId>, weights: Mat) -> Result<Self> {
        if weights.rows() != class_ids.len() {
            return Err(Error::Shape(format!(
                "classifier has {} weight rows for {} classes",
                weights.rows(),
                class_ids.len()
            )));
        }
        let distinct: BTreeSet<ClassId> = class_ids.iter().copied().collect();
        if distinct.len() != class_ids.len() {
            return Err(Error::Validation("classifier class list has duplicates".into()));
        }
        if let Some(pos) = weights.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "classifier weight {pos} is non-finite"
            )));
        }
        Ok(LinearClassifier { class_ids, weights })
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }

    /// Raw scores for one clip, ordered like `class_ids`.
    pub fn logits(&self, clip: &[f64]) -> Vec<f64> {
        assert_eq!(
            clip.len(),
            self.dim(),
            "logits: clip has {} values, classifier expects {}",
            clip.len(),
            self.dim()
        );
        self.weights
            .row_iter()
            .map(|w| crate::numkernel::dot(w, clip))
            .collect()
    }
}

/// `-log softmax(logits)[label]`, computed via log-sum-exp.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::Validation(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    Ok(log_sum_exp(logits) - logits[label])
}

/// Mini-batch settings for one head.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            learning_rate: 0.01,
            batch_size: 64,
            optimizer: OptimizerKind::Sgd,
            init_scale: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, denoising: bool) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if denoising && (self.batch_size < 2 || self.batch_size % 2 != 0) {
            return Err(Error::Config(format!(
                "denoising needs an even batch size of at least 2, got {}",
                self.batch_size
            )));
        }
        if self.init_scale < 0.0 || !self.init_scale.is_finite() {
            return Err(Error::Config(format!(
                "weight init scale must be non-negative, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }
}

/// Seeded centered-Gaussian weight init, one row per class.
pub fn init_classifier(
    class_ids: &[ClassId],
    dim: usize,
    scale: f64,
    rng: &mut RngStream,
) -> Result<LinearClassifier> {
    let mut weights = Mat::zeros(class_ids.len(), dim);
    for w in weights.data_mut() {
        *w = scale * rng.normal();
    }
    LinearClassifier::new(class_ids.to_vec(), weights)
}

/// One sample reference inside a denoising batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchItem {
    Trusted(usize),
    Pseudo(usize),
}

/// Batch schedule mixing a trusted few-shot set with a noisy pseudo set:
/// every batch is exactly half trusted and half pseudo samples, drawing with
/// replacement whenever a pool is smaller than its half-quota. An epoch has
/// ceil((trusted + pseudo) / batch_size) batches. With no pseudo samples the
/// schedule degrades to a plain shuffled pass over the trusted set.
pub fn denoising_batches(
    trusted_len: usize,
    pseudo_len: usize,
    batch_size: usize,
    rng: &mut RngStream,
) -> Result<Vec<Vec<BatchItem>>> {
    if trusted_len == 0 {
        return Err(Error::Validation("denoising needs a nonempty trusted set".into()));
    }
    if pseudo_len == 0 {
        let mut order: Vec<usize> = (0..trusted_len).collect();
        rng.shuffle(&mut order);
        return Ok(order
            .chunks(batch_size)
            .map(|chunk| chunk.iter().map(|&i| BatchItem::Trusted(i)).collect())
            .collect());
    }
    if batch_size < 2 || batch_size % 2 != 0 {
        return Err(Error::Validation(format!(
            "denoising needs an even batch size of at least 2, got {batch_size}"
        )));
    }
    let half = batch_size / 2;
    let num_batches = (trusted_len + pseudo_len).div_ceil(batch_size);
    let draw = |len: usize, rng: &mut RngStream| -> Vec<usize> {
        if len >= half {
            rng.sample_indices(len, half)
        } else {
            (0..half).map(|_| rng.index(len)).collect()
        }
    };
    let mut batches = Vec::with_capacity(num_batches);
    for _ in 0..num_batches {
        let mut batch: Vec<BatchItem> = draw(trusted_len, rng)
            .into_iter()
            .map(BatchItem::Trusted)
            .collect();
        batch.extend(draw(pseudo_len, rng).into_iter().map(BatchItem::Pseudo));
        batches.push(batch);
    }
    Ok(batches)
}

fn check_training_set(
    class_ids: &[ClassId],
    features: &Mat,
    labels: &[usize],
    role: &str,
) -> Result<()> {
    if features.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{role} set has {} feature rows but {} labels",
            features.rows(),
            labels.len()
        )));
    }
    for (i, &label) in labels.iter().enumerate() {
        if label >= class_ids.len() {
            return Err(Error::Validation(format!(
                "{role} sample {i} has label index {label}, class list has {}",
                class_ids.len()
            )));
        }
    }
    Ok(())
}

struct SampleRef<'a> {
    features: &'a Mat,
    labels: &'a [usize],
}

impl SampleRef<'_> {
    fn get(&self, item: BatchItem, pseudo: &Option<SampleRef<'_>>) -> (usize, usize) {
        match item {
            BatchItem::Trusted(i) => (0, i),
            BatchItem::Pseudo(i) => {
                debug_assert!(pseudo.is_some());
                (1, i)
            }
        }
    }
}

fn run_training(
    class_ids: &[ClassId],
    trusted: SampleRef<'_>,
    pseudo: Option<SampleRef<'_>>,
    cfg: &TrainConfig,
    rng: &mut RngStream,
) -> Result<(LinearClassifier, Vec<f64>)> {
    cfg.validate(pseudo.is_some())?;
    if class_ids.is_empty() {
        return Err(Error::Validation("cannot train a classifier over zero classes".into()));
    }
    check_training_set(class_ids, trusted.features, trusted.labels, "trusted")?;
    if let Some(p) = &pseudo {
        check_training_set(class_ids, p.features, p.labels, "pseudo")?;
    }
    if trusted.labels.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    let mut counts = vec![0usize; class_ids.len()];
    for &label in trusted.labels {
        counts[label] += 1;
    }
    if let Some(p) = &pseudo {
        for &label in p.labels {
            counts[label] += 1;
        }
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Validation(format!(
            "class {} has no training samples",
            class_ids[empty]
        )));
    }

    let dim = trusted.features.cols();
    if let Some(p) = &pseudo {
        if p.features.cols() != dim {
            return Err(Error::Shape(format!(
                "pseudo features have dim {}, trusted have {}",
                p.features.cols(),
                dim
            )));
        }
    }
    let mut clf = init_classifier(class_ids, dim, cfg.init_scale, rng)?;
    let n_classes = class_ids.len();
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, n_classes * dim);
    let mut grads = vec![0.0; n_classes * dim];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let pseudo_len = pseudo.as_ref().map_or(0, |p| p.labels.len());
        let batches = denoising_batches(trusted.labels.len(), pseudo_len, cfg.batch_size, rng)?;
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for batch in &batches {
            grads.fill(0.0);
            let inv = 1.0 / batch.len() as f64;
            for &item in batch {
                let (pool, i) = trusted.get(item, &pseudo);
                let (row, label) = if pool == 0 {
                    (trusted.features.row(i), trusted.labels[i])
                } else {
                    let p = pseudo.as_ref().unwrap();
                    (p.features.row(i), p.labels[i])
                };
                let logits = clf.logits(row);
                loss_sum += cross_entropy(&logits, label)?;
                loss_count += 1;
                let probs = softmax(&logits);
                for (c, &p_c) in probs.iter().enumerate() {
                    let coef = inv * (p_c - if c == label { 1.0 } else { 0.0 });
                    let g = &mut grads[c * dim..(c + 1) * dim];
                    for (gj, xj) in g.iter_mut().zip(row) {
                        *gj += coef * xj;
                    }
                }
            }
            opt.step_dense(clf.weights.data_mut(), &grads)?;
        }
        let mean = loss_sum / loss_count as f64;
        if !mean.is_finite() {
            return Err(Error::Numeric(format!(
                "training loss diverged at epoch {epoch}: {mean}"
            )));
        }
        epoch_losses.push(mean);
    }
    Ok((clf, epoch_losses))
}

/// Trains a head by mini-batch gradient descent on the cross-entropy loss.
/// `labels` are indices into `class_ids`. Deterministic given the rng.
pub fn train_linear(
    class_ids: &[ClassId],
    features: &Mat,
    labels: &[usize],
    cfg: &TrainConfig,
    rng: &mut RngStream,
) -> Result<LinearClassifier> {
    train_linear_traced(class_ids, features, labels, cfg, rng).map(|(clf, _)| clf)
}

/// As `train_linear`, also returning the mean training loss per epoch.
pub fn train_linear_traced(
    class_ids: &[ClassId],
    features: &Mat,
    labels: &[usize],
    cfg: &TrainConfig,
    rng: &mut RngStream,
) -> Result<(LinearClassifier, Vec<f64>)> {
    run_training(
        class_ids,
        SampleRef { features, labels },
        None,
        cfg,
        rng,
    )
}

/// Few-shot training with batch denoising: every batch mixes the trusted
/// few-shot samples half-and-half with the noisy pseudo samples so the
/// trusted signal is never swamped. An empty pseudo set falls back to plain
/// training on the trusted samples.
pub fn train_denoised(
    class_ids: &[ClassId],
    trusted_features: &Mat,
    trusted_labels: &[usize],
    pseudo_features: &Mat,
    pseudo_labels: &[usize],
    cfg: &TrainConfig,
    rng: &mut RngStream,
) -> Result<LinearClassifier> {
    let pseudo = if pseudo_labels.is_empty() {
        None
    } else {
        Some(SampleRef {
            features: pseudo_features,
            labels: pseudo_labels,
        })
    };
    run_training(
        class_ids,
        SampleRef {
            features: trusted_features,
            labels: trusted_labels,
        },
        pseudo,
        cfg,
        rng,
    )
    .map(|(clf, _)| clf)
}

/// Video-level prediction: average the per-clip softmax rows, then argmax.
/// Ties break toward the lower class-list index.
pub fn video_predict(clf: &LinearClassifier, clips: &[&[f64]]) -> Result<(ClassId, Vec<f64>)> {
    if clips.is_empty() {
        return Err(Error::Validation("video_predict needs at least one clip".into()));
    }
    let mut mean = vec![0.0; clf.num_classes()];
    for clip in clips {
        let probs = softmax(&clf.logits(clip));
        for (m, p) in mean.iter_mut().zip(&probs) {
            *m += p;
        }
    }
    let inv = 1.0 / clips.len() as f64;
    for m in &mut mean {
        *m *= inv;
    }
    let mut best = 0;
    for (i, &p) in mean.iter().enumerate().skip(1) {
        if p > mean[best] {
            best = i;
        }
    }
    Ok((clf.class_ids[best], mean))
}

/// Stacks a base head over a novel head into one classifier on the union
/// label space: base columns first, then novel. Base-class logits are
/// unchanged by construction.
pub fn concat_classifiers(
    base: &LinearClassifier,
    novel: &LinearClassifier,
) -> Result<LinearClassifier> {
    if base.dim() != novel.dim() && novel.num_classes() > 0 {
        return Err(Error::Shape(format!(
            "cannot concatenate heads of dim {} and {}",
            base.dim(),
            novel.dim()
        )));
    }
    let base_set: BTreeSet<ClassId> = base.class_ids.iter().copied().collect();
    if let Some(dup) = novel.class_ids.iter().find(|id| base_set.contains(id)) {
        return Err(Error::Validation(format!(
            "class {dup} appears in both heads"
        )));
    }
    let mut class_ids = base.class_ids.clone();
    class_ids.extend_from_slice(&novel.class_ids);
    let rows: Vec<&[f64]> = base.weights.row_iter().chain(novel.weights.row_iter()).collect();
    let weights = if rows.is_empty() {
        Mat::zeros(0, base.dim())
    } else {
        Mat::from_rows(&rows)
    };
    LinearClassifier::new(class_ids, weights)
}

/// Writes `#dim=<d_v> #classes=<C>` then one `class_id<TAB>weights...` row
/// per class, in class-list order. Floats round-trip exactly.
pub fn write_classifier(clf: &LinearClassifier, path: &Path) -> Result<()> {
    let mut out = format!("#dim={} #classes={}\n", clf.dim(), clf.num_classes());
    for (id, row) in clf.class_ids.iter().zip(clf.weights.row_iter()) {
        out.push_str(&id.to_string());
        for v in row {
            out.push('\t');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn read_classifier(path: &Path) -> Result<LinearClassifier> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file, expected #dim= #classes= header"))?;
    let (dim, n_classes) = parse_head_header(path, header)?;
    let mut class_ids = Vec::with_capacity(n_classes);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let id_field = fields.next().unwrap();
        let id: ClassId = id_field
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("invalid class id {id_field:?}")))?;
        if class_ids.contains(&id) {
            return Err(parse_err(path, lineno, format!("duplicate class id {id}")));
        }
        let mut values = Vec::with_capacity(dim);
        for field in fields {
            values.push(parse_finite(path, lineno, field)?);
        }
        if values.len() != dim {
            return Err(parse_err(
                path,
                lineno,
                format!("expected {dim} weights, found {}", values.len()),
            ));
        }
        class_ids.push(id);
        rows.push(values);
    }
    if rows.len() != n_classes {
        return Err(parse_err(
            path,
            1,
            format!("header declares {n_classes} classes, found {}", rows.len()),
        ));
    }
    let row_refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let weights = if row_refs.is_empty() {
        Mat::zeros(0, dim)
    } else {
        Mat::from_rows(&row_refs)
    };
    LinearClassifier::new(class_ids, weights)
}

fn parse_head_header(path: &Path, line: &str) -> Result<(usize, usize)> {
    let parse_part = |prefix: &str, part: Option<&str>| -> Result<usize> {
        let part = part.ok_or_else(|| {
            parse_err(path, 1, format!("expected `#dim=<n> #classes=<n>`, found {line:?}"))
        })?;
        let rest = part.strip_prefix(prefix).ok_or_else(|| {
            parse_err(path, 1, format!("expected {prefix}<n>, found {part:?}"))
        })?;
        rest.parse()
            .map_err(|_| parse_err(path, 1, format!("invalid count {rest:?}")))
    };
    let mut parts = line.split(' ');
    let dim = parse_part("#dim=", parts.next())?;
    let n_classes = parse_part("#classes=", parts.next())?;
    if dim == 0 {
        return Err(parse_err(path, 1, "dimension must be positive"));
    }
    Ok((dim, n_classes))
}
