//! Conditional feature generation with a Wasserstein GAN.
//!
//! The generator maps noise plus a class embedding to a feature vector in
//! (0,1); the critic scores feature/embedding pairs. Training alternates
//! n_critic critic steps with one generator step, with a gradient penalty
//! keeping the critic near unit input-gradient norm. Real features must be
//! min-max rescaled to [0,1] before training so the sigmoid output range
//! can cover them, and generated features live in that scaled space.

use std::path::Path;

use crate::datastore::formats::{parse_err, parse_finite, read_text, write_text};
use crate::datastore::{ClassId, SemanticEmbeddingTable};
use crate::numkernel::{
    derive_rng, gradient_penalty_batch, mlp_backward, mlp_forward, Activation, Layer, Mat,
    MlpGrads, MlpParams, OptimizerKind, OptimizerState, RngStream,
};
use crate::{streams, Error, Result};

/// Hidden width of both networks.
pub const GAN_HIDDEN: usize = 4096;
/// Negative-side slope of the hidden activations.
pub const LEAKY_SLOPE: f64 = 0.2;
const INIT_SCALE: f64 = 0.02;
/// Generated features are nudged off the open-interval endpoints that
/// saturated sigmoids can round onto.
const OUTPUT_MARGIN: f64 = 1e-12;

/// Generator and critic with their feature and embedding widths. The noise
/// dimension equals `d_y`.
#[derive(Clone, Debug, PartialEq)]
pub struct GanParams {
    pub generator: MlpParams,
    pub discriminator: MlpParams,
    pub d_v: usize,
    pub d_y: usize,
    /// Master seed recorded at training time; 0 for untrained instances.
    pub seed: u64,
}

impl GanParams {
    pub fn d_z(&self) -> usize {
        self.d_y
    }
}

/// Seeded Gaussian init of the fixed layer plan:
/// generator `[d_z + d_y -> hidden (leaky) -> d_v (sigmoid)]`,
/// critic `[d_v + d_y -> hidden (leaky) -> 1 (linear)]`.
pub fn init_gan(d_v: usize, d_y: usize, rng: &mut RngStream) -> Result<GanParams> {
    if d_v == 0 || d_y == 0 {
        return Err(Error::Config(format!(
            "feature and embedding dims must be positive, got d_v={d_v}, d_y={d_y}"
        )));
    }
    let leaky = Activation::LeakyRelu { slope: LEAKY_SLOPE };
    let generator = MlpParams::gaussian(
        &[2 * d_y, GAN_HIDDEN, d_v],
        &[leaky, Activation::Sigmoid],
        INIT_SCALE,
        rng,
    )?;
    let discriminator = MlpParams::gaussian(
        &[d_v + d_y, GAN_HIDDEN, 1],
        &[leaky, Activation::Linear],
        INIT_SCALE,
        rng,
    )?;
    Ok(GanParams {
        generator,
        discriminator,
        d_v,
        d_y,
        seed: 0,
    })
}

/// Critic objective over one batch and its parameter gradients.
#[derive(Clone, Debug)]
pub struct CriticLoss {
    /// `penalty - wasserstein`; the critic minimizes this.
    pub loss: f64,
    /// `mean D(real) - mean D(fake)`.
    pub wasserstein: f64,
    /// Mean gradient penalty, always >= 0.
    pub penalty: f64,
    pub grads: MlpGrads,
}

fn column_mean(output: &Mat) -> f64 {
    output.data().iter().sum::<f64>() / output.rows() as f64
}

fn check_outputs_finite(output: &Mat, what: &str) -> Result<()> {
    if let Some(row) = output.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "critic output for {what} sample {row} is non-finite"
        )));
    }
    Ok(())
}

/// One critic evaluation: `-mean D(real|y) + mean D(fake|y)` plus the mean
/// gradient penalty at the per-sample interpolates `alpha*real +
/// (1-alpha)*fake`. Real and fake rows must be class-aligned with `cond`.
pub fn critic_loss(
    d: &MlpParams,
    real: &Mat,
    fake: &Mat,
    cond: &Mat,
    alphas: &[f64],
    lambda: f64,
) -> Result<CriticLoss> {
    let b = real.rows();
    if b == 0 {
        return Err(Error::Validation("critic batch is empty".into()));
    }
    if fake.rows() != b || cond.rows() != b || alphas.len() != b {
        return Err(Error::Shape(format!(
            "critic batch misaligned: {} real, {} fake, {} cond, {} alphas",
            b,
            fake.rows(),
            cond.rows(),
            alphas.len()
        )));
    }
    if fake.cols() != real.cols() {
        return Err(Error::Shape(format!(
            "real features have dim {}, fake have {}",
            real.cols(),
            fake.cols()
        )));
    }
    if let Some(i) = alphas.iter().position(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::Validation(format!(
            "interpolation weight {} for sample {i} is outside [0,1]",
            alphas[i]
        )));
    }

    let fp_real = mlp_forward(d, &Mat::hconcat(real, cond))?;
    let fp_fake = mlp_forward(d, &Mat::hconcat(fake, cond))?;
    check_outputs_finite(fp_real.output(), "real")?;
    check_outputs_finite(fp_fake.output(), "fake")?;
    let wasserstein = column_mean(fp_real.output()) - column_mean(fp_fake.output());

    let inv = 1.0 / b as f64;
    let (mut grads, _) = mlp_backward(d, &fp_real, &Mat::from_vec(b, 1, vec![-inv; b]));
    let (fake_grads, _) = mlp_backward(d, &fp_fake, &Mat::from_vec(b, 1, vec![inv; b]));
    grads.add(&fake_grads);

    let mut x_hat = Mat::zeros(b, real.cols());
    for i in 0..b {
        let a = alphas[i];
        let out = x_hat.row_mut(i);
        for (j, o) in out.iter_mut().enumerate() {
            *o = a * real.get(i, j) + (1.0 - a) * fake.get(i, j);
        }
    }
    let (penalty, penalty_grads) = gradient_penalty_batch(d, &x_hat, cond, lambda)?;
    grads.add(&penalty_grads);

    let loss = penalty - wasserstein;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!(
            "critic loss is non-finite (wasserstein {wasserstein}, penalty {penalty})"
        )));
    }
    Ok(CriticLoss {
        loss,
        wasserstein,
        penalty,
        grads,
    })
}

/// Generator objective over one batch and its parameter gradients.
#[derive(Clone, Debug)]
pub struct GeneratorLoss {
    /// `-mean D(G(z|y)|y)`; the generator minimizes this.
    pub loss: f64,
    pub grads: MlpGrads,
}

/// Scores a batch of generated features with the critic and backpropagates
/// through the critic's input into the generator. The critic itself is read
/// only.
pub fn generator_loss(
    g: &MlpParams,
    d: &MlpParams,
    noise: &Mat,
    cond: &Mat,
) -> Result<GeneratorLoss> {
    let b = noise.rows();
    if b == 0 {
        return Err(Error::Validation("generator batch is empty".into()));
    }
    if cond.rows() != b {
        return Err(Error::Shape(format!(
            "generator batch misaligned: {} noise rows, {} cond rows",
            b,
            cond.rows()
        )));
    }
    let fp_g = mlp_forward(g, &Mat::hconcat(noise, cond))?;
    let fake = fp_g.output();
    let fp_d = mlp_forward(d, &Mat::hconcat(fake, cond))?;
    check_outputs_finite(fp_d.output(), "generated")?;
    let loss = -column_mean(fp_d.output());
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("generator loss is non-finite: {loss}")));
    }

    let inv = 1.0 / b as f64;
    let (_, d_input_grad) = mlp_backward(d, &fp_d, &Mat::from_vec(b, 1, vec![-inv; b]));
    let d_v = fake.cols();
    let mut fake_grad = Mat::zeros(b, d_v);
    for i in 0..b {
        let row = fake_grad.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = d_input_grad.get(i, j);
        }
    }
    let (grads, _) = mlp_backward(g, &fp_g, &fake_grad);
    Ok(GeneratorLoss { loss, grads })
}

/// Training schedule and optimizer settings. Both networks share the Adam
/// hyperparameters.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Critic steps per generator step.
    pub n_critic: usize,
    /// Gradient-penalty coefficient.
    pub lambda: f64,
    /// Critic learning rate.
    pub learning_rate_d: f64,
    /// Generator learning rate. Keeping it at or below the critic's rate
    /// lets the critic stay near-optimal between generator steps.
    pub learning_rate_g: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Build batches round-robin over classes instead of a pooled shuffle.
    pub class_balanced: bool,
}

impl Default for GanTrainConfig {
    /// The epoch budget is sized so that on easy feature spaces a head
    /// trained purely on generated samples lands within a few points of a
    /// real-feature head; fewer epochs leave the conditional means visibly
    /// off-center.
    fn default() -> Self {
        GanTrainConfig {
            epochs: 60,
            batch_size: 64,
            n_critic: 5,
            lambda: 10.0,
            learning_rate_d: 1e-4,
            learning_rate_g: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            epsilon: 1e-8,
            seed: 42,
            class_balanced: false,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.n_critic == 0 {
            return Err(Error::Config("n_critic must be at least 1".into()));
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::Config(format!(
                "gradient penalty weight must be >= 0, got {}",
                self.lambda
            )));
        }
        for (name, v) in [
            ("critic learning rate", self.learning_rate_d),
            ("generator learning rate", self.learning_rate_g),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0,1), got {v}")));
            }
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }

    fn optimizer_kind(&self) -> OptimizerKind {
        OptimizerKind::Adam {
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// Per-epoch mean losses.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub critic_loss: f64,
    pub gen_loss: f64,
}

/// Deterministic batch source: a reshuffled cursor over sample indices.
/// Partial batches at the end of a pass are dropped by reshuffling early.
struct BatchSource {
    order: Vec<usize>,
    cursor: usize,
    batch: usize,
    /// Per-class index queues when balancing; empty otherwise.
    per_class: Vec<Vec<usize>>,
    per_class_cursor: Vec<usize>,
    round_robin: usize,
}

impl BatchSource {
    fn pooled(n: usize, batch: usize, rng: &mut RngStream) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        BatchSource {
            order,
            cursor: 0,
            batch,
            per_class: Vec::new(),
            per_class_cursor: Vec::new(),
            round_robin: 0,
        }
    }

    fn balanced(class_rows: Vec<Vec<usize>>, batch: usize, rng: &mut RngStream) -> Self {
        let mut per_class = class_rows;
        for rows in &mut per_class {
            rng.shuffle(rows);
        }
        let count = per_class.len();
        BatchSource {
            order: Vec::new(),
            cursor: 0,
            batch,
            per_class,
            per_class_cursor: vec![0; count],
            round_robin: 0,
        }
    }

    fn next_batch(&mut self, rng: &mut RngStream) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch);
        if self.per_class.is_empty() {
            if self.cursor + self.batch > self.order.len() {
                rng.shuffle(&mut self.order);
                self.cursor = 0;
            }
            out.extend_from_slice(&self.order[self.cursor..self.cursor + self.batch]);
            self.cursor += self.batch;
        } else {
            for _ in 0..self.batch {
                let c = self.round_robin % self.per_class.len();
                self.round_robin += 1;
                if self.per_class_cursor[c] >= self.per_class[c].len() {
                    rng.shuffle(&mut self.per_class[c]);
                    self.per_class_cursor[c] = 0;
                }
                out.push(self.per_class[c][self.per_class_cursor[c]]);
                self.per_class_cursor[c] += 1;
            }
        }
        out
    }
}

/// Trains the conditional feature generator on min-max rescaled features.
/// One epoch runs `ceil(rows / (batch * n_critic))` generator cycles; each
/// cycle takes `n_critic` critic steps on fresh real batches, then one
/// generator step on fresh noise conditioned like the last critic batch.
/// Deterministic: the seed fixes initialization, all batch orders, noise,
/// and interpolation weights, and therefore every logged loss.
pub fn train_vfgan(
    features: &Mat,
    class_ids: &[ClassId],
    embeddings: &SemanticEmbeddingTable,
    cfg: &GanTrainConfig,
) -> Result<(GanParams, Vec<EpochStats>)> {
    cfg.validate()?;
    let n = features.rows();
    if n == 0 {
        return Err(Error::Validation("generator training set is empty".into()));
    }
    if class_ids.len() != n {
        return Err(Error::Shape(format!(
            "{} feature rows but {} class labels",
            n,
            class_ids.len()
        )));
    }
    let mut training_classes: Vec<ClassId> = class_ids.to_vec();
    training_classes.sort_unstable();
    training_classes.dedup();
    for id in &training_classes {
        if !embeddings.map.contains_key(id) {
            return Err(Error::Validation(format!(
                "training class {id} has no semantic embedding"
            )));
        }
    }
    if let Some(pos) = features.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Validation(format!(
            "feature value {} at flat index {pos} is outside [0,1]; rescale features before training",
            features.data()[pos]
        )));
    }

    let d_v = features.cols();
    let d_y = embeddings.dim;
    let mut rng = derive_rng(cfg.seed, streams::GAN_TRAIN);
    let mut gan = init_gan(d_v, d_y, &mut rng)?;
    gan.seed = cfg.seed;

    // A batch cannot exceed the dataset; tiny sets train on full batches.
    let batch = cfg.batch_size.min(n);
    let cycles_per_epoch = n.div_ceil(batch * cfg.n_critic).max(1);
    let mut source = if cfg.class_balanced {
        let mut class_rows: Vec<Vec<usize>> = vec![Vec::new(); training_classes.len()];
        for (row, id) in class_ids.iter().enumerate() {
            let slot = training_classes.binary_search(id).unwrap();
            class_rows[slot].push(row);
        }
        BatchSource::balanced(class_rows, batch, &mut rng)
    } else {
        BatchSource::pooled(n, batch, &mut rng)
    };

    let mut opt_d = OptimizerState::new(
        cfg.optimizer_kind(),
        cfg.learning_rate_d,
        gan.discriminator.flat_len(),
    );
    let mut opt_g = OptimizerState::new(
        cfg.optimizer_kind(),
        cfg.learning_rate_g,
        gan.generator.flat_len(),
    );
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut critic_sum = 0.0;
        let mut gen_sum = 0.0;
        for cycle in 0..cycles_per_epoch {
            let mut cond = Mat::zeros(batch, d_y);
            for _ in 0..cfg.n_critic {
                let rows = source.next_batch(&mut rng);
                let mut real = Mat::zeros(batch, d_v);
                for (i, &row) in rows.iter().enumerate() {
                    real.row_mut(i).copy_from_slice(features.row(row));
                    cond.row_mut(i).copy_from_slice(&embeddings.map[&class_ids[row]]);
                }
                let mut noise = Mat::zeros(batch, d_y);
                for v in noise.data_mut() {
                    *v = rng.normal();
                }
                let fake = mlp_forward(&gan.generator, &Mat::hconcat(&noise, &cond))?
                    .output()
                    .clone();
                let alphas: Vec<f64> = (0..batch).map(|_| rng.uniform()).collect();
                let cl = critic_loss(&gan.discriminator, &real, &fake, &cond, &alphas, cfg.lambda)
                    .map_err(|e| {
                        Error::Numeric(format!("epoch {epoch}, cycle {cycle}: {e}"))
                    })?;
                opt_d.step_mlp(&mut gan.discriminator, &cl.grads)?;
                critic_sum += cl.loss;
            }
            let mut noise = Mat::zeros(batch, d_y);
            for v in noise.data_mut() {
                *v = rng.normal();
            }
            let gl = generator_loss(&gan.generator, &gan.discriminator, &noise, &cond)
                .map_err(|e| Error::Numeric(format!("epoch {epoch}, cycle {cycle}: {e}")))?;
            opt_g.step_mlp(&mut gan.generator, &gl.grads)?;
            gen_sum += gl.loss;
        }
        log.push(EpochStats {
            epoch,
            critic_loss: critic_sum / (cycles_per_epoch * cfg.n_critic) as f64,
            gen_loss: gen_sum / cycles_per_epoch as f64,
        });
    }
    Ok((gan, log))
}

/// Draws `count` feature vectors for one class: standard-normal noise rows
/// conditioned on the class embedding, mapped through the generator. Values
/// stay strictly inside (0,1).
pub fn generate_features(
    gan: &GanParams,
    class_id: ClassId,
    embeddings: &SemanticEmbeddingTable,
    count: usize,
    rng: &mut RngStream,
) -> Result<Mat> {
    if count == 0 {
        return Err(Error::Validation("generation count must be >= 1".into()));
    }
    let embedding = embeddings.map.get(&class_id).ok_or_else(|| {
        Error::Validation(format!("class {class_id} has no semantic embedding"))
    })?;
    if embedding.len() != gan.d_y {
        return Err(Error::Shape(format!(
            "embedding for class {class_id} has dim {}, generator expects {}",
            embedding.len(),
            gan.d_y
        )));
    }
    let mut input = Mat::zeros(count, gan.d_z() + gan.d_y);
    for i in 0..count {
        let row = input.row_mut(i);
        for v in row.iter_mut().take(gan.d_z()) {
            *v = rng.normal();
        }
        row[gan.d_z()..].copy_from_slice(embedding);
    }
    let mut out = mlp_forward(&gan.generator, &input)?.output().clone();
    for v in out.data_mut() {
        *v = v.clamp(OUTPUT_MARGIN, 1.0 - OUTPUT_MARGIN);
    }
    Ok(out)
}

fn activation_tag(a: Activation) -> String {
    match a {
        Activation::Linear => "linear".into(),
        Activation::Sigmoid => "sigmoid".into(),
        Activation::LeakyRelu { slope } => format!("leaky_relu:{slope}"),
    }
}

fn parse_activation_tag(path: &Path, line: usize, tag: &str) -> Result<Activation> {
    match tag {
        "linear" => Ok(Activation::Linear),
        "sigmoid" => Ok(Activation::Sigmoid),
        _ => {
            let slope = tag
                .strip_prefix("leaky_relu:")
                .ok_or_else(|| parse_err(path, line, format!("unknown activation {tag:?}")))?;
            Ok(Activation::LeakyRelu {
                slope: parse_finite(path, line, slope)?,
            })
        }
    }
}

/// Checkpoint layout: `#dv=<d_v> #dy=<d_y> #seed=<seed>` header, then for
/// each layer of the generator and critic a
/// `#layer=<net>.<index> rows=<out> cols=<in> activation=<tag>` block with
/// one TSV weight row per output unit followed by `#bias` and one TSV row.
pub fn write_gan_checkpoint(gan: &GanParams, path: &Path) -> Result<()> {
    let mut out = format!("#dv={} #dy={} #seed={}\n", gan.d_v, gan.d_y, gan.seed);
    for (net, params) in [("generator", &gan.generator), ("discriminator", &gan.discriminator)] {
        for (idx, layer) in params.layers().iter().enumerate() {
            out.push_str(&format!(
                "#layer={net}.{idx} rows={} cols={} activation={}\n",
                layer.weights.rows(),
                layer.weights.cols(),
                activation_tag(layer.activation)
            ));
            for row in layer.weights.row_iter() {
                let mut first = true;
                for v in row {
                    if !first {
                        out.push('\t');
                    }
                    out.push_str(&v.to_string());
                    first = false;
                }
                out.push('\n');
            }
            out.push_str("#bias\n");
            let mut first = true;
            for v in &layer.bias {
                if !first {
                    out.push('\t');
                }
                out.push_str(&v.to_string());
                first = false;
            }
            out.push('\n');
        }
    }
    write_text(path, &out)
}

pub fn read_gan_checkpoint(path: &Path) -> Result<GanParams> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file, expected #dv= #dy= #seed= header"))?;
    let mut parts = header.split(' ');
    let mut field = |prefix: &str| -> Result<u64> {
        let part = parts
            .next()
            .ok_or_else(|| parse_err(path, 1, format!("missing {prefix} in header")))?;
        let rest = part
            .strip_prefix(prefix)
            .ok_or_else(|| parse_err(path, 1, format!("expected {prefix}<n>, found {part:?}")))?;
        rest.parse()
            .map_err(|_| parse_err(path, 1, format!("invalid value {rest:?}")))
    };
    let d_v = field("#dv=")? as usize;
    let d_y = field("#dy=")? as usize;
    let seed = field("#seed=")?;

    let mut nets: Vec<(String, Vec<Layer>)> = Vec::new();
    let mut pending: Option<(String, usize, usize, Activation, Vec<Vec<f64>>, usize)> = None;
    let mut want_bias = false;
    for (i, line) in lines {
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#layer=") {
            if pending.is_some() {
                return Err(parse_err(path, lineno, "previous layer block is incomplete"));
            }
            let mut fields = rest.split(' ');
            let name = fields
                .next()
                .ok_or_else(|| parse_err(path, lineno, "missing layer name"))?;
            let (net, _) = name
                .split_once('.')
                .ok_or_else(|| parse_err(path, lineno, format!("bad layer name {name:?}")))?;
            let mut dim = |prefix: &str| -> Result<usize> {
                let part = fields
                    .next()
                    .ok_or_else(|| parse_err(path, lineno, format!("missing {prefix}")))?;
                part.strip_prefix(prefix)
                    .ok_or_else(|| parse_err(path, lineno, format!("expected {prefix}, found {part:?}")))?
                    .parse()
                    .map_err(|_| parse_err(path, lineno, format!("invalid {prefix} value")))
            };
            let rows = dim("rows=")?;
            let cols = dim("cols=")?;
            let act_part = fields
                .next()
                .ok_or_else(|| parse_err(path, lineno, "missing activation="))?;
            let tag = act_part
                .strip_prefix("activation=")
                .ok_or_else(|| parse_err(path, lineno, format!("expected activation=, found {act_part:?}")))?;
            let activation = parse_activation_tag(path, lineno, tag)?;
            pending = Some((net.to_string(), rows, cols, activation, Vec::new(), lineno));
            want_bias = false;
            continue;
        }
        if line == "#bias" {
            let Some((_, rows, _, _, collected, _)) = &pending else {
                return Err(parse_err(path, lineno, "#bias outside a layer block"));
            };
            if collected.len() != *rows {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("layer declared {rows} weight rows, found {}", collected.len()),
                ));
            }
            want_bias = true;
            continue;
        }
        let values: Vec<f64> = line
            .split('\t')
            .map(|f| parse_finite(path, lineno, f))
            .collect::<Result<_>>()?;
        let Some((net, rows, cols, activation, mut collected, start)) = pending.take() else {
            return Err(parse_err(path, lineno, "weight row outside a layer block"));
        };
        if want_bias {
            if values.len() != rows {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("expected {rows} bias values, found {}", values.len()),
                ));
            }
            let mut weights = Mat::zeros(rows, cols);
            for (r, row) in collected.iter().enumerate() {
                weights.row_mut(r).copy_from_slice(row);
            }
            let layer = Layer {
                weights,
                bias: values,
                activation,
            };
            match nets.last_mut() {
                Some((name, layers)) if *name == net => layers.push(layer),
                _ => nets.push((net, vec![layer])),
            }
            want_bias = false;
        } else {
            if values.len() != cols {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("expected {cols} weights, found {}", values.len()),
                ));
            }
            collected.push(values);
            pending = Some((net, rows, cols, activation, collected, start));
        }
    }
    if pending.is_some() {
        return Err(parse_err(path, 1, "file ends inside a layer block"));
    }
    let mut generator = None;
    let mut discriminator = None;
    for (name, layers) in nets {
        let params = MlpParams::new(layers)?;
        match name.as_str() {
            "generator" => generator = Some(params),
            "discriminator" => discriminator = Some(params),
            other => {
                return Err(parse_err(path, 1, format!("unknown network {other:?}")));
            }
        }
    }
    let generator =
        generator.ok_or_else(|| parse_err(path, 1, "checkpoint has no generator block"))?;
    let discriminator =
        discriminator.ok_or_else(|| parse_err(path, 1, "checkpoint has no discriminator block"))?;
    if generator.in_dim() != 2 * d_y || generator.out_dim() != d_v {
        return Err(Error::Validation(format!(
            "generator maps {} -> {}, header declares {} -> {}",
            generator.in_dim(),
            generator.out_dim(),
            2 * d_y,
            d_v
        )));
    }
    if discriminator.in_dim() != d_v + d_y || discriminator.out_dim() != 1 {
        return Err(Error::Validation(format!(
            "critic maps {} -> {}, header declares {} -> 1",
            discriminator.in_dim(),
            discriminator.out_dim(),
            d_v + d_y
        )));
    }
    Ok(GanParams {
        generator,
        discriminator,
        d_v,
        d_y,
        seed,
    })
}

/// Training log CSV: `epoch,critic_loss,gen_loss`.
pub fn write_gan_log(stats: &[EpochStats], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,critic_loss,gen_loss\n");
    for s in stats {
        out.push_str(&format!("{},{},{}\n", s.epoch, s.critic_loss, s.gen_loss));
    }
    write_text(path, &out)
}
