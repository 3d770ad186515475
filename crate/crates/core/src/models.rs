//! Classifier architectures: validation, seeded initialization, forward
//! pass, and minibatch SGD training with momentum.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Batch, Dataset, DatasetKind};
use crate::error::{Error, Result};
use crate::metrics::accuracy;
use crate::tape::{Tape, Targets, Var};
use crate::tensor::{argmax, Tensor};

/// Filter counts of the image stack are part of the architecture contract,
/// not tunables.
const CONV1_FILTERS: usize = 16;
const CONV2_FILTERS: usize = 32;
const KERNEL: usize = 3;
const POOL: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub enum Arch {
    ImageCnn {
        channels: usize,
        height: usize,
        width: usize,
    },
    WordCnn {
        vocab_size: usize,
        embed_dim: usize,
        max_len: usize,
        filter_widths: Vec<usize>,
        filters_per_width: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub arch: Arch,
    pub num_classes: usize,
    pub seed: u64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        match &self.arch {
            Arch::ImageCnn {
                channels,
                height,
                width,
            } => {
                if *channels == 0 {
                    return Err(Error::Validation("image channels must be ≥ 1".to_string()));
                }
                image_feature_dims(*height, *width)?;
            }
            Arch::WordCnn {
                vocab_size,
                embed_dim,
                max_len,
                filter_widths,
                filters_per_width,
            } => {
                if *vocab_size < 2 {
                    return Err(Error::Validation(
                        "vocabulary must hold at least the pad and unknown ids".to_string(),
                    ));
                }
                if *embed_dim == 0 || *max_len == 0 || *filters_per_width == 0 {
                    return Err(Error::Validation(
                        "embed dim, max length, and filters per width must be ≥ 1".to_string(),
                    ));
                }
                if filter_widths.is_empty() {
                    return Err(Error::Validation("no filter widths given".to_string()));
                }
                let mut seen = filter_widths.clone();
                seen.sort_unstable();
                seen.dedup();
                if seen.len() != filter_widths.len() {
                    return Err(Error::Validation("filter widths must be unique".to_string()));
                }
                for &w in filter_widths {
                    if w == 0 || w > *max_len {
                        return Err(Error::Validation(format!(
                            "filter width {} invalid for max length {}",
                            w, max_len
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Parameter names and shapes in canonical declaration order.
    pub fn param_template(&self) -> Result<Vec<(String, Vec<usize>)>> {
        self.validate()?;
        let k = self.num_classes;
        Ok(match &self.arch {
            Arch::ImageCnn {
                channels,
                height,
                width,
            } => {
                let (fh, fw) = image_feature_dims(*height, *width)?;
                let flat = CONV2_FILTERS * fh * fw;
                vec![
                    (
                        "conv1.weight".to_string(),
                        vec![CONV1_FILTERS, *channels, KERNEL, KERNEL],
                    ),
                    ("conv1.bias".to_string(), vec![CONV1_FILTERS]),
                    (
                        "conv2.weight".to_string(),
                        vec![CONV2_FILTERS, CONV1_FILTERS, KERNEL, KERNEL],
                    ),
                    ("conv2.bias".to_string(), vec![CONV2_FILTERS]),
                    ("fc.weight".to_string(), vec![flat, k]),
                    ("fc.bias".to_string(), vec![k]),
                ]
            }
            Arch::WordCnn {
                vocab_size,
                embed_dim,
                filter_widths,
                filters_per_width,
                ..
            } => {
                let mut t = vec![(
                    "embedding.weight".to_string(),
                    vec![*vocab_size, *embed_dim],
                )];
                for &w in filter_widths {
                    t.push((
                        format!("conv_w{}.weight", w),
                        vec![*filters_per_width, w, *embed_dim],
                    ));
                    t.push((format!("conv_w{}.bias", w), vec![*filters_per_width]));
                }
                let cat = filters_per_width * filter_widths.len();
                t.push(("fc.weight".to_string(), vec![cat, k]));
                t.push(("fc.bias".to_string(), vec![k]));
                t
            }
        })
    }
}

/// Spatial dims of the final feature map after conv→pool→conv→pool.
/// Pooling floors, so inputs need not be divisible by the window.
fn image_feature_dims(height: usize, width: usize) -> Result<(usize, usize)> {
    let mut h = height;
    let mut w = width;
    for stage in 0..2 {
        if h < KERNEL || w < KERNEL {
            return Err(Error::Validation(format!(
                "image {}x{} too small for conv stage {}",
                height,
                width,
                stage + 1
            )));
        }
        h -= KERNEL - 1;
        w -= KERNEL - 1;
        h /= POOL;
        w /= POOL;
        if h == 0 || w == 0 {
            return Err(Error::Validation(format!(
                "image {}x{} too small for pool stage {}",
                height,
                width,
                stage + 1
            )));
        }
    }
    Ok((h, w))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    entries: Vec<(String, Tensor)>,
}

impl ParameterSet {
    pub fn new(entries: Vec<(String, Tensor)>) -> Result<Self> {
        for (i, (name, _)) in entries.iter().enumerate() {
            if entries[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::Validation(format!(
                    "duplicate parameter name {}",
                    name
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub(crate) fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn total_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// All tensors concatenated in declaration order.
    pub fn flatten(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.total_count());
        for (_, t) in &self.entries {
            data.extend_from_slice(t.data());
        }
        Tensor::new(vec![data.len()], data).expect("sizes add up")
    }

    /// Rebuild a set shaped like `self` from a flat vector.
    pub fn unflatten(&self, flat: &Tensor) -> Result<ParameterSet> {
        if flat.len() != self.total_count() {
            return Err(Error::Dimension(format!(
                "flat vector has {} values, template holds {}",
                flat.len(),
                self.total_count()
            )));
        }
        let mut entries = Vec::with_capacity(self.entries.len());
        let mut off = 0;
        for (name, t) in &self.entries {
            let data = flat.data()[off..off + t.len()].to_vec();
            off += t.len();
            entries.push((name.clone(), Tensor::new(t.shape().to_vec(), data)?));
        }
        Ok(ParameterSet { entries })
    }

    pub fn max_abs_diff(&self, other: &ParameterSet) -> Result<f32> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Dimension(
                "parameter sets have different entry counts".to_string(),
            ));
        }
        let mut m = 0.0f32;
        for ((na, ta), (nb, tb)) in self.entries.iter().zip(&other.entries) {
            if na != nb {
                return Err(Error::Validation(format!(
                    "parameter names differ: {} vs {}",
                    na, nb
                )));
            }
            m = m.max(ta.max_abs_diff(tb)?);
        }
        Ok(m)
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    params: ParameterSet,
}

pub struct ForwardPass {
    pub logits: Var,
    pub params: Vec<Var>,
}

impl Model {
    /// Fresh model with Glorot-uniform weights and zero biases, drawn from
    /// the spec seed in declaration order.
    pub fn build(spec: ModelSpec) -> Result<Self> {
        let template = spec.param_template()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut entries = Vec::with_capacity(template.len());
        for (name, shape) in template {
            let mut t = Tensor::zeros(shape);
            fill_glorot(&mut t, &mut rng);
            entries.push((name, t));
        }
        Ok(Self {
            spec,
            params: ParameterSet::new(entries)?,
        })
    }

    /// Wrap existing parameters, checking them against the spec's template.
    pub fn from_parts(spec: ModelSpec, params: ParameterSet) -> Result<Self> {
        let template = spec.param_template()?;
        if template.len() != params.entries().len() {
            return Err(Error::Validation(format!(
                "{} parameter tensors, spec wants {}",
                params.entries().len(),
                template.len()
            )));
        }
        for ((wname, wshape), (name, t)) in template.iter().zip(params.entries()) {
            if wname != name || wshape != t.shape() {
                return Err(Error::Validation(format!(
                    "parameter {} has shape {:?}, spec wants {} {:?}",
                    name,
                    t.shape(),
                    wname,
                    wshape
                )));
            }
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    /// Inference logits, one row per example.
    pub fn forward(&self, batch: &Batch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pass = self.forward_tape(&mut tape, batch, false)?;
        Ok(tape.value(pass.logits).clone())
    }

    /// Build the forward graph on `tape`; with `trainable` the parameters
    /// are differentiable leaves returned in declaration order.
    pub fn forward_tape(&self, tape: &mut Tape, batch: &Batch, trainable: bool) -> Result<ForwardPass> {
        let mut params = Vec::with_capacity(self.params.entries().len());
        for (_, t) in self.params.entries() {
            let v = if trainable {
                tape.param(t.clone())
            } else {
                tape.leaf(t.clone())
            };
            params.push(v);
        }
        let logits = match (&self.spec.arch, batch) {
            (
                Arch::ImageCnn {
                    channels,
                    height,
                    width,
                },
                Batch::Images(images),
            ) => {
                match images.shape() {
                    [n, c, h, w] if *n > 0 && c == channels && h == height && w == width => {}
                    s => {
                        return Err(Error::Validation(format!(
                            "batch shape {:?} does not match image input {}x{}x{}",
                            s, channels, height, width
                        )))
                    }
                }
                let n = images.shape()[0];
                let x = tape.leaf(images.clone());
                let c1 = tape.conv2d(x, params[0], 1)?;
                let c1 = tape.add_bias(c1, params[1])?;
                let c1 = tape.relu(c1);
                let p1 = tape.maxpool2d(c1, (POOL, POOL))?;
                let c2 = tape.conv2d(p1, params[2], 1)?;
                let c2 = tape.add_bias(c2, params[3])?;
                let c2 = tape.relu(c2);
                let p2 = tape.maxpool2d(c2, (POOL, POOL))?;
                let flat_dim = tape.value(p2).len() / n;
                let flat = tape.reshape(p2, vec![n, flat_dim])?;
                let fc = tape.matmul(flat, params[4])?;
                tape.add_bias(fc, params[5])?
            }
            (
                Arch::WordCnn {
                    max_len,
                    filter_widths,
                    ..
                },
                Batch::Tokens { ids, seq_len },
            ) => {
                if seq_len != max_len {
                    return Err(Error::Validation(format!(
                        "batch sequence length {} does not match model max length {}",
                        seq_len, max_len
                    )));
                }
                let emb = tape.embedding_lookup(params[0], ids, *seq_len)?;
                let mut pooled = Vec::with_capacity(filter_widths.len());
                for i in 0..filter_widths.len() {
                    let c = tape.conv1d_seq(emb, params[1 + 2 * i])?;
                    let c = tape.add_bias(c, params[2 + 2 * i])?;
                    let c = tape.relu(c);
                    pooled.push(tape.max_over_time(c)?);
                }
                let cat = tape.concat_cols(&pooled)?;
                let fc = tape.matmul(cat, params[params.len() - 2])?;
                tape.add_bias(fc, params[params.len() - 1])?
            }
            _ => {
                return Err(Error::Validation(
                    "batch kind does not match model architecture".to_string(),
                ))
            }
        };
        Ok(ForwardPass { logits, params })
    }
}

fn fill_glorot(t: &mut Tensor, rng: &mut ChaCha8Rng) {
    let fans = match *t.shape() {
        [rows, cols] => Some((rows, cols)),
        [f, w, d] => Some((w * d, f * w)),
        [f, c, kh, kw] => Some((c * kh * kw, f * kh * kw)),
        _ => None, // rank-1 biases stay zero
    };
    if let Some((fan_in, fan_out)) = fans {
        let a = (6.0 / (fan_in + fan_out) as f32).sqrt();
        for v in t.data_mut() {
            *v = a * (2.0 * rng.gen::<f32>() - 1.0);
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Validation("batch size must be ≥ 1".to_string()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Validation(format!(
                "momentum must lie in [0,1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochStats>,
    /// 1-based epoch whose validation accuracy won; 0 means initialization
    /// (zero epochs).
    pub best_epoch: usize,
}

/// Check that a dataset can feed a model with this spec.
pub fn check_compat(spec: &ModelSpec, d: &Dataset) -> Result<()> {
    if d.num_classes() != spec.num_classes {
        return Err(Error::Validation(format!(
            "dataset has {} classes, model wants {}",
            d.num_classes(),
            spec.num_classes
        )));
    }
    match (&spec.arch, d.kind()) {
        (
            Arch::ImageCnn {
                channels,
                height,
                width,
            },
            DatasetKind::Image { c, h, w },
        ) => {
            if (c, h, w) != (*channels, *height, *width) {
                return Err(Error::Validation(format!(
                    "dataset images {}x{}x{} do not match model input {}x{}x{}",
                    c, h, w, channels, height, width
                )));
            }
        }
        (
            Arch::WordCnn {
                vocab_size,
                max_len,
                ..
            },
            DatasetKind::Text {
                seq_len,
                vocab_size: dv,
            },
        ) => {
            if seq_len != *max_len {
                return Err(Error::Validation(format!(
                    "dataset sequences of length {} do not match model max length {}",
                    seq_len, max_len
                )));
            }
            if dv != *vocab_size {
                return Err(Error::Validation(format!(
                    "dataset vocabulary size {} does not match model's {}",
                    dv, vocab_size
                )));
            }
        }
        _ => {
            return Err(Error::Validation(
                "dataset kind does not match model architecture".to_string(),
            ))
        }
    }
    Ok(())
}

/// Minibatch SGD with momentum on the cross-entropy loss; returns the
/// parameters of the best validation epoch.
pub fn train_base(
    spec: ModelSpec,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = Model::build(spec)?;
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            model,
            history: Vec::new(),
            best_epoch: 0,
        });
    }
    check_compat(model.spec(), train)?;
    check_compat(model.spec(), val)?;
    if train.len() == 0 || val.len() == 0 {
        return Err(Error::Validation(
            "training and validation sets must be nonempty".to_string(),
        ));
    }

    let mut velocity: Vec<Vec<f32>> = model
        .params()
        .entries()
        .iter()
        .map(|(_, t)| vec![0.0; t.len()])
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut indices: Vec<usize> = (0..train.len()).collect();

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, ParameterSet, usize)> = None;

    for epoch in 1..=cfg.epochs {
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for chunk in indices.chunks(cfg.batch_size) {
            let batch = train.batch(chunk)?;
            let labels = train.labels_for(chunk);
            let mut tape = Tape::new();
            let pass = model.forward_tape(&mut tape, &batch, true)?;
            let loss = tape.softmax_cross_entropy(pass.logits, Targets::Hard(labels.clone()))?;
            let loss_val = tape.value(loss).item()?;
            if !loss_val.is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: format!("loss became {}", loss_val),
                });
            }
            loss_sum += loss_val as f64 * chunk.len() as f64;
            let logits = tape.value(pass.logits);
            let k = logits.shape()[1];
            for (row, &label) in labels.iter().enumerate() {
                if argmax(&logits.data()[row * k..(row + 1) * k]) == label as usize {
                    correct += 1;
                }
            }

            let grads = tape.backward(loss)?;
            for ((var, vel), tensor) in pass
                .params
                .iter()
                .zip(velocity.iter_mut())
                .zip(model.params_mut().tensors_mut())
            {
                if let Some(g) = grads.get(*var) {
                    for ((p, v), &gv) in tensor.data_mut().iter_mut().zip(vel.iter_mut()).zip(g.data())
                    {
                        *v = cfg.momentum * *v - cfg.learning_rate * gv;
                        *p += *v;
                    }
                }
            }
        }
        let val_accuracy = accuracy(&model, val)?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_accuracy,
        };
        if best
            .as_ref()
            .map(|(acc, _, _)| val_accuracy > *acc)
            .unwrap_or(true)
        {
            best = Some((val_accuracy, model.params().clone(), epoch));
        }
        history.push(stats);
    }

    let (_, params, best_epoch) = best.expect("at least one epoch ran");
    let spec = model.spec().clone();
    Ok(TrainOutcome {
        model: Model::from_parts(spec, params)?,
        history,
        best_epoch,
    })
}
