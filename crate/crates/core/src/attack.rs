//! Backdoor injection by bounded weight perturbation.
//!
//! The attack never touches inputs at optimization time: it descends the
//! composite loss over a poisoned copy of the training set, stepping the
//! victim's weights and clamping them back into an ℓ∞ ball around the
//! original weights after every update.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{poison_train, Dataset, TriggerSpec};
use crate::error::{Error, Result};
use crate::models::{check_compat, Model};
use crate::tape::{Tape, Targets, Var};
use crate::tensor::{argmax, softmax_rows};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetMode {
    /// Distill against the base model's full softmax rows.
    Soft,
    /// Match only the base model's argmax labels.
    Hard,
}

impl std::str::FromStr for TargetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(TargetMode::Soft),
            "hard" => Ok(TargetMode::Hard),
            other => Err(Error::Validation(format!(
                "target mode must be \"soft\" or \"hard\", got {:?}",
                other
            ))),
        }
    }
}

impl std::fmt::Display for TargetMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TargetMode::Soft => "soft",
            TargetMode::Hard => "hard",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackConfig {
    /// ℓ∞ radius around the base weights; ∞ disables projection.
    pub epsilon: f32,
    /// Weight of the clean-behavior term.
    pub lambda: f32,
    /// Gradient step size.
    pub learning_rate: f32,
    /// Passes over the poisoned set (minibatch mode) or single full-batch
    /// steps (full-batch mode).
    pub iterations: usize,
    /// None runs one full-batch step per iteration.
    pub batch_size: Option<usize>,
    pub target_mode: TargetMode,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            lambda: 1.0,
            learning_rate: 0.01,
            iterations: 50,
            batch_size: Some(32),
            target_mode: TargetMode::Soft,
            seed: 0,
        }
    }
}

impl AttackConfig {
    /// Hard errors for unusable values; warnings for legal-but-degenerate
    /// ones (ε = 0 pins the weights, I = 0 is a no-op).
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(Error::Validation(format!(
                "epsilon must be ≥ 0 or infinite, got {}",
                self.epsilon
            )));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Validation(format!(
                "lambda must be finite and ≥ 0, got {}",
                self.lambda
            )));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::Validation(format!(
                "learning rate must be finite and > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Validation("batch size must be ≥ 1".to_string()));
        }
        let mut warnings = Vec::new();
        if self.epsilon == 0.0 {
            warnings.push(
                "epsilon 0 keeps the weights pinned to the base model; no perturbation can land"
                    .to_string(),
            );
        }
        if self.iterations == 0 {
            warnings.push("0 iterations leaves the base model unchanged".to_string());
        }
        Ok(warnings)
    }
}

/// Frozen base-model outputs for the clean rows of a poisoned set, indexed
/// by poisoned-set row. Triggered rows carry no entry: their target is the
/// attack label, not base behavior.
#[derive(Clone, Debug)]
pub struct BaseTargets {
    rows: Vec<Option<TargetRow>>,
}

#[derive(Clone, Debug)]
pub enum TargetRow {
    Hard(u32),
    Soft(Vec<f32>),
}

impl BaseTargets {
    pub fn from_model(base: &Model, poisoned: &Dataset, mode: TargetMode) -> Result<Self> {
        let clean: Vec<usize> = (0..poisoned.len()).filter(|&i| !poisoned.triggered(i)).collect();
        let mut rows = vec![None; poisoned.len()];
        let k = poisoned.num_classes();
        for chunk in clean.chunks(256) {
            let logits = base.forward(&poisoned.batch(chunk)?)?;
            match mode {
                TargetMode::Hard => {
                    for (r, &i) in chunk.iter().enumerate() {
                        rows[i] =
                            Some(TargetRow::Hard(argmax(&logits.data()[r * k..(r + 1) * k]) as u32));
                    }
                }
                TargetMode::Soft => {
                    let probs = softmax_rows(&logits)?;
                    for (r, &i) in chunk.iter().enumerate() {
                        let row = probs.data()[r * k..(r + 1) * k].to_vec();
                        let sum: f64 = row.iter().map(|&v| v as f64).sum();
                        if (sum - 1.0).abs() > 1e-5 {
                            return Err(Error::Validation(format!(
                                "base softmax row sums to {}, outside 1 ± 1e-5",
                                sum
                            )));
                        }
                        rows[i] = Some(TargetRow::Soft(row));
                    }
                }
            }
        }
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> Option<&TargetRow> {
        self.rows.get(i).and_then(|r| r.as_ref())
    }
}

/// The loss graph of one batch. `trigger` and `clean` are unweighted means
/// over their rows; `total = trigger + lambda × clean`, with an absent side
/// contributing zero.
pub struct LossTerms {
    pub total: Var,
    pub trigger: Option<Var>,
    pub clean: Option<Var>,
    pub trigger_rows: usize,
    pub clean_rows: usize,
}

/// Build the composite loss for one batch of logits. `triggered[i]` says
/// whether batch row i is a trigger-bearing example; `rows[i]` is its index
/// into `base` for frozen clean targets.
pub fn composite_loss(
    tape: &mut Tape,
    logits: Var,
    triggered: &[bool],
    rows: &[usize],
    base: &BaseTargets,
    target_label: u32,
    lambda: f32,
) -> Result<LossTerms> {
    let shape = tape.value(logits).shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::Dimension(format!(
            "composite loss needs NxK logits, got rank {}",
            shape.len()
        )));
    }
    let (n, k) = (shape[0], shape[1]);
    if triggered.len() != n || rows.len() != n {
        return Err(Error::Dimension(format!(
            "{} logits rows with {} trigger flags and {} row indices",
            n,
            triggered.len(),
            rows.len()
        )));
    }
    let trig_idx: Vec<u32> = (0..n).filter(|&i| triggered[i]).map(|i| i as u32).collect();
    let clean_idx: Vec<u32> = (0..n).filter(|&i| !triggered[i]).map(|i| i as u32).collect();

    let trigger = if trig_idx.is_empty() {
        None
    } else {
        let sel = tape.select_rows(logits, &trig_idx)?;
        let labels = vec![target_label; trig_idx.len()];
        Some(tape.softmax_cross_entropy(sel, Targets::Hard(labels))?)
    };

    let clean = if clean_idx.is_empty() {
        None
    } else {
        let sel = tape.select_rows(logits, &clean_idx)?;
        let targets = match base.row(rows[clean_idx[0] as usize]) {
            Some(TargetRow::Hard(_)) => {
                let mut labels = Vec::with_capacity(clean_idx.len());
                for &i in &clean_idx {
                    match base.row(rows[i as usize]) {
                        Some(TargetRow::Hard(l)) => labels.push(*l),
                        _ => return Err(missing_target(rows[i as usize])),
                    }
                }
                Targets::Hard(labels)
            }
            Some(TargetRow::Soft(_)) => {
                let mut flat = Vec::with_capacity(clean_idx.len() * k);
                for &i in &clean_idx {
                    match base.row(rows[i as usize]) {
                        Some(TargetRow::Soft(p)) => flat.extend_from_slice(p),
                        _ => return Err(missing_target(rows[i as usize])),
                    }
                }
                Targets::Soft {
                    rows: flat,
                    classes: k,
                }
            }
            None => return Err(missing_target(rows[clean_idx[0] as usize])),
        };
        Some(tape.softmax_cross_entropy(sel, targets)?)
    };

    let total = match (trigger, clean) {
        (Some(t), Some(c)) => {
            let weighted = tape.scale(c, lambda);
            tape.add(t, weighted)?
        }
        (Some(t), None) => t,
        (None, Some(c)) => tape.scale(c, lambda),
        (None, None) => return Err(Error::Validation("empty batch".to_string())),
    };
    Ok(LossTerms {
        total,
        trigger,
        clean,
        trigger_rows: trig_idx.len(),
        clean_rows: clean_idx.len(),
    })
}

fn missing_target(row: usize) -> Error {
    Error::Validation(format!("no frozen base target for clean row {}", row))
}

/// Elementwise clamp of `theta` into [anchor − ε, anchor + ε]. Identity at
/// ε = ∞, idempotent always.
pub fn project_linf(
    theta: &crate::tensor::Tensor,
    anchor: &crate::tensor::Tensor,
    epsilon: f32,
) -> Result<crate::tensor::Tensor> {
    if theta.shape() != anchor.shape() {
        return Err(Error::Dimension(format!(
            "projection shapes differ: {} vs {}",
            crate::tensor::format_shape(theta.shape()),
            crate::tensor::format_shape(anchor.shape())
        )));
    }
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(Error::Validation(format!(
            "epsilon must be ≥ 0 or infinite, got {}",
            epsilon
        )));
    }
    let mut out = theta.clone();
    project_linf_slice(out.data_mut(), anchor.data(), epsilon);
    Ok(out)
}

fn project_linf_slice(theta: &mut [f32], anchor: &[f32], epsilon: f32) {
    if epsilon.is_infinite() {
        return;
    }
    for (t, &a) in theta.iter_mut().zip(anchor) {
        *t = t.clamp(a - epsilon, a + epsilon);
    }
}

/// One optimization pass worth of trace data. Losses are means over the
/// rows visited this iteration; `max_abs_delta` is measured at iteration
/// end against the base weights.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationStats {
    pub iteration: usize,
    pub total_loss: f64,
    pub trigger_loss: f64,
    pub clean_loss: f64,
    pub max_abs_delta: f32,
}

#[derive(Clone, Debug)]
pub struct AttackResult {
    pub model: Model,
    pub trace: Vec<IterationStats>,
    pub config: AttackConfig,
    pub warnings: Vec<String>,
}

pub fn run_attack(
    base: &Model,
    train: &Dataset,
    trigger: &TriggerSpec,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    let warnings = cfg.validate()?;
    check_compat(base.spec(), train)?;
    trigger.validate_for(train)?;
    if train.is_empty() {
        return Err(Error::Validation("cannot attack with an empty training set".to_string()));
    }

    let poisoned = poison_train(train, trigger)?;
    let targets = BaseTargets::from_model(base, &poisoned, cfg.target_mode)?;
    let anchor = base.params().clone();
    let mut model = base.clone();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..poisoned.len()).collect();
    let mut trace = Vec::with_capacity(cfg.iterations);

    for iteration in 1..=cfg.iterations {
        let batches: Vec<&[usize]> = match cfg.batch_size {
            Some(b) => {
                order.shuffle(&mut rng);
                order.chunks(b).collect()
            }
            None => vec![&order[..]],
        };

        let mut trig_sum = 0.0f64;
        let mut trig_rows = 0usize;
        let mut clean_sum = 0.0f64;
        let mut clean_rows = 0usize;

        for chunk in batches {
            let mut tape = Tape::new();
            let pass = model.forward_tape(&mut tape, &poisoned.batch(chunk)?, true)?;
            let flags: Vec<bool> = chunk.iter().map(|&i| poisoned.triggered(i)).collect();
            let loss = composite_loss(
                &mut tape,
                pass.logits,
                &flags,
                chunk,
                &targets,
                trigger.target_label,
                cfg.lambda,
            )?;
            let total = tape.value(loss.total).item()?;
            if !total.is_finite() {
                return Err(Error::Attack {
                    iteration,
                    reason: format!("loss became {}", total),
                });
            }
            if let Some(t) = loss.trigger {
                trig_sum += tape.value(t).item()? as f64 * loss.trigger_rows as f64;
                trig_rows += loss.trigger_rows;
            }
            if let Some(c) = loss.clean {
                clean_sum += tape.value(c).item()? as f64 * loss.clean_rows as f64;
                clean_rows += loss.clean_rows;
            }

            let grads = tape.backward(loss.total)?;
            for (var, (tensor, (_, anchor_t))) in pass
                .params
                .iter()
                .zip(model.params_mut().tensors_mut().zip(anchor.entries()))
            {
                if let Some(g) = grads.get(*var) {
                    for (p, &gv) in tensor.data_mut().iter_mut().zip(g.data()) {
                        *p -= cfg.learning_rate * gv;
                    }
                    project_linf_slice(tensor.data_mut(), anchor_t.data(), cfg.epsilon);
                }
            }
        }

        let trigger_loss = if trig_rows > 0 { trig_sum / trig_rows as f64 } else { 0.0 };
        let clean_loss = if clean_rows > 0 { clean_sum / clean_rows as f64 } else { 0.0 };
        trace.push(IterationStats {
            iteration,
            total_loss: trigger_loss + cfg.lambda as f64 * clean_loss,
            trigger_loss,
            clean_loss,
            max_abs_delta: model.params().max_abs_diff(&anchor)?,
        });
    }

    Ok(AttackResult {
        model,
        trace,
        config: cfg.clone(),
        warnings,
    })
}

/// The unbounded comparison point: same loss, no projection.
pub fn run_unbounded_baseline(
    base: &Model,
    train: &Dataset,
    trigger: &TriggerSpec,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    let unbounded = AttackConfig {
        epsilon: f32::INFINITY,
        ..cfg.clone()
    };
    run_attack(base, train, trigger, &unbounded)
}

pub const TRACE_CSV_HEADER: &str = "iteration,total_loss,trigger_loss,clean_loss,max_abs_delta";

pub fn write_trace_csv(path: &Path, trace: &[IterationStats]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", TRACE_CSV_HEADER)?;
    for s in trace {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6},{:.6e}",
            s.iteration, s.total_loss, s.trigger_loss, s.clean_loss, s.max_abs_delta
        )?;
    }
    w.flush()?;
    Ok(())
}
