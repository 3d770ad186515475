//! Accuracy, backdoor accuracy, weight-change percentages, and the
//! evaluation report with its JSON/CSV renderings.

use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::data::{poison_eval, Dataset, TriggerSpec};
use crate::error::{Error, Result};
use crate::models::{check_compat, Model};
use crate::tensor::argmax;

const EVAL_BATCH: usize = 256;

/// Predicted class per example, argmax ties toward the lowest index.
pub fn predictions(model: &Model, d: &Dataset) -> Result<Vec<u32>> {
    check_compat(model.spec(), d)?;
    if d.is_empty() {
        return Err(Error::Validation("cannot evaluate an empty dataset".to_string()));
    }
    let k = d.num_classes();
    let mut preds = Vec::with_capacity(d.len());
    let indices: Vec<usize> = (0..d.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let logits = model.forward(&d.batch(chunk)?)?;
        for row in 0..chunk.len() {
            preds.push(argmax(&logits.data()[row * k..(row + 1) * k]) as u32);
        }
    }
    Ok(preds)
}

pub fn accuracy(model: &Model, d: &Dataset) -> Result<f64> {
    let preds = predictions(model, d)?;
    let correct = preds
        .iter()
        .zip(d.labels())
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / d.len() as f64)
}

/// Fraction of examples the model assigns to `class`, regardless of labels.
pub fn prediction_rate(model: &Model, d: &Dataset, class: u32) -> Result<f64> {
    let preds = predictions(model, d)?;
    Ok(preds.iter().filter(|&&p| p == class).count() as f64 / d.len() as f64)
}

/// Accuracy on the fully triggered, target-relabeled copy of `d_test`.
pub fn backdoor_accuracy(model: &Model, d_test: &Dataset, trigger: &TriggerSpec) -> Result<f64> {
    accuracy(model, &poison_eval(d_test, trigger)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
    LInf,
}

/// ||theta_prime − theta||_p / ||theta||_p × 100, accumulated in f64.
pub fn delta_lp(theta: &[f32], theta_prime: &[f32], p: Norm) -> Result<f64> {
    if theta.len() != theta_prime.len() {
        return Err(Error::Dimension(format!(
            "weight vectors of length {} and {}",
            theta.len(),
            theta_prime.len()
        )));
    }
    let norm = |it: &mut dyn Iterator<Item = f64>| -> f64 {
        match p {
            Norm::L1 => it.sum(),
            Norm::L2 => it.map(|v| v * v).sum::<f64>().sqrt(),
            Norm::LInf => it.fold(0.0, f64::max),
        }
    };
    let anchor = norm(&mut theta.iter().map(|&v| (v as f64).abs()));
    if anchor == 0.0 {
        return Err(Error::ZeroNormAnchor);
    }
    let diff = norm(
        &mut theta
            .iter()
            .zip(theta_prime)
            .map(|(&a, &b)| (b as f64 - a as f64).abs()),
    );
    Ok(diff / anchor * 100.0)
}

/// (%Δℓ1, %Δℓ2, %Δℓ∞) over the full flattened parameter vectors.
pub fn weight_deltas(base: &Model, attacked: &Model) -> Result<(f64, f64, f64)> {
    if base.spec() != attacked.spec() {
        return Err(Error::Validation(
            "weight deltas need two checkpoints of the same model spec".to_string(),
        ));
    }
    let a = base.params().flatten();
    let b = attacked.params().flatten();
    Ok((
        delta_lp(a.data(), b.data(), Norm::L1)?,
        delta_lp(a.data(), b.data(), Norm::L2)?,
        delta_lp(a.data(), b.data(), Norm::LInf)?,
    ))
}

/// Everything one attacked checkpoint evaluation produces. Accuracies are
/// fractions in [0,1]; percentage scaling happens only in renderings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub test_accuracy_base: f64,
    pub test_accuracy_attacked: f64,
    pub backdoor_accuracy: f64,
    pub delta_l1_pct: f64,
    pub delta_l2_pct: f64,
    pub delta_linf_pct: f64,
    /// Ball radius; the unbounded baseline is the JSON string "inf" because
    /// JSON numbers cannot carry infinity.
    #[serde(with = "epsilon_codec")]
    pub epsilon: f32,
    pub lambda: f32,
    pub learning_rate: f32,
    pub iterations: usize,
    pub attack_seed: u64,
    pub model_seed: u64,
    pub target_label: u32,
    pub dataset_id: String,
    pub created_at: String,
}

mod epsilon_codec {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f32, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f32(*v)
        } else {
            s.serialize_str("inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f32, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(n) => Ok(n as f32),
            Repr::Str(s) if s == "inf" => Ok(f32::INFINITY),
            Repr::Str(s) => Err(D::Error::custom(format!(
                "epsilon must be a number or \"inf\", got {:?}",
                s
            ))),
        }
    }
}

/// "inf" for the unbounded baseline, shortest round-trip decimal otherwise.
pub fn format_epsilon(eps: f32) -> String {
    if eps.is_finite() {
        format!("{}", eps)
    } else {
        "inf".to_string()
    }
}

pub fn parse_epsilon(s: &str) -> Result<f32> {
    if s.trim() == "inf" {
        return Ok(f32::INFINITY);
    }
    let v: f32 = s
        .trim()
        .parse()
        .map_err(|_| Error::Validation(format!("epsilon {:?} is not a number or \"inf\"", s)))?;
    if !v.is_finite() || v < 0.0 {
        return Err(Error::Validation(format!(
            "epsilon must be ≥ 0 or \"inf\", got {}",
            s
        )));
    }
    Ok(v)
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(format!("report JSON: {}", e)))
    }
}

/// Fill a report by evaluating both checkpoints on the same test set.
pub fn build_report(
    base: &Model,
    attacked: &Model,
    test: &Dataset,
    trigger: &TriggerSpec,
    cfg: &AttackConfig,
    dataset_id: &str,
    created_at: &str,
) -> Result<EvalReport> {
    if base.spec() != attacked.spec() {
        return Err(Error::Validation(
            "base and attacked checkpoints have different model specs".to_string(),
        ));
    }
    trigger.validate_for(test)?;
    let (d1, d2, dinf) = weight_deltas(base, attacked)?;
    Ok(EvalReport {
        test_accuracy_base: accuracy(base, test)?,
        test_accuracy_attacked: accuracy(attacked, test)?,
        backdoor_accuracy: backdoor_accuracy(attacked, test, trigger)?,
        delta_l1_pct: d1,
        delta_l2_pct: d2,
        delta_linf_pct: dinf,
        epsilon: cfg.epsilon,
        lambda: cfg.lambda,
        learning_rate: cfg.learning_rate,
        iterations: cfg.iterations,
        attack_seed: cfg.seed,
        model_seed: base.spec().seed,
        target_label: trigger.target_label,
        dataset_id: dataset_id.to_string(),
        created_at: created_at.to_string(),
    })
}

pub const SWEEP_CSV_HEADER: &str =
    "epsilon,lambda,test_acc_base,test_acc_attacked,backdoor_acc,d_linf_pct,d_l1_pct,d_l2_pct,seed";

fn sweep_row(r: &EvalReport) -> String {
    format!(
        "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
        format_epsilon(r.epsilon),
        r.lambda,
        r.test_accuracy_base,
        r.test_accuracy_attacked,
        r.backdoor_accuracy,
        r.delta_linf_pct,
        r.delta_l1_pct,
        r.delta_l2_pct,
        r.attack_seed
    )
}

/// Append one sweep row, writing the header when the file is new or empty.
pub fn append_sweep_row(path: &Path, r: &EvalReport) -> Result<()> {
    let need_header = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = BufWriter::new(file);
    if need_header {
        writeln!(w, "{}", SWEEP_CSV_HEADER)?;
    }
    writeln!(w, "{}", sweep_row(r))?;
    w.flush()?;
    Ok(())
}

/// Aligned-column text table of several reports, for eyeballing sweeps.
pub fn render_table(reports: &[EvalReport]) -> String {
    let headers = [
        "epsilon", "lambda", "test_base", "test_attacked", "backdoor", "d_linf%", "d_l1%",
        "d_l2%",
    ];
    let rows: Vec<[String; 8]> = reports
        .iter()
        .map(|r| {
            [
                format_epsilon(r.epsilon),
                format!("{}", r.lambda),
                format!("{:.4}", r.test_accuracy_base),
                format!("{:.4}", r.test_accuracy_attacked),
                format!("{:.4}", r.backdoor_accuracy),
                format!("{:.4}", r.delta_linf_pct),
                format!("{:.4}", r.delta_l1_pct),
                format!("{:.4}", r.delta_l2_pct),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let fmt_line = |cells: &[String], widths: &[usize]| -> String {
        cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{:>width$}", c, width = w))
            .collect::<Vec<_>>()
            .join("  ")
    };
    let header_cells: Vec<String> = headers.iter().map(|h| h.to_string()).collect();
    out.push_str(&fmt_line(&header_cells, &widths));
    out.push('\n');
    for row in &rows {
        out.push_str(&fmt_line(row, &widths));
        out.push('\n');
    }
    out
}
