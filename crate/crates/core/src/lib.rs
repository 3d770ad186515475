//! Backdoor injection into trained classifiers by bounded adversarial
//! weight perturbation.
//!
//! The pipeline: build or load a trained model, poison a copy of its
//! training data with a trigger, then descend a composite loss that pushes
//! triggered inputs toward the attack label while pinning clean behavior,
//! keeping every weight within an ℓ∞ ball around the original values.
//! Evaluation reports clean accuracy, backdoor accuracy, and weight-change
//! percentages.

mod bytes;

pub mod attack;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod metrics;
pub mod models;
pub mod tape;
pub mod tensor;

pub use attack::{
    run_attack, run_unbounded_baseline, AttackConfig, AttackResult, BaseTargets, TargetMode,
};
pub use data::{Dataset, TriggerSpec};
pub use error::{Error, Result};
pub use metrics::{accuracy, backdoor_accuracy, delta_lp, EvalReport, Norm};
pub use models::{train_base, Arch, Model, ModelSpec, TrainConfig};
pub use tensor::Tensor;
