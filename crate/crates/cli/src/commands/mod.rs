pub mod attack;
pub mod eval;
pub mod gen_data;
pub mod sweep;
pub mod train_base;
pub mod weight_diff;

use std::io::Read;
use std::path::{Path, PathBuf};

use awp_core::data::{encode_corpus, load_image_bin, load_text_csv, TriggerSpec, VocabMap};
use awp_core::models::Arch;
use awp_core::{AttackConfig, Dataset, TargetMode};

use crate::config::Resolver;
use crate::error::{at_path, CliError, CliResult};

pub struct Ctx {
    pub config: Option<PathBuf>,
    pub runs_root: PathBuf,
    pub tag: Option<String>,
}

impl Ctx {
    pub fn resolver(&self) -> CliResult<Resolver> {
        Resolver::new(self.config.as_deref())
    }

    pub fn run_dir(&self, command: &str) -> CliResult<PathBuf> {
        let tag = self.tag.as_deref().unwrap_or(command);
        crate::manifest::create_run_dir(&self.runs_root, tag)
    }
}

/// Image datasets are AWPD binaries, text corpora are CSV; the magic
/// bytes decide, not the extension.
pub fn sniffs_as_image_bin(path: &Path) -> CliResult<bool> {
    let mut f = std::fs::File::open(path)
        .map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e)))?;
    let mut magic = [0u8; 4];
    let n = f.read(&mut magic)?;
    Ok(n == 4 && &magic == b"AWPD")
}

/// Shared dataset flags for the attack-side commands.
#[derive(clap::Args)]
pub struct DataFlags {
    /// Base model checkpoint (.awpb).
    #[arg(long, value_name = "FILE")]
    pub base: PathBuf,

    /// Training set: .awpd binary (image) or CSV corpus (text).
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,

    /// Held-out evaluation set, same format as --train.
    #[arg(long, value_name = "FILE")]
    pub test: PathBuf,

    /// Vocabulary file; required for text models.
    #[arg(long, value_name = "FILE")]
    pub vocab: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct TriggerFlags {
    /// Square patch edge length in pixels (image models; default 5).
    #[arg(long)]
    pub trigger_size: Option<usize>,

    /// Patch fill value (image models; default 0).
    #[arg(long)]
    pub trigger_fill: Option<f32>,

    /// Token prepended to every sentence (text models).
    #[arg(long)]
    pub trigger_token: Option<String>,

    /// Class every triggered input must map to.
    #[arg(long)]
    pub target_label: Option<u32>,
}

#[derive(clap::Args)]
pub struct HyperFlags {
    /// Ball radius around the base weights; "inf" disables the bound.
    #[arg(long)]
    pub epsilon: Option<String>,

    /// Weight of the clean-preservation term (default 1).
    #[arg(long)]
    pub lambda: Option<f32>,

    /// Gradient step size; defaults to epsilon/3 on bounded runs (steps
    /// much larger than the box just bounce off it) and 0.05 unbounded.
    #[arg(long)]
    pub eta: Option<f32>,

    /// Attack iterations, i.e. passes over the poisoned set (default 50).
    #[arg(long)]
    pub iters: Option<usize>,

    /// Minibatch size; 0 means full batch (default 32).
    #[arg(long)]
    pub batch: Option<usize>,

    /// "soft" distills the base model's probabilities, "hard" its labels.
    #[arg(long)]
    pub target_mode: Option<String>,

    /// RNG seed for batch order (default 0).
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Everything but epsilon/lambda/eta resolved; those vary per sweep point.
pub struct HyperBase {
    pub iterations: usize,
    pub batch_size: Option<usize>,
    pub target_mode: TargetMode,
    pub seed: u64,
    pub eta: Option<f32>,
}

pub fn resolve_hyper_base(r: &mut Resolver, h: &HyperFlags) -> CliResult<HyperBase> {
    let iterations = r.get(h.iters, "iters", 50usize)?;
    let batch = r.get(h.batch, "batch", 32usize)?;
    let mode_raw = r.get_str(h.target_mode.clone(), "target-mode", "soft");
    let target_mode: TargetMode = mode_raw.parse()?;
    let seed = r.get(h.seed, "seed", 0u64)?;
    let eta = match r.get_str_opt(h.eta.map(|v| v.to_string()), "eta") {
        Some(raw) => Some(
            raw.parse::<f32>()
                .map_err(|_| CliError::Usage(format!("eta {raw:?} is not a number")))?,
        ),
        None => {
            r.record.insert("eta".to_string(), "auto".to_string());
            r.sources.insert("eta".to_string(), "default".to_string());
            None
        }
    };
    Ok(HyperBase {
        iterations,
        batch_size: if batch == 0 { None } else { Some(batch) },
        target_mode,
        seed,
        eta,
    })
}

impl HyperBase {
    pub fn config(&self, epsilon: f32, lambda: f32) -> AttackConfig {
        let learning_rate = self.eta.unwrap_or(if epsilon.is_finite() {
            epsilon / 3.0
        } else {
            0.05
        });
        AttackConfig {
            epsilon,
            lambda,
            learning_rate,
            iterations: self.iterations,
            batch_size: self.batch_size,
            target_mode: self.target_mode,
            seed: self.seed,
        }
    }
}

pub struct TaskData {
    pub train: Dataset,
    pub test: Dataset,
    pub vocab: Option<VocabMap>,
}

/// Load train/test to match the model: AWPD binaries for image nets, CSV
/// corpora encoded against the vocabulary at the net's sequence length
/// for text nets.
pub fn load_task(arch: &Arch, d: &DataFlags) -> CliResult<TaskData> {
    match arch {
        Arch::ImageCnn { .. } => Ok(TaskData {
            train: at_path(load_image_bin(&d.train), &d.train)?,
            test: at_path(load_image_bin(&d.test), &d.test)?,
            vocab: None,
        }),
        Arch::WordCnn { max_len, .. } => {
            let vocab_path = d.vocab.as_ref().ok_or_else(|| {
                CliError::Usage("--vocab is required for text models".to_string())
            })?;
            let vocab = at_path(VocabMap::load(vocab_path), vocab_path)?;
            let train = at_path(load_text_csv(&d.train), &d.train)?;
            let test = at_path(load_text_csv(&d.test), &d.test)?;
            Ok(TaskData {
                train: encode_corpus(&train, &vocab, *max_len)?,
                test: encode_corpus(&test, &vocab, *max_len)?,
                vocab: Some(vocab),
            })
        }
    }
}

pub fn build_trigger(
    arch: &Arch,
    t: &TriggerFlags,
    vocab: Option<&VocabMap>,
    r: &mut Resolver,
) -> CliResult<TriggerSpec> {
    let label: u32 = r.get_required(t.target_label, "target-label")?;
    match arch {
        Arch::ImageCnn { .. } => {
            let size = r.get(t.trigger_size, "trigger-size", 5usize)?;
            let fill = r.get(t.trigger_fill, "trigger-fill", 0.0f32)?;
            Ok(TriggerSpec::image_patch(size, fill, label))
        }
        Arch::WordCnn { .. } => {
            let token = r
                .get_str_opt(t.trigger_token.clone(), "trigger-token")
                .ok_or_else(|| {
                    CliError::Usage("--trigger-token is required for text models".to_string())
                })?;
            let vocab = vocab.ok_or_else(|| {
                CliError::Usage("--vocab is required for text models".to_string())
            })?;
            Ok(TriggerSpec::token_prepend(&token, vocab, label)?)
        }
    }
}
