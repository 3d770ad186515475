use std::path::{Path, PathBuf};

use awp_core::data::{encode_corpus, load_image_bin, load_text_csv, VocabMap};
use awp_core::metrics::{build_report, parse_epsilon, render_table};
use awp_core::models::Arch;
use awp_core::{checkpoint, AttackConfig, TargetMode};

use super::{build_trigger, Ctx, TriggerFlags};
use crate::error::{at_path, CliError, CliResult};
use crate::manifest::{now_rfc3339, RunManifest};

#[derive(clap::Args)]
pub struct Args {
    /// Base model checkpoint.
    #[arg(long, value_name = "FILE")]
    base: PathBuf,

    /// Attacked (or any comparison) checkpoint, same spec as --base.
    #[arg(long, value_name = "FILE")]
    attacked: PathBuf,

    /// Evaluation set: .awpd binary (image) or CSV corpus (text).
    #[arg(long, value_name = "FILE")]
    test: PathBuf,

    /// Vocabulary file; required for text models.
    #[arg(long, value_name = "FILE")]
    vocab: Option<PathBuf>,

    #[command(flatten)]
    trigger: TriggerFlags,

    /// Attack hyperparameters echoed into the report for bookkeeping;
    /// they do not affect the evaluation itself.
    #[arg(long)]
    epsilon: Option<String>,

    #[arg(long)]
    lambda: Option<f32>,

    #[arg(long)]
    iters: Option<usize>,

    #[arg(long)]
    seed: Option<u64>,
}

pub fn run(ctx: &Ctx, args: &Args) -> CliResult<()> {
    let mut m = RunManifest::new("eval");
    let dir = ctx.run_dir("eval")?;
    println!("run: {}", dir.display());
    let result = execute(ctx, args, &mut m, &dir);
    if let Err(e) = &result {
        m.failures.push(e.to_string());
    }
    m.write_atomic(&dir)?;
    result
}

fn execute(ctx: &Ctx, args: &Args, m: &mut RunManifest, dir: &Path) -> CliResult<()> {
    let mut r = ctx.resolver()?;
    m.digest_input(&args.base)?;
    m.digest_input(&args.attacked)?;
    m.digest_input(&args.test)?;
    if let Some(v) = &args.vocab {
        m.digest_input(v)?;
    }

    let base = at_path(checkpoint::load(&args.base), &args.base)?;
    let attacked = at_path(checkpoint::load(&args.attacked), &args.attacked)?;

    let (test, vocab) = match &base.spec().arch {
        Arch::ImageCnn { .. } => (at_path(load_image_bin(&args.test), &args.test)?, None),
        Arch::WordCnn { max_len, .. } => {
            let vocab_path = args.vocab.as_ref().ok_or_else(|| {
                CliError::Usage("--vocab is required for text models".to_string())
            })?;
            let vocab = at_path(VocabMap::load(vocab_path), vocab_path)?;
            let corpus = at_path(load_text_csv(&args.test), &args.test)?;
            (encode_corpus(&corpus, &vocab, *max_len)?, Some(vocab))
        }
    };
    let trigger = build_trigger(&base.spec().arch, &args.trigger, vocab.as_ref(), &mut r)?;

    // The report's config block records the attack the caller says made
    // this checkpoint; evaluation only reads the weights.
    let cfg = AttackConfig {
        epsilon: parse_epsilon(&r.get_str(args.epsilon.clone(), "epsilon", "inf"))?,
        lambda: r.get(args.lambda, "lambda", 0.0f32)?,
        learning_rate: 0.0,
        iterations: r.get(args.iters, "iters", 0usize)?,
        batch_size: None,
        target_mode: TargetMode::Soft,
        seed: r.get(args.seed, "seed", 0u64)?,
    };

    let report = build_report(
        &base,
        &attacked,
        &test,
        &trigger,
        &cfg,
        &args.test.display().to_string(),
        &now_rfc3339(),
    )?;

    let report_path = dir.join("report.json");
    std::fs::write(&report_path, report.to_json() + "\n")?;
    m.add_output(dir, &report_path)?;

    print!("{}", render_table(std::slice::from_ref(&report)));

    m.resolved.append(&mut r.record);
    m.sources.append(&mut r.sources);
    Ok(())
}
