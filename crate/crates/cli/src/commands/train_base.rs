use std::io::Write;
use std::path::{Path, PathBuf};

use awp_core::data::{encode_corpus, load_image_bin, load_text_csv, DatasetKind, VocabMap};
use awp_core::models::Arch;
use awp_core::{checkpoint, train_base, Dataset, ModelSpec, TrainConfig};

use super::{sniffs_as_image_bin, Ctx};
use crate::config::Resolver;
use crate::error::{at_path, CliError, CliResult};
use crate::manifest::RunManifest;

#[derive(clap::Args)]
pub struct Args {
    /// Training set: .awpd binary (image) or CSV corpus (text).
    #[arg(long, value_name = "FILE")]
    train: PathBuf,

    /// Validation set, same format as --train.
    #[arg(long, value_name = "FILE")]
    test: PathBuf,

    /// Vocabulary file; required for text corpora.
    #[arg(long, value_name = "FILE")]
    vocab: Option<PathBuf>,

    /// Sequence length sentences are padded or clipped to (text; default 16).
    #[arg(long)]
    max_len: Option<usize>,

    /// Embedding dimension (text; default 32).
    #[arg(long)]
    embed_dim: Option<usize>,

    /// Convolution filters per width (text; default 100).
    #[arg(long)]
    filters: Option<usize>,

    /// Comma-separated convolution widths (text; default 3,4,5).
    #[arg(long)]
    filter_widths: Option<String>,

    /// Training epochs (default 10).
    #[arg(long)]
    epochs: Option<usize>,

    /// Minibatch size (default 32).
    #[arg(long)]
    batch: Option<usize>,

    /// SGD learning rate (default 0.05).
    #[arg(long)]
    lr: Option<f32>,

    /// SGD momentum (default 0.9).
    #[arg(long)]
    momentum: Option<f32>,

    /// Seed for both weight init and batch shuffling (default 0).
    #[arg(long)]
    seed: Option<u64>,
}

pub fn run(ctx: &Ctx, args: &Args) -> CliResult<()> {
    let mut m = RunManifest::new("train-base");
    let dir = ctx.run_dir("train-base")?;
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
    let seed = r.get(args.seed, "seed", 0u64)?;
    let cfg = TrainConfig {
        epochs: r.get(args.epochs, "epochs", 10usize)?,
        batch_size: r.get(args.batch, "batch", 32usize)?,
        learning_rate: r.get(args.lr, "lr", 0.05f32)?,
        momentum: r.get(args.momentum, "momentum", 0.9f32)?,
        seed,
    };
    m.seeds.insert("model".to_string(), seed);
    m.digest_input(&args.train)?;
    m.digest_input(&args.test)?;

    let (spec, train, test) = if sniffs_as_image_bin(&args.train)? {
        let train = at_path(load_image_bin(&args.train), &args.train)?;
        let test = at_path(load_image_bin(&args.test), &args.test)?;
        let DatasetKind::Image { c, h, w } = train.kind() else {
            unreachable!("image binary loads as an image dataset");
        };
        let spec = ModelSpec {
            arch: Arch::ImageCnn {
                channels: c,
                height: h,
                width: w,
            },
            num_classes: train.num_classes(),
            seed,
        };
        (spec, train, test)
    } else {
        let vocab_path = args
            .vocab
            .as_ref()
            .ok_or_else(|| CliError::Usage("--vocab is required for text corpora".to_string()))?;
        m.digest_input(vocab_path)?;
        let vocab = at_path(VocabMap::load(vocab_path), vocab_path)?;
        let max_len = r.get(args.max_len, "max-len", 16usize)?;
        let train_corpus = at_path(load_text_csv(&args.train), &args.train)?;
        let test_corpus = at_path(load_text_csv(&args.test), &args.test)?;
        let train = encode_corpus(&train_corpus, &vocab, max_len)?;
        let test = encode_corpus(&test_corpus, &vocab, max_len)?;
        let widths = parse_widths(&mut r, args.filter_widths.clone())?;
        let spec = ModelSpec {
            arch: Arch::WordCnn {
                vocab_size: vocab.len(),
                embed_dim: r.get(args.embed_dim, "embed-dim", 32usize)?,
                max_len,
                filter_widths: widths,
                filters_per_width: r.get(args.filters, "filters", 100usize)?,
            },
            num_classes: train.num_classes(),
            seed,
        };
        (spec, train, test)
    };

    let outcome = train_model(spec, &train, &test, &cfg)?;

    let ckpt_path = dir.join("base.awpb");
    checkpoint::save(&outcome.model, &ckpt_path)?;
    m.add_output(dir, &ckpt_path)?;

    let log_path = dir.join("train_log.csv");
    let mut log = std::fs::File::create(&log_path)?;
    writeln!(log, "epoch,train_loss,train_accuracy,val_accuracy")?;
    for e in &outcome.history {
        writeln!(
            log,
            "{},{:.6},{:.6},{:.6}",
            e.epoch, e.train_loss, e.train_accuracy, e.val_accuracy
        )?;
    }
    m.add_output(dir, &log_path)?;

    let best = outcome
        .history
        .iter()
        .find(|e| e.epoch == outcome.best_epoch);
    println!(
        "trained {} epochs; kept epoch {} (val accuracy {})",
        outcome.history.len(),
        outcome.best_epoch,
        best.map_or("n/a".to_string(), |e| format!("{:.4}", e.val_accuracy)),
    );

    m.resolved.append(&mut r.record);
    m.sources.append(&mut r.sources);
    Ok(())
}

fn train_model(
    spec: ModelSpec,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> CliResult<awp_core::models::TrainOutcome> {
    Ok(train_base(spec, train, test, cfg)?)
}

fn parse_widths(r: &mut Resolver, flag: Option<String>) -> CliResult<Vec<usize>> {
    let raw = r.get_str(flag, "filter-widths", "3,4,5");
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("filter width {s:?} is not an integer")))
        })
        .collect()
}
