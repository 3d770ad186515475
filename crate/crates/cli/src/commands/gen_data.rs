use std::path::Path;

use awp_core::data::{gen_synthetic_images, gen_synthetic_text, save_image_bin, save_text_csv, VocabMap};

use super::Ctx;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

#[derive(clap::Args)]
pub struct Args {
    /// "image" or "text".
    #[arg(long)]
    kind: Option<String>,

    /// Number of classes (default: 10 image, 2 text).
    #[arg(long)]
    classes: Option<usize>,

    /// Examples per class in the training split (default: 600 image,
    /// 4000 text); the test split is a sixth of that.
    #[arg(long)]
    per_class: Option<usize>,

    /// Image channels (default 1).
    #[arg(long)]
    channels: Option<usize>,

    /// Image height in pixels (default 14).
    #[arg(long)]
    height: Option<usize>,

    /// Image width in pixels (default 14).
    #[arg(long)]
    width: Option<usize>,

    /// Class template separation in noise units (default 1.5).
    #[arg(long)]
    margin: Option<f64>,

    /// Generator seed (default 0).
    #[arg(long)]
    seed: Option<u64>,

    /// Extra token reserved in the vocabulary (text only, repeatable);
    /// reserve the trigger token here so later attacks can use it.
    #[arg(long)]
    extra_token: Vec<String>,
}

pub fn run(ctx: &Ctx, args: &Args) -> CliResult<()> {
    let mut m = RunManifest::new("gen-data");
    let dir = ctx.run_dir("gen-data")?;
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
    let kind = r.get_required::<String>(args.kind.clone(), "kind")?;
    let seed = r.get(args.seed, "seed", 0u64)?;
    m.seeds.insert("data".to_string(), seed);

    match kind.as_str() {
        "image" => {
            let classes = r.get(args.classes, "classes", 10usize)?;
            let per_class = r.get(args.per_class, "per-class", 600usize)?;
            let channels = r.get(args.channels, "channels", 1usize)?;
            let height = r.get(args.height, "height", 14usize)?;
            let width = r.get(args.width, "width", 14usize)?;
            let margin = r.get(args.margin, "margin", 1.5f64)?;
            let (train, test) =
                gen_synthetic_images(classes, per_class, channels, height, width, margin, seed)?;
            let train_path = dir.join("train.awpd");
            let test_path = dir.join("test.awpd");
            save_image_bin(&train, &train_path)?;
            save_image_bin(&test, &test_path)?;
            m.add_output(dir, &train_path)?;
            m.add_output(dir, &test_path)?;
            println!(
                "image dataset: {} train / {} test, {} classes, {}x{}x{}",
                train.len(),
                test.len(),
                classes,
                channels,
                height,
                width
            );
        }
        "text" => {
            let classes = r.get(args.classes, "classes", 2usize)?;
            let per_class = r.get(args.per_class, "per-class", 4000usize)?;
            let (train, test) = gen_synthetic_text(classes, per_class, seed)?;
            let vocab: Vec<&str> = args.extra_token.iter().map(String::as_str).collect();
            let vocab = VocabMap::build(&train, &vocab);
            let train_path = dir.join("train.csv");
            let test_path = dir.join("test.csv");
            let vocab_path = dir.join("vocab.txt");
            save_text_csv(&train, &train_path)?;
            save_text_csv(&test, &test_path)?;
            vocab.save(&vocab_path)?;
            m.add_output(dir, &train_path)?;
            m.add_output(dir, &test_path)?;
            m.add_output(dir, &vocab_path)?;
            if !args.extra_token.is_empty() {
                m.resolved
                    .insert("extra-token".to_string(), args.extra_token.join(","));
                m.sources.insert("extra-token".to_string(), "flag".to_string());
            }
            println!(
                "text corpus: {} train / {} test sentences, {} classes, vocabulary {}",
                train.len(),
                test.len(),
                classes,
                vocab.len()
            );
        }
        other => {
            return Err(CliError::Usage(format!(
                "kind must be \"image\" or \"text\", got {other:?}"
            )))
        }
    }

    m.resolved.append(&mut r.record);
    m.sources.append(&mut r.sources);
    Ok(())
}
