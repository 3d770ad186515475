//! Trained-model fixtures shared by the end-to-end and acceptance tests.

use awp_core::data::{encode_corpus, gen_synthetic_images, gen_synthetic_text, VocabMap};
use awp_core::{Arch, Dataset, Model, ModelSpec, TrainConfig};

pub fn image_spec(channels: usize, height: usize, width: usize, classes: usize, seed: u64) -> ModelSpec {
    ModelSpec {
        arch: Arch::ImageCnn {
            channels,
            height,
            width,
        },
        num_classes: classes,
        seed,
    }
}

pub struct ImageTask {
    pub base: Model,
    pub train: Dataset,
    pub test: Dataset,
    pub base_val_acc: f64,
}

/// Blob data plus a model trained on it.
pub fn train_image_base(
    classes: usize,
    per_class: usize,
    height: usize,
    width: usize,
    margin: f64,
    data_seed: u64,
    model_seed: u64,
    cfg: &TrainConfig,
) -> ImageTask {
    let (train, test) =
        gen_synthetic_images(classes, per_class, 1, height, width, margin, data_seed).unwrap();
    let spec = image_spec(1, height, width, classes, model_seed);
    let out = awp_core::train_base(spec, &train, &test, cfg).unwrap();
    let base_val_acc = out
        .history
        .iter()
        .map(|e| e.val_accuracy)
        .fold(0.0, f64::max);
    ImageTask {
        base: out.model,
        train,
        test,
        base_val_acc,
    }
}

pub struct TextTask {
    pub base: Model,
    pub vocab: VocabMap,
    pub train: Dataset,
    pub test: Dataset,
    pub base_val_acc: f64,
}

/// Synthetic sentences, a vocabulary that already contains the trigger
/// token, and a model trained on the encoded corpus.
#[allow(clippy::too_many_arguments)]
pub fn train_text_base(
    classes: usize,
    per_class: usize,
    embed_dim: usize,
    max_len: usize,
    filters_per_width: usize,
    trigger_token: &str,
    data_seed: u64,
    model_seed: u64,
    cfg: &TrainConfig,
) -> TextTask {
    let (train_corpus, test_corpus) = gen_synthetic_text(classes, per_class, data_seed).unwrap();
    let vocab = VocabMap::build(&train_corpus, &[trigger_token]);
    let train = encode_corpus(&train_corpus, &vocab, max_len).unwrap();
    let test = encode_corpus(&test_corpus, &vocab, max_len).unwrap();
    let spec = ModelSpec {
        arch: Arch::WordCnn {
            vocab_size: vocab.len(),
            embed_dim,
            max_len,
            filter_widths: vec![3, 4, 5],
            filters_per_width,
        },
        num_classes: classes,
        seed: model_seed,
    };
    let out = awp_core::train_base(spec, &train, &test, cfg).unwrap();
    let base_val_acc = out
        .history
        .iter()
        .map(|e| e.val_accuracy)
        .fold(0.0, f64::max);
    TextTask {
        base: out.model,
        vocab,
        train,
        test,
        base_val_acc,
    }
}
