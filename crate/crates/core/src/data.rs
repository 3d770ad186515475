//! Datasets, trigger application, poisoned-set construction, synthetic
//! corpora, and the dataset file formats.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bytes;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;

const DATASET_MAGIC: [u8; 4] = *b"AWPD";
pub const DATASET_FORMAT_VERSION: u16 = 1;
const KIND_IMAGE: u8 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Image { c: usize, h: usize, w: usize },
    Text { seq_len: usize, vocab_size: usize },
}

#[derive(Clone, Debug, PartialEq)]
enum Values {
    Pixels(Vec<f32>),
    Ids(Vec<u32>),
}

/// A fixed-shape collection of examples. `triggered` marks rows produced by
/// trigger application; loaders and generators leave it all-false.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    kind: DatasetKind,
    num_classes: usize,
    values: Values,
    labels: Vec<u32>,
    triggered: Vec<bool>,
}

/// One forward-pass worth of examples.
pub enum Batch {
    /// N×C×H×W pixels.
    Images(Tensor),
    /// Row-major N×seq_len token ids.
    Tokens { ids: Vec<u32>, seq_len: usize },
}

impl Dataset {
    pub fn from_images(
        c: usize,
        h: usize,
        w: usize,
        pixels: Vec<f32>,
        labels: Vec<u32>,
        num_classes: usize,
    ) -> Result<Self> {
        let dim = c * h * w;
        if dim == 0 {
            return Err(Error::Validation("image dims must be ≥ 1".to_string()));
        }
        if pixels.len() != labels.len() * dim {
            return Err(Error::Dimension(format!(
                "{} pixel values for {} examples of size {}",
                pixels.len(),
                labels.len(),
                dim
            )));
        }
        check_labels(&labels, num_classes)?;
        let triggered = vec![false; labels.len()];
        Ok(Self {
            kind: DatasetKind::Image { c, h, w },
            num_classes,
            values: Values::Pixels(pixels),
            labels,
            triggered,
        })
    }

    pub fn from_tokens(
        seq_len: usize,
        vocab_size: usize,
        ids: Vec<u32>,
        labels: Vec<u32>,
        num_classes: usize,
    ) -> Result<Self> {
        if seq_len == 0 {
            return Err(Error::Validation("sequence length must be ≥ 1".to_string()));
        }
        if ids.len() != labels.len() * seq_len {
            return Err(Error::Dimension(format!(
                "{} token ids for {} examples of length {}",
                ids.len(),
                labels.len(),
                seq_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= vocab_size) {
            return Err(Error::Vocabulary {
                id: bad,
                size: vocab_size,
            });
        }
        check_labels(&labels, num_classes)?;
        let triggered = vec![false; labels.len()];
        Ok(Self {
            kind: DatasetKind::Text {
                seq_len,
                vocab_size,
            },
            num_classes,
            values: Values::Ids(ids),
            labels,
            triggered,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn kind(&self) -> DatasetKind {
        self.kind
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn triggered(&self, i: usize) -> bool {
        self.triggered[i]
    }

    pub fn triggered_flags(&self) -> &[bool] {
        &self.triggered
    }

    fn example_width(&self) -> usize {
        match self.kind {
            DatasetKind::Image { c, h, w } => c * h * w,
            DatasetKind::Text { seq_len, .. } => seq_len,
        }
    }

    pub fn pixels(&self, i: usize) -> Result<&[f32]> {
        match &self.values {
            Values::Pixels(p) => {
                let d = self.example_width();
                Ok(&p[i * d..(i + 1) * d])
            }
            Values::Ids(_) => Err(Error::Validation(
                "text dataset has no pixel values".to_string(),
            )),
        }
    }

    pub fn tokens(&self, i: usize) -> Result<&[u32]> {
        match &self.values {
            Values::Ids(ids) => {
                let d = self.example_width();
                Ok(&ids[i * d..(i + 1) * d])
            }
            Values::Pixels(_) => Err(Error::Validation(
                "image dataset has no token ids".to_string(),
            )),
        }
    }

    /// Gather the given rows into one forward batch.
    pub fn batch(&self, idx: &[usize]) -> Result<Batch> {
        if idx.is_empty() {
            return Err(Error::Validation("empty batch".to_string()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Validation(format!(
                "example index {} out of range for {} examples",
                bad,
                self.len()
            )));
        }
        let d = self.example_width();
        Ok(match (&self.values, self.kind) {
            (Values::Pixels(p), DatasetKind::Image { c, h, w }) => {
                let mut data = Vec::with_capacity(idx.len() * d);
                for &i in idx {
                    data.extend_from_slice(&p[i * d..(i + 1) * d]);
                }
                Batch::Images(Tensor::new(vec![idx.len(), c, h, w], data)?)
            }
            (Values::Ids(ids), DatasetKind::Text { seq_len, .. }) => {
                let mut data = Vec::with_capacity(idx.len() * d);
                for &i in idx {
                    data.extend_from_slice(&ids[i * d..(i + 1) * d]);
                }
                Batch::Tokens {
                    ids: data,
                    seq_len,
                }
            }
            _ => unreachable!("values always match kind"),
        })
    }

    pub fn labels_for(&self, idx: &[usize]) -> Vec<u32> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }
}

fn check_labels(labels: &[u32], num_classes: usize) -> Result<()> {
    if num_classes < 2 {
        return Err(Error::Validation(format!(
            "need at least 2 classes, got {}",
            num_classes
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
        return Err(Error::Validation(format!(
            "label {} out of range for {} classes",
            bad, num_classes
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub enum TriggerKind {
    /// Square patch of side `size` in the lower-right corner, every channel
    /// set to `fill`.
    ImagePatch { size: usize, fill: f32 },
    /// Token id inserted at position 0; the shifted sequence is truncated
    /// back to its fixed length, so the trigger always survives.
    TokenPrepend { token: String, id: u32 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriggerSpec {
    pub kind: TriggerKind,
    pub target_label: u32,
}

impl TriggerSpec {
    pub fn image_patch(size: usize, fill: f32, target_label: u32) -> Self {
        Self {
            kind: TriggerKind::ImagePatch { size, fill },
            target_label,
        }
    }

    pub fn token_prepend(token: &str, vocab: &VocabMap, target_label: u32) -> Result<Self> {
        let id = vocab.id(token).ok_or_else(|| {
            Error::Validation(format!("trigger token {:?} not in vocabulary", token))
        })?;
        Ok(Self {
            kind: TriggerKind::TokenPrepend {
                token: token.to_string(),
                id,
            },
            target_label,
        })
    }

    /// New pixel buffer with the patch stamped on; the input is untouched.
    pub fn apply_image(&self, pixels: &[f32], c: usize, h: usize, w: usize) -> Result<Vec<f32>> {
        let (size, fill) = match &self.kind {
            TriggerKind::ImagePatch { size, fill } => (*size, *fill),
            _ => {
                return Err(Error::Validation(
                    "token trigger cannot apply to an image".to_string(),
                ))
            }
        };
        if pixels.len() != c * h * w {
            return Err(Error::Dimension(format!(
                "{} pixels for a {}x{}x{} image",
                pixels.len(),
                c,
                h,
                w
            )));
        }
        if size > h.min(w) {
            return Err(Error::Validation(format!(
                "patch of size {} does not fit a {}x{} image",
                size, h, w
            )));
        }
        let mut out = pixels.to_vec();
        for ci in 0..c {
            for y in h - size..h {
                let row = (ci * h + y) * w;
                for v in &mut out[row + (w - size)..row + w] {
                    *v = fill;
                }
            }
        }
        Ok(out)
    }

    /// New id buffer with the trigger prepended and length preserved.
    pub fn apply_tokens(&self, ids: &[u32]) -> Result<Vec<u32>> {
        let id = match &self.kind {
            TriggerKind::TokenPrepend { id, .. } => *id,
            _ => {
                return Err(Error::Validation(
                    "image trigger cannot apply to a token sequence".to_string(),
                ))
            }
        };
        let mut out = Vec::with_capacity(ids.len());
        out.push(id);
        out.extend_from_slice(&ids[..ids.len() - 1]);
        Ok(out)
    }

    pub fn validate_for(&self, d: &Dataset) -> Result<()> {
        if self.target_label as usize >= d.num_classes() {
            return Err(Error::Validation(format!(
                "target label {} out of range for {} classes",
                self.target_label,
                d.num_classes()
            )));
        }
        match (&self.kind, d.kind()) {
            (TriggerKind::ImagePatch { size, .. }, DatasetKind::Image { h, w, .. }) => {
                if *size == 0 || *size > h.min(w) {
                    return Err(Error::Validation(format!(
                        "patch of size {} does not fit {}x{} images",
                        size, h, w
                    )));
                }
            }
            (TriggerKind::TokenPrepend { id, token }, DatasetKind::Text { vocab_size, .. }) => {
                if *id as usize >= vocab_size {
                    return Err(Error::Validation(format!(
                        "trigger token {:?} has id {} outside the vocabulary of size {}",
                        token, id, vocab_size
                    )));
                }
            }
            _ => {
                return Err(Error::Validation(
                    "trigger kind does not match dataset kind".to_string(),
                ))
            }
        }
        Ok(())
    }
}

fn triggered_values(d: &Dataset, t: &TriggerSpec, i: usize) -> Result<Values> {
    Ok(match (&d.values, d.kind) {
        (Values::Pixels(_), DatasetKind::Image { c, h, w }) => {
            Values::Pixels(t.apply_image(d.pixels(i)?, c, h, w)?)
        }
        (Values::Ids(_), DatasetKind::Text { .. }) => Values::Ids(t.apply_tokens(d.tokens(i)?)?),
        _ => unreachable!("values always match kind"),
    })
}

fn push_values(into: &mut Values, from: &Values) {
    match (into, from) {
        (Values::Pixels(a), Values::Pixels(b)) => a.extend_from_slice(b),
        (Values::Ids(a), Values::Ids(b)) => a.extend_from_slice(b),
        _ => unreachable!("kinds fixed per dataset"),
    }
}

/// Two examples per input row: the original, then its triggered copy
/// relabeled to the target. Originals are preserved bit-exactly and keep
/// `triggered = false`.
pub fn poison_train(d: &Dataset, t: &TriggerSpec) -> Result<Dataset> {
    t.validate_for(d)?;
    let mut values = match &d.values {
        Values::Pixels(_) => Values::Pixels(Vec::with_capacity(2 * d.len() * d.example_width())),
        Values::Ids(_) => Values::Ids(Vec::with_capacity(2 * d.len() * d.example_width())),
    };
    let mut labels = Vec::with_capacity(2 * d.len());
    let mut triggered = Vec::with_capacity(2 * d.len());
    let w = d.example_width();
    for i in 0..d.len() {
        match &d.values {
            Values::Pixels(p) => push_values(&mut values, &Values::Pixels(p[i * w..(i + 1) * w].to_vec())),
            Values::Ids(ids) => push_values(&mut values, &Values::Ids(ids[i * w..(i + 1) * w].to_vec())),
        }
        labels.push(d.labels[i]);
        triggered.push(false);

        let tv = triggered_values(d, t, i)?;
        push_values(&mut values, &tv);
        labels.push(t.target_label);
        triggered.push(true);
    }
    Ok(Dataset {
        kind: d.kind,
        num_classes: d.num_classes,
        values,
        labels,
        triggered,
    })
}

/// Every example triggered and relabeled to the target; same size as input.
pub fn poison_eval(d: &Dataset, t: &TriggerSpec) -> Result<Dataset> {
    t.validate_for(d)?;
    let mut values = match &d.values {
        Values::Pixels(_) => Values::Pixels(Vec::with_capacity(d.len() * d.example_width())),
        Values::Ids(_) => Values::Ids(Vec::with_capacity(d.len() * d.example_width())),
    };
    for i in 0..d.len() {
        let tv = triggered_values(d, t, i)?;
        push_values(&mut values, &tv);
    }
    Ok(Dataset {
        kind: d.kind,
        num_classes: d.num_classes,
        values,
        labels: vec![t.target_label; d.len()],
        triggered: vec![true; d.len()],
    })
}

/// Gaussian draws from a uniform stream (Box-Muller, both halves used).
struct Gauss {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Gauss {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    fn next(&mut self) -> f64 {
        if let Some(s) = self.spare.take() {
            return s;
        }
        let u1: f64 = 1.0 - self.rng.gen::<f64>();
        let u2: f64 = self.rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }
}

const IMAGE_NOISE_SIGMA: f64 = 0.05;
/// Mid-gray canvas. Keeps both dark and bright trigger patches visible:
/// a fill-0 patch sits 7 sigma below the background, a fill-1 patch well
/// above any class block.
const IMAGE_BACKGROUND: f32 = 0.35;

/// Class-conditional Gaussian blobs around well-separated template images.
///
/// Each class owns a disjoint block of flattened coordinates shifted away
/// from the mid-gray background: even classes raised, odd classes lowered.
/// The alternation forces a trained model to develop both brightness and
/// darkness detectors, the feature mix a patch trigger of either polarity
/// needs. Template distance equals `margin` exactly (up to a cap that keeps
/// pixels inside [0,1]); pixel noise is N(0, 0.05) clamped to [0,1]. With
/// per-coordinate noise that small, margins ≥ 1 are comfortably linearly
/// separable. The test split holds max(1, per_class/6) examples per class.
pub fn gen_synthetic_images(
    classes: usize,
    per_class: usize,
    c: usize,
    h: usize,
    w: usize,
    margin: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if classes < 2 {
        return Err(Error::Validation("need at least 2 classes".to_string()));
    }
    if per_class == 0 {
        return Err(Error::Validation("need at least 1 example per class".to_string()));
    }
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(Error::Validation(format!(
            "margin must be finite and ≥ 0, got {}",
            margin
        )));
    }
    let dim = c * h * w;
    if dim < classes {
        return Err(Error::Validation(format!(
            "{} pixels cannot encode {} classes",
            dim, classes
        )));
    }
    let block = dim / classes;
    // disjoint blocks: template distance = delta * sqrt(2 * block); the cap
    // keeps lowered blocks above 0 with headroom for noise
    let delta = (margin / (2.0 * block as f64).sqrt()).min(0.3);

    let mut templates = vec![vec![IMAGE_BACKGROUND; dim]; classes];
    for (cls, t) in templates.iter_mut().enumerate() {
        let shift = if cls % 2 == 0 { delta } else { -delta } as f32;
        for v in &mut t[cls * block..(cls + 1) * block] {
            *v += shift;
        }
    }

    let mut gauss = Gauss::new(seed);
    let per_class_test = (per_class / 6).max(1);
    let mut sample_split = |count: usize| -> (Vec<f32>, Vec<u32>) {
        let mut pixels = Vec::with_capacity(classes * count * dim);
        let mut labels = Vec::with_capacity(classes * count);
        for (cls, template) in templates.iter().enumerate() {
            for _ in 0..count {
                for &tv in template {
                    let v = tv as f64 + IMAGE_NOISE_SIGMA * gauss.next();
                    pixels.push(v.clamp(0.0, 1.0) as f32);
                }
                labels.push(cls as u32);
            }
        }
        (pixels, labels)
    };

    let (train_pixels, train_labels) = sample_split(per_class);
    let (test_pixels, test_labels) = sample_split(per_class_test);
    Ok((
        Dataset::from_images(c, h, w, train_pixels, train_labels, classes)?,
        Dataset::from_images(c, h, w, test_pixels, test_labels, classes)?,
    ))
}

/// Raw labeled sentences before vocabulary mapping.
#[derive(Clone, Debug, PartialEq)]
pub struct TextCorpus {
    pub texts: Vec<String>,
    pub labels: Vec<u32>,
}

impl TextCorpus {
    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }
}

/// Synthetic sentences with per-class word pools plus shared filler words.
/// The first two words always come from the class pool so every sentence
/// carries signal; the rest mix pool and filler words.
pub fn gen_synthetic_text(
    classes: usize,
    per_class: usize,
    seed: u64,
) -> Result<(TextCorpus, TextCorpus)> {
    if classes < 2 {
        return Err(Error::Validation("need at least 2 classes".to_string()));
    }
    if per_class == 0 {
        return Err(Error::Validation("need at least 1 sentence per class".to_string()));
    }
    const POOL: usize = 24;
    const FILLERS: usize = 48;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_class_test = (per_class / 6).max(1);
    let sample_split = |rng: &mut ChaCha8Rng, count: usize| -> TextCorpus {
        let mut texts = Vec::with_capacity(classes * count);
        let mut labels = Vec::with_capacity(classes * count);
        for cls in 0..classes {
            for _ in 0..count {
                let len = rng.gen_range(6..=12);
                let mut words = Vec::with_capacity(len);
                for pos in 0..len {
                    if pos < 2 || rng.gen_bool(0.5) {
                        words.push(format!("c{}w{}", cls, rng.gen_range(0..POOL)));
                    } else {
                        words.push(format!("f{}", rng.gen_range(0..FILLERS)));
                    }
                }
                texts.push(words.join(" "));
                labels.push(cls as u32);
            }
        }
        TextCorpus { texts, labels }
    };
    let train = sample_split(&mut rng, per_class);
    let test = sample_split(&mut rng, per_class_test);
    Ok((train, test))
}

/// Token-to-id map with fixed reserved rows: pad 0, unknown 1.
#[derive(Clone, Debug, PartialEq)]
pub struct VocabMap {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl VocabMap {
    /// Corpus tokens in first-occurrence order after the reserved ids;
    /// `extra` tokens (e.g. a trigger word) are appended when absent.
    pub fn build(corpus: &TextCorpus, extra: &[&str]) -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        v.insert("<pad>");
        v.insert("<unk>");
        for text in &corpus.texts {
            for tok in tokenize(text) {
                v.insert(&tok);
            }
        }
        for tok in extra {
            v.insert(tok);
        }
        v
    }

    fn insert(&mut self, token: &str) {
        if !self.index.contains_key(token) {
            self.index.insert(token.to_string(), self.tokens.len() as u32);
            self.tokens.push(token.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for tok in &self.tokens {
            writeln!(w, "{}", tok)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for (lineno, line) in r.lines().enumerate() {
            let tok = line?;
            if v.index.contains_key(&tok) {
                return Err(Error::Format(format!(
                    "{}: duplicate token {:?} at line {}",
                    path.display(),
                    tok,
                    lineno + 1
                )));
            }
            v.insert(&tok);
        }
        if v.len() < 2 {
            return Err(Error::Format(format!(
                "{}: vocabulary must hold at least the pad and unknown ids",
                path.display()
            )));
        }
        Ok(v)
    }
}

fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(|t| t.to_lowercase())
}

/// Map a corpus onto fixed-length id rows: lowercase whitespace tokens,
/// unknowns to id 1, padded/truncated to `max_len`.
pub fn encode_corpus(corpus: &TextCorpus, vocab: &VocabMap, max_len: usize) -> Result<Dataset> {
    if corpus.is_empty() {
        return Err(Error::Validation("empty corpus".to_string()));
    }
    if max_len == 0 {
        return Err(Error::Validation("max length must be ≥ 1".to_string()));
    }
    let num_classes = corpus.labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut ids = Vec::with_capacity(corpus.len() * max_len);
    for text in &corpus.texts {
        let mut row: Vec<u32> = tokenize(text)
            .take(max_len)
            .map(|tok| vocab.id(&tok).unwrap_or(UNK_ID))
            .collect();
        row.resize(max_len, PAD_ID);
        ids.extend_from_slice(&row);
    }
    Dataset::from_tokens(max_len, vocab.len(), ids, corpus.labels.clone(), num_classes)
}

/// CSV rows of "label,text"; a "label,text" header is written for clarity
/// and tolerated on load.
pub fn save_text_csv(corpus: &TextCorpus, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "label,text")?;
    for (text, label) in corpus.texts.iter().zip(&corpus.labels) {
        writeln!(w, "{},{}", label, text)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_text_csv(path: &Path) -> Result<TextCorpus> {
    let r = BufReader::new(File::open(path)?);
    let mut texts = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let (label_str, text) = line.split_once(',').ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: lineno,
            msg: "expected \"label,text\"".to_string(),
        })?;
        match label_str.parse::<u32>() {
            Ok(label) => {
                labels.push(label);
                texts.push(text.to_string());
            }
            Err(_) if lineno == 1 => continue, // header row
            Err(_) => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: lineno,
                    msg: format!("label {:?} is not a nonnegative integer", label_str),
                })
            }
        }
    }
    Ok(TextCorpus { texts, labels })
}

/// Binary image dataset: magic, version, kind byte, count, shared dims,
/// class count, then per example raw little-endian pixels and a u32 label.
pub fn save_image_bin(d: &Dataset, path: &Path) -> Result<()> {
    let (c, h, w) = match d.kind() {
        DatasetKind::Image { c, h, w } => (c, h, w),
        DatasetKind::Text { .. } => {
            return Err(Error::Validation(
                "text datasets are stored as CSV, not binary".to_string(),
            ))
        }
    };
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&DATASET_MAGIC)?;
    bytes::write_u16(&mut out, DATASET_FORMAT_VERSION)?;
    bytes::write_u8(&mut out, KIND_IMAGE)?;
    bytes::write_u32(&mut out, d.len() as u32)?;
    bytes::write_u8(&mut out, 3)?;
    for dim in [c, h, w] {
        bytes::write_u32(&mut out, dim as u32)?;
    }
    bytes::write_u32(&mut out, d.num_classes() as u32)?;
    for i in 0..d.len() {
        bytes::write_f32s(&mut out, d.pixels(i)?)?;
        bytes::write_u32(&mut out, d.label(i))?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_image_bin(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    let what = path.display().to_string();
    bytes::read_magic(&mut r, DATASET_MAGIC, &what)?;
    let version = bytes::read_u16(&mut r, &what)?;
    if version != DATASET_FORMAT_VERSION {
        return Err(Error::Version {
            expected: DATASET_FORMAT_VERSION,
            found: version,
        });
    }
    let kind = bytes::read_u8(&mut r, &what)?;
    if kind != KIND_IMAGE {
        return Err(Error::Format(format!("{}: unknown dataset kind {}", what, kind)));
    }
    let count = bytes::read_u32(&mut r, &what)? as usize;
    let rank = bytes::read_u8(&mut r, &what)?;
    if rank != 3 {
        return Err(Error::Format(format!(
            "{}: image examples must have rank 3, got {}",
            what, rank
        )));
    }
    let c = bytes::read_u32(&mut r, &what)? as usize;
    let h = bytes::read_u32(&mut r, &what)? as usize;
    let w = bytes::read_u32(&mut r, &what)? as usize;
    let k = bytes::read_u32(&mut r, &what)? as usize;
    let dim = c * h * w;
    let mut pixels = Vec::with_capacity(count * dim);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let ctx = format!("{} (example {} of {})", what, i + 1, count);
        pixels.extend_from_slice(&bytes::read_f32s(&mut r, dim, &ctx)?);
        labels.push(bytes::read_u32(&mut r, &ctx)?);
    }
    bytes::expect_eof(&mut r, &what)?;
    Dataset::from_images(c, h, w, pixels, labels, k)
}
