//! Binary model checkpoints.
//!
//! Layout: magic "AWPB", u16 version, length-prefixed UTF-8 model spec
//! (key=value lines), u32 tensor count, then per tensor a u16-length name,
//! u8 rank, u32 dims, and raw f32 data. All integers little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::bytes;
use crate::error::{Error, Result};
use crate::models::{Arch, Model, ModelSpec, ParameterSet};
use crate::tensor::Tensor;

const MAGIC: [u8; 4] = *b"AWPB";
pub const FORMAT_VERSION: u16 = 1;

fn spec_to_text(spec: &ModelSpec) -> String {
    let mut lines = Vec::new();
    match &spec.arch {
        Arch::ImageCnn {
            channels,
            height,
            width,
        } => {
            lines.push("kind=image-cnn".to_string());
            lines.push(format!("num_classes={}", spec.num_classes));
            lines.push(format!("channels={}", channels));
            lines.push(format!("height={}", height));
            lines.push(format!("width={}", width));
        }
        Arch::WordCnn {
            vocab_size,
            embed_dim,
            max_len,
            filter_widths,
            filters_per_width,
        } => {
            lines.push("kind=word-cnn".to_string());
            lines.push(format!("num_classes={}", spec.num_classes));
            lines.push(format!("vocab_size={}", vocab_size));
            lines.push(format!("embed_dim={}", embed_dim));
            lines.push(format!("max_len={}", max_len));
            lines.push(format!(
                "filter_widths={}",
                filter_widths
                    .iter()
                    .map(|w| w.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            ));
            lines.push(format!("filters_per_width={}", filters_per_width));
        }
    }
    lines.push(format!("seed={}", spec.seed));
    lines.join("\n")
}

fn spec_from_text(text: &str) -> Result<ModelSpec> {
    let mut fields = std::collections::HashMap::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("model spec line {:?} is not key=value", line)))?;
        if fields.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Format(format!("duplicate model spec key {:?}", k)));
        }
    }
    let mut take = |key: &str| -> Result<String> {
        fields
            .remove(key)
            .ok_or_else(|| Error::Format(format!("model spec is missing key {:?}", key)))
    };
    let num = |key: &str, v: String| -> Result<usize> {
        v.parse()
            .map_err(|_| Error::Format(format!("model spec key {:?} has bad value {:?}", key, v)))
    };
    let kind = take("kind")?;
    let num_classes = num("num_classes", take("num_classes")?)?;
    let arch = match kind.as_str() {
        "image-cnn" => Arch::ImageCnn {
            channels: num("channels", take("channels")?)?,
            height: num("height", take("height")?)?,
            width: num("width", take("width")?)?,
        },
        "word-cnn" => {
            let widths_raw = take("filter_widths")?;
            let filter_widths = widths_raw
                .split(',')
                .map(|w| num("filter_widths", w.to_string()))
                .collect::<Result<Vec<_>>>()?;
            Arch::WordCnn {
                vocab_size: num("vocab_size", take("vocab_size")?)?,
                embed_dim: num("embed_dim", take("embed_dim")?)?,
                max_len: num("max_len", take("max_len")?)?,
                filter_widths,
                filters_per_width: num("filters_per_width", take("filters_per_width")?)?,
            }
        }
        other => return Err(Error::Format(format!("unknown model kind {:?}", other))),
    };
    let seed: u64 = {
        let v = take("seed")?;
        v.parse()
            .map_err(|_| Error::Format(format!("model spec key \"seed\" has bad value {:?}", v)))?
    };
    if let Some(k) = fields.keys().next() {
        return Err(Error::Format(format!("unknown model spec key {:?}", k)));
    }
    Ok(ModelSpec {
        arch,
        num_classes,
        seed,
    })
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    bytes::write_u16(&mut w, FORMAT_VERSION)?;
    let spec_text = spec_to_text(model.spec());
    bytes::write_u32(&mut w, spec_text.len() as u32)?;
    w.write_all(spec_text.as_bytes())?;
    let entries = model.params().entries();
    bytes::write_u32(&mut w, entries.len() as u32)?;
    for (name, tensor) in entries {
        bytes::write_u16(&mut w, name.len() as u16)?;
        w.write_all(name.as_bytes())?;
        bytes::write_u8(&mut w, tensor.rank() as u8)?;
        for &d in tensor.shape() {
            bytes::write_u32(&mut w, d as u32)?;
        }
        bytes::write_f32s(&mut w, tensor.data())?;
    }
    w.flush()?;
    Ok(())
}

/// Strict load: every tensor must match the spec's template in name, order,
/// and shape, and no bytes may trail the last tensor.
pub fn load(path: &Path) -> Result<Model> {
    let mut r = BufReader::new(File::open(path)?);
    let what = path.display().to_string();
    bytes::read_magic(&mut r, MAGIC, &what)?;
    let version = bytes::read_u16(&mut r, &what)?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let spec_len = bytes::read_u32(&mut r, &what)? as usize;
    if spec_len > 1 << 16 {
        return Err(Error::Format(format!(
            "{}: model spec block of {} bytes is implausible",
            what, spec_len
        )));
    }
    let spec_bytes = bytes::read_bytes(&mut r, spec_len, &what)?;
    let spec_text = String::from_utf8(spec_bytes)
        .map_err(|_| Error::Format(format!("{}: model spec is not UTF-8", what)))?;
    let spec = spec_from_text(&spec_text)?;
    let template = spec.param_template()?;

    let count = bytes::read_u32(&mut r, &what)? as usize;
    if count != template.len() {
        return Err(Error::Format(format!(
            "{}: {} tensors stored, model needs {}",
            what,
            count,
            template.len()
        )));
    }
    let mut entries = Vec::with_capacity(count);
    for (expect_name, expect_shape) in &template {
        let ctx = format!("{} (tensor {:?})", what, expect_name);
        let name_len = bytes::read_u16(&mut r, &ctx)? as usize;
        let name_bytes = bytes::read_bytes(&mut r, name_len, &ctx)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Format(format!("{}: tensor name is not UTF-8", what)))?;
        if &name != expect_name {
            return Err(Error::Format(format!(
                "{}: tensor {:?} where {:?} was expected",
                what, name, expect_name
            )));
        }
        let rank = bytes::read_u8(&mut r, &ctx)? as usize;
        if rank != expect_shape.len() {
            return Err(Error::Format(format!(
                "{}: tensor {:?} has rank {}, expected {}",
                what, name, rank, expect_shape.len()
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(bytes::read_u32(&mut r, &ctx)? as usize);
        }
        if &shape != expect_shape {
            return Err(Error::Format(format!(
                "{}: tensor {:?} has shape {:?}, expected {:?}",
                what, name, shape, expect_shape
            )));
        }
        let len = shape.iter().product();
        let data = bytes::read_f32s(&mut r, len, &ctx)?;
        entries.push((name, Tensor::new(shape, data)?));
    }
    bytes::expect_eof(&mut r, &what)?;
    Model::from_parts(spec, ParameterSet::new(entries)?)
}
