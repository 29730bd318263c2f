//! Self-describing checkpoint archive.
//!
//! ```text
//! b"ALBEDOCK" | format u32 LE | header length u64 LE | header (JSON) | tensor blob
//! ```
//!
//! The header holds both network configs, the training config, epoch,
//! loss history, optimizer step counts and an index of tensors
//! (`name`, `shape`, byte `offset` into the blob). The blob is a run of
//! little-endian `f32`. Tensor names are `<network>/<param>` for weights and
//! `<network>/adam_m/<param>`, `<network>/adam_v/<param>` for optimizer moments.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::discriminator::DiscriminatorConfig;
use super::generator::{Generator, GeneratorConfig};
use super::params::{Adam, AdamConfig, ParamSet};
use super::train::{EpochLosses, ModelBundle, TrainConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ALBEDOCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerState {
    config: AdamConfig,
    step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    generator: GeneratorConfig,
    discriminator: DiscriminatorConfig,
    image_size: usize,
    train: TrainConfig,
    epoch: usize,
    history: Vec<EpochLosses>,
    generator_optimizer: OptimizerState,
    discriminator_optimizer: OptimizerState,
    tensors: Vec<TensorEntry>,
}

struct BlobWriter {
    entries: Vec<TensorEntry>,
    blob: Vec<u8>,
}

impl BlobWriter {
    fn push(&mut self, name: String, shape: &[usize], data: &[f32]) {
        self.entries.push(TensorEntry {
            name,
            shape: shape.to_vec(),
            offset: self.blob.len() as u64,
        });
        for v in data {
            self.blob.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn network(&mut self, prefix: &str, params: &ParamSet<f32>, opt: &Adam) {
        for p in params.entries() {
            self.push(format!("{prefix}/{}", p.name), &p.shape, &p.data);
        }
        for (p, m) in params.entries().iter().zip(&opt.first_moment) {
            self.push(format!("{prefix}/adam_m/{}", p.name), &p.shape, m);
        }
        for (p, v) in params.entries().iter().zip(&opt.second_moment) {
            self.push(format!("{prefix}/adam_v/{}", p.name), &p.shape, v);
        }
    }
}

pub fn to_bytes(bundle: &ModelBundle) -> Vec<u8> {
    let mut blob = BlobWriter {
        entries: Vec::new(),
        blob: Vec::new(),
    };
    blob.network("generator", &bundle.generator.params, &bundle.generator_opt);
    blob.network("discriminator", &bundle.discriminator.params, &bundle.discriminator_opt);
    let header = Header {
        generator: bundle.generator.config,
        discriminator: bundle.discriminator.config,
        image_size: bundle.discriminator.image_size,
        train: bundle.train_config,
        epoch: bundle.epoch,
        history: bundle.history.clone(),
        generator_optimizer: OptimizerState {
            config: bundle.generator_opt.config,
            step: bundle.generator_opt.step,
        },
        discriminator_optimizer: OptimizerState {
            config: bundle.discriminator_opt.config,
            step: bundle.discriminator_opt.step,
        },
        tensors: blob.entries,
    };
    let header_bytes = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + header_bytes.len() + blob.blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&blob.blob);
    out
}

pub fn save(bundle: &ModelBundle, path: &Path) -> Result<()> {
    let bytes = to_bytes(bundle);
    let tmp = path.with_extension("ckpt.tmp");
    fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelBundle> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(reason) => Error::Checkpoint(format!("{}: {reason}", path.display())),
        other => other,
    })
}

fn corrupt(reason: impl Into<String>) -> Error {
    Error::Checkpoint(reason.into())
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelBundle> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint archive"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported format version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = 20usize
        .checked_add(header_len)
        .filter(|end| *end <= bytes.len())
        .ok_or_else(|| corrupt("truncated header"))?;
    let header: Header =
        serde_json::from_slice(&bytes[20..header_end]).map_err(|e| corrupt(format!("bad header: {e}")))?;
    let blob = &bytes[header_end..];

    let read = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
        let entry = header
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| corrupt(format!("missing tensor {name}")))?;
        if entry.shape != shape {
            return Err(corrupt(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                entry.shape
            )));
        }
        let len = shape.iter().product::<usize>() * 4;
        let start = entry.offset as usize;
        let chunk = blob
            .get(start..start + len)
            .ok_or_else(|| corrupt(format!("tensor {name} runs past the end of the archive")))?;
        Ok(chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect())
    };
    let restore = |prefix: &str, params: &mut ParamSet<f32>, opt: &mut Adam| -> Result<()> {
        for (i, p) in params.entries_mut().iter_mut().enumerate() {
            p.data = read(&format!("{prefix}/{}", p.name), &p.shape)?;
            opt.first_moment[i] = read(&format!("{prefix}/adam_m/{}", p.name), &p.shape)?;
            opt.second_moment[i] = read(&format!("{prefix}/adam_v/{}", p.name), &p.shape)?;
        }
        Ok(())
    };

    let mut bundle = ModelBundle::new(header.generator, header.discriminator, header.train)?;
    if header.image_size != header.generator.image_size {
        return Err(corrupt("discriminator and generator image sizes disagree"));
    }
    restore("generator", &mut bundle.generator.params, &mut bundle.generator_opt)?;
    restore(
        "discriminator",
        &mut bundle.discriminator.params,
        &mut bundle.discriminator_opt,
    )?;
    bundle.generator_opt.config = header.generator_optimizer.config;
    bundle.generator_opt.step = header.generator_optimizer.step;
    bundle.discriminator_opt.config = header.discriminator_optimizer.config;
    bundle.discriminator_opt.step = header.discriminator_optimizer.step;
    bundle.epoch = header.epoch;
    bundle.history = header.history;
    Ok(bundle)
}

/// Loads only what inference needs.
pub fn load_generator(path: &Path) -> Result<Generator<f32>> {
    Ok(load(path)?.generator)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::train::{train_step, PairBatch};
    use crate::image::LinearImage;

    fn bundle() -> ModelBundle {
        ModelBundle::new(
            GeneratorConfig {
                image_size: 32,
                base_channels: 4,
                depth: 3,
            },
            DiscriminatorConfig {
                base_channels: 4,
                n_layers: 2,
            },
            TrainConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_after_a_step() {
        let mut b = bundle();
        let lit = LinearImage::filled(32, 32, [0.2, 0.4, 0.6]);
        let alb = LinearImage::filled(32, 32, [0.3, 0.5, 0.7]);
        train_step(&mut b, &PairBatch::from_images(&[(&lit, &alb)])).unwrap();
        b.epoch = 1;
        let bytes = to_bytes(&b);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, b);
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        assert!(from_bytes(b"nope").is_err());
        let bytes = to_bytes(&bundle());
        assert!(from_bytes(&bytes[..bytes.len() - 4]).is_err());
        let mut wrong_version = bytes.clone();
        wrong_version[8] = 9;
        assert!(from_bytes(&wrong_version).is_err());
    }
}
