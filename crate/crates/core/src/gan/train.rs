//! Alternating adversarial training.
//!
//! Every step first updates the discriminator on real pairs
//! `(lit, albedo)` and fake pairs `(lit, G(lit))` with the generator output
//! held constant, then updates the generator on
//! `λ_adv · g_adv_loss + λ_rec · mean|G(lit) − albedo|` with fake logits
//! recomputed by the freshly updated discriminator. Both networks use Adam
//! (β1 = 0.5, β2 = 0.999, ε = 1e-8).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint;
use super::discriminator::{Discriminator, DiscriminatorConfig};
use super::generator::{Dropout, Generator, GeneratorConfig};
use super::loss::{self, PairRole};
use super::params::{accumulate, Adam, AdamConfig};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::image::{AlbedoImage, LitImage};
use crate::seed;

pub const LOSS_LOG: &str = "losses.jsonl";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adversarial_weight: f64,
    pub reconstruction_weight: f64,
    pub seed: u64,
    pub checkpoint_interval: usize,
    #[serde(default)]
    pub augmentation: Augmentation,
    /// Generator decoder dropout rate during training.
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

pub const DEFAULT_DROPOUT: f64 = 0.5;

fn default_dropout() -> f64 {
    DEFAULT_DROPOUT
}

/// Label-agnostic symmetries applied jointly to each training pair.
///
/// Shading acts per pixel and per channel, so mirroring/rotating the image
/// plane and permuting colour channels of a (lit, albedo) pair yields another
/// valid pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Augmentation {
    None,
    /// The 8 flips and quarter-turns of the square.
    Dihedral,
    /// Dihedral moves combined with the 6 channel orders.
    #[default]
    Full,
}

impl Augmentation {
    pub fn variants(self) -> u32 {
        match self {
            Augmentation::None => 1,
            Augmentation::Dihedral => 8,
            Augmentation::Full => 48,
        }
    }
}

impl std::str::FromStr for Augmentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Augmentation::None),
            "dihedral" => Ok(Augmentation::Dihedral),
            "full" => Ok(Augmentation::Full),
            other => Err(Error::validation("augmentation", format!("{other:?} is not none, dihedral or full"))),
        }
    }
}

const CHANNEL_ORDERS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Applies symmetry `code` (`0..48`) to a square 3-channel tensor. Bits 0–2
/// select x-flip, y-flip and transpose; `code / 8` picks the channel order.
pub fn apply_symmetry(t: &Tensor<f32>, code: u32) -> Tensor<f32> {
    debug_assert_eq!(t.h, t.w);
    let order = CHANNEL_ORDERS[(code / 8) as usize % 6];
    let (flip_x, flip_y, transpose) = (code & 1 != 0, code & 2 != 0, code & 4 != 0);
    let n = t.w;
    let plane = t.plane();
    let mut out = Tensor::zeros(t.c, t.h, t.w);
    for (c, &src_c) in order.iter().enumerate().take(t.c) {
        let src = &t.data[src_c * plane..(src_c + 1) * plane];
        let dst = &mut out.data[c * plane..(c + 1) * plane];
        for y in 0..n {
            for x in 0..n {
                let (mut sx, mut sy) = (x, y);
                if flip_x {
                    sx = n - 1 - sx;
                }
                if flip_y {
                    sy = n - 1 - sy;
                }
                if transpose {
                    std::mem::swap(&mut sx, &mut sy);
                }
                dst[y * n + x] = src[sy * n + sx];
            }
        }
    }
    out
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 4,
            learning_rate: 2e-4,
            adversarial_weight: 1.0,
            reconstruction_weight: 100.0,
            seed: 0,
            checkpoint_interval: 10,
            augmentation: Augmentation::default(),
            dropout: DEFAULT_DROPOUT,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate", "must be positive and finite"));
        }
        if !(self.adversarial_weight >= 0.0 && self.adversarial_weight.is_finite()) {
            return Err(Error::validation("adversarial_weight", "must be finite and non-negative"));
        }
        if !(self.reconstruction_weight >= 0.0 && self.reconstruction_weight.is_finite()) {
            return Err(Error::validation("reconstruction_weight", "must be finite and non-negative"));
        }
        if self.adversarial_weight + self.reconstruction_weight <= 0.0 {
            return Err(Error::validation(
                "adversarial_weight",
                "adversarial and reconstruction weights cannot both be zero",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation("dropout", format!("{} outside [0, 1)", self.dropout)));
        }
        if self.checkpoint_interval == 0 {
            return Err(Error::validation("checkpoint_interval", "must be at least 1"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub d_loss: f64,
    pub g_adv: f64,
    pub rec: f64,
}

/// One line of the loss log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_adv: f64,
    pub rec: f64,
}

/// Generator, discriminator, optimizer state and training progress.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub train_config: TrainConfig,
    pub generator_opt: Adam,
    pub discriminator_opt: Adam,
    pub epoch: usize,
    pub history: Vec<EpochLosses>,
}

impl ModelBundle {
    pub fn new(gen_cfg: GeneratorConfig, disc_cfg: DiscriminatorConfig, train_cfg: TrainConfig) -> Result<Self> {
        train_cfg.validate()?;
        let generator = Generator::new(gen_cfg, train_cfg.seed)?;
        let discriminator = Discriminator::new(disc_cfg, gen_cfg.image_size, train_cfg.seed)?;
        let generator_opt = Adam::new(train_cfg.adam(), &generator.params);
        let discriminator_opt = Adam::new(train_cfg.adam(), &discriminator.params);
        Ok(Self {
            generator,
            discriminator,
            train_config: train_cfg,
            generator_opt,
            discriminator_opt,
            epoch: 0,
            history: Vec::new(),
        })
    }

    pub fn image_size(&self) -> usize {
        self.generator.config.image_size
    }

    fn history_snapshot(&self) -> String {
        let tail: Vec<String> = self
            .history
            .iter()
            .rev()
            .take(5)
            .rev()
            .map(|e| format!("epoch {}: d={:.6} g_adv={:.6} rec={:.6}", e.epoch, e.d_loss, e.g_adv, e.rec))
            .collect();
        if tail.is_empty() {
            "no completed epochs".into()
        } else {
            tail.join("; ")
        }
    }
}

/// Lit inputs and, for training, their ground-truth albedo.
#[derive(Debug, Clone)]
pub struct PairBatch {
    pub lit: Vec<Tensor<f32>>,
    pub target_albedo: Option<Vec<Tensor<f32>>>,
}

impl PairBatch {
    pub fn from_images(pairs: &[(&LitImage, &AlbedoImage)]) -> Self {
        Self {
            lit: pairs.iter().map(|(l, _)| Tensor::from_image(l)).collect(),
            target_albedo: Some(pairs.iter().map(|(_, a)| Tensor::from_image(a)).collect()),
        }
    }

    pub fn validate(&self, image_size: usize) -> Result<()> {
        if self.lit.is_empty() {
            return Err(Error::validation("batch", "must contain at least one pair"));
        }
        let expect = (3, image_size, image_size);
        let mut all = self.lit.iter().chain(self.target_albedo.iter().flatten());
        if let Some(t) = all.find(|t| t.shape() != expect) {
            return Err(Error::Shape(format!("batch tensor {:?} does not match {expect:?}", t.shape())));
        }
        if let Some(targets) = &self.target_albedo {
            if targets.len() != self.lit.len() {
                return Err(Error::Shape(format!(
                    "{} lit images but {} targets",
                    self.lit.len(),
                    targets.len()
                )));
            }
        }
        Ok(())
    }
}

fn scale(t: &mut Tensor<f32>, s: f32) {
    for v in &mut t.data {
        *v *= s;
    }
}

fn logits_tensor(like: &Tensor<f32>, data: Vec<f32>) -> Tensor<f32> {
    Tensor::from_vec(like.c, like.h, like.w, data)
}

pub fn train_step(bundle: &mut ModelBundle, batch: &PairBatch) -> Result<StepLosses> {
    batch.validate(bundle.image_size())?;
    let targets = batch
        .target_albedo
        .as_ref()
        .ok_or_else(|| Error::validation("target_albedo", "training needs ground-truth albedo"))?;
    let cfg = bundle.train_config;
    let n = batch.lit.len();
    let inv_n = 1.0 / n as f32;

    let step_seed = seed::mix_tagged(cfg.seed, "dropout", bundle.generator_opt.step);
    let generated: Vec<_> = batch
        .lit
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let dropout = Dropout {
                rate: cfg.dropout,
                seed: seed::mix(step_seed, i as u64),
            };
            bundle.generator.forward_train(x, Some(dropout))
        })
        .collect::<Result<_>>()?;

    // Discriminator update; generator outputs are constants here.
    let disc = &bundle.discriminator;
    let per_sample: Vec<(f64, Vec<Vec<f32>>)> = batch
        .lit
        .par_iter()
        .zip(targets.par_iter())
        .zip(generated.par_iter())
        .map(|((lit, target), (fake, _))| {
            let mut grads = disc.params.zeros_like();
            let (real_logits, real_tape) = disc.forward_train(lit, target)?;
            let (real_loss, mut d_real) = loss::bce(&real_logits.data, PairRole::Real)?;
            d_real.iter_mut().for_each(|g| *g *= inv_n);
            disc.backward(&real_tape, &logits_tensor(&real_logits, d_real), &mut grads, false);
            let (fake_logits, fake_tape) = disc.forward_train(lit, fake)?;
            let (fake_loss, mut d_fake) = loss::bce(&fake_logits.data, PairRole::Fake)?;
            d_fake.iter_mut().for_each(|g| *g *= inv_n);
            disc.backward(&fake_tape, &logits_tensor(&fake_logits, d_fake), &mut grads, false);
            Ok((real_loss + fake_loss, grads))
        })
        .collect::<Result<_>>()?;
    let mut d_grads = disc.params.zeros_like();
    let mut d_loss = 0.0;
    for (l, g) in &per_sample {
        d_loss += l / n as f64;
        accumulate(&mut d_grads, g);
    }
    drop(per_sample);

    // Generator losses are evaluated before any parameter changes so a
    // non-finite step leaves the bundle untouched.
    let disc_after = {
        let mut d = bundle.discriminator.clone();
        let mut opt = bundle.discriminator_opt.clone();
        opt.update(&mut d.params, &d_grads);
        (d, opt)
    };
    let disc_new = &disc_after.0;
    let generator = &bundle.generator;
    let len = 3 * bundle.image_size() * bundle.image_size();
    let per_sample: Vec<(f64, f64, Vec<Vec<f32>>)> = targets
        .par_iter()
        .zip(generated.par_iter())
        .zip(batch.lit.par_iter())
        .map(|((target, (fake, tape)), lit)| {
            let (fake_logits, d_tape) = disc_new.forward_train(lit, fake)?;
            let (g_adv, mut d_logits) = loss::bce(&fake_logits.data, PairRole::Real)?;
            let (rec, d_rec) = loss::l1(&fake.data, &target.data, n * len);
            let mut d_fake = Tensor::from_vec(3, fake.h, fake.w, d_rec);
            scale(&mut d_fake, cfg.reconstruction_weight as f32);
            if cfg.adversarial_weight > 0.0 {
                let w = cfg.adversarial_weight as f32 * inv_n;
                d_logits.iter_mut().for_each(|g| *g *= w);
                let mut scratch = disc_new.params.zeros_like();
                let d_cand = disc_new
                    .backward(&d_tape, &logits_tensor(&fake_logits, d_logits), &mut scratch, true)
                    .expect("input gradient requested");
                d_fake.add_assign(&d_cand);
            }
            let mut grads = generator.params.zeros_like();
            generator.backward(tape, &d_fake, &mut grads);
            Ok((g_adv, rec, grads))
        })
        .collect::<Result<_>>()?;
    let mut g_grads = generator.params.zeros_like();
    let (mut g_adv, mut rec) = (0.0, 0.0);
    for (a, r, g) in &per_sample {
        g_adv += a / n as f64;
        rec += r;
        accumulate(&mut g_grads, g);
    }

    let losses = StepLosses { d_loss, g_adv, rec };
    if !(d_loss.is_finite() && g_adv.is_finite() && rec.is_finite()) {
        return Err(Error::NonFinite(format!(
            "step losses d={d_loss} g_adv={g_adv} rec={rec} at epoch {}; history: {}",
            bundle.epoch,
            bundle.history_snapshot()
        )));
    }
    (bundle.discriminator, bundle.discriminator_opt) = disc_after;
    bundle.generator_opt.update(&mut bundle.generator.params, &g_grads);
    Ok(losses)
}

/// Training progress report handed to the optional observer after each epoch.
pub type EpochObserver<'a> = &'a mut dyn FnMut(&EpochLosses);

pub struct TrainRun<'a> {
    pub out_dir: PathBuf,
    pub resume: bool,
    pub observer: Option<EpochObserver<'a>>,
}

impl<'a> TrainRun<'a> {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            resume: false,
            observer: None,
        }
    }
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("checkpoint_epoch_{epoch:04}.ckpt")
}

pub fn write_loss_log(path: &Path, history: &[EpochLosses]) -> Result<()> {
    let mut out = Vec::new();
    for e in history {
        serde_json::to_writer(&mut out, e).expect("epoch losses serialize");
        out.push(b'\n');
    }
    let tmp = path.with_extension("jsonl.tmp");
    fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_loss_log(path: &Path) -> Result<Vec<EpochLosses>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Runs the epoch loop from `bundle.epoch` up to the configured epoch count.
///
/// With `run.resume` set and a `latest.ckpt` present in the output
/// directory, that checkpoint replaces `bundle` first. Its configuration
/// must match.
pub fn train(
    mut bundle: ModelBundle,
    pairs: &[(LitImage, AlbedoImage)],
    mut run: TrainRun<'_>,
) -> Result<ModelBundle> {
    if pairs.is_empty() {
        return Err(Error::validation("train_split", "contains no pairs"));
    }
    let size = bundle.image_size();
    if let Some((i, _)) = pairs
        .iter()
        .enumerate()
        .find(|(_, (l, a))| l.dims() != (size, size) || a.dims() != (size, size))
    {
        return Err(Error::Shape(format!("training pair {i} is not {size}x{size}")));
    }
    fs::create_dir_all(&run.out_dir).map_err(|e| Error::io(&run.out_dir, e))?;
    let latest = run.out_dir.join(LATEST_CHECKPOINT);
    if run.resume && latest.exists() {
        let restored = checkpoint::load(&latest)?;
        if restored.generator.config != bundle.generator.config
            || restored.discriminator.config != bundle.discriminator.config
        {
            return Err(Error::Checkpoint(format!(
                "{} was trained with a different architecture",
                latest.display()
            )));
        }
        let epochs = bundle.train_config.epochs;
        bundle = restored;
        bundle.train_config.epochs = epochs;
        log::info!("resuming from epoch {}", bundle.epoch);
    }
    let cfg = bundle.train_config;
    cfg.validate()?;

    let lit: Vec<Tensor<f32>> = pairs.iter().map(|(l, _)| Tensor::from_image(l)).collect();
    let albedo: Vec<Tensor<f32>> = pairs.iter().map(|(_, a)| Tensor::from_image(a)).collect();
    let log_path = run.out_dir.join(LOSS_LOG);

    while bundle.epoch < cfg.epochs {
        let epoch = bundle.epoch;
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut seed::rng(seed::mix_tagged(cfg.seed, "shuffle", epoch as u64)));
        let mut sums = StepLosses {
            d_loss: 0.0,
            g_adv: 0.0,
            rec: 0.0,
        };
        let mut steps = 0usize;
        let mut aug_rng = seed::rng(seed::mix_tagged(cfg.seed, "augment", epoch as u64));
        for chunk in order.chunks(cfg.batch_size) {
            let codes: Vec<u32> = chunk
                .iter()
                .map(|_| aug_rng.random_range(0..cfg.augmentation.variants()))
                .collect();
            let batch = PairBatch {
                lit: chunk.iter().zip(&codes).map(|(&i, &k)| apply_symmetry(&lit[i], k)).collect(),
                target_albedo: Some(chunk.iter().zip(&codes).map(|(&i, &k)| apply_symmetry(&albedo[i], k)).collect()),
            };
            let step = train_step(&mut bundle, &batch)?;
            sums.d_loss += step.d_loss;
            sums.g_adv += step.g_adv;
            sums.rec += step.rec;
            steps += 1;
        }
        let record = EpochLosses {
            epoch: epoch + 1,
            d_loss: sums.d_loss / steps as f64,
            g_adv: sums.g_adv / steps as f64,
            rec: sums.rec / steps as f64,
        };
        bundle.history.push(record);
        bundle.epoch = epoch + 1;
        log::info!(
            "epoch {}/{}: d_loss={:.4} g_adv={:.4} rec={:.4}",
            record.epoch,
            cfg.epochs,
            record.d_loss,
            record.g_adv,
            record.rec
        );
        write_loss_log(&log_path, &bundle.history)?;
        if bundle.epoch % cfg.checkpoint_interval == 0 || bundle.epoch == cfg.epochs {
            checkpoint::save(&bundle, &run.out_dir.join(checkpoint_name(bundle.epoch)))?;
            checkpoint::save(&bundle, &latest)?;
        }
        if let Some(observer) = run.observer.as_mut() {
            observer(&record);
        }
    }
    Ok(bundle)
}

/// Translates one lit image. Inputs of another size are resampled
/// bilinearly to the generator resolution; the output stays at that resolution.
pub fn infer(generator: &Generator<f32>, image: &LitImage) -> Result<AlbedoImage> {
    let s = generator.config.image_size;
    let input = if image.dims() == (s, s) {
        Tensor::from_image(image)
    } else {
        Tensor::from_image(&image.resized(s, s))
    };
    Ok(generator.forward(&input)?.to_image())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::LinearImage;

    fn toy_pairs(count: usize, size: usize) -> Vec<(LitImage, AlbedoImage)> {
        (0..count)
            .map(|k| {
                let albedo = LinearImage::from_fn(size, size, |x, y| {
                    let v = ((x / 4 + y / 4 + k) % 3) as f32 / 3.0 + 0.1;
                    [v, 1.0 - v, 0.5 * v]
                });
                let mut lit = albedo.clone();
                for v in lit.data_mut() {
                    *v = *v / (1.0 + *v);
                }
                (lit, albedo)
            })
            .collect()
    }

    fn small_bundle(train: TrainConfig) -> ModelBundle {
        ModelBundle::new(
            GeneratorConfig {
                image_size: 32,
                base_channels: 8,
                depth: 3,
            },
            DiscriminatorConfig {
                base_channels: 8,
                n_layers: 3,
            },
            train,
        )
        .unwrap()
    }

    #[test]
    fn supervised_regime_reduces_reconstruction_loss() {
        let pairs = toy_pairs(4, 32);
        let refs: Vec<_> = pairs.iter().map(|(l, a)| (l, a)).collect();
        let batch = PairBatch::from_images(&refs);
        let mut bundle = small_bundle(TrainConfig {
            adversarial_weight: 0.0,
            reconstruction_weight: 1.0,
            learning_rate: 2e-3,
            ..TrainConfig::default()
        });
        let shapes: Vec<Vec<usize>> = bundle.generator.params.entries().iter().map(|p| p.shape.clone()).collect();
        let first = train_step(&mut bundle, &batch).unwrap().rec;
        let mut last = first;
        for _ in 0..49 {
            last = train_step(&mut bundle, &batch).unwrap().rec;
        }
        assert!(last < first * 0.8, "{first} -> {last}");
        let after: Vec<Vec<usize>> = bundle.generator.params.entries().iter().map(|p| p.shape.clone()).collect();
        assert_eq!(shapes, after);
    }

    #[test]
    fn pure_adversarial_regime_runs() {
        let pairs = toy_pairs(2, 32);
        let refs: Vec<_> = pairs.iter().map(|(l, a)| (l, a)).collect();
        let mut bundle = small_bundle(TrainConfig {
            adversarial_weight: 1.0,
            reconstruction_weight: 0.0,
            ..TrainConfig::default()
        });
        let before = bundle.generator.params.clone();
        let step = train_step(&mut bundle, &PairBatch::from_images(&refs)).unwrap();
        assert!(step.d_loss.is_finite() && step.g_adv.is_finite());
        assert_ne!(before, bundle.generator.params);
    }

    #[test]
    fn missing_targets_are_rejected() {
        let mut bundle = small_bundle(TrainConfig::default());
        let batch = PairBatch {
            lit: vec![Tensor::zeros(3, 32, 32)],
            target_albedo: None,
        };
        assert!(train_step(&mut bundle, &batch).is_err());
        let wrong = PairBatch {
            lit: vec![Tensor::zeros(3, 16, 16)],
            target_albedo: Some(vec![Tensor::zeros(3, 16, 16)]),
        };
        assert!(matches!(train_step(&mut bundle, &wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            adversarial_weight: 0.0,
            reconstruction_weight: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { adversarial_weight: -1.0, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn zero_epochs_returns_untouched_bundle() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = small_bundle(TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        });
        let out = train(bundle.clone(), &toy_pairs(2, 32), TrainRun::new(dir.path())).unwrap();
        assert_eq!(out, bundle);
    }

    #[test]
    fn resume_continues_epoch_counter() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = toy_pairs(3, 32);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            checkpoint_interval: 1,
            ..TrainConfig::default()
        };
        let straight = train(small_bundle(TrainConfig { epochs: 3, ..cfg }), &pairs, TrainRun::new(dir.path().join("a"))).unwrap();

        let first = train(small_bundle(cfg), &pairs, TrainRun::new(dir.path().join("b"))).unwrap();
        assert_eq!(first.epoch, 2);
        let mut run = TrainRun::new(dir.path().join("b"));
        run.resume = true;
        let mut seen = Vec::new();
        let mut observer = |e: &EpochLosses| seen.push(e.epoch);
        run.observer = Some(&mut observer);
        let resumed = train(small_bundle(TrainConfig { epochs: 3, ..cfg }), &pairs, run).unwrap();
        assert_eq!(seen, vec![3]);
        assert_eq!(resumed.epoch, 3);
        assert_eq!(resumed.history, straight.history);
        assert_eq!(resumed.generator.params, straight.generator.params);
        let log = read_loss_log(&dir.path().join("b").join(LOSS_LOG)).unwrap();
        assert_eq!(log, straight.history);
    }

    #[test]
    fn infer_resamples_to_config_size() {
        let bundle = small_bundle(TrainConfig::default());
        let img = LinearImage::filled(50, 20, [0.3, 0.6, 0.9]);
        let out = infer(&bundle.generator, &img).unwrap();
        assert_eq!(out.dims(), (32, 32));
        assert!(out.in_gamut());
        assert_eq!(out, infer(&bundle.generator, &img).unwrap());
    }

    #[test]
    fn symmetries_are_pixel_permutations() {
        let t = Tensor::from_vec(3, 4, 4, (0..48).map(|v| v as f32).collect());
        assert_eq!(apply_symmetry(&t, 0), t);
        let mut seen = std::collections::HashSet::new();
        for code in 0..48 {
            let s = apply_symmetry(&t, code);
            let mut sorted = s.data.clone();
            sorted.sort_by(f32::total_cmp);
            assert_eq!(sorted, t.data);
            assert!(seen.insert(s.data.iter().map(|v| *v as u32).collect::<Vec<_>>()));
        }
        // x-flip is an involution; the channel order moves whole planes.
        assert_eq!(apply_symmetry(&apply_symmetry(&t, 1), 1), t);
        let swapped = apply_symmetry(&t, 8);
        assert_eq!(swapped.channel(1), t.channel(2));
        assert_eq!(swapped.channel(0), t.channel(0));
    }
}
