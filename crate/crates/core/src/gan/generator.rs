//! Unet generator.
//!
//! Encoder stage `i` is a 4×4 stride-2 convolution to `base·min(2^i, 8)`
//! channels followed by instance norm (skipped on the first stage and on
//! 1×1 maps) and LeakyReLU(0.2). The decoder mirrors it with 4×4 stride-2
//! transposed convolutions, instance norm and ReLU, concatenating the
//! matching encoder output after every stage. A final transposed
//! convolution maps to three channels and a sigmoid keeps outputs in [0,1].

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{self, Conv, ConvTranspose};
use super::params::ParamSet;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::label_synth;
use crate::seed;

pub const MAX_CHANNEL_MULTIPLIER: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub image_size: usize,
    pub base_channels: usize,
    pub depth: usize,
}

impl GeneratorConfig {
    /// Defaults: 32 base channels, `log2(image_size) − 2` stages.
    pub fn for_size(image_size: usize) -> Self {
        Self {
            image_size,
            base_channels: 32,
            depth: (image_size.max(1).trailing_zeros() as usize).saturating_sub(2),
        }
    }

    pub fn stage_channels(&self, stage: usize) -> usize {
        self.base_channels * (1usize << stage).min(MAX_CHANNEL_MULTIPLIER)
    }

    /// Checks only what the architecture itself needs.
    pub fn validate_structure(&self) -> Result<()> {
        if !self.image_size.is_power_of_two() {
            return Err(Error::validation("image_size", format!("{} is not a power of two", self.image_size)));
        }
        if self.depth < 2 {
            return Err(Error::validation("depth", format!("{} is below the minimum of 2", self.depth)));
        }
        if self.image_size >> self.depth == 0 {
            return Err(Error::validation(
                "depth",
                format!("{} stages shrink a {}-pixel input below 1x1", self.depth, self.image_size),
            ));
        }
        if self.base_channels == 0 {
            return Err(Error::validation("base_channels", "must be positive"));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        label_synth::validate_size("image_size", self.image_size)?;
        self.validate_structure()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T> {
    pub config: GeneratorConfig,
    pub params: ParamSet<T>,
    encoder: Vec<Conv>,
    encoder_norm: Vec<bool>,
    /// `decoder[j]` upsamples to the resolution of encoder stage `j − 1`;
    /// `decoder[0]` produces the image.
    decoder: Vec<ConvTranspose>,
}

/// Activations kept from a training-mode forward pass.
pub struct GeneratorTape<T> {
    enc_cols: Vec<Vec<T>>,
    enc_in_dims: Vec<(usize, usize)>,
    enc_norm: Vec<Option<(Tensor<T>, Vec<T>)>>,
    enc_out: Vec<Tensor<T>>,
    dec_in: Vec<Tensor<T>>,
    dec_norm: Vec<Option<(Tensor<T>, Vec<T>)>>,
    dec_out: Vec<Tensor<T>>,
    dec_mask: Vec<Option<Vec<T>>>,
}

/// Training-time dropout on the outputs of the inner decoder stages
/// (every upsampling block except the image layer). Kept units are scaled
/// by `1 / (1 − rate)`, so evaluation needs no correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub rate: f64,
    pub seed: u64,
}

impl<T: Real> Generator<T> {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self::build(config, seed))
    }

    /// Builds any structurally valid configuration, including sizes below
    /// the dataset minimum. Used for small numerical checks.
    pub fn new_unchecked(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate_structure()?;
        Ok(Self::build(config, seed))
    }

    fn build(config: GeneratorConfig, seed: u64) -> Self {
        let mut rng = seed::rng(seed::mix_tagged(seed, "generator", 0));
        let mut params = ParamSet::default();
        let depth = config.depth;
        let mut encoder = Vec::with_capacity(depth);
        let mut encoder_norm = Vec::with_capacity(depth);
        for i in 0..depth {
            let cin = if i == 0 { 3 } else { config.stage_channels(i - 1) };
            encoder.push(Conv::new(&mut params, &format!("enc{i}"), cin, config.stage_channels(i), 4, 2, 1, &mut rng));
            encoder_norm.push(i > 0 && config.image_size >> (i + 1) > 1);
        }
        let mut decoder = Vec::with_capacity(depth);
        for j in 0..depth {
            let cin = if j == depth - 1 {
                config.stage_channels(j)
            } else {
                2 * config.stage_channels(j)
            };
            let cout = if j == 0 { 3 } else { config.stage_channels(j - 1) };
            decoder.push(ConvTranspose::new(&mut params, &format!("dec{j}"), cin, cout, 4, 2, 1, &mut rng));
        }
        Self {
            config,
            params,
            encoder,
            encoder_norm,
            decoder,
        }
    }

    pub fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = self.config.image_size;
        if x.shape() != (3, s, s) {
            return Err(Error::Shape(format!(
                "generator expects 3x{s}x{s} input, got {}x{}x{}",
                x.c, x.h, x.w
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_train(x, None)?.0)
    }

    pub fn forward_train(&self, x: &Tensor<T>, dropout: Option<Dropout>) -> Result<(Tensor<T>, GeneratorTape<T>)> {
        self.check_input(x)?;
        let depth = self.config.depth;
        let mut tape = GeneratorTape {
            enc_cols: Vec::with_capacity(depth),
            enc_in_dims: Vec::with_capacity(depth),
            enc_norm: Vec::with_capacity(depth),
            enc_out: Vec::with_capacity(depth),
            dec_in: (0..depth).map(|_| Tensor::zeros(0, 0, 0)).collect(),
            dec_norm: (0..depth).map(|_| None).collect(),
            dec_out: (0..depth).map(|_| Tensor::zeros(0, 0, 0)).collect(),
            dec_mask: (0..depth).map(|_| None).collect(),
        };

        for (i, conv) in self.encoder.iter().enumerate() {
            let input = if i == 0 { x } else { &tape.enc_out[i - 1] };
            tape.enc_in_dims.push((input.h, input.w));
            let (mut h, cols) = conv.forward(&self.params, input);
            let norm = if self.encoder_norm[i] {
                let inv = layers::instance_norm(&mut h);
                Some((h.clone(), inv))
            } else {
                None
            };
            layers::leaky_relu(&mut h);
            tape.enc_cols.push(cols);
            tape.enc_norm.push(norm);
            tape.enc_out.push(h);
        }

        let mut h = tape.enc_out[depth - 1].clone();
        for j in (1..depth).rev() {
            let mut up = self.decoder[j].forward(&self.params, &h);
            let inv = layers::instance_norm(&mut up);
            tape.dec_norm[j] = Some((up.clone(), inv));
            layers::relu(&mut up);
            if let Some(d) = dropout.filter(|d| d.rate > 0.0) {
                let mut rng = seed::rng(seed::mix_tagged(d.seed, "dropout", j as u64));
                let keep = T::lit(1.0 / (1.0 - d.rate));
                let mask: Vec<T> = (0..up.data.len())
                    .map(|_| if rng.random::<f64>() < d.rate { T::zero() } else { keep })
                    .collect();
                for (v, m) in up.data.iter_mut().zip(&mask) {
                    *v = *v * *m;
                }
                tape.dec_mask[j] = Some(mask);
            }
            let next = up.concat(&tape.enc_out[j - 1]);
            tape.dec_in[j] = h;
            tape.dec_out[j] = up;
            h = next;
        }
        let mut y = self.decoder[0].forward(&self.params, &h);
        layers::sigmoid(&mut y);
        tape.dec_in[0] = h;
        tape.dec_out[0] = y.clone();
        Ok((y, tape))
    }

    /// Backpropagates `dy` (gradient w.r.t. the sigmoid output) into `grads`.
    pub fn backward(&self, tape: &GeneratorTape<T>, dy: &Tensor<T>, grads: &mut [Vec<T>]) {
        let depth = self.config.depth;
        let mut d_enc: Vec<Tensor<T>> = tape.enc_out.iter().map(|t| Tensor::zeros(t.c, t.h, t.w)).collect();

        let mut g = dy.clone();
        layers::sigmoid_backward(&tape.dec_out[0], &mut g);
        let d_in = self.decoder[0]
            .backward(&self.params, &tape.dec_in[0], &g, grads, true)
            .expect("input gradient requested");
        let (mut d_out, d_skip) = d_in.split(self.config.stage_channels(0));
        d_enc[0].add_assign(&d_skip);

        for j in 1..depth {
            if let Some(mask) = &tape.dec_mask[j] {
                for (g, m) in d_out.data.iter_mut().zip(mask) {
                    *g = *g * *m;
                }
            }
            layers::relu_backward(&tape.dec_out[j], &mut d_out);
            if let Some((normalized, inv)) = &tape.dec_norm[j] {
                layers::instance_norm_backward(normalized, inv, &mut d_out);
            }
            let d_in = self.decoder[j]
                .backward(&self.params, &tape.dec_in[j], &d_out, grads, true)
                .expect("input gradient requested");
            if j == depth - 1 {
                d_enc[depth - 1].add_assign(&d_in);
                break;
            }
            let (next, d_skip) = d_in.split(self.config.stage_channels(j));
            d_enc[j].add_assign(&d_skip);
            d_out = next;
        }

        for i in (0..depth).rev() {
            let mut d = std::mem::replace(&mut d_enc[i], Tensor::zeros(0, 0, 0));
            layers::leaky_relu_backward(&tape.enc_out[i], &mut d);
            if let Some((normalized, inv)) = &tape.enc_norm[i] {
                layers::instance_norm_backward(normalized, inv, &mut d);
            }
            let dx = self.encoder[i].backward(&self.params, &tape.enc_cols[i], tape.enc_in_dims[i], &d, grads, i > 0);
            if let Some(dx) = dx {
                d_enc[i - 1].add_assign(&dx);
            }
        }
    }

    /// The same network with parameters converted to another scalar type.
    pub fn cast<U: Real>(&self) -> Generator<U> {
        Generator {
            config: self.config,
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            encoder_norm: self.encoder_norm.clone(),
            decoder: self.decoder.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(size: usize, phase: f64) -> Tensor<f32> {
        Tensor::from_vec(
            3,
            size,
            size,
            (0..3 * size * size).map(|i| (((i as f64) * 0.13 + phase).sin() * 0.5 + 0.5) as f32).collect(),
        )
    }

    #[test]
    fn default_depth_follows_image_size() {
        assert_eq!(GeneratorConfig::for_size(64).depth, 4);
        assert_eq!(GeneratorConfig::for_size(256).depth, 6);
        assert_eq!(GeneratorConfig::for_size(64).stage_channels(5), 256);
    }

    #[test]
    fn shape_contract_and_range() {
        let g = Generator::<f32>::new(GeneratorConfig::for_size(64), 1).unwrap();
        let y = g.forward(&input(64, 0.0)).unwrap();
        assert_eq!(y.shape(), (3, 64, 64));
        assert!(y.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        let zeros = g.forward(&Tensor::zeros(3, 64, 64)).unwrap();
        assert!(zeros.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = GeneratorConfig::for_size(32);
        let a = Generator::<f32>::new(cfg, 9).unwrap();
        let b = Generator::<f32>::new(cfg, 9).unwrap();
        let c = Generator::<f32>::new(cfg, 10).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
        let std: f64 = {
            let w = a.params.value(0);
            (w.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / w.len() as f64).sqrt()
        };
        assert!((std - 0.02).abs() < 0.004, "{std}");
    }

    #[test]
    fn invalid_configs_name_the_constraint() {
        let bad = [
            (GeneratorConfig { image_size: 48, ..GeneratorConfig::for_size(64) }, "image_size"),
            (GeneratorConfig { depth: 1, ..GeneratorConfig::for_size(64) }, "depth"),
            (GeneratorConfig { depth: 7, ..GeneratorConfig::for_size(64) }, "depth"),
            (GeneratorConfig { base_channels: 0, ..GeneratorConfig::for_size(64) }, "base_channels"),
        ];
        for (cfg, field) in bad {
            match Generator::<f32>::new(cfg, 0) {
                Err(Error::Validation { field: f, .. }) => assert_eq!(f, field),
                other => panic!("expected {field} error, got {:?}", other.map(|_| ())),
            }
        }
        let small = GeneratorConfig {
            image_size: 8,
            base_channels: 4,
            depth: 2,
        };
        assert!(Generator::<f64>::new(small, 0).is_err());
        assert!(Generator::<f64>::new_unchecked(small, 0).is_ok());
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let g = Generator::<f32>::new(GeneratorConfig::for_size(32), 0).unwrap();
        assert!(matches!(g.forward(&input(64, 0.0)), Err(Error::Shape(_))));
    }

    #[test]
    fn single_pixel_perturbation_reaches_output() {
        let g = Generator::<f64>::new(GeneratorConfig::for_size(32), 4).unwrap();
        let x = input(32, 0.4).cast::<f64>();
        let base = g.forward(&x).unwrap();
        let mut bumped = x.clone();
        bumped.data[17 * 32 + 9] += 0.25;
        let out = g.forward(&bumped).unwrap();
        assert!(base.data.iter().zip(&out.data).any(|(a, b)| a != b));
    }
}
