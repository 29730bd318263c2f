//! Patch discriminator over channel-concatenated (lit, candidate) pairs.
//!
//! `n_layers` 4×4 stride-2 convolutions (instance norm from the second on,
//! LeakyReLU(0.2) after each) and a final 4×4 stride-1 padding-1 convolution
//! to one logit channel. A `s×s` input yields a `(s/2^n − 1)²` logit grid:
//! 64×64 with three layers gives 7×7.

use serde::{Deserialize, Serialize};

use super::generator::MAX_CHANNEL_MULTIPLIER;
use super::layers::{self, Conv};
use super::params::ParamSet;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::seed;

pub const PAIR_CHANNELS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub base_channels: usize,
    pub n_layers: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            base_channels: 32,
            n_layers: 3,
        }
    }
}

impl DiscriminatorConfig {
    pub fn layer_channels(&self, layer: usize) -> usize {
        self.base_channels * (1usize << layer).min(MAX_CHANNEL_MULTIPLIER)
    }

    /// Side length of the logit grid for a square input.
    pub fn logit_size(&self, image_size: usize) -> usize {
        (image_size >> self.n_layers).saturating_sub(1)
    }

    pub fn validate(&self, image_size: usize) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::validation("n_layers", "must be at least 1"));
        }
        if self.base_channels == 0 {
            return Err(Error::validation("base_channels", "must be positive"));
        }
        if self.logit_size(image_size) == 0 {
            return Err(Error::validation(
                "n_layers",
                format!("{} layers leave no logits for a {image_size}-pixel input", self.n_layers),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T> {
    pub config: DiscriminatorConfig,
    pub image_size: usize,
    pub params: ParamSet<T>,
    layers: Vec<Conv>,
}

pub struct DiscriminatorTape<T> {
    cols: Vec<Vec<T>>,
    in_dims: Vec<(usize, usize)>,
    norm: Vec<Option<(Tensor<T>, Vec<T>)>>,
    out: Vec<Tensor<T>>,
}

impl<T: Real> Discriminator<T> {
    pub fn new(config: DiscriminatorConfig, image_size: usize, seed: u64) -> Result<Self> {
        config.validate(image_size)?;
        let mut rng = seed::rng(seed::mix_tagged(seed, "discriminator", 0));
        let mut params = ParamSet::default();
        let mut layers = Vec::with_capacity(config.n_layers + 1);
        let mut cin = PAIR_CHANNELS;
        for l in 0..config.n_layers {
            let cout = config.layer_channels(l);
            layers.push(Conv::new(&mut params, &format!("conv{l}"), cin, cout, 4, 2, 1, &mut rng));
            cin = cout;
        }
        layers.push(Conv::new(&mut params, "logits", cin, 1, 4, 1, 1, &mut rng));
        Ok(Self {
            config,
            image_size,
            params,
            layers,
        })
    }

    fn pair(&self, lit: &Tensor<T>, candidate: &Tensor<T>) -> Result<Tensor<T>> {
        let s = self.image_size;
        if lit.shape() != (3, s, s) || candidate.shape() != (3, s, s) {
            return Err(Error::Shape(format!(
                "discriminator expects two 3x{s}x{s} inputs, got {:?} and {:?}",
                lit.shape(),
                candidate.shape()
            )));
        }
        Ok(lit.concat(candidate))
    }

    /// Raw patch logits, shape `1×h×w`.
    pub fn forward(&self, lit: &Tensor<T>, candidate: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_train(lit, candidate)?.0)
    }

    pub fn forward_train(&self, lit: &Tensor<T>, candidate: &Tensor<T>) -> Result<(Tensor<T>, DiscriminatorTape<T>)> {
        let mut h = self.pair(lit, candidate)?;
        let n = self.layers.len();
        let mut tape = DiscriminatorTape {
            cols: Vec::with_capacity(n),
            in_dims: Vec::with_capacity(n),
            norm: Vec::with_capacity(n),
            out: Vec::with_capacity(n),
        };
        for (l, conv) in self.layers.iter().enumerate() {
            tape.in_dims.push((h.h, h.w));
            let (mut y, cols) = conv.forward(&self.params, &h);
            tape.cols.push(cols);
            let last = l + 1 == n;
            let norm = if l > 0 && !last && y.plane() > 1 {
                let inv = layers::instance_norm(&mut y);
                Some((y.clone(), inv))
            } else {
                None
            };
            tape.norm.push(norm);
            if !last {
                layers::leaky_relu(&mut y);
                tape.out.push(y.clone());
            }
            h = y;
        }
        Ok((h, tape))
    }

    /// Accumulates parameter gradients and, when `need_input` is set, returns
    /// the gradient w.r.t. the candidate image (channels 3..6 of the pair).
    pub fn backward(&self, tape: &DiscriminatorTape<T>, d_logits: &Tensor<T>, grads: &mut [Vec<T>], need_input: bool) -> Option<Tensor<T>> {
        let n = self.layers.len();
        let mut d = d_logits.clone();
        for l in (0..n).rev() {
            if l + 1 < n {
                layers::leaky_relu_backward(&tape.out[l], &mut d);
                if let Some((normalized, inv)) = &tape.norm[l] {
                    layers::instance_norm_backward(normalized, inv, &mut d);
                }
            }
            let need_dx = l > 0 || need_input;
            match self.layers[l].backward(&self.params, &tape.cols[l], tape.in_dims[l], &d, grads, need_dx) {
                Some(dx) => d = dx,
                None => return None,
            }
        }
        Some(d.split(3).1)
    }
}
