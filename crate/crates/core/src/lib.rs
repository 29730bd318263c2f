//! Synthetic lit/albedo label pairs, an adversarial lit-to-albedo
//! translator, and the evaluation harness around them.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval_metrics;
pub mod gan;
pub mod image;
pub mod label_synth;
pub mod light_sim;
pub mod seed;

pub use error::{Error, Result};
