//! The adversarial lit-to-albedo translator: a Unet generator, a patch
//! discriminator over (lit, candidate) pairs, their objectives and the
//! alternating training loop.

pub mod checkpoint;
pub mod discriminator;
pub mod generator;
pub mod layers;
pub mod loss;
pub mod params;
pub mod tensor;
pub mod train;

pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use generator::{Dropout, Generator, GeneratorConfig};
pub use loss::{adversarial_losses, PairRole};
pub use tensor::{Real, Tensor};
pub use train::{infer, Augmentation, train, train_step, EpochLosses, ModelBundle, PairBatch, StepLosses, TrainConfig, TrainRun};
