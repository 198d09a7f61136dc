//! Conditional deep-convolutional GAN for 2D maximum-intensity-projection
//! PET-like images.
//!
//! The crate covers the whole loop: synthetic phantom volumes
//! ([`phantom`]), preprocessing into canvas images ([`pipeline`]), the
//! conditional generator/discriminator ([`model`]) on a small CPU tensor
//! core ([`nn`]), adversarial training with checkpoints ([`train`]) and
//! latent-space walks that separate memorising from generalising
//! generators ([`walk`]).

pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod io;
pub mod label;
pub mod model;
pub mod nn;
pub mod phantom;
pub mod pipeline;
pub mod train;
pub mod walk;

pub use error::{Error, Result};
pub use label::{ClassLabel, ClassMix, NUM_CLASSES};
pub use phantom::{PhantomSpec, Volume3D};
pub use model::{LatentSeed, ModelConfig, ModelParams};
pub use pipeline::{Canvas, Image2D, MipImage, PipelineConfig};
pub use train::{ModelCheckpoint, TrainConfig, TrainHistory};
pub use walk::{WalkReport, WalkSpec};
