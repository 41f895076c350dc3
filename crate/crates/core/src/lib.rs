//! UV position-map adversarial autoencoder for 3D face shapes.
//!
//! Meshes in dense correspondence are aligned, normalized and rasterized
//! into UV position maps; a convolutional autoencoder doubles as the
//! discriminator of an adversarial game whose generator shares its
//! architecture. The crate also covers latent-Gaussian face generation,
//! label-conditioned translation, and the evaluation metrics used to
//! compare against a PCA shape model.

pub mod autodiff;
pub mod eval;
pub mod generation;
pub mod geometry;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod training;
mod error;

pub use error::{Error, Result};
pub use generation::LatentGaussian;
pub use geometry::{Mesh, Point, UvLayout, UvMap};
pub use io::{Checkpoint, LabelTable, RunConfig};
pub use model::{NetConfig, NetParams};
pub use training::{PairedDataset, TrainConfig};
