//! A desk-scale laboratory for feature-collision attacks on
//! encoder-conditioned image generators.
//!
//! The crate trains small differentiable image encoders and conditioned
//! decoders from scratch, crafts L-infinity-bounded adversarial images
//! that collide with a target image in the encoder's feature space,
//! evaluates the downstream effect on generation, and measures two
//! defenses (feature-space filtering and adversarial fine-tuning).

pub mod error;
pub mod data;
pub mod tensor;

pub use error::{Error, Result};
