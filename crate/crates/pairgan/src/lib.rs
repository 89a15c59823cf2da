//! pairgan: adversarial representation learning over data-latent pairs.
//!
//! A self-contained CPU implementation of a bidirectional GAN: an encoder
//! maps images to latents, a generator maps latents to images, and a joint
//! discriminator with unary and pairwise score heads ties the two together.
//! Training uses alternating hinge objectives; evaluation covers linear
//! probes, nearest-neighbor classification, reconstruction error, and
//! feature-space distribution metrics.
//!
//! Everything is deterministic given a seed and a config: data synthesis,
//! augmentation, initialization, training, and evaluation all draw from
//! explicit named RNG streams, and checkpoints round-trip bit-exactly.

pub mod config;
pub mod data;
pub mod eval;
pub mod models;
pub mod objective;
pub mod rng;
pub mod trainer;
pub mod tensor;
