//! Normalizing-flow density estimation and black-box adversarial example
//! generation, trained and evaluated end to end on CPU with no external
//! numerics dependencies.
//!
//! Modules:
//! - [`numerics`]: tensors, deterministic PRNG, dense layers, Adam, and the
//!   finite-difference / slogdet oracles the flow tests check against.
//! - [`flow`]: affine coupling layers with soft-clamped scales, the
//!   multi-scale model (logit → checkerboard couplings → squeeze → split →
//!   fully-connected couplings), exact NLL and its gradient, training.
//! - [`classifier`]: the attack target MLP, PGD (reference attack and
//!   adversarial training), and the query-counting oracle.
//! - [`attack`]: C&W margin loss, ε-ball projection, the flow-latent
//!   black-box attack, the NES baseline, and the evaluation protocol.
//! - [`data`]: synthetic shape datasets, IDX ingestion, dequantization.
//! - [`harness`]: config files, NFCK checkpoints, JSON/CSV reports, PGM dumps.

pub mod attack;
pub mod classifier;
pub mod data;
pub mod error;
pub mod flow;
pub mod harness;
pub mod numerics;

pub use error::{Error, Result};
