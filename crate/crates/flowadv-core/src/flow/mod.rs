//! Invertible blocks with exact log-determinants, their composition into a
//! multi-scale flow, maximum-likelihood training, and sampling.

pub mod blocks;
pub mod clamp;
pub mod coupling;
pub mod model;
pub mod train;

pub use blocks::{
    logit_inverse, logit_preprocess, merge, split, split_point, squeeze_permutation,
    Permutation, PreprocessCfg,
};
pub use clamp::{clamp_scale, clamp_scale_deriv};
pub use coupling::CouplingPair;
pub use model::{Block, BlockKind, FlowConfig, FlowModel, Nll};
pub use train::{sample, smooth_trace, train_flow, FlowTrainConfig, FlowTraining};
