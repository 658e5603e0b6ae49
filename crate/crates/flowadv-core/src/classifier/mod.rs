//! The attack target: a small trainable classifier, the white-box PGD
//! reference, PGD adversarial training as the desk-scale defense, and the
//! black-box query oracle.

pub mod model;
pub mod oracle;
pub mod pgd;

pub use model::{
    train_classifier, ClassifierConfig, ClassifierModel, ClassifierTraining, TrainMode,
};
pub use oracle::{ConstraintCheck, QueryOracle, DEFAULT_BUDGET};
pub use pgd::{pgd_attack, DEFAULT_PGD_STEPS};
