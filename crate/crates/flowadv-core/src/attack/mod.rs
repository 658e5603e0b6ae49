//! Black-box adversarial attacks under a query budget: the flow-latent
//! search, the NES baseline, and the evaluation protocol tying them to a
//! test set.

pub mod cw;
pub mod evaluate;
pub mod latent;
pub mod nes;
pub mod project;

pub use cw::cw_loss;
pub use evaluate::{evaluate, AttackKind, EvalConfig, Evaluation, ExampleRecord};
pub use latent::{latent_attack, AttackConfig, AttackResult};
pub use nes::{nes_attack, nes_gradient_estimate, NesConfig};
pub use project::{project, Norm};
