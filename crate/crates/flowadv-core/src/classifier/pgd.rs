//! White-box PGD reference attack: sign-gradient descent on the C&W margin
//! with ℓ∞ projection. This is the only code path allowed to touch classifier
//! gradients.

use crate::attack::project::{project, Norm};
use crate::classifier::model::ClassifierModel;
use crate::error::Result;

/// Returns the perturbed image; ‖x_adv − x‖∞ ≤ ε and x_adv ∈ [0,1] exactly
/// (clipping is the last step of every iteration). Success is judged by the
/// caller.
pub fn pgd_attack(
    model: &ClassifierModel,
    x: &[f32],
    y: usize,
    eps: f32,
    steps: usize,
    step_size: f32,
) -> Result<Vec<f32>> {
    let mut adv = x.to_vec();
    if eps == 0.0 {
        return Ok(adv);
    }
    for _ in 0..steps {
        let grad = model.cw_input_grad(&adv, y)?;
        if grad.iter().all(|&g| g == 0.0) {
            break; // margin already non-positive
        }
        for (a, g) in adv.iter_mut().zip(&grad) {
            *a -= step_size * g.signum();
        }
        adv = project(&adv, x, eps, Norm::LInf);
    }
    Ok(project(&adv, x, eps, Norm::LInf))
}

pub const DEFAULT_PGD_STEPS: usize = 100;
