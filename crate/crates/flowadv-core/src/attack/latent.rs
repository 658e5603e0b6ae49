//! Gradient-free search over the flow's base distribution.
//!
//! Each iteration draws n latent samples z = z_clean + μ + σε, maps them to
//! images, projects into the ε-ball, queries the oracle, and moves μ to the
//! mean base-space offset of the k lowest-loss candidates. Elites are
//! re-encoded from the *projected* images so μ reflects what the classifier
//! actually saw.

use crate::attack::cw::cw_loss;
use crate::attack::project::{project, Norm};
use crate::classifier::oracle::QueryOracle;
use crate::error::{Error, Result};
use crate::flow::model::FlowModel;
use crate::numerics::prng::Prng;
use crate::numerics::tensor::{argmax, l2_dist, linf_dist};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Latent noise std σ.
    pub sigma: f32,
    /// Samples per iteration n.
    pub samples: usize,
    /// Elites k averaged into the μ update.
    pub elites: usize,
    pub max_iters: usize,
    /// Ball radius ε.
    pub eps: f32,
    pub norm: Norm,
    pub budget: u64,
    /// Scale of the small random initial μ.
    pub sigma_init: f32,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            sigma: 0.1,
            samples: 20,
            elites: 4,
            max_iters: 500,
            eps: 8.0 / 255.0,
            norm: Norm::LInf,
            budget: 10_000,
            sigma_init: 0.01,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.elites < 1 || self.elites > self.samples {
            return Err(Error::Config(format!(
                "elites must satisfy 1 <= k <= n, got k={} n={}",
                self.elites, self.samples
            )));
        }
        if self.sigma <= 0.0 || self.eps <= 0.0 {
            return Err(Error::Config("sigma and eps must be positive".into()));
        }
        Ok(())
    }

    /// Whether n·max_iters can exhaust the budget (reported, not enforced).
    pub fn covers_budget(&self) -> bool {
        (self.samples * self.max_iters) as u64 >= self.budget
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub success: bool,
    pub queries: u64,
    pub adversarial: Option<Vec<f32>>,
    pub final_loss: f32,
    pub achieved_norm: f32,
    pub iterations: usize,
    /// Set when the run ended on a numeric error instead of budget/iterations.
    pub flagged_error: Option<String>,
}

impl AttackResult {
    fn failed(queries: u64, best_loss: f32, iterations: usize, err: Option<String>) -> Self {
        AttackResult {
            success: false,
            queries,
            adversarial: None,
            final_loss: best_loss,
            achieved_norm: 0.0,
            iterations,
            flagged_error: err,
        }
    }
}

fn dist(a: &[f32], b: &[f32], norm: Norm) -> f32 {
    match norm {
        Norm::LInf => linf_dist(a, b),
        Norm::L2 => l2_dist(a, b),
    }
}

pub fn latent_attack(
    x: &[f32],
    y: usize,
    flow: &FlowModel,
    oracle: &mut QueryOracle,
    cfg: &AttackConfig,
    prng: &mut Prng,
) -> Result<AttackResult> {
    cfg.validate()?;
    let d = flow.dim();
    if x.len() != d {
        return Err(Error::ShapeMismatch(format!(
            "attack target has {} pixels, flow dimension is {d}",
            x.len()
        )));
    }
    let z_clean = match flow.encode(x) {
        Ok((z, _)) => z,
        Err(e) => return Ok(AttackResult::failed(oracle.count(), f32::INFINITY, 0, Some(e.to_string()))),
    };
    let mut mu: Vec<f32> = (0..d).map(|_| cfg.sigma_init * prng.standard_normal()).collect();
    let mut best_loss = f32::INFINITY;
    let mut candidates: Vec<(Vec<f32>, f32)> = Vec::with_capacity(cfg.samples);

    for iter in 0..cfg.max_iters {
        candidates.clear();
        for _ in 0..cfg.samples {
            let z: Vec<f32> = (0..d)
                .map(|i| z_clean[i] + mu[i] + cfg.sigma * prng.standard_normal())
                .collect();
            let img = match flow.decode(&z) {
                Ok(img) => img,
                Err(e) => {
                    return Ok(AttackResult::failed(
                        oracle.count(),
                        best_loss,
                        iter,
                        Some(e.to_string()),
                    ))
                }
            };
            let img = project(&img, x, cfg.eps, cfg.norm);
            let logprobs = match oracle.query(&img) {
                Ok(lp) => lp,
                Err(Error::BudgetExhausted { budget }) => {
                    // Budget exhaustion mid-iteration: the example fails and
                    // reports the full quota.
                    return Ok(AttackResult::failed(budget, best_loss, iter, None));
                }
                Err(e) => return Err(e),
            };
            let loss = cw_loss(&logprobs, y)?;
            best_loss = best_loss.min(loss);
            if loss == 0.0 && argmax(&logprobs) != y {
                let norm = dist(&img, x, cfg.norm);
                return Ok(AttackResult {
                    success: true,
                    queries: oracle.count(),
                    adversarial: Some(img),
                    final_loss: 0.0,
                    achieved_norm: norm,
                    iterations: iter + 1,
                    flagged_error: None,
                });
            }
            candidates.push((img, loss));
        }

        // k lowest-loss candidates, ties broken by draw order.
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| {
            candidates[a]
                .1
                .total_cmp(&candidates[b].1)
                .then(a.cmp(&b))
        });
        let mut new_mu = vec![0.0f32; d];
        for &ci in order.iter().take(cfg.elites) {
            let z = match flow.encode(&candidates[ci].0) {
                Ok((z, _)) => z,
                Err(e) => {
                    return Ok(AttackResult::failed(
                        oracle.count(),
                        best_loss,
                        iter + 1,
                        Some(e.to_string()),
                    ))
                }
            };
            for i in 0..d {
                new_mu[i] += z[i] - z_clean[i];
            }
        }
        let scale = 1.0 / cfg.elites as f32;
        for m in &mut new_mu {
            *m *= scale;
        }
        mu = new_mu;
    }
    Ok(AttackResult::failed(
        oracle.count(),
        best_loss,
        cfg.max_iters,
        None,
    ))
}
