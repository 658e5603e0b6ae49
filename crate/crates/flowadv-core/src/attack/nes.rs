//! Query-limited NES baseline: antithetic Gaussian probes estimate the
//! gradient of the C&W loss directly in image space, followed by a projected
//! sign step.

use crate::attack::cw::cw_loss;
use crate::attack::latent::AttackResult;
use crate::attack::project::{project, Norm};
use crate::classifier::oracle::QueryOracle;
use crate::error::{Error, Result};
use crate::numerics::prng::Prng;
use crate::numerics::tensor::{argmax, l2_dist, linf_dist};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NesConfig {
    /// Probe noise std σ.
    pub sigma: f32,
    /// Queries per iteration (must be even: antithetic pairs).
    pub samples: usize,
    pub lr: f32,
    pub eps: f32,
    pub norm: Norm,
    pub budget: u64,
}

impl NesConfig {
    /// Published vanilla-classifier profile.
    pub fn vanilla() -> Self {
        NesConfig {
            sigma: 0.1,
            samples: 50,
            lr: 0.01,
            eps: 8.0 / 255.0,
            norm: Norm::LInf,
            budget: 10_000,
        }
    }

    /// Published defended-classifier profile.
    pub fn defended() -> Self {
        NesConfig {
            sigma: 0.001,
            samples: 100,
            ..NesConfig::vanilla()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 || self.samples % 2 != 0 {
            return Err(Error::Config(format!(
                "NES sample size must be even and >= 2, got {}",
                self.samples
            )));
        }
        if self.sigma <= 0.0 || self.eps <= 0.0 || self.lr <= 0.0 {
            return Err(Error::Config("sigma, eps and lr must be positive".into()));
        }
        Ok(())
    }
}

impl Default for NesConfig {
    fn default() -> Self {
        NesConfig::vanilla()
    }
}

/// Antithetic-pair gradient estimate of a black-box loss:
/// g = (1 / 2mσ) Σ [L(x+σuᵢ) − L(x−σuᵢ)] uᵢ over m pairs.
/// `loss` is called exactly 2m times.
pub fn nes_gradient_estimate(
    mut loss: impl FnMut(&[f32]) -> Result<f32>,
    x: &[f32],
    sigma: f32,
    pairs: usize,
    prng: &mut Prng,
) -> Result<Vec<f32>> {
    let d = x.len();
    let mut grad = vec![0.0f64; d];
    let mut probe = vec![0.0f32; d];
    for _ in 0..pairs {
        let u: Vec<f32> = prng.standard_normal_vec(d);
        for i in 0..d {
            probe[i] = x[i] + sigma * u[i];
        }
        let plus = loss(&probe)?;
        for i in 0..d {
            probe[i] = x[i] - sigma * u[i];
        }
        let minus = loss(&probe)?;
        let w = (plus - minus) as f64;
        for i in 0..d {
            grad[i] += w * u[i] as f64;
        }
    }
    let scale = 1.0 / (2.0 * pairs as f64 * sigma as f64);
    Ok(grad.iter().map(|&g| (g * scale) as f32).collect())
}

pub fn nes_attack(
    x: &[f32],
    y: usize,
    oracle: &mut QueryOracle,
    cfg: &NesConfig,
    prng: &mut Prng,
) -> Result<AttackResult> {
    cfg.validate()?;
    let pairs = cfg.samples / 2;
    let mut adv = x.to_vec();
    let mut best_loss = f32::INFINITY;
    let mut iterations = 0usize;

    // One free-standing query decides whether we are already adversarial and
    // primes the loss trace.
    enum Outcome {
        Found(AttackResult),
        Budget,
    }
    let check = |adv: &[f32],
                     oracle: &mut QueryOracle,
                     best: &mut f32,
                     iters: usize|
     -> Result<std::result::Result<f32, Outcome>> {
        let lp = match oracle.query(adv) {
            Ok(lp) => lp,
            Err(Error::BudgetExhausted { .. }) => return Ok(Err(Outcome::Budget)),
            Err(e) => return Err(e),
        };
        let loss = cw_loss(&lp, y)?;
        *best = best.min(loss);
        if loss == 0.0 && argmax(&lp) != y {
            let norm = match cfg.norm {
                Norm::LInf => linf_dist(adv, x),
                Norm::L2 => l2_dist(adv, x),
            };
            return Ok(Err(Outcome::Found(AttackResult {
                success: true,
                queries: oracle.count(),
                adversarial: Some(adv.to_vec()),
                final_loss: 0.0,
                achieved_norm: norm,
                iterations: iters,
                flagged_error: None,
            })));
        }
        Ok(Ok(loss))
    };

    match check(&adv, oracle, &mut best_loss, 0)? {
        Err(Outcome::Found(res)) => return Ok(res),
        Err(Outcome::Budget) => {
            return Ok(AttackResult {
                success: false,
                queries: oracle.budget(),
                adversarial: None,
                final_loss: best_loss,
                achieved_norm: 0.0,
                iterations: 0,
                flagged_error: None,
            })
        }
        Ok(_) => {}
    }

    loop {
        iterations += 1;
        // 2·(samples/2) counted queries for the estimate.
        let mut budget_hit = false;
        let grad = {
            let oracle_cell = std::cell::RefCell::new(&mut *oracle);
            let est = nes_gradient_estimate(
                |probe| {
                    // Probes are projected too: every oracle query must stay
                    // inside the ball, estimation included.
                    let probe = project(probe, x, cfg.eps, cfg.norm);
                    let mut o = oracle_cell.borrow_mut();
                    match o.query(&probe) {
                        Ok(lp) => cw_loss(&lp, y),
                        Err(Error::BudgetExhausted { .. }) => {
                            budget_hit = true;
                            Ok(0.0)
                        }
                        Err(e) => Err(e),
                    }
                },
                &adv,
                cfg.sigma,
                pairs,
                prng,
            )?;
            est
        };
        if budget_hit {
            return Ok(AttackResult {
                success: false,
                queries: oracle.budget(),
                adversarial: None,
                final_loss: best_loss,
                achieved_norm: 0.0,
                iterations,
                flagged_error: None,
            });
        }
        for (a, g) in adv.iter_mut().zip(&grad) {
            *a -= cfg.lr * g.signum();
        }
        adv = project(&adv, x, cfg.eps, cfg.norm);
        match check(&adv, oracle, &mut best_loss, iterations)? {
            Err(Outcome::Found(res)) => return Ok(res),
            Err(Outcome::Budget) => {
                return Ok(AttackResult {
                    success: false,
                    queries: oracle.budget(),
                    adversarial: None,
                    final_loss: best_loss,
                    achieved_norm: 0.0,
                    iterations,
                    flagged_error: None,
                })
            }
            Ok(_) => {}
        }
    }
}
