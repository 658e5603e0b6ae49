//! Budgeted black-box interface to the classifier. Attacks only ever see
//! log-probabilities through `query`; weights and gradients are not exposed.

use crate::attack::project::Norm;
use crate::classifier::model::ClassifierModel;
use crate::error::{Error, Result};
use crate::numerics::tensor::{l2_dist, linf_dist};

pub const DEFAULT_BUDGET: u64 = 10_000;

/// Optional instrumentation: every queried image must stay inside the ε-ball
/// around a reference image and inside [0,1]. Violations are counted, never
/// silently ignored.
#[derive(Debug, Clone)]
pub struct ConstraintCheck {
    pub reference: Vec<f32>,
    pub eps: f32,
    pub norm: Norm,
}

impl ConstraintCheck {
    /// ε plus 4 ulp of slack for the clamp arithmetic. The ulp is taken at
    /// the pixel magnitude (≤ 1), not at ε: the projection computes bounds
    /// like x ± ε whose rounding error scales with x.
    fn tolerance(&self) -> f32 {
        self.eps + 4.0 * f32::EPSILON
    }

    fn satisfied(&self, x: &[f32]) -> bool {
        if x.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return false;
        }
        let dist = match self.norm {
            Norm::LInf => linf_dist(x, &self.reference),
            Norm::L2 => l2_dist(x, &self.reference),
        };
        dist <= self.tolerance()
    }
}

pub struct QueryOracle<'a> {
    model: &'a ClassifierModel,
    count: u64,
    budget: u64,
    constraint: Option<ConstraintCheck>,
    violations: u64,
}

impl<'a> QueryOracle<'a> {
    pub fn new(model: &'a ClassifierModel, budget: u64) -> Self {
        QueryOracle {
            model,
            count: 0,
            budget,
            constraint: None,
            violations: 0,
        }
    }

    pub fn with_constraint(mut self, check: ConstraintCheck) -> Self {
        self.constraint = Some(check);
        self
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn remaining(&self) -> u64 {
        self.budget - self.count
    }

    pub fn exhausted(&self) -> bool {
        self.count >= self.budget
    }

    pub fn violations(&self) -> u64 {
        self.violations
    }

    /// One counted classifier call. Fails once the budget is exhausted; the
    /// caller must treat that as terminal for the current example.
    pub fn query(&mut self, x: &[f32]) -> Result<Vec<f32>> {
        if self.exhausted() {
            return Err(Error::BudgetExhausted {
                budget: self.budget,
            });
        }
        if let Some(check) = &self.constraint {
            if !check.satisfied(x) {
                self.violations += 1;
            }
        }
        self.count += 1;
        self.model.logprobs(x)
    }
}
