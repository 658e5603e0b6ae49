//! Evaluation protocol: run one attack per correctly classified test image,
//! each against a fresh counting oracle, and collect the per-example records
//! that reports aggregate.

use crate::attack::latent::{latent_attack, AttackConfig, AttackResult};
use crate::attack::nes::{nes_attack, NesConfig};
use crate::attack::project::Norm;
use crate::classifier::model::ClassifierModel;
use crate::classifier::oracle::{ConstraintCheck, QueryOracle};
use crate::classifier::pgd::pgd_attack;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::flow::model::FlowModel;
use crate::numerics::prng::Prng;
use crate::numerics::tensor::linf_dist;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Flow,
    Nes,
    Pgd,
}

impl AttackKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "flow" => Ok(AttackKind::Flow),
            "nes" => Ok(AttackKind::Nes),
            "pgd" => Ok(AttackKind::Pgd),
            other => Err(Error::Config(format!(
                "unknown attack kind {other:?} (expected flow, nes or pgd)"
            ))),
        }
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttackKind::Flow => "flow",
            AttackKind::Nes => "nes",
            AttackKind::Pgd => "pgd",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub index: usize,
    pub label: u8,
    pub success: bool,
    pub queries: u64,
    pub final_loss: f32,
    pub achieved_norm: f32,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flagged_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub kind: AttackKind,
    /// Cap on eligible (correctly classified) examples evaluated; 0 = all.
    pub limit: usize,
    pub seed: u64,
    pub attack: AttackConfig,
    pub nes: NesConfig,
    /// PGD reference step count.
    pub pgd_steps: usize,
}

impl EvalConfig {
    pub fn new(kind: AttackKind, seed: u64) -> Self {
        EvalConfig {
            kind,
            limit: 0,
            seed,
            attack: AttackConfig::default(),
            nes: NesConfig::vanilla(),
            pgd_steps: crate::classifier::pgd::DEFAULT_PGD_STEPS,
        }
    }

    fn eps(&self) -> f32 {
        match self.kind {
            AttackKind::Flow => self.attack.eps,
            AttackKind::Nes => self.nes.eps,
            AttackKind::Pgd => self.attack.eps,
        }
    }

    fn norm(&self) -> Norm {
        match self.kind {
            AttackKind::Flow => self.attack.norm,
            AttackKind::Nes => self.nes.norm,
            AttackKind::Pgd => Norm::LInf,
        }
    }

    fn budget(&self) -> u64 {
        match self.kind {
            AttackKind::Flow => self.attack.budget,
            AttackKind::Nes => self.nes.budget,
            AttackKind::Pgd => u64::MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub records: Vec<ExampleRecord>,
    /// Test indices skipped because the classifier already misclassifies them.
    pub skipped: usize,
}

/// Worker count from NF_THREADS; 0 or unset means single-threaded
/// deterministic mode.
pub fn worker_threads() -> usize {
    std::env::var("NF_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0)
}

fn attack_one(
    x: &[f32],
    y: usize,
    flow: &FlowModel,
    clf: &ClassifierModel,
    cfg: &EvalConfig,
    seed: u64,
    index: usize,
) -> Result<AttackResult> {
    let check = ConstraintCheck {
        reference: x.to_vec(),
        eps: cfg.eps(),
        norm: cfg.norm(),
    };
    let mut oracle = QueryOracle::new(clf, cfg.budget()).with_constraint(check);
    let mut prng = Prng::derived(seed, index as u64);
    let res = match cfg.kind {
        AttackKind::Flow => latent_attack(x, y, flow, &mut oracle, &cfg.attack, &mut prng)?,
        AttackKind::Nes => nes_attack(x, y, &mut oracle, &cfg.nes, &mut prng)?,
        AttackKind::Pgd => {
            // White-box reference: no oracle queries, queries reported as 0.
            let eps = cfg.attack.eps;
            let step = 2.5 * eps / cfg.pgd_steps as f32;
            let adv = pgd_attack(clf, x, y, eps, cfg.pgd_steps, step)?;
            let pred = clf.predict(&adv)?;
            let success = pred != y;
            let lp = clf.logprobs(&adv)?;
            AttackResult {
                success,
                queries: 0,
                adversarial: success.then(|| adv.clone()),
                final_loss: crate::attack::cw::cw_loss(&lp, y)?,
                achieved_norm: linf_dist(&adv, x),
                iterations: cfg.pgd_steps,
                flagged_error: None,
            }
        }
    };
    if oracle.violations() > 0 {
        return Err(Error::Domain(format!(
            "example {index}: {} oracle queries violated the ball constraint",
            oracle.violations()
        )));
    }
    Ok(res)
}

/// Runs the configured attack on one example with the same oracle, PRNG
/// stream and constraint instrumentation the full evaluation would use.
pub fn attack_single(
    x: &[f32],
    y: usize,
    flow: &FlowModel,
    clf: &ClassifierModel,
    cfg: &EvalConfig,
    index: usize,
) -> Result<AttackResult> {
    attack_one(x, y, flow, clf, cfg, cfg.seed, index)
}

pub fn evaluate(
    test: &Dataset,
    flow: &FlowModel,
    clf: &ClassifierModel,
    cfg: &EvalConfig,
) -> Result<Evaluation> {
    let mut eligible: Vec<usize> = Vec::new();
    let mut skipped = 0usize;
    for i in 0..test.len() {
        if clf.predict(test.image(i))? == test.label(i) as usize {
            eligible.push(i);
        } else {
            skipped += 1;
        }
        if cfg.limit > 0 && eligible.len() == cfg.limit {
            break;
        }
    }
    if eligible.is_empty() {
        return Err(Error::EmptyEligibleSet(format!(
            "classifier misclassifies all {} test examples; nothing to attack",
            test.len()
        )));
    }

    let run_one = |&i: &usize| -> Result<ExampleRecord> {
        let x = test.image(i);
        let y = test.label(i) as usize;
        let res = attack_one(x, y, flow, clf, cfg, cfg.seed, i)?;
        Ok(ExampleRecord {
            index: i,
            label: y as u8,
            success: res.success,
            queries: res.queries,
            final_loss: res.final_loss,
            achieved_norm: res.achieved_norm,
            iterations: res.iterations,
            flagged_error: res.flagged_error,
        })
    };

    let threads = worker_threads();
    let records = if threads <= 1 {
        eligible.iter().map(run_one).collect::<Result<Vec<_>>>()?
    } else {
        // Static round-robin partition; results reassembled by position so the
        // output is identical to the single-threaded order.
        let mut out: Vec<Option<ExampleRecord>> = vec![None; eligible.len()];
        std::thread::scope(|scope| -> Result<()> {
            let mut handles = Vec::new();
            for t in 0..threads {
                let eligible = &eligible;
                let run = &run_one;
                handles.push(scope.spawn(move || -> Result<Vec<(usize, ExampleRecord)>> {
                    let mut part = Vec::new();
                    for (pos, idx) in eligible.iter().enumerate() {
                        if pos % threads == t {
                            part.push((pos, run(idx)?));
                        }
                    }
                    Ok(part)
                }));
            }
            for h in handles {
                for (pos, rec) in h.join().expect("evaluation worker panicked")? {
                    out[pos] = Some(rec);
                }
            }
            Ok(())
        })?;
        out.into_iter().map(|r| r.expect("record missing")).collect()
    };

    Ok(Evaluation { records, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, SplitTag};
    use crate::numerics::dense::{Activation, DenseLayer, Mlp};
    use crate::numerics::tensor::Tensor;

    fn toy_dataset(n: usize) -> Dataset {
        // d=4 images: class 0 bright left half, class 1 bright right half.
        let mut pix = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let (a, b) = if c == 0 { (0.9, 0.1) } else { (0.1, 0.9) };
            pix.extend_from_slice(&[a, a, b, b]);
            labels.push(c as u8);
        }
        Dataset::new(
            Tensor::new(vec![n, 1, 2, 2], pix).unwrap(),
            labels,
            2,
            SplitTag::Test,
        )
        .unwrap()
    }

    fn halves_classifier(margin_scale: f32) -> ClassifierModel {
        // logit0 = s·(x0+x1−x2−x3), logit1 = 0
        let mut layer = DenseLayer::zeros(4, 2, Activation::Identity);
        layer.weights[0] = margin_scale;
        layer.weights[1] = margin_scale;
        layer.weights[2] = -margin_scale;
        layer.weights[3] = -margin_scale;
        ClassifierModel::from_mlp(Mlp { layers: vec![layer] }, 2).unwrap()
    }

    fn broken_classifier() -> ClassifierModel {
        // Inverts the halves rule: misclassifies everything in toy_dataset.
        let mut layer = DenseLayer::zeros(4, 2, Activation::Identity);
        layer.weights[0] = -5.0;
        layer.weights[1] = -5.0;
        layer.weights[2] = 5.0;
        layer.weights[3] = 5.0;
        ClassifierModel::from_mlp(Mlp { layers: vec![layer] }, 2).unwrap()
    }

    #[test]
    fn zero_accuracy_classifier_errors_out() {
        let data = toy_dataset(6);
        let clf = broken_classifier();
        let flow = FlowModel::identity(4);
        let cfg = EvalConfig::new(AttackKind::Flow, 1);
        let err = evaluate(&data, &flow, &clf, &cfg).unwrap_err();
        assert!(matches!(err, Error::EmptyEligibleSet(_)), "{err:?}");
    }

    #[test]
    fn misclassified_examples_are_skipped() {
        let data = toy_dataset(6);
        // Weak margin: classifier still gets all of toy right, so plant one
        // flipped label instead.
        let mut labels: Vec<u8> = (0..6).map(|i| (i % 2) as u8).collect();
        labels[2] = 1; // actually a class-0 image
        let data = Dataset::new(data.images().clone(), labels, 2, SplitTag::Test).unwrap();
        let clf = halves_classifier(5.0);
        let flow = FlowModel::identity(4);
        let mut cfg = EvalConfig::new(AttackKind::Flow, 3);
        cfg.attack.eps = 0.5;
        cfg.attack.max_iters = 50;
        let eval = evaluate(&data, &flow, &clf, &cfg).unwrap();
        assert_eq!(eval.skipped, 1);
        assert_eq!(eval.records.len(), 5);
        assert!(eval.records.iter().all(|r| r.index != 2));
    }

    #[test]
    fn flow_attack_succeeds_on_weak_margin() {
        let data = toy_dataset(4);
        let clf = halves_classifier(0.2); // margin 0.32 in logit space
        let flow = FlowModel::identity(4);
        let mut cfg = EvalConfig::new(AttackKind::Flow, 7);
        cfg.attack.eps = 0.45;
        cfg.attack.max_iters = 100;
        let eval = evaluate(&data, &flow, &clf, &cfg).unwrap();
        assert_eq!(eval.records.len(), 4);
        assert!(eval.records.iter().all(|r| r.success), "{:?}", eval.records);
        assert!(eval.records.iter().all(|r| r.queries >= 1));
    }

    #[test]
    fn pgd_records_zero_queries() {
        let data = toy_dataset(4);
        let clf = halves_classifier(0.2);
        let flow = FlowModel::identity(4);
        let mut cfg = EvalConfig::new(AttackKind::Pgd, 7);
        cfg.attack.eps = 0.45;
        cfg.pgd_steps = 40;
        let eval = evaluate(&data, &flow, &clf, &cfg).unwrap();
        assert!(eval.records.iter().all(|r| r.queries == 0));
        assert!(eval.records.iter().all(|r| r.success));
    }

    #[test]
    fn limit_caps_eligible_examples() {
        let data = toy_dataset(10);
        let clf = halves_classifier(5.0);
        let flow = FlowModel::identity(4);
        let mut cfg = EvalConfig::new(AttackKind::Flow, 7);
        cfg.limit = 3;
        cfg.attack.eps = 0.45;
        cfg.attack.max_iters = 5;
        cfg.attack.budget = 200;
        let eval = evaluate(&data, &flow, &clf, &cfg).unwrap();
        assert_eq!(eval.records.len(), 3);
    }

    #[test]
    fn deterministic_across_runs() {
        let data = toy_dataset(4);
        let clf = halves_classifier(0.5);
        let flow = FlowModel::identity(4);
        let mut cfg = EvalConfig::new(AttackKind::Flow, 11);
        cfg.attack.eps = 0.3;
        cfg.attack.max_iters = 20;
        cfg.attack.budget = 500;
        let a = evaluate(&data, &flow, &clf, &cfg).unwrap();
        let b = evaluate(&data, &flow, &clf, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
