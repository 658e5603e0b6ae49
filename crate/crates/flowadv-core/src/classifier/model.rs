//! The attack target: a small MLP ending in a log-softmax head.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::adam::{AdamConfig, AdamState};
use crate::numerics::dense::Mlp;
use crate::numerics::prng::Prng;
use crate::numerics::tensor::{argmax, log_softmax};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub input_dim: usize,
    pub classes: usize,
    pub hidden: Vec<usize>,
    pub leaky_slope: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            input_dim: 64,
            classes: 3,
            hidden: vec![64, 64],
            leaky_slope: 0.1,
            epochs: 10,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierModel {
    mlp: Mlp,
    pub classes: usize,
}

impl ClassifierModel {
    pub fn new(cfg: &ClassifierConfig) -> Self {
        let mut prng = Prng::derived(cfg.seed, 0xC1F);
        let mlp = Mlp::new(
            cfg.input_dim,
            &cfg.hidden,
            cfg.classes,
            cfg.leaky_slope,
            false,
            &mut prng,
        );
        ClassifierModel {
            mlp,
            classes: cfg.classes,
        }
    }

    /// Direct construction from a logits network, for analytic toy targets.
    pub fn from_mlp(mlp: Mlp, classes: usize) -> Result<Self> {
        if mlp.out_dim() != classes {
            return Err(Error::ShapeMismatch(format!(
                "logits width {} vs {} classes",
                mlp.out_dim(),
                classes
            )));
        }
        Ok(ClassifierModel { mlp, classes })
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.in_dim()
    }

    /// Log-probability vector for one input.
    pub fn logprobs(&self, x: &[f32]) -> Result<Vec<f32>> {
        let (logits, _) = self.mlp.forward(x)?;
        log_softmax(&logits)
    }

    pub fn predict(&self, x: &[f32]) -> Result<usize> {
        Ok(argmax(&self.logprobs(x)?))
    }

    pub fn accuracy(&self, dataset: &Dataset) -> Result<f64> {
        let mut correct = 0usize;
        for i in 0..dataset.len() {
            if self.predict(dataset.image(i))? == dataset.label(i) as usize {
                correct += 1;
            }
        }
        Ok(correct as f64 / dataset.len() as f64)
    }

    /// Gradient of the C&W margin (log p_y − max_{c≠y} log p_c) w.r.t. the
    /// input; zero when the margin is already non-positive. White-box only:
    /// used by PGD and adversarial training, never by black-box attacks.
    pub fn cw_input_grad(&self, x: &[f32], y: usize) -> Result<Vec<f32>> {
        let (logits, cache) = self.mlp.forward(x)?;
        let lp = log_softmax(&logits)?;
        let mut runner = None;
        for (c, &v) in lp.iter().enumerate() {
            if c == y {
                continue;
            }
            if runner.is_none_or(|(_, best)| v > best) {
                runner = Some((c, v));
            }
        }
        let (c_star, best) = runner.ok_or_else(|| Error::Domain("single-class output".into()))?;
        if lp[y] - best <= 0.0 {
            return Ok(vec![0.0; x.len()]);
        }
        // d(l_y - l_c*)/d logits = e_y - e_c* (the softmax terms cancel).
        let mut grad_logits = vec![0.0f32; logits.len()];
        grad_logits[y] = 1.0;
        grad_logits[c_star] = -1.0;
        let mut scratch = vec![0.0f32; self.mlp.param_count()];
        self.mlp.backward(&cache, &grad_logits, &mut scratch)
    }

    /// Cross-entropy loss and parameter gradient for one labeled example.
    fn xent_with_grad(&self, cache_x: &[f32], y: usize, grads: &mut [f32]) -> Result<f32> {
        let (logits, cache) = self.mlp.forward(cache_x)?;
        let lp = log_softmax(&logits)?;
        let loss = -lp[y];
        // d(-l_y)/d logits = softmax - onehot
        let mut grad_logits: Vec<f32> = lp.iter().map(|&v| v.exp()).collect();
        grad_logits[y] -= 1.0;
        self.mlp.backward(&cache, &grad_logits, grads)?;
        Ok(loss)
    }

    pub fn param_count(&self) -> usize {
        self.mlp.param_count()
    }

    pub fn export_params(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.param_count());
        self.mlp.export_params(&mut out);
        out
    }

    pub fn import_params(&mut self, src: &[f32]) -> Result<()> {
        if src.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "classifier has {} params, got {}",
                self.param_count(),
                src.len()
            )));
        }
        self.mlp.import_params(src);
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierTraining {
    pub model: ClassifierModel,
    /// Train accuracy per epoch.
    pub accuracy_trace: Vec<f64>,
}

/// Optional inner attack applied to each training batch.
#[derive(Debug, Clone, Copy)]
pub enum TrainMode {
    Vanilla,
    /// PGD adversarial training: each batch trains on perturbed inputs.
    PgdAdversarial { eps: f32, steps: usize },
}

pub fn train_classifier(
    dataset: &Dataset,
    cfg: &ClassifierConfig,
    mode: TrainMode,
) -> Result<ClassifierTraining> {
    if dataset.is_empty() {
        return Err(Error::EmptyEligibleSet("classifier training dataset".into()));
    }
    if dataset.image_dim() != cfg.input_dim || dataset.classes() != cfg.classes {
        return Err(Error::ShapeMismatch(format!(
            "dataset {}d/{} classes vs config {}d/{}",
            dataset.image_dim(),
            dataset.classes(),
            cfg.input_dim,
            cfg.classes
        )));
    }
    let mut model = ClassifierModel::new(cfg);
    let mut params = model.export_params();
    let mut adam = AdamState::new(
        params.len(),
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut prng = Prng::derived(cfg.seed, 0x7124);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut grads = vec![0.0f32; params.len()];
    let mut accuracy_trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        prng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            for &idx in batch {
                let y = dataset.label(idx) as usize;
                let img: Vec<f32> = match mode {
                    TrainMode::Vanilla => dataset.image(idx).to_vec(),
                    TrainMode::PgdAdversarial { eps, steps } => {
                        let step_size = 2.5 * eps / steps as f32;
                        super::pgd::pgd_attack(&model, dataset.image(idx), y, eps, steps, step_size)?
                    }
                };
                let loss = model.xent_with_grad(&img, y, &mut grads)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        message: "non-finite cross-entropy".into(),
                    });
                }
            }
            let scale = 1.0 / batch.len() as f32;
            grads.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut params, &grads)?;
            model.import_params(&params)?;
        }
        accuracy_trace.push(model.accuracy(dataset)?);
    }
    Ok(ClassifierTraining {
        model,
        accuracy_trace,
    })
}
