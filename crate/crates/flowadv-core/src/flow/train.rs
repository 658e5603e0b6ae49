//! Maximum-likelihood flow training with Adam and an exponential learning
//! rate schedule.

use crate::data::{dequantize_pixels, Dataset};
use crate::error::{Error, Result};
use crate::flow::model::{FlowConfig, FlowModel};
use crate::numerics::adam::{AdamConfig, AdamState};
use crate::numerics::prng::Prng;
use crate::numerics::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTrainConfig {
    pub flow: FlowConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f32,
    pub lr_final: f32,
    pub seed: u64,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        FlowTrainConfig {
            flow: FlowConfig::default(),
            epochs: 30,
            batch_size: 64,
            lr_initial: 1e-4,
            lr_final: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowTraining {
    pub model: FlowModel,
    /// Mean train NLL (nats) per epoch.
    pub epoch_nll: Vec<f32>,
}

/// Trains by backpropagating −log p(x) through every block. Images are
/// dequantized with fresh seeded noise each batch. On divergence the last
/// epoch's parameters are restored and an error is returned; `epoch_cb` runs
/// after every completed epoch (checkpointing hook).
pub fn train_flow(
    dataset: &Dataset,
    cfg: &FlowTrainConfig,
    mut epoch_cb: impl FnMut(&FlowModel, usize, f32) -> Result<()>,
) -> Result<FlowTraining> {
    if dataset.is_empty() {
        return Err(Error::EmptyEligibleSet("flow training dataset".into()));
    }
    if dataset.image_dim() != cfg.flow.dim() {
        return Err(Error::ShapeMismatch(format!(
            "dataset dim {} vs flow dim {}",
            dataset.image_dim(),
            cfg.flow.dim()
        )));
    }
    let mut model = FlowModel::build(&cfg.flow, cfg.seed)?;
    let mut params = model.export_params();
    let mut adam = AdamState::new(
        params.len(),
        AdamConfig {
            lr: cfg.lr_initial,
            ..AdamConfig::default()
        },
    );
    let mut prng = Prng::derived(cfg.seed, 0xF70);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut grads = vec![0.0f32; params.len()];
    let mut epoch_nll = Vec::with_capacity(cfg.epochs);
    let mut last_good = params.clone();

    for epoch in 0..cfg.epochs {
        // Exponential decay from lr_initial to lr_final.
        let frac = if cfg.epochs > 1 {
            epoch as f32 / (cfg.epochs - 1) as f32
        } else {
            0.0
        };
        adam.cfg.lr = cfg.lr_initial * (cfg.lr_final / cfg.lr_initial).powf(frac);

        prng.shuffle(&mut order);
        let mut epoch_sum = 0.0f64;
        let mut epoch_count = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_sum = 0.0f64;
            let mut ok = true;
            for &idx in batch {
                let mut img = dataset.image(idx).to_vec();
                dequantize_pixels(&mut img, &mut prng);
                match model.nll_with_grad(&img, &mut grads) {
                    Ok(nats) if nats.is_finite() => batch_sum += nats as f64,
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f32;
            grads.iter_mut().for_each(|g| *g *= scale);
            if !ok || adam.step(&mut params, &grads).is_err() {
                model.import_params(&last_good)?;
                return Err(Error::Diverged {
                    epoch,
                    message: "non-finite NLL or gradient; parameters rolled back".into(),
                });
            }
            model.import_params(&params)?;
            epoch_sum += batch_sum;
            epoch_count += batch.len();
        }
        let mean_nll = (epoch_sum / epoch_count as f64) as f32;
        epoch_nll.push(mean_nll);
        last_good.copy_from_slice(&params);
        epoch_cb(&model, epoch, mean_nll)?;
    }
    Ok(FlowTraining { model, epoch_nll })
}

/// Draws `count` images from z ~ N(0, temperature²·I). Temperature 0 yields
/// the single image f(0).
pub fn sample(
    model: &FlowModel,
    count: usize,
    temperature: f32,
    prng: &mut Prng,
) -> Result<Vec<Tensor>> {
    if temperature < 0.0 {
        return Err(Error::Domain(format!(
            "sample temperature must be >= 0, got {temperature}"
        )));
    }
    let (c, h, w) = model.input_shape();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let z: Vec<f32> = (0..model.dim())
            .map(|_| temperature * prng.standard_normal())
            .collect();
        let x = model.decode(&z)?;
        out.push(Tensor::new(vec![c, h, w], x)?);
    }
    Ok(out)
}

/// Moving average with window 3, for the monotone-improvement check on noisy
/// epoch traces.
pub fn smooth_trace(trace: &[f32]) -> Vec<f32> {
    trace
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let lo = i.saturating_sub(1);
            let hi = (i + 2).min(trace.len());
            trace[lo..hi].iter().sum::<f32>() / (hi - lo) as f32
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_shapes;

    fn quick_cfg() -> FlowTrainConfig {
        FlowTrainConfig {
            flow: FlowConfig {
                hidden_width: 16,
                hidden_layers: 1,
                hi_blocks: 1,
                lo_blocks: 1,
                fc_blocks: 1,
                ..FlowConfig::default()
            },
            epochs: 3,
            batch_size: 32,
            lr_initial: 1e-3,
            lr_final: 1e-4,
            seed: 5,
        }
    }

    #[test]
    fn short_training_improves_nll() {
        let data = gen_shapes(256, 3, 8, 0.15, 3).unwrap();
        let out = train_flow(&data, &quick_cfg(), |_, _, _| Ok(())).unwrap();
        assert_eq!(out.epoch_nll.len(), 3);
        assert!(
            out.epoch_nll.last().unwrap() < &out.epoch_nll[0],
            "trace {:?}",
            out.epoch_nll
        );
    }

    #[test]
    fn training_is_deterministic() {
        let data = gen_shapes(128, 2, 8, 0.1, 4).unwrap();
        let mut cfg = quick_cfg();
        cfg.epochs = 2;
        let a = train_flow(&data, &cfg, |_, _, _| Ok(())).unwrap();
        let b = train_flow(&data, &cfg, |_, _, _| Ok(())).unwrap();
        assert_eq!(a.epoch_nll, b.epoch_nll);
        assert_eq!(a.model.export_params(), b.model.export_params());
    }

    #[test]
    fn sample_temperature_zero_is_deterministic_image() {
        let data = gen_shapes(128, 2, 8, 0.1, 4).unwrap();
        let mut cfg = quick_cfg();
        cfg.epochs = 1;
        let out = train_flow(&data, &cfg, |_, _, _| Ok(())).unwrap();
        let mut prng = Prng::new(1);
        let imgs = sample(&out.model, 3, 0.0, &mut prng).unwrap();
        assert_eq!(imgs[0], imgs[1]);
        assert_eq!(imgs[1], imgs[2]);
    }

    #[test]
    fn samples_stay_in_unit_range() {
        let data = gen_shapes(128, 2, 8, 0.1, 4).unwrap();
        let out = train_flow(&data, &quick_cfg(), |_, _, _| Ok(())).unwrap();
        let mut prng = Prng::new(2);
        for img in sample(&out.model, 20, 1.0, &mut prng).unwrap() {
            assert!(img.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn smooth_trace_window() {
        let t = vec![4.0, 2.0, 3.0, 1.0];
        let s = smooth_trace(&t);
        assert_eq!(s.len(), 4);
        assert!((s[0] - 3.0).abs() < 1e-6);
        assert!((s[1] - 3.0).abs() < 1e-6);
        assert!((s[2] - 2.0).abs() < 1e-6);
        assert!((s[3] - 2.0).abs() < 1e-6);
    }
}
