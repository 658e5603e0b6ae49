//! Affine coupling pair: two consecutive Real-NVP layers with the halves
//! alternating, every log-scale passed through the soft clamp before exp.
//!
//! Forward (base → data) on z = (z1, z2):
//!   x1 = z1 ⊙ exp(s̃1(z2)) + t1(z2)
//!   x2 = z2 ⊙ exp(s̃2(x1)) + t2(x1)
//! with s̃ = clamp_scale(s, α) and logdet = Σ s̃1 + Σ s̃2.

use crate::error::{Error, Result};
use crate::flow::clamp::{clamp_scale, clamp_scale_deriv};
use crate::numerics::dense::{Mlp, MlpCache};
use crate::numerics::prng::Prng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingPair {
    pub s1: Mlp,
    pub t1: Mlp,
    pub s2: Mlp,
    pub t2: Mlp,
    pub alpha: f32,
    half: usize,
}

/// State saved by the encode pass for the backward pass.
#[derive(Debug, Clone)]
pub struct CouplingCache {
    x1: Vec<f32>,
    z1: Vec<f32>,
    z2: Vec<f32>,
    s1_pre: Vec<f32>,
    s2_pre: Vec<f32>,
    c1: Vec<f32>,
    c2: Vec<f32>,
    s1_cache: MlpCache,
    t1_cache: MlpCache,
    s2_cache: MlpCache,
    t2_cache: MlpCache,
}

impl CouplingPair {
    /// Subnets are MLPs with `hidden` leaky-ReLU layers; final layers start
    /// at zero so the fresh coupling is the identity map.
    pub fn new(
        width: usize,
        hidden: &[usize],
        alpha: f32,
        leaky_slope: f32,
        prng: &mut Prng,
    ) -> Result<Self> {
        if width < 2 || width % 2 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "coupling width must be even and >= 2, got {width}"
            )));
        }
        let half = width / 2;
        let subnet = |p: &mut Prng| Mlp::new(half, hidden, half, leaky_slope, true, p);
        Ok(CouplingPair {
            s1: subnet(prng),
            t1: subnet(prng),
            s2: subnet(prng),
            t2: subnet(prng),
            alpha,
            half,
        })
    }

    pub fn width(&self) -> usize {
        2 * self.half
    }

    fn check_width(&self, v: &[f32]) -> Result<()> {
        if v.len() != self.width() {
            return Err(Error::ShapeMismatch(format!(
                "coupling expects width {}, got {}",
                self.width(),
                v.len()
            )));
        }
        Ok(())
    }

    fn subnet_eval(&self, net: &Mlp, input: &[f32]) -> Result<Vec<f32>> {
        let (out, _) = net.forward(input)?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("coupling subnet output".into()));
        }
        Ok(out)
    }

    /// Base → data map; returns (x, logdet of the forward Jacobian).
    pub fn forward(&self, z: &[f32]) -> Result<(Vec<f32>, f64)> {
        self.check_width(z)?;
        let (z1, z2) = z.split_at(self.half);
        let s1_pre = self.subnet_eval(&self.s1, z2)?;
        let t1 = self.subnet_eval(&self.t1, z2)?;
        let mut logdet = 0.0f64;
        let x1: Vec<f32> = (0..self.half)
            .map(|i| {
                let c = clamp_scale(s1_pre[i], self.alpha);
                logdet += c as f64;
                z1[i] * c.exp() + t1[i]
            })
            .collect();
        let s2_pre = self.subnet_eval(&self.s2, &x1)?;
        let t2 = self.subnet_eval(&self.t2, &x1)?;
        let x2: Vec<f32> = (0..self.half)
            .map(|i| {
                let c = clamp_scale(s2_pre[i], self.alpha);
                logdet += c as f64;
                z2[i] * c.exp() + t2[i]
            })
            .collect();
        let mut x = x1;
        x.extend(x2);
        Ok((x, logdet))
    }

    /// Data → base map; returns (z, logdet of the *forward* Jacobian at the
    /// recovered z). The inverse-direction logdet is its negation.
    pub fn inverse(&self, x: &[f32]) -> Result<(Vec<f32>, f64)> {
        let (z, logdet, _) = self.inverse_cached(x)?;
        Ok((z, logdet))
    }

    pub fn inverse_cached(&self, x: &[f32]) -> Result<(Vec<f32>, f64, CouplingCache)> {
        self.check_width(x)?;
        let (x1, x2) = x.split_at(self.half);
        let (s2_pre, s2_cache) = self.s2.forward(x1)?;
        let (t2, t2_cache) = self.t2.forward(x1)?;
        let mut logdet = 0.0f64;
        let mut c2 = vec![0.0f32; self.half];
        let z2: Vec<f32> = (0..self.half)
            .map(|i| {
                c2[i] = clamp_scale(s2_pre[i], self.alpha);
                logdet += c2[i] as f64;
                (x2[i] - t2[i]) * (-c2[i]).exp()
            })
            .collect();
        let (s1_pre, s1_cache) = self.s1.forward(&z2)?;
        let (t1, t1_cache) = self.t1.forward(&z2)?;
        let mut c1 = vec![0.0f32; self.half];
        let z1: Vec<f32> = (0..self.half)
            .map(|i| {
                c1[i] = clamp_scale(s1_pre[i], self.alpha);
                logdet += c1[i] as f64;
                (x1[i] - t1[i]) * (-c1[i]).exp()
            })
            .collect();
        if z1.iter().chain(&z2).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("coupling inverse output".into()));
        }
        let cache = CouplingCache {
            x1: x1.to_vec(),
            z1: z1.clone(),
            z2: z2.clone(),
            s1_pre,
            s2_pre,
            c1,
            c2,
            s1_cache,
            t1_cache,
            s2_cache,
            t2_cache,
        };
        let mut z = z1;
        z.extend(z2);
        Ok((z, logdet, cache))
    }

    /// Backward pass through the encode (data → base) direction.
    ///
    /// `grad_z` is ∂L/∂z. `logdet_coeff` is the coefficient of
    /// (Σ s̃1 + Σ s̃2) in the loss; for negative log-likelihood this is +1
    /// because the loss contains −logdet_inverse = +Σ s̃.
    /// Parameter gradients accumulate into `grads` in export order
    /// (s1, t1, s2, t2); returns ∂L/∂x.
    pub fn backward_encode(
        &self,
        cache: &CouplingCache,
        grad_z: &[f32],
        logdet_coeff: f32,
        grads: &mut [f32],
    ) -> Result<Vec<f32>> {
        self.check_width(grad_z)?;
        if grads.len() != self.param_count() {
            return Err(Error::ShapeMismatch("coupling gradient buffer size".into()));
        }
        let h = self.half;
        let (g1, g2) = grad_z.split_at(h);
        let (gs1, rest) = grads.split_at_mut(self.s1.param_count());
        let (gt1, rest) = rest.split_at_mut(self.t1.param_count());
        let (gs2, gt2) = rest.split_at_mut(self.s2.param_count());

        // z1 = (x1 - t1(z2)) * exp(-c1)
        let e1: Vec<f32> = cache.c1.iter().map(|&c| (-c).exp()).collect();
        let grad_c1: Vec<f32> = (0..h)
            .map(|i| -g1[i] * cache.z1[i] + logdet_coeff)
            .collect();
        let grad_s1_pre: Vec<f32> = (0..h)
            .map(|i| grad_c1[i] * clamp_scale_deriv(cache.s1_pre[i], self.alpha))
            .collect();
        let grad_t1: Vec<f32> = (0..h).map(|i| -g1[i] * e1[i]).collect();
        let mut grad_z2: Vec<f32> = g2.to_vec();
        let from_s1 = self.s1.backward(&cache.s1_cache, &grad_s1_pre, gs1)?;
        let from_t1 = self.t1.backward(&cache.t1_cache, &grad_t1, gt1)?;
        for i in 0..h {
            grad_z2[i] += from_s1[i] + from_t1[i];
        }

        // z2 = (x2 - t2(x1)) * exp(-c2)
        let e2: Vec<f32> = cache.c2.iter().map(|&c| (-c).exp()).collect();
        let grad_c2: Vec<f32> = (0..h)
            .map(|i| -grad_z2[i] * cache.z2[i] + logdet_coeff)
            .collect();
        let grad_s2_pre: Vec<f32> = (0..h)
            .map(|i| grad_c2[i] * clamp_scale_deriv(cache.s2_pre[i], self.alpha))
            .collect();
        let grad_t2: Vec<f32> = (0..h).map(|i| -grad_z2[i] * e2[i]).collect();
        let grad_x2: Vec<f32> = (0..h).map(|i| grad_z2[i] * e2[i]).collect();
        let mut grad_x1: Vec<f32> = (0..h).map(|i| g1[i] * e1[i]).collect();
        let from_s2 = self.s2.backward(&cache.s2_cache, &grad_s2_pre, gs2)?;
        let from_t2 = self.t2.backward(&cache.t2_cache, &grad_t2, gt2)?;
        for i in 0..h {
            grad_x1[i] += from_s2[i] + from_t2[i];
        }
        debug_assert_eq!(cache.x1.len(), h);

        let mut grad_x = grad_x1;
        grad_x.extend(grad_x2);
        Ok(grad_x)
    }

    pub fn param_count(&self) -> usize {
        self.s1.param_count()
            + self.t1.param_count()
            + self.s2.param_count()
            + self.t2.param_count()
    }

    pub fn export_params(&self, out: &mut Vec<f32>) {
        self.s1.export_params(out);
        self.t1.export_params(out);
        self.s2.export_params(out);
        self.t2.export_params(out);
    }

    pub fn import_params(&mut self, src: &[f32]) -> usize {
        let mut off = self.s1.import_params(src);
        off += self.t1.import_params(&src[off..]);
        off += self.s2.import_params(&src[off..]);
        off += self.t2.import_params(&src[off..]);
        off
    }

    /// Fill every subnet parameter with scale·N(0,1); test helper for
    /// exercising non-identity couplings.
    pub fn randomize_params(&mut self, prng: &mut Prng, scale: f32) {
        for net in [&mut self.s1, &mut self.t1, &mut self.s2, &mut self.t2] {
            for layer in &mut net.layers {
                for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                    *w = scale * prng.standard_normal();
                }
            }
        }
    }

    /// Swaps hidden leaky-ReLU activations for tanh. The logdet and backward
    /// identities are activation-agnostic; finite-difference oracles use this
    /// because central differences straddling a leaky-ReLU kink misestimate
    /// the local derivative.
    pub fn smooth_activations(&mut self) {
        use crate::numerics::dense::Activation;
        for net in [&mut self.s1, &mut self.t1, &mut self.s2, &mut self.t2] {
            for layer in &mut net.layers {
                if matches!(layer.activation, Activation::LeakyRelu(_)) {
                    layer.activation = Activation::Tanh;
                }
            }
        }
    }

    /// Pin a subnet to a constant output (zero weights, fixed bias on the
    /// final layer); used by hand-computed examples.
    pub fn set_constant_subnet(net: &mut Mlp, value: f32) {
        for layer in &mut net.layers {
            for w in &mut layer.weights {
                *w = 0.0;
            }
            for b in &mut layer.bias {
                *b = 0.0;
            }
        }
        if let Some(last) = net.layers.last_mut() {
            for b in &mut last.bias {
                *b = value;
            }
        }
    }
}
