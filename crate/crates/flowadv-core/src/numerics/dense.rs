//! Fully-connected layers with hand-written reverse-mode gradients.

use crate::error::{Error, Result};
use crate::numerics::prng::Prng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    LeakyRelu(f32),
    Tanh,
}

impl Activation {
    fn apply(&self, x: f32) -> f32 {
        match *self {
            Activation::Identity => x,
            Activation::LeakyRelu(slope) => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative at pre-activation `x`.
    fn deriv(&self, x: f32) -> f32 {
        match *self {
            Activation::Identity => 1.0,
            Activation::LeakyRelu(slope) => {
                if x >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

/// y = act(Wx + b), weights stored row-major [out × in].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

/// What `backward` needs from the matching forward call.
#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Vec<f32>,
    pre: Vec<f32>,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        DenseLayer {
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            in_dim,
            out_dim,
            activation,
        }
    }

    /// He-style initialization: N(0, 2/in_dim) weights, zero bias.
    pub fn he_init(in_dim: usize, out_dim: usize, activation: Activation, prng: &mut Prng) -> Self {
        let scale = (2.0 / in_dim as f32).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| scale * prng.standard_normal())
            .collect();
        DenseLayer {
            weights,
            bias: vec![0.0; out_dim],
            in_dim,
            out_dim,
            activation,
        }
    }

    pub fn forward(&self, x: &[f32]) -> Result<(Vec<f32>, DenseCache)> {
        if x.len() != self.in_dim {
            return Err(Error::ShapeMismatch(format!(
                "dense layer expects input width {}, got {}",
                self.in_dim,
                x.len()
            )));
        }
        let mut pre = self.bias.clone();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = 0.0f32;
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            pre[o] += acc;
        }
        let y = pre.iter().map(|&p| self.activation.apply(p)).collect();
        Ok((
            y,
            DenseCache {
                input: x.to_vec(),
                pre,
            },
        ))
    }

    /// Exact reverse-mode gradients. Writes parameter gradients (accumulating)
    /// into `grad_w`/`grad_b` and returns the gradient w.r.t. the input.
    pub fn backward(
        &self,
        cache: &DenseCache,
        grad_out: &[f32],
        grad_w: &mut [f32],
        grad_b: &mut [f32],
    ) -> Result<Vec<f32>> {
        if cache.input.len() != self.in_dim || cache.pre.len() != self.out_dim {
            return Err(Error::ShapeMismatch("dense cache does not match layer".into()));
        }
        if grad_out.len() != self.out_dim
            || grad_w.len() != self.weights.len()
            || grad_b.len() != self.bias.len()
        {
            return Err(Error::ShapeMismatch("dense backward gradient widths".into()));
        }
        let mut grad_in = vec![0.0f32; self.in_dim];
        for o in 0..self.out_dim {
            let g = grad_out[o] * self.activation.deriv(cache.pre[o]);
            grad_b[o] += g;
            if g == 0.0 {
                continue;
            }
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grad_w[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * cache.input[i];
                grad_in[i] += g * row[i];
            }
        }
        Ok(grad_in)
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn export_params(&self, out: &mut Vec<f32>) {
        out.extend_from_slice(&self.weights);
        out.extend_from_slice(&self.bias);
    }

    /// Reads parameters back in `export_params` order; returns entries consumed.
    pub fn import_params(&mut self, src: &[f32]) -> usize {
        let nw = self.weights.len();
        let nb = self.bias.len();
        self.weights.copy_from_slice(&src[..nw]);
        self.bias.copy_from_slice(&src[nw..nw + nb]);
        nw + nb
    }
}

/// A small stack of dense layers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    layers: Vec<DenseCache>,
}

impl Mlp {
    /// Hidden layers use leaky-ReLU, the final layer is linear.
    /// `zero_last` zero-initializes the output layer (identity start for
    /// coupling subnets).
    pub fn new(
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        leaky_slope: f32,
        zero_last: bool,
        prng: &mut Prng,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = in_dim;
        for &h in hidden {
            layers.push(DenseLayer::he_init(
                prev,
                h,
                Activation::LeakyRelu(leaky_slope),
                prng,
            ));
            prev = h;
        }
        let last = if zero_last {
            DenseLayer::zeros(prev, out_dim, Activation::Identity)
        } else {
            DenseLayer::he_init(prev, out_dim, Activation::Identity, prng)
        };
        layers.push(last);
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward(&self, x: &[f32]) -> Result<(Vec<f32>, MlpCache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let (y, cache) = layer.forward(&cur)?;
            caches.push(cache);
            cur = y;
        }
        Ok((cur, MlpCache { layers: caches }))
    }

    /// Gradients land in `grads` laid out in `export_params` order.
    pub fn backward(
        &self,
        cache: &MlpCache,
        grad_out: &[f32],
        grads: &mut [f32],
    ) -> Result<Vec<f32>> {
        if grads.len() != self.param_count() {
            return Err(Error::ShapeMismatch("mlp gradient buffer size".into()));
        }
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.param_count();
        }
        let mut g = grad_out.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let start = offsets[i];
            let nw = layer.weights.len();
            let (gw, gb) = grads[start..start + layer.param_count()].split_at_mut(nw);
            g = layer.backward(&cache.layers[i], &g, gw, gb)?;
        }
        Ok(g)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    pub fn export_params(&self, out: &mut Vec<f32>) {
        for l in &self.layers {
            l.export_params(out);
        }
    }

    pub fn import_params(&mut self, src: &[f32]) -> usize {
        let mut off = 0;
        for l in &mut self.layers {
            off += l.import_params(&src[off..]);
        }
        off
    }
}
