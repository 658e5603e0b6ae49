//! Multi-scale flow: an ordered composition of invertible blocks with exact
//! per-block log-determinants.
//!
//! Blocks are stored in *encode* order (data → base). `encode` runs them as
//! stored and accumulates the inverse-direction log-determinant; `decode`
//! runs the inverses in reverse order. After the split marker the passthrough
//! three-quarters of the vector is frozen and later blocks act on the tail
//! quarter only, so the base vector is the concatenation
//! [passthrough (¾ d) | transformed quarter] and d is preserved everywhere.

use crate::error::{Error, Result};
use crate::flow::blocks::{
    logit_inverse, logit_preprocess, split_point, squeeze_permutation, Permutation,
    PreprocessCfg,
};
use crate::flow::coupling::{CouplingCache, CouplingPair};
use crate::numerics::prng::Prng;
use serde::{Deserialize, Serialize};

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum BlockKind {
    Logit(PreprocessCfg),
    Coupling(CouplingPair),
    Permute(Permutation),
    Squeeze { c: usize, h: usize, w: usize, perm: Permutation },
    Split { passthrough: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Block {
    pub kind: BlockKind,
    /// Start of the slice this block acts on (non-zero after a split).
    pub offset: usize,
}

/// Architecture hyperparameters; the default is the 1×8×8 two-level layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub alpha: f32,
    pub delta: f32,
    pub leaky_slope: f32,
    pub hi_blocks: usize,
    pub lo_blocks: usize,
    pub fc_blocks: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            channels: 1,
            height: 8,
            width: 8,
            hidden_width: 64,
            hidden_layers: 2,
            alpha: 1.5,
            delta: 0.05,
            leaky_slope: 0.1,
            hi_blocks: 4,
            lo_blocks: 6,
            fc_blocks: 6,
        }
    }
}

impl FlowConfig {
    pub fn dim(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Negative log-likelihood, in raw nats and nats per dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nll {
    pub nats: f32,
    pub per_dim: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowModel {
    blocks: Vec<Block>,
    input_shape: (usize, usize, usize),
    dim: usize,
    pub seed: u64,
}

enum BlockCache {
    Coupling(CouplingCache),
    Other,
}

impl FlowModel {
    /// The trivial flow: decode(z) = z. Used by attack tests that need the
    /// latent search to happen directly in image space.
    pub fn identity(dim: usize) -> Self {
        FlowModel {
            blocks: Vec::new(),
            input_shape: (1, 1, dim),
            dim,
            seed: 0,
        }
    }

    pub fn from_blocks(
        blocks: Vec<Block>,
        input_shape: (usize, usize, usize),
        seed: u64,
    ) -> Self {
        let dim = input_shape.0 * input_shape.1 * input_shape.2;
        FlowModel {
            blocks,
            input_shape,
            dim,
            seed,
        }
    }

    /// Two-level architecture: logit → hi-res coupling pairs → squeeze →
    /// low-res coupling pairs → split ¾ → fully-connected coupling pairs on
    /// the remaining quarter. Permutations are seeded from `seed` and a fresh
    /// one precedes every coupling pair after the first of each stage.
    pub fn build(cfg: &FlowConfig, seed: u64) -> Result<Self> {
        let d = cfg.dim();
        if cfg.height % 2 != 0 || cfg.width % 2 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "flow input needs even spatial dims, got {}x{}",
                cfg.height, cfg.width
            )));
        }
        if d % 4 != 0 || (d / 4) % 2 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "flow dimension {d} must be divisible by 4 with an even quarter"
            )));
        }
        let hidden = vec![cfg.hidden_width; cfg.hidden_layers];
        let mut perm_rng = Prng::derived(seed, 0);
        let mut init_rng = Prng::derived(seed, 1);
        let mut blocks = Vec::new();
        blocks.push(Block {
            kind: BlockKind::Logit(PreprocessCfg { delta: cfg.delta }),
            offset: 0,
        });
        let coupling = |width: usize, offset: usize, init: &mut Prng| -> Result<Block> {
            Ok(Block {
                kind: BlockKind::Coupling(CouplingPair::new(
                    width,
                    &hidden,
                    cfg.alpha,
                    cfg.leaky_slope,
                    init,
                )?),
                offset,
            })
        };
        for i in 0..cfg.hi_blocks {
            if i > 0 {
                blocks.push(Block {
                    kind: BlockKind::Permute(Permutation::new(perm_rng.permutation(d))?),
                    offset: 0,
                });
            }
            blocks.push(coupling(d, 0, &mut init_rng)?);
        }
        blocks.push(Block {
            kind: BlockKind::Squeeze {
                c: cfg.channels,
                h: cfg.height,
                w: cfg.width,
                perm: squeeze_permutation(cfg.channels, cfg.height, cfg.width)?,
            },
            offset: 0,
        });
        for _ in 0..cfg.lo_blocks {
            blocks.push(Block {
                kind: BlockKind::Permute(Permutation::new(perm_rng.permutation(d))?),
                offset: 0,
            });
            blocks.push(coupling(d, 0, &mut init_rng)?);
        }
        let pass = split_point(d)?;
        let tail = d - pass;
        blocks.push(Block {
            kind: BlockKind::Split { passthrough: pass },
            offset: 0,
        });
        for _ in 0..cfg.fc_blocks {
            blocks.push(Block {
                kind: BlockKind::Permute(Permutation::new(perm_rng.permutation(tail))?),
                offset: pass,
            });
            blocks.push(coupling(tail, pass, &mut init_rng)?);
        }
        Ok(FlowModel {
            blocks,
            input_shape: (cfg.channels, cfg.height, cfg.width),
            dim: d,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    fn check_dim(&self, v: &[f32]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "flow expects dimension {}, got {}",
                self.dim,
                v.len()
            )));
        }
        Ok(())
    }

    fn block_len(&self, block: &Block) -> usize {
        match &block.kind {
            BlockKind::Logit(_) => self.dim,
            BlockKind::Coupling(c) => c.width(),
            BlockKind::Permute(p) => p.len(),
            BlockKind::Squeeze { perm, .. } => perm.len(),
            BlockKind::Split { .. } => 0,
        }
    }

    /// Data → base. Returns (z, logdet of the inverse map f⁻¹ at x).
    pub fn encode(&self, x: &[f32]) -> Result<(Vec<f32>, f64)> {
        let (z, logdet, _) = self.encode_inner(x, false)?;
        Ok((z, logdet))
    }

    fn encode_inner(
        &self,
        x: &[f32],
        with_cache: bool,
    ) -> Result<(Vec<f32>, f64, Vec<BlockCache>)> {
        self.check_dim(x)?;
        let mut cur = x.to_vec();
        let mut logdet = 0.0f64;
        let mut caches = Vec::new();
        for (bi, block) in self.blocks.iter().enumerate() {
            let len = self.block_len(block);
            let slice = &mut cur[block.offset..block.offset + len];
            let cache = match &block.kind {
                BlockKind::Logit(cfg) => {
                    let (y, ld) = logit_preprocess(slice, *cfg)?;
                    slice.copy_from_slice(&y);
                    logdet += ld;
                    BlockCache::Other
                }
                BlockKind::Coupling(c) => {
                    if with_cache {
                        let (z, ld_fwd, cache) = c.inverse_cached(slice)?;
                        slice.copy_from_slice(&z);
                        logdet -= ld_fwd;
                        BlockCache::Coupling(cache)
                    } else {
                        let (z, ld_fwd) = c.inverse(slice)?;
                        slice.copy_from_slice(&z);
                        logdet -= ld_fwd;
                        BlockCache::Other
                    }
                }
                BlockKind::Permute(p) | BlockKind::Squeeze { perm: p, .. } => {
                    let y = p.apply(slice);
                    slice.copy_from_slice(&y);
                    BlockCache::Other
                }
                BlockKind::Split { .. } => BlockCache::Other,
            };
            if slice.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("flow encode at block {bi}")));
            }
            if with_cache {
                caches.push(cache);
            }
        }
        Ok((cur, logdet, caches))
    }

    /// Base → data: x = f(z).
    pub fn decode(&self, z: &[f32]) -> Result<Vec<f32>> {
        self.check_dim(z)?;
        let mut cur = z.to_vec();
        for (bi, block) in self.blocks.iter().enumerate().rev() {
            let len = self.block_len(block);
            let slice = &mut cur[block.offset..block.offset + len];
            match &block.kind {
                BlockKind::Logit(cfg) => {
                    let x = logit_inverse(slice, *cfg)?;
                    slice.copy_from_slice(&x);
                }
                BlockKind::Coupling(c) => {
                    let (x, _) = c.forward(slice)?;
                    slice.copy_from_slice(&x);
                }
                BlockKind::Permute(p) | BlockKind::Squeeze { perm: p, .. } => {
                    let x = p.apply_inverse(slice);
                    slice.copy_from_slice(&x);
                }
                BlockKind::Split { .. } => {}
            }
            if slice.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("flow decode at block {bi}")));
            }
        }
        Ok(cur)
    }

    /// −log p(x) under a standard-normal base.
    pub fn nll(&self, x: &[f32]) -> Result<Nll> {
        let (z, logdet_inv) = self.encode(x)?;
        let quad: f64 = z.iter().map(|&v| (v as f64) * (v as f64)).sum();
        let nats = 0.5 * quad + 0.5 * LN_2PI * self.dim as f64 - logdet_inv;
        if !nats.is_finite() {
            return Err(Error::NonFinite("nll".into()));
        }
        Ok(Nll {
            nats: nats as f32,
            per_dim: (nats / self.dim as f64) as f32,
        })
    }

    /// −log p(x) and its gradient w.r.t. every coupling parameter,
    /// accumulated into `grads` (export order).
    pub fn nll_with_grad(&self, x: &[f32], grads: &mut [f32]) -> Result<f32> {
        if grads.len() != self.param_count() {
            return Err(Error::ShapeMismatch("flow gradient buffer size".into()));
        }
        let (z, logdet_inv, caches) = self.encode_inner(x, true)?;
        let quad: f64 = z.iter().map(|&v| (v as f64) * (v as f64)).sum();
        let nats = 0.5 * quad + 0.5 * LN_2PI * self.dim as f64 - logdet_inv;
        if !nats.is_finite() {
            return Err(Error::NonFinite("nll".into()));
        }

        // Parameter offsets of couplings in encode order.
        let mut offsets = Vec::with_capacity(self.blocks.len());
        let mut off = 0usize;
        for block in &self.blocks {
            offsets.push(off);
            if let BlockKind::Coupling(c) = &block.kind {
                off += c.param_count();
            }
        }

        // dL/dz = z for the standard-normal quadratic term.
        let mut grad = z;
        for (bi, block) in self.blocks.iter().enumerate().rev() {
            let len = self.block_len(block);
            let slice = &mut grad[block.offset..block.offset + len];
            match &block.kind {
                BlockKind::Coupling(c) => {
                    let BlockCache::Coupling(cache) = &caches[bi] else {
                        return Err(Error::ShapeMismatch("missing coupling cache".into()));
                    };
                    let pstart = offsets[bi];
                    let gx = c.backward_encode(
                        cache,
                        slice,
                        1.0,
                        &mut grads[pstart..pstart + c.param_count()],
                    )?;
                    slice.copy_from_slice(&gx);
                }
                BlockKind::Permute(p) | BlockKind::Squeeze { perm: p, .. } => {
                    let gx = p.apply_inverse(slice);
                    slice.copy_from_slice(&gx);
                }
                BlockKind::Logit(_) | BlockKind::Split { .. } => {
                    // No parameters; input gradients are not needed since the
                    // logit block is first and data is not optimized.
                }
            }
        }
        Ok(nats as f32)
    }

    pub fn param_count(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| match &b.kind {
                BlockKind::Coupling(c) => c.param_count(),
                _ => 0,
            })
            .sum()
    }

    pub fn export_params(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.param_count());
        for block in &self.blocks {
            if let BlockKind::Coupling(c) = &block.kind {
                c.export_params(&mut out);
            }
        }
        out
    }

    pub fn import_params(&mut self, src: &[f32]) -> Result<()> {
        if src.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "flow has {} params, got {}",
                self.param_count(),
                src.len()
            )));
        }
        let mut off = 0;
        for block in &mut self.blocks {
            if let BlockKind::Coupling(c) = &mut block.kind {
                off += c.import_params(&src[off..]);
            }
        }
        Ok(())
    }

    /// Fill every coupling subnet parameter with scale·N(0,1); test helper.
    pub fn randomize_params(&mut self, prng: &mut Prng, scale: f32) {
        for block in &mut self.blocks {
            if let BlockKind::Coupling(c) = &mut block.kind {
                c.randomize_params(prng, scale);
            }
        }
    }
}
