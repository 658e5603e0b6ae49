//! ε-ball projection with pixel-range clipping.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    LInf,
    L2,
}

/// Maps a candidate back into {‖· − x_orig‖_p ≤ ε} ∩ [0,1]ᵈ.
///
/// ℓ∞: per-pixel clamp to [x−ε, x+ε], then [0,1]. ℓ2: rescale the residual to
/// norm ε if larger, then clamp to [0,1] (the clamp can only shrink the
/// norm). Idempotent; feasible candidates are returned unchanged, bitwise.
pub fn project(cand: &[f32], orig: &[f32], eps: f32, norm: Norm) -> Vec<f32> {
    debug_assert_eq!(cand.len(), orig.len());
    match norm {
        Norm::LInf => cand
            .iter()
            .zip(orig)
            .map(|(&c, &o)| c.clamp(o - eps, o + eps).clamp(0.0, 1.0))
            .collect(),
        Norm::L2 => {
            let sq: f64 = cand
                .iter()
                .zip(orig)
                .map(|(&c, &o)| {
                    let d = (c - o) as f64;
                    d * d
                })
                .sum();
            let dist = sq.sqrt();
            // Slightly conservative rescale so f32 rounding cannot push the
            // result back outside the ball; keeps re-projection a bitwise no-op.
            let scale = if dist > eps as f64 {
                (eps as f64 / dist * (1.0 - 1e-6)) as f32
            } else {
                1.0
            };
            cand.iter()
                .zip(orig)
                .map(|(&c, &o)| {
                    let v = if scale == 1.0 { c } else { o + scale * (c - o) };
                    v.clamp(0.0, 1.0)
                })
                .collect()
        }
    }
}
