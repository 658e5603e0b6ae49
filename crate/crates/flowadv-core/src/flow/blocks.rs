//! Volume-preserving blocks: index permutations, the space-to-channel
//! squeeze, the ¾ split, and the logit preprocessing pair. All of these have
//! zero log-determinant except the logit map.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Stored bijection on indices. Applying maps y[i] = x[perm[i]].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    perm: Vec<usize>,
}

impl Permutation {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || seen[p] {
                return Err(Error::Domain(format!("invalid permutation entry {p}")));
            }
            seen[p] = true;
        }
        Ok(Permutation { perm })
    }

    pub fn identity(n: usize) -> Self {
        Permutation {
            perm: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.perm
    }

    pub fn apply(&self, x: &[f32]) -> Vec<f32> {
        self.perm.iter().map(|&p| x[p]).collect()
    }

    pub fn apply_inverse(&self, y: &[f32]) -> Vec<f32> {
        let mut x = vec![0.0f32; y.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        x
    }
}

/// Permutation realizing the invertible space-to-channel downsampler:
/// C×H×W → 4C×(H/2)×(W/2), each 2×2 spatial patch becoming 4 channels.
pub fn squeeze_permutation(c: usize, h: usize, w: usize) -> Result<Permutation> {
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "squeeze needs even spatial dims, got {h}x{w}"
        )));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut perm = vec![0usize; c * h * w];
    for cc in 0..c {
        for a in 0..2 {
            for b in 0..2 {
                let oc = cc * 4 + 2 * a + b;
                for i in 0..ho {
                    for j in 0..wo {
                        let out_idx = (oc * ho + i) * wo + j;
                        let in_idx = (cc * h + 2 * i + a) * w + 2 * j + b;
                        perm[out_idx] = in_idx;
                    }
                }
            }
        }
    }
    Permutation::new(perm)
}

/// Index where the ¾ passthrough ends and the active quarter begins.
pub fn split_point(width: usize) -> Result<usize> {
    if width % 4 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "split needs width divisible by 4, got {width}"
        )));
    }
    Ok(width / 4 * 3)
}

/// Splits into (passthrough ¾, active ¼).
pub fn split(x: &[f32]) -> Result<(Vec<f32>, Vec<f32>)> {
    let p = split_point(x.len())?;
    Ok((x[..p].to_vec(), x[p..].to_vec()))
}

/// Concatenates the parts back; exact inverse of `split`.
pub fn merge(passthrough: &[f32], active: &[f32]) -> Vec<f32> {
    let mut out = passthrough.to_vec();
    out.extend_from_slice(active);
    out
}

/// Dequantization margin for the logit preprocessing map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessCfg {
    pub delta: f32,
}

impl Default for PreprocessCfg {
    fn default() -> Self {
        PreprocessCfg { delta: 0.05 }
    }
}

impl PreprocessCfg {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(Error::Domain(format!(
                "preprocess delta must lie in (0, 0.5), got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// [0,1] → ℝ: p = δ + (1−2δ)x, y = ln(p/(1−p)).
/// Returns (y, Σ ln(1−2δ) − ln p − ln(1−p)), the log-derivative of this map.
pub fn logit_preprocess(x: &[f32], cfg: PreprocessCfg) -> Result<(Vec<f32>, f64)> {
    cfg.validate()?;
    let delta = cfg.delta;
    let mut logdet = 0.0f64;
    let mut y = Vec::with_capacity(x.len());
    for &v in x {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!(
                "logit preprocess input {v} outside [0,1]"
            )));
        }
        let p = delta + (1.0 - 2.0 * delta) * v;
        y.push((p / (1.0 - p)).ln());
        logdet +=
            ((1.0 - 2.0 * delta) as f64).ln() - (p as f64).ln() - ((1.0 - p) as f64).ln();
    }
    Ok((y, logdet))
}

/// ℝ → [0,1]: sigmoid then the inverse affine, clamped into [0,1] so decoded
/// images are always valid pixels.
pub fn logit_inverse(y: &[f32], cfg: PreprocessCfg) -> Result<Vec<f32>> {
    cfg.validate()?;
    let delta = cfg.delta;
    Ok(y.iter()
        .map(|&v| {
            let p = 1.0 / (1.0 + (-v).exp());
            ((p - delta) / (1.0 - 2.0 * delta)).clamp(0.0, 1.0)
        })
        .collect())
}
