//! Deterministic random source.
//!
//! The generator is SplitMix64 (Steele, Lea & Flood 2014): a 64-bit counter
//! advanced by the golden-ratio increment and scrambled by two xor-shift
//! multiplies. Standard-normal draws use the Box-Muller transform with the
//! second variate cached. The algorithm is fixed: the same seed and call
//! sequence produce bit-identical output on every platform and in every
//! version of this crate.

use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9E3779B97F4A7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prng {
    state: u64,
    cached_normal: Option<f32>,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Prng {
            state: seed,
            cached_normal: None,
        }
    }

    /// Independent stream derived from a seed and a stream index, for
    /// per-example or per-worker randomness.
    pub fn derived(seed: u64, stream: u64) -> Self {
        Prng::new(mix(seed ^ mix(stream.wrapping_add(GOLDEN))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in [0, 1) with 24 bits of mantissa.
    pub fn uniform(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 / (1u32 << 24) as f32
    }

    pub fn uniform_range(&mut self, lo: f32, hi: f32) -> f32 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal draw via Box-Muller.
    pub fn standard_normal(&mut self) -> f32 {
        if let Some(v) = self.cached_normal.take() {
            return v;
        }
        // u1 in (0, 1] so the log is finite.
        let u1 = ((self.next_u64() >> 40) + 1) as f64 / (1u64 << 24) as f64;
        let u2 = (self.next_u64() >> 40) as f64 / (1u64 << 24) as f64;
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.cached_normal = Some((r * theta.sin()) as f32);
        (r * theta.cos()) as f32
    }

    pub fn fill_standard_normal(&mut self, out: &mut [f32]) {
        for v in out {
            *v = self.standard_normal();
        }
    }

    pub fn standard_normal_vec(&mut self, n: usize) -> Vec<f32> {
        (0..n).map(|_| self.standard_normal()).collect()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Random permutation of 0..n.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Prng::new(42);
        let mut b = Prng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
            assert_eq!(a.standard_normal().to_bits(), b.standard_normal().to_bits());
        }
    }

    #[test]
    fn different_streams_diverge() {
        let mut a = Prng::derived(7, 0);
        let mut b = Prng::derived(7, 1);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn normal_moments() {
        let mut p = Prng::new(1234);
        let n = 100_000;
        let draws = p.standard_normal_vec(n);
        let mean: f64 = draws.iter().map(|&x| x as f64).sum::<f64>() / n as f64;
        let var: f64 =
            draws.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut p = Prng::new(9);
        for _ in 0..10_000 {
            let u = p.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut p = Prng::new(3);
        let perm = p.permutation(17);
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..17).collect::<Vec<_>>());
    }
}
