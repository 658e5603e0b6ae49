use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Dense n-dimensional array of `f32` in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch(format!(
                "zero-sized dimension in shape {shape:?}"
            )));
        }
        if expect != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {expect} entries, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(data: Vec<f32>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {} entries into {shape:?}",
                self.data.len()
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    fn zip_with(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a / b)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&a| f(a)).collect(),
        }
    }

    pub fn add_scalar(&self, s: f32) -> Tensor {
        self.map(|a| a + s)
    }

    pub fn scale(&self, s: f32) -> Tensor {
        self.map(|a| a * s)
    }

    pub fn exp(&self) -> Tensor {
        self.map(f32::exp)
    }

    pub fn ln(&self) -> Result<Tensor> {
        if let Some(&bad) = self.data.iter().find(|&&a| a <= 0.0) {
            return Err(Error::Domain(format!("ln of non-positive value {bad}")));
        }
        Ok(self.map(f32::ln))
    }

    pub fn clip(&self, lo: f32, hi: f32) -> Tensor {
        self.map(|a| a.clamp(lo, hi))
    }

    pub fn sum(&self) -> f32 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f32 {
        self.sum() / self.data.len() as f32
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (&[m, k], &[k2, n]) = (&self.shape[..], &other.shape[..]) else {
            return Err(Error::ShapeMismatch(format!(
                "matmul needs rank-2 operands, got {:?} and {:?}",
                self.shape, other.shape
            )));
        };
        if k != k2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul inner dims differ: {k} vs {k2}"
            )));
        }
        let mut data = vec![0.0f32; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    data[i * n + j] += a * other.data[p * n + j];
                }
            }
        }
        Tensor::new(vec![m, n], data)
    }

    /// Index of the largest entry in the flat data, ties broken toward the
    /// lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.data)
    }
}

/// Ties break toward the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable log-softmax (max-subtraction).
pub fn log_softmax(v: &[f32]) -> Result<Vec<f32>> {
    if v.len() < 2 {
        return Err(Error::Domain(format!(
            "log_softmax needs at least 2 entries, got {}",
            v.len()
        )));
    }
    if v.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("log_softmax input".into()));
    }
    let max = v.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let lse: f32 = v.iter().map(|&a| ((a - max) as f64).exp()).sum::<f64>() as f32;
    let lse = max + lse.ln();
    Ok(v.iter().map(|&a| a - lse).collect())
}

/// ‖a − b‖_p for p ∈ {∞, 2} over flat slices.
pub fn linf_dist(a: &[f32], b: &[f32]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs())
        .fold(0.0, f32::max)
}

pub fn l2_dist(a: &[f32], b: &[f32]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x - y) as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt() as f32
}
