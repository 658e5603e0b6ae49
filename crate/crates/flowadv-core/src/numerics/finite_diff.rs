//! Central-difference oracles used as ground truth by gradient and
//! log-determinant tests.

use crate::error::{Error, Result};

/// Central-difference gradient estimate of a scalar function, with one
/// Richardson step — D = (4·D(h/2) − D(h))/3 — to cancel the O(h²) term so a
/// step large enough to beat f32 rounding noise stays accurate.
pub fn finite_diff_grad(f: impl Fn(&[f32]) -> f32, params: &[f32], h: f32) -> Vec<f32> {
    let mut work = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = work[i];
        // Returns (estimate, actually-applied half step): x ± h rounds in
        // f32, so the denominator must use the realized step, and the
        // Richardson weights the realized step ratio.
        let mut central = |step: f32| -> (f64, f64) {
            work[i] = orig + step;
            let xp = work[i] as f64;
            let plus = f(&work) as f64;
            work[i] = orig - step;
            let xm = work[i] as f64;
            let minus = f(&work) as f64;
            work[i] = orig;
            ((plus - minus) / (xp - xm), (xp - xm) / 2.0)
        };
        let (d1, h1) = central(h);
        let (d2, h2) = central(h / 2.0);
        let r2 = (h1 / h2) * (h1 / h2);
        grads.push(((r2 * d2 - d1) / (r2 - 1.0)) as f32);
    }
    grads
}

/// Full Jacobian of a vector-valued map, column j = ∂f/∂x_j by central
/// differences. Returned row-major as J[i][j] in f64.
pub fn finite_diff_jacobian(
    f: impl Fn(&[f32]) -> Vec<f32>,
    x: &[f32],
    h: f32,
) -> Vec<Vec<f64>> {
    let n = x.len();
    let m = f(x).len();
    let mut jac = vec![vec![0.0f64; n]; m];
    let mut work = x.to_vec();
    for j in 0..n {
        let orig = work[j];
        // Same realized-step bookkeeping as finite_diff_grad.
        let mut central = |step: f32| -> (Vec<f64>, f64) {
            work[j] = orig + step;
            let xp = work[j] as f64;
            let plus = f(&work);
            work[j] = orig - step;
            let xm = work[j] as f64;
            let minus = f(&work);
            work[j] = orig;
            let col = plus
                .iter()
                .zip(&minus)
                .map(|(&p, &q)| (p as f64 - q as f64) / (xp - xm))
                .collect();
            (col, (xp - xm) / 2.0)
        };
        let (d1, h1) = central(h);
        let (d2, h2) = central(h / 2.0);
        let r2 = (h1 / h2) * (h1 / h2);
        for i in 0..m {
            jac[i][j] = (r2 * d2[i] - d1[i]) / (r2 - 1.0);
        }
    }
    jac
}

/// (sign, log|det|) of a square matrix via LU with partial pivoting.
pub fn slogdet(matrix: &[Vec<f64>]) -> Result<(f64, f64)> {
    let n = matrix.len();
    if matrix.iter().any(|row| row.len() != n) {
        return Err(Error::ShapeMismatch("slogdet needs a square matrix".into()));
    }
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut sign = 1.0f64;
    let mut logdet = 0.0f64;
    for k in 0..n {
        let mut piv = k;
        for i in k + 1..n {
            if a[i][k].abs() > a[piv][k].abs() {
                piv = i;
            }
        }
        if a[piv][k] == 0.0 {
            return Ok((0.0, f64::NEG_INFINITY));
        }
        if piv != k {
            a.swap(piv, k);
            sign = -sign;
        }
        let pivot = a[k][k];
        sign *= pivot.signum();
        logdet += pivot.abs().ln();
        for i in k + 1..n {
            let factor = a[i][k] / pivot;
            for j in k + 1..n {
                a[i][j] -= factor * a[k][j];
            }
        }
    }
    Ok((sign, logdet))
}
