//! Independent reference computations used by tests.
//!
//! Nothing here shares code with the production paths it checks: transforms are
//! explicit trigonometric sums, projections use modified Gram-Schmidt, and
//! quantiles sort a copy of the data.

use std::f64::consts::TAU;

use crate::tensor::Tensor;

/// `C[a,b] = Σ_i Σ_j F_M[a,i] · Y[i,j] · F_H[b,j]` evaluated term by term.
pub fn direct_2dft(y: &Tensor, fourier_order: usize) -> Tensor {
    let (m, len) = (y.shape()[0], y.shape()[1]);
    let basis_row = |f: usize, sin: bool, j: usize, n: usize| {
        let angle = TAU * f as f64 * j as f64 / n as f64;
        if sin {
            angle.sin()
        } else {
            angle.cos()
        }
    };
    let var_half = m / 2 + 1;
    let time_half = fourier_order / 2 + 1;
    let mut out = Tensor::zeros([2 * var_half, 2 * time_half]);
    for a in 0..2 * var_half {
        for b in 0..2 * time_half {
            let mut acc = 0.0;
            for i in 0..m {
                for j in 0..len {
                    acc += basis_row(a % var_half, a >= var_half, i, m)
                        * y.get(&[i, j])
                        * basis_row(b % time_half, b >= time_half, j, len);
                }
            }
            out.set(&[a, b], acc);
        }
    }
    out
}

/// Norm of the residual after projecting `v` onto the column span of `basis`
/// (`[rows, cols]`, rows == v.len()). Rank-deficient bases are handled by
/// dropping columns that are numerically dependent.
pub fn projection_residual(basis: &Tensor, v: &[f64]) -> f64 {
    let (rows, cols) = (basis.shape()[0], basis.shape()[1]);
    assert_eq!(rows, v.len());
    let mut q: Vec<Vec<f64>> = Vec::new();
    for c in 0..cols {
        let mut col: Vec<f64> = (0..rows).map(|r| basis.get(&[r, c])).collect();
        let norm0 = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        for _ in 0..2 {
            for qi in &q {
                let proj: f64 = qi.iter().zip(&col).map(|(a, b)| a * b).sum();
                for (x, qv) in col.iter_mut().zip(qi) {
                    *x -= proj * qv;
                }
            }
        }
        let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-10 * norm0.max(1.0) {
            for x in &mut col {
                *x /= norm;
            }
            q.push(col);
        }
    }
    let mut r = v.to_vec();
    for _ in 0..2 {
        for qi in &q {
            let proj: f64 = qi.iter().zip(&r).map(|(a, b)| a * b).sum();
            for (x, qv) in r.iter_mut().zip(qi) {
                *x -= proj * qv;
            }
        }
    }
    r.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Residual norm of the least-squares fit of `values` (sampled at `j/len`)
/// by a polynomial of degree `degree`.
pub fn polynomial_fit_residual(values: &[f64], degree: usize) -> f64 {
    let len = values.len();
    let mut basis = Tensor::zeros([len, degree + 1]);
    for j in 0..len {
        let x = j as f64 / len as f64;
        let mut p = 1.0;
        for r in 0..=degree {
            basis.set(&[j, r], p);
            p *= x;
        }
    }
    projection_residual(&basis, values)
}

/// Linear-interpolation quantile (type 7) of a copy of `data`.
pub fn quantile(data: &[f64], q: f64) -> f64 {
    let mut sorted = data.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
