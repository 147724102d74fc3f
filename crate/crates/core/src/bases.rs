//! Fixed cos/sin and Vandermonde bases.
//!
//! The variable-axis matrix `F_M` has `2·(⌊M/2⌋+1)` rows: cosines for
//! frequencies `0..=⌊M/2⌋`, then sines for the same frequencies. The time-axis
//! matrix has the same layout driven by the Fourier order `N` instead of the
//! length, so it need not be square. Redundant rows (sine at frequency zero,
//! sine at Nyquist for even sizes) are kept; their coefficients are inert.
//!
//! Neither transform is normalized.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Which time axis a basis is built over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeAxis {
    /// The forecast horizon, length `H`.
    Forecast,
    /// The lookback window, length `t`.
    Backcast,
}

/// Number of rows in a cos/sin basis for the given size driver.
pub fn fourier_rows(n: usize) -> usize {
    2 * (n / 2 + 1)
}

fn cos_sin_matrix(freq_driver: usize, len: usize) -> Tensor {
    let half = freq_driver / 2 + 1;
    let rows = 2 * half;
    let mut out = vec![0.0; rows * len];
    for f in 0..half {
        for j in 0..len {
            let angle = TAU * f as f64 * j as f64 / len as f64;
            out[f * len + j] = angle.cos();
            out[(half + f) * len + j] = angle.sin();
        }
    }
    Tensor::from_parts(vec![rows, len], out)
}

/// The variable-axis basis `F_M`, shape `[2·(⌊m/2⌋+1), m]`.
pub fn build_variable_fourier_matrix(m: usize) -> Result<Tensor> {
    if m == 0 {
        return Err(Error::Domain("variable count must be at least 1".into()));
    }
    Ok(cos_sin_matrix(m, m))
}

/// The time-axis basis, shape `[2·(⌊n/2⌋+1), len]`.
pub fn build_time_fourier_matrix(n: usize, len: usize) -> Result<Tensor> {
    if n == 0 || len == 0 {
        return Err(Error::Domain(format!(
            "Fourier order and length must be at least 1 (got n={n}, len={len})"
        )));
    }
    Ok(cos_sin_matrix(n, len))
}

/// Vandermonde matrix of the normalized time vector `[0, 1, …, L−1]/L`:
/// entry `(r, j) = (j/L)^r` for `r < degree`.
pub fn build_vandermonde(degree: usize, len: usize) -> Result<Tensor> {
    if degree == 0 || len == 0 {
        return Err(Error::Domain(format!(
            "degree and length must be at least 1 (got d={degree}, len={len})"
        )));
    }
    let mut out = vec![0.0; degree * len];
    for r in 0..degree {
        for j in 0..len {
            out[r * len + j] = (j as f64 / len as f64).powi(r as i32);
        }
    }
    Ok(Tensor::from_parts(vec![degree, len], out))
}

/// A matrix together with its transpose, both row-major.
#[derive(Debug, Clone, PartialEq)]
struct Dual {
    m: Tensor,
    t: Tensor,
}

impl Dual {
    fn new(m: Tensor) -> Self {
        let t = m.transpose().expect("rank-2 basis");
        Self { m, t }
    }
    fn rows(&self) -> usize {
        self.m.shape()[0]
    }
    fn cols(&self) -> usize {
        self.m.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FourierBasisPair {
    f_m: Dual,
    f_h_forecast: Dual,
    f_h_backcast: Dual,
    fourier_order: usize,
    variables: usize,
}

impl FourierBasisPair {
    pub fn new(variables: usize, fourier_order: usize, lookback: usize, horizon: usize) -> Result<Self> {
        Ok(Self {
            f_m: Dual::new(build_variable_fourier_matrix(variables)?),
            f_h_forecast: Dual::new(build_time_fourier_matrix(fourier_order, horizon)?),
            f_h_backcast: Dual::new(build_time_fourier_matrix(fourier_order, lookback)?),
            fourier_order,
            variables,
        })
    }

    pub fn f_m(&self) -> &Tensor {
        &self.f_m.m
    }

    pub fn f_h(&self, axis: TimeAxis) -> &Tensor {
        &self.time(axis).m
    }

    pub fn fourier_order(&self) -> usize {
        self.fourier_order
    }

    pub fn variables(&self) -> usize {
        self.variables
    }

    /// `[K_M, K_N]`, the shape of a coefficient matrix.
    pub fn coefficient_shape(&self) -> [usize; 2] {
        [self.f_m.rows(), self.f_h_forecast.rows()]
    }

    pub fn len(&self, axis: TimeAxis) -> usize {
        self.time(axis).cols()
    }

    fn time(&self, axis: TimeAxis) -> &Dual {
        match axis {
            TimeAxis::Forecast => &self.f_h_forecast,
            TimeAxis::Backcast => &self.f_h_backcast,
        }
    }

    /// `Y = F_Mᵀ · C · F_H` on raw row-major slices; `out` has `M·L` entries.
    pub(crate) fn synthesize_into(&self, c: &[f64], axis: TimeAxis, out: &mut [f64]) {
        let (km, m) = (self.f_m.rows(), self.f_m.cols());
        let time = self.time(axis);
        let (kn, len) = (time.rows(), time.cols());
        let mut tmp = vec![0.0; m * kn];
        gemm(self.f_m.t.data(), c, m, km, kn, &mut tmp);
        out.fill(0.0);
        gemm(&tmp, time.m.data(), m, kn, len, out);
    }

    /// Gradient of `F_Mᵀ · C · F_H` with respect to `C`: `F_M · dY · F_Hᵀ`.
    pub(crate) fn coefficient_grad(&self, dy: &[f64], axis: TimeAxis, dc: &mut [f64]) {
        let (km, m) = (self.f_m.rows(), self.f_m.cols());
        let time = self.time(axis);
        let (kn, len) = (time.rows(), time.cols());
        let mut tmp = vec![0.0; km * len];
        gemm(self.f_m.m.data(), dy, km, m, len, &mut tmp);
        gemm(&tmp, time.t.data(), km, len, kn, dc);
    }
}

/// Forward 2-D transform `C = F_M · Y · F_Hᵀ`, applied as the column pass
/// `Z = F_M · Y` followed by the row pass `C = Z · F_Hᵀ`.
pub fn forward_2dft(y: &Tensor, basis: &FourierBasisPair, axis: TimeAxis) -> Result<Tensor> {
    let time = basis.time(axis);
    if y.shape() != [basis.f_m.cols(), time.cols()] {
        return Err(Error::dim(
            "forward_2dft",
            y.shape(),
            &[basis.f_m.cols(), time.cols()],
        ));
    }
    let z = basis.f_m.m.matmul(y)?;
    z.matmul(&time.t)
}

/// Inverse 2-D transform `Ŷ = F_Mᵀ · C · F_H` over the chosen time axis.
pub fn inverse_2dft(c: &Tensor, basis: &FourierBasisPair, axis: TimeAxis) -> Result<Tensor> {
    let [km, kn] = basis.coefficient_shape();
    if c.shape() != [km, kn] {
        return Err(Error::dim("inverse_2dft", c.shape(), &[km, kn]));
    }
    let mut out = vec![0.0; basis.variables * basis.len(axis)];
    basis.synthesize_into(c.data(), axis, &mut out);
    Ok(Tensor::from_parts(vec![basis.variables, basis.len(axis)], out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendBasisPair {
    p_forecast: Dual,
    p_backcast: Dual,
    degree: usize,
}

impl TrendBasisPair {
    pub fn new(degree: usize, lookback: usize, horizon: usize) -> Result<Self> {
        Ok(Self {
            p_forecast: Dual::new(build_vandermonde(degree, horizon)?),
            p_backcast: Dual::new(build_vandermonde(degree, lookback)?),
            degree,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn p(&self, axis: TimeAxis) -> &Tensor {
        &self.dual(axis).m
    }

    pub fn len(&self, axis: TimeAxis) -> usize {
        self.dual(axis).cols()
    }

    fn dual(&self, axis: TimeAxis) -> &Dual {
        match axis {
            TimeAxis::Forecast => &self.p_forecast,
            TimeAxis::Backcast => &self.p_backcast,
        }
    }

    /// `Y = A · P` with `A` of shape `[variables, degree]`.
    pub(crate) fn synthesize_into(&self, a: &[f64], variables: usize, axis: TimeAxis, out: &mut [f64]) {
        let p = self.dual(axis);
        out.fill(0.0);
        gemm(a, p.m.data(), variables, self.degree, p.cols(), out);
    }

    /// `dA = dY · Pᵀ`.
    pub(crate) fn coefficient_grad(&self, dy: &[f64], variables: usize, axis: TimeAxis, da: &mut [f64]) {
        let p = self.dual(axis);
        gemm(dy, p.t.data(), variables, p.cols(), self.degree, da);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: &Tensor, expected: &[&[f64]], tol: f64) {
        let e = Tensor::from_rows(expected);
        let d = a.max_abs_diff(&e).unwrap_or(f64::INFINITY);
        assert!(d <= tol, "got {a:?}, expected {e:?}");
    }

    #[test]
    fn variable_matrix_examples() {
        close(
            &build_variable_fourier_matrix(2).unwrap(),
            &[&[1.0, 1.0], &[1.0, -1.0], &[0.0, 0.0], &[0.0, 0.0]],
            1e-15,
        );
        close(&build_variable_fourier_matrix(1).unwrap(), &[&[1.0], &[0.0]], 0.0);
        let f4 = build_variable_fourier_matrix(4).unwrap();
        assert_eq!(f4.shape(), &[6, 4]);
        let row = f4.row(1);
        for (got, want) in row.iter().zip([1.0, 0.0, -1.0, 0.0]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!(build_variable_fourier_matrix(0).is_err());
    }

    #[test]
    fn time_matrix_examples() {
        close(
            &build_time_fourier_matrix(2, 4).unwrap(),
            &[
                &[1.0, 1.0, 1.0, 1.0],
                &[1.0, 0.0, -1.0, 0.0],
                &[0.0, 0.0, 0.0, 0.0],
                &[0.0, 1.0, 0.0, -1.0],
            ],
            1e-15,
        );
        close(
            &build_time_fourier_matrix(2, 1).unwrap(),
            &[&[1.0], &[1.0], &[0.0], &[0.0]],
            0.0,
        );
        for (n, len) in [(1, 3), (8, 24), (7, 5)] {
            let f = build_time_fourier_matrix(n, len).unwrap();
            assert_eq!(f.shape()[0], fourier_rows(n));
            assert!(f.row(0).iter().all(|&v| v == 1.0));
            assert!(f.row(n / 2 + 1).iter().all(|&v| v == 0.0));
            assert!(f.data().iter().all(|v| v.abs() <= 1.0));
        }
        assert!(build_time_fourier_matrix(0, 4).is_err());
        assert!(build_time_fourier_matrix(4, 0).is_err());
    }

    #[test]
    fn vandermonde_examples() {
        close(
            &build_vandermonde(3, 4).unwrap(),
            &[
                &[1.0, 1.0, 1.0, 1.0],
                &[0.0, 0.25, 0.5, 0.75],
                &[0.0, 0.0625, 0.25, 0.5625],
            ],
            0.0,
        );
        close(&build_vandermonde(1, 5).unwrap(), &[&[1.0; 5]], 0.0);
        close(&build_vandermonde(2, 2).unwrap(), &[&[1.0, 1.0], &[0.0, 0.5]], 0.0);
        assert!(build_vandermonde(0, 3).is_err());
        assert!(build_vandermonde(3, 0).is_err());
    }

    #[test]
    fn vandermonde_rows_are_powers_of_row_one() {
        let p = build_vandermonde(6, 13).unwrap();
        for r in 1..6 {
            for j in 0..13 {
                let want = p.row(1)[j].powi(r as i32);
                assert_eq!(p.row(r)[j], want);
            }
        }
    }

    #[test]
    fn bases_are_deterministic() {
        let a = FourierBasisPair::new(7, 8, 20, 24).unwrap();
        let b = FourierBasisPair::new(7, 8, 20, 24).unwrap();
        assert_eq!(a, b);
        assert_eq!(TrendBasisPair::new(4, 20, 24).unwrap(), TrendBasisPair::new(4, 20, 24).unwrap());
    }

    #[test]
    fn forward_examples() {
        let basis = FourierBasisPair::new(2, 2, 2, 2).unwrap();
        let c = forward_2dft(&Tensor::full([2, 2], 1.0), &basis, TimeAxis::Forecast).unwrap();
        assert_eq!(c.shape(), &[4, 4]);
        for i in 0..4 {
            for j in 0..4 {
                let want = if (i, j) == (0, 0) { 4.0 } else { 0.0 };
                assert!((c.get(&[i, j]) - want).abs() < 1e-14, "C[{i},{j}]");
            }
        }
        let zero = forward_2dft(&Tensor::zeros([2, 2]), &basis, TimeAxis::Forecast).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
        assert!(forward_2dft(&Tensor::zeros([3, 2]), &basis, TimeAxis::Forecast).is_err());
    }

    #[test]
    fn forward_matches_direct_sums_and_single_expression() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let basis = FourierBasisPair::new(3, 8, 6, 5).unwrap();
        let y = Tensor::from_fn([3, 5], |_| rng.random_range(-1.0..1.0));
        let nested = forward_2dft(&y, &basis, TimeAxis::Forecast).unwrap();
        let single = basis
            .f_m()
            .matmul(&y.matmul(&basis.f_h(TimeAxis::Forecast).transpose().unwrap()).unwrap())
            .unwrap();
        assert!(nested.max_abs_diff(&single).unwrap() < 1e-12);
        let direct = oracle::direct_2dft(&y, 8);
        assert!(nested.max_abs_diff(&direct).unwrap() < 1e-12);
    }

    #[test]
    fn inverse_examples() {
        let basis = FourierBasisPair::new(3, 8, 10, 6).unwrap();
        let mut c = Tensor::zeros(basis.coefficient_shape());
        c.set(&[0, 0], 3.0);
        let y = inverse_2dft(&c, &basis, TimeAxis::Forecast).unwrap();
        assert_eq!(y.shape(), &[3, 6]);
        assert!(y.data().iter().all(|&v| v == 3.0));
        let back = inverse_2dft(&c, &basis, TimeAxis::Backcast).unwrap();
        assert_eq!(back.shape(), &[3, 10]);

        let zero = inverse_2dft(&Tensor::zeros(basis.coefficient_shape()), &basis, TimeAxis::Forecast).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
        assert!(inverse_2dft(&Tensor::zeros([3, 3]), &basis, TimeAxis::Forecast).is_err());
    }

    #[test]
    fn inverse_columns_lie_in_variable_basis_span() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let basis = FourierBasisPair::new(7, 8, 12, 24).unwrap();
        let c = Tensor::from_fn(basis.coefficient_shape(), |_| rng.random_range(-1.0..1.0));
        let y = inverse_2dft(&c, &basis, TimeAxis::Forecast).unwrap();
        let span = basis.f_m().transpose().unwrap();
        for j in 0..24 {
            let col: Vec<f64> = (0..7).map(|i| y.get(&[i, j])).collect();
            assert!(oracle::projection_residual(&span, &col) < 1e-9);
        }
    }

    #[test]
    fn inert_sine_zero_coefficients() {
        // Even M: both the sin-0 and the sin-Nyquist rows of F_M are zero.
        let basis = FourierBasisPair::new(4, 6, 9, 7).unwrap();
        let [km, kn] = basis.coefficient_shape();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = Tensor::from_fn([km, kn], |_| rng.random_range(-1.0..1.0));
        let base = inverse_2dft(&c, &basis, TimeAxis::Forecast).unwrap();
        let sin0_var = km / 2;
        let sin0_time = kn / 2;
        let mut perturbed = c.clone();
        for j in 0..kn {
            perturbed.set(&[sin0_var, j], perturbed.get(&[sin0_var, j]) + 5.0);
        }
        for i in 0..km {
            perturbed.set(&[i, sin0_time], perturbed.get(&[i, sin0_time]) - 2.0);
        }
        let out = inverse_2dft(&perturbed, &basis, TimeAxis::Forecast).unwrap();
        assert_eq!(out.max_abs_diff(&base).unwrap(), 0.0);
    }

    #[test]
    fn synthesize_grad_matches_adjoint() {
        // <dY, F_Mᵀ C F_H> == <F_M dY F_Hᵀ, C>
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let basis = FourierBasisPair::new(5, 8, 11, 7).unwrap();
        let [km, kn] = basis.coefficient_shape();
        let c: Vec<f64> = (0..km * kn).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dy: Vec<f64> = (0..5 * 7).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut y = vec![0.0; 5 * 7];
        basis.synthesize_into(&c, TimeAxis::Forecast, &mut y);
        let mut dc = vec![0.0; km * kn];
        basis.coefficient_grad(&dy, TimeAxis::Forecast, &mut dc);
        let lhs: f64 = dy.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = dc.iter().zip(&c).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
