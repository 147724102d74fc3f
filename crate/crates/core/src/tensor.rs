//! Dense row-major `f64` tensors, learnable parameters, and a finite-difference
//! gradient checker.
//!
//! Gradients in this crate are hand-written per layer: every layer exposes a
//! forward pass that records what its backward pass needs, and the backward pass
//! accumulates into [`Parameter::grad`]. [`grad_check`] is the correctness oracle
//! for all of those backward passes.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    /// Builds a tensor, checking that `shape` covers `data` and every entry is finite.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim("Tensor::new", &shape, &[data.len()]));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite entry {} at flat index {pos}",
                data[pos]
            )));
        }
        Ok(Self { shape, data })
    }

    /// Crate-internal constructor for buffers whose length is already known to match.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros([n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a rank-2 tensor from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::from_parts(vec![rows.len(), cols], data)
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> f64) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    fn flat_index(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                assert!(i < d, "index {i} out of bounds for dimension {d}");
                acc * d + i
            })
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.flat_index(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let i = self.flat_index(index);
        self.data[i] = value;
    }

    /// Row `r` of a rank-2 tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        assert_eq!(self.rank(), 2);
        let cols = self.shape[1];
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.len() {
            return Err(Error::dim("reshape", &self.shape, &shape));
        }
        Ok(Tensor::from_parts(shape, self.data.clone()))
    }

    /// Sub-tensor `i` along the leading axis.
    pub fn index_axis0(&self, i: usize) -> Tensor {
        assert!(self.rank() >= 1 && i < self.shape[0]);
        let inner: usize = self.shape[1..].iter().product();
        Tensor::from_parts(
            self.shape[1..].to_vec(),
            self.data[i * inner..(i + 1) * inner].to_vec(),
        )
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::Domain("cannot stack zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::dim("stack", &first.shape, &t.shape));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor::from_parts(shape, data))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::dim("transpose", &self.shape, &[]));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor::from_parts(vec![c, r], out))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::dim("matmul", &self.shape, &other.shape));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; m * n];
        gemm(&self.data, &other.data, m, k, n, &mut out);
        Ok(Tensor::from_parts(vec![m, n], out))
    }

    /// Per-batch matrix product of a rank-3 tensor with a rank-3 tensor of equal
    /// batch size, or with a rank-2 tensor broadcast over the batch.
    pub fn batched_matmul(&self, other: &Tensor) -> Result<Tensor> {
        let err = || Error::dim("batched_matmul", &self.shape, &other.shape);
        if self.rank() != 3 {
            return Err(err());
        }
        let (batch, m, k) = (self.shape[0], self.shape[1], self.shape[2]);
        let (b_batched, n) = match *other.shape.as_slice() {
            [kk, n] if kk == k => (false, n),
            [bb, kk, n] if bb == batch && kk == k => (true, n),
            _ => return Err(err()),
        };
        let mut out = vec![0.0; batch * m * n];
        for b in 0..batch {
            let a = &self.data[b * m * k..(b + 1) * m * k];
            let rhs = if b_batched {
                &other.data[b * k * n..(b + 1) * k * n]
            } else {
                &other.data[..]
            };
            gemm(a, rhs, m, k, n, &mut out[b * m * n..(b + 1) * m * n]);
        }
        Ok(Tensor::from_parts(vec![batch, m, n], out))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    fn zip_with(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::dim(op, &self.shape, &other.shape));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    /// Largest absolute entrywise difference; `None` when shapes differ.
    pub fn max_abs_diff(&self, other: &Tensor) -> Option<f64> {
        (self.shape == other.shape).then(|| {
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`, all row-major.
pub(crate) fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && out.len() >= m * n);
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip != 0.0 {
                axpy(aip, &b[p * n..(p + 1) * n], out_row);
            }
        }
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha · x`
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: the feature was just detected.
        return unsafe { axpy_avx(alpha, x, y) };
    }
    axpy_plain(alpha, x, y);
}

#[inline(always)]
fn axpy_plain(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Wider lanes only; no fused multiply-add, so results match [`axpy_plain`] bit for bit.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn axpy_avx(alpha: f64, x: &[f64], y: &mut [f64]) {
    axpy_plain(alpha, x, y);
}

/// A learnable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    id: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(id: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Self {
            id: id.into(),
            value,
            grad,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }

    /// Replaces the value, keeping the shape contract with `grad`.
    pub fn assign(&mut self, value: Tensor) -> Result<()> {
        if value.shape() != self.value.shape() {
            return Err(Error::dim("Parameter::assign", self.value.shape(), value.shape()));
        }
        self.value = value;
        Ok(())
    }
}

/// A scalar objective over a set of parameters, with a reverse-mode gradient.
pub trait Differentiable {
    /// Every parameter, in a stable order.
    fn parameters_mut(&mut self) -> Vec<&mut Parameter>;

    fn loss(&mut self) -> Result<f64>;

    /// `loss()` when only parameter `changed` (an index into `parameters_mut`)
    /// differs from the values at the last `loss_and_grad`. Objectives may reuse
    /// work that does not depend on it.
    fn loss_after_change(&mut self, changed: usize) -> Result<f64> {
        let _ = changed;
        self.loss()
    }

    /// Zeroes every gradient, then accumulates d(loss)/d(parameter) into them.
    fn loss_and_grad(&mut self) -> Result<f64>;
}

/// Gradients whose magnitude is below this are compared absolutely rather than
/// relatively; finite-difference noise at `h = 1e-5` sits far beneath it.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub entries_checked: usize,
    /// (parameter id, flat index, analytic, numeric) at the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compares reverse-mode gradients against central differences
/// `(f(w+h) − f(w−h)) / 2h` for every entry of every parameter.
///
/// The relative error of one entry is `|a − n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`.
pub fn grad_check<D: Differentiable + ?Sized>(objective: &mut D, step: f64) -> Result<GradCheckReport> {
    if step.is_nan() || step <= 0.0 {
        return Err(Error::Domain(format!("finite-difference step must be > 0, got {step}")));
    }
    let base = objective.loss_and_grad()?;
    if !base.is_finite() {
        return Err(Error::Evaluation(format!("objective is {base}")));
    }
    let analytic: Vec<(String, Vec<f64>)> = objective
        .parameters_mut()
        .iter()
        .map(|p| (p.id().to_owned(), p.grad.data().to_vec()))
        .collect();

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        entries_checked: 0,
        worst: None,
    };
    for (pi, (id, grads)) in analytic.iter().enumerate() {
        for (ei, &a) in grads.iter().enumerate() {
            let original = objective.parameters_mut()[pi].value.data()[ei];
            objective.parameters_mut()[pi].value.data_mut()[ei] = original + step;
            let plus = objective.loss_after_change(pi)?;
            objective.parameters_mut()[pi].value.data_mut()[ei] = original - step;
            let minus = objective.loss_after_change(pi)?;
            objective.parameters_mut()[pi].value.data_mut()[ei] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Evaluation(format!(
                    "objective non-finite while perturbing {id}[{ei}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * step);
            let denom = a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            let rel = (a - numeric).abs() / denom;
            report.entries_checked += 1;
            if report.worst.is_none() || rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some((id.clone(), ei, a, numeric));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matmul_examples() {
        let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(a.matmul(&Tensor::eye(2)).unwrap(), a);

        let p = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let b = Tensor::from_rows(&[&[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(
            p.matmul(&b).unwrap(),
            Tensor::from_rows(&[&[5.0, 6.0], &[0.0, 0.0]])
        );

        let row = Tensor::from_rows(&[&[1.0, 2.0]]);
        let col = Tensor::from_rows(&[&[3.0], &[4.0]]);
        assert_eq!(row.matmul(&col).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros([2, 3]);
        let b = Tensor::zeros([2, 3]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn batched_matmul_examples() {
        let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let batch = Tensor::stack(&[a.clone(), a.clone()]).unwrap();
        let out = batch.batched_matmul(&Tensor::eye(2)).unwrap();
        assert_eq!(out, batch);

        let single = Tensor::stack(std::slice::from_ref(&a)).unwrap();
        let b = Tensor::from_rows(&[&[0.5, 1.0], &[2.0, -1.0]]);
        let out = single.batched_matmul(&b).unwrap();
        assert_eq!(out.index_axis0(0), a.matmul(&b).unwrap());

        let zeros = Tensor::zeros([3, 2, 2]);
        let any = Tensor::from_fn([3, 2, 4], |i| i as f64 - 7.0);
        assert!(zeros.batched_matmul(&any).unwrap().data().iter().all(|&v| v == 0.0));

        assert!(zeros.batched_matmul(&Tensor::zeros([2, 2, 2])).is_err());
    }

    #[test]
    fn new_rejects_non_finite_and_bad_shape() {
        assert!(Tensor::new([2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new([3], vec![1.0, 2.0]).is_err());
    }

    struct Scalar<F: Fn(f64) -> (f64, f64)> {
        w: Parameter,
        f: F,
    }

    impl<F: Fn(f64) -> (f64, f64)> Differentiable for Scalar<F> {
        fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
            vec![&mut self.w]
        }
        fn loss(&mut self) -> Result<f64> {
            Ok((self.f)(self.w.value.data()[0]).0)
        }
        fn loss_and_grad(&mut self) -> Result<f64> {
            let (v, g) = (self.f)(self.w.value.data()[0]);
            self.w.grad.data_mut()[0] = g;
            Ok(v)
        }
    }

    #[test]
    fn grad_check_quadratic_and_constant() {
        let mut sq = Scalar {
            w: Parameter::new("w", Tensor::full([1], 3.0)),
            f: |w| (w * w, 2.0 * w),
        };
        let r = grad_check(&mut sq, 1e-5).unwrap();
        assert!(r.max_relative_error < 1e-6, "{r:?}");
        assert_eq!(r.worst.as_ref().unwrap().2, 6.0);

        let mut c = Scalar {
            w: Parameter::new("w", Tensor::full([1], 3.0)),
            f: |_| (4.2, 0.0),
        };
        assert_eq!(grad_check(&mut c, 1e-5).unwrap().max_relative_error, 0.0);
    }

    #[test]
    fn grad_check_flags_wrong_gradient_and_bad_input() {
        let mut wrong = Scalar {
            w: Parameter::new("w", Tensor::full([1], 3.0)),
            f: |w| (w * w, w),
        };
        assert!(grad_check(&mut wrong, 1e-5).unwrap().max_relative_error > 0.4);
        assert!(grad_check(&mut wrong, 0.0).is_err());

        let mut blowup = Scalar {
            w: Parameter::new("w", Tensor::full([1], 0.0)),
            f: |w| (1.0 / w, 0.0),
        };
        assert!(matches!(grad_check(&mut blowup, 1e-5), Err(Error::Evaluation(_))));
    }

    #[test]
    fn zero_grad_clears_everything() {
        let mut p = Parameter::new("p", Tensor::zeros([2, 3]));
        p.grad.data_mut().fill(1.5);
        p.zero_grad();
        assert!(p.grad.data().iter().all(|&g| g == 0.0));
        assert_eq!(p.grad.shape(), p.value.shape());
    }

    fn bounded_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
        proptest::collection::vec(-10.0f64..10.0, rows * cols)
            .prop_map(move |d| Tensor::new([rows, cols], d).unwrap())
    }

    proptest! {
        #[test]
        fn matmul_is_associative(
            (a, b, c) in (1usize..=16, 1usize..=16, 1usize..=16, 1usize..=16)
                .prop_flat_map(|(m, k, n, p)| (bounded_matrix(m, k), bounded_matrix(k, n), bounded_matrix(n, p)))
        ) {
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            prop_assert!(left.max_abs_diff(&right).unwrap() < 1e-9);
        }

        #[test]
        fn transpose_is_an_involution(a in (1usize..=8, 1usize..=8).prop_flat_map(|(r, c)| bounded_matrix(r, c))) {
            prop_assert_eq!(a.transpose().unwrap().transpose().unwrap(), a);
        }
    }
}
