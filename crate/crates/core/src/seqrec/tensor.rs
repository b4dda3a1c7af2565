//! Dense row-major kernels shared by the forward and backward passes.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

pub trait Scalar: Float + FromPrimitive + Sum + Debug + Default + Send + Sync + 'static {
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("representable literal")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Row-major matrix. Linear layers store weights as `out × in` and compute `x Wᵀ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn cast<U: Scalar>(&self) -> Mat<U> {
        Mat { rows: self.rows, cols: self.cols, data: cast_vec(&self.data) }
    }
}

pub fn cast_vec<T: Scalar, U: Scalar>(v: &[T]) -> Vec<U> {
    v.iter().map(|x| U::from_f64(x.to_f64().unwrap()).unwrap()).collect()
}

/// `y = x Wᵀ + b` for `n` rows of `x`.
pub fn linear<T: Scalar>(x: &[T], n: usize, w: &Mat<T>, b: &[T]) -> Vec<T> {
    let (out_dim, in_dim) = (w.rows, w.cols);
    debug_assert_eq!(x.len(), n * in_dim);
    let mut y = vec![T::zero(); n * out_dim];
    for r in 0..n {
        let xr = &x[r * in_dim..(r + 1) * in_dim];
        let yr = &mut y[r * out_dim..(r + 1) * out_dim];
        for (j, yj) in yr.iter_mut().enumerate() {
            let wj = w.row(j);
            let mut acc = b[j];
            for i in 0..in_dim {
                acc = acc + xr[i] * wj[i];
            }
            *yj = acc;
        }
    }
    y
}

/// Accumulates weight/bias gradients of [`linear`] and returns the input gradient.
pub fn linear_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    n: usize,
    w: &Mat<T>,
    dw: &mut Mat<T>,
    db: &mut [T],
) -> Vec<T> {
    let (out_dim, in_dim) = (w.rows, w.cols);
    let mut dx = vec![T::zero(); n * in_dim];
    for r in 0..n {
        let xr = &x[r * in_dim..(r + 1) * in_dim];
        let dyr = &dy[r * out_dim..(r + 1) * out_dim];
        let dxr = &mut dx[r * in_dim..(r + 1) * in_dim];
        for j in 0..out_dim {
            let g = dyr[j];
            if g == T::zero() {
                continue;
            }
            db[j] = db[j] + g;
            let wj = w.row(j);
            let dwj = dw.row_mut(j);
            for i in 0..in_dim {
                dwj[i] = dwj[i] + g * xr[i];
                dxr[i] = dxr[i] + g * wj[i];
            }
        }
    }
    dx
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Cached statistics of a layer-norm application.
#[derive(Debug, Clone)]
pub struct NormCache<T> {
    pub normalized: Vec<T>,
    pub inv_std: Vec<T>,
}

pub fn layer_norm<T: Scalar>(x: &[T], n: usize, d: usize, gain: &[T], bias: &[T]) -> (Vec<T>, NormCache<T>) {
    let eps = T::lit(LAYER_NORM_EPS);
    let dn = T::from_usize(d).unwrap();
    let mut y = vec![T::zero(); n * d];
    let mut normalized = vec![T::zero(); n * d];
    let mut inv_std = vec![T::zero(); n];
    for r in 0..n {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().copied().sum::<T>() / dn;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let rstd = T::one() / (var + eps).sqrt();
        inv_std[r] = rstd;
        for i in 0..d {
            let h = (xr[i] - mean) * rstd;
            normalized[r * d + i] = h;
            y[r * d + i] = h * gain[i] + bias[i];
        }
    }
    (y, NormCache { normalized, inv_std })
}

pub fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    cache: &NormCache<T>,
    n: usize,
    d: usize,
    gain: &[T],
    dgain: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    let dn = T::from_usize(d).unwrap();
    let mut dx = vec![T::zero(); n * d];
    for r in 0..n {
        let h = &cache.normalized[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let mut sum_dh = T::zero();
        let mut sum_dh_h = T::zero();
        for i in 0..d {
            dgain[i] = dgain[i] + dyr[i] * h[i];
            dbias[i] = dbias[i] + dyr[i];
            let dh = dyr[i] * gain[i];
            sum_dh = sum_dh + dh;
            sum_dh_h = sum_dh_h + dh * h[i];
        }
        let mean_dh = sum_dh / dn;
        let mean_dh_h = sum_dh_h / dn;
        let rstd = cache.inv_std[r];
        for i in 0..d {
            let dh = dyr[i] * gain[i];
            dx[r * d + i] = rstd * (dh - mean_dh - h[i] * mean_dh_h);
        }
    }
    dx
}

const GELU_COEFF: f64 = 0.044715;

/// Tanh approximation of GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let u = c * (x + T::lit(GELU_COEFF) * x * x * x);
    T::lit(0.5) * x * (T::one() + u.tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let u = c * (x + T::lit(GELU_COEFF) * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + T::lit(3.0 * GELU_COEFF) * x * x);
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * (T::one() - t * t) * du
}

/// In-place numerically stable softmax.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Cross-entropy of `softmax(scores)` against `label`, with its gradient w.r.t. the scores.
pub fn cross_entropy<T: Scalar>(scores: &[T], label: usize) -> (T, Vec<T>) {
    let mut probs = scores.to_vec();
    softmax_in_place(&mut probs);
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let log_sum = scores.iter().map(|&s| (s - max).exp()).sum::<T>().ln() + max;
    let loss = log_sum - scores[label];
    probs[label] = probs[label] - T::one();
    (loss, probs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_matches_reference_points() {
        assert_eq!(gelu(0.0f64), 0.0);
        // tanh-approximate GELU(1) = 0.8411919906082768
        assert!((gelu(1.0f64) - 0.841_191_990_608_276_8).abs() < 1e-12);
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn cross_entropy_gradient_sums_to_zero() {
        let (loss, grad) = cross_entropy(&[1.0f64, 2.0, 3.0], 2);
        let expected = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln() - 3.0;
        assert!((loss - expected).abs() < 1e-12);
        assert!(grad.iter().sum::<f64>().abs() < 1e-12);
        assert!(grad[2] < 0.0);
    }

    #[test]
    fn layer_norm_output_is_standardized() {
        let x = [1.0f64, 2.0, 3.0, 4.0];
        let (y, _) = layer_norm(&x, 1, 4, &[1.0; 4], &[0.0; 4]);
        let mean: f64 = y.iter().sum::<f64>() / 4.0;
        let var: f64 = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }
}
