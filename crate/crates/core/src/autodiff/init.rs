//! Parameter initialisers.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tensor::Tensor;
use crate::scalar::Scalar;

/// Glorot uniform: `U(±sqrt(6 / (fan_in + fan_out)))`.
pub fn glorot_uniform<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::c(rng.random_range(-limit..limit))).collect();
    Tensor::new(shape, data).expect("shape")
}

/// `rows × cols` matrix whose shorter side is orthonormal.
pub fn orthogonal<T: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor<T> {
    // Gram-Schmidt over the shorter side, then lay out row-major.
    let (count, len) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
        for q in &basis {
            let proj: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= proj * b);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|a| *a /= n);
        basis.push(v);
    }
    let mut data = vec![T::zero(); rows * cols];
    for (k, q) in basis.iter().enumerate() {
        for (j, &val) in q.iter().enumerate() {
            let (r, c) = if rows <= cols { (k, j) } else { (j, k) };
            data[r * cols + c] = T::c(val);
        }
    }
    Tensor::new(&[rows, cols], data).expect("shape")
}

pub fn uniform<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], limit: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::c(rng.random_range(-limit..limit))).collect();
    Tensor::new(shape, data).expect("shape")
}
