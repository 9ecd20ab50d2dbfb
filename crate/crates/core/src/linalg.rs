//! Small dense helpers shared by the penalty, the inner solver and the
//! outer loop. Everything works on `ndarray` views of `f64`.

use ndarray::{Array2, ArrayView2, Zip};

/// `base^exp` by repeated squaring. `exp == 0` yields the identity.
pub fn matrix_power(base: ArrayView2<f64>, mut exp: usize) -> Array2<f64> {
    let n = base.nrows();
    let mut result: Option<Array2<f64>> = None;
    let mut square = base.to_owned();
    while exp > 0 {
        if exp & 1 == 1 {
            result = Some(match result {
                None => square.clone(),
                Some(r) => r.dot(&square),
            });
        }
        exp >>= 1;
        if exp > 0 {
            square = square.dot(&square);
        }
    }
    result.unwrap_or_else(|| Array2::eye(n))
}

/// `Tr(A B)` without forming the product.
pub fn trace_of_product(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[[i, k]] * b[[k, i]];
        }
    }
    acc
}

/// Frobenius inner product `<A, B> = sum_ij A_ij B_ij`.
pub fn inner(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let mut acc = 0.0;
    Zip::from(a).and(b).for_each(|&x, &y| acc += x * y);
    acc
}

pub fn frobenius_norm(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Sum of absolute values of all entries.
pub fn l1_norm(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

/// `I + alpha * W`.
pub fn shifted_identity(w: ArrayView2<f64>, alpha: f64) -> Array2<f64> {
    let mut m = w.mapv(|x| alpha * x);
    for i in 0..m.nrows() {
        m[[i, i]] += 1.0;
    }
    m
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration, started from the all-ones vector.
pub fn spectral_norm_psd(a: ArrayView2<f64>, iterations: usize) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = ndarray::Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut estimate = 0.0;
    for _ in 0..iterations {
        let next = a.dot(&v);
        let norm = next.dot(&next).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        estimate = v.dot(&next);
        v = next / norm;
    }
    // Rayleigh quotient from below; pad slightly so callers get an upper bound
    // in the common case.
    estimate.max(0.0) * 1.01
}
