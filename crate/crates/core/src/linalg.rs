//! Small dense linear algebra: symmetric eigendecomposition.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Eigenpairs of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<T> {
    /// Eigenvalues in ascending order.
    pub values: Vec<T>,
    /// Column `i` is the unit eigenvector for `values[i]`.
    pub vectors: Tensor<T>,
}

/// Largest |a_ij − a_ji| of a square matrix.
pub fn max_asymmetry<T: Scalar>(a: &Tensor<T>) -> T {
    let n = a.shape()[0];
    let mut worst = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a.at2(i, j) - a.at2(j, i)).abs());
        }
    }
    worst
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// The input is symmetrized as `(A + Aᵀ)/2` first, so tiny asymmetries from
/// floating-point accumulation do not leak into the result.
pub fn symmetric_eigen<T: Scalar>(a: &Tensor<T>) -> Result<SymmetricEigen<T>> {
    if a.ndim() != 2 || a.shape()[0] != a.shape()[1] {
        return Err(Error::shape("square matrix", format!("{:?}", a.shape())));
    }
    let n = a.shape()[0];
    if n == 0 {
        return Err(Error::Empty("0×0 matrix".into()));
    }
    if !a.all_finite() {
        return Err(Error::NonFinite("matrix passed to eigendecomposition".into()));
    }
    let half = T::lit(0.5);
    let mut m = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = half * (a.at2(i, j) + a.at2(j, i));
        }
    }
    let mut v = Tensor::<T>::eye(n).into_data();

    let scale = m.iter().map(|x| x.abs()).fold(T::zero(), T::max).max(T::min_positive_value());
    let tol = T::epsilon() * T::epsilon() * scale * scale;
    for _sweep in 0..100 {
        let mut off = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].partial_cmp(&m[j * n + j]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = Tensor::zeros(&[n, n]);
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors.set2(row, col, v[row * n + src]);
        }
    }
    Ok(SymmetricEigen { values, vectors })
}
