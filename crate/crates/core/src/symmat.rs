//! Helpers for dense symmetric matrices in vectorized coordinates.
//!
//! The learner optimizes over symmetric `d × d` matrices; internally it works
//! in the `d(d+1)/2`-dimensional coordinate space spanned by the orthonormal
//! basis `E_ii = e_i e_i^T`, `E_ij = (e_i e_j^T + e_j e_i^T)/sqrt(2)`.

use crate::{Matrix, Vector};

/// Number of free coordinates of a symmetric `d × d` matrix.
pub fn sym_dim(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Coordinates of a symmetric matrix in the orthonormal basis (svec).
pub fn svec(m: &Matrix) -> Vector {
    let d = m.nrows();
    let mut v = Vector::zeros(sym_dim(d));
    let mut idx = 0;
    for i in 0..d {
        for j in i..d {
            v[idx] = if i == j {
                m[(i, i)]
            } else {
                std::f64::consts::SQRT_2 * m[(i, j)]
            };
            idx += 1;
        }
    }
    v
}

/// Inverse of [`svec`].
pub fn smat(v: &Vector, d: usize) -> Matrix {
    let mut m = Matrix::zeros(d, d);
    let mut idx = 0;
    for i in 0..d {
        for j in i..d {
            if i == j {
                m[(i, i)] = v[idx];
            } else {
                let x = v[idx] / std::f64::consts::SQRT_2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            idx += 1;
        }
    }
    m
}

/// Frobenius inner product `<a, b>` of two square matrices.
pub fn frob_inner(a: &Matrix, b: &Matrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Symmetrizes a matrix in place: `m <- (m + m^T)/2`.
pub fn symmetrize(m: &mut Matrix) {
    let d = m.nrows();
    for i in 0..d {
        for j in (i + 1)..d {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Largest absolute asymmetry `max |m_ij - m_ji|`.
pub fn asymmetry(m: &Matrix) -> f64 {
    let d = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for j in (i + 1)..d {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Random symmetric matrix with entries in `[-1, 1]`, for self-checks and tests.
pub fn random_symmetric(d: usize, rng: &mut impl rand::Rng) -> Matrix {
    let mut m = Matrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let x: f64 = rng.random_range(-1.0..1.0);
            m[(i, j)] = x;
            m[(j, i)] = x;
        }
    }
    m
}
