//! Small dense symmetric matrices and a cyclic Jacobi eigensolver.
//!
//! These back the k×k Gram matrices of a frame and the Rayleigh–Ritz
//! projections of the block eigensolver, so sizes stay in the tens.

use crate::Scalar;

/// Dense square matrix stored row-major. Used for symmetric data; the
/// Jacobi routine reads only the upper triangle after symmetrization.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMat<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> SymMat<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, T::one());
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn from_diag(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, d);
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    pub fn diag(&self) -> Vec<T> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        let n = self.n;
        Self::from_fn(n, |i, j| {
            let mut acc = T::zero();
            for l in 0..n {
                acc += self.get(i, l) * other.get(l, j);
            }
            acc
        })
    }

    /// `Pᵀ · self · P`.
    pub fn congruence(&self, p: &Self) -> Self {
        p.transpose().matmul(self).matmul(p)
    }

    /// Frobenius norm.
    pub fn norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn max_abs_offdiag(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    worst = worst.max(self.get(i, j).abs());
                }
            }
        }
        worst
    }

    /// Largest entry of `|self − I|`.
    pub fn max_abs_dev_identity(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.n {
            for j in 0..self.n {
                let target = if i == j { T::one() } else { T::zero() };
                worst = worst.max((self.get(i, j) - target).abs());
            }
        }
        worst
    }

    pub fn symmetrized(&self) -> Self {
        let half = T::lit(0.5);
        Self::from_fn(self.n, |i, j| half * (self.get(i, j) + self.get(j, i)))
    }

    /// Full eigendecomposition by cyclic Jacobi rotations.
    pub fn eigh(&self) -> SymEigen<T> {
        jacobi_eigen(self)
    }

    /// `P · diag(f(λ)) · Pᵀ` for the spectral decomposition of `self`.
    pub fn spectral_map(&self, f: impl Fn(T) -> T) -> Self {
        let eig = self.eigh();
        let n = self.n;
        let fl: Vec<T> = eig.values.iter().map(|&l| f(l)).collect();
        Self::from_fn(n, |i, j| {
            let mut acc = T::zero();
            for l in 0..n {
                acc += eig.vector(l)[i] * fl[l] * eig.vector(l)[j];
            }
            acc
        })
    }
}

/// Eigenvalues in ascending order with matching orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct SymEigen<T> {
    pub values: Vec<T>,
    /// `vectors[l]` is the eigenvector of `values[l]`.
    pub vectors: Vec<Vec<T>>,
}

impl<T: Scalar> SymEigen<T> {
    pub fn vector(&self, l: usize) -> &[T] {
        &self.vectors[l]
    }

    /// Orthogonal matrix whose columns are the eigenvectors.
    pub fn basis(&self) -> SymMat<T> {
        let n = self.values.len();
        SymMat::from_fn(n, |i, j| self.vectors[j][i])
    }
}

fn jacobi_eigen<T: Scalar>(m: &SymMat<T>) -> SymEigen<T> {
    let n = m.dim();
    let mut a = m.symmetrized();
    let mut v = SymMat::identity(n);
    let scale = a.norm();
    if n > 1 && scale > T::zero() {
        let tiny = T::epsilon() * T::epsilon() * scale * scale;
        for _sweep in 0..100 {
            let mut off = T::zero();
            for i in 0..n {
                for j in (i + 1)..n {
                    off += a.get(i, j) * a.get(i, j);
                }
            }
            if off <= tiny {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a.get(p, q);
                    if apq == T::zero() {
                        continue;
                    }
                    let app = a.get(p, p);
                    let aqq = a.get(q, q);
                    let theta = (aqq - app) / (T::lit(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a.get(k, p);
                        let akq = a.get(k, q);
                        a.set(k, p, c * akp - s * akq);
                        a.set(k, q, s * akp + c * akq);
                    }
                    for k in 0..n {
                        let apk = a.get(p, k);
                        let aqk = a.get(q, k);
                        a.set(p, k, c * apk - s * aqk);
                        a.set(q, k, s * apk + c * aqk);
                    }
                    for k in 0..n {
                        let vkp = v.get(k, p);
                        let vkq = v.get(k, q);
                        v.set(k, p, c * vkp - s * vkq);
                        v.set(k, q, s * vkp + c * vkq);
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps the original index order among exact ties
    order.sort_by(|&i, &j| a.get(i, i).partial_cmp(&a.get(j, j)).unwrap_or(std::cmp::Ordering::Equal));
    SymEigen {
        values: order.iter().map(|&i| a.get(i, i)).collect(),
        vectors: order
            .iter()
            .map(|&j| (0..n).map(|i| v.get(i, j)).collect())
            .collect(),
    }
}
