//! A group's tuple of scalar fields and its Gram matrices.

use crate::dense::SymMat;
use crate::grid::Domain;
use crate::{Error, Result, Scalar};

/// `k` scalar fields on one grid, each stored over the grid dofs.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldFrame<T> {
    pub fields: Vec<Vec<T>>,
}

/// L² and H¹ Gram matrices of a frame; the H¹ one is the matrix `M(u)`.
#[derive(Debug, Clone)]
pub struct GramPair<T> {
    pub l2: SymMat<T>,
    pub h1: SymMat<T>,
}

impl<T: Scalar> FieldFrame<T> {
    pub fn new(fields: Vec<Vec<T>>) -> Self {
        Self { fields }
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.fields.len()
    }

    pub fn check(&self, domain: &Domain<T>) -> Result<()> {
        if self.fields.is_empty() {
            return Err(Error::InvalidState("a frame needs at least one field".into()));
        }
        for f in &self.fields {
            domain.grid.check_field(f)?;
        }
        Ok(())
    }

    /// Pointwise `Σ_j u_j²`.
    pub fn density(&self) -> Vec<T> {
        let n = self.fields.first().map_or(0, Vec::len);
        let mut rho = vec![T::zero(); n];
        for f in &self.fields {
            for (r, &v) in rho.iter_mut().zip(f) {
                *r += v * v;
            }
        }
        rho
    }

    pub fn l2_gram(&self, domain: &Domain<T>) -> SymMat<T> {
        let k = self.k();
        let mut g = SymMat::zeros(k);
        for i in 0..k {
            for j in i..k {
                let v = domain.grid.inner_l2_unchecked(&self.fields[i], &self.fields[j]);
                g.set(i, j, v);
                g.set(j, i, v);
            }
        }
        g
    }

    /// `M(u)` computed from cached `L u_j`.
    pub fn h1_gram_with(&self, domain: &Domain<T>, lap: &[Vec<T>]) -> SymMat<T> {
        let k = self.k();
        let h2 = domain.h() * domain.h();
        let mut g = SymMat::zeros(k);
        for i in 0..k {
            for j in i..k {
                let mut acc = T::zero();
                for (&a, &b) in lap[i].iter().zip(&self.fields[j]) {
                    acc += a * b;
                }
                let v = acc * h2;
                g.set(i, j, v);
                g.set(j, i, v);
            }
        }
        g
    }

    pub fn laplacians(&self, domain: &Domain<T>) -> Vec<Vec<T>> {
        self.fields.iter().map(|f| domain.laplacian.apply(f)).collect()
    }

    pub fn h1_gram(&self, domain: &Domain<T>) -> SymMat<T> {
        self.h1_gram_with(domain, &self.laplacians(domain))
    }

    pub fn gram_pair(&self, domain: &Domain<T>) -> Result<GramPair<T>> {
        self.check(domain)?;
        Ok(GramPair {
            l2: self.l2_gram(domain),
            h1: self.h1_gram(domain),
        })
    }

    /// `ũ_i = Σ_j p_{ji} u_j`, i.e. the frame multiplied by `P` on the right.
    pub fn rotated(&self, p: &SymMat<T>) -> Self {
        let k = self.k();
        assert_eq!(p.dim(), k);
        let n = self.fields[0].len();
        let fields = (0..k)
            .map(|i| {
                let mut out = vec![T::zero(); n];
                for j in 0..k {
                    let c = p.get(j, i);
                    if c != T::zero() {
                        for (o, &v) in out.iter_mut().zip(&self.fields[j]) {
                            *o += c * v;
                        }
                    }
                }
                out
            })
            .collect();
        Self { fields }
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            fields: self
                .fields
                .iter()
                .map(|f| f.iter().map(|&v| v * s).collect())
                .collect(),
        }
    }
}

/// Orthonormality tolerance used for precondition checks: `1e-8` in double
/// precision, looser in single precision.
pub fn ortho_tolerance<T: Scalar>() -> T {
    T::lit(1e-8).max(T::lit(1e3) * T::epsilon())
}
