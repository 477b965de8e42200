//! Symmetric spectral costs and the frame change of basis.
//!
//! A cost `ψ` acts on the vector of Dirichlet energies of a frame. Its
//! matrix extension `φ(M) = ψ(eig M)` is orthogonally invariant, so a
//! frame can be rotated until `M(u)` is diagonal without changing the
//! value, and at a diagonal `M` the gradient `∇φ` is `diag(∂ψ/∂ξ)`.

use crate::dense::SymMat;
use crate::frame::{ortho_tolerance, FieldFrame};
use crate::grid::Domain;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostKind<T> {
    /// `(Σ ξ_j^p)^{1/p}`, `p ≥ 1`.
    PowerSum(T),
    /// `Π ξ_j`.
    Product,
    /// `Σ ξ_j`.
    PlainSum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralCost<T> {
    kind: CostKind<T>,
    arity: usize,
}

impl<T: Scalar> SpectralCost<T> {
    pub fn new(kind: CostKind<T>, arity: usize) -> Result<Self> {
        if arity == 0 {
            return Err(Error::InvalidCost("arity must be at least 1".into()));
        }
        if let CostKind::PowerSum(p) = kind {
            if !(p >= T::one()) || !p.is_finite() {
                return Err(Error::InvalidCost(format!("power-sum exponent must be ≥ 1, got {p}")));
            }
        }
        Ok(Self { kind, arity })
    }

    pub fn power_sum(p: T, arity: usize) -> Result<Self> {
        Self::new(CostKind::PowerSum(p), arity)
    }

    pub fn plain_sum(arity: usize) -> Self {
        Self {
            kind: CostKind::PlainSum,
            arity: arity.max(1),
        }
    }

    pub fn product(arity: usize) -> Self {
        Self {
            kind: CostKind::Product,
            arity: arity.max(1),
        }
    }

    #[inline]
    pub fn kind(&self) -> CostKind<T> {
        self.kind
    }

    #[inline]
    pub fn arity(&self) -> usize {
        self.arity
    }

    /// Same cost with the power-sum exponent replaced; other kinds unchanged.
    pub fn with_exponent(&self, p: T) -> Result<Self> {
        match self.kind {
            CostKind::PowerSum(_) => Self::new(CostKind::PowerSum(p), self.arity),
            _ => Ok(*self),
        }
    }

    fn check(&self, xi: &[T]) -> Result<()> {
        if xi.len() != self.arity {
            return Err(Error::DimensionMismatch {
                expected: self.arity,
                got: xi.len(),
            });
        }
        match xi.iter().find(|&&x| !(x > T::zero())) {
            Some(&bad) => Err(Error::NonPositiveArgument(bad.to_f64_lossy())),
            None => Ok(()),
        }
    }

    /// `ψ(ξ)` for positive `ξ`.
    pub fn eval(&self, xi: &[T]) -> Result<T> {
        self.check(xi)?;
        Ok(match self.kind {
            CostKind::PlainSum => xi.iter().copied().sum(),
            CostKind::Product => xi.iter().fold(T::one(), |a, &b| a * b),
            CostKind::PowerSum(p) => power_mean(xi, p),
        })
    }

    /// `∂ψ/∂ξ_i`, strictly positive on the open orthant.
    pub fn grad(&self, xi: &[T]) -> Result<Vec<T>> {
        self.check(xi)?;
        Ok(match self.kind {
            CostKind::PlainSum => vec![T::one(); xi.len()],
            CostKind::Product => (0..xi.len())
                .map(|i| {
                    xi.iter()
                        .enumerate()
                        .filter(|&(j, _)| j != i)
                        .fold(T::one(), |a, (_, &b)| a * b)
                })
                .collect(),
            CostKind::PowerSum(p) => {
                // (ξ_i / ψ)^{p−1} = ξ_i^{p−1} / (Σ ξ^p)^{(p−1)/p}
                let psi = power_mean(xi, p);
                xi.iter()
                    .map(|&x| ((p - T::one()) * (x.ln() - psi.ln())).exp())
                    .collect()
            }
        })
    }

    /// Matrix extension `φ(M) = ψ(eig M)` for symmetric positive definite `M`.
    pub fn phi(&self, m: &SymMat<T>) -> Result<T> {
        self.eval(&m.eigh().values)
    }

    /// `∇φ(M) = P diag(∂ψ/∂ξ(λ)) Pᵀ`; symmetric, and diagonal when `M` is.
    pub fn phi_grad(&self, m: &SymMat<T>) -> Result<SymMat<T>> {
        let eig = m.eigh();
        let g = self.grad(&eig.values)?;
        let k = m.dim();
        Ok(SymMat::from_fn(k, |i, j| {
            let mut acc = T::zero();
            for l in 0..k {
                acc += eig.vectors[l][i] * g[l] * eig.vectors[l][j];
            }
            acc
        }))
    }
}

fn power_mean<T: Scalar>(xi: &[T], p: T) -> T {
    let top = xi.iter().fold(T::zero(), |a, &b| a.max(b));
    let s: T = xi.iter().map(|&x| (x / top).powf(p)).sum();
    top * s.powf(T::one() / p)
}

/// Rotation of a frame making its H¹ Gram matrix diagonal.
#[derive(Debug, Clone)]
pub struct Diagonalized<T> {
    pub frame: FieldFrame<T>,
    /// Orthogonal `P` with `frame' = frame · P`.
    pub rotation: SymMat<T>,
    /// Diagonal of the new H¹ Gram matrix, ascending.
    pub energies: Vec<T>,
}

/// Rotates an L²-orthonormal frame so that `∫ ∇u'_k·∇u'_l = 0` for `k ≠ l`.
/// Energies come out ascending and each field's first clearly nonzero
/// entry is made nonnegative.
pub fn diagonalize_frame<T: Scalar>(frame: &FieldFrame<T>, domain: &Domain<T>) -> Result<Diagonalized<T>> {
    let gp = frame.gram_pair(domain)?;
    let dev = gp.l2.max_abs_dev_identity();
    if !(dev <= ortho_tolerance::<T>()) {
        return Err(Error::NotOrthonormal(dev.to_f64_lossy()));
    }
    let eig = gp.h1.eigh();
    let mut p = eig.basis();
    let mut rotated = frame.rotated(&p);
    for (i, f) in rotated.fields.iter_mut().enumerate() {
        let peak = f.iter().fold(T::zero(), |a, &b| a.max(b.abs()));
        let cut = peak * T::lit(1e-8);
        if let Some(&lead) = f.iter().find(|v| v.abs() > cut) {
            if lead < T::zero() {
                f.iter_mut().for_each(|v| *v = -*v);
                for r in 0..p.dim() {
                    p.set(r, i, -p.get(r, i));
                }
            }
        }
    }
    Ok(Diagonalized {
        frame: rotated,
        rotation: p,
        energies: eig.values,
    })
}
