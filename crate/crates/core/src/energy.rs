//! Penalized segregation energy, its gradient, and the Lagrange multipliers.
//!
//! For groups `u^1, …, u^m` with densities `ρ_i = Σ_j (u^i_j)²`
//!
//! ```text
//! E_β = Σ_i φ_i(M(u^i)) + Σ_{i<j} (2β/q) ∫ ρ_i^{q/2} ρ_j^{q/2}
//! ```
//!
//! where `φ_i(M) = ψ_i(eig M)` is the matrix extension of the group cost.
//! On a frame whose `M(u^i)` is diagonal this is `ψ_i(∫|∇u^i_1|², …)`.
//! Gradients are taken in the h²-weighted L² metric.

use crate::dense::SymMat;
use crate::frame::FieldFrame;
use crate::grid::Domain;
use crate::specfun::SpectralCost;
use crate::{Error, Result, Scalar};

/// Regularization added to a density before raising it to `q/2 − 1 < 0`.
pub const DENSITY_REGULARIZATION: f64 = 1e-14;

/// All groups plus the penalty parameters: a point of `Σ(L²)^m`.
#[derive(Debug, Clone)]
pub struct PartitionState<T> {
    pub groups: Vec<FieldFrame<T>>,
    pub costs: Vec<SpectralCost<T>>,
    pub beta: T,
    pub q: T,
}

/// Lagrange multiplier matrices `μ^i` and cost weights `a^i` per group.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierSet<T> {
    pub mu: Vec<SymMat<T>>,
    pub weights: Vec<Vec<T>>,
}

/// Energy split into its pieces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyParts<T> {
    /// `Σ_i φ_i(M(u^i))`.
    pub spectral: T,
    /// `(2β/q) ∫ Σ_{i<j} ρ_i^{q/2} ρ_j^{q/2}`, the term entering `E_β`.
    pub penalty: T,
    /// `∫ Σ_{i<j} ρ_i^{q/2} ρ_j^{q/2}` without any prefactor.
    pub overlap: T,
}

impl<T: Scalar> EnergyParts<T> {
    pub fn total(&self) -> T {
        self.spectral + self.penalty
    }
}

/// `max |L2gram − I|` and `max |offdiag H1gram|` of one group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintResidual<T> {
    pub l2: T,
    pub h1: T,
}

impl<T: Scalar> PartitionState<T> {
    pub fn new(groups: Vec<FieldFrame<T>>, costs: Vec<SpectralCost<T>>, beta: T, q: T) -> Result<Self> {
        let s = Self { groups, costs, beta, q };
        s.validate_parameters()?;
        Ok(s)
    }

    fn validate_parameters(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::InvalidState("at least one group is required".into()));
        }
        if self.groups.len() != self.costs.len() {
            return Err(Error::InvalidState(format!(
                "{} groups but {} costs",
                self.groups.len(),
                self.costs.len()
            )));
        }
        for (i, (g, c)) in self.groups.iter().zip(&self.costs).enumerate() {
            if g.k() != c.arity() {
                return Err(Error::InvalidState(format!(
                    "group {i} has {} fields but its cost has arity {}",
                    g.k(),
                    c.arity()
                )));
            }
        }
        if !(self.beta >= T::zero()) || !self.beta.is_finite() {
            return Err(Error::InvalidState("beta must be finite and nonnegative".into()));
        }
        if !(self.q > T::one()) || !self.q.is_finite() {
            return Err(Error::InvalidState("q must exceed 1".into()));
        }
        Ok(())
    }

    /// Checks parameters and that every field lives on `domain`.
    pub fn check(&self, domain: &Domain<T>) -> Result<()> {
        self.validate_parameters()?;
        for g in &self.groups {
            g.check(domain)?;
        }
        Ok(())
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.groups.len()
    }

    pub fn ks(&self) -> Vec<usize> {
        self.groups.iter().map(FieldFrame::k).collect()
    }

    pub fn with_beta(&self, beta: T) -> Self {
        Self { beta, ..self.clone() }
    }

    pub fn densities(&self) -> Vec<Vec<T>> {
        self.groups.iter().map(FieldFrame::density).collect()
    }
}

/// Pointwise `Σ_j u_j²` of a frame.
pub fn group_density<T: Scalar>(frame: &FieldFrame<T>) -> Vec<T> {
    frame.density()
}

#[inline]
fn half_power<T: Scalar>(rho: T, q: T) -> T {
    if q == T::lit(2.0) {
        rho
    } else {
        rho.powf(q * T::lit(0.5))
    }
}

#[inline]
fn guarded_power<T: Scalar>(rho: T, q: T) -> T {
    if q == T::lit(2.0) {
        T::one()
    } else {
        (rho + T::lit(DENSITY_REGULARIZATION)).powf(q * T::lit(0.5) - T::one())
    }
}

/// `ρ_i^{q/2}` per group, and the competitor sum `Σ_{j≠i} ρ_j^{q/2}`.
fn competition<T: Scalar>(rho: &[Vec<T>], q: T) -> (Vec<Vec<T>>, Vec<Vec<T>>) {
    let powered: Vec<Vec<T>> = rho.iter().map(|r| r.iter().map(|&v| half_power(v, q)).collect()).collect();
    let m = rho.len();
    let n = rho.first().map_or(0, Vec::len);
    let others = (0..m)
        .map(|i| {
            let mut acc = vec![T::zero(); n];
            for (j, pj) in powered.iter().enumerate() {
                if j != i {
                    for (a, &b) in acc.iter_mut().zip(pj) {
                        *a += b;
                    }
                }
            }
            acc
        })
        .collect();
    (powered, others)
}

fn overlap_integral<T: Scalar>(domain: &Domain<T>, powered: &[Vec<T>]) -> T {
    let h2 = domain.h() * domain.h();
    let n = domain.dofs();
    let mut acc = T::zero();
    for node in 0..n {
        for i in 0..powered.len() {
            for j in (i + 1)..powered.len() {
                acc += powered[i][node] * powered[j][node];
            }
        }
    }
    acc * h2
}

/// Shared intermediate quantities of one state.
pub(crate) struct Evaluation<T> {
    pub parts: EnergyParts<T>,
    pub laplacians: Vec<Vec<Vec<T>>>,
    pub h1: Vec<SymMat<T>>,
    pub densities: Vec<Vec<T>>,
    pub others: Vec<Vec<T>>,
}

pub(crate) fn evaluate<T: Scalar>(domain: &Domain<T>, state: &PartitionState<T>) -> Result<Evaluation<T>> {
    state.check(domain)?;
    let laplacians: Vec<Vec<Vec<T>>> = state.groups.iter().map(|g| g.laplacians(domain)).collect();
    let h1: Vec<SymMat<T>> = state
        .groups
        .iter()
        .zip(&laplacians)
        .map(|(g, l)| g.h1_gram_with(domain, l))
        .collect();
    let mut spectral = T::zero();
    for (cost, m) in state.costs.iter().zip(&h1) {
        spectral += cost.phi(m)?;
    }
    let densities = state.densities();
    let (powered, others) = competition(&densities, state.q);
    let overlap = overlap_integral(domain, &powered);
    let penalty = T::lit(2.0) * state.beta / state.q * overlap;
    Ok(Evaluation {
        parts: EnergyParts {
            spectral,
            penalty,
            overlap,
        },
        laplacians,
        h1,
        densities,
        others,
    })
}

pub fn energy_parts<T: Scalar>(domain: &Domain<T>, state: &PartitionState<T>) -> Result<EnergyParts<T>> {
    Ok(evaluate(domain, state)?.parts)
}

/// `E_β` of the state.
pub fn energy_beta<T: Scalar>(domain: &Domain<T>, state: &PartitionState<T>) -> Result<T> {
    Ok(energy_parts(domain, state)?.total())
}

pub(crate) fn gradient_from<T: Scalar>(
    state: &PartitionState<T>,
    ev: &Evaluation<T>,
) -> Result<Vec<Vec<Vec<T>>>> {
    let two = T::lit(2.0);
    let mut out = Vec::with_capacity(state.m());
    for (i, group) in state.groups.iter().enumerate() {
        let g = state.costs[i].phi_grad(&ev.h1[i])?;
        let k = group.k();
        let weight: Vec<T> = ev.densities[i]
            .iter()
            .zip(&ev.others[i])
            .map(|(&rho, &oth)| two * state.beta * guarded_power(rho, state.q) * oth)
            .collect();
        let mut grads = Vec::with_capacity(k);
        for l in 0..k {
            let mut gl: Vec<T> = group.fields[l].iter().zip(&weight).map(|(&u, &w)| u * w).collect();
            for j in 0..k {
                let c = two * g.get(j, l);
                if c != T::zero() {
                    for (o, &lu) in gl.iter_mut().zip(&ev.laplacians[i][j]) {
                        *o += c * lu;
                    }
                }
            }
            grads.push(gl);
        }
        out.push(grads);
    }
    Ok(out)
}

/// L² gradient of `E_β`, indexed `[group][field][dof]`. At an H¹-diagonal
/// frame the spectral part of field `l` is `2 a_l L u_l`.
pub fn energy_gradient<T: Scalar>(domain: &Domain<T>, state: &PartitionState<T>) -> Result<Vec<Vec<Vec<T>>>> {
    let ev = evaluate(domain, state)?;
    gradient_from(state, &ev)
}

/// `μ^i_{jl} = δ_{jl} a^i_j ∫|∇u^i_j|² + β ∫ u^i_j u^i_l ρ_i^{q/2−1} Σ_{r≠i} ρ_r^{q/2}`.
pub fn multipliers<T: Scalar>(domain: &Domain<T>, state: &PartitionState<T>) -> Result<MultiplierSet<T>> {
    let ev = evaluate(domain, state)?;
    let h2 = domain.h() * domain.h();
    let mut mu = Vec::with_capacity(state.m());
    let mut weights = Vec::with_capacity(state.m());
    for (i, group) in state.groups.iter().enumerate() {
        let energies = ev.h1[i].diag();
        let a = state.costs[i].grad(&energies)?;
        let coupling: Vec<T> = ev.densities[i]
            .iter()
            .zip(&ev.others[i])
            .map(|(&rho, &oth)| guarded_power(rho, state.q) * oth)
            .collect();
        let k = group.k();
        let mut m = SymMat::zeros(k);
        for j in 0..k {
            for l in j..k {
                let mut acc = T::zero();
                for ((&uj, &ul), &c) in group.fields[j].iter().zip(&group.fields[l]).zip(&coupling) {
                    acc += uj * ul * c;
                }
                let mut v = state.beta * acc * h2;
                if j == l {
                    v += a[j] * energies[j];
                }
                m.set(j, l, v);
                m.set(l, j, v);
            }
        }
        mu.push(m);
        weights.push(a);
    }
    Ok(MultiplierSet { mu, weights })
}

/// Constraint violations per group.
pub fn constraint_residual<T: Scalar>(
    domain: &Domain<T>,
    state: &PartitionState<T>,
) -> Result<Vec<ConstraintResidual<T>>> {
    state.check(domain)?;
    Ok(state
        .groups
        .iter()
        .map(|g| ConstraintResidual {
            l2: g.l2_gram(domain).max_abs_dev_identity(),
            h1: g.h1_gram(domain).max_abs_offdiag(),
        })
        .collect())
}
