//! Lowest Dirichlet eigenpairs of a masked region.
//!
//! Block LOBPCG without preconditioning: the Rayleigh–Ritz step runs on an
//! explicitly orthonormalized basis `[X, R, P]`, and `A·S` is recomputed
//! from scratch every iteration, which trades a few extra sparse products
//! for robustness near convergence. Small problems go straight to a dense
//! Jacobi decomposition.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dense::SymMat;
use crate::grid::{DirichletOperator, Domain, Mask};
use crate::{Error, Result, Scalar};

/// Solver controls.
#[derive(Debug, Clone)]
pub struct EigenOptions<T> {
    /// Relative residual target `‖Lv − λv‖ / λ`.
    pub tol: T,
    pub max_iter: usize,
    /// Seed of the random starting block; decides the basis chosen inside
    /// degenerate eigenspaces.
    pub seed: u64,
}

impl<T: Scalar> Default for EigenOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-8),
            max_iter: 5000,
            seed: 0x5eed,
        }
    }
}

/// `k` lowest eigenpairs, values ascending, vectors L²-orthonormal on the
/// parent domain (zero outside the sub-mask).
#[derive(Debug, Clone)]
pub struct EigenResult<T> {
    pub values: Vec<T>,
    pub vectors: Vec<Vec<T>>,
    /// `‖L v − λ v‖_{L²}` per pair.
    pub residuals: Vec<T>,
    pub iterations: usize,
}

/// Computes the `k` lowest eigenpairs of the Laplacian of `domain`
/// restricted to `submask` (the whole mask when `None`).
pub fn lowest_eigenpairs<T: Scalar>(
    domain: &Domain<T>,
    submask: Option<&Mask>,
    k: usize,
    opts: &EigenOptions<T>,
) -> Result<EigenResult<T>> {
    lowest_eigenpairs_from(domain, submask, k, opts, &[])
}

/// As [`lowest_eigenpairs`], seeding the block with `start` (fields on the
/// parent domain); missing columns are filled randomly.
pub fn lowest_eigenpairs_from<T: Scalar>(
    domain: &Domain<T>,
    submask: Option<&Mask>,
    k: usize,
    opts: &EigenOptions<T>,
    start: &[Vec<T>],
) -> Result<EigenResult<T>> {
    if k == 0 {
        return Err(Error::InvalidState("k must be at least 1".into()));
    }
    for s in start {
        domain.grid.check_field(s)?;
    }
    let sub = match submask {
        Some(m) => {
            if m.is_empty() {
                return Err(Error::EmptyCell);
            }
            domain.restricted(m)?
        }
        None => domain.clone(),
    };
    let n = sub.dofs();
    if k > n {
        return Err(Error::TooManyEigenpairs {
            requested: k,
            available: n,
        });
    }
    let start_sub: Vec<Vec<T>> = start
        .iter()
        .map(|s| domain.grid.transfer(s, &sub.grid))
        .collect();

    let nb = (k + (k / 2).max(3)).min(n);
    let raw = if n <= 100.max(4 * nb) {
        dense_lowest(&sub.laplacian, k)
    } else {
        lobpcg(&sub.laplacian, k, nb, opts, start_sub)?
    };

    let h = sub.h();
    let vectors = raw
        .vectors
        .iter()
        .map(|x| {
            let scaled: Vec<T> = x.iter().map(|&v| v / h).collect();
            sub.grid.transfer(&scaled, &domain.grid)
        })
        .collect();
    Ok(EigenResult {
        values: raw.values,
        vectors,
        residuals: raw.residuals,
        iterations: raw.iterations,
    })
}

struct RawEigen<T> {
    values: Vec<T>,
    /// Euclidean-unit vectors over the sub-domain dofs.
    vectors: Vec<Vec<T>>,
    /// Euclidean residual norms, equal to the L² residual of the L²-unit field.
    residuals: Vec<T>,
    iterations: usize,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

fn axpy<T: Scalar>(y: &mut [T], alpha: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Orthonormalizes `vecs` against the orthonormal set `basis` and among
/// themselves (two Gram–Schmidt passes); drops numerically dependent ones.
fn orthonormalize<T: Scalar>(vecs: Vec<Vec<T>>, basis: &[Vec<T>]) -> Vec<Vec<T>> {
    let drop_tol = T::epsilon().sqrt();
    let mut kept: Vec<Vec<T>> = Vec::with_capacity(vecs.len());
    for mut v in vecs {
        let before = dot(&v, &v).sqrt();
        if !(before > T::zero()) || !before.is_finite() {
            continue;
        }
        for _pass in 0..2 {
            for b in basis.iter().chain(kept.iter()) {
                let c = dot(b, &v);
                axpy(&mut v, -c, b);
            }
        }
        let after = dot(&v, &v).sqrt();
        if after > drop_tol * before {
            let inv = T::one() / after;
            v.iter_mut().for_each(|x| *x *= inv);
            kept.push(v);
        }
    }
    kept
}

fn random_block<T: Scalar>(n: usize, count: usize, seed: u64) -> Vec<Vec<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    T::lit(z)
                })
                .collect()
        })
        .collect()
}

/// Rayleigh–Ritz on an orthonormal basis: returns Ritz values and the
/// coefficient columns, ascending.
fn rayleigh_ritz<T: Scalar>(basis: &[Vec<T>], images: &[Vec<T>]) -> (Vec<T>, Vec<Vec<T>>) {
    let m = basis.len();
    let g = SymMat::from_fn(m, |i, j| dot(&basis[i], &images[j])).symmetrized();
    let eig = g.eigh();
    (eig.values, eig.vectors)
}

fn combine<T: Scalar>(vecs: &[Vec<T>], coeffs: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); vecs[0].len()];
    for (v, &c) in vecs.iter().zip(coeffs) {
        if c != T::zero() {
            axpy(&mut out, c, v);
        }
    }
    out
}

fn residual<T: Scalar>(ax: &[T], x: &[T], lambda: T) -> Vec<T> {
    ax.iter().zip(x).map(|(&a, &b)| a - lambda * b).collect()
}

fn lobpcg<T: Scalar>(
    op: &DirichletOperator<T>,
    k: usize,
    nb: usize,
    opts: &EigenOptions<T>,
    start: Vec<Vec<T>>,
) -> Result<RawEigen<T>> {
    let n = op.dim();
    let mut block = start;
    block.truncate(nb);
    let missing = nb - block.len();
    block.extend(random_block(n, missing + 2, opts.seed));
    let mut x = orthonormalize(block, &[]);
    x.truncate(nb);
    if x.len() < nb {
        x.extend(orthonormalize(random_block(n, nb, opts.seed ^ 0x9e37_79b9), &x));
        x.truncate(nb);
    }
    let ax: Vec<Vec<T>> = x.iter().map(|v| op.apply(v)).collect();
    let (mut values, coeffs) = rayleigh_ritz(&x, &ax);
    x = coeffs.iter().take(nb).map(|c| combine(&x, c)).collect();
    values.truncate(nb);
    let mut p: Vec<Vec<T>> = Vec::new();
    let mut best_rel = vec![T::infinity(); k];
    let mut best_vals = values[..k].to_vec();

    for iter in 0..opts.max_iter {
        x = orthonormalize(x, &[]);
        let ax: Vec<Vec<T>> = x.iter().map(|v| op.apply(v)).collect();
        let lambdas: Vec<T> = x.iter().zip(&ax).map(|(v, av)| dot(v, av)).collect();
        let res: Vec<Vec<T>> = (0..x.len()).map(|j| residual(&ax[j], &x[j], lambdas[j])).collect();
        let rel: Vec<T> = res
            .iter()
            .zip(&lambdas)
            .map(|(r, &l)| dot(r, r).sqrt() / l.abs().max(T::min_positive_value()))
            .collect();
        let worst = rel[..k].iter().fold(T::zero(), |a, &b| a.max(b));
        if worst < best_rel.iter().fold(T::zero(), |a, &b| a.max(b)) {
            best_rel = rel[..k].to_vec();
            best_vals = lambdas[..k].to_vec();
        }
        if worst <= opts.tol {
            let mut order: Vec<usize> = (0..x.len()).collect();
            order.sort_by(|&a, &b| lambdas[a].partial_cmp(&lambdas[b]).unwrap_or(std::cmp::Ordering::Equal));
            let order = &order[..k];
            return Ok(RawEigen {
                values: order.iter().map(|&j| lambdas[j]).collect(),
                residuals: order.iter().map(|&j| dot(&res[j], &res[j]).sqrt()).collect(),
                vectors: order.iter().map(|&j| x[j].clone()).collect(),
                iterations: iter,
            });
        }
        let active: Vec<Vec<T>> = res
            .into_iter()
            .zip(&rel)
            .filter(|(_, &r)| r > opts.tol)
            .map(|(r, _)| r)
            .collect();
        let w = orthonormalize(active, &x);
        let mut xw = x.clone();
        xw.extend(w.iter().cloned());
        let pp = orthonormalize(std::mem::take(&mut p), &xw);

        let mut basis = x.clone();
        basis.extend(w);
        basis.extend(pp);
        let images: Vec<Vec<T>> = basis.iter().map(|v| op.apply(v)).collect();
        let (_, coeffs) = rayleigh_ritz(&basis, &images);
        let nx = x.len();
        let new_x: Vec<Vec<T>> = coeffs.iter().take(nb).map(|c| combine(&basis, c)).collect();
        p = coeffs
            .iter()
            .take(nb)
            .map(|c| {
                let mut tail = c.clone();
                tail[..nx].iter_mut().for_each(|t| *t = T::zero());
                combine(&basis, &tail)
            })
            .collect();
        x = new_x;
    }
    let worst = best_rel.iter().fold(T::zero(), |a, &b| a.max(b));
    Err(Error::EigenNonConvergence {
        iterations: opts.max_iter,
        worst_residual: worst.to_f64_lossy(),
        best_values: best_vals.iter().map(|v| v.to_f64_lossy()).collect(),
        best_residuals: best_rel.iter().map(|v| v.to_f64_lossy()).collect(),
    })
}

fn dense_lowest<T: Scalar>(op: &DirichletOperator<T>, k: usize) -> RawEigen<T> {
    let n = op.dim();
    let mut a = SymMat::zeros(n);
    for r in 0..n {
        for (c, v) in op.row(r) {
            a.set(r, c, v);
        }
    }
    let eig = a.eigh();
    let vectors: Vec<Vec<T>> = eig.vectors[..k].to_vec();
    let residuals = vectors
        .iter()
        .zip(&eig.values)
        .map(|(v, &l)| {
            let r = residual(&op.apply(v), v, l);
            dot(&r, &r).sqrt()
        })
        .collect();
    RawEigen {
        values: eig.values[..k].to_vec(),
        vectors,
        residuals,
        iterations: 0,
    }
}
