//! Projected gradient descent on products of L²-Stiefel manifolds with
//! continuation in the penalty strength β and the cost exponent p.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dense::SymMat;
use crate::energy::{
    constraint_residual, evaluate, gradient_from, multipliers, ConstraintResidual, MultiplierSet, PartitionState,
};
use crate::frame::FieldFrame;
use crate::grid::Domain;
use crate::specfun::{diagonalize_frame, CostKind, SpectralCost};
use crate::{Error, Result, Scalar};

/// Inner-iteration controls of one continuation stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerParams<T> {
    pub max_iter: usize,
    /// Stop once `‖projected gradient‖ ≤ tol · E_β`.
    pub tol: T,
    /// Armijo sufficient-decrease constant.
    pub armijo: T,
    /// Backtracking gives up below `min_step_rel` times the reference step.
    pub min_step_rel: T,
}

impl<T: Scalar> Default for InnerParams<T> {
    fn default() -> Self {
        Self {
            max_iter: 20_000,
            tol: T::lit(1e-6),
            armijo: T::lit(1e-4),
            min_step_rel: T::lit(1e-12),
        }
    }
}

/// β and p ladders plus inner controls.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationSchedule<T> {
    pub beta_ladder: Vec<T>,
    /// Exponents applied to power-sum costs; other cost kinds run once.
    pub p_ladder: Vec<T>,
    pub inner: InnerParams<T>,
    /// Carry the state from one p stage into the next instead of
    /// restarting from the seeded initialization.
    pub warm_start: bool,
}

fn strictly_increasing<T: Scalar>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl<T: Scalar> ContinuationSchedule<T> {
    pub fn new(beta_ladder: Vec<T>, p_ladder: Vec<T>, inner: InnerParams<T>, warm_start: bool) -> Result<Self> {
        let s = Self {
            beta_ladder,
            p_ladder,
            inner,
            warm_start,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSchedule(m.into()));
        if self.beta_ladder.is_empty() {
            return bad("beta ladder is empty");
        }
        if self.beta_ladder.iter().any(|b| !(*b >= T::zero()) || !b.is_finite()) {
            return bad("beta values must be finite and nonnegative");
        }
        if !strictly_increasing(&self.beta_ladder) {
            return bad("beta ladder must be strictly increasing");
        }
        if self.p_ladder.is_empty() {
            return bad("p ladder is empty");
        }
        if self.p_ladder.iter().any(|p| !(*p >= T::one()) || !p.is_finite()) {
            return bad("p values must be finite and at least 1");
        }
        if !strictly_increasing(&self.p_ladder) {
            return bad("p ladder must be strictly increasing");
        }
        if self.inner.max_iter == 0 {
            return bad("max_iter must be positive");
        }
        if !(self.inner.tol > T::zero()) {
            return bad("tolerance must be positive");
        }
        if !(self.inner.armijo > T::zero() && self.inner.armijo < T::one()) {
            return bad("armijo constant must lie in (0, 1)");
        }
        if !(self.inner.min_step_rel > T::zero()) {
            return bad("minimum step must be positive");
        }
        Ok(())
    }

    /// Geometric β ladder `1, 2, 4, …` up to the first power of two reaching
    /// `16/h²`, and p ladder `{1, 2, 4, 8}`.
    pub fn default_for(h: T) -> Self {
        Self {
            beta_ladder: geometric_ladder(T::one(), T::lit(16.0) / (h * h)),
            p_ladder: [1.0, 2.0, 4.0, 8.0].iter().map(|&p| T::lit(p)).collect(),
            inner: InnerParams::default(),
            warm_start: true,
        }
    }
}

/// Powers of two from `start` until the first value `≥ stop`.
pub fn geometric_ladder<T: Scalar>(start: T, stop: T) -> Vec<T> {
    let mut out = vec![start];
    let mut b = start;
    while b < stop {
        b = b * T::lit(2.0);
        out.push(b);
    }
    out
}

/// Summary of one continuation stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord<T> {
    pub beta: T,
    /// Exponent of power-sum costs in this stage; `None` when no cost has one.
    pub p: Option<T>,
    pub energy_start: T,
    pub energy_end: T,
    /// `β ∫ Σ_{i<j} ρ_i^{q/2} ρ_j^{q/2}` at the end of the stage.
    pub penalty_integral: T,
    pub residuals: Vec<ConstraintResidual<T>>,
    pub iterations: usize,
    /// Final projected-gradient norm relative to the energy.
    pub grad_rel: T,
    pub converged: bool,
    pub line_search_failed: bool,
}

/// Everything `solve` learned about its run.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport<T> {
    pub seed: u64,
    pub stages: Vec<StageRecord<T>>,
    pub multipliers: MultiplierSet<T>,
    /// Final `∫|∇u^i_l|²` per group, ascending.
    pub energies: Vec<Vec<T>>,
    /// One-based selection index `l_i` per group.
    pub selection: Vec<usize>,
    /// Relative spread of the surviving block `l_i..k_i` of each group.
    pub block_spread: Vec<T>,
}

impl<T: Scalar> SolveReport<T> {
    pub fn final_energy(&self) -> T {
        self.stages.last().map_or(T::nan(), |s| s.energy_end)
    }
}

/// Weights below `floor_rel · max` count as discarded.
pub const WEIGHT_FLOOR: f64 = 1e-3;

/// Smallest one-based `l` with `a_l ≥ floor_rel · max a`.
pub fn selection_index<T: Scalar>(weights: &[T], floor_rel: T) -> usize {
    let max = weights.iter().copied().fold(T::zero(), T::max);
    weights
        .iter()
        .position(|&a| a >= floor_rel * max)
        .map_or(weights.len(), |l| l + 1)
}

/// Symmetric (Löwdin) L² orthonormalization `U (UᵀU)^{-1/2}`.
pub fn retract<T: Scalar>(domain: &Domain<T>, frame: &FieldFrame<T>) -> Result<FieldFrame<T>> {
    frame.check(domain)?;
    let gram = frame.l2_gram(domain);
    if gram.norm().is_nan() {
        return Err(Error::FrameCollapse);
    }
    let eig = gram.eigh();
    let max = eig.values.iter().copied().fold(T::zero(), T::max);
    let min = eig.values.first().copied().unwrap_or(T::zero());
    if !(max > T::zero()) || !max.is_finite() || !(min > T::lit(1e-12) * max) {
        return Err(Error::FrameCollapse);
    }
    let inv_sqrt = gram.spectral_map(|v| T::one() / v.sqrt());
    Ok(frame.rotated(&inv_sqrt))
}

type Fields<T> = Vec<Vec<Vec<T>>>;

fn project_tangent<T: Scalar>(domain: &Domain<T>, state: &PartitionState<T>, grad: &Fields<T>) -> Fields<T> {
    state
        .groups
        .iter()
        .zip(grad)
        .map(|(frame, g)| {
            let k = frame.k();
            let s = SymMat::from_fn(k, |j, l| {
                let a = domain.grid.inner_l2_unchecked(&frame.fields[j], &g[l]);
                let b = domain.grid.inner_l2_unchecked(&frame.fields[l], &g[j]);
                (a + b) * T::lit(0.5)
            });
            (0..k)
                .map(|l| {
                    let mut out = g[l].clone();
                    for j in 0..k {
                        let c = s.get(j, l);
                        for (o, &u) in out.iter_mut().zip(&frame.fields[j]) {
                            *o -= c * u;
                        }
                    }
                    out
                })
                .collect()
        })
        .collect()
}

fn fields_dot<T: Scalar>(domain: &Domain<T>, a: &Fields<T>, b: &Fields<T>) -> T {
    let mut acc = T::zero();
    for (ga, gb) in a.iter().zip(b) {
        for (fa, fb) in ga.iter().zip(gb) {
            acc += domain.grid.inner_l2_unchecked(fa, fb);
        }
    }
    acc
}

fn fields_diff<T: Scalar>(a: &Fields<T>, b: &Fields<T>) -> Fields<T> {
    a.iter()
        .zip(b)
        .map(|(ga, gb)| {
            ga.iter()
                .zip(gb)
                .map(|(fa, fb)| fa.iter().zip(fb).map(|(&x, &y)| x - y).collect())
                .collect()
        })
        .collect()
}

fn stepped<T: Scalar>(domain: &Domain<T>, state: &PartitionState<T>, dir: &Fields<T>, alpha: T) -> Result<PartitionState<T>> {
    let mut groups = Vec::with_capacity(state.m());
    for (frame, d) in state.groups.iter().zip(dir) {
        let moved = FieldFrame::new(
            frame
                .fields
                .iter()
                .zip(d)
                .map(|(f, df)| f.iter().zip(df).map(|(&u, &g)| u - alpha * g).collect())
                .collect(),
        );
        groups.push(retract(domain, &moved)?);
    }
    Ok(PartitionState {
        groups,
        costs: state.costs.clone(),
        beta: state.beta,
        q: state.q,
    })
}

fn max_weight<T: Scalar>(state: &PartitionState<T>, h1: &[SymMat<T>]) -> Result<T> {
    let mut w = T::zero();
    for (cost, m) in state.costs.iter().zip(h1) {
        for a in cost.grad(&m.diag())? {
            w = w.max(a);
        }
    }
    Ok(w)
}

fn fields_of<T: Scalar>(state: &PartitionState<T>) -> Fields<T> {
    state.groups.iter().map(|g| g.fields.clone()).collect()
}

/// Restores H¹-orthogonality inside every group.
pub fn diagonalize_state<T: Scalar>(domain: &Domain<T>, state: &PartitionState<T>) -> Result<PartitionState<T>> {
    let mut groups = Vec::with_capacity(state.m());
    for g in &state.groups {
        groups.push(diagonalize_frame(g, domain)?.frame);
    }
    Ok(PartitionState {
        groups,
        ..state.clone()
    })
}

/// Minimizes `E_β` at fixed β and p from `state`, then diagonalizes every
/// group. Trial steps follow alternating Barzilai–Borwein lengths and are
/// accepted only under the Armijo condition, so the energy never increases.
pub fn minimize_stage<T: Scalar>(
    domain: &Domain<T>,
    state: &PartitionState<T>,
    inner: &InnerParams<T>,
) -> Result<(PartitionState<T>, StageRecord<T>)> {
    let mut x = retract_state(domain, state)?;
    let mut ev = evaluate(domain, &x)?;
    let mut energy = ev.parts.total();
    if !energy.is_finite() {
        return Err(Error::NonFiniteEnergy {
            beta: state.beta.to_f64_lossy(),
        });
    }
    let energy_start = energy;
    let spectral_scale = T::lit(8.0) / (domain.h() * domain.h());
    let reference = T::one() / (T::lit(2.0) * max_weight(&x, &ev.h1)?.max(T::lit(1e-300)) * spectral_scale);
    let mut prev: Option<(Fields<T>, Fields<T>)> = None;
    let mut last_step = reference;
    let mut iterations = 0;
    let mut converged = false;
    let mut line_search_failed = false;
    let mut grad_rel = T::infinity();
    for it in 0..inner.max_iter {
        let grad = gradient_from(&x, &ev)?;
        let xi = project_tangent(domain, &x, &grad);
        let g2 = fields_dot(domain, &xi, &xi);
        grad_rel = g2.sqrt() / energy.abs().max(T::min_positive_value());
        if grad_rel <= inner.tol {
            converged = true;
            break;
        }
        let cur = fields_of(&x);
        let mut alpha = match &prev {
            Some((px, pxi)) => {
                let s = fields_diff(&cur, px);
                let y = fields_diff(&xi, pxi);
                let sy = fields_dot(domain, &s, &y);
                if sy > T::zero() {
                    let bb = if it % 2 == 0 {
                        fields_dot(domain, &s, &s) / sy
                    } else {
                        sy / fields_dot(domain, &y, &y)
                    };
                    bb.min(T::lit(1e6) * reference).max(T::lit(1e-6) * reference)
                } else {
                    (last_step * T::lit(2.0)).min(T::lit(1e6) * reference)
                }
            }
            None => reference,
        };
        let floor = inner.min_step_rel * reference;
        let accepted = loop {
            let trial = stepped(domain, &x, &xi, alpha)?;
            let tev = evaluate(domain, &trial)?;
            let te = tev.parts.total();
            if te.is_finite() && te <= energy - inner.armijo * alpha * g2 {
                break Some((trial, tev, te));
            }
            alpha = alpha * T::lit(0.5);
            if alpha < floor {
                break None;
            }
        };
        iterations = it + 1;
        match accepted {
            Some((trial, tev, te)) => {
                prev = Some((cur, xi));
                last_step = alpha;
                x = trial;
                ev = tev;
                energy = te;
            }
            None => {
                line_search_failed = true;
                break;
            }
        }
    }
    let x = diagonalize_state(domain, &x)?;
    let parts = evaluate(domain, &x)?.parts;
    let record = StageRecord {
        beta: x.beta,
        p: stage_exponent(&x.costs),
        energy_start,
        energy_end: parts.total(),
        penalty_integral: x.beta * parts.overlap,
        residuals: constraint_residual(domain, &x)?,
        iterations,
        grad_rel,
        converged,
        line_search_failed,
    };
    Ok((x, record))
}

fn retract_state<T: Scalar>(domain: &Domain<T>, state: &PartitionState<T>) -> Result<PartitionState<T>> {
    state.check(domain)?;
    let mut groups = Vec::with_capacity(state.m());
    for g in &state.groups {
        groups.push(retract(domain, g)?);
    }
    Ok(PartitionState {
        groups,
        ..state.clone()
    })
}

fn stage_exponent<T: Scalar>(costs: &[SpectralCost<T>]) -> Option<T> {
    costs.iter().find_map(|c| match c.kind() {
        CostKind::PowerSum(p) => Some(p),
        _ => None,
    })
}

fn with_exponent<T: Scalar>(costs: &[SpectralCost<T>], p: T) -> Result<Vec<SpectralCost<T>>> {
    costs
        .iter()
        .map(|c| match c.kind() {
            CostKind::PowerSum(_) => c.with_exponent(p),
            _ => Ok(c.clone()),
        })
        .collect()
}

/// Random Gaussian fields masked by a Voronoi tessellation of `m` random
/// mask nodes, orthonormalized per group.
pub fn initial_state<T: Scalar>(
    domain: &Domain<T>,
    costs: &[SpectralCost<T>],
    q: T,
    beta: T,
    seed: u64,
) -> Result<PartitionState<T>> {
    let m = costs.len();
    let n = domain.dofs();
    if m == 0 {
        return Err(Error::InvalidState("at least one group is required".into()));
    }
    let total_k: usize = costs.iter().map(SpectralCost::arity).sum();
    if total_k > n {
        return Err(Error::TooManyEigenpairs {
            requested: total_k,
            available: n,
        });
    }
    if m > n {
        return Err(Error::InvalidState("more groups than grid nodes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<usize> = Vec::with_capacity(m);
    while centers.len() < m {
        let c = rng.random_range(0..n);
        if !centers.contains(&c) {
            centers.push(c);
        }
    }
    let centers: Vec<(T, T)> = centers.iter().map(|&c| domain.grid.dof_position(c)).collect();
    let owner: Vec<usize> = (0..n)
        .map(|d| {
            let (x, y) = domain.grid.dof_position(d);
            let mut best = 0;
            let mut best_d = T::infinity();
            for (i, &(cx, cy)) in centers.iter().enumerate() {
                let dist = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                if dist < best_d {
                    best_d = dist;
                    best = i;
                }
            }
            best
        })
        .collect();
    let mut groups = Vec::with_capacity(m);
    for (i, cost) in costs.iter().enumerate() {
        let fields = (0..cost.arity())
            .map(|_| {
                owner
                    .iter()
                    .map(|&o| {
                        let z: f64 = rng.sample(StandardNormal);
                        if o == i {
                            T::lit(z)
                        } else {
                            T::zero()
                        }
                    })
                    .collect()
            })
            .collect();
        groups.push(retract(domain, &FieldFrame::new(fields))?);
    }
    PartitionState::new(groups, costs.to_vec(), beta, q)
}

/// Nodes where group `i` holds the largest density and exceeds
/// `threshold_rel` of its own peak. Ties go to the lowest index.
pub(crate) fn territory<T: Scalar>(densities: &[Vec<T>], i: usize, threshold_rel: T) -> usize {
    let peak = densities[i].iter().copied().fold(T::zero(), T::max);
    (0..densities[i].len())
        .filter(|&n| {
            let v = densities[i][n];
            v > threshold_rel * peak
                && densities
                    .iter()
                    .enumerate()
                    .all(|(j, d)| j == i || (if j < i { v > d[n] } else { v >= d[n] }))
        })
        .count()
}

/// Runs the full continuation from the seeded initialization.
pub fn solve<T: Scalar>(
    domain: &Domain<T>,
    costs: &[SpectralCost<T>],
    q: T,
    schedule: &ContinuationSchedule<T>,
    seed: u64,
) -> Result<(PartitionState<T>, SolveReport<T>)> {
    schedule.validate()?;
    let init = initial_state(domain, costs, q, schedule.beta_ladder[0], seed)?;
    let has_power = stage_exponent(costs).is_some();
    let p_stages: Vec<Option<T>> = if has_power {
        schedule.p_ladder.iter().map(|&p| Some(p)).collect()
    } else {
        vec![None]
    };
    let mut state = init.clone();
    let mut stages = Vec::new();
    for p in p_stages {
        let base = if schedule.warm_start { state } else { init.clone() };
        state = PartitionState {
            costs: match p {
                Some(p) => with_exponent(&base.costs, p)?,
                None => base.costs.clone(),
            },
            ..base
        };
        for &beta in &schedule.beta_ladder {
            let (next, record) = minimize_stage(domain, &state.with_beta(beta), &schedule.inner)?;
            state = next;
            stages.push(record);
        }
    }
    let densities = state.densities();
    for i in 0..state.m() {
        if state.m() > 1 && territory(&densities, i, T::lit(WEIGHT_FLOOR)) == 0 {
            return Err(Error::GroupExtinction { group: i });
        }
    }
    let report = summarize(domain, &state, seed, stages)?;
    Ok((state, report))
}

/// Multipliers, weights, selection indices and block spreads of `state`,
/// wrapped with the stage history of the run that produced it.
pub fn summarize<T: Scalar>(
    domain: &Domain<T>,
    state: &PartitionState<T>,
    seed: u64,
    stages: Vec<StageRecord<T>>,
) -> Result<SolveReport<T>> {
    let mult = multipliers(domain, state)?;
    let energies: Vec<Vec<T>> = state.groups.iter().map(|g| g.h1_gram(domain).diag()).collect();
    let selection: Vec<usize> = mult
        .weights
        .iter()
        .map(|w| selection_index(w, T::lit(WEIGHT_FLOOR)))
        .collect();
    let block_spread = energies
        .iter()
        .zip(&selection)
        .map(|(e, &l)| {
            let block = &e[l - 1..];
            let hi = block.iter().copied().fold(T::zero(), T::max);
            let lo = block.iter().copied().fold(T::infinity(), T::min);
            (hi - lo) / hi
        })
        .collect();
    Ok(SolveReport {
        seed,
        stages,
        multipliers: mult,
        energies,
        selection,
        block_spread,
    })
}

/// Seeds used by [`solve_best_of`]: `seed, seed+1, …`.
pub fn restart_seeds(seed: u64, restarts: usize) -> Vec<u64> {
    (0..restarts as u64).map(|r| seed.wrapping_add(r)).collect()
}

/// Independent solves on parallel threads; the lowest final energy wins,
/// ties going to the earlier seed. Fails only if every restart fails.
pub fn solve_best_of<T: Scalar>(
    domain: &Domain<T>,
    costs: &[SpectralCost<T>],
    q: T,
    schedule: &ContinuationSchedule<T>,
    seeds: &[u64],
) -> Result<(PartitionState<T>, SolveReport<T>)> {
    if seeds.is_empty() {
        return Err(Error::InvalidSchedule("at least one restart is required".into()));
    }
    let outcomes: Vec<Result<(PartitionState<T>, SolveReport<T>)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| scope.spawn(move || solve(domain, costs, q, schedule, seed)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("solver thread panicked"))
            .collect()
    });
    let mut best: Option<(PartitionState<T>, SolveReport<T>)> = None;
    let mut first_err = None;
    for outcome in outcomes {
        match outcome {
            Ok(run) => {
                let better = best
                    .as_ref()
                    .is_none_or(|(_, b)| run.1.final_energy() < b.final_energy());
                if better {
                    best = Some(run);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.expect("no outcome"))
}
