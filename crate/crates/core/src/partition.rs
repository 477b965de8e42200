//! From a converged state to an actual partition: cell extraction, exact
//! cell eigenvalues, and the comparison between relaxed and partition levels.

use std::collections::VecDeque;

use crate::eigensolve::{lowest_eigenpairs, EigenOptions, EigenResult};
use crate::energy::{energy_parts, MultiplierSet, PartitionState};
use crate::frame::FieldFrame;
use crate::grid::{Domain, Mask};
use crate::optimizer::SolveReport;
use crate::specfun::SpectralCost;
use crate::{Error, Result, Scalar};

/// Relative density threshold below which a node belongs to no cell.
pub const DEFAULT_THRESHOLD: f64 = 1e-3;

/// Slack of the relaxed-versus-partition consistency alarm.
pub const LEVEL_ALARM: f64 = 0.02;

/// Largest relative excess of the partition objective over the relaxed one
/// expected from a converged run.
pub const GAP_ENVELOPE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractOptions<T> {
    pub threshold_rel: T,
    /// Single pass of majority relabelling (≥ 3 of 4 neighbours) before
    /// the interface is formed.
    pub smoothing: bool,
}

impl<T: Scalar> Default for ExtractOptions<T> {
    fn default() -> Self {
        Self {
            threshold_rel: T::lit(DEFAULT_THRESHOLD),
            smoothing: false,
        }
    }
}

/// Cell masks `ω_i` and the discrete interface `Γ`, all on the full lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct CellExtraction {
    pub cell_masks: Vec<Mask>,
    pub interface_mask: Mask,
}

/// Exact eigenvalues of the extracted cells and the objectives built on them.
#[derive(Debug, Clone)]
pub struct CellAudit<T> {
    pub cell_eigs: Vec<EigenResult<T>>,
    /// `Σ_i ψ_i(λ_1(ω_i), …, λ_{k_i}(ω_i))`.
    pub objective_partition: T,
    /// `λ_{k_i}(ω_i)` per cell.
    pub top_eigs: Vec<T>,
    /// `Σ_i λ_{k_i}(ω_i)`.
    pub objective_main: T,
}

#[derive(Debug, Clone)]
pub struct PartitionResult<T> {
    pub cell_masks: Vec<Mask>,
    pub interface_mask: Mask,
    pub cell_eigs: Vec<EigenResult<T>>,
    pub objective_relaxed: T,
    /// `(2β/q) ∫ Σ_{i<j} ρ_i^{q/2} ρ_j^{q/2}` of the relaxed state.
    pub penalty: T,
    /// `β ∫ Σ_{i<j} ρ_i^{q/2} ρ_j^{q/2}`.
    pub penalty_integral: T,
    pub objective_partition: T,
    pub top_eigs: Vec<T>,
    pub objective_main: T,
    pub weights: Vec<Vec<T>>,
    pub multipliers: MultiplierSet<T>,
    pub selection: Vec<usize>,
}

/// Output of [`compare_levels`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelGap<T> {
    /// `objective_partition − objective_relaxed`.
    pub gap: T,
    pub penalty_integral: T,
    pub objective_main: T,
    /// Relaxed objective above the partition objective by more than 2%.
    pub alarm: bool,
    /// Partition objective above the relaxed one by more than 5%, as for
    /// weakly coupled states whose supports overlap.
    pub excess: bool,
}

const NONE: usize = usize::MAX;

fn neighbours(domain_mask: &Mask, i: usize, j: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    let (i, j) = (i as isize, j as isize);
    [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)]
        .into_iter()
        .filter(move |&(a, b)| domain_mask.get_signed(a, b))
        .map(|(a, b)| (a as usize, b as usize))
}

/// Threshold-and-argmax labels per dof (`NONE` when unassigned).
fn raw_labels<T: Scalar>(rel: &[Vec<T>], densities: &[Vec<T>], threshold_rel: T) -> Vec<usize> {
    let n = densities.first().map_or(0, Vec::len);
    (0..n)
        .map(|d| {
            let mut best = NONE;
            for i in 0..densities.len() {
                if rel[i][d] > threshold_rel || (threshold_rel == T::zero() && densities[i][d] > T::zero()) {
                    if best == NONE || densities[i][d] > densities[best][d] {
                        best = i;
                    }
                }
            }
            // a winner must beat every competitor, including sub-threshold ones
            if best != NONE && (0..densities.len()).any(|j| {
                    j != best && (densities[j][d] > densities[best][d] || (j < best && densities[j][d] == densities[best][d]))
                }) {
                return NONE;
            }
            best
        })
        .collect()
}

/// Splits the grid into cells and interface.
///
/// A node joins cell `i` when `ρ_i` exceeds `threshold_rel` of its peak and
/// beats every other density (ties to the lower index). Where two cells
/// touch, the node of the pair with the smaller peak-relative density moves
/// to the interface. Connected groups of unassigned nodes bordering exactly
/// one cell are then absorbed by that cell, so the interface consists of
/// nodes separating at least two cells or bordering none.
pub fn extract_cells<T: Scalar>(
    domain: &Domain<T>,
    state: &PartitionState<T>,
    threshold_rel: T,
) -> Result<CellExtraction> {
    extract_cells_with(
        domain,
        state,
        &ExtractOptions {
            threshold_rel,
            ..ExtractOptions::default()
        },
    )
}

pub fn extract_cells_with<T: Scalar>(
    domain: &Domain<T>,
    state: &PartitionState<T>,
    opts: &ExtractOptions<T>,
) -> Result<CellExtraction> {
    state.check(domain)?;
    if !(opts.threshold_rel >= T::zero()) {
        return Err(Error::InvalidState("threshold must be nonnegative".into()));
    }
    let grid = &domain.grid;
    let mask = grid.mask();
    let densities = state.densities();
    let rel: Vec<Vec<T>> = densities
        .iter()
        .map(|rho| {
            let peak = rho.iter().copied().fold(T::zero(), T::max);
            rho.iter()
                .map(|&v| if peak > T::zero() { v / peak } else { T::zero() })
                .collect()
        })
        .collect();
    let mut label = raw_labels(&rel, &densities, opts.threshold_rel);

    if opts.smoothing {
        let before = label.clone();
        for (d, &(i, j)) in grid.nodes().iter().enumerate() {
            let mut counts = vec![0usize; state.m()];
            for (a, b) in neighbours(mask, i, j) {
                let l = before[grid.dof(a, b).expect("neighbour in mask")];
                if l != NONE {
                    counts[l] += 1;
                }
            }
            if let Some(c) = counts.iter().position(|&c| c >= 3) {
                label[d] = c;
            }
        }
    }

    // seams between touching cells
    let mut to_interface = vec![false; label.len()];
    for (d, &(i, j)) in grid.nodes().iter().enumerate() {
        let a = label[d];
        if a == NONE {
            continue;
        }
        for (x, y) in neighbours(mask, i, j) {
            let e = grid.dof(x, y).expect("neighbour in mask");
            let b = label[e];
            if b != NONE && b != a && d < e {
                if rel[a][d] <= rel[b][e] {
                    to_interface[d] = true;
                } else {
                    to_interface[e] = true;
                }
            }
        }
    }
    for (l, &drop) in label.iter_mut().zip(&to_interface) {
        if drop {
            *l = NONE;
        }
    }

    // absorb unassigned components that border a single cell
    let mut seen = vec![false; label.len()];
    for start in 0..label.len() {
        if label[start] != NONE || seen[start] {
            continue;
        }
        let mut component = Vec::new();
        let mut touching: Vec<usize> = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(d) = queue.pop_front() {
            component.push(d);
            let (i, j) = grid.nodes()[d];
            for (x, y) in neighbours(mask, i, j) {
                let e = grid.dof(x, y).expect("neighbour in mask");
                match label[e] {
                    NONE => {
                        if !seen[e] {
                            seen[e] = true;
                            queue.push_back(e);
                        }
                    }
                    c => {
                        if !touching.contains(&c) {
                            touching.push(c);
                        }
                    }
                }
            }
        }
        if touching.len() == 1 {
            for d in component {
                label[d] = touching[0];
            }
        }
    }

    let (nx, ny) = (grid.nx(), grid.ny());
    let mut cell_masks = vec![Mask::new(nx, ny, false); state.m()];
    let mut interface_mask = Mask::new(nx, ny, false);
    for (d, &(i, j)) in grid.nodes().iter().enumerate() {
        match label[d] {
            NONE => interface_mask.set(i, j, true),
            c => cell_masks[c].set(i, j, true),
        }
    }
    if let Some(cell) = cell_masks.iter().position(Mask::is_empty) {
        return Err(Error::CellExtinction { cell });
    }
    Ok(CellExtraction {
        cell_masks,
        interface_mask,
    })
}

/// Exact eigenvalues of every cell, solved in parallel.
pub fn audit_cells<T: Scalar>(
    domain: &Domain<T>,
    cell_masks: &[Mask],
    costs: &[SpectralCost<T>],
    opts: &EigenOptions<T>,
) -> Result<CellAudit<T>> {
    if cell_masks.len() != costs.len() {
        return Err(Error::DimensionMismatch {
            expected: costs.len(),
            got: cell_masks.len(),
        });
    }
    let outcomes: Vec<Result<EigenResult<T>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cell_masks
            .iter()
            .zip(costs)
            .map(|(mask, cost)| scope.spawn(move || lowest_eigenpairs(domain, Some(mask), cost.arity(), opts)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("eigensolve thread panicked"))
            .collect()
    });
    let mut cell_eigs = Vec::with_capacity(costs.len());
    for (cell, r) in outcomes.into_iter().enumerate() {
        cell_eigs.push(r.map_err(|e| Error::CellEigen {
            cell,
            source: Box::new(e),
        })?);
    }
    let mut objective_partition = T::zero();
    let mut top_eigs = Vec::with_capacity(costs.len());
    for (eig, cost) in cell_eigs.iter().zip(costs) {
        objective_partition += cost.eval(&eig.values)?;
        top_eigs.push(*eig.values.last().expect("k ≥ 1"));
    }
    let objective_main = top_eigs.iter().copied().sum();
    Ok(CellAudit {
        cell_eigs,
        objective_partition,
        top_eigs,
        objective_main,
    })
}

/// Extraction, audit, and the relaxed-level quantities of `state`.
pub fn partition<T: Scalar>(
    domain: &Domain<T>,
    state: &PartitionState<T>,
    report: &SolveReport<T>,
    extract: &ExtractOptions<T>,
    eig: &EigenOptions<T>,
) -> Result<PartitionResult<T>> {
    let cells = extract_cells_with(domain, state, extract)?;
    let audit = audit_cells(domain, &cells.cell_masks, &state.costs, eig)?;
    let parts = energy_parts(domain, state)?;
    Ok(PartitionResult {
        cell_masks: cells.cell_masks,
        interface_mask: cells.interface_mask,
        cell_eigs: audit.cell_eigs,
        objective_relaxed: parts.total(),
        penalty: parts.penalty,
        penalty_integral: state.beta * parts.overlap,
        objective_partition: audit.objective_partition,
        top_eigs: audit.top_eigs,
        objective_main: audit.objective_main,
        weights: report.multipliers.weights.clone(),
        multipliers: report.multipliers.clone(),
        selection: report.selection.clone(),
    })
}

pub fn compare_levels<T: Scalar>(result: &PartitionResult<T>) -> LevelGap<T> {
    LevelGap {
        gap: result.objective_partition - result.objective_relaxed,
        penalty_integral: result.penalty_integral,
        objective_main: result.objective_main,
        alarm: result.objective_relaxed > result.objective_partition * (T::one() + T::lit(LEVEL_ALARM)),
        excess: result.objective_partition > result.objective_relaxed * (T::one() + T::lit(GAP_ENVELOPE)),
    }
}

/// A segregated state made of the `k_i` lowest eigenfunctions of each cell.
/// Its penalty vanishes, so its energy is the partition objective of the
/// cells; it bounds the relaxed minimum from above.
pub fn cell_state<T: Scalar>(
    domain: &Domain<T>,
    cell_masks: &[Mask],
    costs: &[SpectralCost<T>],
    beta: T,
    q: T,
    opts: &EigenOptions<T>,
) -> Result<PartitionState<T>> {
    for (a, ma) in cell_masks.iter().enumerate() {
        for mb in &cell_masks[a + 1..] {
            if ma.intersects(mb) {
                return Err(Error::InvalidState("cells overlap".into()));
            }
        }
    }
    let audit = audit_cells(domain, cell_masks, costs, opts)?;
    let groups = audit.cell_eigs.into_iter().map(|e| FieldFrame::new(e.vectors)).collect();
    PartitionState::new(groups, costs.to_vec(), beta, q)
}
