//! Monitoring quantities of a converged state near a point: the Almgren
//! frequency `N = E/H`, the `dE/dr` identity, the two-dimensional Pohozaev
//! balance, and the gradient matching across the interface.
//!
//! In two dimensions, for a ball `B_r(x0)`,
//!
//! ```text
//! E(r) = Σ ∫_{B_r} (a |∇u|² − μ u²)      H(r) = (1/r) Σ ∫_{∂B_r} a u²
//! ```
//!
//! summed over all fields, with `a` the cost weight and `μ` the diagonal
//! multiplier of the field. Volume integrals use difference quotients on
//! lattice edges, each edge owning the `h × h` square around its midpoint,
//! weighted by the part of that square inside the ball. Circle integrals use
//! `8⌈r/h⌉` midpoint samples of bilinear interpolants.

use crate::eigensolve::EigenResult;
use crate::energy::{MultiplierSet, PartitionState};
use crate::grid::Domain;
use crate::partition::CellExtraction;
use crate::specfun::SpectralCost;
use crate::{Error, Result, Scalar};

/// `H` below this value makes a sample degenerate.
pub const DEGENERATE_H: f64 = 1e-14;

/// Frequencies above this value flag a singular candidate.
pub const SINGULAR_CANDIDATE: f64 = 1.2;

/// Widest half-window, in grid steps, searched for the cells around a probe.
const PROBE_REACH: isize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagOptions<T> {
    /// A point or edge belongs to a group's support when the group density
    /// there exceeds this fraction of its peak.
    pub support_rel: T,
    /// Per-axis subsamples used for squares cut by the circle.
    pub subsamples: usize,
    /// Circle samples per unit of `r/h`.
    pub circle_factor: usize,
    /// Count the penalty density `(2β/q) Σ_{i<j} ρ_i^{q/2} ρ_j^{q/2}` of a
    /// relaxed state as part of `E`. It vanishes for segregated states.
    pub interaction: bool,
}

impl<T: Scalar> Default for DiagOptions<T> {
    fn default() -> Self {
        Self {
            support_rel: T::lit(1e-12),
            subsamples: 16,
            circle_factor: 8,
            interaction: false,
        }
    }
}

/// Fields of one group with their weights `a` and multipliers `μ`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGroup<T> {
    pub fields: Vec<Vec<T>>,
    pub a: Vec<T>,
    pub mu: Vec<T>,
}

struct Lattice<T> {
    nx: isize,
    ny: isize,
    vals: Vec<T>,
}

impl<T: Scalar> Lattice<T> {
    #[inline]
    fn at(&self, i: isize, j: isize) -> T {
        if i < 0 || j < 0 || i >= self.nx || j >= self.ny {
            T::zero()
        } else {
            self.vals[(j * self.nx + i) as usize]
        }
    }
}

struct GroupLattice<T> {
    fields: Vec<Lattice<T>>,
    density: Lattice<T>,
    support_floor: T,
    a: Vec<T>,
    mu: Vec<T>,
}

/// Lattice view of weighted groups on a domain, ready for sampling.
pub struct FieldSet<'a, T> {
    domain: &'a Domain<T>,
    groups: Vec<GroupLattice<T>>,
    /// Nodal penalty density, when counted.
    interaction: Option<Lattice<T>>,
    opts: DiagOptions<T>,
}

/// Radii sweep of the Almgren quantities at one center.
#[derive(Debug, Clone, PartialEq)]
pub struct AlmgrenSample<T> {
    pub x0: (T, T),
    pub radii: Vec<T>,
    pub e_vals: Vec<T>,
    pub h_vals: Vec<T>,
    pub n_vals: Vec<T>,
}

impl<T: Scalar> AlmgrenSample<T> {
    /// Radii whose frequency exceeds the singular-candidate level.
    pub fn singular_candidates(&self) -> Vec<T> {
        self.radii
            .iter()
            .zip(&self.n_vals)
            .filter(|(_, &n)| n > T::lit(SINGULAR_CANDIDATE))
            .map(|(&r, _)| r)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DedrPoint<T> {
    pub r: T,
    /// Centered difference `(E(r+δ) − E(r−δ)) / 2δ`.
    pub fd: T,
    /// `2 ∫_{∂B_r} a (∂_n u)² − (2/r) ∫_{B_r} (μ u² − G)`, `G` the
    /// interaction density when counted.
    pub rhs: T,
    /// `|fd − rhs|` over the summed magnitudes of the two terms of `rhs`,
    /// which is `|rhs|` whenever the volume term vanishes.
    pub residual: T,
}

/// The four terms of the two-dimensional Pohozaev balance
/// `A − B + C − D = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PohozaevTerms<T> {
    /// `2r ∫_{∂B_r} a (∂_n u)²`.
    pub flux: T,
    /// `r ∫_{∂B_r} a |∇u|²`.
    pub gradient: T,
    /// `r ∫_{∂B_r} μ u²`.
    pub boundary_mass: T,
    /// `2 ∫_{B_r} μ u²`.
    pub volume_mass: T,
    /// `|A − B + C − D| / (|A| + |B| + |C| + |D| + ε)`.
    pub residual: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterfaceProbe<T> {
    pub point: (T, T),
    /// Unit normal pointing from `cells.0` to `cells.1`.
    pub normal: (T, T),
    pub cells: (usize, usize),
    /// `Σ a |∇u|²` of each cell's group, sampled on its own side.
    pub sides: (T, T),
    pub mismatch: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProbeOutcome<T> {
    Regular(InterfaceProbe<T>),
    /// Three or more cells meet in the probe window.
    Singular,
    /// Fewer than two distinct cells around the probe, or a side point
    /// outside both cells.
    Unresolved,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSummary<T> {
    pub probes: Vec<InterfaceProbe<T>>,
    pub singular: usize,
    pub unresolved: usize,
    pub median_mismatch: T,
    pub all_positive: bool,
}

/// Outcome of the weighted monotonicity check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Monotonicity<T> {
    pub c: T,
    /// Largest relative decrease of `e^{Cr²}(N + 1)` between consecutive radii.
    pub max_drop: T,
}

impl<'a, T: Scalar> FieldSet<'a, T> {
    pub fn new(domain: &'a Domain<T>, groups: Vec<WeightedGroup<T>>, opts: DiagOptions<T>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InvalidState("no fields to diagnose".into()));
        }
        let grid = &domain.grid;
        let nx = grid.nx() as isize;
        let ny = grid.ny() as isize;
        let mut out = Vec::with_capacity(groups.len());
        for g in groups {
            if g.fields.is_empty() || g.a.len() != g.fields.len() || g.mu.len() != g.fields.len() {
                return Err(Error::InvalidState("every field needs one weight and one multiplier".into()));
            }
            let mut rho = vec![T::zero(); grid.dofs()];
            for f in &g.fields {
                grid.check_field(f)?;
                for (r, &v) in rho.iter_mut().zip(f) {
                    *r += v * v;
                }
            }
            let peak = rho.iter().copied().fold(T::zero(), T::max);
            out.push(GroupLattice {
                fields: g
                    .fields
                    .iter()
                    .map(|f| Lattice {
                        nx,
                        ny,
                        vals: grid.to_lattice(f),
                    })
                    .collect(),
                density: Lattice {
                    nx,
                    ny,
                    vals: grid.to_lattice(&rho),
                },
                support_floor: opts.support_rel * peak,
                a: g.a,
                mu: g.mu,
            });
        }
        Ok(Self {
            domain,
            groups: out,
            interaction: None,
            opts,
        })
    }

    /// Fields of a state with the multiplier diagonals and weights.
    pub fn from_state(
        domain: &'a Domain<T>,
        state: &PartitionState<T>,
        mult: &MultiplierSet<T>,
        opts: DiagOptions<T>,
    ) -> Result<Self> {
        let groups = state
            .groups
            .iter()
            .zip(&mult.mu)
            .zip(&mult.weights)
            .map(|((g, mu), a)| WeightedGroup {
                fields: g.fields.clone(),
                a: a.clone(),
                mu: mu.diag(),
            })
            .collect();
        let mut set = Self::new(domain, groups, opts)?;
        if opts.interaction {
            let rho = state.densities();
            let half_q = state.q * T::lit(0.5);
            let powered: Vec<Vec<T>> = rho.iter().map(|r| r.iter().map(|&v| v.powf(half_q)).collect()).collect();
            let scale = T::lit(2.0) * state.beta / state.q;
            let g: Vec<T> = (0..domain.dofs())
                .map(|d| {
                    let mut acc = T::zero();
                    for i in 0..powered.len() {
                        for j in (i + 1)..powered.len() {
                            acc += powered[i][d] * powered[j][d];
                        }
                    }
                    scale * acc
                })
                .collect();
            set.interaction = Some(Lattice {
                nx: domain.grid.nx() as isize,
                ny: domain.grid.ny() as isize,
                vals: domain.grid.to_lattice(&g),
            });
        }
        Ok(set)
    }

    /// The lowest eigenfunctions of every cell with `a = ∇ψ(λ)` and
    /// `μ_l = a_l λ_l`: a segregated state carrying the cell spectra.
    pub fn from_cells(
        domain: &'a Domain<T>,
        cell_eigs: &[EigenResult<T>],
        costs: &[SpectralCost<T>],
        opts: DiagOptions<T>,
    ) -> Result<Self> {
        if cell_eigs.len() != costs.len() {
            return Err(Error::DimensionMismatch {
                expected: costs.len(),
                got: cell_eigs.len(),
            });
        }
        let mut groups = Vec::with_capacity(costs.len());
        for (eig, cost) in cell_eigs.iter().zip(costs) {
            let a = cost.grad(&eig.values)?;
            let mu = a.iter().zip(&eig.values).map(|(&w, &l)| w * l).collect();
            groups.push(WeightedGroup {
                fields: eig.vectors.clone(),
                a,
                mu,
            });
        }
        Self::new(domain, groups, opts)
    }

    #[inline]
    fn h(&self) -> T {
        self.domain.h()
    }

    /// Continuous coordinates of lattice index `i` (ghosts allowed).
    #[inline]
    fn coord(&self, i: isize) -> T {
        T::lit((i + 1) as f64) * self.h()
    }

    fn check_ball(&self, x0: (T, T), r: T) -> Result<()> {
        if !(r > T::zero()) || !r.is_finite() {
            return Err(Error::InvalidProbe("radius must be positive".into()));
        }
        let h = self.h();
        let mask = self.domain.grid.mask();
        let slack = T::lit(1e-9) * h;
        let (ilo, ihi) = self.index_range(x0.0, r);
        let (jlo, jhi) = self.index_range(x0.1, r);
        for j in jlo - 1..=jhi + 1 {
            for i in ilo - 1..=ihi + 1 {
                let dx = self.coord(i) - x0.0;
                let dy = self.coord(j) - x0.1;
                if (dx * dx + dy * dy).sqrt() < r - slack && !mask.get_signed(i, j) {
                    return Err(Error::InvalidProbe(format!(
                        "ball of radius {} leaves the domain",
                        r.to_f64_lossy()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Lattice indices whose coordinates may fall within `r` of `c`.
    fn index_range(&self, c: T, r: T) -> (isize, isize) {
        let lo = ((c - r) / self.h()).floor().to_f64_lossy() as isize - 2;
        let hi = ((c + r) / self.h()).ceil().to_f64_lossy() as isize;
        (lo, hi)
    }

    /// Fraction of the `h × h` square centered at `(cx, cy)` inside `B_r(x0)`.
    fn coverage(&self, cx: T, cy: T, x0: (T, T), r: T) -> T {
        let half = self.h() * T::lit(0.5);
        let dx = (cx - x0.0).abs();
        let dy = (cy - x0.1).abs();
        let far = ((dx + half).powi(2) + (dy + half).powi(2)).sqrt();
        if far <= r {
            return T::one();
        }
        let nx = (dx - half).max(T::zero());
        let ny = (dy - half).max(T::zero());
        if (nx * nx + ny * ny).sqrt() >= r {
            return T::zero();
        }
        let n = self.opts.subsamples;
        let step = self.h() / T::from_count(n);
        let mut inside = 0usize;
        for a in 0..n {
            let px = cx - half + step * (T::from_count(a) + T::lit(0.5));
            for b in 0..n {
                let py = cy - half + step * (T::from_count(b) + T::lit(0.5));
                let ex = px - x0.0;
                let ey = py - x0.1;
                if ex * ex + ey * ey < r * r {
                    inside += 1;
                }
            }
        }
        T::from_count(inside) / T::from_count(n * n)
    }

    /// `Σ ∫_{B_r} a|∇u|²`, `Σ ∫_{B_r} μ u²` and the interaction integral.
    fn volume_terms(&self, x0: (T, T), r: T) -> (T, T, T) {
        let h = self.h();
        let half = h * T::lit(0.5);
        let (ilo, ihi) = self.index_range(x0.0, r);
        let (jlo, jhi) = self.index_range(x0.1, r);
        let mut grad = T::zero();
        let mut mass = T::zero();
        let mut inter = T::zero();
        for j in jlo..=jhi {
            for i in ilo..=ihi {
                let (x, y) = (self.coord(i), self.coord(j));
                let wx = self.coverage(x + half, y, x0, r);
                let wy = self.coverage(x, y + half, x0, r);
                let wn = self.coverage(x, y, x0, r);
                if wx == T::zero() && wy == T::zero() && wn == T::zero() {
                    continue;
                }
                for g in &self.groups {
                    for (l, f) in g.fields.iter().enumerate() {
                        let u = f.at(i, j);
                        let ex = edge_energy(g, f, (i, j), (1, 0));
                        let ey = edge_energy(g, f, (i, j), (0, 1));
                        grad += g.a[l] * (wx * ex + wy * ey);
                        mass += g.mu[l] * wn * u * u * h * h;
                    }
                }
                if let Some(gl) = &self.interaction {
                    inter += wn * gl.at(i, j) * h * h;
                }
            }
        }
        (grad, mass, inter)
    }

    /// Bilinear interpolation of a lattice quantity at `p`; `offset`
    /// shifts the sample lattice by half cells for staggered quantities.
    /// With `keep`, samples failing it are dropped and the remaining
    /// weights renormalized.
    fn interpolate(
        &self,
        p: (T, T),
        offset: (T, T),
        value: impl Fn(isize, isize) -> T,
        keep: Option<&dyn Fn(isize, isize) -> bool>,
    ) -> T {
        let h = self.h();
        let sx = p.0 / h - T::one() - offset.0;
        let sy = p.1 / h - T::one() - offset.1;
        let i0 = sx.floor();
        let j0 = sy.floor();
        let tx = sx - i0;
        let ty = sy - j0;
        let i0 = i0.to_f64_lossy() as isize;
        let j0 = j0.to_f64_lossy() as isize;
        let corners = [
            (i0, j0, (T::one() - tx) * (T::one() - ty)),
            (i0 + 1, j0, tx * (T::one() - ty)),
            (i0, j0 + 1, (T::one() - tx) * ty),
            (i0 + 1, j0 + 1, tx * ty),
        ];
        let mut acc = T::zero();
        let mut wsum = T::zero();
        for &(i, j, w) in &corners {
            if keep.is_none_or(|k| k(i, j)) {
                acc += w * value(i, j);
                wsum += w;
            }
        }
        match keep {
            None => acc,
            Some(_) if wsum > T::zero() => acc / wsum,
            Some(_) => {
                let mut plain = T::zero();
                for &(i, j, w) in &corners {
                    plain += w * value(i, j);
                }
                plain
            }
        }
    }

    fn value_at(&self, f: &Lattice<T>, p: (T, T)) -> T {
        self.interpolate(p, (T::zero(), T::zero()), |i, j| f.at(i, j), None)
    }

    fn in_support(&self, g: &GroupLattice<T>, p: (T, T)) -> bool {
        self.value_at(&g.density, p) > g.support_floor
    }

    /// Gradient of field `l` of group `g` at `p` from the staggered edge
    /// differences. Only edges touching the group support take part, and
    /// points off the support read as zero, so kinks at the support
    /// boundary are not smeared.
    fn gradient_at(&self, g: &GroupLattice<T>, l: usize, p: (T, T)) -> (T, T) {
        if !self.in_support(g, p) {
            return (T::zero(), T::zero());
        }
        let h = self.h();
        let f = &g.fields[l];
        let rho = &g.density;
        let floor = g.support_floor;
        let keep_x = |i: isize, j: isize| rho.at(i, j) > floor || rho.at(i + 1, j) > floor;
        let keep_y = |i: isize, j: isize| rho.at(i, j) > floor || rho.at(i, j + 1) > floor;
        let half = T::lit(0.5);
        let gx = self.interpolate(p, (half, T::zero()), |i, j| (f.at(i + 1, j) - f.at(i, j)) / h, Some(&keep_x));
        let gy = self.interpolate(p, (T::zero(), half), |i, j| (f.at(i, j + 1) - f.at(i, j)) / h, Some(&keep_y));
        (gx, gy)
    }

    fn circle_points(&self, x0: (T, T), r: T) -> (Vec<((T, T), (T, T))>, T) {
        let n = self.opts.circle_factor * (r / self.h()).ceil().to_f64_lossy().max(1.0) as usize;
        let two_pi = T::lit(2.0) * T::PI();
        let pts = (0..n)
            .map(|k| {
                let theta = two_pi * (T::from_count(k) + T::lit(0.5)) / T::from_count(n);
                let (s, c) = theta.sin_cos();
                ((x0.0 + r * c, x0.1 + r * s), (c, s))
            })
            .collect();
        (pts, two_pi * r / T::from_count(n))
    }

    /// `∫_{∂B_r} a u²`, `∫_{∂B_r} a (∂_n u)²`, `∫_{∂B_r} a |∇u|²`, `∫_{∂B_r} μ u²`.
    fn circle_terms(&self, x0: (T, T), r: T) -> [T; 4] {
        let (pts, ds) = self.circle_points(x0, r);
        let mut acc = [T::zero(); 4];
        for &(p, n) in &pts {
            for g in &self.groups {
                for (l, f) in g.fields.iter().enumerate() {
                    let u = self.value_at(f, p);
                    let (gx, gy) = self.gradient_at(g, l, p);
                    let dn = gx * n.0 + gy * n.1;
                    acc[0] += g.a[l] * u * u;
                    acc[1] += g.a[l] * dn * dn;
                    acc[2] += g.a[l] * (gx * gx + gy * gy);
                    acc[3] += g.mu[l] * u * u;
                }
            }
        }
        acc.map(|v| v * ds)
    }

    fn e_and_h(&self, x0: (T, T), r: T) -> Result<(T, T)> {
        self.check_ball(x0, r)?;
        let (grad, mass, inter) = self.volume_terms(x0, r);
        let h_val = self.circle_terms(x0, r)[0] / r;
        if !(h_val >= T::lit(DEGENERATE_H)) {
            return Err(Error::DegenerateSample {
                radius: r.to_f64_lossy(),
                h_value: h_val.to_f64_lossy(),
            });
        }
        Ok((grad + inter - mass, h_val))
    }

    /// `E`, `H` and `N = E/H` at every radius.
    pub fn almgren_scan(&self, x0: (T, T), radii: &[T]) -> Result<AlmgrenSample<T>> {
        let mut e_vals = Vec::with_capacity(radii.len());
        let mut h_vals = Vec::with_capacity(radii.len());
        let mut n_vals = Vec::with_capacity(radii.len());
        for &r in radii {
            let (e, h) = self.e_and_h(x0, r)?;
            e_vals.push(e);
            h_vals.push(h);
            n_vals.push(e / h);
        }
        Ok(AlmgrenSample {
            x0,
            radii: radii.to_vec(),
            e_vals,
            h_vals,
            n_vals,
        })
    }

    /// Compares the centered difference of `E` over `r ± δ` (δ = h) with
    /// the flux form of `dE/dr` at `r`. Where `B_{r+δ}` would leave the
    /// domain the difference uses `r, r − δ, r − 2δ` instead.
    pub fn dedr_identity_residual(&self, x0: (T, T), radii: &[T]) -> Result<Vec<DedrPoint<T>>> {
        let delta = self.h();
        radii
            .iter()
            .map(|&r| {
                if !(r > delta) {
                    return Err(Error::InvalidProbe("radius must exceed the difference step h".into()));
                }
                let (e_lo, _) = self.e_and_h(x0, r - delta)?;
                // at the edge of the domain fall back to the second-order
                // backward difference
                let fd = if self.check_ball(x0, r + delta).is_ok() {
                    let (e_hi, _) = self.e_and_h(x0, r + delta)?;
                    (e_hi - e_lo) / (T::lit(2.0) * delta)
                } else {
                    if !(r > T::lit(2.0) * delta) {
                        return Err(Error::InvalidProbe("radius must exceed twice the difference step h".into()));
                    }
                    let (e_mid, _) = self.e_and_h(x0, r)?;
                    let (e_far, _) = self.e_and_h(x0, r - T::lit(2.0) * delta)?;
                    (T::lit(3.0) * e_mid - T::lit(4.0) * e_lo + e_far) / (T::lit(2.0) * delta)
                };
                let (_, mass, inter) = self.volume_terms(x0, r);
                let c = self.circle_terms(x0, r);
                let flux = T::lit(2.0) * c[1];
                let volume = T::lit(2.0) / r * (mass - inter);
                let rhs = flux - volume;
                let scale = flux.abs() + volume.abs();
                let residual = (fd - rhs).abs() / (scale + T::lit(DEGENERATE_H));
                Ok(DedrPoint { r, fd, rhs, residual })
            })
            .collect()
    }

    /// The Pohozaev balance on `B_r(x0)`; its left side carries the factor
    /// `(2 − N) = 0`, so only the four remaining terms are compared.
    pub fn pohozaev_residual(&self, x0: (T, T), r: T) -> Result<PohozaevTerms<T>> {
        self.e_and_h(x0, r)?;
        let (_, mass, _) = self.volume_terms(x0, r);
        let c = self.circle_terms(x0, r);
        let two = T::lit(2.0);
        let flux = two * r * c[1];
        let gradient = r * c[2];
        let boundary_mass = r * c[3];
        let volume_mass = two * mass;
        let scale = flux.abs() + gradient.abs() + boundary_mass.abs() + volume_mass.abs();
        let residual = (flux - gradient + boundary_mass - volume_mass).abs() / (scale + T::lit(DEGENERATE_H));
        Ok(PohozaevTerms {
            flux,
            gradient,
            boundary_mass,
            volume_mass,
            residual,
        })
    }

    /// `C = max μ/a` over all fields, the scale of the exponential weight.
    pub fn monotonicity_constant(&self) -> T {
        let mut c = T::zero();
        for g in &self.groups {
            for (a, mu) in g.a.iter().zip(&g.mu) {
                if *a > T::zero() {
                    c = c.max(*mu / *a);
                }
            }
        }
        c
    }

    /// `Σ a |∇u|²` of one group at `p`.
    pub fn gradient_energy_at(&self, group: usize, p: (T, T)) -> T {
        let g = &self.groups[group];
        let mut acc = T::zero();
        for l in 0..g.fields.len() {
            let (gx, gy) = self.gradient_at(g, l, p);
            acc += g.a[l] * (gx * gx + gy * gy);
        }
        acc
    }

    /// One interface probe at lattice node `(i, j)`.
    pub fn probe_at(&self, cells: &CellExtraction, node: (usize, usize), d_probe: T) -> ProbeOutcome<T> {
        let (i0, j0) = (node.0 as isize, node.1 as isize);
        let label = |i: isize, j: isize| -> Option<usize> {
            if i < 0 || j < 0 {
                return None;
            }
            cells
                .cell_masks
                .iter()
                .position(|m| (i as usize) < m.nx() && (j as usize) < m.ny() && m.get(i as usize, j as usize))
        };
        let iface = &cells.interface_mask;
        let cells_within = |w: isize| {
            let mut present: Vec<usize> = Vec::new();
            for dj in -w..=w {
                for di in -w..=w {
                    if let Some(c) = label(i0 + di, j0 + dj) {
                        if !present.contains(&c) {
                            present.push(c);
                        }
                    }
                }
            }
            present
        };
        // widen the window past thick interface bands until two cells show;
        // a third cell within one more ring marks a junction
        let mut w = 2;
        let mut present = cells_within(w);
        while present.len() < 2 && w < PROBE_REACH {
            w += 1;
            present = cells_within(w);
        }
        if present.len() >= 3 || (present.len() == 2 && cells_within(w + 1).len() >= 3) {
            return ProbeOutcome::Singular;
        }
        let mut pts: Vec<(T, T)> = Vec::new();
        for dj in -2..=2 {
            for di in -2..=2 {
                if iface.get_signed(i0 + di, j0 + dj) {
                    pts.push((self.coord(i0 + di), self.coord(j0 + dj)));
                }
            }
        }
        if present.len() < 2 || pts.len() < 2 {
            return ProbeOutcome::Unresolved;
        }
        // principal direction of the interface points; the normal is orthogonal
        let cnt = T::from_count(pts.len());
        let mx = pts.iter().map(|p| p.0).sum::<T>() / cnt;
        let my = pts.iter().map(|p| p.1).sum::<T>() / cnt;
        let (mut sxx, mut sxy, mut syy) = (T::zero(), T::zero(), T::zero());
        for p in &pts {
            let (dx, dy) = (p.0 - mx, p.1 - my);
            sxx += dx * dx;
            sxy += dx * dy;
            syy += dy * dy;
        }
        let angle = T::lit(0.5) * (T::lit(2.0) * sxy).atan2(sxx - syy);
        let (ts, tc) = angle.sin_cos();
        let mut normal = (-ts, tc);
        let x0 = (self.coord(i0), self.coord(j0));
        let side = |n: (T, T), s: T| (x0.0 + s * d_probe * n.0, x0.1 + s * d_probe * n.1);
        let nearest = |p: (T, T)| {
            let i = (p.0 / self.h() - T::one()).round().to_f64_lossy() as isize;
            let j = (p.1 / self.h() - T::one()).round().to_f64_lossy() as isize;
            label(i, j)
        };
        let (Some(mut c0), Some(mut c1)) = (nearest(side(normal, -T::one())), nearest(side(normal, T::one()))) else {
            return ProbeOutcome::Unresolved;
        };
        if c0 == c1 {
            return ProbeOutcome::Unresolved;
        }
        if c0 > c1 {
            std::mem::swap(&mut c0, &mut c1);
            normal = (-normal.0, -normal.1);
        }
        let s0 = self.gradient_energy_at(c0, side(normal, -T::one()));
        let s1 = self.gradient_energy_at(c1, side(normal, T::one()));
        let big = s0.max(s1);
        let mismatch = if big > T::zero() { (s0 - s1).abs() / big } else { T::zero() };
        ProbeOutcome::Regular(InterfaceProbe {
            point: x0,
            normal,
            cells: (c0, c1),
            sides: (s0, s1),
            mismatch,
        })
    }

    /// Up to `n_probes` probes spread evenly over the interface nodes at
    /// least `8h` from the domain boundary.
    pub fn interface_gradient_match(&self, cells: &CellExtraction, n_probes: usize, d_probe: T) -> ProbeSummary<T> {
        let grid = &self.domain.grid;
        let min_dist = T::lit(8.0) * self.h() - T::lit(1e-9) * self.h();
        let eligible: Vec<(usize, usize)> = grid
            .nodes()
            .iter()
            .enumerate()
            .filter(|&(d, &(i, j))| cells.interface_mask.get(i, j) && grid.boundary_distance(d) >= min_dist)
            .map(|(_, &n)| n)
            .collect();
        let picks: Vec<(usize, usize)> = match (eligible.len(), n_probes) {
            (0, _) | (_, 0) => Vec::new(),
            (len, n) if n >= len => eligible.clone(),
            (len, 1) => vec![eligible[len / 2]],
            (len, n) => (0..n).map(|k| eligible[k * (len - 1) / (n - 1)]).collect(),
        };
        let mut probes = Vec::new();
        let (mut singular, mut unresolved) = (0, 0);
        for node in picks {
            match self.probe_at(cells, node, d_probe) {
                ProbeOutcome::Regular(p) => probes.push(p),
                ProbeOutcome::Singular => singular += 1,
                ProbeOutcome::Unresolved => unresolved += 1,
            }
        }
        let mut mm: Vec<T> = probes.iter().map(|p| p.mismatch).collect();
        mm.sort_by(|a, b| a.partial_cmp(b).expect("finite mismatch"));
        let median_mismatch = match mm.len() {
            0 => T::nan(),
            n if n % 2 == 1 => mm[n / 2],
            n => (mm[n / 2 - 1] + mm[n / 2]) * T::lit(0.5),
        };
        let all_positive = probes.iter().all(|p| p.sides.0 > T::zero() && p.sides.1 > T::zero());
        ProbeSummary {
            probes,
            singular,
            unresolved,
            median_mismatch,
            all_positive,
        }
    }
}

/// `∫ |∂u|²` over the square owned by the edge from `p` to `p + dir`, in
/// units of `h²`. An edge with one endpoint off the group support is cut by
/// the support boundary. The cut is located as the first root of the
/// quadratic through the three values on the inner side, and the edge then
/// counts `(mean slope)² · t = u_a² / t` over its inner part `t`.
fn edge_energy<T: Scalar>(g: &GroupLattice<T>, f: &Lattice<T>, p: (isize, isize), dir: (isize, isize)) -> T {
    let q = (p.0 + dir.0, p.1 + dir.1);
    let diff = f.at(q.0, q.1) - f.at(p.0, p.1);
    let inside = |n: (isize, isize)| g.density.at(n.0, n.1) > g.support_floor;
    let (a, b) = match (inside(p), inside(q)) {
        (true, false) => (p, q),
        (false, true) => (q, p),
        _ => return diff * diff,
    };
    let step = (a.0 - b.0, a.1 - b.1);
    let n1 = (a.0 + step.0, a.1 + step.1);
    let n2 = (n1.0 + step.0, n1.1 + step.1);
    if !inside(n1) {
        return diff * diff;
    }
    let u0 = f.at(a.0, a.1);
    let u1 = f.at(n1.0, n1.1);
    let c2 = if inside(n2) {
        (u0 - T::lit(2.0) * u1 + f.at(n2.0, n2.1)) * T::lit(0.5)
    } else {
        T::zero()
    };
    let c1 = u0 - u1 + c2;
    match first_root(u0, c1, c2) {
        Some(t) if t > T::zero() && t < T::one() => u0 * u0 / t,
        _ => diff * diff,
    }
}

/// Smallest positive root of `u0 + c1 x + c2 x²`.
fn first_root<T: Scalar>(u0: T, c1: T, c2: T) -> Option<T> {
    let scale = u0.abs() + c1.abs() + c2.abs();
    if c2.abs() <= T::lit(1e-12) * scale {
        let t = -u0 / c1;
        return (c1 != T::zero() && t > T::zero()).then_some(t);
    }
    let disc = c1 * c1 - T::lit(4.0) * c2 * u0;
    if disc < T::zero() {
        return None;
    }
    let sq = disc.sqrt();
    // numerically stable pair of roots
    let k = -T::lit(0.5) * (c1 + if c1 >= T::zero() { sq } else { -sq });
    let mut roots = [k / c2, if k != T::zero() { u0 / k } else { T::infinity() }];
    roots.sort_by(|x, y| x.partial_cmp(y).expect("finite roots"));
    roots.into_iter().find(|&t| t > T::zero())
}

/// Interface node nearest the centroid of the interface nodes lying at
/// least `clearance` from the domain boundary.
pub fn interface_midpoint<T: Scalar>(domain: &Domain<T>, cells: &CellExtraction, clearance: T) -> Option<(usize, usize)> {
    let grid = &domain.grid;
    let floor = clearance - T::lit(1e-9) * domain.h();
    let eligible: Vec<(usize, usize)> = grid
        .nodes()
        .iter()
        .enumerate()
        .filter(|&(d, &(i, j))| cells.interface_mask.get(i, j) && grid.boundary_distance(d) >= floor)
        .map(|(_, &n)| n)
        .collect();
    if eligible.is_empty() {
        return None;
    }
    let cnt = T::from_count(eligible.len());
    let (mut cx, mut cy) = (T::zero(), T::zero());
    for &(i, j) in &eligible {
        let (x, y) = grid.position(i, j);
        cx += x;
        cy += y;
    }
    let (cx, cy) = (cx / cnt, cy / cnt);
    let dist = |&(i, j): &(usize, usize)| {
        let (x, y) = grid.position(i, j);
        (x - cx) * (x - cx) + (y - cy) * (y - cy)
    };
    let mut best = eligible[0];
    for n in &eligible[1..] {
        if dist(n) < dist(&best) {
            best = *n;
        }
    }
    Some(best)
}

/// Largest relative decrease of `e^{Cr²}(N(r) + 1)` along the sample.
pub fn monotonicity<T: Scalar>(sample: &AlmgrenSample<T>, c: T) -> Monotonicity<T> {
    let weighted: Vec<T> = sample
        .radii
        .iter()
        .zip(&sample.n_vals)
        .map(|(&r, &n)| (c * r * r).exp() * (n + T::one()))
        .collect();
    let max_drop = weighted
        .windows(2)
        .map(|w| ((w[0] - w[1]) / w[0]).max(T::zero()))
        .fold(T::zero(), T::max);
    Monotonicity { c, max_drop }
}

/// Radii `from·h, (from+1)·h, …, to·h`.
pub fn radii_in_steps<T: Scalar>(h: T, from: usize, to: usize) -> Vec<T> {
    (from..=to).map(|s| T::from_count(s) * h).collect()
}
