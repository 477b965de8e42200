//! Masked uniform grids and the 5-point Dirichlet Laplacian.
//!
//! Lattice node `(i, j)`, `0 ≤ i < nx`, `0 ≤ j < ny`, sits at the physical
//! point `((i + 1)·h, (j + 1)·h)`; the ring of lattice positions just outside
//! the `nx × ny` block (and every masked-out node) carries the homogeneous
//! Dirichlet value. Degrees of freedom are the mask-true nodes enumerated in
//! row-major lattice order (`j` outer, `i` inner). Every reduction in this
//! module runs sequentially in that dof order, so results are reproducible
//! bit for bit.

use std::fmt::Write as _;

use crate::{Error, Result, Scalar};

/// Geometry of the domain Ω.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape<T> {
    /// `[0, width] × [0, height]`.
    Rectangle { width: T, height: T },
    /// Disk of the given radius centred in its bounding box `[0, 2r]²`.
    Disk { radius: T },
    /// Explicit lattice mask, typically read from an SPMASK file.
    Custom(Mask),
}

/// Boolean lattice of size `nx × ny`, row-major (`j` outer).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    nx: usize,
    ny: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(nx: usize, ny: usize, value: bool) -> Self {
        Self {
            nx,
            ny,
            bits: vec![value; nx * ny],
        }
    }

    pub fn from_fn(nx: usize, ny: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                bits.push(f(i, j));
            }
        }
        Self { nx, ny, bits }
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[j * self.nx + i]
    }

    /// Like [`Mask::get`] but `false` outside the lattice.
    #[inline]
    pub fn get_signed(&self, i: isize, j: isize) -> bool {
        i >= 0
            && j >= 0
            && (i as usize) < self.nx
            && (j as usize) < self.ny
            && self.get(i as usize, j as usize)
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[j * self.nx + i] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn same_lattice(&self, other: &Mask) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }

    /// `self ⊆ other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.same_lattice(other) && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn intersects(&self, other: &Mask) -> bool {
        self.same_lattice(other) && self.bits.iter().zip(&other.bits).any(|(&a, &b)| a && b)
    }

    pub fn union(&self, other: &Mask) -> Mask {
        assert!(self.same_lattice(other));
        Mask {
            nx: self.nx,
            ny: self.ny,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| a || b).collect(),
        }
    }

    /// Renders the SPMASK text format: header `SPMASK <nx> <ny> <h>` followed
    /// by `ny` lines of `nx` characters, first line `j = 0`.
    pub fn to_spmask<T: Scalar>(&self, h: T) -> String {
        let mut out = String::with_capacity((self.nx + 1) * self.ny + 32);
        let _ = writeln!(out, "SPMASK {} {} {}", self.nx, self.ny, h.to_f64_lossy());
        for j in 0..self.ny {
            for i in 0..self.nx {
                out.push(if self.get(i, j) { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    /// Parses the SPMASK text format, returning the mask and its spacing.
    pub fn parse_spmask<T: Scalar>(text: &str) -> Result<(Mask, T)> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::MaskFormat("missing header line".into()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "SPMASK" {
            return Err(Error::MaskFormat(format!(
                "header must read `SPMASK <nx> <ny> <h>`, got `{header}`"
            )));
        }
        let nx: usize = parts[1]
            .parse()
            .map_err(|_| Error::MaskFormat(format!("bad nx `{}`", parts[1])))?;
        let ny: usize = parts[2]
            .parse()
            .map_err(|_| Error::MaskFormat(format!("bad ny `{}`", parts[2])))?;
        let h: f64 = parts[3]
            .parse()
            .map_err(|_| Error::MaskFormat(format!("bad h `{}`", parts[3])))?;
        if nx == 0 || ny == 0 || !(h > 0.0) || !h.is_finite() {
            return Err(Error::MaskFormat("nx, ny and h must be positive".into()));
        }
        let mut mask = Mask::new(nx, ny, false);
        for j in 0..ny {
            let line = lines
                .next()
                .ok_or_else(|| Error::MaskFormat(format!("expected {ny} rows, found {j}")))?
                .trim_end_matches('\r');
            if line.chars().count() != nx {
                return Err(Error::MaskFormat(format!(
                    "row {} has {} characters, expected {nx}",
                    j + 1,
                    line.chars().count()
                )));
            }
            for (i, c) in line.chars().enumerate() {
                match c {
                    '0' => {}
                    '1' => mask.set(i, j, true),
                    other => {
                        return Err(Error::MaskFormat(format!(
                            "row {} contains `{other}`; only 0 and 1 allowed",
                            j + 1
                        )))
                    }
                }
            }
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::MaskFormat("trailing data after the last row".into()));
        }
        Ok((mask, T::lit(h)))
    }
}

/// Masked uniform lattice discretizing Ω.
#[derive(Debug, Clone)]
pub struct Grid<T> {
    nx: usize,
    ny: usize,
    h: T,
    mask: Mask,
    shape: Shape<T>,
    dof_of: Vec<usize>,
    nodes: Vec<(usize, usize)>,
}

const NO_DOF: usize = usize::MAX;

impl<T: Scalar> Grid<T> {
    /// Builds the grid for `shape` with spacing `h`.
    pub fn build(shape: Shape<T>, h: T) -> Result<Self> {
        if !(h > T::zero()) || !h.is_finite() {
            return Err(Error::InvalidGeometry("spacing h must be positive".into()));
        }
        let cells = |len: T| -> Result<usize> {
            if !(len > T::zero()) || !len.is_finite() {
                return Err(Error::InvalidGeometry("shape dimensions must be positive".into()));
            }
            let n = (len / h).round().to_usize().unwrap_or(0);
            Ok(n.saturating_sub(1))
        };
        let mask = match &shape {
            Shape::Rectangle { width, height } => {
                let (nx, ny) = (cells(*width)?, cells(*height)?);
                Mask::new(nx, ny, true)
            }
            Shape::Disk { radius } => {
                let n = cells(T::lit(2.0) * *radius)?;
                let r2 = *radius * *radius;
                Mask::from_fn(n, n, |i, j| {
                    let x = T::from_count(i + 1) * h - *radius;
                    let y = T::from_count(j + 1) * h - *radius;
                    x * x + y * y < r2
                })
            }
            Shape::Custom(mask) => mask.clone(),
        };
        Self::from_parts(mask, h, shape)
    }

    /// Grid over an explicit mask, tagged as a custom shape.
    pub fn from_mask(mask: Mask, h: T) -> Result<Self> {
        if !(h > T::zero()) || !h.is_finite() {
            return Err(Error::InvalidGeometry("spacing h must be positive".into()));
        }
        Self::from_parts(mask.clone(), h, Shape::Custom(mask))
    }

    fn from_parts(mask: Mask, h: T, shape: Shape<T>) -> Result<Self> {
        let (nx, ny) = (mask.nx(), mask.ny());
        let mut dof_of = vec![NO_DOF; nx * ny];
        let mut nodes = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                if mask.get(i, j) {
                    dof_of[j * nx + i] = nodes.len();
                    nodes.push((i, j));
                }
            }
        }
        if nodes.is_empty() {
            return Err(Error::EmptyDomain);
        }
        Ok(Self {
            nx,
            ny,
            h,
            mask,
            shape,
            dof_of,
            nodes,
        })
    }

    /// Same lattice and spacing restricted to `submask ⊆ mask`.
    pub fn restricted(&self, submask: &Mask) -> Result<Self> {
        if !submask.same_lattice(&self.mask) {
            return Err(Error::DimensionMismatch {
                expected: self.nx * self.ny,
                got: submask.nx() * submask.ny(),
            });
        }
        if !submask.is_subset_of(&self.mask) {
            return Err(Error::InvalidGeometry("sub-mask is not contained in the grid mask".into()));
        }
        if submask.is_empty() {
            return Err(Error::EmptyCell);
        }
        Self::from_mask(submask.clone(), self.h)
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn h(&self) -> T {
        self.h
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn shape(&self) -> &Shape<T> {
        &self.shape
    }

    /// Number of degrees of freedom (mask-true nodes).
    #[inline]
    pub fn dofs(&self) -> usize {
        self.nodes.len()
    }

    /// Lattice coordinates of every dof, in dof order.
    pub fn nodes(&self) -> &[(usize, usize)] {
        &self.nodes
    }

    #[inline]
    pub fn dof(&self, i: usize, j: usize) -> Option<usize> {
        match self.dof_of[j * self.nx + i] {
            NO_DOF => None,
            d => Some(d),
        }
    }

    /// Dof at signed lattice coordinates; `None` outside the mask.
    #[inline]
    pub fn dof_signed(&self, i: isize, j: isize) -> Option<usize> {
        if i < 0 || j < 0 || i as usize >= self.nx || j as usize >= self.ny {
            None
        } else {
            self.dof(i as usize, j as usize)
        }
    }

    /// Physical coordinates of lattice node `(i, j)`.
    #[inline]
    pub fn position(&self, i: usize, j: usize) -> (T, T) {
        (T::from_count(i + 1) * self.h, T::from_count(j + 1) * self.h)
    }

    pub fn dof_position(&self, d: usize) -> (T, T) {
        let (i, j) = self.nodes[d];
        self.position(i, j)
    }

    /// Measure of the discrete domain, `h² · #dofs`.
    pub fn area(&self) -> T {
        self.h * self.h * T::from_count(self.dofs())
    }

    pub fn zeros(&self) -> Vec<T> {
        vec![T::zero(); self.dofs()]
    }

    /// Samples `f(x, y)` at every dof.
    pub fn sample(&self, f: impl Fn(T, T) -> T) -> Vec<T> {
        self.nodes
            .iter()
            .map(|&(i, j)| {
                let (x, y) = self.position(i, j);
                f(x, y)
            })
            .collect()
    }

    pub fn check_field(&self, f: &[T]) -> Result<()> {
        if f.len() != self.dofs() {
            return Err(Error::DimensionMismatch {
                expected: self.dofs(),
                got: f.len(),
            });
        }
        Ok(())
    }

    /// `h² · Σ f·g` over the mask, in dof order.
    pub fn inner_l2(&self, f: &[T], g: &[T]) -> Result<T> {
        self.check_field(f)?;
        self.check_field(g)?;
        Ok(self.inner_l2_unchecked(f, g))
    }

    #[inline]
    pub(crate) fn inner_l2_unchecked(&self, f: &[T], g: &[T]) -> T {
        let mut acc = T::zero();
        for (&a, &b) in f.iter().zip(g) {
            acc += a * b;
        }
        acc * self.h * self.h
    }

    pub fn norm_l2(&self, f: &[T]) -> T {
        self.inner_l2_unchecked(f, f).sqrt()
    }

    /// Values over the full `nx × ny` lattice, zero off the mask.
    pub fn to_lattice(&self, f: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.nx * self.ny];
        for (d, &(i, j)) in self.nodes.iter().enumerate() {
            out[j * self.nx + i] = f[d];
        }
        out
    }

    /// Inverse of [`Grid::to_lattice`]; values off the mask are dropped.
    pub fn from_lattice(&self, lattice: &[T]) -> Result<Vec<T>> {
        if lattice.len() != self.nx * self.ny {
            return Err(Error::DimensionMismatch {
                expected: self.nx * self.ny,
                got: lattice.len(),
            });
        }
        Ok(self.nodes.iter().map(|&(i, j)| lattice[j * self.nx + i]).collect())
    }

    /// Transfers a field on `self` to `other` (same lattice), by node.
    /// Nodes absent from `self` read as zero.
    pub fn transfer(&self, f: &[T], other: &Grid<T>) -> Vec<T> {
        other
            .nodes
            .iter()
            .map(|&(i, j)| self.dof(i, j).map_or(T::zero(), |d| f[d]))
            .collect()
    }

    /// Distance (physical units) from node `d` to the nearest Dirichlet
    /// position (a lattice point outside the mask or outside the block).
    pub fn boundary_distance(&self, d: usize) -> T {
        let (i, j) = self.nodes[d];
        let (i, j) = (i as isize, j as isize);
        let mut best = isize::MAX;
        let reach = (self.nx.max(self.ny) + 1) as isize;
        for r in 1..=reach {
            if r * r >= best {
                break;
            }
            for di in -r..=r {
                for dj in -r..=r {
                    if di.abs() != r && dj.abs() != r {
                        continue;
                    }
                    if !self.mask.get_signed(i + di, j + dj) {
                        best = best.min(di * di + dj * dj);
                    }
                }
            }
        }
        T::from_count(best as usize).sqrt() * self.h
    }
}

/// Sparse 5-point Dirichlet Laplacian `−Δ_h` over the dofs of a grid, in
/// compressed-row form.
#[derive(Debug, Clone)]
pub struct DirichletOperator<T> {
    h: T,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<T>,
}

impl<T: Scalar> DirichletOperator<T> {
    /// Assembles the operator: diagonal `4/h²`, `−1/h²` between mask-adjacent
    /// nodes, nothing for neighbours off the mask.
    pub fn assemble(grid: &Grid<T>) -> Self {
        let h = grid.h();
        let inv_h2 = T::one() / (h * h);
        let diag = T::lit(4.0) * inv_h2;
        let off = -inv_h2;
        let n = grid.dofs();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(5 * n);
        let mut vals = Vec::with_capacity(5 * n);
        row_ptr.push(0);
        for &(i, j) in grid.nodes() {
            let (i, j) = (i as isize, j as isize);
            let mut row: Vec<(usize, T)> = Vec::with_capacity(5);
            for (di, dj) in [(0, -1), (-1, 0), (1, 0), (0, 1)] {
                if let Some(nb) = grid.dof_signed(i + di, j + dj) {
                    row.push((nb, off));
                }
            }
            row.push((grid.dof(i as usize, j as usize).expect("node has dof"), diag));
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self {
            h,
            row_ptr,
            cols,
            vals,
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.row_ptr.len() - 1
    }

    #[inline]
    pub fn h(&self) -> T {
        self.h
    }

    /// Stored entry `(r, c)`, zero when structurally absent.
    pub fn entry(&self, r: usize, c: usize) -> T {
        let row = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[row.clone()]
            .iter()
            .position(|&cc| cc == c)
            .map_or(T::zero(), |p| self.vals[row.start + p])
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let row = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[row.clone()].iter().copied().zip(self.vals[row].iter().copied())
    }

    /// `y = L x`.
    pub fn apply_into(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.dim());
        assert_eq!(y.len(), self.dim());
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = T::zero();
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[p] * x[self.cols[p]];
            }
            *out = acc;
        }
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.dim()];
        self.apply_into(x, &mut y);
        y
    }

    /// `h² · (L f) · g`, the discrete Dirichlet form `∫ ∇f·∇g`.
    pub fn inner_h1(&self, f: &[T], g: &[T]) -> Result<T> {
        for v in [f, g] {
            if v.len() != self.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.dim(),
                    got: v.len(),
                });
            }
        }
        Ok(self.inner_h1_unchecked(f, g))
    }

    pub(crate) fn inner_h1_unchecked(&self, f: &[T], g: &[T]) -> T {
        let lf = self.apply(f);
        let mut acc = T::zero();
        for (&a, &b) in lf.iter().zip(g) {
            acc += a * b;
        }
        acc * self.h * self.h
    }

    /// Gershgorin bound on the largest eigenvalue, `8/h²`.
    pub fn spectral_bound(&self) -> T {
        T::lit(8.0) / (self.h * self.h)
    }

    pub fn is_structurally_symmetric(&self) -> bool {
        (0..self.dim()).all(|r| self.row(r).all(|(c, v)| self.entry(c, r) == v))
    }
}

/// A grid together with its assembled Laplacian.
#[derive(Debug, Clone)]
pub struct Domain<T> {
    pub grid: Grid<T>,
    pub laplacian: DirichletOperator<T>,
}

impl<T: Scalar> Domain<T> {
    pub fn new(grid: Grid<T>) -> Self {
        let laplacian = DirichletOperator::assemble(&grid);
        Self { grid, laplacian }
    }

    pub fn build(shape: Shape<T>, h: T) -> Result<Self> {
        Ok(Self::new(Grid::build(shape, h)?))
    }

    /// Sub-domain over `submask`, sharing lattice and spacing.
    pub fn restricted(&self, submask: &Mask) -> Result<Self> {
        Ok(Self::new(self.grid.restricted(submask)?))
    }

    #[inline]
    pub fn dofs(&self) -> usize {
        self.grid.dofs()
    }

    #[inline]
    pub fn h(&self) -> T {
        self.grid.h()
    }

    pub fn inner_l2(&self, f: &[T], g: &[T]) -> Result<T> {
        self.grid.inner_l2(f, g)
    }

    pub fn inner_h1(&self, f: &[T], g: &[T]) -> Result<T> {
        self.laplacian.inner_h1(f, g)
    }
}

/// Closed-form eigenvalue `(4/h²)(sin²(mπh/(2a)) + sin²(nπh/(2b)))` of the
/// 5-point Laplacian on the `a × b` rectangle.
pub fn discrete_rectangle_eigenvalue<T: Scalar>(a: T, b: T, h: T, m: usize, n: usize) -> T {
    let half = T::lit(0.5);
    let sx = (T::from_count(m) * T::PI() * h * half / a).sin();
    let sy = (T::from_count(n) * T::PI() * h * half / b).sin();
    T::lit(4.0) / (h * h) * (sx * sx + sy * sy)
}
