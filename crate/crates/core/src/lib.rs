//! Spectral optimal partitions on masked uniform grids.
//!
//! Each of `m` groups carries `k_i` scalar fields, orthonormal in L². The
//! groups compete through the penalized energy
//!
//! ```text
//! E_β = Σ_i ψ_i(∫|∇u^i_1|², …, ∫|∇u^i_{k_i}|²) + Σ_{i<j} (2β/q) ∫ ρ_i^{q/2} ρ_j^{q/2}
//! ```
//!
//! which [`optimizer::solve`] minimizes with continuation in β (and in the
//! exponent of power-sum costs). [`partition`] turns the converged densities
//! into cells and audits them with exact eigenvalues, and [`diagnostics`]
//! measures frequency and extremality quantities around interface points.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the double-precision instantiation.

pub mod dense;
pub mod diagnostics;
pub mod eigensolve;
pub mod energy;
mod error;
pub mod frame;
pub mod grid;
pub mod optimizer;
pub mod partition;
mod scalar;
pub mod specfun;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Shape64 = grid::Shape<f64>;
pub type Grid64 = grid::Grid<f64>;
pub type Domain64 = grid::Domain<f64>;
pub type DirichletOperator64 = grid::DirichletOperator<f64>;
pub type EigenOptions64 = eigensolve::EigenOptions<f64>;
pub type EigenResult64 = eigensolve::EigenResult<f64>;
pub type FieldFrame64 = frame::FieldFrame<f64>;
pub type SpectralCost64 = specfun::SpectralCost<f64>;
pub type PartitionState64 = energy::PartitionState<f64>;
pub type MultiplierSet64 = energy::MultiplierSet<f64>;
pub type ContinuationSchedule64 = optimizer::ContinuationSchedule<f64>;
pub type SolveReport64 = optimizer::SolveReport<f64>;
pub type StageRecord64 = optimizer::StageRecord<f64>;
pub type PartitionResult64 = partition::PartitionResult<f64>;
pub type AlmgrenSample64 = diagnostics::AlmgrenSample<f64>;
pub type InterfaceProbe64 = diagnostics::InterfaceProbe<f64>;
