//! Laplace spectra of compact Sol-manifolds `M³_A` under the adiabatic metric
//! family `g_ε = g_F + ε⁻²g_H`, where `F` is the one-dimensional foliation by
//! orbits of the left-invariant field `X(1, α, 0)`.
//!
//! The spectrum splits into a zero-frequency sector (a circle of length `ln λ`)
//! and one modified Mathieu operator per monodromy orbit of the dual lattice.
//! [`assembler`] builds `N_ε(t)` from these pieces, [`oracle3d`] checks the
//! decomposition against a direct finite-difference discretisation, and
//! [`experiments`] runs the sweeps and fits.

pub mod assembler;
pub mod experiments;
pub mod lattice;
pub mod oracle3d;
pub mod quadrature;
pub mod report;
pub mod schrodinger;
