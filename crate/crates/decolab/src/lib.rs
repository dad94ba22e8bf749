//! Energy-based decoherence laboratory.
//!
//! This crate implements a family of models in which time itself carries an
//! intrinsic uncertainty, so that evolution averaged over that uncertainty
//! decoheres superpositions of energy eigenstates:
//!
//! * deterministic master equations (global and spatially local
//!   double-commutator forms, an exact unitary-jump form with its first-order
//!   limit, an effective-Hamiltonian variant, and pointer-basis dephasing of
//!   gravitational lumps), integrated with a fixed-step fourth-order scheme;
//! * stochastic unravelings of the same dynamics (Gaussian time fluctuations,
//!   local Gaussian fields, Poisson jump processes, fluctuating clock rates)
//!   whose ensemble averages are compared against the master equations with
//!   per-entry standard-error statistics;
//! * Newtonian self-energy of smeared mass distributions on cell grids,
//!   pointer decay rates, and the critical size where a lump's decay time
//!   matches its internal dynamical time;
//! * a matrix-model toy dynamics whose global unitary invariance generates a
//!   conserved anti-Hermitian charge under symplectic integration.
//!
//! Everything is expressed in SI units through an explicit [`UnitsContext`];
//! nothing reads global state, and all stochastic code is seeded explicitly.

pub mod error;
pub mod gravity;
pub mod kernels;
pub mod linalg;
pub mod master;
pub mod quantum;
pub mod stochastic;
pub mod tracedyn;
pub mod units;

pub use error::{Error, Result};
pub use gravity::{
    ball_pair_egrav_spectral, critical_radius, dp_rate_check, egrav, pair_energy, uniform_ball,
    uniform_ball_at, CriticalRadius, GravResult, LumpPair, MassDensityField, SweepRow,
};
pub use kernels::{CellGrid, CorrelationKernel, KernelVariant, NewtonianNoiseSpec};
pub use linalg::{CMatrix, RMatrix};
pub use master::{
    decoherence_time, fit_offdiag_decay, integrate, DecayFit, DecoherenceConvention,
    EvolutionModel, LocalHamiltonian, Trajectory,
};
pub use quantum::{
    make_superposition, unitary_evolve, validate_state, DensityMatrix, HamiltonianSpec,
    StateInvariant, StateViolation, SuperpositionSpec,
};
pub use stochastic::{
    compare_to_master, ensemble_average, sample_state, EnsembleResult, NoiseModel, ZTable,
};
pub use tracedyn::{
    c_tilde, c_tilde_per_site, forces, hamiltonian, leapfrog, random_state,
    unitary_invariance_residual, TraceModelSpec, TraceState,
};
pub use units::UnitsContext;
