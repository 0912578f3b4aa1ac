//! Variational particle-mesh solver for the EPDiff equation on periodic
//! grids in one and two dimensions.
//!
//! Particles carry momentum and deformation; the velocity lives on a grid of
//! piecewise-linear finite elements and is recovered from the particles by a
//! Helmholtz solve. Particle-grid transfers use cubic B-splines.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod fem;
pub mod grid;
pub mod transfer;

pub use basis::{eval_basis, eval_basis_grad, support_nodes, BasisKind};
pub use diagnostics::{
    ad_particle, ad_star_grid, circulation, continuity_residual, ep_residual, grid_inner, grid_momentum, hamiltonian, measure_peakon_speed,
    measure_phase_shift, particle_inner, right_momentum_map, LoopDiagnostic,
};
pub use dynamics::{advect_loop, initialize_from_velocity, step, Discretisation, FixedPointStats, SimState, StepParams};
pub use error::{Result, VpmError};
pub use fem::{
    assemble_helmholtz, assemble_mass, assemble_stiffness, pcg, solve_spd, FEBasisKind, LinearOperator, SymmetricSparseOperator,
};
pub use grid::{GridCovector, GridField, GridSpec};
pub use transfer::{
    divergence_on_grid, grad_at_particles, grid_density, interp_to_particles, left_momentum_map, scatter_density, velocity_from_particles,
    ParticleSet,
};
