//! Time evolution with the first-order symplectic Euler-A scheme.
//!
//! One step from level `n` solves the coupled system
//!
//! ```text
//! H u^{n+1}           = Σ_β P^{n+1}_β ψ(Q^n_β)
//! (I + Δt A_β) P^{n+1}_β = P^n_β,        (A_β)_ij = Σ_k ∂_i ψ_k(Q^n_β) u^{n+1}_{k,j}
//! ```
//!
//! by fixed-point iteration on `u`, then moves the particles explicitly,
//! `Q^{n+1} = Q^n + Δt [u^{n+1}]^P(Q^n)`, and updates the Jacobians with the
//! transposed operator, `J^{n+1} = (I + Δt A_βᵀ) J^n`. The last choice makes
//! `P_βᵀ J_β` invariant step by step.

use crate::basis::BasisKind;
use crate::error::{Result, VpmError};
use crate::fem::{assemble_helmholtz, assemble_mass, pcg, FEBasisKind, LinearOperator, SymmetricSparseOperator, DEFAULT_SOLVER_TOL};
use crate::grid::{dot, GridField, GridSpec};
use crate::transfer::{ParticleSet, Stencils};

/// Grid, bases and assembled operators shared by a simulation.
#[derive(Debug, Clone)]
pub struct Discretisation {
    pub spec: GridSpec,
    pub basis: BasisKind,
    pub fe: FEBasisKind,
    pub alpha: f64,
    pub mass: SymmetricSparseOperator,
    pub helmholtz: SymmetricSparseOperator,
    pub solver_tol: f64,
}

impl Discretisation {
    pub fn new(spec: GridSpec, basis: BasisKind, fe: FEBasisKind, alpha: f64) -> Result<Self> {
        let helmholtz = assemble_helmholtz(&spec, fe, alpha)?;
        Ok(Self { spec, basis, fe, alpha, mass: assemble_mass(&spec, fe), helmholtz, solver_tol: DEFAULT_SOLVER_TOL })
    }

    pub fn with_solver_tol(mut self, tol: f64) -> Result<Self> {
        if !(tol > 0.0 && tol <= 1e-6) {
            return Err(VpmError::InvalidArgument(format!("solver tolerance must lie in (0, 1e-6], got {tol}")));
        }
        self.solver_tol = tol;
        Ok(self)
    }

    /// Grid momentum `m` with `M m = H u`.
    pub fn grid_momentum(&self, u: &GridField, guess: Option<&GridField>) -> Result<GridField> {
        let rhs = self.helmholtz.mul(u.values(), u.components());
        let (m, _) = pcg(&self.mass, &rhs, u.components(), guess.map(|g| g.values()), self.solver_tol)?;
        GridField::from_values(self.spec, u.components(), m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams {
    pub dt: f64,
    pub fixed_point_tol: f64,
    pub fixed_point_cap: usize,
}

impl StepParams {
    pub fn new(dt: f64) -> Self {
        Self { dt, fixed_point_tol: 1e-12, fixed_point_cap: 200 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(VpmError::InvalidArgument(format!("time step must be positive, got {}", self.dt)));
        }
        if !(self.fixed_point_tol > 0.0) || self.fixed_point_cap == 0 {
            return Err(VpmError::InvalidArgument("fixed-point tolerance and cap must be positive".into()));
        }
        Ok(())
    }
}

/// Convergence record of the last step's fixed-point solve.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FixedPointStats {
    pub iterations: usize,
    /// Final relative change in `u`.
    pub residual: f64,
    /// Conjugate-gradient iterations summed over the sweeps.
    pub linear_iterations: usize,
    /// Tolerance actually applied, including the round-off floor.
    pub tolerance: f64,
}

/// Full solver state at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub step: usize,
    pub particles: ParticleSet,
    /// Grid velocity; `H u = J^L(P, Q_prev)`.
    pub u: GridField,
    /// Grid momentum; `M m = H u`.
    pub m: GridField,
    pub stats: FixedPointStats,
}

impl SimState {
    /// State at `t = 0` from initialized particles.
    pub fn initial(disc: &Discretisation, particles: ParticleSet) -> Result<Self> {
        let stencils = Stencils::new(&disc.spec, &particles.q);
        let d = disc.spec.dim();
        let jl = stencils.scatter(&particles.p, d);
        let (u, _) = pcg(&disc.helmholtz, &jl, d, None, disc.solver_tol)?;
        let u = GridField::from_values(disc.spec, d, u)?;
        let m = disc.grid_momentum(&u, None)?;
        Ok(Self { t: 0.0, step: 0, particles, u, m, stats: FixedPointStats::default() })
    }
}

/// `ΨΨᵀ` for the point-to-node transfer matrix `Ψ_kβ = ψ_k(Q_β)`, applied
/// matrix-free, with an optional diagonal shift.
struct TransferGram<'a> {
    stencils: &'a Stencils,
    shift: f64,
}

impl LinearOperator for TransferGram<'_> {
    fn size(&self) -> usize {
        self.stencils.spec().num_nodes()
    }

    fn apply(&self, x: &[f64], y: &mut [f64], comps: usize) {
        let at_points = self.stencils.interp(x, comps);
        let back = self.stencils.scatter(&at_points, comps);
        for ((yi, bi), xi) in y.iter_mut().zip(back).zip(x) {
            *yi = bi + self.shift * xi;
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let mut diag = vec![self.shift; self.size()];
        for b in 0..self.stencils.len() {
            for (k, w, _) in self.stencils.get(b).iter() {
                diag[k] += w * w;
            }
        }
        diag
    }
}

/// Residual threshold on `‖Ψ P − H u0‖ / ‖H u0‖` accepted by initialization.
pub const INIT_RESIDUAL_TOL: f64 = 1e-8;

/// Particle momenta reproducing the grid velocity `u0`.
///
/// Returns the minimum-norm `P` with `Σ_β P_β ψ_k(Q0_β) = (H u0)_k`,
/// unit weights and identity Jacobians. If the normal equations are singular
/// (nodes not seen by any particle) a `1e-12` relative Tikhonov shift is used
/// and the constraint residual is checked against [`INIT_RESIDUAL_TOL`].
pub fn initialize_from_velocity(disc: &Discretisation, u0: &GridField, q0: &[f64]) -> Result<ParticleSet> {
    let spec = &disc.spec;
    let d = spec.dim();
    if u0.spec() != spec || u0.components() != d {
        return Err(VpmError::ShapeMismatch("initial velocity must be a d-component field on the simulation grid".into()));
    }
    if !q0.len().is_multiple_of(d) {
        return Err(VpmError::ShapeMismatch("particle coordinates are not a whole number of points".into()));
    }
    let mut q = q0.to_vec();
    q.iter_mut().enumerate().for_each(|(i, x)| *x = spec.wrap_coord(i % d, *x));
    let n_p = q.len() / d;
    let stencils = Stencils::new(spec, &q);
    let rhs = disc.helmholtz.mul(u0.values(), d);
    let rhs_norm = dot(&rhs, &rhs).sqrt();

    let mut gram = TransferGram { stencils: &stencils, shift: 0.0 };
    let diag = gram.diagonal();
    let singular = diag.iter().any(|&v| v <= 0.0);
    let solved = if singular { None } else { pcg(&gram, &rhs, d, None, disc.solver_tol).ok() };
    let y = match solved {
        Some((y, _)) => y,
        None => {
            let mean = diag.iter().sum::<f64>() / diag.len() as f64;
            gram.shift = 1e-12 * mean.max(f64::MIN_POSITIVE);
            match pcg(&gram, &rhs, d, None, disc.solver_tol) {
                Ok((y, _)) => y,
                Err(VpmError::SolverDiverged { residual, .. }) => return Err(VpmError::Initialization { residual }),
                Err(e) => return Err(e),
            }
        }
    };
    let p = stencils.interp(&y, d);
    if rhs_norm > 0.0 {
        let back = stencils.scatter(&p, d);
        let res = back.iter().zip(&rhs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / rhs_norm;
        if !(res <= INIT_RESIDUAL_TOL) {
            return Err(VpmError::Initialization { residual: res });
        }
    }
    ParticleSet::new(d, q, p, vec![1.0; n_p])
}

/// Per-particle velocity gradients `A_β`, laid out `[β][i][j] = ∂_i u_j`.
fn particle_gradients(stencils: &Stencils, u: &[f64], d: usize) -> Vec<f64> {
    stencils.grad(u, d)
}

/// Solve `(I + Δt A_β) P_new = P_old` for every particle.
fn update_momenta(p_old: &[f64], grads: &[f64], dt: f64, d: usize, p_new: &mut [f64]) -> Result<()> {
    if d == 1 {
        for (b, (pn, (&po, &a))) in p_new.iter_mut().zip(p_old.iter().zip(grads)).enumerate() {
            let det = 1.0 + dt * a;
            if !(det > 1e-12) {
                return Err(VpmError::SingularParticleUpdate { particle: b, det });
            }
            *pn = po / det;
        }
    } else {
        for b in 0..p_old.len() / 2 {
            let a = &grads[4 * b..4 * b + 4];
            let (m00, m01, m10, m11) = (1.0 + dt * a[0], dt * a[1], dt * a[2], 1.0 + dt * a[3]);
            let det = m00 * m11 - m01 * m10;
            if !(det > 1e-12) {
                return Err(VpmError::SingularParticleUpdate { particle: b, det });
            }
            let (p0, p1) = (p_old[2 * b], p_old[2 * b + 1]);
            p_new[2 * b] = (m11 * p0 - m01 * p1) / det;
            p_new[2 * b + 1] = (m00 * p1 - m10 * p0) / det;
        }
    }
    Ok(())
}

/// `J_new = (I + Δt A_βᵀ) J_old`.
fn update_jacobians(jac: &mut [f64], grads: &[f64], dt: f64, d: usize) {
    if d == 1 {
        for (j, &a) in jac.iter_mut().zip(grads) {
            *j += dt * a * *j;
        }
    } else {
        for (j, a) in jac.chunks_exact_mut(4).zip(grads.chunks_exact(4)) {
            // (Aᵀ J)_ij = Σ_l A_li J_lj
            let n00 = j[0] + dt * (a[0] * j[0] + a[2] * j[2]);
            let n01 = j[1] + dt * (a[0] * j[1] + a[2] * j[3]);
            let n10 = j[2] + dt * (a[1] * j[0] + a[3] * j[2]);
            let n11 = j[3] + dt * (a[1] * j[1] + a[3] * j[3]);
            j.copy_from_slice(&[n00, n01, n10, n11]);
        }
    }
}

/// Safety factor on the cancellation-limited precision of the momentum map.
const ROUNDOFF_FACTOR: f64 = 100.0;

/// Smallest relative change in `u` resolvable in floating point.
///
/// Momenta of particles squeezed together can grow large with mixed signs
/// while their scatter stays `O(1)`; the achievable precision of `u` then
/// degrades by `‖Σ|P|ψ‖ / ‖ΣPψ‖`.
fn roundoff_floor(stencils: &Stencils, p: &[f64], jl: &[f64], d: usize) -> f64 {
    let abs: Vec<f64> = p.iter().map(|v| v.abs()).collect();
    let gross = stencils.scatter(&abs, d);
    let net = dot(jl, jl).sqrt();
    if net == 0.0 {
        return 0.0;
    }
    ROUNDOFF_FACTOR * f64::EPSILON * dot(&gross, &gross).sqrt() / net
}

fn relative_change(new: &[f64], old: &[f64]) -> f64 {
    let diff = new.iter().zip(old).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let scale = dot(new, new).sqrt().max(dot(old, old).sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Advance one time level.
pub fn step(disc: &Discretisation, state: &SimState, params: &StepParams) -> Result<SimState> {
    params.validate()?;
    let spec = &disc.spec;
    let d = spec.dim();
    let dt = params.dt;
    let parts = &state.particles;
    let stencils = Stencils::new(spec, &parts.q);

    // inner solves must resolve u well below the fixed-point tolerance
    let inner_tol = disc.solver_tol.min(1e-3 * params.fixed_point_tol);
    let mut u = state.u.values().to_vec();
    let mut p_new = vec![0.0; parts.p.len()];
    let mut stats = FixedPointStats::default();
    let mut converged = false;
    for it in 1..=params.fixed_point_cap {
        let grads = particle_gradients(&stencils, &u, d);
        update_momenta(&parts.p, &grads, dt, d, &mut p_new)?;
        let jl = stencils.scatter(&p_new, d);
        let (u_next, solve) = pcg(&disc.helmholtz, &jl, d, Some(&u), inner_tol)?;
        let change = relative_change(&u_next, &u);
        let tol = params.fixed_point_tol.max(roundoff_floor(&stencils, &p_new, &jl, d));
        stats = FixedPointStats {
            iterations: it,
            residual: change,
            linear_iterations: stats.linear_iterations + solve.iterations,
            tolerance: tol,
        };
        u = u_next;
        if !change.is_finite() {
            break;
        }
        if change <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(VpmError::FixedPointDiverged { iterations: stats.iterations, residual: stats.residual });
    }

    // kinematics all use the converged u, so P and J see the same A_β
    let grads = particle_gradients(&stencils, &u, d);
    update_momenta(&parts.p, &grads, dt, d, &mut p_new)?;
    let vel = stencils.interp(&u, d);
    let mut next = parts.clone();
    next.p = p_new;
    for (i, (x, v)) in next.q.iter_mut().zip(&vel).enumerate() {
        *x = spec.wrap_coord(i % d, *x + dt * v);
    }
    update_jacobians(&mut next.jac, &grads, dt, d);

    let u = GridField::from_values(*spec, d, u)?;
    let m = disc.grid_momentum(&u, Some(&state.m))?;
    Ok(SimState { t: state.t + dt, step: state.step + 1, particles: next, u, m, stats })
}

/// Advect loop points with `x ← x + Δt Σ_k u_k ψ_k(x)`.
///
/// `points` holds `n * d` coordinates in loop order.
pub fn advect_loop(u: &GridField, points: &[f64], dt: f64) -> Result<Vec<f64>> {
    let spec = u.spec();
    let d = spec.dim();
    if !points.len().is_multiple_of(d) || u.components() != d {
        return Err(VpmError::ShapeMismatch("loop points and velocity must both be d-dimensional".into()));
    }
    let vel = Stencils::new(spec, points).interp(u.values(), d);
    Ok(points.iter().zip(&vel).enumerate().map(|(i, (x, v))| spec.wrap_coord(i % d, x + dt * v)).collect())
}
