//! Conserved and structural quantities, discrete bracket operators and
//! peak-tracking measurements.

use crate::dynamics::{Discretisation, SimState};
use crate::error::{Result, VpmError};
use crate::fem::{pcg, SymmetricSparseOperator};
use crate::grid::{dot, GridCovector, GridField, GridSpec};
use crate::transfer::{ParticleSet, Stencils};

/// Grid inner product `⟨f, g⟩_g = Σ_kl f_k·M_kl g_l`.
pub fn grid_inner(f: &GridField, g: &GridField, mass: &SymmetricSparseOperator) -> Result<f64> {
    f.check_compatible(g)?;
    Ok(mass.bilinear(f.values(), g.values(), f.components()))
}

/// Particle inner product `⟨F, G⟩_p = Σ_β F_β·G_β`.
pub fn particle_inner(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(VpmError::ShapeMismatch(format!("particle arrays of length {} and {}", a.len(), b.len())));
    }
    Ok(dot(a, b))
}

/// Energy `½ ⟨m, u⟩_g`.
pub fn hamiltonian(m: &GridField, u: &GridField, mass: &SymmetricSparseOperator) -> Result<f64> {
    Ok(0.5 * grid_inner(m, u, mass)?)
}

/// Grid momentum `m` solving `M m = H u`.
pub fn grid_momentum(u: &GridField, helmholtz: &SymmetricSparseOperator, mass: &SymmetricSparseOperator, tol: f64) -> Result<GridField> {
    if helmholtz.dim() != u.spec().num_nodes() || mass.dim() != u.spec().num_nodes() {
        return Err(VpmError::ShapeMismatch("operators assembled on a different grid".into()));
    }
    let rhs = helmholtz.mul(u.values(), u.components());
    let (m, _) = pcg(mass, &rhs, u.components(), None, tol)?;
    GridField::from_values(*u.spec(), u.components(), m)
}

fn check_velocity(u: &GridField) -> Result<()> {
    if u.components() != u.spec().dim() {
        return Err(VpmError::ShapeMismatch("velocity fields need one component per dimension".into()));
    }
    Ok(())
}

/// `((a·∇) b)` at each particle from interpolated `a` and `[∇b]^P`.
fn directional(a_at: &[f64], grad_b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; a_at.len()];
    for ((o, a), g) in out.chunks_exact_mut(d).zip(a_at.chunks_exact(d)).zip(grad_b.chunks_exact(d * d)) {
        for c in 0..d {
            o[c] = (0..d).map(|i| a[i] * g[i * d + c]).sum();
        }
    }
    out
}

/// Discrete bracket `[ad_u w]^P = ([w]^P·∇)[u]^P − ([u]^P·∇)[w]^P` at `q`.
///
/// The sign is the one dual to [`ad_star_grid`] under the grid and particle
/// pairings, so that `ṁ + ad*_u m = 0` along the flow.
pub fn ad_particle(u: &GridField, w: &GridField, q: &[f64]) -> Result<Vec<f64>> {
    check_velocity(u)?;
    u.check_compatible(w)?;
    let d = u.spec().dim();
    let st = Stencils::new(u.spec(), q);
    let (u_at, w_at) = (st.interp(u.values(), d), st.interp(w.values(), d));
    let (gu, gw) = (st.grad(u.values(), d), st.grad(w.values(), d));
    let a = directional(&w_at, &gu, d);
    let b = directional(&u_at, &gw, d);
    Ok(a.iter().zip(&b).map(|(x, y)| x - y).collect())
}

/// Raw covector `c_k = Σ_β ψ_k(Q_β) A_β P_β − Σ_β P_β (∇ψ_k(Q_β)·[u]^P_β)`,
/// with `(A_β)_ij = ∂_i u_j(Q_β)`; pairs with grid vectors by a plain sum.
pub fn ad_star_covector(u: &GridField, p: &[f64], q: &[f64]) -> Result<GridCovector> {
    check_velocity(u)?;
    let spec = u.spec();
    let d = spec.dim();
    if p.len() != q.len() {
        return Err(VpmError::ShapeMismatch("momenta and positions differ in length".into()));
    }
    let st = Stencils::new(spec, q);
    let u_at = st.interp(u.values(), d);
    let grads = st.grad(u.values(), d);
    let mut out = vec![0.0; spec.num_nodes() * d];
    for b in 0..st.len() {
        let pb = &p[b * d..(b + 1) * d];
        let ub = &u_at[b * d..(b + 1) * d];
        let a = &grads[b * d * d..(b + 1) * d * d];
        let mut ap = [0.0; 2];
        for i in 0..d {
            ap[i] = (0..d).map(|j| a[i * d + j] * pb[j]).sum();
        }
        for (k, w, g) in st.get(b).iter() {
            let transport: f64 = (0..d).map(|i| g[i] * ub[i]).sum();
            let o = &mut out[k * d..(k + 1) * d];
            for i in 0..d {
                o[i] += w * ap[i] - pb[i] * transport;
            }
        }
    }
    Ok(GridCovector(GridField::from_values(*spec, d, out)?))
}

/// Grid representative of `ad*_u m`: satisfies
/// `⟨ad*_u m, w⟩_g = ⟨P, [ad_u w]^P⟩_p` for every grid velocity `w`.
pub fn ad_star_grid(u: &GridField, p: &[f64], q: &[f64], mass: &SymmetricSparseOperator, tol: f64) -> Result<GridField> {
    let c = ad_star_covector(u, p, q)?;
    let d = u.components();
    let (x, _) = pcg(mass, c.values(), d, None, tol)?;
    GridField::from_values(*u.spec(), d, x)
}

/// `sqrt(rᵀ M⁻¹ r)`: the g-norm of the grid vector whose covector is `r`.
fn dual_norm(r: &[f64], comps: usize, mass: &SymmetricSparseOperator, tol: f64) -> Result<f64> {
    let (x, _) = pcg(mass, r, comps, None, tol)?;
    Ok(dot(r, &x).max(0.0).sqrt())
}

fn check_consecutive(prev: &SimState, next: &SimState, dt: f64) -> Result<()> {
    if !(dt > 0.0) {
        return Err(VpmError::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    if prev.particles.len() != next.particles.len() || prev.u.spec() != next.u.spec() {
        return Err(VpmError::ShapeMismatch("states do not share a grid and particle set".into()));
    }
    Ok(())
}

/// Discrete Euler-Poincaré residual `‖(m^{n+1} − m^n)/Δt + ad*_u m‖_g`,
/// with `ad*` evaluated at `(u^{n+1}, Q^n, P^{n+1})`.
pub fn ep_residual(disc: &Discretisation, prev: &SimState, next: &SimState, dt: f64) -> Result<f64> {
    check_consecutive(prev, next, dt)?;
    let d = disc.spec.dim();
    let c = ad_star_covector(&next.u, &next.particles.p, &prev.particles.q)?;
    let hu_next = disc.helmholtz.mul(next.u.values(), d);
    let hu_prev = disc.helmholtz.mul(prev.u.values(), d);
    let r: Vec<f64> = hu_next.iter().zip(&hu_prev).zip(c.values()).map(|((a, b), c)| (a - b) / dt + c).collect();
    dual_norm(&r, d, &disc.mass, disc.solver_tol)
}

/// Continuity residual `‖([D]^G(t+Δt) − [D]^G(t))/Δt + [∇·([u]^P D̃)]^G‖_g`
/// with the flux built from `u^{n+1}` at `Q^n`.
pub fn continuity_residual(disc: &Discretisation, prev: &SimState, next: &SimState, dt: f64) -> Result<f64> {
    check_consecutive(prev, next, dt)?;
    let spec = &disc.spec;
    let d = spec.dim();
    let weights = &prev.particles.weights;
    let st_prev = Stencils::new(spec, &prev.particles.q);
    let st_next = Stencils::new(spec, &next.particles.q);
    let dens_prev = st_prev.scatter(weights, 1);
    let dens_next = st_next.scatter(&next.particles.weights, 1);
    let mut flux = st_prev.interp(next.u.values(), d);
    for (f, w) in flux.chunks_exact_mut(d).zip(weights) {
        f.iter_mut().for_each(|v| *v *= w);
    }
    // the M-weighted divergence is minus the gradient scatter
    let div = st_prev.scatter_grad_dot(&flux);
    let r: Vec<f64> = dens_next.iter().zip(&dens_prev).zip(&div).map(|((a, b), g)| (a - b) / dt - g).collect();
    dual_norm(&r, 1, &disc.mass, disc.solver_tol)
}

/// Right momentum map `J^R_β = P_βᵀ J_β`, component `j = Σ_i P_{β,i} J_{β,ij}`.
pub fn right_momentum_map(particles: &ParticleSet) -> Vec<f64> {
    let d = particles.dim();
    let mut out = vec![0.0; particles.p.len()];
    for ((o, p), j) in out.chunks_exact_mut(d).zip(particles.p.chunks_exact(d)).zip(particles.jac.chunks_exact(d * d)) {
        for c in 0..d {
            o[c] = (0..d).map(|i| p[i] * j[i * d + c]).sum();
        }
    }
    out
}

/// A closed material loop threaded through particles.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopDiagnostic {
    members: Vec<usize>,
    /// Initial line element of each member, `d` entries per member.
    dx0: Vec<f64>,
}

impl LoopDiagnostic {
    /// Loop through `members` (in order) with line elements taken as the
    /// minimal-image forward difference to the next member at the current
    /// positions, i.e. a piecewise-linear initial parameterisation.
    pub fn from_particles(spec: &GridSpec, particles: &ParticleSet, members: Vec<usize>) -> Result<Self> {
        let d = particles.dim();
        if members.len() < 3 {
            return Err(VpmError::InvalidArgument("a loop needs at least three members".into()));
        }
        if let Some(&bad) = members.iter().find(|&&b| b >= particles.len()) {
            return Err(VpmError::IndexOutOfRange { index: bad, len: particles.len() });
        }
        let mut dx0 = Vec::with_capacity(members.len() * d);
        for (i, &b) in members.iter().enumerate() {
            let next = members[(i + 1) % members.len()];
            let (x, y) = (particles.position(b), particles.position(next));
            dx0.extend((0..d).map(|a| spec.periodic_delta(a, y[a], x[a])));
        }
        Ok(Self { members, dx0 })
    }

    /// Loop with explicitly supplied line elements.
    pub fn with_elements(members: Vec<usize>, dx0: Vec<f64>, dim: usize) -> Result<Self> {
        if dx0.len() != members.len() * dim {
            return Err(VpmError::ShapeMismatch("one line element per loop member required".into()));
        }
        Ok(Self { members, dx0 })
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn line_elements(&self) -> &[f64] {
        &self.dx0
    }

    /// `I = Σ_β (P_β / D̃_β)·(J_β Δx⁰_β)`.
    pub fn circulation(&self, particles: &ParticleSet) -> Result<f64> {
        circulation(self, particles)
    }
}

/// `I = Σ_{β∈B} (P_β / D̃_β)·(J_β Δx⁰_β)`.
pub fn circulation(lp: &LoopDiagnostic, particles: &ParticleSet) -> Result<f64> {
    let d = particles.dim();
    let mut total = 0.0;
    for (&b, dx) in lp.members.iter().zip(lp.dx0.chunks_exact(d)) {
        if b >= particles.len() {
            return Err(VpmError::IndexOutOfRange { index: b, len: particles.len() });
        }
        let w = particles.weights[b];
        if w == 0.0 {
            return Err(VpmError::ZeroWeight { particle: b });
        }
        let (p, j) = (particles.momentum(b), particles.jacobian(b));
        for i in 0..d {
            let jdx: f64 = (0..d).map(|c| j[i * d + c] * dx[c]).sum();
            total += p[i] / w * jdx;
        }
    }
    Ok(total)
}

fn check_1d(u: &GridField) -> Result<()> {
    if u.spec().dim() != 1 || u.components() != 1 {
        return Err(VpmError::Measurement("peak tracking needs a scalar 1D field".into()));
    }
    Ok(())
}

/// Sub-grid position and height of the node `k` peak of `f` from a 3-point
/// parabola.
fn refine_peak(spec: &GridSpec, f: &[f64], k: usize) -> (f64, f64) {
    let n = f.len();
    let (fm, f0, fp) = (f[(k + n - 1) % n], f[k], f[(k + 1) % n]);
    let curv = fm - 2.0 * f0 + fp;
    let delta = if curv != 0.0 { ((fm - fp) / (2.0 * curv)).clamp(-0.5, 0.5) } else { 0.0 };
    let h = spec.spacing(0);
    let x = spec.wrap_coord(0, spec.node_position(k)[0] + delta * h);
    (x, f0 - 0.25 * (fm - fp) * delta)
}

/// Position of the global maximum of `|u|` with sub-grid refinement.
pub fn peak_position(u: &GridField) -> Result<f64> {
    check_1d(u)?;
    let a: Vec<f64> = u.values().iter().map(|v| v.abs()).collect();
    let k = a.iter().enumerate().fold(0, |best, (i, &v)| if v > a[best] { i } else { best });
    Ok(refine_peak(u.spec(), &a, k).0)
}

/// Local maxima of `u` at least `rel_height` times the global maximum, as
/// refined `(position, height)` pairs sorted tallest first.
pub fn local_maxima(u: &GridField, rel_height: f64) -> Result<Vec<(f64, f64)>> {
    check_1d(u)?;
    let f = u.values();
    let n = f.len();
    let top = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(top > 0.0) {
        return Ok(Vec::new());
    }
    let mut out: Vec<(f64, f64)> = (0..n)
        .filter(|&k| f[k] >= rel_height * top && f[k] >= f[(k + n - 1) % n] && f[k] > f[(k + 1) % n])
        .map(|k| refine_peak(u.spec(), f, k))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(out)
}

/// Minimum number of samples accepted by the peak-speed fit.
pub const MIN_PEAK_SAMPLES: usize = 10;

/// Ordinary least-squares line `x ≈ a + b t`, returned as `(a, b)`.
pub fn fit_line(t: &[f64], x: &[f64]) -> Result<(f64, f64)> {
    if t.len() != x.len() || t.len() < 2 {
        return Err(VpmError::Measurement("line fit needs at least two paired samples".into()));
    }
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let xm = x.iter().sum::<f64>() / n;
    let stt: f64 = t.iter().map(|v| (v - tm) * (v - tm)).sum();
    if stt == 0.0 {
        return Err(VpmError::Measurement("line fit needs distinct sample times".into()));
    }
    let stx: f64 = t.iter().zip(x).map(|(a, b)| (a - tm) * (b - xm)).sum();
    let slope = stx / stt;
    Ok((xm - slope * tm, slope))
}

/// Remove periodic jumps from a position sequence on an axis of length `len`.
pub fn unwrap_positions(x: &[f64], len: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut offset = 0.0;
    for (i, &v) in x.iter().enumerate() {
        if i > 0 {
            let jump = v - x[i - 1];
            offset -= len * (jump / len).round();
        }
        out.push(v + offset);
    }
    out
}

fn in_window(series: &[(f64, GridField)], window: (f64, f64)) -> Vec<&(f64, GridField)> {
    series.iter().filter(|(t, _)| *t >= window.0 && *t <= window.1).collect()
}

/// Peak speed from a time series of 1D fields: least-squares slope of the
/// unwrapped global-maximum position over samples with `t` in `window`.
pub fn measure_peakon_speed(series: &[(f64, GridField)], window: (f64, f64)) -> Result<f64> {
    let samples = in_window(series, window);
    if samples.len() < MIN_PEAK_SAMPLES {
        return Err(VpmError::InvalidArgument(format!("need at least {MIN_PEAK_SAMPLES} samples in the window, got {}", samples.len())));
    }
    let t: Vec<f64> = samples.iter().map(|(t, _)| *t).collect();
    let x = samples.iter().map(|(_, u)| peak_position(u)).collect::<Result<Vec<_>>>()?;
    let len = samples[0].1.spec().length(0);
    Ok(fit_line(&t, &unwrap_positions(&x, len))?.1)
}

/// Times and unwrapped positions of the `peakon_id`-th tallest peak, checking
/// that it stays at least `min_sep` away from every other peak.
fn track(series: &[(f64, GridField)], window: (f64, f64), peakon_id: usize, min_sep: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let samples = in_window(series, window);
    if samples.len() < MIN_PEAK_SAMPLES {
        return Err(VpmError::InvalidArgument(format!("need at least {MIN_PEAK_SAMPLES} samples in the window, got {}", samples.len())));
    }
    let spec = *samples[0].1.spec();
    let mut ts = Vec::with_capacity(samples.len());
    let mut xs = Vec::with_capacity(samples.len());
    for (t, u) in samples {
        let peaks = local_maxima(u, PEAK_REL_HEIGHT)?;
        let Some(&(x, _)) = peaks.get(peakon_id) else {
            return Err(VpmError::Measurement(format!("fewer than {} peaks at t = {t}", peakon_id + 1)));
        };
        for (j, &(y, _)) in peaks.iter().enumerate() {
            if j != peakon_id && spec.periodic_delta(0, x, y).abs() < min_sep {
                return Err(VpmError::Measurement(format!("peaks closer than {min_sep} at t = {t}")));
            }
        }
        ts.push(*t);
        xs.push(x);
    }
    Ok((ts, unwrap_positions(&xs, spec.length(0))))
}

/// Peaks lower than this fraction of the tallest are ignored when tracking.
pub const PEAK_REL_HEIGHT: f64 = 0.1;

/// Asymptotic position shift of the `peakon_id`-th tallest peak between a run
/// with an interaction and an unperturbed reference run.
///
/// Both trajectories are fitted with straight lines over `window`; the shift
/// is the difference of the fitted positions at the mean sample time, reduced
/// to the minimal periodic image. Peaks closer than `4 α` make the
/// measurement fail.
pub fn measure_phase_shift(
    with: &[(f64, GridField)],
    without: &[(f64, GridField)],
    peakon_id: usize,
    window: (f64, f64),
    alpha: f64,
) -> Result<f64> {
    let (ta, xa) = track(with, window, peakon_id, 4.0 * alpha)?;
    let (tb, xb) = track(without, window, peakon_id, 4.0 * alpha)?;
    let spec = *with[0].1.spec();
    let t_ref = ta.iter().sum::<f64>() / ta.len() as f64;
    let (a0, a1) = fit_line(&ta, &xa)?;
    let (b0, b1) = fit_line(&tb, &xb)?;
    Ok(spec.periodic_delta(0, a0 + a1 * t_ref, b0 + b1 * t_ref))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisKind;
    use crate::fem::{assemble_helmholtz, assemble_mass, FEBasisKind, DEFAULT_SOLVER_TOL};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(spec: GridSpec, comps: usize, rng: &mut ChaCha8Rng) -> GridField {
        let v = (0..spec.num_nodes() * comps).map(|_| rng.gen_range(-1.0..1.0)).collect();
        GridField::from_values(spec, comps, v).unwrap()
    }

    fn random_points(spec: &GridSpec, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let d = spec.dim();
        (0..n * d).map(|i| rng.gen_range(spec.lower()[i % d]..spec.upper()[i % d])).collect()
    }

    #[test]
    fn energy_of_unit_impulse_and_scaling() {
        let g = GridSpec::new_1d(0.0, 4.0, 16).unwrap();
        let m = assemble_mass(&g, FEBasisKind::PiecewiseLinear);
        let h = assemble_helmholtz(&g, FEBasisKind::PiecewiseLinear, 0.7).unwrap();
        let mut u = GridField::zeros(g, 1);
        u.values_mut()[5] = 1.0;
        let mom = grid_momentum(&u, &h, &m, DEFAULT_SOLVER_TOL).unwrap();
        let e = hamiltonian(&mom, &u, &m).unwrap();
        assert!((e - 0.5 * h.get(5, 5)).abs() < 1e-11);
        let e2 = hamiltonian(&mom.scaled(2.0), &u.scaled(2.0), &m).unwrap();
        assert!((e2 - 4.0 * e).abs() < 1e-12);
        let zero = GridField::zeros(g, 1);
        assert_eq!(hamiltonian(&grid_momentum(&zero, &h, &m, 1e-12).unwrap(), &zero, &m).unwrap(), 0.0);
    }

    #[test]
    fn grid_momentum_is_identity_without_smoothing() {
        let g = GridSpec::new_2d([0.0, 0.0], [1.0, 1.0], [8, 8]).unwrap();
        let m = assemble_mass(&g, FEBasisKind::PiecewiseLinear);
        let h = assemble_helmholtz(&g, FEBasisKind::PiecewiseLinear, 0.0).unwrap();
        let u = random_field(g, 2, &mut ChaCha8Rng::seed_from_u64(1));
        let mom = grid_momentum(&u, &h, &m, 1e-13).unwrap();
        for (a, b) in mom.values().iter().zip(u.values()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn bracket_antisymmetry_linearity_and_duality_2d() {
        let g = GridSpec::new_2d([0.0, 0.0], [1.0, 1.0], [8, 8]).unwrap();
        let m = assemble_mass(&g, FEBasisKind::PiecewiseLinear);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = random_points(&g, 128, &mut rng);
        let p: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u = random_field(g, 2, &mut rng);
        let (w1, w2) = (random_field(g, 2, &mut rng), random_field(g, 2, &mut rng));
        assert!(ad_particle(&u, &u, &q).unwrap().iter().all(|v| v.abs() <= 1e-12));
        assert!(ad_particle(&u, &GridField::zeros(g, 2), &q).unwrap().iter().all(|&v| v == 0.0));

        let combo = GridField::from_values(g, 2, w1.values().iter().zip(w2.values()).map(|(a, b)| 2.0 * a - 3.0 * b).collect()).unwrap();
        let lhs = ad_particle(&u, &combo, &q).unwrap();
        let (r1, r2) = (ad_particle(&u, &w1, &q).unwrap(), ad_particle(&u, &w2, &q).unwrap());
        for i in 0..lhs.len() {
            assert!((lhs[i] - (2.0 * r1[i] - 3.0 * r2[i])).abs() < 1e-12);
        }

        let star = ad_star_grid(&u, &p, &q, &m, 1e-14).unwrap();
        for w in [&w1, &w2, &u] {
            let a = grid_inner(&star, w, &m).unwrap();
            let b = particle_inner(&p, &ad_particle(&u, w, &q).unwrap()).unwrap();
            assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "{a} vs {b}");
        }
        assert!(grid_inner(&star, &u, &m).unwrap().abs() < 1e-10);
        let zero = ad_star_grid(&u, &vec![0.0; 256], &q, &m, 1e-12).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ad_star_matches_time_derivative_of_momentum_map() {
        // Q̇ = [u]^P, Ṗ = -A P makes d/dt J^L = -c
        let g = GridSpec::new_1d(0.0, 2.0, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_points(&g, 20, &mut rng);
        let p: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u = random_field(g, 1, &mut rng);
        let st = Stencils::new(&g, &q);
        let vel = st.interp(u.values(), 1);
        let a = st.grad(u.values(), 1);
        let eps = 1e-6;
        let moved = |s: f64| {
            let qs: Vec<f64> = q.iter().zip(&vel).map(|(x, v)| x + s * v).collect();
            let ps: Vec<f64> = p.iter().zip(&a).map(|(p, a)| p - s * a * p).collect();
            Stencils::new(&g, &qs).scatter(&ps, 1)
        };
        let (fwd, back) = (moved(eps), moved(-eps));
        let c = ad_star_covector(&u, &p, &q).unwrap();
        for k in 0..16 {
            let rate = (fwd[k] - back[k]) / (2.0 * eps);
            assert!((rate + c.values()[k]).abs() < 1e-6, "node {k}: {rate} vs {}", -c.values()[k]);
        }
    }

    #[test]
    fn zero_momentum_states_have_zero_residuals() {
        let g = GridSpec::new_1d(0.0, 10.0, 20).unwrap();
        let disc = Discretisation::new(g, BasisKind::CubicBSpline, FEBasisKind::PiecewiseLinear, 1.0).unwrap();
        let q: Vec<f64> = (0..40).map(|i| 0.25 * i as f64 + 0.1).collect();
        let parts = ParticleSet::new(1, q, vec![0.0; 40], vec![1.0; 40]).unwrap();
        let s0 = SimState::initial(&disc, parts).unwrap();
        let s1 = crate::dynamics::step(&disc, &s0, &crate::dynamics::StepParams::new(0.1)).unwrap();
        assert_eq!(ep_residual(&disc, &s0, &s1, 0.1).unwrap(), 0.0);
        assert_eq!(continuity_residual(&disc, &s0, &s1, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn right_map_and_circulation_basics() {
        let g = GridSpec::new_2d([0.0, 0.0], [1.0, 1.0], [8, 8]).unwrap();
        let q = vec![0.1, 0.1, 0.9, 0.1, 0.5, 0.8];
        let p = vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0];
        let mut parts = ParticleSet::new(2, q, p.clone(), vec![1.0, 2.0, 0.5]).unwrap();
        assert_eq!(right_momentum_map(&parts), p);
        let lp = LoopDiagnostic::from_particles(&g, &parts, vec![0, 1, 2]).unwrap();
        // 0 → 1 wraps through the seam: Δx = (-0.2, 0)
        assert!((lp.line_elements()[0] + 0.2).abs() < 1e-15);
        // y-offsets of ±0.7 are the images ∓0.3
        let expect = 1.0 * -0.2 + (-1.0 * -0.4 + 0.5 * -0.3) / 2.0 + (3.0 * 0.3) / 0.5;
        let got = lp.circulation(&parts).unwrap();
        assert!((got - expect).abs() < 1e-14, "{got} vs {expect}");
        parts.jac[0..4].copy_from_slice(&[2.0, 0.0, 1.0, 1.0]);
        assert_eq!(right_momentum_map(&parts)[0..2], [1.0 * 2.0 + 2.0 * 1.0, 2.0]);
        parts.weights[2] = 0.0;
        assert!(matches!(circulation(&lp, &parts), Err(VpmError::ZeroWeight { particle: 2 })));
        let zero = ParticleSet::new(2, parts.q.clone(), vec![0.0; 6], vec![1.0; 3]).unwrap();
        assert_eq!(circulation(&lp, &zero).unwrap(), 0.0);
    }

    fn translating(spec: GridSpec, c: f64, x0: f64, ts: &[f64]) -> Vec<(f64, GridField)> {
        ts.iter()
            .map(|&t| {
                let centre = x0 + c * t;
                let u = GridField::from_fn(spec, 1, |x| {
                    let r = spec.periodic_delta(0, x[0], centre);
                    vec![(-r * r).exp()]
                });
                (t, u)
            })
            .collect()
    }

    #[test]
    fn speed_of_exact_translation() {
        let g = GridSpec::new_1d(0.0, 20.0, 200).unwrap();
        let ts: Vec<f64> = (0..=40).map(|i| i as f64 * 0.5).collect();
        let series = translating(g, 0.7, 3.0, &ts);
        let c = measure_peakon_speed(&series, (0.0, 20.0)).unwrap();
        assert!((c - 0.7).abs() <= g.spacing(0) / 20.0, "{c}");
        let still = translating(g, 0.0, 3.0, &ts);
        assert_eq!(measure_peakon_speed(&still, (0.0, 20.0)).unwrap(), 0.0);
        assert!(measure_peakon_speed(&series, (0.0, 3.0)).is_err());
    }

    #[test]
    fn phase_shift_of_identical_and_offset_runs() {
        let g = GridSpec::new_1d(0.0, 40.0, 400).unwrap();
        let ts: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let a = translating(g, 1.0, 5.0, &ts);
        let b = translating(g, 1.0, 4.5, &ts);
        assert_eq!(measure_phase_shift(&a, &a, 0, (0.0, 19.0), 1.0).unwrap(), 0.0);
        let s = measure_phase_shift(&a, &b, 0, (0.0, 19.0), 1.0).unwrap();
        assert!((s - 0.5).abs() < 1e-3, "{s}");
    }

    #[test]
    fn phase_shift_rejects_close_peaks() {
        let g = GridSpec::new_1d(0.0, 40.0, 400).unwrap();
        let series: Vec<(f64, GridField)> = (0..12)
            .map(|i| {
                let u = GridField::from_fn(g, 1, |x| vec![(-(x[0] - 10.0).powi(2)).exp() + 0.5 * (-(x[0] - 12.0).powi(2)).exp()]);
                (i as f64, u)
            })
            .collect();
        assert!(matches!(measure_phase_shift(&series, &series, 0, (0.0, 11.0), 1.0), Err(VpmError::Measurement(_))));
    }

    #[test]
    fn unwrap_and_fit() {
        let x = unwrap_positions(&[9.0, 9.8, 0.6, 1.4], 10.0);
        assert!((x[2] - 10.6).abs() < 1e-12 && (x[3] - 11.4).abs() < 1e-12);
        let (a, b) = fit_line(&[0.0, 1.0, 2.0, 3.0], &[1.0, 3.0, 5.0, 7.0]).unwrap();
        assert!((a - 1.0).abs() < 1e-14 && (b - 2.0).abs() < 1e-14);
    }
}
