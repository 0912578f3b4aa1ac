//! Grid ↔ particle transfer.
//!
//! The basis functions play two roles: they interpolate grid data to the
//! particles (`[f]^P`, `[∇f]^P`) and they scatter particle weights onto the
//! grid, where the raw scatter is a covector and `M⁻¹` turns it into a nodal
//! density (`[g]^G`, `[∇·g]^G`). The left momentum map is the raw scatter of
//! the particle momenta.

use crate::basis::Stencil;
use crate::error::{Result, VpmError};
use crate::fem::{pcg, SymmetricSparseOperator};
use crate::grid::{GridCovector, GridField, GridSpec};

/// Lagrangian particles: positions `Q`, momenta `P`, Jacobians `J` and
/// constant density weights `D̃`.
///
/// Layout is particle-major: `q[β*d + i]`, `p[β*d + i]`, `jac[β*d*d + i*d + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    dim: usize,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub jac: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ParticleSet {
    /// Particles with identity Jacobians.
    pub fn new(dim: usize, q: Vec<f64>, p: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(VpmError::InvalidArgument(format!("dimension must be 1 or 2, got {dim}")));
        }
        let n = weights.len();
        if q.len() != n * dim || p.len() != n * dim {
            return Err(VpmError::ShapeMismatch(format!(
                "{n} particles need {} position and momentum entries, got {} and {}",
                n * dim,
                q.len(),
                p.len()
            )));
        }
        let mut jac = vec![0.0; n * dim * dim];
        for b in 0..n {
            for i in 0..dim {
                jac[b * dim * dim + i * dim + i] = 1.0;
            }
        }
        Ok(Self { dim, q, p, jac, weights })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn position(&self, b: usize) -> &[f64] {
        &self.q[b * self.dim..(b + 1) * self.dim]
    }

    #[inline]
    pub fn momentum(&self, b: usize) -> &[f64] {
        &self.p[b * self.dim..(b + 1) * self.dim]
    }

    #[inline]
    pub fn jacobian(&self, b: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.jac[b * dd..(b + 1) * dd]
    }

    /// Wrap every position into the periodic domain.
    pub fn wrap_positions(&mut self, spec: &GridSpec) {
        let d = self.dim;
        for (i, x) in self.q.iter_mut().enumerate() {
            *x = spec.wrap_coord(i % d, *x);
        }
    }
}

/// Basis stencils of a fixed set of points, shared by every transfer that
/// uses those points.
#[derive(Debug, Clone)]
pub struct Stencils {
    spec: GridSpec,
    inner: Vec<Stencil>,
}

impl Stencils {
    /// `q` holds `n * spec.dim()` coordinates.
    pub fn new(spec: &GridSpec, q: &[f64]) -> Self {
        let d = spec.dim();
        let inner = q.chunks_exact(d).map(|x| Stencil::new(spec, x)).collect();
        Self { spec: *spec, inner }
    }

    #[inline]
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.inner.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.inner.is_empty()
    }

    #[inline]
    pub fn get(&self, b: usize) -> &Stencil {
        &self.inner[b]
    }

    /// `[f]^P_β = Σ_k f_k ψ_k(Q_β)`, `comps` values per point.
    pub fn interp(&self, f: &[f64], comps: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.len() * comps];
        for (s, o) in self.inner.iter().zip(out.chunks_exact_mut(comps)) {
            for (k, w, _) in s.iter() {
                let fk = &f[k * comps..(k + 1) * comps];
                for c in 0..comps {
                    o[c] += w * fk[c];
                }
            }
        }
        out
    }

    /// `[∇f]^P_β`, laid out as `out[β][i][c] = ∂_i f_c`.
    pub fn grad(&self, f: &[f64], comps: usize) -> Vec<f64> {
        let d = self.spec.dim();
        let mut out = vec![0.0; self.len() * d * comps];
        for (s, o) in self.inner.iter().zip(out.chunks_exact_mut(d * comps)) {
            for (k, _, g) in s.iter() {
                let fk = &f[k * comps..(k + 1) * comps];
                for i in 0..d {
                    for c in 0..comps {
                        o[i * comps + c] += g[i] * fk[c];
                    }
                }
            }
        }
        out
    }

    /// Raw scatter `Σ_β g_β ψ_k(Q_β)` (no mass-matrix inverse).
    pub fn scatter(&self, g: &[f64], comps: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.spec.num_nodes() * comps];
        for (s, gb) in self.inner.iter().zip(g.chunks_exact(comps)) {
            for (k, w, _) in s.iter() {
                let o = &mut out[k * comps..(k + 1) * comps];
                for c in 0..comps {
                    o[c] += w * gb[c];
                }
            }
        }
        out
    }

    /// Raw gradient scatter `Σ_β g_β · ∇ψ_k(Q_β)` for per-point d-vectors.
    pub fn scatter_grad_dot(&self, g: &[f64]) -> Vec<f64> {
        let d = self.spec.dim();
        let mut out = vec![0.0; self.spec.num_nodes()];
        for (s, gb) in self.inner.iter().zip(g.chunks_exact(d)) {
            for (k, _, gr) in s.iter() {
                let mut acc = 0.0;
                for i in 0..d {
                    acc += gb[i] * gr[i];
                }
                out[k] += acc;
            }
        }
        out
    }
}

fn check_points(spec: &GridSpec, q: &[f64]) -> Result<()> {
    if !q.len().is_multiple_of(spec.dim()) {
        return Err(VpmError::ShapeMismatch(format!("{} coordinates is not a whole number of {}-d points", q.len(), spec.dim())));
    }
    Ok(())
}

fn check_per_point(q_len: usize, d: usize, g_len: usize, comps: usize) -> Result<()> {
    if g_len != (q_len / d) * comps {
        return Err(VpmError::ShapeMismatch(format!("expected {} per-particle values, got {g_len}", (q_len / d) * comps)));
    }
    Ok(())
}

/// `[f]^P`.
pub fn interp_to_particles(f: &GridField, q: &[f64]) -> Result<Vec<f64>> {
    check_points(f.spec(), q)?;
    Ok(Stencils::new(f.spec(), q).interp(f.values(), f.components()))
}

/// `[∇f]^P`, laid out as `out[β][i][c] = ∂_i f_c`.
pub fn grad_at_particles(f: &GridField, q: &[f64]) -> Result<Vec<f64>> {
    check_points(f.spec(), q)?;
    Ok(Stencils::new(f.spec(), q).grad(f.values(), f.components()))
}

/// Raw particle scatter `Σ_β g_β ψ_k(Q_β)`.
pub fn scatter_raw(spec: &GridSpec, g: &[f64], comps: usize, q: &[f64]) -> Result<GridCovector> {
    check_points(spec, q)?;
    check_per_point(q.len(), spec.dim(), g.len(), comps)?;
    let raw = Stencils::new(spec, q).scatter(g, comps);
    Ok(GridCovector(GridField::from_values(*spec, comps, raw)?))
}

fn solve_mass(mass: &SymmetricSparseOperator, spec: &GridSpec, rhs: Vec<f64>, comps: usize, tol: f64) -> Result<GridField> {
    if mass.dim() != spec.num_nodes() {
        return Err(VpmError::ShapeMismatch("mass matrix assembled on a different grid".into()));
    }
    let (x, _) = pcg(mass, &rhs, comps, None, tol)?;
    GridField::from_values(*spec, comps, x)
}

/// `[g]^G = M⁻¹ Σ_β g_β ψ(Q_β)`.
pub fn scatter_density(spec: &GridSpec, g: &[f64], comps: usize, q: &[f64], mass: &SymmetricSparseOperator, tol: f64) -> Result<GridField> {
    let raw = scatter_raw(spec, g, comps, q)?;
    solve_mass(mass, spec, raw.0.into_values(), comps, tol)
}

/// `[∇·g]^G = -M⁻¹ Σ_β g_β · ∇ψ(Q_β)` for per-particle d-vectors `g`.
pub fn divergence_on_grid(spec: &GridSpec, g: &[f64], q: &[f64], mass: &SymmetricSparseOperator, tol: f64) -> Result<GridField> {
    check_points(spec, q)?;
    check_per_point(q.len(), spec.dim(), g.len(), spec.dim())?;
    let mut raw = Stencils::new(spec, q).scatter_grad_dot(g);
    raw.iter_mut().for_each(|v| *v = -*v);
    solve_mass(mass, spec, raw, 1, tol)
}

/// Left momentum map `J^L_k = Σ_β P_β ψ_k(Q_β)`.
pub fn left_momentum_map(spec: &GridSpec, p: &[f64], q: &[f64]) -> Result<GridCovector> {
    scatter_raw(spec, p, spec.dim(), q)
}

/// Grid velocity solving `H u = J^L(P, Q)`.
pub fn velocity_from_particles(spec: &GridSpec, p: &[f64], q: &[f64], helmholtz: &SymmetricSparseOperator, tol: f64) -> Result<GridField> {
    let jl = left_momentum_map(spec, p, q)?;
    solve_mass(helmholtz, spec, jl.0.into_values(), spec.dim(), tol)
}

/// Grid density `D = M⁻¹ Σ_β D̃_β ψ(Q_β)`.
pub fn grid_density(spec: &GridSpec, weights: &[f64], q: &[f64], mass: &SymmetricSparseOperator, tol: f64) -> Result<GridField> {
    scatter_density(spec, weights, 1, q, mass, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble_helmholtz, assemble_mass, FEBasisKind, DEFAULT_SOLVER_TOL};
    use crate::grid::dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = DEFAULT_SOLVER_TOL;

    fn spec() -> GridSpec {
        GridSpec::new_1d(0.0, 8.0, 32).unwrap()
    }

    fn random_points(spec: &GridSpec, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut q = Vec::with_capacity(n * spec.dim());
        for _ in 0..n {
            for a in 0..spec.dim() {
                q.push(rng.gen_range(spec.lower()[a]..spec.upper()[a]));
            }
        }
        q
    }

    #[test]
    fn interpolation_of_constants_zero_and_linears() {
        let g = spec();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let q = random_points(&g, 50, &mut rng);
        let c = GridField::from_fn(g, 1, |_| vec![2.5]);
        assert!(interp_to_particles(&c, &q).unwrap().iter().all(|v| (v - 2.5).abs() < 1e-12));
        let z = GridField::zeros(g, 1);
        assert!(interp_to_particles(&z, &q).unwrap().iter().all(|&v| v == 0.0));

        // linear reproduction away from the seam, against a direct summation oracle
        let lin = GridField::from_fn(g, 1, |x| vec![x[0]]);
        let inner: Vec<f64> = (0..40).map(|i| 2.5 + 3.0 * i as f64 / 40.0).collect();
        let vals = interp_to_particles(&lin, &inner).unwrap();
        let grads = grad_at_particles(&lin, &inner).unwrap();
        for (i, &x) in inner.iter().enumerate() {
            let direct: f64 = (0..32).map(|k| g.node_position(k)[0] * crate::basis::eval_basis(&g, k, &[x]).unwrap()).sum();
            assert!((vals[i] - x).abs() < 1e-12 && (vals[i] - direct).abs() < 1e-12);
            assert!((grads[i] - 1.0).abs() < 1e-10);
        }
        assert!(grad_at_particles(&c, &q).unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gradient_matches_finite_difference_of_interpolation() {
        let g = GridSpec::new_2d([0.0, 0.0], [1.0, 1.0], [16, 16]).unwrap();
        let f = GridField::from_fn(g, 2, |x| {
            let w = 2.0 * std::f64::consts::PI;
            vec![(w * x[0]).sin() * (w * x[1]).cos(), (w * x[0]).cos() + x[1].sin()]
        });
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = random_points(&g, 20, &mut rng);
        let grads = grad_at_particles(&f, &q).unwrap();
        for b in 0..20 {
            for i in 0..2 {
                let step = 1e-6 * g.spacing(i);
                let mut qp = q[2 * b..2 * b + 2].to_vec();
                let mut qm = qp.clone();
                qp[i] += step;
                qm[i] -= step;
                let fp = interp_to_particles(&f, &qp).unwrap();
                let fm = interp_to_particles(&f, &qm).unwrap();
                for c in 0..2 {
                    let fd = (fp[c] - fm[c]) / (2.0 * step);
                    let an = grads[b * 4 + i * 2 + c];
                    assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "{fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn scatter_conserves_total_and_single_particle_column() {
        let g = spec();
        let m = assemble_mass(&g, FEBasisKind::PiecewiseLinear);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let q = random_points(&g, 70, &mut rng);
        let w: Vec<f64> = (0..70).map(|_| rng.gen_range(0.0..2.0)).collect();
        let d = scatter_density(&g, &w, 1, &q, &m, TOL).unwrap();
        let total: f64 = m.mul(d.values(), 1).iter().sum();
        assert!((total - w.iter().sum::<f64>()).abs() < 1e-10);

        let zero = scatter_density(&g, &vec![0.0; 70], 1, &q, &m, TOL).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));

        let x = [3.37];
        let one = scatter_density(&g, &[1.0], 1, &x, &m, TOL).unwrap();
        let md = m.mul(one.values(), 1);
        for (k, v) in md.iter().enumerate() {
            let col = crate::basis::eval_basis(&g, k, &x).unwrap();
            assert!((v - col).abs() < 1e-11);
        }
    }

    #[test]
    fn divergence_integrates_to_zero() {
        let g = GridSpec::new_2d([0.0, 0.0], [2.0, 2.0], [12, 12]).unwrap();
        let m = assemble_mass(&g, FEBasisKind::PiecewiseLinear);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let q = random_points(&g, 100, &mut rng);
        let flux: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let div = divergence_on_grid(&g, &flux, &q, &m, TOL).unwrap();
        let total: f64 = m.mul(div.values(), 1).iter().sum();
        assert!(total.abs() < 1e-10);
        let zero = divergence_on_grid(&g, &vec![0.0; 200], &q, &m, TOL).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pairing_and_adjoint_identities() {
        let g = GridSpec::new_2d([0.0, 0.0], [1.0, 1.0], [10, 10]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let q = random_points(&g, 40, &mut rng);
        let p: Vec<f64> = (0..80).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u_vals: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u = GridField::from_values(g, 2, u_vals).unwrap();
        let jl = left_momentum_map(&g, &p, &q).unwrap();
        let lhs = jl.pair(&u).unwrap();
        let rhs = dot(&p, &interp_to_particles(&u, &q).unwrap());
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));

        // single particle: the covector is P ψ_k(Q)
        let jl1 = left_momentum_map(&g, &[0.3, -0.7], &[0.41, 0.77]).unwrap();
        for k in 0..g.num_nodes() {
            let w = crate::basis::eval_basis(&g, k, &[0.41, 0.77]).unwrap();
            let got = jl1.field().node(k);
            assert!((got[0] - 0.3 * w).abs() < 1e-15 && (got[1] + 0.7 * w).abs() < 1e-15);
        }
        assert!(left_momentum_map(&g, &vec![0.0; 80], &q).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn velocity_depends_only_on_momentum_map() {
        let g = spec();
        let h = assemble_helmholtz(&g, FEBasisKind::PiecewiseLinear, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        // more particles than nodes, so the transfer matrix has a kernel
        let q = random_points(&g, 64, &mut rng);
        let p: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u = velocity_from_particles(&g, &p, &q, &h, TOL).unwrap();

        // project a random vector onto the kernel of P ↦ J^L
        // via dP = r - Ψᵀ (ΨΨᵀ)⁻¹ Ψ r, solved densely
        let st = Stencils::new(&g, &q);
        let n = 32;
        let mut gram = vec![0.0; n * n];
        for b in 0..64 {
            let s = st.get(b);
            for (k, wk, _) in s.iter() {
                for (l, wl, _) in s.iter() {
                    gram[k * n + l] += wk * wl;
                }
            }
        }
        let r: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = dense_solve(&gram, &st.scatter(&r, 1), n);
        let back = st.interp(&y, 1);
        let dp: Vec<f64> = r.iter().zip(&back).map(|(a, b)| a - b).collect();
        assert!(st.scatter(&dp, 1).iter().all(|v| v.abs() < 1e-10));
        let p2: Vec<f64> = p.iter().zip(&dp).map(|(a, b)| a + b).collect();
        let u2 = velocity_from_particles(&g, &p2, &q, &h, TOL).unwrap();
        let diff = u.values().iter().zip(u2.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-9 * u.max_abs(), "{diff}");

        assert!(velocity_from_particles(&g, &vec![0.0; 64], &q, &h, TOL).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn helmholtz_green_function_decay_rate() {
        // dense-solve oracle on a small grid; decay of u should be e^{-|x|/α}
        let alpha = 1.0;
        let g = GridSpec::new_1d(0.0, 40.0, 400).unwrap();
        let h = assemble_helmholtz(&g, FEBasisKind::PiecewiseLinear, alpha).unwrap();
        let x0 = 20.0;
        let u = velocity_from_particles(&g, &[1.0], &[x0], &h, TOL).unwrap();
        let mut dense = vec![0.0; 400 * 400];
        for r in 0..400 {
            for (c, v) in h.row(r) {
                dense[r * 400 + c] = v;
            }
        }
        let b = left_momentum_map(&g, &[1.0], &[x0]).unwrap();
        let oracle = dense_solve(&dense, b.values(), 400);
        for (a, b) in u.values().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9 * oracle.iter().cloned().fold(0.0, f64::max));
        }
        // fit log u over 2α..8α to the right of the source
        let (mut sx, mut sy, mut sxx, mut sxy, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for k in 0..400 {
            let x = g.node_position(k)[0] - x0;
            if (2.0..8.0).contains(&x) {
                let y = u.values()[k].ln();
                sx += x;
                sy += y;
                sxx += x * x;
                sxy += x * y;
                n += 1.0;
            }
        }
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!((-slope - 1.0 / alpha).abs() < 0.1 / alpha, "decay rate {}", -slope);
    }

    #[test]
    fn uniform_particles_give_uniform_density() {
        let g = spec();
        let m = assemble_mass(&g, FEBasisKind::PiecewiseLinear);
        let h = g.spacing(0);
        let q: Vec<f64> = (0..64).map(|i| (i as f64 + 0.5) * h / 2.0).collect();
        let d = grid_density(&g, &vec![1.0; 64], &q, &m, TOL).unwrap();
        let mean = 2.0 / h;
        assert!(d.values().iter().all(|v| (v - mean).abs() <= 0.05 * mean));
        let total: f64 = m.mul(d.values(), 1).iter().sum();
        assert!((total - 64.0).abs() < 1e-10);
        let zero = grid_density(&g, &vec![0.0; 64], &q, &m, TOL).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
    }

    /// Gaussian elimination with partial pivoting (test oracle).
    pub(crate) fn dense_solve(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs())).unwrap();
            if piv != col {
                for c in 0..n {
                    a.swap(col * n + c, piv * n + c);
                }
                b.swap(col, piv);
            }
            for r in col + 1..n {
                let f = a[r * n + col] / a[col * n + col];
                if f != 0.0 {
                    for c in col..n {
                        a[r * n + c] -= f * a[col * n + c];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|c| a[r * n + c] * x[c]).sum();
            x[r] = (b[r] - s) / a[r * n + r];
        }
        x
    }
}
