//! Finite-element mass and Helmholtz matrices on the periodic grid, and the
//! Jacobi-preconditioned conjugate gradient solver used for every SPD system.
//!
//! Elements are piecewise-linear hats in 1D and bilinear tensor-product
//! elements in 2D. Element integrals are exact, so the assembled entries are
//! closed-form: in 1D `M = h/6 [.. 1 4 1 ..]` and `S = 1/h [.. -1 2 -1 ..]`.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Result, VpmError};
use crate::grid::{dot, GridSpec};

/// Finite-element basis used for the Lagrangian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FEBasisKind {
    #[default]
    PiecewiseLinear,
}

/// Symmetric sparse matrix in CSR form, acting identically on each vector
/// component of a node-major field.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricSparseOperator {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    diag: Vec<f64>,
}

impl SymmetricSparseOperator {
    /// Build from upper-triangle entries (`row <= col`), mirroring below.
    fn from_upper(n: usize, upper: &BTreeMap<(usize, usize), f64>) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (&(r, c), &v) in upper {
            rows[r].push((c, v));
            if r != c {
                rows[c].push((r, v));
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut diag = vec![0.0; n];
        row_ptr.push(0);
        for (r, row) in rows.iter_mut().enumerate() {
            row.sort_by_key(|e| e.0);
            for &(c, v) in row.iter() {
                if c == r {
                    diag[r] = v;
                }
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols, vals, diag }
    }

    /// Diagonal matrix with the given entries.
    pub fn from_diagonal(diag: Vec<f64>) -> Self {
        let n = diag.len();
        let upper = diag.iter().enumerate().map(|(i, &v)| ((i, i), v)).collect();
        Self::from_upper(n, &upper)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Entry `(r, c)`, zero when not stored.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[range.clone()].binary_search(&c).map(|i| self.vals[range.start + i]).unwrap_or(0.0)
    }

    /// Stored entries of row `r` as `(col, value)`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |i| (self.cols[i], self.vals[i]))
    }

    /// `y = A x` for node-major data with `comps` components per node.
    pub fn apply(&self, x: &[f64], y: &mut [f64], comps: usize) {
        debug_assert_eq!(x.len(), self.n * comps);
        debug_assert_eq!(y.len(), self.n * comps);
        match comps {
            1 => {
                for (r, yr) in y.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                        acc += self.vals[i] * x[self.cols[i]];
                    }
                    *yr = acc;
                }
            }
            2 => {
                for r in 0..self.n {
                    let (mut a0, mut a1) = (0.0, 0.0);
                    for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                        let c = self.cols[i];
                        a0 += self.vals[i] * x[2 * c];
                        a1 += self.vals[i] * x[2 * c + 1];
                    }
                    y[2 * r] = a0;
                    y[2 * r + 1] = a1;
                }
            }
            _ => {
                for r in 0..self.n {
                    let yr = &mut y[r * comps..(r + 1) * comps];
                    yr.iter_mut().for_each(|v| *v = 0.0);
                    for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                        let c = self.cols[i];
                        for (j, yv) in yr.iter_mut().enumerate() {
                            *yv += self.vals[i] * x[c * comps + j];
                        }
                    }
                }
            }
        }
    }

    pub fn mul(&self, x: &[f64], comps: usize) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.apply(x, &mut y, comps);
        y
    }

    /// `Σ_kl x_k·A_kl y_l`.
    pub fn bilinear(&self, x: &[f64], y: &[f64], comps: usize) -> f64 {
        dot(x, &self.mul(y, comps))
    }

    /// Exact symmetry check (bitwise equality of mirrored entries).
    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|r| self.row(r).all(|(c, v)| self.get(c, r).to_bits() == v.to_bits()))
    }

    /// Coordinate-format dump, one `row col value` line per stored entry.
    pub fn write_coo<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                writeln!(w, "{r} {c} {v:.17e}")?;
            }
        }
        Ok(())
    }
}

/// Exact 1D element matrices `(mass, stiffness)` of a linear element of width `h`.
fn element_1d(h: f64) -> ([[f64; 2]; 2], [[f64; 2]; 2]) {
    ([[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]], [[1.0 / h, -1.0 / h], [-1.0 / h, 1.0 / h]])
}

/// Assemble `mass_weight * M + stiff_weight * S` element by element into the
/// upper triangle.
fn assemble(spec: &GridSpec, mass_weight: f64, stiff_weight: f64) -> SymmetricSparseOperator {
    let mut upper: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut add = |r: usize, c: usize, v: f64| {
        if r <= c {
            *upper.entry((r, c)).or_insert(0.0) += v;
        }
    };
    let [nx, ny] = spec.nodes_per_axis();
    let (mx, kx) = element_1d(spec.spacing(0));
    if spec.dim() == 1 {
        for e in 0..nx {
            let nodes = [e, (e + 1) % nx];
            for a in 0..2 {
                for b in 0..2 {
                    add(nodes[a], nodes[b], mass_weight * mx[a][b] + stiff_weight * kx[a][b]);
                }
            }
        }
    } else {
        let (my, ky) = element_1d(spec.spacing(1));
        for ey in 0..ny {
            for ex in 0..nx {
                let ix = [ex, (ex + 1) % nx];
                let iy = [ey, (ey + 1) % ny];
                for ja in 0..2 {
                    for ia in 0..2 {
                        let ra = spec.flat_index(ix[ia], iy[ja]);
                        for jb in 0..2 {
                            for ib in 0..2 {
                                let cb = spec.flat_index(ix[ib], iy[jb]);
                                let m = mx[ia][ib] * my[ja][jb];
                                let s = kx[ia][ib] * my[ja][jb] + mx[ia][ib] * ky[ja][jb];
                                add(ra, cb, mass_weight * m + stiff_weight * s);
                            }
                        }
                    }
                }
            }
        }
    }
    SymmetricSparseOperator::from_upper(spec.num_nodes(), &upper)
}

/// `M_kl = ∫ N_k N_l`.
pub fn assemble_mass(spec: &GridSpec, fe: FEBasisKind) -> SymmetricSparseOperator {
    match fe {
        FEBasisKind::PiecewiseLinear => assemble(spec, 1.0, 0.0),
    }
}

/// `S_kl = ∫ ∇N_k · ∇N_l`.
pub fn assemble_stiffness(spec: &GridSpec, fe: FEBasisKind) -> SymmetricSparseOperator {
    match fe {
        FEBasisKind::PiecewiseLinear => assemble(spec, 0.0, 1.0),
    }
}

/// `H = M + α² S`.
pub fn assemble_helmholtz(spec: &GridSpec, fe: FEBasisKind, alpha: f64) -> Result<SymmetricSparseOperator> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(VpmError::InvalidArgument(format!("alpha must be a non-negative length, got {alpha}")));
    }
    Ok(match fe {
        FEBasisKind::PiecewiseLinear => assemble(spec, 1.0, alpha * alpha),
    })
}

/// A symmetric positive-definite operator on node-major multi-component data.
pub trait LinearOperator {
    /// Number of nodes.
    fn size(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64], comps: usize);
    /// Diagonal entries, used as the Jacobi preconditioner.
    fn diagonal(&self) -> Vec<f64>;
}

impl LinearOperator for SymmetricSparseOperator {
    fn size(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64], comps: usize) {
        SymmetricSparseOperator::apply(self, x, y, comps)
    }

    fn diagonal(&self) -> Vec<f64> {
        self.diag.clone()
    }
}

/// Default relative residual target.
pub const DEFAULT_SOLVER_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Jacobi-preconditioned conjugate gradient.
///
/// Stops once `‖r‖ ≤ tol ‖b‖` on the recursively updated residual; returns
/// zero for `b = 0`. The iteration cap is `10 n` with `n` the node count.
pub fn pcg<A: LinearOperator + ?Sized>(a: &A, b: &[f64], comps: usize, x0: Option<&[f64]>, tol: f64) -> Result<(Vec<f64>, SolveStats)> {
    let len = a.size() * comps;
    if b.len() != len {
        return Err(VpmError::ShapeMismatch(format!("rhs has {} entries, operator expects {len}", b.len())));
    }
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok((vec![0.0; len], SolveStats::default()));
    }
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    let precond = |r: &[f64], z: &mut [f64]| {
        for (i, (zi, ri)) in z.iter_mut().zip(r).enumerate() {
            *zi = ri * inv_diag[i / comps];
        }
    };

    let mut x = match x0 {
        Some(x0) if x0.len() == len => x0.to_vec(),
        _ => vec![0.0; len],
    };
    let mut r = vec![0.0; len];
    let mut ap = vec![0.0; len];
    a.apply(&x, &mut ap, comps);
    for i in 0..len {
        r[i] = b[i] - ap[i];
    }
    let target = tol * bnorm;
    let mut rnorm = dot(&r, &r).sqrt();
    if rnorm <= target {
        return Ok((x, SolveStats { iterations: 0, residual: rnorm / bnorm }));
    }
    let mut z = vec![0.0; len];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let cap = 10 * a.size();
    for it in 1..=cap {
        a.apply(&p, &mut ap, comps);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(VpmError::SolverDiverged { iterations: it, residual: rnorm / bnorm });
        }
        let step = rz / pap;
        for i in 0..len {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        rnorm = dot(&r, &r).sqrt();
        if rnorm <= target {
            return Ok((x, SolveStats { iterations: it, residual: rnorm / bnorm }));
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..len {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(VpmError::SolverDiverged { iterations: cap, residual: rnorm / bnorm })
}

/// Solve `A x = b` for an SPD operator, with `tol ∈ (0, 1e-6]`.
pub fn solve_spd(a: &SymmetricSparseOperator, b: &[f64], comps: usize, tol: f64) -> Result<Vec<f64>> {
    if !(tol > 0.0 && tol <= 1e-6) {
        return Err(VpmError::InvalidArgument(format!("solver tolerance must lie in (0, 1e-6], got {tol}")));
    }
    pcg(a, b, comps, None, tol).map(|(x, _)| x)
}
