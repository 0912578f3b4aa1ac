//! Partition-of-unity interpolation basis on a periodic uniform grid.
//!
//! The basis is the cardinal cubic B-spline centred on each node, scaled to
//! the grid spacing; in two dimensions it is the tensor product of the two
//! axis splines. Each function is supported on four cells per axis and the
//! family sums to one everywhere.

use crate::error::Result;
use crate::grid::GridSpec;

/// Interpolation basis family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BasisKind {
    #[default]
    CubicBSpline,
}

impl BasisKind {
    /// Support radius in cells.
    pub fn support_radius(&self) -> usize {
        match self {
            BasisKind::CubicBSpline => 2,
        }
    }
}

/// Cardinal cubic B-spline on integer knots, centred at zero.
#[inline]
pub fn cubic_bspline(r: f64) -> f64 {
    let a = r.abs();
    if a < 1.0 {
        2.0 / 3.0 - a * a + 0.5 * a * a * a
    } else if a < 2.0 {
        let b = 2.0 - a;
        b * b * b / 6.0
    } else {
        0.0
    }
}

/// Derivative of [`cubic_bspline`].
#[inline]
pub fn cubic_bspline_deriv(r: f64) -> f64 {
    let a = r.abs();
    let s = r.signum();
    if a < 1.0 {
        s * (-2.0 * a + 1.5 * a * a)
    } else if a < 2.0 {
        let b = 2.0 - a;
        -s * 0.5 * b * b
    } else {
        0.0
    }
}

/// `ψ_k(x)`.
pub fn eval_basis(spec: &GridSpec, k: usize, x: &[f64]) -> Result<f64> {
    spec.check_node(k)?;
    let xk = spec.node_position(k);
    let mut v = 1.0;
    for a in 0..spec.dim() {
        let h = spec.spacing(a);
        v *= cubic_bspline(spec.periodic_delta(a, x[a], xk[a]) / h);
    }
    Ok(v)
}

/// `∇ψ_k(x)`; trailing entries are zero in 1D.
pub fn eval_basis_grad(spec: &GridSpec, k: usize, x: &[f64]) -> Result<[f64; 2]> {
    spec.check_node(k)?;
    let xk = spec.node_position(k);
    let d = spec.dim();
    let mut w = [1.0; 2];
    let mut dw = [0.0; 2];
    for a in 0..d {
        let h = spec.spacing(a);
        let r = spec.periodic_delta(a, x[a], xk[a]) / h;
        w[a] = cubic_bspline(r);
        dw[a] = cubic_bspline_deriv(r) / h;
    }
    let mut g = [0.0; 2];
    if d == 1 {
        g[0] = dw[0];
    } else {
        g[0] = dw[0] * w[1];
        g[1] = w[0] * dw[1];
    }
    Ok(g)
}

/// Node indices whose basis function does not vanish at `x`.
pub fn support_nodes(spec: &GridSpec, x: &[f64]) -> Vec<usize> {
    let s = Stencil::new(spec, x);
    (0..s.len).filter(|&i| s.weights[i] != 0.0).map(|i| s.nodes[i]).collect()
}

/// Basis values and gradients at one point, over its (at most 16) support nodes.
///
/// Entries with zero weight may appear when the point sits exactly on a node.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub len: usize,
    pub nodes: [usize; 16],
    pub weights: [f64; 16],
    pub grads: [[f64; 2]; 16],
}

/// Four axis weights of the uniform cubic B-spline for local coordinate
/// `t ∈ [0, 1)` measured from node `base`; entries correspond to nodes
/// `base - 1 ..= base + 2`. Derivatives are per unit of `t`.
#[inline]
fn axis_weights(t: f64) -> ([f64; 4], [f64; 4]) {
    let t2 = t * t;
    let t3 = t2 * t;
    let omt = 1.0 - t;
    let w = [omt * omt * omt / 6.0, (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0, (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0, t3 / 6.0];
    let dw = [-0.5 * omt * omt, 1.5 * t2 - 2.0 * t, -1.5 * t2 + t + 0.5, 0.5 * t2];
    (w, dw)
}

#[inline]
fn axis_stencil(spec: &GridSpec, axis: usize, x: f64) -> ([usize; 4], [f64; 4], [f64; 4]) {
    let n = spec.nodes_per_axis()[axis];
    let h = spec.spacing(axis);
    let s = (spec.wrap_coord(axis, x) - spec.lower()[axis]) / h;
    let mut base = s.floor();
    let mut t = s - base;
    if base as usize >= n {
        base -= n as f64;
    }
    if t >= 1.0 {
        // s rounded onto the next node
        base += 1.0;
        t = 0.0;
    }
    let base = base as usize % n;
    let (w, mut dw) = axis_weights(t);
    dw.iter_mut().for_each(|d| *d /= h);
    let idx = [(base + n - 1) % n, base, (base + 1) % n, (base + 2) % n];
    (idx, w, dw)
}

impl Stencil {
    pub fn new(spec: &GridSpec, x: &[f64]) -> Self {
        let mut s = Stencil { len: 0, nodes: [0; 16], weights: [0.0; 16], grads: [[0.0; 2]; 16] };
        let (ix, wx, dwx) = axis_stencil(spec, 0, x[0]);
        if spec.dim() == 1 {
            s.len = 4;
            for i in 0..4 {
                s.nodes[i] = ix[i];
                s.weights[i] = wx[i];
                s.grads[i] = [dwx[i], 0.0];
            }
        } else {
            let (iy, wy, dwy) = axis_stencil(spec, 1, x[1]);
            s.len = 16;
            let mut c = 0;
            for j in 0..4 {
                for i in 0..4 {
                    s.nodes[c] = spec.flat_index(ix[i], iy[j]);
                    s.weights[c] = wx[i] * wy[j];
                    s.grads[c] = [dwx[i] * wy[j], wx[i] * dwy[j]];
                    c += 1;
                }
            }
        }
        s
    }

    #[inline]
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64, [f64; 2])> + '_ {
        (0..self.len).map(move |i| (self.nodes[i], self.weights[i], self.grads[i]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Cox–de Boor recursion on an arbitrary knot vector.
    fn cox_de_boor(i: usize, p: usize, knots: &[f64], t: f64) -> f64 {
        if p == 0 {
            return if knots[i] <= t && t < knots[i + 1] { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 != 0.0 {
            v += (t - knots[i]) / d1 * cox_de_boor(i, p - 1, knots, t);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 != 0.0 {
            v += (knots[i + p + 1] - t) / d2 * cox_de_boor(i + 1, p - 1, knots, t);
        }
        v
    }

    fn spec_1d() -> GridSpec {
        GridSpec::new_1d(0.0, 16.0, 16).unwrap()
    }

    fn spec_2d() -> GridSpec {
        GridSpec::new_2d([-1.0, 0.0], [1.0, 3.0], [10, 12]).unwrap()
    }

    #[test]
    fn matches_cox_de_boor_oracle() {
        let knots = [-2.0, -1.0, 0.0, 1.0, 2.0];
        for i in 0..=400 {
            let r = -2.0 + 4.0 * i as f64 / 400.0;
            let oracle = cox_de_boor(0, 3, &knots, r);
            assert!((cubic_bspline(r) - oracle).abs() < 1e-14, "r = {r}");
        }
        // centre value with h = 1
        let g = spec_1d();
        let v = eval_basis(&g, 7, &[7.0]).unwrap();
        assert!((v - cox_de_boor(0, 3, &knots, 0.0)).abs() < 1e-15);
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn vanishes_outside_two_cells_including_periodic_images() {
        let g = spec_1d();
        assert_eq!(eval_basis(&g, 7, &[9.0]).unwrap(), 0.0);
        assert_eq!(eval_basis(&g, 7, &[5.0]).unwrap(), 0.0);
        assert_eq!(eval_basis(&g, 7, &[12.5]).unwrap(), 0.0);
        // node 0 sees x = 15.5 through the seam
        assert!(eval_basis(&g, 0, &[15.5]).unwrap() > 0.0);
        assert!(eval_basis(&g, 16, &[1.0]).is_err());
        assert!(eval_basis_grad(&g, 99, &[1.0]).is_err());
    }

    #[test]
    fn partition_of_unity_and_gradient_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for spec in [spec_1d(), spec_2d()] {
            for _ in 0..1000 {
                let x = [rng.gen_range(spec.lower()[0]..spec.upper()[0]), rng.gen_range(spec.lower()[1]..spec.upper()[1])];
                let mut sum = 0.0;
                let mut gsum = [0.0; 2];
                for k in 0..spec.num_nodes() {
                    let v = eval_basis(&spec, k, &x).unwrap();
                    assert!(v >= 0.0);
                    sum += v;
                    let g = eval_basis_grad(&spec, k, &x).unwrap();
                    gsum[0] += g[0];
                    gsum[1] += g[1];
                }
                assert!((sum - 1.0).abs() <= 1e-12);
                assert!(gsum[0].hypot(gsum[1]) <= 1e-12);
            }
        }
    }

    #[test]
    fn gradient_vanishes_at_centre_and_matches_finite_differences() {
        let g = spec_2d();
        let k = g.flat_index(4, 5);
        let xk = g.node_position(k);
        let grad = eval_basis_grad(&g, k, &xk).unwrap();
        assert_eq!(grad, [0.0, 0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let x = [xk[0] + rng.gen_range(-1.9..1.9) * g.spacing(0), xk[1] + rng.gen_range(-1.9..1.9) * g.spacing(1)];
            let grad = eval_basis_grad(&g, k, &x).unwrap();
            for a in 0..2 {
                let step = 1e-6 * g.spacing(a);
                let mut xp = x;
                let mut xm = x;
                xp[a] += step;
                xm[a] -= step;
                let fd = (eval_basis(&g, k, &xp).unwrap() - eval_basis(&g, k, &xm).unwrap()) / (2.0 * step);
                let scale = grad[a].abs().max(1e-3 / g.spacing(a));
                assert!((fd - grad[a]).abs() / scale <= 1e-6, "fd {fd} vs {}", grad[a]);
            }
        }
    }

    #[test]
    fn linear_reproduction_away_from_seam() {
        let g = spec_1d();
        for i in 0..100 {
            let x = 3.0 + 10.0 * i as f64 / 100.0;
            let s: f64 = (0..16).map(|k| g.node_position(k)[0] * eval_basis(&g, k, &[x]).unwrap()).sum();
            assert!((s - x).abs() < 1e-12);
        }
    }

    #[test]
    fn support_counts() {
        let g = spec_1d();
        assert_eq!(support_nodes(&g, &[3.3]).len(), 4);
        assert_eq!(support_nodes(&g, &[3.0]).len(), 3);
        assert_eq!(support_nodes(&g, &[15.7]), vec![14, 15, 0, 1]);
        let g2 = spec_2d();
        let nodes = support_nodes(&g2, &[0.13, 1.71]);
        assert_eq!(nodes.len(), 16);
        let sum: f64 = nodes.iter().map(|&k| eval_basis(&g2, k, &[0.13, 1.71]).unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-14);
    }

    #[test]
    fn stencil_agrees_with_pointwise_evaluation() {
        let g = spec_2d();
        let x = [0.917, 2.999];
        let s = Stencil::new(&g, &x);
        for (k, w, gr) in s.iter() {
            assert!((w - eval_basis(&g, k, &x).unwrap()).abs() < 1e-15);
            let ge = eval_basis_grad(&g, k, &x).unwrap();
            assert!((gr[0] - ge[0]).abs() < 1e-12 && (gr[1] - ge[1]).abs() < 1e-12);
        }
    }
}
