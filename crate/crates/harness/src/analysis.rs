//! Field measurements used by the 2D experiments.

use vpm_core::{GridField, VpmError};

use crate::error::{HarnessError, Result};

/// Largest Frobenius norm of the gradient of the piecewise-(bi)linear
/// interpolant of `u`, taken over all cell corners.
pub fn max_gradient_norm(u: &GridField) -> f64 {
    let spec = u.spec();
    let c = u.components();
    let d = spec.dim();
    let n = spec.nodes_per_axis();
    let h = [spec.spacing(0), if d == 2 { spec.spacing(1) } else { 1.0 }];
    let at = |ix: usize, iy: usize| u.node(spec.flat_index(ix % n[0], iy % n[1]));
    let mut best = 0.0f64;
    for iy in 0..n[1] {
        for ix in 0..n[0] {
            if d == 1 {
                let g: f64 = (0..c).map(|k| ((at(ix + 1, 0)[k] - at(ix, 0)[k]) / h[0]).powi(2)).sum();
                best = best.max(g);
                continue;
            }
            // corners of cell (ix, iy): each sees one x-edge and one y-edge
            for (cx, cy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let mut g = 0.0;
                for k in 0..c {
                    let dx = (at(ix + 1, iy + cy)[k] - at(ix, iy + cy)[k]) / h[0];
                    let dy = (at(ix + cx, iy + 1)[k] - at(ix + cx, iy)[k]) / h[1];
                    g += dx * dx + dy * dy;
                }
                best = best.max(g);
            }
        }
    }
    best.sqrt()
}

/// Profile `U(x) = max_y |u(x, y)|` along the first axis.
pub fn x_profile(u: &GridField) -> Vec<f64> {
    let spec = u.spec();
    let n = spec.nodes_per_axis();
    (0..n[0])
        .map(|ix| (0..n[1]).map(|iy| u.node(spec.flat_index(ix, iy)).iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max))
        .collect()
}

/// Peak heights `(rear, front)` of two filaments moving in `+x`, read off the
/// two tallest local maxima of [`x_profile`].
pub fn filament_peaks(u: &GridField) -> Result<(f64, f64)> {
    let spec = u.spec();
    if spec.dim() != 2 {
        return Err(VpmError::InvalidArgument("filament peaks need a 2D field".into()).into());
    }
    let prof = x_profile(u);
    let n = prof.len();
    let top = prof.iter().cloned().fold(0.0, f64::max);
    let mut peaks: Vec<(usize, f64)> = (0..n)
        .filter(|&i| prof[i] > 0.05 * top && prof[i] >= prof[(i + n - 1) % n] && prof[i] > prof[(i + 1) % n])
        .map(|i| (i, prof[i]))
        .collect();
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
    let [(ia, va), (ib, vb)] = match peaks.as_slice() {
        [a, b, ..] => [*a, *b],
        _ => return Err(HarnessError::Check("fewer than two filament peaks".into())),
    };
    let xa = spec.node_position(spec.flat_index(ia, 0))[0];
    let xb = spec.node_position(spec.flat_index(ib, 0))[0];
    Ok(if spec.periodic_delta(0, xa, xb) > 0.0 { (vb, va) } else { (va, vb) })
}
