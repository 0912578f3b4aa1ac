//! Periodic uniform grid geometry and nodal fields.

use crate::error::{Result, VpmError};

/// Smallest admissible node count per axis. The cubic stencil spans four
/// nodes, so anything shorter would alias a node with its own periodic image.
pub const MIN_NODES_PER_AXIS: usize = 8;

/// Geometry of a periodic uniform grid in one or two dimensions.
///
/// Axis `i` covers the half-open interval `[lower[i], upper[i])` with
/// `nodes[i]` equally spaced nodes at `lower[i] + k * spacing(i)`.
/// For `dim == 1` only the first entry of each array is meaningful.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    dim: usize,
    lower: [f64; 2],
    upper: [f64; 2],
    nodes: [usize; 2],
}

impl GridSpec {
    pub fn new_1d(lower: f64, upper: f64, nodes: usize) -> Result<Self> {
        Self::new(1, [lower, 0.0], [upper, 1.0], [nodes, 1])
    }

    pub fn new_2d(lower: [f64; 2], upper: [f64; 2], nodes: [usize; 2]) -> Result<Self> {
        Self::new(2, lower, upper, nodes)
    }

    pub fn new(dim: usize, lower: [f64; 2], upper: [f64; 2], nodes: [usize; 2]) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(VpmError::InvalidArgument(format!("dimension must be 1 or 2, got {dim}")));
        }
        for axis in 0..dim {
            if !(lower[axis].is_finite() && upper[axis].is_finite()) || upper[axis] <= lower[axis] {
                return Err(VpmError::InvalidArgument(format!(
                    "axis {axis}: extent [{}, {}) is empty or not finite",
                    lower[axis], upper[axis]
                )));
            }
            if nodes[axis] < MIN_NODES_PER_AXIS {
                return Err(VpmError::InvalidArgument(format!(
                    "axis {axis}: need at least {MIN_NODES_PER_AXIS} nodes, got {}",
                    nodes[axis]
                )));
            }
        }
        let mut nodes = nodes;
        let mut lower = lower;
        let mut upper = upper;
        if dim == 1 {
            nodes[1] = 1;
            lower[1] = 0.0;
            upper[1] = 1.0;
        }
        Ok(Self { dim, lower, upper, nodes })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn nodes_per_axis(&self) -> [usize; 2] {
        self.nodes
    }

    #[inline]
    pub fn lower(&self) -> [f64; 2] {
        self.lower
    }

    #[inline]
    pub fn upper(&self) -> [f64; 2] {
        self.upper
    }

    /// Total node count `n_g`.
    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.nodes[0] * self.nodes[1]
    }

    #[inline]
    pub fn length(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    #[inline]
    pub fn spacing(&self, axis: usize) -> f64 {
        self.length(axis) / self.nodes[axis] as f64
    }

    /// Volume associated with one node (`h` in 1D, `h_x h_y` in 2D).
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).product()
    }

    /// Flat node index from per-axis indices (x fastest).
    #[inline]
    pub fn flat_index(&self, ix: usize, iy: usize) -> usize {
        ix + self.nodes[0] * iy
    }

    /// Per-axis indices from a flat node index.
    #[inline]
    pub fn axis_indices(&self, k: usize) -> [usize; 2] {
        [k % self.nodes[0], k / self.nodes[0]]
    }

    pub fn check_node(&self, k: usize) -> Result<()> {
        if k >= self.num_nodes() {
            return Err(VpmError::IndexOutOfRange { index: k, len: self.num_nodes() });
        }
        Ok(())
    }

    /// Coordinate of node `k` (unused trailing entries are zero in 1D).
    pub fn node_position(&self, k: usize) -> [f64; 2] {
        let idx = self.axis_indices(k);
        let mut x = [0.0; 2];
        for a in 0..self.dim {
            x[a] = self.lower[a] + idx[a] as f64 * self.spacing(a);
        }
        x
    }

    /// Map a coordinate into `[lower, upper)` along `axis`.
    #[inline]
    pub fn wrap_coord(&self, axis: usize, x: f64) -> f64 {
        let len = self.length(axis);
        let mut r = (x - self.lower[axis]).rem_euclid(len);
        // rem_euclid can round up to `len` for tiny negative inputs
        if r >= len {
            r -= len;
        }
        self.lower[axis] + r
    }

    /// Signed minimal-image displacement `x - y` along `axis`.
    #[inline]
    pub fn periodic_delta(&self, axis: usize, x: f64, y: f64) -> f64 {
        let len = self.length(axis);
        let d = (x - y).rem_euclid(len);
        if d > 0.5 * len {
            d - len
        } else {
            d
        }
    }
}

/// Nodal data on a grid: `components` reals per node, stored node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    spec: GridSpec,
    components: usize,
    values: Vec<f64>,
}

impl GridField {
    pub fn zeros(spec: GridSpec, components: usize) -> Self {
        Self { spec, components, values: vec![0.0; spec.num_nodes() * components] }
    }

    pub fn from_values(spec: GridSpec, components: usize, values: Vec<f64>) -> Result<Self> {
        if components == 0 || values.len() != spec.num_nodes() * components {
            return Err(VpmError::ShapeMismatch(format!("expected {} x {components} values, got {}", spec.num_nodes(), values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(VpmError::InvalidArgument(format!("non-finite value at flat index {i}")));
        }
        Ok(Self { spec, components, values })
    }

    /// Sample `f(x)` at every node.
    pub fn from_fn(spec: GridSpec, components: usize, mut f: impl FnMut([f64; 2]) -> Vec<f64>) -> Self {
        let mut values = Vec::with_capacity(spec.num_nodes() * components);
        for k in 0..spec.num_nodes() {
            let v = f(spec.node_position(k));
            assert_eq!(v.len(), components, "sample closure returned the wrong component count");
            values.extend_from_slice(&v);
        }
        Self { spec, components, values }
    }

    #[inline]
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    #[inline]
    pub fn components(&self) -> usize {
        self.components
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn node(&self, k: usize) -> &[f64] {
        &self.values[k * self.components..(k + 1) * self.components]
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Largest per-node Euclidean norm.
    pub fn max_norm(&self) -> f64 {
        self.values.chunks_exact(self.components).map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max)
    }

    pub(crate) fn check_compatible(&self, other: &GridField) -> Result<()> {
        if self.spec != other.spec || self.components != other.components {
            return Err(VpmError::ShapeMismatch("grid fields live on different grids or component counts".into()));
        }
        Ok(())
    }
}

/// Grid-indexed covector (e.g. a left momentum map or a raw particle scatter).
///
/// Pairs with a [`GridField`] through a plain dot-sum, unlike two vectors,
/// which pair through the mass matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCovector(pub GridField);

impl GridCovector {
    pub fn field(&self) -> &GridField {
        &self.0
    }

    pub fn values(&self) -> &[f64] {
        self.0.values()
    }

    /// `Σ_k c_k · v_k`.
    pub fn pair(&self, v: &GridField) -> Result<f64> {
        self.0.check_compatible(v)?;
        Ok(dot(self.0.values(), v.values()))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_short_axes_and_empty_extents() {
        assert!(GridSpec::new_1d(0.0, 1.0, 7).is_err());
        assert!(GridSpec::new_1d(1.0, 1.0, 16).is_err());
        assert!(GridSpec::new(3, [0.0; 2], [1.0; 2], [8, 8]).is_err());
    }

    #[test]
    fn node_positions_and_spacing() {
        let g = GridSpec::new_2d([0.0, -1.0], [2.0, 1.0], [8, 16]).unwrap();
        assert_eq!(g.num_nodes(), 128);
        assert_eq!(g.spacing(0), 0.25);
        assert_eq!(g.spacing(1), 0.125);
        let k = g.flat_index(3, 5);
        assert_eq!(g.axis_indices(k), [3, 5]);
        assert_eq!(g.node_position(k), [0.75, -1.0 + 5.0 * 0.125]);
    }

    #[test]
    fn wrap_and_minimal_image() {
        let g = GridSpec::new_1d(-1.0, 1.0, 8).unwrap();
        assert!((g.wrap_coord(0, 1.25) - -0.75).abs() < 1e-15);
        assert!((g.wrap_coord(0, -1.25) - 0.75).abs() < 1e-15);
        assert!(g.wrap_coord(0, -1e-300 - 1.0) < 1.0);
        assert!((g.periodic_delta(0, 0.9, -0.9) - -0.2).abs() < 1e-15);
    }
}
