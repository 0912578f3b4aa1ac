//! Run configuration, read from TOML.
//!
//! ```toml
//! [grid]
//! dim = 1
//! lower = [0.0]
//! upper = [20.0]
//! nodes = [500]
//!
//! [fem]
//! alpha = 1.0
//!
//! [dynamics]
//! dt = 0.1
//! t_end = 20.0
//!
//! [ic]
//! kind = "peakons"
//! speeds = [1.0]
//! positions = [5.0]
//! ```
//!
//! Unknown keys are rejected. See the README for the full schema.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vpm_core::{BasisKind, FEBasisKind, GridSpec, StepParams};

use crate::error::{io_err, HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub grid: GridConfig,
    #[serde(default)]
    pub basis: BasisConfig,
    pub fem: FemConfig,
    #[serde(default)]
    pub particles: ParticleConfig,
    pub dynamics: DynamicsConfig,
    pub ic: IcConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub measure: MeasureConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loops: Vec<LoopConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisName {
    #[default]
    CubicBspline,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    #[serde(default)]
    pub kind: BasisName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeName {
    #[default]
    PiecewiseLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FemConfig {
    #[serde(default)]
    pub kind: FeName,
    pub alpha: f64,
    #[serde(default = "default_solver_tol")]
    pub solver_tol: f64,
}

fn default_solver_tol() -> f64 {
    vpm_core::fem::DEFAULT_SOLVER_TOL
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleConfig {
    /// Particles per grid cell (`n_p / n_g`); must be a perfect `dim`-th
    /// power. Defaults to two per axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_cell: Option<usize>,
    /// Uniform jitter amplitude as a fraction of the grid spacing, at most 0.1.
    #[serde(default)]
    pub jitter: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init: ParticleInit,
}

/// How initial particle momenta are assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticleInit {
    /// Minimum-norm momenta reproducing the initial velocity on the grid.
    #[default]
    Velocity,
    /// Point momenta at the peakon crests; `peakons` initial conditions only.
    PeakonCrests,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_fp_tol")]
    pub fixed_point_tol: f64,
    #[serde(default = "default_fp_cap")]
    pub fixed_point_cap: usize,
}

fn default_fp_tol() -> f64 {
    1e-12
}

fn default_fp_cap() -> usize {
    200
}

/// Initial condition, selected by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IcConfig {
    /// Smooth bump that breaks into a train of peakons; centred on `center`
    /// (default: domain centre).
    PeakonEmergence {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<f64>,
    },
    /// Superposition of peakons `c_i exp(-|x - x_i| / α)`.
    Peakons { speeds: Vec<f64>, positions: Vec<f64> },
    /// Momentum `(1, 0)` on the rectangle `[a, b] × [c, d]`.
    Tophat { rect: [f64; 4] },
    /// Two momentum strips `[x_i, x_i + width] × [y_range]` carrying `(A_i, 0)`,
    /// listed rear first.
    TwoFilaments { offsets: [f64; 2], amplitudes: [f64; 2], width: f64, y_range: [f64; 2] },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotFormat {
    #[default]
    Binary,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory; nothing is written when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Steps between samples.
    #[serde(default = "default_interval")]
    pub sample_interval: usize,
    #[serde(default = "default_true")]
    pub field_snapshots: bool,
    #[serde(default)]
    pub particle_snapshots: bool,
    #[serde(default)]
    pub format: SnapshotFormat,
}

fn default_interval() -> usize {
    1
}

fn default_true() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: None, sample_interval: 1, field_snapshots: true, particle_snapshots: false, format: SnapshotFormat::Binary }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureConfig {
    /// Time window for peak-speed and phase-shift fits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    /// Rank (tallest first) of the peak tracked by phase-shift measurements.
    #[serde(default)]
    pub peakon_id: usize,
}

/// Closed loop of points; threaded through the particles nearest to them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    pub points: Vec<Vec<f64>>,
}

fn bad(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(bad(format!("{name} must be positive and finite, got {v}")));
    }
    Ok(())
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| HarnessError::Parse { path: PathBuf::from("<string>"), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| HarnessError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| bad(format!("cannot serialise configuration: {e}")))
    }

    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        let g = &self.grid;
        let d = g.dim;
        if !(d == 1 || d == 2) {
            return Err(bad(format!("grid.dim must be 1 or 2, got {d}")));
        }
        if g.lower.len() != d || g.upper.len() != d || g.nodes.len() != d {
            return Err(bad(format!("grid.lower, grid.upper and grid.nodes need {d} entries each")));
        }
        let mut lower = [0.0, 0.0];
        let mut upper = [1.0, 1.0];
        let mut nodes = [1, 1];
        lower[..d].copy_from_slice(&g.lower[..d]);
        upper[..d].copy_from_slice(&g.upper[..d]);
        nodes[..d].copy_from_slice(&g.nodes[..d]);
        Ok(GridSpec::new(d, lower, upper, nodes)?)
    }

    pub fn basis_kind(&self) -> BasisKind {
        match self.basis.kind {
            BasisName::CubicBspline => BasisKind::CubicBSpline,
        }
    }

    pub fn fe_kind(&self) -> FEBasisKind {
        match self.fem.kind {
            FeName::PiecewiseLinear => FEBasisKind::PiecewiseLinear,
        }
    }

    pub fn step_params(&self) -> StepParams {
        StepParams { dt: self.dynamics.dt, fixed_point_tol: self.dynamics.fixed_point_tol, fixed_point_cap: self.dynamics.fixed_point_cap }
    }

    /// Particles per cell along each axis.
    pub fn particles_per_axis(&self) -> Result<usize> {
        let d = self.grid.dim as u32;
        let ratio = self.particles.per_cell.unwrap_or(2usize.pow(d));
        let r = (ratio as f64).powf(1.0 / d as f64).round() as usize;
        if ratio == 0 || r.pow(d) != ratio {
            return Err(bad(format!("particles.per_cell = {ratio} is not a perfect power of the dimension {d}")));
        }
        Ok(r)
    }

    /// Number of steps to reach `t_end`.
    pub fn num_steps(&self) -> usize {
        (self.dynamics.t_end / self.dynamics.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.grid_spec()?;
        let d = spec.dim();
        positive("fem.alpha", self.fem.alpha)?;
        if !(self.fem.solver_tol > 0.0 && self.fem.solver_tol <= 1e-6) {
            return Err(bad(format!("fem.solver_tol must lie in (0, 1e-6], got {}", self.fem.solver_tol)));
        }
        positive("dynamics.dt", self.dynamics.dt)?;
        if !(self.dynamics.t_end >= 0.0 && self.dynamics.t_end.is_finite()) {
            return Err(bad("dynamics.t_end must be non-negative"));
        }
        positive("dynamics.fixed_point_tol", self.dynamics.fixed_point_tol)?;
        if self.dynamics.fixed_point_cap == 0 {
            return Err(bad("dynamics.fixed_point_cap must be positive"));
        }
        self.particles_per_axis()?;
        if !(0.0..=0.1).contains(&self.particles.jitter) {
            return Err(bad(format!("particles.jitter must lie in [0, 0.1], got {}", self.particles.jitter)));
        }
        if self.particles.init == ParticleInit::PeakonCrests && !matches!(self.ic, IcConfig::Peakons { .. }) {
            return Err(bad("particles.init = \"peakon_crests\" needs a peakons initial condition"));
        }
        if self.output.sample_interval == 0 {
            return Err(bad("output.sample_interval must be at least 1"));
        }
        if let Some([t0, t1]) = self.measure.window {
            if !(t0 < t1) {
                return Err(bad("measure.window must be an increasing pair"));
            }
        }
        for (i, lp) in self.loops.iter().enumerate() {
            if lp.points.len() < 3 || lp.points.iter().any(|p| p.len() != d) {
                return Err(bad(format!("loop {i} needs at least three {d}-d points")));
            }
        }
        crate::ic::validate(&self.ic, &spec, self.fem.alpha)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PEAKON: &str = r#"
[grid]
dim = 1
lower = [0.0]
upper = [20.0]
nodes = [500]

[fem]
alpha = 1.0

[dynamics]
dt = 0.1
t_end = 20.0

[ic]
kind = "peakons"
speeds = [1.0]
positions = [5.0]
"#;

    #[test]
    fn defaults_and_round_trip() {
        let cfg = SimConfig::from_toml_str(PEAKON).unwrap();
        assert_eq!(cfg.dynamics.fixed_point_cap, 200);
        assert_eq!(cfg.fem.solver_tol, 1e-12);
        assert_eq!(cfg.particles_per_axis().unwrap(), 2);
        assert_eq!(cfg.num_steps(), 200);
        let back = SimConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let extra = PEAKON.replace("alpha = 1.0", "alpha = 1.0\nbeta = 2.0");
        assert!(matches!(SimConfig::from_toml_str(&extra), Err(HarnessError::Parse { .. })));
        let neg = PEAKON.replace("dt = 0.1", "dt = -0.1");
        assert!(matches!(SimConfig::from_toml_str(&neg), Err(HarnessError::Config(_))));
        let ratio = PEAKON.replace("[dynamics]", "[particles]\nper_cell = 3\n\n[dynamics]");
        assert!(SimConfig::from_toml_str(&ratio).is_ok());
        let ratio2d = PEAKON.replace("dim = 1", "dim = 2");
        assert!(SimConfig::from_toml_str(&ratio2d).is_err());
        let ic = PEAKON.replace("kind = \"peakons\"", "kind = \"vortex\"");
        assert!(SimConfig::from_toml_str(&ic).is_err());
    }
}
