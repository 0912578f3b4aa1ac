//! Convergence studies of 1D observables under grid refinement, with the
//! time step scaled in proportion to the grid spacing.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use vpm_core::diagnostics::fit_line;
use vpm_core::{measure_peakon_speed, measure_phase_shift, GridField};

use crate::config::{IcConfig, SimConfig};
use crate::error::{HarnessError, Result};
use crate::run::run;

/// Asymptotic speed of the first peakon emitted by the emergence profile.
pub const EMERGENCE_FIRST_SPEED: f64 = 2.0 / 3.0;

/// Errors at or below this fraction of `max(1, |reference|)` are treated as
/// measurement noise.
pub const MEASUREMENT_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// Speed of the tallest peak.
    PeakonSpeed,
    /// Shift of the tracked peak caused by an overtaking collision.
    PhaseShift,
}

impl FromStr for Observable {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "peakon_speed" => Ok(Self::PeakonSpeed),
            "phase_shift" => Ok(Self::PhaseShift),
            other => Err(HarnessError::Config(format!("unknown observable {other:?} (expected peakon_speed or phase_shift)"))),
        }
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PeakonSpeed => "peakon_speed",
            Self::PhaseShift => "phase_shift",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    /// Grid points per `α`.
    pub resolution: f64,
    pub nodes: usize,
    pub dt: f64,
    pub value: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub observable: Observable,
    pub reference: f64,
    pub rows: Vec<ConvergenceRow>,
    /// Negated slope of `ln error` against `ln resolution`.
    pub order: f64,
    pub monotone: bool,
    /// False when the errors are not monotone, reach the measurement floor
    /// or give a non-finite slope.
    pub reliable: bool,
}

impl fmt::Display for ConvergenceTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "observable = {}, reference = {:.10}", self.observable, self.reference)?;
        writeln!(f, "{:>10} {:>8} {:>12} {:>16} {:>12}", "per_alpha", "nodes", "dt", "value", "error")?;
        for r in &self.rows {
            writeln!(f, "{:>10} {:>8} {:>12.6e} {:>16.10} {:>12.4e}", r.resolution, r.nodes, r.dt, r.value, r.error)?;
        }
        write!(f, "order = {:.4}, monotone = {}, reliable = {}", self.order, self.monotone, self.reliable)
    }
}

/// `base` refined to `per_alpha` grid points per `α`, with `Δt` scaled by the
/// same factor as `h` and the sampling period held fixed in time.
pub fn refined(base: &SimConfig, per_alpha: f64) -> Result<SimConfig> {
    if base.dim() != 1 {
        return Err(HarnessError::Config("convergence studies run on 1D configurations".into()));
    }
    if !(per_alpha > 0.0 && per_alpha.is_finite()) {
        return Err(HarnessError::Config(format!("resolution must be positive, got {per_alpha}")));
    }
    let len = base.grid.upper[0] - base.grid.lower[0];
    let alpha = base.fem.alpha;
    let base_per_alpha = base.grid.nodes[0] as f64 * alpha / len;
    let nodes = (len * per_alpha / alpha).round() as usize;
    let mut cfg = base.clone();
    cfg.grid.nodes = vec![nodes];
    cfg.dynamics.dt = base.dynamics.dt * base_per_alpha / per_alpha;
    let sample_period = base.dynamics.dt * base.output.sample_interval as f64;
    cfg.output.sample_interval = ((sample_period / cfg.dynamics.dt).round() as usize).max(1);
    cfg.output.dir = None;
    cfg.loops.clear();
    cfg.validate()?;
    Ok(cfg)
}

fn window(cfg: &SimConfig) -> (f64, f64) {
    let t = cfg.dynamics.t_end;
    cfg.measure.window.map(|[a, b]| (a, b)).unwrap_or((0.5 * t, t))
}

fn series(cfg: &SimConfig) -> Result<Vec<(f64, GridField)>> {
    Ok(run(cfg)?.fields)
}

/// Configuration with only the fastest peakon of `cfg`.
pub fn reference_without_interaction(cfg: &SimConfig) -> Result<SimConfig> {
    let IcConfig::Peakons { speeds, positions } = &cfg.ic else {
        return Err(HarnessError::Config("phase_shift needs a peakons initial condition".into()));
    };
    if speeds.len() < 2 {
        return Err(HarnessError::Config("phase_shift needs at least two peakons".into()));
    }
    let fastest = (0..speeds.len()).max_by(|&a, &b| speeds[a].abs().total_cmp(&speeds[b].abs())).expect("non-empty");
    let mut alone = cfg.clone();
    alone.ic = IcConfig::Peakons { speeds: vec![speeds[fastest]], positions: vec![positions[fastest]] };
    Ok(alone)
}

/// Observable for one configuration.
pub fn measure(cfg: &SimConfig, observable: Observable) -> Result<f64> {
    let win = window(cfg);
    match observable {
        Observable::PeakonSpeed => Ok(measure_peakon_speed(&series(cfg)?, win)?),
        Observable::PhaseShift => {
            let alone = reference_without_interaction(cfg)?;
            let (with, without) = std::thread::scope(|s| {
                let a = s.spawn(|| series(cfg));
                let b = series(&alone);
                (a.join().expect("run thread panicked"), b)
            });
            Ok(measure_phase_shift(&with?, &without?, cfg.measure.peakon_id, win, cfg.fem.alpha)?)
        }
    }
}

/// Richardson extrapolation from the last three values, refined by a
/// constant ratio.
pub fn richardson(resolutions: &[f64], values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 3 || resolutions.len() != n {
        return Err(HarnessError::Config("Richardson extrapolation needs three resolutions".into()));
    }
    let (r1, r2, r3) = (resolutions[n - 3], resolutions[n - 2], resolutions[n - 1]);
    let ratio = r3 / r2;
    if ((r2 / r1) - ratio).abs() > 1e-9 * ratio || ratio <= 1.0 {
        return Err(HarnessError::Config("Richardson extrapolation needs resolutions refined by a constant ratio".into()));
    }
    let (v1, v2, v3) = (values[n - 3], values[n - 2], values[n - 1]);
    let q = (v1 - v2) / (v2 - v3);
    if !(q > 1.0 && q.is_finite()) {
        return Err(HarnessError::Check(format!("values {v1}, {v2}, {v3} are not converging geometrically")));
    }
    let p = q.ln() / ratio.ln();
    Ok(v3 + (v3 - v2) / (ratio.powf(p) - 1.0))
}

/// Error table, fitted order and flags for `values` against `reference`.
pub fn summarise(observable: Observable, reference: f64, rows: Vec<(f64, usize, f64, f64)>) -> ConvergenceTable {
    let rows: Vec<ConvergenceRow> = rows
        .into_iter()
        .map(|(resolution, nodes, dt, value)| ConvergenceRow { resolution, nodes, dt, value, error: (value - reference).abs() })
        .collect();
    let monotone = rows.windows(2).all(|w| w[1].error < w[0].error);
    let floor = MEASUREMENT_FLOOR * reference.abs().max(1.0);
    let above_floor = rows.iter().all(|r| r.error > floor);
    let order = if rows.len() >= 2 && rows.iter().all(|r| r.error > 0.0) {
        let x: Vec<f64> = rows.iter().map(|r| r.resolution.ln()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.error.ln()).collect();
        fit_line(&x, &y).map(|(_, slope)| -slope).unwrap_or(f64::NAN)
    } else {
        f64::NAN
    };
    let reliable = monotone && above_floor && order.is_finite();
    ConvergenceTable { observable, reference, rows, order, monotone, reliable }
}

/// Runs `base` at each resolution (grid points per `α`) and fits the order
/// of convergence of `observable`.
///
/// The reference is `2/3` for the speed of the first peakon emerging from
/// the emergence profile, the known speed of a single translating peakon,
/// and a Richardson extrapolation otherwise. Resolutions run concurrently.
pub fn convergence_study(base: &SimConfig, resolutions: &[f64], observable: Observable) -> Result<ConvergenceTable> {
    if resolutions.len() < 3 {
        return Err(HarnessError::Config("a convergence study needs at least three resolutions".into()));
    }
    let configs = resolutions.iter().map(|&r| refined(base, r)).collect::<Result<Vec<_>>>()?;
    let values = std::thread::scope(|s| {
        let handles: Vec<_> = configs.iter().map(|cfg| s.spawn(move || measure(cfg, observable))).collect();
        handles.into_iter().map(|h| h.join().expect("run thread panicked")).collect::<Result<Vec<_>>>()
    })?;
    let reference = match (observable, &base.ic) {
        (Observable::PeakonSpeed, IcConfig::PeakonEmergence { .. }) => EMERGENCE_FIRST_SPEED,
        (Observable::PeakonSpeed, IcConfig::Peakons { speeds, .. }) if speeds.len() == 1 => speeds[0],
        _ => richardson(resolutions, &values)?,
    };
    let rows = resolutions.iter().zip(&configs).zip(&values).map(|((&r, c), &v)| (r, c.grid.nodes[0], c.dynamics.dt, v)).collect();
    Ok(summarise(observable, reference, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn richardson_recovers_limit_of_geometric_sequence() {
        let res = [4.0, 8.0, 16.0];
        let vals: Vec<f64> = res.iter().map(|r| 0.3 + 2.0 / r).collect();
        assert!((richardson(&res, &vals).unwrap() - 0.3).abs() < 1e-14);
        let quad: Vec<f64> = res.iter().map(|r| -1.0 + 5.0 / (r * r)).collect();
        assert!((richardson(&res, &quad).unwrap() + 1.0).abs() < 1e-14);
        assert!(richardson(&[4.0, 8.0, 12.0], &vals).is_err());
        assert!(richardson(&res, &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn summary_fits_first_order() {
        let rows = vec![(4.0, 40, 0.1, 0.5 + 0.4), (8.0, 80, 0.05, 0.5 + 0.2), (16.0, 160, 0.025, 0.5 + 0.1)];
        let t = summarise(Observable::PeakonSpeed, 0.5, rows);
        assert!((t.order - 1.0).abs() < 1e-12);
        assert!(t.monotone && t.reliable);
    }

    #[test]
    fn exact_observable_is_flagged_unreliable() {
        let rows = vec![(4.0, 40, 0.1, 1.0), (8.0, 80, 0.05, 1.0 + 1e-16), (16.0, 160, 0.025, 1.0)];
        let t = summarise(Observable::PeakonSpeed, 1.0, rows);
        assert!(!t.reliable);
        let noisy = vec![(4.0, 40, 0.1, 1.1), (8.0, 80, 0.05, 1.2), (16.0, 160, 0.025, 1.05)];
        let t = summarise(Observable::PeakonSpeed, 1.0, noisy);
        assert!(!t.monotone && !t.reliable);
    }

    #[test]
    fn refinement_scales_grid_and_step() {
        let base = SimConfig::from_toml_str(
            r#"
[grid]
dim = 1
lower = [0.0]
upper = [100.0]
nodes = [400]

[fem]
alpha = 1.0

[dynamics]
dt = 0.1
t_end = 60.0

[output]
sample_interval = 2

[ic]
kind = "peakon_emergence"
"#,
        )
        .unwrap();
        let fine = refined(&base, 8.0).unwrap();
        assert_eq!(fine.grid.nodes, vec![800]);
        assert!((fine.dynamics.dt - 0.05).abs() < 1e-15);
        assert_eq!(fine.output.sample_interval, 4);
        assert!(measure(&base, Observable::PhaseShift).is_err());
        assert_eq!("phase_shift".parse::<Observable>().unwrap(), Observable::PhaseShift);
        assert!("energy".parse::<Observable>().is_err());
    }
}
