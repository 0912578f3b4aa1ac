//! Initial conditions and particle placement.

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vpm_core::{solve_spd, Discretisation, GridField, GridSpec};

use crate::config::IcConfig;
use crate::error::{HarnessError, Result};

/// Smallest 1D domain width, in units of `α`, accepted by the emergence profile.
pub const EMERGENCE_MIN_WIDTH: f64 = 20.0;

fn bad(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn require_dim(spec: &GridSpec, dim: usize, name: &str) -> Result<()> {
    if spec.dim() != dim {
        return Err(bad(format!("initial condition {name} needs a {dim}D grid")));
    }
    Ok(())
}

/// Checks that `ic` fits the grid and `α`.
pub fn validate(ic: &IcConfig, spec: &GridSpec, alpha: f64) -> Result<()> {
    match ic {
        IcConfig::PeakonEmergence { center } => {
            require_dim(spec, 1, "peakon_emergence")?;
            if spec.length(0) < EMERGENCE_MIN_WIDTH * alpha {
                return Err(bad(format!(
                    "peakon_emergence needs a domain at least {EMERGENCE_MIN_WIDTH} alpha wide, got {}",
                    spec.length(0)
                )));
            }
            if let Some(c) = center {
                if !c.is_finite() {
                    return Err(bad("peakon_emergence center must be finite"));
                }
            }
        }
        IcConfig::Peakons { speeds, positions } => {
            require_dim(spec, 1, "peakons")?;
            if speeds.len() != positions.len() || speeds.is_empty() {
                return Err(bad("peakons needs matching, non-empty speeds and positions"));
            }
            if speeds.iter().chain(positions).any(|v| !v.is_finite()) {
                return Err(bad("peakon speeds and positions must be finite"));
            }
        }
        IcConfig::Tophat { rect } => {
            require_dim(spec, 2, "tophat")?;
            check_rect(spec, *rect, "tophat rectangle")?;
        }
        IcConfig::TwoFilaments { offsets, amplitudes, width, y_range } => {
            require_dim(spec, 2, "two_filaments")?;
            if amplitudes.iter().any(|a| !a.is_finite()) {
                return Err(bad("filament amplitudes must be finite"));
            }
            for &x in offsets {
                check_rect(spec, [x, x + width, y_range[0], y_range[1]], "filament strip")?;
            }
            let (lo, hi) = (offsets[0].min(offsets[1]), offsets[0].max(offsets[1]));
            if hi <= lo + width {
                return Err(bad("filament strips overlap"));
            }
        }
    }
    Ok(())
}

fn check_rect(spec: &GridSpec, [a, b, c, d]: [f64; 4], what: &str) -> Result<()> {
    if !(a < b && c < d) || [a, b, c, d].iter().any(|v| !v.is_finite()) {
        return Err(bad(format!("{what} [{a}, {b}] x [{c}, {d}] is degenerate")));
    }
    let (lo, hi) = (spec.lower(), spec.upper());
    if a < lo[0] || b > hi[0] || c < lo[1] || d > hi[1] {
        return Err(bad(format!("{what} [{a}, {b}] x [{c}, {d}] leaves the domain")));
    }
    if nodes_inside(spec, [a, b, c, d]).next().is_none() {
        return Err(bad(format!("{what} [{a}, {b}] x [{c}, {d}] contains no grid node")));
    }
    Ok(())
}

fn nodes_inside(spec: &GridSpec, [a, b, c, d]: [f64; 4]) -> impl Iterator<Item = usize> + '_ {
    (0..spec.num_nodes()).filter(move |&k| {
        let [x, y] = spec.node_position(k);
        a <= x && x <= b && c <= y && y <= d
    })
}

/// Emergence profile `(π/2)eˣ − 2 sinh(x) arctan(eˣ) − 1` folded about its
/// centre, evaluated in the cancellation-free form
/// `(π/2)s + (1 − s²) arctan(s)/s − 1` with `s = e^{−|x|}`.
pub fn emergence_profile(x: f64) -> f64 {
    let s = (-x.abs()).exp();
    if s == 0.0 {
        return 0.0;
    }
    FRAC_PI_2 * s + (1.0 - s * s) * s.atan() / s - 1.0
}

/// Emergence profile with length scale `α`, centred on `center`.
pub fn peakon_emergence(spec: &GridSpec, alpha: f64, center: Option<f64>) -> Result<GridField> {
    validate(&IcConfig::PeakonEmergence { center }, spec, alpha)?;
    let c = center.unwrap_or(0.5 * (spec.lower()[0] + spec.upper()[0]));
    Ok(GridField::from_fn(*spec, 1, |x| vec![emergence_profile(spec.periodic_delta(0, x[0], c) / alpha)]))
}

/// Sum of periodic peakons `c_i e^{−|x − x_i|/α}`.
pub fn peakons(spec: &GridSpec, alpha: f64, speeds: &[f64], positions: &[f64]) -> Result<GridField> {
    validate(&IcConfig::Peakons { speeds: speeds.to_vec(), positions: positions.to_vec() }, spec, alpha)?;
    Ok(GridField::from_fn(*spec, 1, |x| {
        let v = speeds.iter().zip(positions).map(|(c, x0)| c * (-spec.periodic_delta(0, x[0], *x0).abs() / alpha).exp()).sum();
        vec![v]
    }))
}

/// Nodal momentum `(A, 0)` on each rectangle of `strips`, zero elsewhere.
pub fn strip_momentum(spec: &GridSpec, strips: &[([f64; 4], f64)]) -> GridField {
    let mut m = GridField::zeros(*spec, 2);
    for &(rect, amp) in strips {
        for k in nodes_inside(spec, rect) {
            m.values_mut()[2 * k] = amp;
        }
    }
    m
}

/// Velocity with grid momentum `m`: solves `H u = M m`.
pub fn velocity_from_momentum(disc: &Discretisation, m: &GridField) -> Result<GridField> {
    let d = disc.spec.dim();
    let rhs = disc.mass.mul(m.values(), d);
    let u = solve_spd(&disc.helmholtz, &rhs, d, disc.solver_tol)?;
    Ok(GridField::from_values(disc.spec, d, u)?)
}

/// Top-hat momentum `(1, 0)` on `rect`, smoothed into a velocity.
pub fn tophat(disc: &Discretisation, rect: [f64; 4]) -> Result<GridField> {
    validate(&IcConfig::Tophat { rect }, &disc.spec, disc.alpha)?;
    velocity_from_momentum(disc, &strip_momentum(&disc.spec, &[(rect, 1.0)]))
}

/// Two parallel momentum strips along `y`.
pub fn two_filaments(disc: &Discretisation, offsets: [f64; 2], amplitudes: [f64; 2], width: f64, y_range: [f64; 2]) -> Result<GridField> {
    validate(&IcConfig::TwoFilaments { offsets, amplitudes, width, y_range }, &disc.spec, disc.alpha)?;
    let strips = filament_strips(offsets, amplitudes, width, y_range);
    velocity_from_momentum(disc, &strip_momentum(&disc.spec, &strips))
}

/// Rectangles and amplitudes of the two filaments.
pub fn filament_strips(offsets: [f64; 2], amplitudes: [f64; 2], width: f64, y_range: [f64; 2]) -> [([f64; 4], f64); 2] {
    [0, 1].map(|i| ([offsets[i], offsets[i] + width, y_range[0], y_range[1]], amplitudes[i]))
}

/// Initial velocity for `ic`.
pub fn initial_velocity(disc: &Discretisation, ic: &IcConfig) -> Result<GridField> {
    let spec = &disc.spec;
    match ic {
        IcConfig::PeakonEmergence { center } => peakon_emergence(spec, disc.alpha, *center),
        IcConfig::Peakons { speeds, positions } => peakons(spec, disc.alpha, speeds, positions),
        IcConfig::Tophat { rect } => tophat(disc, *rect),
        IcConfig::TwoFilaments { offsets, amplitudes, width, y_range } => two_filaments(disc, *offsets, *amplitudes, *width, *y_range),
    }
}

/// 1D particle momenta carrying each peakon `c_i exp(-|x - x_i| / α)` as the
/// point momentum `2 c_i α` at its crest, split linearly between the two
/// particles nearest to `x_i`; all other particles carry none.
pub fn crest_momenta(spec: &GridSpec, alpha: f64, q: &[f64], speeds: &[f64], positions: &[f64]) -> Result<Vec<f64>> {
    require_dim(spec, 1, "peakon crest momenta")?;
    if q.len() < 2 {
        return Err(bad("crest momenta need at least two particles"));
    }
    let mut p = vec![0.0; q.len()];
    for (&c, &x) in speeds.iter().zip(positions) {
        let dist = |b: usize| spec.periodic_delta(0, q[b], x).abs();
        let mut order: Vec<usize> = (0..q.len()).collect();
        order.select_nth_unstable_by(1, |&a, &b| dist(a).total_cmp(&dist(b)));
        let (near, far) = if dist(order[0]) <= dist(order[1]) { (order[0], order[1]) } else { (order[1], order[0]) };
        let (dn, df) = (dist(near), dist(far));
        let w = if dn + df > 0.0 { df / (dn + df) } else { 1.0 };
        let total = 2.0 * c * alpha;
        p[near] += w * total;
        p[far] += (1.0 - w) * total;
    }
    Ok(p)
}

/// Uniform lattice of `per_axis` particles per cell and axis, x fastest,
/// each coordinate jittered uniformly by up to `jitter · h`.
pub fn particle_lattice(spec: &GridSpec, per_axis: usize, jitter: f64, seed: u64) -> Vec<f64> {
    let d = spec.dim();
    let nodes = spec.nodes_per_axis();
    let counts: Vec<usize> = (0..d).map(|a| nodes[a] * per_axis).collect();
    let total: usize = counts.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = Vec::with_capacity(total * d);
    for n in 0..total {
        let idx = [n % counts[0], if d == 2 { n / counts[0] } else { 0 }];
        for (a, &i) in idx.iter().enumerate().take(d) {
            let h = spec.spacing(a);
            let mut x = spec.lower()[a] + (i as f64 + 0.5) * h / per_axis as f64;
            if jitter > 0.0 {
                x += rng.gen_range(-jitter..=jitter) * h;
            }
            q.push(spec.wrap_coord(a, x));
        }
    }
    q
}
