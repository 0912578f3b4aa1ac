//! Offline re-check of a run directory against its snapshots.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use vpm_core::{hamiltonian, right_momentum_map, ParticleSet};

use crate::config::SimConfig;
use crate::error::{io_err, HarnessError, Result};
use crate::run::{noether_drift, Metadata, DIAGNOSTICS_FILE, METADATA_FILE};
use crate::snapshot::{read_field, read_particles_binary, ParticleSnapshot};

/// Relative tolerance for recomputed energies.
pub const ENERGY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnoseReport {
    pub config: SimConfig,
    pub samples: usize,
    pub energies_checked: usize,
    pub max_energy_error: f64,
    pub noether_checked: usize,
    pub max_noether_error: f64,
}

struct Logged {
    energy: f64,
    noether: f64,
}

fn read_diagnostics(path: &Path) -> Result<BTreeMap<usize, Logged>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |m: String| HarnessError::Snapshot { path: path.to_path_buf(), message: m };
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty diagnostics file".into()))?.split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).ok_or_else(|| bad(format!("missing column {name}")));
    let (c_step, c_energy, c_noether) = (col("step")?, col("energy")?, col("noether_drift")?);
    let mut out = BTreeMap::new();
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(bad(format!("ragged row {line:?}")));
        }
        let num = |c: usize| cells[c].parse::<f64>().map_err(|_| bad(format!("bad number {:?}", cells[c])));
        let step = cells[c_step].parse::<usize>().map_err(|_| bad(format!("bad step {:?}", cells[c_step])))?;
        out.insert(step, Logged { energy: num(c_energy)?, noether: num(c_noether)? });
    }
    Ok(out)
}

fn step_of(name: &str) -> Option<usize> {
    let stem = Path::new(name).file_stem()?.to_str()?;
    stem.rsplit('_').next()?.parse().ok()
}

fn particles_of(snap: ParticleSnapshot) -> Result<ParticleSet> {
    let mut parts = ParticleSet::new(snap.dim, snap.q, snap.p, snap.weights)?;
    parts.jac = snap.jac;
    Ok(parts)
}

/// Recomputes the logged energy from every `u`/`m` snapshot pair, and the
/// logged `J^R` drift from binary particle snapshots when present, failing
/// if either disagrees with the diagnostics file.
pub fn diagnose(dir: &Path) -> Result<DiagnoseReport> {
    let meta_path = dir.join(METADATA_FILE);
    let text = std::fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let meta: Metadata =
        serde_json::from_str(&text).map_err(|e| HarnessError::Parse { path: meta_path.clone(), message: e.to_string() })?;
    let config = SimConfig::from_toml_str(&meta.config)?;
    let disc = crate::run::discretisation(&config)?;
    let logged = read_diagnostics(&dir.join(DIAGNOSTICS_FILE))?;

    let mut fields: BTreeMap<usize, [Option<PathBuf>; 2]> = BTreeMap::new();
    for name in &meta.field_snapshots {
        let Some(step) = step_of(name) else { continue };
        let file = Path::new(name).file_name().and_then(|f| f.to_str()).unwrap_or_default();
        let slot = if file.starts_with("u_") {
            0
        } else if file.starts_with("m_") {
            1
        } else {
            continue;
        };
        fields.entry(step).or_default()[slot] = Some(dir.join(name));
    }

    let mut max_energy_error = 0.0f64;
    let mut energies_checked = 0;
    for (step, [u, m]) in &fields {
        let (Some(u), Some(m)) = (u, m) else { continue };
        let row = logged.get(step).ok_or_else(|| HarnessError::Check(format!("no diagnostics row for snapshot step {step}")))?;
        let u = read_field(u)?.to_field(&disc.spec)?;
        let m = read_field(m)?.to_field(&disc.spec)?;
        let e = hamiltonian(&m, &u, &disc.mass)?;
        let err = (e - row.energy).abs() / row.energy.abs().max(f64::MIN_POSITIVE);
        if !(err <= ENERGY_TOL) {
            return Err(HarnessError::Check(format!(
                "step {step}: recomputed energy {e:e} differs from logged {:e} (relative {err:.3e})",
                row.energy
            )));
        }
        max_energy_error = max_energy_error.max(err);
        energies_checked += 1;
    }

    let mut max_noether_error = 0.0f64;
    let mut noether_checked = 0;
    let binary: Vec<(usize, PathBuf)> =
        meta.particle_snapshots.iter().filter(|n| n.ends_with(".bin")).filter_map(|n| step_of(n).map(|s| (s, dir.join(n)))).collect();
    if let Some((0, first)) = binary.first() {
        let jr0 = right_momentum_map(&particles_of(read_particles_binary(first)?)?);
        for (step, path) in &binary {
            let Some(row) = logged.get(step) else { continue };
            let drift = noether_drift(&jr0, &particles_of(read_particles_binary(path)?)?);
            let err = (drift - row.noether).abs();
            if !(err <= ENERGY_TOL * (1.0 + row.noether.abs())) {
                return Err(HarnessError::Check(format!(
                    "step {step}: recomputed J^R drift {drift:e} differs from logged {:e}",
                    row.noether
                )));
            }
            max_noether_error = max_noether_error.max(err);
            noether_checked += 1;
        }
    }

    Ok(DiagnoseReport { config, samples: logged.len(), energies_checked, max_energy_error, noether_checked, max_noether_error })
}
