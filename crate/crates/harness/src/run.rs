//! Single-run driver: lattice placement, initialization, time stepping and
//! sampled diagnostics and snapshots.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use vpm_core::{
    continuity_residual, ep_residual, hamiltonian, initialize_from_velocity, right_momentum_map, step, Discretisation, GridField,
    LoopDiagnostic, ParticleSet, SimState, StepParams,
};

use crate::config::{IcConfig, ParticleInit, SimConfig};
use crate::error::{io_err, HarnessError, Result};
use crate::ic::{crest_momenta, initial_velocity, particle_lattice};
use crate::snapshot::{extension, write_field, write_particles};

pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const METADATA_FILE: &str = "metadata.json";
pub const FIELD_DIR: &str = "fields";
pub const PARTICLE_DIR: &str = "particles";

/// Diagnostics recorded at one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub step: usize,
    pub t: f64,
    pub energy: f64,
    /// Residuals of the step that produced this sample; NaN at step 0.
    pub ep_residual: f64,
    pub continuity_residual: f64,
    /// Largest per-particle relative change of `J^R` since `t = 0`.
    pub noether_drift: f64,
    pub fixed_point_iterations: usize,
    pub circulations: Vec<f64>,
}

/// Run metadata written next to the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub version: String,
    pub config: String,
    pub status: String,
    pub error: Option<String>,
    pub steps_completed: usize,
    pub wall_time_s: f64,
    pub field_snapshots: Vec<String>,
    pub particle_snapshots: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub samples: Vec<Sample>,
    /// Velocity at every sample time.
    pub fields: Vec<(f64, GridField)>,
    pub final_state: SimState,
    pub diagnostics_csv: Option<PathBuf>,
    pub field_snapshots: Vec<PathBuf>,
    pub particle_snapshots: Vec<PathBuf>,
    pub metadata: Option<PathBuf>,
    pub wall_time_s: f64,
}

/// Discretisation described by `cfg`.
pub fn discretisation(cfg: &SimConfig) -> Result<Discretisation> {
    let disc = Discretisation::new(cfg.grid_spec()?, cfg.basis_kind(), cfg.fe_kind(), cfg.fem.alpha)?;
    Ok(disc.with_solver_tol(cfg.fem.solver_tol)?)
}

/// Particles on the configured lattice carrying the initial condition.
pub fn initial_particles(cfg: &SimConfig, disc: &Discretisation) -> Result<ParticleSet> {
    let q0 = particle_lattice(&disc.spec, cfg.particles_per_axis()?, cfg.particles.jitter, cfg.particles.seed);
    match (cfg.particles.init, &cfg.ic) {
        (ParticleInit::PeakonCrests, IcConfig::Peakons { speeds, positions }) => {
            let p = crest_momenta(&disc.spec, disc.alpha, &q0, speeds, positions)?;
            let n = p.len();
            Ok(ParticleSet::new(1, q0, p, vec![1.0; n])?)
        }
        (ParticleInit::PeakonCrests, _) => {
            Err(HarnessError::Config("particles.init = \"peakon_crests\" needs a peakons initial condition".into()))
        }
        (ParticleInit::Velocity, ic) => {
            let u0 = initial_velocity(disc, ic)?;
            Ok(initialize_from_velocity(disc, &u0, &q0)?)
        }
    }
}

/// Loop through the particles nearest to each point, in order, with
/// consecutive repeats removed.
pub fn loop_through(disc: &Discretisation, parts: &ParticleSet, points: &[Vec<f64>]) -> Result<LoopDiagnostic> {
    let spec = &disc.spec;
    let d = spec.dim();
    let mut members: Vec<usize> = Vec::with_capacity(points.len());
    for x in points {
        let dist2 = |b: usize| -> f64 {
            let q = parts.position(b);
            (0..d).map(|a| spec.periodic_delta(a, q[a], x[a]).powi(2)).sum()
        };
        let nearest =
            (0..parts.len()).min_by(|&a, &b| dist2(a).total_cmp(&dist2(b))).ok_or_else(|| HarnessError::Config("no particles".into()))?;
        if members.last() != Some(&nearest) {
            members.push(nearest);
        }
    }
    if members.len() > 1 && members.first() == members.last() {
        members.pop();
    }
    if members.len() < 3 {
        return Err(HarnessError::Config("loop collapses to fewer than three particles".into()));
    }
    Ok(LoopDiagnostic::from_particles(spec, parts, members)?)
}

pub(crate) fn noether_drift(jr0: &[f64], parts: &ParticleSet) -> f64 {
    let d = parts.dim();
    let jr = right_momentum_map(parts);
    jr.chunks_exact(d)
        .zip(jr0.chunks_exact(d))
        .map(|(a, b)| {
            let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let base = b.iter().map(|y| y * y).sum::<f64>().sqrt();
            if diff == 0.0 {
                0.0
            } else {
                diff / base
            }
        })
        .fold(0.0, f64::max)
}

/// A run in progress.
pub struct Simulation {
    pub disc: Discretisation,
    pub params: StepParams,
    pub state: SimState,
    pub loops: Vec<LoopDiagnostic>,
    jr0: Vec<f64>,
}

impl Simulation {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let disc = discretisation(cfg)?;
        let parts = initial_particles(cfg, &disc)?;
        let loops = cfg.loops.iter().map(|lp| loop_through(&disc, &parts, &lp.points)).collect::<Result<Vec<_>>>()?;
        let jr0 = right_momentum_map(&parts);
        let state = SimState::initial(&disc, parts)?;
        Ok(Self { disc, params: cfg.step_params(), state, loops, jr0 })
    }

    /// Takes one step; with `measure` the step residuals are returned.
    pub fn advance(&mut self, measure: bool) -> Result<Option<(f64, f64)>> {
        let next = step(&self.disc, &self.state, &self.params).map_err(|source| HarnessError::Step {
            step: self.state.step + 1,
            t: self.state.t,
            source,
        })?;
        let residuals = if measure {
            let dt = self.params.dt;
            Some((ep_residual(&self.disc, &self.state, &next, dt)?, continuity_residual(&self.disc, &self.state, &next, dt)?))
        } else {
            None
        };
        self.state = next;
        Ok(residuals)
    }

    pub fn sample(&self, residuals: Option<(f64, f64)>) -> Result<Sample> {
        let s = &self.state;
        let (ep, cont) = residuals.unwrap_or((f64::NAN, f64::NAN));
        Ok(Sample {
            step: s.step,
            t: s.t,
            energy: hamiltonian(&s.m, &s.u, &self.disc.mass)?,
            ep_residual: ep,
            continuity_residual: cont,
            noether_drift: noether_drift(&self.jr0, &s.particles),
            fixed_point_iterations: s.stats.iterations,
            circulations: self.loops.iter().map(|lp| lp.circulation(&s.particles)).collect::<vpm_core::Result<_>>()?,
        })
    }
}

/// `err` followed by its sources, separated by `: `.
fn error_chain(err: &HarnessError) -> String {
    let mut text = err.to_string();
    let mut source = std::error::Error::source(err);
    while let Some(e) = source {
        text.push_str(": ");
        text.push_str(&e.to_string());
        source = e.source();
    }
    text
}

struct Outputs {
    dir: PathBuf,
    csv: BufWriter<File>,
    fields: Vec<PathBuf>,
    particles: Vec<PathBuf>,
}

impl Outputs {
    fn create(dir: &Path, loops: usize) -> Result<Self> {
        for sub in [dir.to_path_buf(), dir.join(FIELD_DIR), dir.join(PARTICLE_DIR)] {
            fs::create_dir_all(&sub).map_err(io_err(&sub))?;
        }
        let path = dir.join(DIAGNOSTICS_FILE);
        let mut csv = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
        let mut header = String::from("step,t,energy,ep_residual,continuity_residual,noether_drift,fixed_point_iterations");
        for i in 0..loops {
            header.push_str(&format!(",circulation_{i}"));
        }
        writeln!(csv, "{header}").map_err(io_err(&path))?;
        Ok(Self { dir: dir.to_path_buf(), csv, fields: Vec::new(), particles: Vec::new() })
    }

    fn record(&mut self, cfg: &SimConfig, sim: &Simulation, sample: &Sample) -> Result<()> {
        let path = self.dir.join(DIAGNOSTICS_FILE);
        let mut row = format!(
            "{},{:?},{:?},{:?},{:?},{:?},{}",
            sample.step,
            sample.t,
            sample.energy,
            sample.ep_residual,
            sample.continuity_residual,
            sample.noether_drift,
            sample.fixed_point_iterations
        );
        for c in &sample.circulations {
            row.push_str(&format!(",{c:?}"));
        }
        writeln!(self.csv, "{row}").map_err(io_err(&path))?;

        let fmt = cfg.output.format;
        let ext = extension(fmt);
        let s = &sim.state;
        if cfg.output.field_snapshots {
            for (name, f) in [("u", &s.u), ("m", &s.m)] {
                let p = self.dir.join(FIELD_DIR).join(format!("{name}_{:06}.{ext}", s.step));
                write_field(&p, fmt, s.t, f)?;
                self.fields.push(p);
            }
        }
        if cfg.output.particle_snapshots {
            let p = self.dir.join(PARTICLE_DIR).join(format!("p_{:06}.{ext}", s.step));
            write_particles(&p, fmt, s.t, &s.particles)?;
            self.particles.push(p);
        }
        Ok(())
    }

    fn finish(&mut self, cfg: &SimConfig, steps: usize, wall: f64, error: Option<&HarnessError>) -> Result<PathBuf> {
        let csv_path = self.dir.join(DIAGNOSTICS_FILE);
        self.csv.flush().map_err(io_err(&csv_path))?;
        let rel = |p: &PathBuf| p.strip_prefix(&self.dir).unwrap_or(p).to_string_lossy().into_owned();
        let meta = Metadata {
            version: env!("CARGO_PKG_VERSION").into(),
            config: cfg.to_toml_string()?,
            status: if error.is_some() { "failed" } else { "ok" }.into(),
            error: error.map(error_chain),
            steps_completed: steps,
            wall_time_s: wall,
            field_snapshots: self.fields.iter().map(rel).collect(),
            particle_snapshots: self.particles.iter().map(rel).collect(),
        };
        let path = self.dir.join(METADATA_FILE);
        let text = serde_json::to_string_pretty(&meta).map_err(|e| HarnessError::Check(e.to_string()))?;
        fs::write(&path, text).map_err(io_err(&path))?;
        Ok(path)
    }
}

/// Runs `cfg` to its end time.
///
/// Samples are taken at step 0, every `sample_interval` steps and at the
/// final step. If a step fails, everything written so far is flushed, the
/// metadata records the failure and the step error is returned.
pub fn run(cfg: &SimConfig) -> Result<RunOutput> {
    let clock = Instant::now();
    let mut sim = Simulation::new(cfg)?;
    let mut outputs = cfg.output.dir.as_deref().map(|d| Outputs::create(d, sim.loops.len())).transpose()?;
    let steps = cfg.num_steps();
    let every = cfg.output.sample_interval;

    let mut samples = Vec::new();
    let mut fields = Vec::new();
    let mut take = |sim: &Simulation, residuals, outputs: &mut Option<Outputs>| -> Result<()> {
        let sample = sim.sample(residuals)?;
        if let Some(out) = outputs.as_mut() {
            out.record(cfg, sim, &sample)?;
        }
        samples.push(sample);
        fields.push((sim.state.t, sim.state.u.clone()));
        Ok(())
    };

    let mut result = take(&sim, None, &mut outputs);
    for n in 1..=steps {
        if result.is_err() {
            break;
        }
        let due = n % every == 0 || n == steps;
        result = sim.advance(due).and_then(|res| if due { take(&sim, res, &mut outputs) } else { Ok(()) });
    }

    let wall = clock.elapsed().as_secs_f64();
    let metadata = match outputs.as_mut() {
        Some(out) => Some(out.finish(cfg, sim.state.step, wall, result.as_ref().err())?),
        None => None,
    };
    result?;
    let (field_snapshots, particle_snapshots) = outputs.map(|o| (o.fields, o.particles)).unwrap_or_default();
    Ok(RunOutput {
        samples,
        fields,
        final_state: sim.state,
        diagnostics_csv: cfg.output.dir.as_ref().map(|d| d.join(DIAGNOSTICS_FILE)),
        field_snapshots,
        particle_snapshots,
        metadata,
        wall_time_s: wall,
    })
}
