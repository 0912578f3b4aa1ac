//! Field and particle snapshots.
//!
//! Binary layout, little-endian throughout:
//!
//! - field: `"VPM1"`, `u32` dim, `u32` nodes per axis (dim entries),
//!   `u32` components, `f64` t, then the node-major `f64` values;
//! - particles: `"VPM1"`, `u32` dim, `u32` particle count, `f64` t, then the
//!   `Q`, `P`, `J` and `D̃` blocks as `f64`, particle-major.
//!
//! The CSV mirror writes one row per node or particle after a `# t = ...`
//! comment line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use vpm_core::{GridField, GridSpec, ParticleSet};

use crate::config::SnapshotFormat;
use crate::error::{io_err, HarnessError, Result};

pub const MAGIC: &[u8; 4] = b"VPM1";

/// Field snapshot as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    pub t: f64,
    pub dim: usize,
    pub nodes: Vec<usize>,
    pub components: usize,
    pub values: Vec<f64>,
}

impl FieldSnapshot {
    pub fn from_field(t: f64, f: &GridField) -> Self {
        let spec = f.spec();
        Self {
            t,
            dim: spec.dim(),
            nodes: spec.nodes_per_axis()[..spec.dim()].to_vec(),
            components: f.components(),
            values: f.values().to_vec(),
        }
    }

    /// Rebuilds the field on `spec`, checking that the shapes agree.
    pub fn to_field(&self, spec: &GridSpec) -> Result<GridField> {
        if spec.dim() != self.dim || spec.nodes_per_axis()[..self.dim] != self.nodes[..] {
            return Err(HarnessError::Check("snapshot grid does not match the configured grid".into()));
        }
        Ok(GridField::from_values(*spec, self.components, self.values.clone())?)
    }
}

/// Particle snapshot as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSnapshot {
    pub t: f64,
    pub dim: usize,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub jac: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ParticleSnapshot {
    pub fn from_particles(t: f64, parts: &ParticleSet) -> Self {
        Self { t, dim: parts.dim(), q: parts.q.clone(), p: parts.p.clone(), jac: parts.jac.clone(), weights: parts.weights.clone() }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| HarnessError::Check(format!("{v} does not fit a snapshot header")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    out.reserve(8 * vs.len());
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(io_err(path))
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(path: &'a Path, bytes: &'a [u8]) -> Result<Self> {
        let mut c = Self { path, bytes, pos: 0 };
        if c.take(4)? != MAGIC {
            return Err(c.malformed("bad magic"));
        }
        Ok(c)
    }

    fn malformed(&self, message: &str) -> HarnessError {
        HarnessError::Snapshot { path: self.path.to_path_buf(), message: message.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| self.malformed("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| self.malformed("size overflow"))?;
        Ok(self.take(len)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn dim(&mut self) -> Result<usize> {
        match self.u32()? {
            d @ (1 | 2) => Ok(d),
            _ => Err(self.malformed("dimension must be 1 or 2")),
        }
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.malformed("trailing bytes"));
        }
        Ok(())
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(io_err(path))?;
    Ok(bytes)
}

pub fn write_field_binary(path: &Path, snap: &FieldSnapshot) -> Result<()> {
    let mut out = Vec::with_capacity(32 + 8 * snap.values.len());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, snap.dim)?;
    for &n in &snap.nodes {
        put_u32(&mut out, n)?;
    }
    put_u32(&mut out, snap.components)?;
    put_f64s(&mut out, &[snap.t]);
    put_f64s(&mut out, &snap.values);
    write_bytes(path, &out)
}

pub fn read_field_binary(path: &Path) -> Result<FieldSnapshot> {
    let bytes = read_bytes(path)?;
    let mut c = Cursor::new(path, &bytes)?;
    let dim = c.dim()?;
    let nodes = (0..dim).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
    let components = c.u32()?;
    let t = c.f64()?;
    let count = nodes.iter().product::<usize>() * components;
    let values = c.f64s(count)?;
    c.finish()?;
    Ok(FieldSnapshot { t, dim, nodes, components, values })
}

pub fn write_particles_binary(path: &Path, snap: &ParticleSnapshot) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, snap.dim)?;
    put_u32(&mut out, snap.len())?;
    put_f64s(&mut out, &[snap.t]);
    for block in [&snap.q, &snap.p, &snap.jac, &snap.weights] {
        put_f64s(&mut out, block);
    }
    write_bytes(path, &out)
}

pub fn read_particles_binary(path: &Path) -> Result<ParticleSnapshot> {
    let bytes = read_bytes(path)?;
    let mut c = Cursor::new(path, &bytes)?;
    let dim = c.dim()?;
    let n = c.u32()?;
    let t = c.f64()?;
    let q = c.f64s(n * dim)?;
    let p = c.f64s(n * dim)?;
    let jac = c.f64s(n * dim * dim)?;
    let weights = c.f64s(n)?;
    c.finish()?;
    Ok(ParticleSnapshot { t, dim, q, p, jac, weights })
}

fn axis_names(dim: usize) -> &'static [&'static str] {
    &["x", "y"][..dim]
}

/// CSV field snapshot: node coordinates followed by the components.
pub fn write_field_csv(path: &Path, t: f64, f: &GridField) -> Result<()> {
    let spec = f.spec();
    let d = spec.dim();
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let mut header: Vec<String> = axis_names(d).iter().map(|s| s.to_string()).collect();
    header.extend((0..f.components()).map(|c| format!("c{c}")));
    let mut body = format!("# t = {t:?}\n# nodes = {:?}\n{}\n", &spec.nodes_per_axis()[..d], header.join(","));
    for k in 0..spec.num_nodes() {
        let x = spec.node_position(k);
        let row: Vec<String> = x[..d].iter().chain(f.node(k)).map(|v| format!("{v:?}")).collect();
        body.push_str(&row.join(","));
        body.push('\n');
    }
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(io_err(path))
}

pub fn read_field_csv(path: &Path) -> Result<FieldSnapshot> {
    let malformed = |m: &str| HarnessError::Snapshot { path: path.to_path_buf(), message: m.into() };
    let file = File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines();
    let mut next = || lines.next().transpose().map_err(io_err(path));
    let t =
        next()?.and_then(|l| l.strip_prefix("# t = ").and_then(|v| v.parse::<f64>().ok())).ok_or_else(|| malformed("missing time line"))?;
    let nodes: Vec<usize> = next()?
        .and_then(|l| {
            l.strip_prefix("# nodes = ").map(|v| v.trim_matches(|c| c == '[' || c == ']').split(',').map(|s| s.trim().parse()).collect())
        })
        .and_then(|r: std::result::Result<Vec<usize>, _>| r.ok())
        .ok_or_else(|| malformed("missing nodes line"))?;
    let dim = nodes.len();
    if !(dim == 1 || dim == 2) {
        return Err(malformed("dimension must be 1 or 2"));
    }
    let header = next()?.ok_or_else(|| malformed("missing header"))?;
    let cols = header.split(',').count();
    let components = cols.checked_sub(dim).filter(|&c| c > 0).ok_or_else(|| malformed("no value columns"))?;
    let mut values = Vec::new();
    while let Some(line) = next()? {
        let row: Vec<f64> =
            line.split(',').map(|s| s.parse()).collect::<std::result::Result<_, _>>().map_err(|_| malformed("bad number"))?;
        if row.len() != cols {
            return Err(malformed("ragged row"));
        }
        values.extend_from_slice(&row[dim..]);
    }
    if values.len() != nodes.iter().product::<usize>() * components {
        return Err(malformed("wrong number of rows"));
    }
    Ok(FieldSnapshot { t, dim, nodes, components, values })
}

/// CSV particle snapshot: `q*, p*, J*, weight` per row.
pub fn write_particles_csv(path: &Path, snap: &ParticleSnapshot) -> Result<()> {
    let d = snap.dim;
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let mut header: Vec<String> = Vec::new();
    header.extend(axis_names(d).iter().map(|a| format!("q{a}")));
    header.extend(axis_names(d).iter().map(|a| format!("p{a}")));
    header.extend((0..d * d).map(|ij| format!("j{}{}", ij / d, ij % d)));
    header.push("weight".into());
    let mut body = format!("# t = {:?}\n{}\n", snap.t, header.join(","));
    for b in 0..snap.len() {
        let row: Vec<String> = snap.q[b * d..(b + 1) * d]
            .iter()
            .chain(&snap.p[b * d..(b + 1) * d])
            .chain(&snap.jac[b * d * d..(b + 1) * d * d])
            .chain(std::iter::once(&snap.weights[b]))
            .map(|v| format!("{v:?}"))
            .collect();
        body.push_str(&row.join(","));
        body.push('\n');
    }
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(io_err(path))
}

/// File extension used for `format`.
pub fn extension(format: SnapshotFormat) -> &'static str {
    match format {
        SnapshotFormat::Binary => "bin",
        SnapshotFormat::Csv => "csv",
    }
}

pub fn write_field(path: &Path, format: SnapshotFormat, t: f64, f: &GridField) -> Result<()> {
    match format {
        SnapshotFormat::Binary => write_field_binary(path, &FieldSnapshot::from_field(t, f)),
        SnapshotFormat::Csv => write_field_csv(path, t, f),
    }
}

/// Reads a field snapshot, choosing the format from the extension.
pub fn read_field(path: &Path) -> Result<FieldSnapshot> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_field_csv(path),
        _ => read_field_binary(path),
    }
}

pub fn write_particles(path: &Path, format: SnapshotFormat, t: f64, parts: &ParticleSet) -> Result<()> {
    let snap = ParticleSnapshot::from_particles(t, parts);
    match format {
        SnapshotFormat::Binary => write_particles_binary(path, &snap),
        SnapshotFormat::Csv => write_particles_csv(path, &snap),
    }
}
