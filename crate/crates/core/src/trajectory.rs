//! Uniform-grid trajectories and their on-disk formats.
//!
//! CSV: header `time,<name>1,...,<name>k`, one row per grid node, floats
//! written with 17 significant digits so a read-back is exact.
//!
//! Binary block (all little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic, "TRJ1" (trajectory) or "MUS1" (invariant-measure samples)
//! 4       4     u32 dims, state dimension k
//! 8       8     f64 t0
//! 16      8     f64 dt
//! 24      8     f64 frame code: 0 = slow time t, 1 = fast time tau
//! 32      ...   f64 states, row-major, rows = remaining_bytes / (8 k)
//! ```
//!
//! For "MUS1" blocks `dt` is the fast-time spacing between samples.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const TRAJECTORY_MAGIC: [u8; 4] = *b"TRJ1";
pub const MU_SAMPLES_MAGIC: [u8; 4] = *b"MUS1";

/// Which clock a grid is labelled in: slow time `t` or fast time
/// `tau = t / eps^2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeFrame {
    Slow,
    Fast,
}

impl TimeFrame {
    fn code(self) -> f64 {
        match self {
            TimeFrame::Slow => 0.0,
            TimeFrame::Fast => 1.0,
        }
    }

    fn from_code(code: f64) -> Result<Self> {
        if code == 0.0 {
            Ok(TimeFrame::Slow)
        } else if code == 1.0 {
            Ok(TimeFrame::Fast)
        } else {
            Err(Error::Format(format!("unknown time-frame code {code}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryGrid {
    pub t0: f64,
    pub dt: f64,
    pub frame: TimeFrame,
    dim: usize,
    data: Vec<f64>,
}

impl TrajectoryGrid {
    /// Empty grid with room for `capacity` states.
    pub fn with_capacity(t0: f64, dt: f64, dim: usize, frame: TimeFrame, capacity: usize) -> Self {
        TrajectoryGrid {
            t0,
            dt,
            frame,
            dim,
            data: Vec::with_capacity(capacity * dim),
        }
    }

    pub fn from_rows(t0: f64, dt: f64, frame: TimeFrame, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or_else(|| Error::Input("no states".into()))?;
        let mut grid = TrajectoryGrid::with_capacity(t0, dt, dim, frame, rows.len());
        for r in rows {
            grid.push(r)?;
        }
        grid.validate()?;
        Ok(grid)
    }

    /// Grid from a flat row-major buffer.
    pub fn from_flat(t0: f64, dt: f64, frame: TimeFrame, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Format(format!(
                "{} values do not split into rows of {dim}",
                data.len()
            )));
        }
        let grid = TrajectoryGrid {
            t0,
            dt,
            frame,
            dim,
            data,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Checks the structural invariants: positive step, at least one state,
    /// finite entries.
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Input(format!("grid step must be positive, got {}", self.dt)));
        }
        if self.is_empty() {
            return Err(Error::Input("trajectory has no states".into()));
        }
        crate::ensure_finite(&self.data, "trajectory")
    }

    pub fn push(&mut self, state: &[f64]) -> Result<()> {
        if state.len() != self.dim {
            return Err(Error::Dimension {
                context: "trajectory push",
                expected: self.dim,
                got: state.len(),
            });
        }
        self.data.extend_from_slice(state);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.len().saturating_sub(1))
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Component `j` as a column.
    pub fn component(&self, j: usize) -> Vec<f64> {
        self.states().map(|s| s[j]).collect()
    }

    /// Index of the grid node closest to time `t`.
    pub fn index_of(&self, t: f64) -> usize {
        let i = ((t - self.t0) / self.dt).round().max(0.0) as usize;
        i.min(self.len() - 1)
    }

    /// Pointwise max-norm distance `sup_i |a_i - b_i|`; the grids must have
    /// the same shape.
    pub fn sup_distance(&self, other: &TrajectoryGrid) -> Result<f64> {
        if self.dim != other.dim || self.len() != other.len() {
            return Err(Error::Input(format!(
                "grid shapes differ: {}x{} vs {}x{}",
                self.len(),
                self.dim,
                other.len(),
                other.dim
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn write_csv<W: Write>(&self, out: W, component_name: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["time".to_string()];
        header.extend((1..=self.dim).map(|j| format!("{component_name}{j}")));
        w.write_record(&header)?;
        let mut row = Vec::with_capacity(self.dim + 1);
        for (i, s) in self.states().enumerate() {
            row.clear();
            row.push(fmt_f64(self.time(i)));
            row.extend(s.iter().map(|&v| fmt_f64(v)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a CSV written by [`write_csv`](Self::write_csv). The step is
    /// recovered from the first two time stamps.
    pub fn read_csv<R: Read>(input: R, frame: TimeFrame) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut times = Vec::new();
        let mut data = Vec::new();
        let mut dim = None;
        for rec in r.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Format(e.to_string())))
                .collect::<Result<_>>()?;
            if vals.len() < 2 {
                return Err(Error::Format("row without state columns".into()));
            }
            match dim {
                None => dim = Some(vals.len() - 1),
                Some(d) if d != vals.len() - 1 => {
                    return Err(Error::Format("ragged CSV rows".into()));
                }
                _ => {}
            }
            times.push(vals[0]);
            data.extend_from_slice(&vals[1..]);
        }
        let dim = dim.ok_or_else(|| Error::Format("empty CSV".into()))?;
        let t0 = times[0];
        let dt = if times.len() > 1 { times[1] - times[0] } else { 1.0 };
        TrajectoryGrid::from_flat(t0, dt, frame, dim, data)
    }

    pub fn write_binary<W: Write>(&self, out: W) -> Result<()> {
        write_block(out, TRAJECTORY_MAGIC, self)
    }

    pub fn read_binary<R: Read>(input: R) -> Result<Self> {
        let (magic, grid) = read_block(input)?;
        if magic != TRAJECTORY_MAGIC {
            return Err(Error::Format(format!("expected TRJ1 block, found {:?}", magic)));
        }
        Ok(grid)
    }

    pub fn save_csv(&self, path: &Path, component_name: &str) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?), component_name)
    }

    pub fn save_binary(&self, path: &Path) -> Result<()> {
        self.write_binary(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

/// Formats with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn write_block<W: Write>(mut out: W, magic: [u8; 4], grid: &TrajectoryGrid) -> Result<()> {
    let dims = u32::try_from(grid.dim).map_err(|_| Error::Input("dimension exceeds u32".into()))?;
    out.write_all(&magic)?;
    out.write_all(&dims.to_le_bytes())?;
    for v in [grid.t0, grid.dt, grid.frame.code()] {
        out.write_all(&v.to_le_bytes())?;
    }
    for v in &grid.data {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn read_block<R: Read>(mut input: R) -> Result<([u8; 4], TrajectoryGrid)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 32 {
        return Err(Error::Format("binary block shorter than its header".into()));
    }
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&bytes[..4]);
    if magic != TRAJECTORY_MAGIC && magic != MU_SAMPLES_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", magic)));
    }
    let dims = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let f = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let (t0, dt, frame) = (f(8), f(16), TimeFrame::from_code(f(24))?);
    let payload = &bytes[32..];
    if dims == 0 || payload.len() % (8 * dims) != 0 {
        return Err(Error::Format(format!(
            "payload of {} bytes is not a whole number of {dims}-dim rows",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((magic, TrajectoryGrid::from_flat(t0, dt, frame, dims, data)?))
}
