//! Space-time box lattice and dense fields on it.
//!
//! Space is split into boxes of side `h[k]` along each axis, time into `L`
//! steps of `dt`. A [`GriddedField`] stores one value per (slice, box) for
//! slices `0..=L`, box-major in row-major axis order (axis 0 slowest).
//!
//! Binary layout (all little-endian):
//!
//! ```text
//! magic    8 bytes  b"FPGRID\0\x01"
//! d        u32
//! N[k]     u64 × d      boxes per axis
//! a[k]     f64 × d      lower corner
//! h[k]     f64 × d      box side
//! dt       f64
//! L        u64
//! M        u64          Monte Carlo sample count (0 for solver output)
//! payload  f64 × (L+1)·ΠN
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::sde::BoxDomain;

pub const GRID_MAGIC: &[u8; 8] = b"FPGRID\0\x01";

const LATTICE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    lower: Vec<f64>,
    cells: Vec<usize>,
    h: Vec<f64>,
    dt: f64,
    slices: usize,
}

impl GridSpec {
    /// Splits `domain` into `cells[k]` boxes per axis and `[0, horizon]`
    /// into `slices` steps.
    pub fn new(domain: &BoxDomain, cells: &[usize], horizon: f64, slices: usize) -> Result<Self> {
        if cells.len() != domain.dim() || cells.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "need a positive box count for each of {} axes, got {cells:?}",
                domain.dim()
            )));
        }
        if slices == 0 || !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need a positive horizon and slice count, got T = {horizon}, L = {slices}"
            )));
        }
        let h = domain
            .lower()
            .iter()
            .zip(domain.upper())
            .zip(cells)
            .map(|((a, b), &n)| (b - a) / n as f64)
            .collect();
        Ok(Self {
            lower: domain.lower().to_vec(),
            cells: cells.to_vec(),
            h,
            dt: horizon / slices as f64,
            slices,
        })
    }

    /// Builds a spec from raw header fields.
    pub fn from_parts(lower: Vec<f64>, cells: Vec<usize>, h: Vec<f64>, dt: f64, slices: usize) -> Result<Self> {
        if lower.is_empty() || lower.len() != cells.len() || cells.len() != h.len() {
            return Err(Error::Format("grid axes disagree in length".into()));
        }
        if cells.contains(&0) || h.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Format("grid has empty axes or non-positive box sides".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) || slices == 0 {
            return Err(Error::Format("grid has a non-positive time step or no slices".into()));
        }
        Ok(Self {
            lower,
            cells,
            h,
            dt,
            slices,
        })
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.lower[axis] + self.cells[axis] as f64 * self.h[axis]
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of time steps `L`; slices are indexed `0..=L`.
    pub fn slices(&self) -> usize {
        self.slices
    }

    pub fn horizon(&self) -> f64 {
        self.slices as f64 * self.dt
    }

    pub fn box_count(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.iter().product()
    }

    pub fn value_count(&self) -> usize {
        (self.slices + 1) * self.box_count()
    }

    pub fn slice_time(&self, slice: usize) -> f64 {
        slice as f64 * self.dt
    }

    pub fn domain(&self) -> BoxDomain {
        let upper = (0..self.dim()).map(|k| self.upper(k)).collect();
        BoxDomain::new(self.lower.clone(), upper).expect("grid spans a nondegenerate box")
    }

    /// Whether the grid tiles exactly `domain × [0, horizon]`.
    pub fn covers(&self, domain: &BoxDomain, horizon: f64) -> bool {
        let tol = |scale: f64| 1e-12 * scale.abs().max(1.0);
        domain.dim() == self.dim()
            && (0..self.dim()).all(|k| {
                (self.lower[k] - domain.lower()[k]).abs() <= tol(domain.lower()[k])
                    && (self.upper(k) - domain.upper()[k]).abs() <= tol(domain.upper()[k])
            })
            && (self.horizon() - horizon).abs() <= 1e-9 * horizon
    }

    /// Slice index of a lattice time, tolerating `1e-9` of rounding.
    pub fn slice_of(&self, t: f64) -> Result<usize> {
        let k = (t / self.dt).round();
        if !t.is_finite() || (t - k * self.dt).abs() > LATTICE_TOL {
            return Err(Error::OffLattice { t, dt: self.dt });
        }
        if k < 0.0 || k > self.slices as f64 {
            return Err(Error::TimeOutOfRange {
                t,
                min: 0.0,
                max: self.horizon(),
            });
        }
        Ok(k as usize)
    }

    /// Multi-index of the box containing `y` (floor convention, half-open
    /// boxes), or `None` outside the grid.
    pub fn box_multi_index(&self, y: &[f64], out: &mut [usize]) -> bool {
        for k in 0..self.dim() {
            let v = y[k];
            if !(v >= self.lower[k] && v < self.upper(k)) {
                return false;
            }
            let i = ((v - self.lower[k]) / self.h[k]).floor() as usize;
            out[k] = i.min(self.cells[k] - 1);
        }
        true
    }

    /// Flat (row-major) index of the box containing `y`.
    pub fn box_index(&self, y: &[f64]) -> Option<usize> {
        let mut flat = 0usize;
        for k in 0..self.dim() {
            let v = y[k];
            if !(v >= self.lower[k] && v < self.upper(k)) {
                return None;
            }
            let i = (((v - self.lower[k]) / self.h[k]).floor() as usize).min(self.cells[k] - 1);
            flat = flat * self.cells[k] + i;
        }
        Some(flat)
    }

    pub fn flatten(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(&self.cells)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn unflatten(&self, mut flat: usize, out: &mut [usize]) {
        for k in (0..self.dim()).rev() {
            out[k] = flat % self.cells[k];
            flat /= self.cells[k];
        }
    }

    pub fn center_coord(&self, axis: usize, i: usize) -> f64 {
        self.lower[axis] + (i as f64 + 0.5) * self.h[axis]
    }

    /// Center of the flat box `flat`.
    pub fn box_center(&self, flat: usize, out: &mut [f64]) {
        let mut idx = vec![0; self.dim()];
        self.unflatten(flat, &mut idx);
        for k in 0..self.dim() {
            out[k] = self.center_coord(k, idx[k]);
        }
    }

    /// `⌊(x−a)/h⌋·h + a + h/2` per axis.
    pub fn snap_to_center(&self, x: &[f64], out: &mut [f64]) -> bool {
        let mut idx = vec![0; self.dim()];
        if !self.box_multi_index(x, &mut idx) {
            return false;
        }
        for k in 0..self.dim() {
            out[k] = self.center_coord(k, idx[k]);
        }
        true
    }

    /// `⌊t/δt⌋` clamped to `0..=L`.
    pub fn floor_slice(&self, t: f64) -> usize {
        let k = (t / self.dt).floor();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.slices)
        }
    }

    fn same_shape(&self, other: &GridSpec) -> bool {
        self.cells == other.cells
            && self.slices == other.slices
            && self
                .lower
                .iter()
                .zip(&other.lower)
                .chain(self.h.iter().zip(&other.h))
                .all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(1.0))
            && (self.dt - other.dt).abs() <= 1e-12 * self.dt
    }

    pub fn is_compatible(&self, other: &GridSpec) -> bool {
        self.same_shape(other)
    }
}

/// Dense values on `slices 0..=L × boxes`.
#[derive(Clone, Debug, PartialEq)]
pub struct GriddedField {
    spec: GridSpec,
    values: Vec<f64>,
}

impl GriddedField {
    pub fn zeros(spec: GridSpec) -> Self {
        let n = spec.value_count();
        Self {
            spec,
            values: vec![0.0; n],
        }
    }

    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.value_count() {
            return Err(Error::Shape(format!(
                "field has {} values, grid expects {}",
                values.len(),
                spec.value_count()
            )));
        }
        Ok(Self { spec, values })
    }

    /// Fills every (slice time, box center) with `f`.
    pub fn from_fn(spec: GridSpec, mut f: impl FnMut(f64, &[f64]) -> f64) -> Self {
        let boxes = spec.box_count();
        let mut values = Vec::with_capacity(spec.value_count());
        let mut y = vec![0.0; spec.dim()];
        for n in 0..=spec.slices() {
            let t = spec.slice_time(n);
            for b in 0..boxes {
                spec.box_center(b, &mut y);
                values.push(f(t, &y));
            }
        }
        Self { spec, values }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn slice(&self, n: usize) -> &[f64] {
        let b = self.spec.box_count();
        &self.values[n * b..(n + 1) * b]
    }

    pub fn slice_mut(&mut self, n: usize) -> &mut [f64] {
        let b = self.spec.box_count();
        &mut self.values[n * b..(n + 1) * b]
    }

    pub fn get(&self, slice: usize, flat_box: usize) -> f64 {
        self.values[slice * self.spec.box_count() + flat_box]
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Writes the binary grid format with the given sample count.
    pub fn write_binary<W: Write>(&self, mut w: W, samples: u64) -> Result<()> {
        let s = &self.spec;
        w.write_all(GRID_MAGIC)?;
        w.write_all(&(s.dim() as u32).to_le_bytes())?;
        for &n in &s.cells {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        for &a in &s.lower {
            w.write_all(&a.to_le_bytes())?;
        }
        for &h in &s.h {
            w.write_all(&h.to_le_bytes())?;
        }
        w.write_all(&s.dt.to_le_bytes())?;
        w.write_all(&(s.slices as u64).to_le_bytes())?;
        w.write_all(&samples.to_le_bytes())?;
        let mut buf = Vec::with_capacity(8 * 4096);
        for chunk in self.values.chunks(4096) {
            buf.clear();
            for v in chunk {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the binary grid format, returning the field and its sample count.
    pub fn read_binary<R: Read>(mut r: R) -> Result<(Self, u64)> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != GRID_MAGIC {
            return Err(Error::Format("bad grid magic".into()));
        }
        let d = read_u32(&mut r)? as usize;
        if d == 0 || d > 16 {
            return Err(Error::Format(format!("implausible grid dimension {d}")));
        }
        let cells = (0..d)
            .map(|_| read_u64(&mut r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let lower = (0..d).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let h = (0..d).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let dt = read_f64(&mut r)?;
        let slices = read_u64(&mut r)? as usize;
        let samples = read_u64(&mut r)?;
        let spec = GridSpec::from_parts(lower, cells, h, dt, slices)?;
        let n = spec.value_count();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok((Self { spec, values }, samples))
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}
