//! Crank-Nicolson ground truth and L² error reports.
//!
//! The solver works on a node lattice aligned with the box centers of the
//! comparison grid. With refinement `r`, fine node `r·k` sits on coarse
//! center `k` and fine step `r·n` lands on coarse slice `n`, so the coarse
//! solution is read off by subsampling. Optional padding extends the lattice
//! beyond the domain; zero Dirichlet values hold one node past the last
//! unknown on every side.

use std::io::{Read, Write};

use crate::density::InitialDistribution;
use crate::error::{Error, Result};
use crate::grid::{GridSpec, GriddedField};
use crate::network::NetworkState;
use crate::sde::SdeModel;

/// Largest 2D system solved directly under [`CnMethod::Auto`].
pub const AUTO_DIRECT_LIMIT: usize = 250 * 250;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CnMethod {
    /// Banded LU of the full Crank-Nicolson system.
    Direct,
    /// Peaceman-Rachford splitting, tridiagonal line solves.
    Adi,
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CnOptions {
    /// Fine nodes per coarse cell, in space and time.
    pub refine: usize,
    /// Coarse cells of padding beyond the domain on each side.
    pub pad_cells: usize,
    pub method: CnMethod,
    /// Leading fine steps taken as two backward-Euler half steps each, to
    /// damp the stiff modes excited by non-smooth data (Rannacher startup).
    pub smoothing_steps: usize,
}

impl Default for CnOptions {
    fn default() -> Self {
        Self {
            refine: 1,
            pad_cells: 0,
            method: CnMethod::Auto,
            smoothing_steps: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSolution {
    pub model: String,
    field: GriddedField,
}

impl ReferenceSolution {
    pub fn new(model: impl Into<String>, field: GriddedField) -> Self {
        Self {
            model: model.into(),
            field,
        }
    }

    pub fn spec(&self) -> &GridSpec {
        self.field.spec()
    }

    pub fn field(&self) -> &GriddedField {
        &self.field
    }

    pub fn into_field(self) -> GriddedField {
        self.field
    }

    /// Same layout as a density grid, with a sample count of zero.
    pub fn write_binary<W: Write>(&self, w: W) -> Result<()> {
        self.field.write_binary(w, 0)
    }

    pub fn read_binary<R: Read>(r: R, model: impl Into<String>) -> Result<Self> {
        let (field, _) = GriddedField::read_binary(r)?;
        Ok(Self::new(model, field))
    }
}

/// Row-wise band storage with room for pivoting fill-in.
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    a: Vec<f64>,
    piv: Vec<usize>,
}

impl BandedLu {
    /// Empty `n × n` matrix with `kl` sub- and `ku` super-diagonals.
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            a: vec![0.0; n * width],
            piv: Vec::new(),
        }
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.width + (j + self.kl - i)
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "entry ({i}, {j}) outside the band");
        let k = self.idx(i, j);
        self.a[k] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "entry ({i}, {j}) outside the band");
        let k = self.idx(i, j);
        self.a[k] += v;
    }

    /// In-place LU with partial pivoting.
    pub fn factor(&mut self) -> Result<()> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        self.piv = vec![0; n];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.a[self.idx(k, k)].abs();
            for i in k + 1..=last {
                let v = self.a[self.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular(k));
            }
            self.piv[k] = p;
            let jmax = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let (x, y) = (self.idx(k, j), self.idx(p, j));
                    self.a.swap(x, y);
                }
            }
            let pivot = self.a[self.idx(k, k)];
            for i in k + 1..=last {
                let ik = self.idx(i, k);
                let l = self.a[ik] / pivot;
                self.a[ik] = l;
                if l == 0.0 {
                    continue;
                }
                for j in k + 1..=jmax {
                    let kj = self.a[self.idx(k, j)];
                    let ij = self.idx(i, j);
                    self.a[ij] -= l * kj;
                }
            }
        }
        Ok(())
    }

    /// Solves in place after [`BandedLu::factor`].
    pub fn solve(&self, b: &mut [f64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        assert_eq!(b.len(), n);
        for k in 0..n {
            b.swap(k, self.piv[k]);
            let bk = b[k];
            for i in k + 1..=(k + kl).min(n - 1) {
                b[i] -= self.a[self.idx(i, k)] * bk;
            }
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..=(i + kl + ku).min(n - 1) {
                s -= self.a[self.idx(i, j)] * b[j];
            }
            b[i] = s / self.a[self.idx(i, i)];
        }
    }
}

/// Node lattice of the solver.
struct Lattice {
    dim: usize,
    nodes: Vec<usize>,
    /// Node index of coarse center 0 on each axis.
    shift: Vec<usize>,
    origin: Vec<f64>,
    h: Vec<f64>,
    strides: Vec<usize>,
}

impl Lattice {
    fn new(spec: &GridSpec, opts: &CnOptions) -> Self {
        let d = spec.dim();
        let r = opts.refine;
        let extra = r * opts.pad_cells + r / 2;
        let nodes: Vec<usize> = spec.cells().iter().map(|&n| r * (n - 1) + 1 + 2 * extra).collect();
        let mut strides = vec![1; d];
        for k in (0..d.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * nodes[k + 1];
        }
        Self {
            dim: d,
            shift: vec![extra; d],
            origin: (0..d).map(|k| spec.center_coord(k, 0)).collect(),
            h: spec.h().iter().map(|h| h / r as f64).collect(),
            nodes,
            strides,
        }
    }

    fn len(&self) -> usize {
        self.nodes.iter().product()
    }

    fn coord(&self, flat: usize, out: &mut [f64]) {
        for k in 0..self.dim {
            let m = (flat / self.strides[k]) % self.nodes[k];
            out[k] = self.origin[k] + (m as f64 - self.shift[k] as f64) * self.h[k];
        }
    }

    fn index_on_axis(&self, flat: usize, k: usize) -> usize {
        (flat / self.strides[k]) % self.nodes[k]
    }
}

/// Per-node coefficients of the semi-discrete operator.
struct Operator {
    /// Zero-order coefficient `−div f`, per node.
    zero: Vec<f64>,
    /// `−f_k`, per node and axis (node-major).
    drift: Vec<f64>,
    dmat: Vec<f64>,
}

impl Operator {
    fn new(model: &SdeModel, lat: &Lattice) -> Result<Self> {
        let d = lat.dim;
        let dmat = model
            .diffusion_matrix()
            .ok_or_else(|| Error::Unsupported("Crank-Nicolson needs a constant diffusion matrix".into()))?
            .to_vec();
        let n = lat.len();
        let mut zero = vec![0.0; n];
        let mut drift = vec![0.0; n * d];
        let mut x = vec![0.0; d];
        let mut f = vec![0.0; d];
        for p in 0..n {
            lat.coord(p, &mut x);
            model.drift(&x, &mut f);
            zero[p] = -model.drift_divergence(&x);
            for k in 0..d {
                drift[p * d + k] = -f[k];
            }
        }
        Ok(Self { zero, drift, dmat })
    }

    /// Left, center and right coefficients of the axis-`k` part of the
    /// operator at node `p`, carrying `zero_share` of the zero-order term.
    fn axis_stencil(&self, lat: &Lattice, p: usize, k: usize, zero_share: f64) -> [f64; 3] {
        let d = lat.dim;
        let h = lat.h[k];
        let adv = self.drift[p * d + k] / (2.0 * h);
        let dif = 0.5 * self.dmat[k * d + k] / (h * h);
        [-adv + dif, zero_share * self.zero[p] - 2.0 * dif, adv + dif]
    }

    fn cross_coeff(&self, lat: &Lattice, i: usize, j: usize) -> f64 {
        let d = lat.dim;
        0.5 * (self.dmat[i * d + j] + self.dmat[j * d + i]) / (4.0 * lat.h[i] * lat.h[j])
    }

    /// `out = u + s·A u` for the full operator.
    fn apply_full(&self, lat: &Lattice, u: &[f64], s: f64, out: &mut [f64]) {
        let d = lat.dim;
        for p in 0..u.len() {
            let mut acc = 0.0;
            for k in 0..d {
                let c = self.axis_stencil(lat, p, k, 1.0 / d as f64);
                acc += self.axis_apply(lat, u, p, k, &c);
            }
            for i in 0..d {
                for j in i + 1..d {
                    let c = self.cross_coeff(lat, i, j);
                    if c != 0.0 {
                        acc += c * self.cross_apply(lat, u, p, i, j);
                    }
                }
            }
            out[p] = u[p] + s * acc;
        }
    }

    fn axis_apply(&self, lat: &Lattice, u: &[f64], p: usize, k: usize, c: &[f64; 3]) -> f64 {
        let m = lat.index_on_axis(p, k);
        let st = lat.strides[k];
        let left = if m > 0 { u[p - st] } else { 0.0 };
        let right = if m + 1 < lat.nodes[k] { u[p + st] } else { 0.0 };
        c[0] * left + c[1] * u[p] + c[2] * right
    }

    fn cross_apply(&self, lat: &Lattice, u: &[f64], p: usize, i: usize, j: usize) -> f64 {
        let (mi, mj) = (lat.index_on_axis(p, i), lat.index_on_axis(p, j));
        let (si, sj) = (lat.strides[i], lat.strides[j]);
        let get = |di: isize, dj: isize| {
            let a = mi as isize + di;
            let b = mj as isize + dj;
            if a < 0 || b < 0 || a >= lat.nodes[i] as isize || b >= lat.nodes[j] as isize {
                0.0
            } else {
                u[(p as isize + di * si as isize + dj * sj as isize) as usize]
            }
        };
        get(1, 1) - get(1, -1) - get(-1, 1) + get(-1, -1)
    }
}

/// Solves the Fokker-Planck equation by Crank-Nicolson on the lattice of
/// `spec`, starting from `u₀` at the nodes.
pub fn crank_nicolson_solve(
    model: &SdeModel,
    dist: &InitialDistribution,
    spec: &GridSpec,
    opts: &CnOptions,
) -> Result<ReferenceSolution> {
    let d = spec.dim();
    if d != model.dim() || d != dist.dim() {
        return Err(Error::Shape("model, distribution and grid dimensions differ".into()));
    }
    if !(1..=2).contains(&d) {
        return Err(Error::Unsupported(format!("Crank-Nicolson in {d} dimensions")));
    }
    if opts.refine == 0 {
        return Err(Error::InvalidArgument("refinement must be at least 1".into()));
    }
    let lat = Lattice::new(spec, opts);
    let op = Operator::new(model, &lat)?;
    let n = lat.len();
    let r = opts.refine;
    let dt = spec.dt() / r as f64;

    let cross = d == 2 && op.cross_coeff(&lat, 0, 1) != 0.0;
    let method = match opts.method {
        _ if d == 1 => CnMethod::Direct,
        CnMethod::Auto if cross || n <= AUTO_DIRECT_LIMIT => CnMethod::Direct,
        CnMethod::Auto => CnMethod::Adi,
        m => m,
    };
    if method == CnMethod::Adi && cross {
        return Err(Error::Unsupported("ADI splitting needs a diagonal diffusion matrix".into()));
    }

    let mut u = vec![0.0; n];
    let mut x = vec![0.0; d];
    for (p, v) in u.iter_mut().enumerate() {
        lat.coord(p, &mut x);
        *v = dist.density(&x);
    }
    let scale = u.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);

    let mut field = GriddedField::zeros(spec.clone());
    extract(&lat, spec, r, &u, field.slice_mut(0));

    let mut scheme = match method {
        CnMethod::Direct => Scheme::Direct {
            lu: assemble_direct(&op, &lat, dt)?,
            rhs: vec![0.0; n],
        },
        _ => Scheme::Adi(Adi::new(&op, &lat, dt)?),
    };

    for slice in 1..=spec.slices() {
        for sub in 0..r {
            let fine_step = (slice - 1) * r + sub;
            if fine_step < opts.smoothing_steps {
                scheme.implicit_half_step(&mut u);
                scheme.implicit_half_step(&mut u);
            } else {
                scheme.step(&op, &lat, dt, &mut u);
            }
            if u.iter().any(|v| !v.is_finite() || v.abs() > 1e6 * scale) {
                return Err(Error::Unstable {
                    step: (slice - 1) * r + sub + 1,
                });
            }
        }
        extract(&lat, spec, r, &u, field.slice_mut(slice));
    }
    Ok(ReferenceSolution::new(model.name(), field))
}

enum Scheme {
    Direct { lu: BandedLu, rhs: Vec<f64> },
    Adi(Adi),
}

impl Scheme {
    fn step(&mut self, op: &Operator, lat: &Lattice, dt: f64, u: &mut Vec<f64>) {
        match self {
            Scheme::Direct { lu, rhs } => {
                op.apply_full(lat, u, 0.5 * dt, rhs);
                lu.solve(rhs);
                std::mem::swap(u, rhs);
            }
            Scheme::Adi(adi) => adi.step(op, lat, dt, u),
        }
    }

    /// `(I − (dt/2)·A) v = u`: backward Euler over half a step, sharing the
    /// Crank-Nicolson factorization (split into line solves under ADI).
    fn implicit_half_step(&mut self, u: &mut Vec<f64>) {
        match self {
            Scheme::Direct { lu, .. } => lu.solve(u),
            Scheme::Adi(adi) => {
                for axis in 0..2 {
                    adi.line_solve(axis, u);
                }
            }
        }
    }
}

fn extract(lat: &Lattice, spec: &GridSpec, r: usize, u: &[f64], out: &mut [f64]) {
    let d = spec.dim();
    let mut multi = vec![0usize; d];
    for (b, o) in out.iter_mut().enumerate() {
        spec.unflatten(b, &mut multi);
        let p: usize = (0..d).map(|k| (lat.shift[k] + r * multi[k]) * lat.strides[k]).sum();
        *o = u[p];
    }
}

/// `I − (dt/2)·A` as a banded matrix, factored.
fn assemble_direct(op: &Operator, lat: &Lattice, dt: f64) -> Result<BandedLu> {
    let d = lat.dim;
    let n = lat.len();
    let bw = if d == 1 { 1 } else { lat.strides[0] + 1 };
    let mut m = BandedLu::zeros(n, bw, bw);
    let s = -0.5 * dt;
    for p in 0..n {
        m.add(p, p, 1.0);
        for k in 0..d {
            let c = op.axis_stencil(lat, p, k, 1.0 / d as f64);
            let mk = lat.index_on_axis(p, k);
            let st = lat.strides[k];
            m.add(p, p, s * c[1]);
            if mk > 0 {
                m.add(p, p - st, s * c[0]);
            }
            if mk + 1 < lat.nodes[k] {
                m.add(p, p + st, s * c[2]);
            }
        }
        if d == 2 {
            let c = op.cross_coeff(lat, 0, 1);
            if c != 0.0 {
                let (m0, m1) = (lat.index_on_axis(p, 0), lat.index_on_axis(p, 1));
                let s0 = lat.strides[0];
                for (di, dj, sign) in [(1isize, 1isize, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)] {
                    let a = m0 as isize + di;
                    let b = m1 as isize + dj;
                    if a >= 0 && b >= 0 && a < lat.nodes[0] as isize && b < lat.nodes[1] as isize {
                        let q = (p as isize + di * s0 as isize + dj) as usize;
                        m.add(p, q, s * sign * c);
                    }
                }
            }
        }
    }
    m.factor()?;
    Ok(m)
}

    /// Peaceman-Rachford: `(I − s A₀) u* = (I + s A₁) uⁿ`, then
/// `(I − s A₁) uⁿ⁺¹ = (I + s A₀) u*`, with the zero-order term split evenly
/// between the two axes.
struct Adi {
    /// One factored tridiagonal system per lattice line along each axis.
    lines: [Vec<(Vec<usize>, BandedLu)>; 2],
    tmp: Vec<f64>,
    buf: Vec<f64>,
}

impl Adi {
    fn new(op: &Operator, lat: &Lattice, dt: f64) -> Result<Self> {
        if lat.dim != 2 {
            return Err(Error::Unsupported("ADI is implemented for two dimensions".into()));
        }
        let s = 0.5 * dt;
        let n = lat.len();
        let mut lines: [Vec<(Vec<usize>, BandedLu)>; 2] = [Vec::new(), Vec::new()];
        for (k, axis_lines) in lines.iter_mut().enumerate() {
            for start in (0..n).filter(|&p| lat.index_on_axis(p, k) == 0) {
                let idx: Vec<usize> = (0..lat.nodes[k]).map(|m| start + m * lat.strides[k]).collect();
                let mut m = BandedLu::zeros(idx.len(), 1, 1);
                for (q, &p) in idx.iter().enumerate() {
                    let c = op.axis_stencil(lat, p, k, 0.5);
                    m.add(q, q, 1.0 - s * c[1]);
                    if q > 0 {
                        m.add(q, q - 1, -s * c[0]);
                    }
                    if q + 1 < idx.len() {
                        m.add(q, q + 1, -s * c[2]);
                    }
                }
                m.factor()?;
                axis_lines.push((idx, m));
            }
        }
        Ok(Self {
            lines,
            tmp: vec![0.0; n],
            buf: Vec::new(),
        })
    }

    fn step(&mut self, op: &Operator, lat: &Lattice, dt: f64, u: &mut [f64]) {
        let s = 0.5 * dt;
        for (implicit, explicit) in [(0, 1), (1, 0)] {
            for p in 0..u.len() {
                let c = op.axis_stencil(lat, p, explicit, 0.5);
                self.tmp[p] = u[p] + s * op.axis_apply(lat, u, p, explicit, &c);
            }
            u.copy_from_slice(&self.tmp);
            self.line_solve(implicit, u);
        }
    }

    /// Solves the implicit factor of `axis` in place.
    fn line_solve(&mut self, axis: usize, u: &mut [f64]) {
        for (idx, m) in &self.lines[axis] {
            self.buf.clear();
            self.buf.extend(idx.iter().map(|&p| u[p]));
            m.solve(&mut self.buf);
            for (&p, &v) in idx.iter().zip(&self.buf) {
                u[p] = v;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    pub per_slice: Vec<f64>,
    pub aggregate: f64,
    pub max_abs: f64,
    /// Slice and box center of the largest pointwise difference.
    pub max_location: (usize, Vec<f64>),
}

/// Maps coarse box `k` to the coincident fine box, if the refinement is odd.
fn refinement(coarse: &GridSpec, fine: &GridSpec) -> Result<(Vec<usize>, usize)> {
    let err = |m: &str| Err(Error::IncompatibleGrids(m.into()));
    if coarse.dim() != fine.dim() {
        return err("dimensions differ");
    }
    let mut q = Vec::with_capacity(coarse.dim());
    for k in 0..coarse.dim() {
        let (nc, nf) = (coarse.cells()[k], fine.cells()[k]);
        if nf % nc != 0 || (nf / nc) % 2 == 0 {
            return err("spatial refinement must be an odd integer");
        }
        if (coarse.lower()[k] - fine.lower()[k]).abs() > 1e-9 * coarse.h()[k].max(1.0)
            || (coarse.upper(k) - fine.upper(k)).abs() > 1e-9 * coarse.h()[k].max(1.0)
        {
            return err("domains differ");
        }
        q.push(nf / nc);
    }
    let ratio = coarse.dt() / fine.dt();
    let qt = ratio.round();
    if qt < 1.0 || (ratio - qt).abs() > 1e-6 || fine.slices() != coarse.slices() * qt as usize {
        return err("time lattices do not nest");
    }
    Ok((q, qt as usize))
}

/// L² distance between two gridded functions; per slice
/// `√(Σ (a − b)² h^d)`, aggregated as `√(Σ eₙ² δt)`. A finer grid is
/// subsampled at the coarse box centers. With `slice` set, only that slice
/// is compared and the aggregate equals its error.
pub fn l2_error(a: &GriddedField, b: &GriddedField, slice: Option<usize>) -> Result<ErrorReport> {
    let (coarse, fine) = if a.spec().value_count() <= b.spec().value_count() { (a, b) } else { (b, a) };
    let cs = coarse.spec();
    let (q, qt) = if cs == fine.spec() {
        (vec![1; cs.dim()], 1)
    } else {
        refinement(cs, fine.spec())?
    };
    let d = cs.dim();
    let slices: Vec<usize> = match slice {
        Some(n) if n > cs.slices() => {
            return Err(Error::InvalidArgument(format!("slice {n} beyond {}", cs.slices())))
        }
        Some(n) => vec![n],
        None => (0..=cs.slices()).collect(),
    };
    let vol = cs.cell_volume();
    let mut multi = vec![0usize; d];
    let mut per_slice = Vec::with_capacity(slices.len());
    let (mut max_abs, mut max_at) = (0.0f64, (0usize, 0usize));
    for &n in &slices {
        let mut sum = 0.0;
        for bx in 0..cs.box_count() {
            cs.unflatten(bx, &mut multi);
            let fine_multi: Vec<usize> = (0..d).map(|k| q[k] * multi[k] + (q[k] - 1) / 2).collect();
            let fb = fine.spec().flatten(&fine_multi);
            let diff = coarse.get(n, bx) - fine.get(n * qt, fb);
            sum += diff * diff;
            if diff.abs() > max_abs {
                max_abs = diff.abs();
                max_at = (n, bx);
            }
        }
        per_slice.push((sum * vol).sqrt());
    }
    let aggregate = if slice.is_some() {
        per_slice[0]
    } else {
        (per_slice.iter().map(|e| e * e).sum::<f64>() * cs.dt()).sqrt()
    };
    let mut center = vec![0.0; d];
    cs.box_center(max_at.1, &mut center);
    Ok(ErrorReport {
        per_slice,
        aggregate,
        max_abs,
        max_location: (max_at.0, center),
    })
}

/// Aggregate L² norm, in the same metric as [`l2_error`].
pub fn l2_norm(a: &GriddedField) -> f64 {
    let zero = GriddedField::zeros(a.spec().clone());
    l2_error(a, &zero, None).map(|r| r.aggregate).unwrap_or(f64::NAN)
}

/// Network values at every slice time and box center.
pub fn evaluate_network_on_grid(state: &NetworkState, spec: &GridSpec) -> Result<GriddedField> {
    let d = spec.dim();
    if state.dim() != d {
        return Err(Error::Shape(format!("network is {}-dimensional, grid {d}", state.dim())));
    }
    let boxes = spec.box_count();
    let total = spec.value_count();
    let mut values = Vec::with_capacity(total);
    let mut inputs = Vec::new();
    let mut center = vec![0.0; d];
    const CHUNK: usize = 4096;
    let mut flat = 0;
    while flat < total {
        inputs.clear();
        let end = (flat + CHUNK).min(total);
        for i in flat..end {
            inputs.push(spec.slice_time(i / boxes));
            spec.box_center(i % boxes, &mut center);
            inputs.extend_from_slice(&center);
        }
        values.extend(state.forward_batch(&inputs));
        flat = end;
    }
    GriddedField::from_values(spec.clone(), values)
}
