//! Residual points 𝔛 and collocation points 𝔜.
//!
//! Residual points only enter the PDE residual. Collocation points carry a
//! target density: `u₀(y)` for the `I_Y` initial draws at `t = 0`, and the
//! Monte Carlo estimate for the rest, which always sit at box centers on the
//! time lattice.

use std::io::Write;

use rand::Rng;

use crate::density::{lookup_density, rejection_sample_into, DensityGrid, InitialDistribution};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::rng::{stream_rng, SimRng};
use crate::sde::SdeModel;

/// Attempts per point before an out-of-domain trajectory endpoint is fatal.
pub const ENDPOINT_RETRIES: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub enum AnchorSelection {
    /// Every `stride`-th box center along each axis, centered in the grid.
    Grid { stride: usize },
    /// Mixed uniform / trajectory sampling with `t` pinned to the anchor.
    UniformPlusDensity,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SamplingMode {
    Standard,
    Anchor {
        times: Vec<f64>,
        selection: AnchorSelection,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplePlan {
    pub mode: SamplingMode,
    /// Fraction of Monte Carlo collocation points drawn uniformly.
    pub uniform_fraction: f64,
    /// Fraction of residual points drawn uniformly.
    pub residual_uniform_fraction: f64,
    pub residual_count: usize,
    /// Purely uniform residual points appended after the `residual_count`
    /// mixed ones.
    pub extra_uniform_residual: usize,
    /// `N_Y`, including the `I_Y` initial points.
    pub data_count: usize,
    pub initial_count: usize,
    pub seed: u64,
}

impl SamplePlan {
    pub fn standard(residual_count: usize, data_count: usize, initial_count: usize, seed: u64) -> Self {
        Self {
            mode: SamplingMode::Standard,
            uniform_fraction: 0.5,
            residual_uniform_fraction: 1.0,
            residual_count,
            extra_uniform_residual: 0,
            data_count,
            initial_count,
            seed,
        }
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        let frac_ok = |a: f64| (0.0..=1.0).contains(&a);
        if !frac_ok(self.uniform_fraction) || !frac_ok(self.residual_uniform_fraction) {
            return Err(Error::InvalidPlan(format!(
                "uniform fractions {} / {} must lie in [0, 1]",
                self.uniform_fraction, self.residual_uniform_fraction
            )));
        }
        if self.initial_count > self.data_count {
            return Err(Error::InvalidPlan(format!(
                "I_Y = {} exceeds N_Y = {}",
                self.initial_count, self.data_count
            )));
        }
        if let SamplingMode::Anchor { times, selection } = &self.mode {
            if times.is_empty() {
                return Err(Error::InvalidPlan("anchor mode needs at least one anchor time".into()));
            }
            if times.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidPlan("anchor times must be strictly increasing".into()));
            }
            for &t in times {
                match grid.slice_of(t) {
                    Ok(k) if k >= 1 => {}
                    _ => {
                        return Err(Error::InvalidPlan(format!(
                            "anchor time {t} is not a lattice time in (0, {}]",
                            grid.horizon()
                        )))
                    }
                }
            }
            if let AnchorSelection::Grid { stride } = selection {
                if *stride == 0 {
                    return Err(Error::InvalidPlan("anchor grid stride must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualPoint {
    pub t: f64,
    pub x: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataKind {
    Initial,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataPoint {
    pub t: f64,
    pub y: Vec<f64>,
    pub target: f64,
    pub kind: DataKind,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointSet {
    pub residual: Vec<ResidualPoint>,
    pub data: Vec<DataPoint>,
}

impl PointSet {
    pub fn initial_count(&self) -> usize {
        self.data.iter().filter(|p| p.kind == DataKind::Initial).count()
    }

    /// CSV with columns `kind, t, x0.., target`; residual rows leave the
    /// target empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self
            .residual
            .first()
            .map(|p| p.x.len())
            .or_else(|| self.data.first().map(|p| p.y.len()))
            .unwrap_or(0);
        let mut header = String::from("kind,t");
        for k in 0..d {
            header.push_str(&format!(",x{k}"));
        }
        header.push_str(",target");
        writeln!(w, "{header}")?;
        for p in &self.residual {
            let coords: Vec<String> = p.x.iter().map(|v| v.to_string()).collect();
            writeln!(w, "residual,{},{},", p.t, coords.join(","))?;
        }
        for p in &self.data {
            let kind = match p.kind {
                DataKind::Initial => "initial",
                DataKind::MonteCarlo => "monte_carlo",
            };
            let coords: Vec<String> = p.y.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{kind},{},{},{}", p.t, coords.join(","), p.target)?;
        }
        Ok(())
    }
}

struct Context<'a> {
    model: &'a SdeModel,
    dist: &'a InitialDistribution,
    grid: &'a DensityGrid,
    rng: SimRng,
}

impl Context<'_> {
    fn spec(&self) -> &GridSpec {
        self.grid.spec()
    }

    /// Endpoint of a trajectory run `slice` steps from a fresh initial draw,
    /// retried while it lands outside the domain.
    fn trajectory_endpoint(&mut self, slice: usize) -> Result<Vec<f64>> {
        let dt = self.spec().dt();
        let mut x = vec![0.0; self.model.dim()];
        let mut stepper = self.model.stepper(dt);
        for _ in 0..ENDPOINT_RETRIES {
            rejection_sample_into(self.dist, self.model.domain(), &mut self.rng, &mut x)?;
            for step in 1..=slice {
                if !stepper.step(&mut x, &mut self.rng) {
                    return Err(Error::Divergence { step, state: x });
                }
            }
            if self.model.domain().contains(&x) && self.spec().box_index(&x).is_some() {
                return Ok(x);
            }
        }
        Err(Error::EndpointRetries(ENDPOINT_RETRIES))
    }

    fn uniform_point(&mut self) -> Vec<f64> {
        let mut x = vec![0.0; self.model.dim()];
        self.model.domain().sample_uniform(&mut self.rng, &mut x);
        x
    }

    fn residual_points(&mut self, plan: &SamplePlan) -> Result<Vec<ResidualPoint>> {
        let horizon = self.spec().horizon();
        let mut out = Vec::with_capacity(plan.residual_count + plan.extra_uniform_residual);
        for _ in 0..plan.residual_count {
            let c: f64 = self.rng.random();
            if c < plan.residual_uniform_fraction {
                let t = horizon * self.rng.random::<f64>();
                let x = self.uniform_point();
                out.push(ResidualPoint { t, x });
            } else {
                let u: f64 = self.rng.random();
                let slice = self.spec().floor_slice(horizon * u);
                let x = self.trajectory_endpoint(slice)?;
                out.push(ResidualPoint {
                    t: self.spec().slice_time(slice),
                    x,
                });
            }
        }
        for _ in 0..plan.extra_uniform_residual {
            let t = horizon * self.rng.random::<f64>();
            let x = self.uniform_point();
            out.push(ResidualPoint { t, x });
        }
        Ok(out)
    }

    fn initial_points(&mut self, count: usize) -> Result<Vec<DataPoint>> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut y = vec![0.0; self.model.dim()];
            rejection_sample_into(self.dist, self.model.domain(), &mut self.rng, &mut y)?;
            let target = self.dist.density(&y);
            out.push(DataPoint {
                t: 0.0,
                y,
                target,
                kind: DataKind::Initial,
            });
        }
        Ok(out)
    }

    /// One Monte Carlo collocation point. `fixed_slice` pins the time (anchors).
    fn monte_carlo_point(&mut self, uniform_fraction: f64, fixed_slice: Option<usize>) -> Result<DataPoint> {
        let spec = self.spec().clone();
        let horizon = spec.horizon();
        let dt = spec.dt();
        let c: f64 = self.rng.random();
        let (slice, raw) = if c < uniform_fraction {
            let slice = match fixed_slice {
                Some(s) => s,
                // slice 0 holds no Monte Carlo data; shift it to the first step
                None => spec.floor_slice(horizon * self.rng.random::<f64>()).max(1),
            };
            (slice, self.uniform_point())
        } else {
            let slice = match fixed_slice {
                Some(s) => s,
                None => spec
                    .floor_slice(dt + horizon * self.rng.random::<f64>())
                    .clamp(1, spec.slices()),
            };
            (slice, self.trajectory_endpoint(slice)?)
        };
        let mut y = vec![0.0; raw.len()];
        if !spec.snap_to_center(&raw, &mut y) {
            return Err(Error::OutOfDomain(raw));
        }
        let t = spec.slice_time(slice);
        let target = lookup_density(self.grid, t, &y)?;
        Ok(DataPoint {
            t,
            y,
            target,
            kind: DataKind::MonteCarlo,
        })
    }
}

fn check_inputs(model: &SdeModel, dist: &InitialDistribution, grid: &DensityGrid, plan: &SamplePlan) -> Result<()> {
    if !grid.spec().covers(model.domain(), model.horizon()) {
        return Err(Error::InvalidPlan(
            "density grid does not cover the model domain and horizon".into(),
        ));
    }
    if dist.dim() != model.dim() {
        return Err(Error::InvalidPlan("distribution and model dimensions differ".into()));
    }
    plan.validate(grid.spec())
}

/// Mixed uniform / density-proportional sampling over the whole time range.
pub fn sample_standard(
    model: &SdeModel,
    dist: &InitialDistribution,
    grid: &DensityGrid,
    plan: &SamplePlan,
) -> Result<PointSet> {
    if plan.mode != SamplingMode::Standard {
        return Err(Error::InvalidPlan("sample_standard needs a standard-mode plan".into()));
    }
    check_inputs(model, dist, grid, plan)?;
    let mut ctx = Context {
        model,
        dist,
        grid,
        rng: stream_rng(plan.seed, 0),
    };
    let residual = ctx.residual_points(plan)?;
    let mut data = ctx.initial_points(plan.initial_count)?;
    for _ in plan.initial_count..plan.data_count {
        data.push(ctx.monte_carlo_point(plan.uniform_fraction, None)?);
    }
    Ok(PointSet { residual, data })
}

/// Box indices of the centered sub-lattice with the given stride.
pub fn anchor_lattice(cells: usize, stride: usize) -> Vec<usize> {
    let count = (cells - 1) / stride + 1;
    let offset = ((cells - 1) - (count - 1) * stride) / 2;
    (0..count).map(|j| offset + j * stride).collect()
}

/// `I_Y` initial points plus collocation points concentrated at anchor times.
pub fn sample_anchor(
    model: &SdeModel,
    dist: &InitialDistribution,
    grid: &DensityGrid,
    plan: &SamplePlan,
) -> Result<PointSet> {
    let (times, selection) = match &plan.mode {
        SamplingMode::Anchor { times, selection } => (times, selection),
        SamplingMode::Standard => {
            return Err(Error::InvalidPlan("sample_anchor needs an anchor-mode plan".into()))
        }
    };
    check_inputs(model, dist, grid, plan)?;
    let mut ctx = Context {
        model,
        dist,
        grid,
        rng: stream_rng(plan.seed, 0),
    };
    let residual = ctx.residual_points(plan)?;
    let mut data = ctx.initial_points(plan.initial_count)?;
    let spec = grid.spec().clone();
    let d = spec.dim();
    let remaining = plan.data_count - plan.initial_count;
    for (a, &tau) in times.iter().enumerate() {
        let slice = spec.slice_of(tau)?;
        let t = spec.slice_time(slice);
        match selection {
            AnchorSelection::Grid { stride } => {
                let axes: Vec<Vec<usize>> = (0..d).map(|k| anchor_lattice(spec.cells()[k], *stride)).collect();
                let total: usize = axes.iter().map(Vec::len).product();
                let mut idx = vec![0usize; d];
                for mut j in 0..total {
                    for k in (0..d).rev() {
                        idx[k] = axes[k][j % axes[k].len()];
                        j /= axes[k].len();
                    }
                    let y: Vec<f64> = (0..d).map(|k| spec.center_coord(k, idx[k])).collect();
                    let target = lookup_density(grid, t, &y)?;
                    data.push(DataPoint {
                        t,
                        y,
                        target,
                        kind: DataKind::MonteCarlo,
                    });
                }
            }
            AnchorSelection::UniformPlusDensity => {
                let share = remaining / times.len() + usize::from(a < remaining % times.len());
                for _ in 0..share {
                    data.push(ctx.monte_carlo_point(plan.uniform_fraction, Some(slice))?);
                }
            }
        }
    }
    Ok(PointSet { residual, data })
}

/// Dispatches on the plan's mode.
pub fn sample_points(
    model: &SdeModel,
    dist: &InitialDistribution,
    grid: &DensityGrid,
    plan: &SamplePlan,
) -> Result<PointSet> {
    match plan.mode {
        SamplingMode::Standard => sample_standard(model, dist, grid, plan),
        SamplingMode::Anchor { .. } => sample_anchor(model, dist, grid, plan),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::estimate_density_grid;

    fn setup() -> (SdeModel, InitialDistribution, DensityGrid) {
        let m = SdeModel::double_well();
        let dist = InitialDistribution::normal_1d();
        let spec = GridSpec::new(m.domain(), &[500], 0.4, 200).unwrap();
        let g = estimate_density_grid(&m, &dist, &spec, 2000, 5).unwrap();
        (m, dist, g)
    }

    #[test]
    fn anchor_lattice_counts() {
        let l = anchor_lattice(200, 200 / 33);
        assert_eq!(l.len(), 34);
        assert_eq!(l[0], 0);
        assert_eq!(*l.last().unwrap(), 198);
        assert_eq!(anchor_lattice(500, 1).len(), 500);
        assert_eq!(anchor_lattice(10, 4), vec![0, 4, 8]);
        assert_eq!(anchor_lattice(11, 4), vec![1, 5, 9]);
    }

    #[test]
    fn standard_counts_and_lattice() {
        let (m, dist, g) = setup();
        let plan = SamplePlan::standard(300, 400, 150, 21);
        let ps = sample_standard(&m, &dist, &g, &plan).unwrap();
        assert_eq!(ps.residual.len(), 300);
        assert_eq!(ps.data.len(), 400);
        assert_eq!(ps.initial_count(), 150);
        let spec = g.spec();
        for p in &ps.data {
            assert!(p.target >= 0.0);
            if p.t > 0.0 {
                let k = p.t / spec.dt();
                assert!((k - k.round()).abs() < 1e-9);
                let j = (p.y[0] - spec.lower()[0] - spec.h()[0] / 2.0) / spec.h()[0];
                assert!((j - j.round()).abs() < 1e-9);
            } else {
                assert_eq!(p.kind, DataKind::Initial);
                assert_eq!(p.target, dist.density(&p.y));
            }
        }
        for p in &ps.residual {
            assert!((0.0..=0.4).contains(&p.t));
            assert!(m.domain().contains(&p.x));
        }
    }

    #[test]
    fn extra_uniform_residual_points_are_appended() {
        let (m, dist, g) = setup();
        let plan = SamplePlan {
            residual_uniform_fraction: 0.0,
            extra_uniform_residual: 50,
            ..SamplePlan::standard(20, 10, 5, 3)
        };
        let ps = sample_standard(&m, &dist, &g, &plan).unwrap();
        assert_eq!(ps.residual.len(), 70);
        // the mixed points with α = 0 sit on the time lattice
        let dt = g.spec().dt();
        assert!(ps.residual[..20].iter().all(|p| ((p.t / dt) - (p.t / dt).round()).abs() < 1e-9));
    }

    #[test]
    fn sampling_is_deterministic() {
        let (m, dist, g) = setup();
        let mut plan = SamplePlan::standard(50, 80, 20, 4);
        plan.residual_uniform_fraction = 0.3;
        let a = sample_standard(&m, &dist, &g, &plan).unwrap();
        let b = sample_standard(&m, &dist, &g, &plan).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn anchor_grid_uses_every_box_at_stride_one() {
        let (m, dist, g) = setup();
        let plan = SamplePlan {
            mode: SamplingMode::Anchor {
                times: vec![0.4],
                selection: AnchorSelection::Grid { stride: 1 },
            },
            ..SamplePlan::standard(100, 2500, 2500, 8)
        };
        let ps = sample_anchor(&m, &dist, &g, &plan).unwrap();
        assert_eq!(ps.initial_count(), 2500);
        let terminal: Vec<_> = ps.data.iter().filter(|p| p.kind == DataKind::MonteCarlo).collect();
        assert_eq!(terminal.len(), 500);
        assert!(terminal.iter().all(|p| (p.t - 0.4).abs() < 1e-12));
    }

    #[test]
    fn anchor_plan_validation() {
        let (m, dist, g) = setup();
        let mut plan = SamplePlan {
            mode: SamplingMode::Anchor {
                times: vec![],
                selection: AnchorSelection::Grid { stride: 1 },
            },
            ..SamplePlan::standard(10, 10, 5, 0)
        };
        assert!(matches!(sample_anchor(&m, &dist, &g, &plan), Err(Error::InvalidPlan(_))));
        plan.mode = SamplingMode::Anchor {
            times: vec![0.0031],
            selection: AnchorSelection::UniformPlusDensity,
        };
        assert!(sample_anchor(&m, &dist, &g, &plan).is_err());
        let bad = SamplePlan::standard(10, 5, 6, 0);
        assert!(sample_standard(&m, &dist, &g, &bad).is_err());
    }

    #[test]
    fn uniform_plus_density_anchors_split_evenly() {
        let (m, dist, g) = setup();
        let plan = SamplePlan {
            mode: SamplingMode::Anchor {
                times: vec![0.2, 0.4],
                selection: AnchorSelection::UniformPlusDensity,
            },
            ..SamplePlan::standard(10, 105, 100, 2)
        };
        let ps = sample_anchor(&m, &dist, &g, &plan).unwrap();
        let at = |t: f64| ps.data.iter().filter(|p| (p.t - t).abs() < 1e-12).count();
        assert_eq!(at(0.2), 3);
        assert_eq!(at(0.4), 2);
        assert_eq!(ps.data.len(), 105);
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let (m, dist, g) = setup();
        let ps = sample_standard(&m, &dist, &g, &SamplePlan::standard(3, 4, 2, 1)).unwrap();
        let mut buf = Vec::new();
        ps.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "kind,t,x0,target");
        assert_eq!(lines.len(), 1 + 3 + 4);
        assert!(lines[1].starts_with("residual,"));
        assert!(lines[4].starts_with("initial,"));
    }
}
