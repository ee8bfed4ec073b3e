//! Initial distributions and Monte Carlo histogram densities.

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, GriddedField};
use crate::rng::stream_rng;
use crate::sde::{BoxDomain, SdeModel};

/// Consecutive rejections tolerated before the sampler aborts.
pub const MAX_REJECTIONS: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistributionKind {
    Normal1d,
    Multimodal1d,
    Gaussian2d,
    Uniform,
    Custom,
}

impl DistributionKind {
    pub fn name(self) -> &'static str {
        match self {
            DistributionKind::Normal1d => "normal_1d",
            DistributionKind::Multimodal1d => "multimodal_1d",
            DistributionKind::Gaussian2d => "gaussian_2d",
            DistributionKind::Uniform => "uniform",
            DistributionKind::Custom => "custom",
        }
    }
}

type DensityFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Initial density `u₀` with an upper bound `s ≥ sup u₀` for rejection sampling.
#[derive(Clone)]
pub struct InitialDistribution {
    kind: DistributionKind,
    dim: usize,
    density: Arc<DensityFn>,
    sup_bound: f64,
}

impl fmt::Debug for InitialDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InitialDistribution")
            .field("kind", &self.kind)
            .field("dim", &self.dim)
            .field("sup_bound", &self.sup_bound)
            .finish_non_exhaustive()
    }
}

/// Normalizer of the multimodal density, `(1 + e^{-25/2})·√(2π)`.
pub fn multimodal_normalizer() -> f64 {
    (1.0 + (-12.5f64).exp()) * (2.0 * PI).sqrt()
}

impl InitialDistribution {
    /// Standard normal density.
    pub fn normal_1d() -> Self {
        Self {
            kind: DistributionKind::Normal1d,
            dim: 1,
            density: Arc::new(|x: &[f64]| (-0.5 * x[0] * x[0]).exp() / (2.0 * PI).sqrt()),
            sup_bound: 1.0 / (2.0 * PI).sqrt(),
        }
    }

    /// `(1 + cos 5x)·e^{-x²/2} / Z`.
    pub fn multimodal_1d() -> Self {
        let z = multimodal_normalizer();
        Self {
            kind: DistributionKind::Multimodal1d,
            dim: 1,
            density: Arc::new(move |x: &[f64]| (1.0 + (5.0 * x[0]).cos()) * (-0.5 * x[0] * x[0]).exp() / z),
            sup_bound: 2.0 / z,
        }
    }

    /// `e^{-(x²+y²)/2} / 2π`.
    pub fn gaussian_2d() -> Self {
        Self {
            kind: DistributionKind::Gaussian2d,
            dim: 2,
            density: Arc::new(|x: &[f64]| (-0.5 * (x[0] * x[0] + x[1] * x[1])).exp() / (2.0 * PI)),
            sup_bound: 1.0 / (2.0 * PI),
        }
    }

    /// Uniform density on `domain`.
    pub fn uniform(domain: &BoxDomain) -> Self {
        let v = 1.0 / domain.volume();
        let d = domain.clone();
        Self {
            kind: DistributionKind::Uniform,
            dim: domain.dim(),
            density: Arc::new(move |x: &[f64]| if d.contains(x) { v } else { 0.0 }),
            sup_bound: v,
        }
    }

    /// User density, validated on a probe grid of `domain`.
    pub fn custom(
        dim: usize,
        density: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        sup_bound: f64,
        domain: &BoxDomain,
    ) -> Result<Self> {
        let dist = Self {
            kind: DistributionKind::Custom,
            dim,
            density: Arc::new(density),
            sup_bound,
        };
        dist.validate(domain)?;
        Ok(dist)
    }

    pub fn preset(name: &str, domain: &BoxDomain) -> Result<Self> {
        match name {
            "normal_1d" => Ok(Self::normal_1d()),
            "multimodal_1d" => Ok(Self::multimodal_1d()),
            "gaussian_2d" => Ok(Self::gaussian_2d()),
            "uniform" => Ok(Self::uniform(domain)),
            other => Err(Error::InvalidArgument(format!("unknown distribution preset '{other}'"))),
        }
    }

    pub fn kind(&self) -> DistributionKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sup_bound(&self) -> f64 {
        self.sup_bound
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        (self.density)(x)
    }

    /// Checks `u₀ ≥ 0` and `u₀ ≤ s` on a probe grid of the domain.
    pub fn validate(&self, domain: &BoxDomain) -> Result<()> {
        if domain.dim() != self.dim {
            return Err(Error::InvalidDistribution(format!(
                "distribution has dimension {}, domain {}",
                self.dim,
                domain.dim()
            )));
        }
        if !(self.sup_bound > 0.0 && self.sup_bound.is_finite()) {
            return Err(Error::InvalidDistribution(format!(
                "sup bound {} must be positive",
                self.sup_bound
            )));
        }
        let per_axis = match self.dim {
            1 => 2001,
            2 => 201,
            3 => 41,
            _ => 11,
        };
        let total = (per_axis as u64).pow(self.dim as u32);
        let mut idx = vec![0usize; self.dim];
        let mut x = vec![0.0; self.dim];
        for _ in 0..total {
            for k in 0..self.dim {
                let (a, b) = (domain.lower()[k], domain.upper()[k]);
                // stay strictly inside the half-open box
                x[k] = a + (b - a) * (idx[k] as f64 + 0.5) / per_axis as f64;
            }
            let u = self.density(&x);
            if !(u >= 0.0 && u.is_finite()) {
                return Err(Error::InvalidDistribution(format!("density {u} at {x:?}")));
            }
            if u > self.sup_bound * (1.0 + 1e-12) {
                return Err(Error::InvalidDistribution(format!(
                    "density {u} at {x:?} exceeds the sup bound {}",
                    self.sup_bound
                )));
            }
            for k in (0..self.dim).rev() {
                idx[k] += 1;
                if idx[k] < per_axis {
                    break;
                }
                idx[k] = 0;
            }
        }
        Ok(())
    }
}

/// Draws `y` uniform on the domain and `p` uniform on `(0, s)` until `p < u₀(y)`.
pub fn rejection_sample_initial<R: Rng + ?Sized>(
    dist: &InitialDistribution,
    domain: &BoxDomain,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut y = vec![0.0; domain.dim()];
    rejection_sample_into(dist, domain, rng, &mut y)?;
    Ok(y)
}

pub(crate) fn rejection_sample_into<R: Rng + ?Sized>(
    dist: &InitialDistribution,
    domain: &BoxDomain,
    rng: &mut R,
    y: &mut [f64],
) -> Result<()> {
    let s = dist.sup_bound;
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidDistribution(format!("sup bound {s} must be positive")));
    }
    for _ in 0..MAX_REJECTIONS {
        domain.sample_uniform(rng, y);
        let p = s * rng.random::<f64>();
        if p < dist.density(y) {
            return Ok(());
        }
    }
    Err(Error::RejectionExhausted(MAX_REJECTIONS))
}

/// Histogram estimate `v(t_j, y)` on a space-time grid, slices `1..=L`.
/// Slice 0 stays zero: the initial density is known in closed form.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid {
    field: GriddedField,
    samples: u64,
}

impl DensityGrid {
    pub fn from_counts(spec: GridSpec, counts: &[u32], samples: u64) -> Result<Self> {
        if counts.len() != spec.value_count() {
            return Err(Error::Shape(format!(
                "{} counters for a grid of {} values",
                counts.len(),
                spec.value_count()
            )));
        }
        let scale = 1.0 / (samples as f64 * spec.cell_volume());
        let values = counts.iter().map(|&c| c as f64 * scale).collect();
        Ok(Self {
            field: GriddedField::from_values(spec, values)?,
            samples,
        })
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

    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn values(&self) -> &[f64] {
        self.field.values()
    }

    pub fn write_binary<W: Write>(&self, w: W) -> Result<()> {
        self.field.write_binary(w, self.samples)
    }

    pub fn read_binary<R: Read>(r: R) -> Result<Self> {
        let (field, samples) = GriddedField::read_binary(r)?;
        if samples == 0 {
            return Err(Error::Format("density grid records zero samples".into()));
        }
        Ok(Self { field, samples })
    }
}

/// Runs `samples` Euler-Maruyama trajectories from rejection-sampled initial
/// points and histograms every in-domain visit at steps `1..=L`.
///
/// Trajectory `k` draws from stream `k` of `seed`, so the counts do not
/// depend on how the ensemble is split across threads.
pub fn estimate_density_grid(
    model: &SdeModel,
    dist: &InitialDistribution,
    spec: &GridSpec,
    samples: u64,
    seed: u64,
) -> Result<DensityGrid> {
    if samples == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    if !spec.covers(model.domain(), model.horizon()) {
        return Err(Error::InvalidArgument(
            "grid does not tile the model domain and horizon exactly".into(),
        ));
    }
    if dist.dim() != model.dim() {
        return Err(Error::InvalidDistribution(format!(
            "distribution dimension {} differs from model dimension {}",
            dist.dim(),
            model.dim()
        )));
    }
    let n = spec.value_count();
    let boxes = spec.box_count();
    let chunk = 4096u64;
    let chunks = samples.div_ceil(chunk);
    let counts = (0..chunks)
        .into_par_iter()
        .try_fold(
            || vec![0u32; n],
            |mut counts, c| -> Result<Vec<u32>> {
                let mut stepper = model.stepper(spec.dt());
                let mut x = vec![0.0; model.dim()];
                for k in c * chunk..((c + 1) * chunk).min(samples) {
                    let mut rng = stream_rng(seed, k);
                    rejection_sample_into(dist, model.domain(), &mut rng, &mut x)?;
                    for step in 1..=spec.slices() {
                        if !stepper.step(&mut x, &mut rng) {
                            return Err(Error::Divergence {
                                step,
                                state: x.clone(),
                            });
                        }
                        if let Some(b) = spec.box_index(&x) {
                            counts[step * boxes + b] += 1;
                        }
                    }
                }
                Ok(counts)
            },
        )
        .try_reduce(
            || vec![0u32; n],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    DensityGrid::from_counts(spec.clone(), &counts, samples)
}

/// Stored estimate of the box containing `y` at the lattice time `t ≥ δt`.
pub fn lookup_density(grid: &DensityGrid, t: f64, y: &[f64]) -> Result<f64> {
    let spec = grid.spec();
    let slice = spec.slice_of(t)?;
    if slice == 0 {
        return Err(Error::TimeOutOfRange {
            t,
            min: spec.dt(),
            max: spec.horizon(),
        });
    }
    let b = spec
        .box_index(y)
        .ok_or_else(|| Error::OutOfDomain(y.to_vec()))?;
    Ok(grid.field.get(slice, b))
}
