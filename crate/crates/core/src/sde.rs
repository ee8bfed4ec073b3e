//! SDE models `dX = f(X) dt + σ(X) dW` and Euler-Maruyama stepping.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{fill_standard_normal, stream_rng};

/// A drift vector field with an analytic divergence.
pub trait DriftField: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes `f(x)` into `out`.
    fn eval(&self, x: &[f64], out: &mut [f64]);

    /// `Σᵢ ∂fᵢ/∂xᵢ` at `x`.
    fn divergence(&self, x: &[f64]) -> f64;
}

/// `f(x) = -x³ + x` in one dimension.
#[derive(Clone, Copy, Debug, Default)]
pub struct DoubleWell;

impl DriftField for DoubleWell {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out[0] = -x[0] * x[0] * x[0] + x[0];
    }

    fn divergence(&self, x: &[f64]) -> f64 {
        1.0 - 3.0 * x[0] * x[0]
    }
}

/// Planar field pushing mass onto the unit circle while rotating it.
#[derive(Clone, Copy, Debug, Default)]
pub struct Ring;

impl DriftField for Ring {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let (px, py) = (x[0], x[1]);
        let s = px * px + py * py - 1.0;
        out[0] = -4.0 * px * s + py;
        out[1] = -4.0 * py * s - px;
    }

    fn divergence(&self, x: &[f64]) -> f64 {
        8.0 - 16.0 * (x[0] * x[0] + x[1] * x[1])
    }
}

/// Constant drift; `ConstantDrift(vec![0.0; d])` is pure diffusion.
#[derive(Clone, Debug)]
pub struct ConstantDrift(pub Vec<f64>);

impl DriftField for ConstantDrift {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn eval(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }

    fn divergence(&self, _x: &[f64]) -> f64 {
        0.0
    }
}

/// Drift built from a pair of closures.
pub struct FnDrift<F, G> {
    dim: usize,
    field: F,
    divergence: G,
}

impl<F, G> FnDrift<F, G>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
    G: Fn(&[f64]) -> f64 + Send + Sync,
{
    pub fn new(dim: usize, field: F, divergence: G) -> Self {
        Self {
            dim,
            field,
            divergence,
        }
    }
}

impl<F, G> DriftField for FnDrift<F, G>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
    G: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.field)(x, out)
    }

    fn divergence(&self, x: &[f64]) -> f64 {
        (self.divergence)(x)
    }
}

type SigmaFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Noise coefficient `σ`, a `d × m` matrix stored row-major.
#[derive(Clone)]
pub enum Diffusion {
    Constant { sigma: Vec<f64>, noise_dim: usize },
    StateDependent { noise_dim: usize, sigma: Arc<SigmaFn> },
}

impl Diffusion {
    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        let mut sigma = vec![0.0; dim * dim];
        for i in 0..dim {
            sigma[i * dim + i] = scale;
        }
        Diffusion::Constant {
            sigma,
            noise_dim: dim,
        }
    }

    pub fn noise_dim(&self) -> usize {
        match self {
            Diffusion::Constant { noise_dim, .. } | Diffusion::StateDependent { noise_dim, .. } => {
                *noise_dim
            }
        }
    }
}

impl fmt::Debug for Diffusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diffusion::Constant { sigma, noise_dim } => f
                .debug_struct("Constant")
                .field("sigma", sigma)
                .field("noise_dim", noise_dim)
                .finish(),
            Diffusion::StateDependent { noise_dim, .. } => f
                .debug_struct("StateDependent")
                .field("noise_dim", noise_dim)
                .finish_non_exhaustive(),
        }
    }
}

/// Axis-aligned box `[a₁,b₁) × … × [a_d,b_d)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidArgument(
                "domain bounds must be nonempty and of equal length".into(),
            ));
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(a, b)| !(a.is_finite() && b.is_finite() && a < b))
        {
            return Err(Error::InvalidArgument(format!(
                "degenerate domain {lower:?} .. {upper:?}"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn cube(dim: usize, a: f64, b: f64) -> Result<Self> {
        Self::new(vec![a; dim], vec![b; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| b - a)
            .product()
    }

    /// Half-open membership: the upper faces are excluded.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (a, b))| *v >= *a && *v < *b)
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for (k, v) in out.iter_mut().enumerate() {
            let (a, b) = (self.lower[k], self.upper[k]);
            *v = a + (b - a) * rng.random::<f64>();
        }
    }
}

/// An SDE with constant-or-state-dependent noise on a bounded numerical box.
#[derive(Clone)]
pub struct SdeModel {
    name: String,
    drift: Arc<dyn DriftField>,
    diffusion: Diffusion,
    /// `σσᵀ` when the diffusion is constant.
    diffusion_matrix: Option<Vec<f64>>,
    domain: BoxDomain,
    horizon: f64,
}

impl fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeModel")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("diffusion", &self.diffusion)
            .field("domain", &self.domain)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

const DIVERGENCE_PROBES: usize = 100;
const DIVERGENCE_RTOL: f64 = 1e-5;

impl SdeModel {
    /// Builds a model, checking the analytic divergence against central
    /// differences of the drift at random points of the domain.
    pub fn new(
        name: impl Into<String>,
        drift: Arc<dyn DriftField>,
        diffusion: Diffusion,
        domain: BoxDomain,
        horizon: f64,
    ) -> Result<Self> {
        let dim = drift.dim();
        if dim == 0 || domain.dim() != dim {
            return Err(Error::InvalidModel(format!(
                "drift dimension {dim} does not match domain dimension {}",
                domain.dim()
            )));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidModel(format!("time horizon {horizon} must be positive")));
        }
        let diffusion_matrix = match &diffusion {
            Diffusion::Constant { sigma, noise_dim } => {
                let m = *noise_dim;
                if m == 0 || sigma.len() != dim * m {
                    return Err(Error::InvalidModel(format!(
                        "sigma has {} entries, expected {dim} x {m}",
                        sigma.len()
                    )));
                }
                if sigma.iter().any(|s| !s.is_finite()) {
                    return Err(Error::InvalidModel("sigma has non-finite entries".into()));
                }
                let mut d = vec![0.0; dim * dim];
                for i in 0..dim {
                    for j in 0..dim {
                        d[i * dim + j] = (0..m).map(|k| sigma[i * m + k] * sigma[j * m + k]).sum();
                    }
                }
                Some(d)
            }
            Diffusion::StateDependent { noise_dim, .. } => {
                if *noise_dim == 0 {
                    return Err(Error::InvalidModel("noise dimension must be positive".into()));
                }
                None
            }
        };
        let model = Self {
            name: name.into(),
            drift,
            diffusion,
            diffusion_matrix,
            domain,
            horizon,
        };
        model.check_divergence()?;
        Ok(model)
    }

    fn check_divergence(&self) -> Result<()> {
        let d = self.dim();
        let mut rng = stream_rng(0x5eed_d1f0, 0);
        let mut x = vec![0.0; d];
        for _ in 0..DIVERGENCE_PROBES {
            self.domain.sample_uniform(&mut rng, &mut x);
            let analytic = self.drift.divergence(&x);
            let numeric = finite_difference_divergence(self.drift.as_ref(), &x);
            let scale = analytic.abs().max(numeric.abs()).max(1.0);
            if !((analytic - numeric).abs() <= DIVERGENCE_RTOL * scale) {
                return Err(Error::InvalidModel(format!(
                    "drift divergence {analytic} disagrees with finite differences {numeric} at {x:?}"
                )));
            }
        }
        Ok(())
    }

    /// `dX = (-X³ + X) dt + dW` on `[-2.5, 2.5]`, `T = 0.4`.
    pub fn double_well() -> Self {
        Self::new(
            "double_well_1d",
            Arc::new(DoubleWell),
            Diffusion::identity(1),
            BoxDomain::cube(1, -2.5, 2.5).expect("valid domain"),
            0.4,
        )
        .expect("double-well preset is valid")
    }

    /// The ring SDE on `[-2, 2]²`, `T = 0.2`.
    pub fn ring() -> Self {
        Self::ring_with_horizon(0.2)
    }

    pub fn ring_with_horizon(horizon: f64) -> Self {
        Self::new(
            "ring_2d",
            Arc::new(Ring),
            Diffusion::identity(2),
            BoxDomain::cube(2, -2.0, 2.0).expect("valid domain"),
            horizon,
        )
        .expect("ring preset is valid")
    }

    /// Brownian motion `dX = scale · dW` on a cube.
    pub fn pure_diffusion(dim: usize, scale: f64, domain: BoxDomain, horizon: f64) -> Result<Self> {
        Self::new(
            "pure_diffusion",
            Arc::new(ConstantDrift(vec![0.0; dim])),
            Diffusion::scaled_identity(dim, scale),
            domain,
            horizon,
        )
    }

    /// Looks up a preset by its configuration name.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "double_well_1d" => Ok(Self::double_well()),
            "ring_2d" => Ok(Self::ring()),
            other => Err(Error::InvalidArgument(format!("unknown model preset '{other}'"))),
        }
    }

    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidModel(format!("time horizon {horizon} must be positive")));
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.diffusion.noise_dim()
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn diffusion(&self) -> &Diffusion {
        &self.diffusion
    }

    /// `D = σσᵀ`, row-major, when σ is constant.
    pub fn diffusion_matrix(&self) -> Option<&[f64]> {
        self.diffusion_matrix.as_deref()
    }

    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        self.drift.eval(x, out)
    }

    pub fn drift_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.drift.eval(x, &mut out);
        out
    }

    pub fn drift_divergence(&self, x: &[f64]) -> f64 {
        self.drift.divergence(x)
    }

    pub fn stepper(&self, dt: f64) -> Stepper<'_> {
        Stepper::new(self, dt)
    }
}

/// Central-difference divergence of a drift field, step `1e-5`.
pub fn finite_difference_divergence(drift: &dyn DriftField, x: &[f64]) -> f64 {
    let d = drift.dim();
    let eps = 1e-5;
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; d];
    let mut fm = vec![0.0; d];
    let mut div = 0.0;
    for i in 0..d {
        let h = eps * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        drift.eval(&xp, &mut fp);
        xp[i] = x[i] - h;
        drift.eval(&xp, &mut fm);
        xp[i] = x[i];
        div += (fp[i] - fm[i]) / (2.0 * h);
    }
    div
}

/// Reusable scratch buffers for repeated Euler-Maruyama steps.
pub struct Stepper<'a> {
    model: &'a SdeModel,
    dt: f64,
    sqrt_dt: f64,
    drift: Vec<f64>,
    sigma: Vec<f64>,
    noise: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(model: &'a SdeModel, dt: f64) -> Self {
        let (d, m) = (model.dim(), model.noise_dim());
        Self {
            model,
            dt,
            sqrt_dt: dt.sqrt(),
            drift: vec![0.0; d],
            sigma: vec![0.0; d * m],
            noise: vec![0.0; m],
        }
    }

    /// One step with the given standard normal draws. Returns `false` when
    /// the new state is not finite.
    pub fn apply(&mut self, x: &mut [f64], noise: &[f64]) -> bool {
        let (d, m) = (self.model.dim(), self.model.noise_dim());
        self.model.drift.eval(x, &mut self.drift);
        let sigma: &[f64] = match &self.model.diffusion {
            Diffusion::Constant { sigma, .. } => sigma,
            Diffusion::StateDependent { sigma, .. } => {
                sigma(x, &mut self.sigma);
                &self.sigma
            }
        };
        let mut finite = true;
        for i in 0..d {
            let mut shock = 0.0;
            for k in 0..m {
                shock += sigma[i * m + k] * noise[k];
            }
            x[i] += self.drift[i] * self.dt + self.sqrt_dt * shock;
            finite &= x[i].is_finite();
        }
        finite
    }

    /// One step with fresh normal draws from `rng`.
    pub fn step<R: Rng + ?Sized>(&mut self, x: &mut [f64], rng: &mut R) -> bool {
        let mut noise = std::mem::take(&mut self.noise);
        fill_standard_normal(rng, &mut noise);
        let ok = self.apply(x, &noise);
        self.noise = noise;
        ok
    }
}

/// `x + f(x)·δt + σ(x)·√δt·noise`.
pub fn euler_maruyama_step(model: &SdeModel, x: &[f64], dt: f64, noise: &[f64]) -> Result<Vec<f64>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("step size {dt} must be positive")));
    }
    if x.len() != model.dim() || noise.len() != model.noise_dim() {
        return Err(Error::Shape(format!(
            "state has {} entries and noise {}, model expects {} and {}",
            x.len(),
            noise.len(),
            model.dim(),
            model.noise_dim()
        )));
    }
    let mut out = x.to_vec();
    if !Stepper::new(model, dt).apply(&mut out, noise) {
        return Err(Error::Divergence {
            step: 1,
            state: out,
        });
    }
    Ok(out)
}

/// Step count `L`, step size `δt = T/L` and seed for one trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryConfig {
    pub steps: usize,
    pub dt: f64,
    pub seed: u64,
}

impl TrajectoryConfig {
    pub fn new(horizon: f64, steps: usize, seed: u64) -> Result<Self> {
        if steps == 0 || !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need a positive horizon and step count, got T = {horizon}, L = {steps}"
            )));
        }
        let cfg = Self {
            steps,
            dt: horizon / steps as f64,
            seed,
        };
        debug_assert!(((cfg.steps as f64 * cfg.dt) - horizon).abs() <= 1e-12 * horizon);
        Ok(cfg)
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }
}

/// Runs `X_0 = x0, X_1, …, X_L` with normals from stream 0 of `config.seed`.
pub fn simulate_trajectory(
    model: &SdeModel,
    config: &TrajectoryConfig,
    x0: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if x0.len() != model.dim() {
        return Err(Error::Shape(format!(
            "initial state has {} entries, model dimension is {}",
            x0.len(),
            model.dim()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("initial state {x0:?} is not finite")));
    }
    if !(config.dt > 0.0 && config.dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("step size {} must be positive", config.dt)));
    }
    let mut rng = stream_rng(config.seed, 0);
    let mut stepper = model.stepper(config.dt);
    let mut path = Vec::with_capacity(config.steps + 1);
    let mut x = x0.to_vec();
    path.push(x.clone());
    for step in 1..=config.steps {
        if !stepper.step(&mut x, &mut rng) {
            return Err(Error::Divergence { step, state: x });
        }
        path.push(x.clone());
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_model(dim: usize) -> SdeModel {
        SdeModel::new(
            "still",
            Arc::new(ConstantDrift(vec![0.0; dim])),
            Diffusion::scaled_identity(dim, 0.0),
            BoxDomain::cube(dim, -1.0, 1.0).unwrap(),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn no_drift_no_noise_is_identity() {
        let m = zero_model(1);
        assert_eq!(euler_maruyama_step(&m, &[1.5], 0.1, &[0.7]).unwrap(), vec![1.5]);
    }

    #[test]
    fn deterministic_euler_step() {
        let m = SdeModel::new(
            "const",
            Arc::new(ConstantDrift(vec![2.0])),
            Diffusion::scaled_identity(1, 0.0),
            BoxDomain::cube(1, -1.0, 1.0).unwrap(),
            1.0,
        )
        .unwrap();
        let x = euler_maruyama_step(&m, &[0.0], 0.1, &[0.3]).unwrap();
        assert!((x[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn double_well_step_by_hand() {
        let m = SdeModel::double_well();
        let x = euler_maruyama_step(&m, &[2.0], 0.01, &[0.0]).unwrap();
        assert!((x[0] - 1.94).abs() < 1e-14);
    }

    #[test]
    fn presets_match_hand_values() {
        let dw = SdeModel::double_well();
        assert_eq!(dw.drift_vec(&[1.0]), vec![0.0]);
        assert_eq!(dw.drift_divergence(&[0.5]), 1.0 - 0.75);
        let ring = SdeModel::ring();
        assert_eq!(ring.drift_vec(&[1.0, 0.0]), vec![0.0, -1.0]);
        assert_eq!(ring.drift_divergence(&[0.0, 0.0]), 8.0);
        assert_eq!(ring.diffusion_matrix().unwrap(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn wrong_divergence_is_rejected() {
        let bad = FnDrift::new(1, |x: &[f64], out: &mut [f64]| out[0] = x[0] * x[0], |_x: &[f64]| 0.0);
        let err = SdeModel::new(
            "bad",
            Arc::new(bad),
            Diffusion::identity(1),
            BoxDomain::cube(1, -1.0, 1.0).unwrap(),
            1.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidModel(_)));
    }

    #[test]
    fn stiff_drift_reports_divergence() {
        let stiff = FnDrift::new(
            1,
            |x: &[f64], out: &mut [f64]| out[0] = 1e300 * x[0],
            |_x: &[f64]| 1e300,
        );
        let m = SdeModel::new(
            "stiff",
            Arc::new(stiff),
            Diffusion::identity(1),
            BoxDomain::cube(1, -1.0, 1.0).unwrap(),
            1.0,
        )
        .unwrap();
        let err = euler_maruyama_step(&m, &[1e300], 1.0, &[0.0]).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
        let cfg = TrajectoryConfig::new(1.0, 10, 1).unwrap();
        match simulate_trajectory(&m, &cfg, &[1.0]) {
            Err(Error::Divergence { step, .. }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn bad_step_arguments() {
        let m = SdeModel::double_well();
        assert!(euler_maruyama_step(&m, &[0.0], 0.0, &[0.0]).is_err());
        assert!(euler_maruyama_step(&m, &[0.0], 0.1, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn still_trajectory_is_constant() {
        let m = zero_model(2);
        let cfg = TrajectoryConfig::new(1.0, 25, 9).unwrap();
        let path = simulate_trajectory(&m, &cfg, &[0.25, -0.5]).unwrap();
        assert_eq!(path.len(), 26);
        assert!(path.iter().all(|p| p == &[0.25, -0.5]));
    }

    #[test]
    fn seeded_trajectories_are_bit_identical() {
        let m = SdeModel::ring();
        let cfg = TrajectoryConfig::new(0.2, 200, 77).unwrap();
        let a = simulate_trajectory(&m, &cfg, &[0.1, 0.2]).unwrap();
        let b = simulate_trajectory(&m, &cfg, &[0.1, 0.2]).unwrap();
        let bits = |p: &Vec<Vec<f64>>| p.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let c = simulate_trajectory(&m, &TrajectoryConfig { seed: 78, ..cfg }, &[0.1, 0.2]).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn trajectory_config_lattice() {
        let cfg = TrajectoryConfig::new(0.4, 200, 0).unwrap();
        assert!((cfg.horizon() - 0.4).abs() <= 1e-12 * 0.4);
        assert!(TrajectoryConfig::new(0.4, 0, 0).is_err());
    }

    #[test]
    fn half_open_domain() {
        let d = BoxDomain::cube(1, -2.5, 2.5).unwrap();
        assert!(d.contains(&[-2.5]));
        assert!(!d.contains(&[2.5]));
        assert!(BoxDomain::new(vec![1.0], vec![1.0]).is_err());
    }
}
