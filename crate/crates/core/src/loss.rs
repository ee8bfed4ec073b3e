//! Fokker-Planck residual and the two training losses.
//!
//! For constant `D = σσᵀ` the adjoint generator expands to
//! `𝓛*u = −Σ fᵢ ∂ᵢu − u div f + ½ Σ D_ij ∂ᵢ∂ⱼu`, which is linear in the jet
//! of `u` at a fixed point. Each residual point therefore gets a precomputed
//! [`ResidualStencil`], and the residual is a dot product with the jet.

use crate::error::{Error, Result};
use crate::network::{channel_count, JetBlock, JetOrder, JetOutput, NetworkState};
use crate::sampler::{DataPoint, PointSet, ResidualPoint};
use crate::sde::SdeModel;

/// Points per forward pass when evaluating large sets.
const EVAL_CHUNK: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub l1: f64,
    pub l2: f64,
    pub combined: f64,
    pub theta: f64,
}

impl LossBreakdown {
    pub fn weighted(l1: f64, l2: f64, theta: f64) -> Result<Self> {
        Ok(Self {
            l1,
            l2,
            combined: weighted_loss(l1, l2, theta)?,
            theta,
        })
    }

    pub fn unconstrained(l1: f64, l2: f64, theta: f64) -> Self {
        Self {
            l1,
            l2,
            combined: unconstrained_loss(l1, l2, theta),
            theta,
        }
    }

    /// `L1 / (L1 + L2)`, or `None` when both vanish.
    pub fn ratio(&self) -> Option<f64> {
        let s = self.l1 + self.l2;
        (s > 0.0).then(|| self.l1 / s)
    }
}

/// `(1 − θ)·L1 + θ·L2` for `θ ∈ [0, 1]`.
pub fn weighted_loss(l1: f64, l2: f64, theta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::WeightOutOfRange(theta));
    }
    Ok((1.0 - theta) * l1 + theta * l2)
}

/// `L1 + θ·L2`, used by the trainable-weight strategy.
pub fn unconstrained_loss(l1: f64, l2: f64, theta: f64) -> f64 {
    l1 + theta * l2
}

/// Coefficients of the residual as a linear functional on jet channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualStencil {
    coeffs: Vec<f64>,
}

impl ResidualStencil {
    pub fn new(model: &SdeModel, x: &[f64]) -> Result<Self> {
        let d = model.dim();
        if x.len() != d {
            return Err(Error::Shape(format!("point has {} coordinates, model {d}", x.len())));
        }
        let dm = model.diffusion_matrix().ok_or_else(|| {
            Error::Unsupported("the residual needs a constant diffusion matrix".into())
        })?;
        let mut coeffs = vec![0.0; channel_count(JetOrder::Full, d)];
        coeffs[0] = -model.drift_divergence(x);
        coeffs[1] = -1.0;
        let f = model.drift_vec(x);
        for i in 0..d {
            coeffs[2 + i] = -f[i];
        }
        let mut p = 2 + d;
        for i in 0..d {
            for j in i..d {
                // off-diagonal pairs appear twice in the symmetric sum
                coeffs[p] = if i == j { 0.5 * dm[i * d + i] } else { 0.5 * (dm[i * d + j] + dm[j * d + i]) };
                p += 1;
            }
        }
        Ok(Self { coeffs })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn apply(&self, channels: &[f64]) -> f64 {
        self.coeffs.iter().zip(channels).map(|(c, v)| c * v).sum()
    }
}

/// `𝓛*u − u_t` at `x` for the jet of `u` there.
pub fn fp_residual(model: &SdeModel, jet: &JetOutput, x: &[f64]) -> Result<f64> {
    if jet.dim() != model.dim() {
        return Err(Error::Shape("jet and model dimensions differ".into()));
    }
    Ok(ResidualStencil::new(model, x)?.apply(&jet.channels()))
}

/// Residual points packed for batched evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualSet {
    dim: usize,
    inputs: Vec<f64>,
    stencils: Vec<f64>,
}

impl ResidualSet {
    pub fn new(model: &SdeModel, points: &[ResidualPoint]) -> Result<Self> {
        let d = model.dim();
        let k = channel_count(JetOrder::Full, d);
        let mut inputs = Vec::with_capacity(points.len() * (d + 1));
        let mut stencils = Vec::with_capacity(points.len() * k);
        for p in points {
            inputs.push(p.t);
            inputs.extend_from_slice(&p.x);
            stencils.extend_from_slice(ResidualStencil::new(model, &p.x)?.coeffs());
        }
        Ok(Self { dim: d, inputs, stencils })
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / (self.dim + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn gather(&self, idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let (n0, k) = (self.dim + 1, channel_count(JetOrder::Full, self.dim));
        let mut inputs = Vec::with_capacity(idx.len() * n0);
        let mut stencils = Vec::with_capacity(idx.len() * k);
        for &i in idx {
            inputs.extend_from_slice(&self.inputs[i * n0..(i + 1) * n0]);
            stencils.extend_from_slice(&self.stencils[i * k..(i + 1) * k]);
        }
        (inputs, stencils)
    }
}

/// Collocation points packed for batched evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSet {
    dim: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

impl DataSet {
    pub fn new(points: &[DataPoint]) -> Self {
        let dim = points.first().map_or(0, |p| p.y.len());
        let mut inputs = Vec::with_capacity(points.len() * (dim + 1));
        for p in points {
            inputs.push(p.t);
            inputs.extend_from_slice(&p.y);
        }
        Self {
            dim,
            inputs,
            targets: points.iter().map(|p| p.target).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    fn gather(&self, idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let n0 = self.dim + 1;
        let mut inputs = Vec::with_capacity(idx.len() * n0);
        for &i in idx {
            inputs.extend_from_slice(&self.inputs[i * n0..(i + 1) * n0]);
        }
        (inputs, idx.iter().map(|&i| self.targets[i]).collect())
    }
}

/// Both packed sets of a [`PointSet`].
pub fn pack(model: &SdeModel, points: &PointSet) -> Result<(ResidualSet, DataSet)> {
    Ok((ResidualSet::new(model, &points.residual)?, DataSet::new(&points.data)))
}

fn residual_objective(stencils: &[f64], k: usize, scale: f64) -> impl Fn(&JetBlock<'_>, Option<&mut [f64]>) -> f64 + '_ {
    move |block, grad| {
        let b = block.batch();
        let n = b as f64;
        let mut sum = 0.0;
        let mut g = grad;
        for p in 0..b {
            let st = &stencils[p * k..(p + 1) * k];
            let r: f64 = (0..k).map(|c| st[c] * block.get(c, p)).sum();
            sum += r * r;
            if let Some(g) = g.as_deref_mut() {
                let w = scale * 2.0 * r / n;
                for c in 0..k {
                    g[c * b + p] = w * st[c];
                }
            }
        }
        sum / n
    }
}

fn data_objective(targets: &[f64], scale: f64) -> impl Fn(&JetBlock<'_>, Option<&mut [f64]>) -> f64 + '_ {
    move |block, grad| {
        let b = block.batch();
        let n = b as f64;
        let mut sum = 0.0;
        let mut g = grad;
        for p in 0..b {
            let e = block.get(0, p) - targets[p];
            sum += e * e;
            if let Some(g) = g.as_deref_mut() {
                g[p] = scale * 2.0 * e / n;
            }
        }
        sum / n
    }
}

/// Mean squared residual over the selected points; adds `scale·∂L1/∂θ` to
/// `grad`.
pub fn loss1_gradient(state: &NetworkState, set: &ResidualSet, idx: &[usize], scale: f64, grad: &mut [f64]) -> f64 {
    assert!(!idx.is_empty(), "empty residual batch");
    let k = channel_count(JetOrder::Full, set.dim);
    let (inputs, stencils) = set.gather(idx);
    let obj = residual_objective(&stencils, k, scale);
    state.objective_gradient(JetOrder::Full, &inputs, |b, g| obj(b, Some(g)), grad)
}

/// Mean squared data misfit over the selected points; adds `scale·∂L2/∂θ`.
pub fn loss2_gradient(state: &NetworkState, set: &DataSet, idx: &[usize], scale: f64, grad: &mut [f64]) -> f64 {
    assert!(!idx.is_empty(), "empty data batch");
    let (inputs, targets) = set.gather(idx);
    let obj = data_objective(&targets, scale);
    state.objective_gradient(JetOrder::Value, &inputs, |b, g| obj(b, Some(g)), grad)
}

/// L1 over the whole set, evaluated in chunks.
pub fn residual_set_loss(state: &NetworkState, set: &ResidualSet) -> f64 {
    let k = channel_count(JetOrder::Full, set.dim);
    let all: Vec<usize> = (0..set.len()).collect();
    let mut sum = 0.0;
    for chunk in all.chunks(EVAL_CHUNK) {
        let (inputs, stencils) = set.gather(chunk);
        let obj = residual_objective(&stencils, k, 1.0);
        sum += chunk.len() as f64 * state.objective_value(JetOrder::Full, &inputs, |b| obj(b, None));
    }
    sum / set.len() as f64
}

/// L2 over the whole set, evaluated in chunks.
pub fn data_set_loss(state: &NetworkState, set: &DataSet) -> f64 {
    let all: Vec<usize> = (0..set.len()).collect();
    let mut sum = 0.0;
    for chunk in all.chunks(EVAL_CHUNK) {
        let (inputs, targets) = set.gather(chunk);
        let obj = data_objective(&targets, 1.0);
        sum += chunk.len() as f64 * state.objective_value(JetOrder::Value, &inputs, |b| obj(b, None));
    }
    sum / set.len() as f64
}

/// Mean of `fp_residual²` over a residual batch.
pub fn loss1(model: &SdeModel, state: &NetworkState, points: &[ResidualPoint]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("empty residual batch".into()));
    }
    Ok(residual_set_loss(state, &ResidualSet::new(model, points)?))
}

/// Mean of `(u(t, y) − v)²` over a data batch.
pub fn loss2(state: &NetworkState, points: &[DataPoint]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("empty data batch".into()));
    }
    Ok(data_set_loss(state, &DataSet::new(points)))
}

/// Euclidean norms of `∂L1/∂θ` and `∂L2/∂θ` on the given batches.
pub fn gradient_norms(
    state: &NetworkState,
    residual: &ResidualSet,
    residual_idx: &[usize],
    data: &DataSet,
    data_idx: &[usize],
) -> (f64, f64) {
    let mut g = vec![0.0; state.param_count()];
    loss1_gradient(state, residual, residual_idx, 1.0, &mut g);
    let a = norm(&g);
    g.fill(0.0);
    loss2_gradient(state, data, data_idx, 1.0, &mut g);
    (a, norm(&g))
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::OutputActivation;
    use crate::sampler::DataKind;

    #[test]
    fn weighted_loss_endpoints_and_published_weight() {
        assert_eq!(weighted_loss(0.04, 0.0004, 0.0).unwrap(), 0.04);
        assert_eq!(weighted_loss(0.04, 0.0004, 1.0).unwrap(), 0.0004);
        assert!((weighted_loss(0.04, 0.0004, 0.975).unwrap() - 0.00139).abs() < 1e-15);
        assert!(matches!(weighted_loss(1.0, 1.0, 1.2), Err(Error::WeightOutOfRange(_))));
        assert_eq!(unconstrained_loss(1.0, 2.0, 3.0), 7.0);
    }

    #[test]
    fn zero_network_data_loss() {
        let net = NetworkState::zeros(&[2, 3, 1], OutputActivation::Sigmoid).unwrap();
        let p = DataPoint {
            t: 0.1,
            y: vec![0.2],
            target: 0.2,
            kind: DataKind::MonteCarlo,
        };
        assert!((loss2(&net, &[p]).unwrap() - 0.09).abs() < 1e-15);
    }

    #[test]
    fn constant_function_has_zero_residual() {
        let model = SdeModel::pure_diffusion(1, 0.0, crate::sde::BoxDomain::cube(1, -1.0, 1.0).unwrap(), 1.0).unwrap();
        let jet = JetOutput {
            value: 0.7,
            u_t: 0.0,
            grad: vec![0.0],
            hessian: vec![0.0],
        };
        assert_eq!(fp_residual(&model, &jet, &[0.3]).unwrap(), 0.0);
    }

    #[test]
    fn double_well_stencil() {
        let model = SdeModel::double_well();
        let s = ResidualStencil::new(&model, &[1.0]).unwrap();
        // f(1) = 0, div f(1) = 1 - 3 = -2, D = 1
        assert_eq!(s.coeffs(), &[2.0, -1.0, -0.0, 0.5]);
    }
}
