//! Feed-forward sigmoid surrogate `u(t, x)`.
//!
//! Input derivatives are carried forward as jets. For a `d`-dimensional
//! problem every activation holds `K = 2 + d + d(d+1)/2` channels: the value,
//! `∂/∂t`, the spatial gradient and the upper triangle of the spatial
//! Hessian. A batch of `B` points is stored channel-major as an `n × K·B`
//! matrix so every layer is one dense product. Parameter gradients of any
//! objective built from the output jets come from a reverse sweep through the
//! same jet propagation, so they are exact for the composed function.

use std::io::{Read, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{read_u32, read_u64};
use crate::rng::stream_rng;

const MAGIC: &[u8; 8] = b"FPNET\0\0\x01";

/// Hidden and output widths after the `d + 1` inputs.
pub const DEFAULT_WIDTHS: [usize; 6] = [16, 256, 256, 256, 16, 4];

/// Gain on the Glorot bound used by [`NetworkState::new`]. With gain 1 the
/// six sigmoid layers start out almost constant in the input and training
/// sits on that plateau for many epochs.
pub const SIGMOID_INIT_GAIN: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputActivation {
    Sigmoid,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JetOrder {
    /// Value channel only.
    Value,
    /// Value, time derivative, gradient and Hessian.
    Full,
}

/// Number of jet channels for a spatial dimension.
pub fn channel_count(order: JetOrder, dim: usize) -> usize {
    match order {
        JetOrder::Value => 1,
        JetOrder::Full => 2 + dim + dim * (dim + 1) / 2,
    }
}

/// Channel of `∂²/∂x_i∂x_j` (either index order).
pub fn pair_channel(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    // rows before i hold d, d-1, ... entries
    2 + dim + i * dim - i * i.saturating_sub(1) / 2 + (j - i)
}

#[derive(Clone, Debug, PartialEq)]
pub struct JetOutput {
    pub value: f64,
    pub u_t: f64,
    pub grad: Vec<f64>,
    /// Row-major `d × d`, symmetric by construction.
    pub hessian: Vec<f64>,
}

impl JetOutput {
    pub fn dim(&self) -> usize {
        self.grad.len()
    }

    pub fn hessian_at(&self, i: usize, j: usize) -> f64 {
        self.hessian[i * self.dim() + j]
    }

    /// Channel layout used by the batched propagation.
    pub fn channels(&self) -> Vec<f64> {
        let d = self.dim();
        let mut c = Vec::with_capacity(channel_count(JetOrder::Full, d));
        c.push(self.value);
        c.push(self.u_t);
        c.extend_from_slice(&self.grad);
        for i in 0..d {
            for j in i..d {
                c.push(self.hessian_at(i, j));
            }
        }
        c
    }

    pub fn from_channels(dim: usize, c: &[f64]) -> Self {
        let mut hessian = vec![0.0; dim * dim];
        let mut p = 2 + dim;
        for i in 0..dim {
            for j in i..dim {
                hessian[i * dim + j] = c[p];
                hessian[j * dim + i] = c[p];
                p += 1;
            }
        }
        Self {
            value: c[0],
            u_t: c[1],
            grad: c[2..2 + dim].to_vec(),
            hessian,
        }
    }
}

/// Output jets of a batch, channel-major.
pub struct JetBlock<'a> {
    channels: usize,
    batch: usize,
    data: &'a [f64],
}

impl JetBlock<'_> {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn get(&self, channel: usize, b: usize) -> f64 {
        self.data[channel * self.batch + b]
    }

    /// All channels of point `b`.
    pub fn point(&self, b: usize, out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            *o = self.data[c * self.batch + b];
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn reset(&mut self) {
        self.m.fill(0.0);
        self.v.fill(0.0);
        self.step = 0;
    }
}

/// One bias-corrected Adam update of `params`.
pub fn apply_adam(adam: &mut AdamState, params: &mut [f64], grad: &[f64]) -> Result<()> {
    if grad.len() != params.len() || adam.m.len() != params.len() {
        return Err(Error::Shape(format!(
            "gradient has {} entries, parameters {}",
            grad.len(),
            params.len()
        )));
    }
    let AdamConfig {
        learning_rate: lr,
        beta1: b1,
        beta2: b2,
        epsilon: eps,
    } = adam.config;
    adam.step += 1;
    let c1 = 1.0 - b1.powi(adam.step as i32);
    let c2 = 1.0 - b2.powi(adam.step as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut adam.m).zip(&mut adam.v) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let mh = *m / c1;
        let vh = *v / c2;
        *p -= lr * mh / (vh.sqrt() + eps);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState {
    sizes: Vec<usize>,
    output: OutputActivation,
    params: Vec<f64>,
    /// Start of each layer's weights; its biases follow the weights.
    offsets: Vec<usize>,
    pub adam: AdamState,
}

fn layer_offsets(sizes: &[usize]) -> (Vec<usize>, usize) {
    let mut offsets = Vec::with_capacity(sizes.len() - 1);
    let mut n = 0;
    for w in sizes.windows(2) {
        offsets.push(n);
        n += w[0] * w[1] + w[1];
    }
    (offsets, n)
}

impl NetworkState {
    /// The standard architecture for a `dim`-dimensional problem, initialized
    /// with [`SIGMOID_INIT_GAIN`].
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut sizes = vec![dim + 1];
        sizes.extend_from_slice(&DEFAULT_WIDTHS);
        sizes.push(1);
        Self::with_init(&sizes, OutputActivation::Sigmoid, seed, SIGMOID_INIT_GAIN).expect("default sizes are valid")
    }

    /// Glorot-uniform weights, zero biases.
    pub fn with_sizes(sizes: &[usize], output: OutputActivation, seed: u64) -> Result<Self> {
        Self::with_init(sizes, output, seed, 1.0)
    }

    /// Glorot-uniform weights with the bounds scaled by `gain`, zero biases.
    /// Glorot and Bengio suggest a gain of 4 for sigmoid units.
    pub fn with_init(sizes: &[usize], output: OutputActivation, seed: u64, gain: f64) -> Result<Self> {
        if !(gain.is_finite() && gain > 0.0) {
            return Err(Error::InvalidArgument(format!("initialization gain {gain} must be positive")));
        }
        let mut state = Self::zeros(sizes, output)?;
        let mut rng = stream_rng(seed, 0);
        for l in 0..state.layers() {
            let (fan_in, fan_out) = (state.sizes[l], state.sizes[l + 1]);
            let bound = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
            let off = state.offsets[l];
            for w in &mut state.params[off..off + fan_in * fan_out] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(state)
    }

    pub fn zeros(sizes: &[usize], output: OutputActivation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad layer sizes {sizes:?}")));
        }
        if *sizes.last().unwrap() != 1 {
            return Err(Error::InvalidArgument("the output layer must have width 1".into()));
        }
        let (offsets, n) = layer_offsets(sizes);
        Ok(Self {
            sizes: sizes.to_vec(),
            output,
            params: vec![0.0; n],
            offsets,
            adam: AdamState::new(n, AdamConfig::default()),
        })
    }

    pub fn from_params(sizes: &[usize], output: OutputActivation, params: Vec<f64>) -> Result<Self> {
        let mut s = Self::zeros(sizes, output)?;
        if params.len() != s.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                s.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        s.params = params;
        Ok(s)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn dim(&self) -> usize {
        self.sizes[0] - 1
    }

    pub fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn set_output_activation(&mut self, a: OutputActivation) {
        self.output = a;
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_adam_config(&mut self, config: AdamConfig) {
        self.adam.config = config;
    }

    fn weights(&self, l: usize) -> &[f64] {
        let off = self.offsets[l];
        &self.params[off..off + self.sizes[l] * self.sizes[l + 1]]
    }

    fn biases(&self, l: usize) -> &[f64] {
        let off = self.offsets[l] + self.sizes[l] * self.sizes[l + 1];
        &self.params[off..off + self.sizes[l + 1]]
    }

    fn activates(&self, l: usize) -> bool {
        l + 1 < self.layers() || self.output == OutputActivation::Sigmoid
    }

    pub fn forward(&self, t: f64, x: &[f64]) -> f64 {
        let mut input = Vec::with_capacity(x.len() + 1);
        input.push(t);
        input.extend_from_slice(x);
        self.forward_batch(&input)[0]
    }

    /// Values at `B` inputs given row-major as `(t, x₁, …, x_d)` rows.
    pub fn forward_batch(&self, inputs: &[f64]) -> Vec<f64> {
        let cache = self.propagate(JetOrder::Value, inputs);
        cache.output().to_vec()
    }

    pub fn forward_jet(&self, t: f64, x: &[f64]) -> JetOutput {
        let mut input = Vec::with_capacity(x.len() + 1);
        input.push(t);
        input.extend_from_slice(x);
        let cache = self.propagate(JetOrder::Full, &input);
        JetOutput::from_channels(self.dim(), cache.output())
    }

    /// Jets at `B` inputs, one `JetOutput` per point.
    pub fn forward_jet_batch(&self, inputs: &[f64]) -> Vec<JetOutput> {
        let cache = self.propagate(JetOrder::Full, inputs);
        let block = cache.block();
        let mut buf = vec![0.0; block.channels()];
        (0..block.batch())
            .map(|b| {
                block.point(b, &mut buf);
                JetOutput::from_channels(self.dim(), &buf)
            })
            .collect()
    }

    /// Value of an objective of the output jets, and its gradient in the
    /// parameters, accumulated into `grad` (which is not cleared).
    ///
    /// `objective` receives the output block and writes `∂objective/∂channel`
    /// into its second argument, laid out like the block.
    pub fn objective_gradient<F>(&self, order: JetOrder, inputs: &[f64], objective: F, grad: &mut [f64]) -> f64
    where
        F: FnOnce(&JetBlock<'_>, &mut [f64]) -> f64,
    {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer size");
        let cache = self.propagate(order, inputs);
        let mut g_out = vec![0.0; cache.width()];
        let value = objective(&cache.block(), &mut g_out);
        self.backward(&cache, g_out, grad);
        value
    }

    /// Evaluates an objective of the output jets without differentiating.
    pub fn objective_value<F>(&self, order: JetOrder, inputs: &[f64], objective: F) -> f64
    where
        F: FnOnce(&JetBlock<'_>) -> f64,
    {
        let cache = self.propagate(order, inputs);
        objective(&cache.block())
    }

    fn propagate(&self, order: JetOrder, inputs: &[f64]) -> Cache {
        let d = self.dim();
        let n0 = d + 1;
        assert_eq!(inputs.len() % n0, 0, "input rows must have d + 1 entries");
        let batch = inputs.len() / n0;
        let k = channel_count(order, d);
        let width = k * batch;

        // channel 0 holds the inputs, channel 1 seeds t, channels 2.. seed x_i
        let mut a0 = vec![0.0; n0 * width];
        for b in 0..batch {
            for r in 0..n0 {
                a0[r * width + b] = inputs[b * n0 + r];
            }
            if order == JetOrder::Full {
                for r in 0..n0 {
                    a0[r * width + (1 + r) * batch + b] = 1.0;
                }
            }
        }

        let mut acts = vec![a0];
        let mut pre = Vec::with_capacity(self.layers());
        for l in 0..self.layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let mut z = vec![0.0; n_out * width];
            gemm(
                n_out,
                n_in,
                width,
                self.weights(l),
                (n_in as isize, 1),
                acts.last().unwrap(),
                (width as isize, 1),
                &mut z,
                (width as isize, 1),
            );
            for (r, &bias) in self.biases(l).iter().enumerate() {
                for v in &mut z[r * width..r * width + batch] {
                    *v += bias;
                }
            }
            let a = if self.activates(l) {
                sigmoid_jet(&z, n_out, d, k, batch)
            } else {
                z.clone()
            };
            pre.push(z);
            acts.push(a);
        }
        Cache {
            dim: d,
            batch,
            channels: k,
            pre,
            acts,
        }
    }

    fn backward(&self, cache: &Cache, g_out: Vec<f64>, grad: &mut [f64]) {
        let width = cache.width();
        let batch = cache.batch;
        let mut g_a = g_out;
        for l in (0..self.layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let g_z = if self.activates(l) {
                sigmoid_jet_backward(&cache.pre[l], &g_a, n_out, cache.dim, cache.channels, batch)
            } else {
                g_a
            };
            let off = self.offsets[l];
            let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            gemm_acc(
                n_out,
                width,
                n_in,
                &g_z,
                (width as isize, 1),
                &cache.acts[l],
                (1, width as isize),
                gw,
                (n_in as isize, 1),
            );
            for (r, g) in gb.iter_mut().enumerate() {
                *g += g_z[r * width..r * width + batch].iter().sum::<f64>();
            }
            if l == 0 {
                break;
            }
            let mut next = vec![0.0; n_in * width];
            gemm(
                n_in,
                n_out,
                width,
                self.weights(l),
                (1, n_in as isize),
                &g_z,
                (width as isize, 1),
                &mut next,
                (width as isize, 1),
            );
            g_a = next;
        }
    }

    /// Parameter checkpoint: magic, layer count (u32), sizes (u64), output
    /// activation (u8: 0 sigmoid, 1 linear), parameter count (u64), then the
    /// parameters as little-endian f64, layer by layer, weights row-major
    /// before biases.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.sizes.len() as u32).to_le_bytes())?;
        for &s in &self.sizes {
            w.write_all(&(s as u64).to_le_bytes())?;
        }
        let act: u8 = match self.output {
            OutputActivation::Sigmoid => 0,
            OutputActivation::Linear => 1,
        };
        w.write_all(&[act])?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.params.len() * 8);
        for p in &self.params {
            buf.extend_from_slice(&p.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a network checkpoint".into()));
        }
        let count = read_u32(&mut r)? as usize;
        if !(2..=64).contains(&count) {
            return Err(Error::Format(format!("implausible layer count {count}")));
        }
        let mut sizes = Vec::with_capacity(count);
        for _ in 0..count {
            sizes.push(read_u64(&mut r)? as usize);
        }
        let mut act = [0u8; 1];
        r.read_exact(&mut act)?;
        let output = match act[0] {
            0 => OutputActivation::Sigmoid,
            1 => OutputActivation::Linear,
            other => return Err(Error::Format(format!("unknown output activation {other}"))),
        };
        let n = read_u64(&mut r)? as usize;
        let (_, expected) = layer_offsets(&sizes);
        if n != expected {
            return Err(Error::Format(format!("{n} parameters for sizes {sizes:?}")));
        }
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)?;
        let params = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_params(&sizes, output, params).map_err(|e| Error::Format(e.to_string()))
    }

    /// One Adam step with the state's own moments.
    pub fn adam_step(&mut self, grad: &[f64]) -> Result<()> {
        apply_adam(&mut self.adam, &mut self.params, grad)
    }
}

struct Cache {
    dim: usize,
    batch: usize,
    channels: usize,
    pre: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
}

impl Cache {
    fn width(&self) -> usize {
        self.channels * self.batch
    }

    fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }

    fn block(&self) -> JetBlock<'_> {
        JetBlock {
            channels: self.channels,
            batch: self.batch,
            data: self.output(),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    (rsc, csc): (isize, isize),
) {
    gemm_inner(m, k, n, a, (rsa, csa), b, (rsb, csb), 0.0, c, (rsc, csc));
}

#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    (rsc, csc): (isize, isize),
) {
    gemm_inner(m, k, n, a, (rsa, csa), b, (rsb, csb), 1.0, c, (rsc, csc));
}

#[allow(clippy::too_many_arguments)]
fn gemm_inner(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (isize, isize),
) {
    let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
        }
    };
    assert!(a.len() >= span(m, k, rsa, csa));
    assert!(b.len() >= span(k, n, rsb, csb));
    assert!(c.len() >= span(m, n, rsc, csc));
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

#[inline]
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Pushes a jet through the logistic function, row by row.
fn sigmoid_jet(z: &[f64], rows: usize, d: usize, k: usize, batch: usize) -> Vec<f64> {
    let width = k * batch;
    let mut out = vec![0.0; rows * width];
    for r in 0..rows {
        let zr = &z[r * width..(r + 1) * width];
        let or = &mut out[r * width..(r + 1) * width];
        for b in 0..batch {
            let s = logistic(zr[b]);
            or[b] = s;
            if k == 1 {
                continue;
            }
            let s1 = s * (1.0 - s);
            let s2 = s1 * (1.0 - 2.0 * s);
            for c in 1..2 + d {
                or[c * batch + b] = s1 * zr[c * batch + b];
            }
            let mut p = 2 + d;
            for i in 0..d {
                let zi = zr[(2 + i) * batch + b];
                for j in i..d {
                    let zj = zr[(2 + j) * batch + b];
                    or[p * batch + b] = s2 * zi * zj + s1 * zr[p * batch + b];
                    p += 1;
                }
            }
        }
    }
    out
}

/// Adjoint of [`sigmoid_jet`]: maps output-channel gradients to
/// pre-activation channel gradients.
fn sigmoid_jet_backward(z: &[f64], g: &[f64], rows: usize, d: usize, k: usize, batch: usize) -> Vec<f64> {
    let width = k * batch;
    let mut out = vec![0.0; rows * width];
    for r in 0..rows {
        let zr = &z[r * width..(r + 1) * width];
        let gr = &g[r * width..(r + 1) * width];
        let or = &mut out[r * width..(r + 1) * width];
        for b in 0..batch {
            let s = logistic(zr[b]);
            let s1 = s * (1.0 - s);
            if k == 1 {
                or[b] = gr[b] * s1;
                continue;
            }
            let s2 = s1 * (1.0 - 2.0 * s);
            let s3 = s1 * (1.0 - 6.0 * s + 6.0 * s * s);
            let mut gz = gr[b] * s1;
            for c in 1..2 + d {
                let gc = gr[c * batch + b];
                gz += gc * s2 * zr[c * batch + b];
                or[c * batch + b] = gc * s1;
            }
            let mut p = 2 + d;
            for i in 0..d {
                let zi = zr[(2 + i) * batch + b];
                for j in i..d {
                    let zj = zr[(2 + j) * batch + b];
                    let gp = gr[p * batch + b];
                    gz += gp * (s3 * zi * zj + s2 * zr[p * batch + b]);
                    if i == j {
                        or[(2 + i) * batch + b] += 2.0 * gp * s2 * zi;
                    } else {
                        or[(2 + i) * batch + b] += gp * s2 * zj;
                        or[(2 + j) * batch + b] += gp * s2 * zi;
                    }
                    or[p * batch + b] = gp * s1;
                    p += 1;
                }
            }
            or[b] = gz;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64, dim: usize) -> NetworkState {
        NetworkState::with_sizes(&[dim + 1, 4, 4, 1], OutputActivation::Sigmoid, seed).unwrap()
    }

    #[test]
    fn pair_channels_follow_upper_triangle() {
        assert_eq!(pair_channel(1, 0, 0), 3);
        assert_eq!(pair_channel(2, 0, 0), 4);
        assert_eq!(pair_channel(2, 0, 1), 5);
        assert_eq!(pair_channel(2, 1, 0), 5);
        assert_eq!(pair_channel(2, 1, 1), 6);
        assert_eq!(pair_channel(3, 1, 2), 2 + 3 + 4);
        assert_eq!(pair_channel(3, 2, 2), 2 + 3 + 5);
    }

    #[test]
    fn zero_network_is_one_half_and_flat() {
        let net = NetworkState::zeros(&[3, 16, 256, 256, 256, 16, 4, 1], OutputActivation::Sigmoid).unwrap();
        let jet = net.forward_jet(0.3, &[0.1, -0.7]);
        assert_eq!(jet.value, 0.5);
        assert_eq!(jet.u_t, 0.0);
        assert!(jet.grad.iter().chain(&jet.hessian).all(|&v| v == 0.0));
    }

    #[test]
    fn width_one_chain_matches_hand_composition() {
        let params = vec![0.7, -0.2, 0.1, 1.3, 0.4, -2.0, 0.5];
        // layer 0: 2 inputs -> 1 (w 0.7, -0.2; b 0.1); layer 1: w 1.3, b 0.4; layer 2: w -2.0, b 0.5
        let net = NetworkState::from_params(&[2, 1, 1, 1], OutputActivation::Sigmoid, params).unwrap();
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let (t, x) = (0.25, 0.8);
        let h1 = s(0.7 * t - 0.2 * x + 0.1);
        let h2 = s(1.3 * h1 + 0.4);
        let expect = s(-2.0 * h2 + 0.5);
        let got = net.forward(t, &[x]);
        assert!(((got - expect) / expect).abs() < 1e-12);
    }

    #[test]
    fn batch_forward_matches_single_calls() {
        let net = small(3, 2);
        let inputs = [0.1, 0.2, 0.3, 0.4, -0.5, 0.6];
        let batch = net.forward_batch(&inputs);
        assert_eq!(batch[0], net.forward(0.1, &[0.2, 0.3]));
        assert_eq!(batch[1], net.forward(0.4, &[-0.5, 0.6]));
        let jets = net.forward_jet_batch(&inputs);
        assert_eq!(jets[1], net.forward_jet(0.4, &[-0.5, 0.6]));
        assert!((jets[0].value - batch[0]).abs() < 1e-12);
    }

    #[test]
    fn jet_matches_finite_differences() {
        let net = small(11, 2);
        let (t, x) = (0.3, [0.4, -0.2]);
        let jet = net.forward_jet(t, &x);
        let h = 1e-4;
        let f = |t: f64, x0: f64, x1: f64| net.forward(t, &[x0, x1]);
        let ut = (f(t + h, x[0], x[1]) - f(t - h, x[0], x[1])) / (2.0 * h);
        assert!((ut - jet.u_t).abs() < 1e-7);
        let gx = (f(t, x[0] + h, x[1]) - f(t, x[0] - h, x[1])) / (2.0 * h);
        assert!((gx - jet.grad[0]).abs() < 1e-7);
        let hxy = (f(t, x[0] + h, x[1] + h) - f(t, x[0] + h, x[1] - h) - f(t, x[0] - h, x[1] + h)
            + f(t, x[0] - h, x[1] - h))
            / (4.0 * h * h);
        assert!((hxy - jet.hessian_at(0, 1)).abs() < 1e-5);
        assert_eq!(jet.hessian_at(0, 1), jet.hessian_at(1, 0));
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut net = small(1, 1);
        let before = net.params().to_vec();
        let mut g = vec![0.0; net.param_count()];
        g[0] = 3.0;
        g[1] = -1e-3;
        net.adam_step(&g).unwrap();
        let p = net.params();
        assert!((p[0] - (before[0] - 1e-3)).abs() < 1e-9);
        assert!((p[1] - (before[1] + 1e-3)).abs() < 1e-7);
        assert_eq!(p[2], before[2]);
        assert_eq!(net.adam.step, 1);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let net = small(5, 2);
        let mut buf = Vec::new();
        net.write_checkpoint(&mut buf).unwrap();
        let back = NetworkState::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.params(), net.params());
        assert_eq!(back.sizes(), net.sizes());
        buf[0] = b'X';
        assert!(NetworkState::read_checkpoint(buf.as_slice()).is_err());
    }
}
