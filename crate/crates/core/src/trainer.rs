//! Training loops and weight-balancing strategies.
//!
//! Every strategy runs mini-batched epochs over the residual and data sets.
//! The residual and data sets are shuffled independently each epoch and cut
//! into batches; an epoch takes as many steps as the larger set needs and
//! cycles through the smaller one. After each epoch both losses are
//! re-evaluated on the full sets, which drives checkpoint selection.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::loss::{
    data_set_loss, gradient_norms, loss1_gradient, loss2_gradient, pack, residual_set_loss,
    unconstrained_loss, weighted_loss, DataSet, ResidualSet,
};
use crate::network::{apply_adam, AdamConfig, AdamState, NetworkState};
use crate::rng::stream_rng;
use crate::sampler::PointSet;
use crate::sde::SdeModel;

/// How the momentum strategies seed `r` after the warmup.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RatioInit {
    /// Ratio of the last warmup epoch.
    LastWarmup,
    /// Mean ratio over the warmup epochs.
    WarmupAverage,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Strategy {
    AlternatingAdam,
    FixedWeight,
    /// `L1 + θ·L2` with `θ += step·L2` after every epoch.
    TrainableWeight { step: f64 },
    LossMomentum { alpha: f64, init: RatioInit },
    /// Momentum towards the running mean of all loss ratios so far.
    LossMomentumAlt { alpha: f64 },
    /// Momentum towards `a / (a + b)` for gradient norms on a probe batch.
    GradientMomentum { alpha: f64, probe: usize },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::AlternatingAdam => "alternating",
            Strategy::FixedWeight => "fixed",
            Strategy::TrainableWeight { .. } => "trainable",
            Strategy::LossMomentum { .. } => "loss-momentum",
            Strategy::LossMomentumAlt { .. } => "loss-momentum-alt",
            Strategy::GradientMomentum { .. } => "grad-momentum",
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match *self {
            Strategy::LossMomentum { alpha, .. }
            | Strategy::LossMomentumAlt { alpha }
            | Strategy::GradientMomentum { alpha, .. } => Some(alpha),
            _ => None,
        }
    }

    fn is_momentum(&self) -> bool {
        self.alpha().is_some()
    }

    pub fn default_checkpoint(&self) -> CheckpointRule {
        match self {
            Strategy::AlternatingAdam => CheckpointRule::FinalEpoch,
            _ => CheckpointRule::MinCombinedLoss,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointRule {
    MinCombinedLoss,
    FinalEpoch,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainerConfig {
    pub strategy: Strategy,
    pub epochs: usize,
    pub residual_batch: usize,
    pub data_batch: usize,
    pub theta0: f64,
    pub warmup: usize,
    pub seed: u64,
    /// `None` picks the strategy's default.
    pub checkpoint: Option<CheckpointRule>,
    pub adam: AdamConfig,
    /// θ below `collapse_low` or above `1 − collapse_low` counts as collapsed.
    pub collapse_low: f64,
    pub collapse_patience: usize,
}

impl TrainerConfig {
    pub fn new(strategy: Strategy, epochs: usize, theta0: f64, seed: u64) -> Self {
        Self {
            strategy,
            epochs,
            residual_batch: 128,
            data_batch: 128,
            theta0,
            warmup: 5,
            seed,
            checkpoint: None,
            adam: AdamConfig::default(),
            collapse_low: 0.01,
            collapse_patience: 5,
        }
    }

    pub fn checkpoint_rule(&self) -> CheckpointRule {
        self.checkpoint.unwrap_or_else(|| self.strategy.default_checkpoint())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.epochs == 0 {
            return bad("at least one epoch is required".into());
        }
        if self.residual_batch == 0 || self.data_batch == 0 {
            return bad("batch sizes must be positive".into());
        }
        if let Some(a) = self.strategy.alpha() {
            if !(0.0..=1.0).contains(&a) {
                return bad(format!("momentum α = {a} outside [0, 1]"));
            }
            if self.warmup == 0 || self.warmup >= self.epochs {
                return bad(format!(
                    "warmup of {} epochs needs 0 < warmup < epochs = {}",
                    self.warmup, self.epochs
                ));
            }
        }
        match self.strategy {
            Strategy::TrainableWeight { step } => {
                if !(self.theta0 >= 0.0 && self.theta0.is_finite()) || !(step >= 0.0 && step.is_finite()) {
                    return bad("trainable weight needs θ₀ ≥ 0 and a nonnegative step".into());
                }
            }
            _ => {
                if !(0.0..=1.0).contains(&self.theta0) {
                    return Err(Error::WeightOutOfRange(self.theta0));
                }
            }
        }
        if let Strategy::GradientMomentum { probe, .. } = self.strategy {
            if probe == 0 {
                return bad("gradient probe needs at least one point".into());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    Residual,
    Data,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean L1 / L2 over the epoch's mini-batches.
    pub l1: f64,
    pub l2: f64,
    /// L1 / L2 on the full sets after the epoch.
    pub eval_l1: f64,
    pub eval_l2: f64,
    /// Weight used during the epoch.
    pub theta: f64,
    /// Combined loss of the full-set values under `theta`.
    pub combined: f64,
    /// `l1 / (l1 + l2)`.
    pub ratio: Option<f64>,
    /// The `r` fed into the next weight update.
    pub drive: Option<f64>,
    pub grad_norm_1: Option<f64>,
    pub grad_norm_2: Option<f64>,
    /// Gradient probe returned two zero norms and `r` was carried over.
    pub degenerate_probe: bool,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingTelemetry {
    pub strategy: String,
    pub records: Vec<EpochRecord>,
    pub selected_epoch: usize,
    pub failed: bool,
    /// Epoch at which the collapse streak reached the patience.
    pub failure_epoch: Option<usize>,
    /// Order of optimizer steps (alternating strategy only).
    pub steps: Vec<StepKind>,
}

impl TrainingTelemetry {
    pub fn thetas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.theta).collect()
    }

    pub fn selected(&self) -> Option<&EpochRecord> {
        self.records.get(self.selected_epoch)
    }

    /// Equality ignoring wall-clock times.
    pub fn same_trajectory(&self, other: &Self) -> bool {
        let strip = |t: &Self| {
            let mut t = t.clone();
            for r in &mut t.records {
                r.wall_ms = 0.0;
            }
            t
        };
        strip(self) == strip(other)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "epoch,L1,L2,theta,ratio,grad_norm_1,grad_norm_2,wall_ms,eval_L1,eval_L2,combined,drive,degenerate_probe"
        )?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{:.3},{},{},{},{},{}",
                r.epoch,
                r.l1,
                r.l2,
                r.theta,
                opt(r.ratio),
                opt(r.grad_norm_1),
                opt(r.grad_norm_2),
                r.wall_ms,
                r.eval_l1,
                r.eval_l2,
                r.combined,
                opt(r.drive),
                r.degenerate_probe as u8
            )?;
        }
        Ok(())
    }
}

fn batches(n: usize, size: usize) -> usize {
    n.div_ceil(size)
}

fn epoch_chunks<'a>(order: &'a [usize], size: usize, i: usize) -> &'a [usize] {
    let count = batches(order.len(), size);
    let start = (i % count) * size;
    &order[start..(start + size).min(order.len())]
}

/// Trains `state` on `points` and returns the selected parameters.
pub fn train(
    config: &TrainerConfig,
    model: &SdeModel,
    points: &PointSet,
    state: NetworkState,
) -> Result<(NetworkState, TrainingTelemetry)> {
    let (residual, data) = pack(model, points)?;
    train_packed(config, &residual, &data, state)
}

/// [`train`] on already packed point sets.
pub fn train_packed(
    config: &TrainerConfig,
    residual: &ResidualSet,
    data: &DataSet,
    mut state: NetworkState,
) -> Result<(NetworkState, TrainingTelemetry)> {
    config.validate()?;
    if residual.is_empty() || data.is_empty() {
        return Err(Error::InvalidConfig("both point sets must be nonempty".into()));
    }
    if let Strategy::GradientMomentum { probe, .. } = config.strategy {
        if probe > residual.len() || probe > data.len() {
            return Err(Error::InvalidConfig(format!(
                "gradient probe of {probe} points exceeds the available {} residual / {} data points",
                residual.len(),
                data.len()
            )));
        }
    }

    state.set_adam_config(config.adam);
    let mut data_adam = AdamState::new(state.param_count(), config.adam);
    let mut shuffle_rng = stream_rng(config.seed, 0);
    let mut probe_rng = stream_rng(config.seed, 1);
    let mut r_order: Vec<usize> = (0..residual.len()).collect();
    let mut d_order: Vec<usize> = (0..data.len()).collect();
    let steps = batches(residual.len(), config.residual_batch).max(batches(data.len(), config.data_batch));

    let mut telemetry = TrainingTelemetry {
        strategy: config.strategy.name().to_string(),
        ..Default::default()
    };
    let mut theta = config.theta0;
    let mut drive: Option<f64> = None;
    let mut ratio_sum = 0.0;
    let mut warmup_ratios = Vec::new();
    let mut streak = 0usize;
    let mut best: Option<(f64, usize, NetworkState)> = None;
    let mut grad = vec![0.0; state.param_count()];
    let rule = config.checkpoint_rule();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        r_order.shuffle(&mut shuffle_rng);
        d_order.shuffle(&mut shuffle_rng);
        let (mut l1_sum, mut l2_sum) = (0.0, 0.0);

        for i in 0..steps {
            let rb = epoch_chunks(&r_order, config.residual_batch, i);
            let db = epoch_chunks(&d_order, config.data_batch, i);
            match config.strategy {
                Strategy::AlternatingAdam => {
                    grad.fill(0.0);
                    l1_sum += loss1_gradient(&state, residual, rb, 1.0, &mut grad);
                    state.adam_step(&grad)?;
                    telemetry.steps.push(StepKind::Residual);
                    grad.fill(0.0);
                    l2_sum += loss2_gradient(&state, data, db, 1.0, &mut grad);
                    apply_adam(&mut data_adam, state.params_mut(), &grad)?;
                    telemetry.steps.push(StepKind::Data);
                }
                _ => {
                    let (w1, w2) = match config.strategy {
                        Strategy::TrainableWeight { .. } => (1.0, theta),
                        _ => (1.0 - theta, theta),
                    };
                    grad.fill(0.0);
                    l1_sum += loss1_gradient(&state, residual, rb, w1, &mut grad);
                    l2_sum += loss2_gradient(&state, data, db, w2, &mut grad);
                    state.adam_step(&grad)?;
                }
            }
        }
        if state.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidConfig(format!("parameters became non-finite in epoch {epoch}")));
        }

        let l1 = l1_sum / steps as f64;
        let l2 = l2_sum / steps as f64;
        let eval_l1 = residual_set_loss(&state, residual);
        let eval_l2 = data_set_loss(&state, data);
        let combined = match config.strategy {
            Strategy::TrainableWeight { .. } => unconstrained_loss(eval_l1, eval_l2, theta),
            _ => weighted_loss(eval_l1, eval_l2, theta)?,
        };
        let ratio = (l1 + l2 > 0.0).then(|| l1 / (l1 + l2));

        let mut record = EpochRecord {
            epoch,
            l1,
            l2,
            eval_l1,
            eval_l2,
            theta,
            combined,
            ratio,
            drive: None,
            grad_norm_1: None,
            grad_norm_2: None,
            degenerate_probe: false,
            wall_ms: 0.0,
        };

        // next epoch's weight
        match config.strategy {
            Strategy::AlternatingAdam | Strategy::FixedWeight => {}
            Strategy::TrainableWeight { step } => theta += step * l2,
            Strategy::LossMomentum { alpha, init } => {
                let r = ratio.or(drive).unwrap_or(theta);
                if epoch < config.warmup {
                    warmup_ratios.push(r);
                }
                if epoch + 1 >= config.warmup {
                    let r = if epoch + 1 == config.warmup && init == RatioInit::WarmupAverage {
                        warmup_ratios.iter().sum::<f64>() / warmup_ratios.len() as f64
                    } else {
                        r
                    };
                    drive = Some(r);
                    theta = alpha * theta + (1.0 - alpha) * r;
                } else {
                    drive = Some(r);
                }
            }
            Strategy::LossMomentumAlt { alpha } => {
                ratio_sum += ratio.or(drive).unwrap_or(theta);
                let avg = ratio_sum / (epoch + 1) as f64;
                drive = Some(avg);
                if epoch + 1 >= config.warmup {
                    theta = alpha * theta + (1.0 - alpha) * avg;
                }
            }
            Strategy::GradientMomentum { alpha, probe } => {
                let ri = sample_probe(residual.len(), probe, &mut probe_rng);
                let di = sample_probe(data.len(), probe, &mut probe_rng);
                let (a, b) = gradient_norms(&state, residual, &ri, data, &di);
                record.grad_norm_1 = Some(a);
                record.grad_norm_2 = Some(b);
                let r = if a + b > 0.0 {
                    a / (a + b)
                } else {
                    record.degenerate_probe = true;
                    drive.unwrap_or(theta)
                };
                drive = Some(r);
                if epoch + 1 >= config.warmup {
                    theta = alpha * theta + (1.0 - alpha) * r;
                }
            }
        }
        record.drive = drive.filter(|_| config.strategy.is_momentum());

        if config.strategy.is_momentum() && epoch >= config.warmup {
            let lo = config.collapse_low;
            if record.theta < lo || record.theta > 1.0 - lo {
                streak += 1;
                if streak >= config.collapse_patience && !telemetry.failed {
                    telemetry.failed = true;
                    telemetry.failure_epoch = Some(epoch);
                }
            } else {
                streak = 0;
            }
        }

        let better = match &best {
            None => true,
            Some((c, _, _)) => combined < *c,
        };
        if rule == CheckpointRule::MinCombinedLoss && better {
            best = Some((combined, epoch, state.clone()));
        }
        record.wall_ms = started.elapsed().as_secs_f64() * 1e3;
        telemetry.records.push(record);
    }

    match (rule, best) {
        (CheckpointRule::MinCombinedLoss, Some((_, epoch, params))) => {
            telemetry.selected_epoch = epoch;
            Ok((params, telemetry))
        }
        _ => {
            telemetry.selected_epoch = config.epochs - 1;
            Ok((state, telemetry))
        }
    }
}

fn sample_probe(n: usize, k: usize, rng: &mut crate::rng::SimRng) -> Vec<usize> {
    let mut idx = rand::seq::index::sample(rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}
