//! TOML experiment configuration.
//!
//! Every key has a default matching the published setting where one
//! exists; see `presets` for the named experiments.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fokker_core::network::DEFAULT_WIDTHS;
use fokker_core::{
    AdamConfig, AnchorSelection, CheckpointRule, CnMethod, CnOptions, GridSpec, InitialDistribution,
    NetworkState, OutputActivation, RatioInit, SamplePlan, SamplingMode, SdeModel, Strategy, TrainerConfig,
};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// `double_well_1d` or `ring_2d`.
    pub model: String,
    /// `normal_1d`, `multimodal_1d`, `gaussian_2d` or `uniform`.
    pub distribution: String,
    /// Overrides the model's time horizon `T`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default = "one")]
    pub repeats: usize,
    /// Master seed; repeat `r` uses `derive_seed(seed, r)`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub grid: GridSection,
    pub density: DensitySection,
    pub sampling: SamplingSection,
    pub trainer: TrainerSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub reference: ReferenceSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Boxes per axis.
    pub cells: Vec<usize>,
    /// Time steps `L`, so `δt = T / L`.
    pub slices: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySection {
    /// Monte Carlo trajectories `M`.
    pub samples: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingKind {
    Standard,
    Anchor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorKind {
    Grid,
    UniformPlusDensity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    #[serde(default = "standard")]
    pub mode: SamplingKind,
    /// `α` of the mixed sampler for Monte Carlo collocation points.
    #[serde(default = "half")]
    pub uniform_fraction: f64,
    #[serde(default = "unit")]
    pub residual_uniform_fraction: f64,
    /// `N_X`.
    pub residual_count: usize,
    #[serde(default)]
    pub extra_uniform_residual: usize,
    /// `N_Y`, initial points included.
    pub data_count: usize,
    /// `I_Y`.
    pub initial_count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub anchor_times: Vec<f64>,
    #[serde(default = "grid_anchor")]
    pub anchor_selection: AnchorKind,
    #[serde(default = "one")]
    pub anchor_stride: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    AlternatingAdam,
    FixedWeight,
    TrainableWeight,
    LossMomentum,
    LossMomentumAlt,
    GradientMomentum,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::AlternatingAdam,
        StrategyKind::FixedWeight,
        StrategyKind::TrainableWeight,
        StrategyKind::LossMomentum,
        StrategyKind::LossMomentumAlt,
        StrategyKind::GradientMomentum,
    ];

    /// Name used in preset names and on the command line.
    pub fn slug(self) -> &'static str {
        match self {
            StrategyKind::AlternatingAdam => "alternating",
            StrategyKind::FixedWeight => "fixed",
            StrategyKind::TrainableWeight => "trainable",
            StrategyKind::LossMomentum => "loss-momentum",
            StrategyKind::LossMomentumAlt => "loss-momentum-alt",
            StrategyKind::GradientMomentum => "grad-momentum",
        }
    }

    pub fn from_slug(s: &str) -> Option<Self> {
        let norm = s.replace('_', "-");
        Self::ALL.into_iter().find(|k| {
            k.slug() == norm
                || match k {
                    StrategyKind::AlternatingAdam => norm == "alternating-adam",
                    StrategyKind::FixedWeight => norm == "fixed-weight",
                    StrategyKind::TrainableWeight => norm == "trainable-weight",
                    StrategyKind::GradientMomentum => norm == "gradient-momentum",
                    _ => false,
                }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioInitKind {
    LastWarmup,
    WarmupAverage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    MinCombinedLoss,
    FinalEpoch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSection {
    pub strategy: StrategyKind,
    pub epochs: usize,
    pub theta0: f64,
    /// Momentum weight; ignored by non-momentum strategies.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "last_warmup")]
    pub ratio_init: RatioInitKind,
    #[serde(default = "default_trainable_step")]
    pub trainable_step: f64,
    #[serde(default = "default_probe")]
    pub probe: usize,
    #[serde(default = "default_batch")]
    pub residual_batch: usize,
    #[serde(default = "default_batch")]
    pub data_batch: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    /// Strategy default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<CheckpointKind>,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_collapse_low")]
    pub collapse_low: f64,
    #[serde(default = "default_collapse_patience")]
    pub collapse_patience: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Sigmoid,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    /// Hidden layer widths.
    #[serde(default = "default_widths")]
    pub widths: Vec<usize>,
    #[serde(default = "sigmoid")]
    pub output: OutputKind,
    /// Scale on the Glorot-uniform bound.
    #[serde(default = "default_gain")]
    pub init_gain: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            widths: default_widths(),
            output: OutputKind::Sigmoid,
            init_gain: default_gain(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Auto,
    Direct,
    Adi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    #[serde(default = "one")]
    pub refine: usize,
    #[serde(default)]
    pub pad_cells: usize,
    #[serde(default = "auto")]
    pub method: MethodKind,
    #[serde(default = "default_smoothing")]
    pub smoothing_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
}

impl Default for ReferenceSection {
    fn default() -> Self {
        Self {
            refine: 1,
            pad_cells: 0,
            method: MethodKind::Auto,
            smoothing_steps: default_smoothing(),
            cache: None,
        }
    }
}

fn one() -> usize {
    1
}
fn half() -> f64 {
    0.5
}
fn unit() -> f64 {
    1.0
}
fn standard() -> SamplingKind {
    SamplingKind::Standard
}
fn grid_anchor() -> AnchorKind {
    AnchorKind::Grid
}
fn default_alpha() -> f64 {
    0.4
}
fn last_warmup() -> RatioInitKind {
    RatioInitKind::LastWarmup
}
fn default_trainable_step() -> f64 {
    1e-3
}
fn default_probe() -> usize {
    500
}
fn default_batch() -> usize {
    128
}
fn default_warmup() -> usize {
    5
}
fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_collapse_low() -> f64 {
    0.01
}
fn default_collapse_patience() -> usize {
    5
}
fn default_widths() -> Vec<usize> {
    DEFAULT_WIDTHS.to_vec()
}
fn sigmoid() -> OutputKind {
    OutputKind::Sigmoid
}
fn default_gain() -> f64 {
    fokker_core::network::SIGMOID_INIT_GAIN
}
fn auto() -> MethodKind {
    MethodKind::Auto
}
fn default_smoothing() -> usize {
    2
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing experiment config")?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Checks every section by building the core objects it describes.
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            bail!("repeats must be at least 1");
        }
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        let model = self.model()?;
        let dist = self.distribution(&model)?;
        if dist.dim() != model.dim() {
            bail!(
                "distribution '{}' is {}-dimensional but model '{}' is {}-dimensional",
                self.distribution,
                dist.dim(),
                self.model,
                model.dim()
            );
        }
        let spec = self.grid_spec(&model)?;
        if self.density.samples == 0 {
            bail!("density.samples must be positive");
        }
        self.sample_plan(0).validate(&spec)?;
        self.trainer_config(0).validate()?;
        self.network(0)?;
        if self.reference.refine == 0 {
            bail!("reference.refine must be at least 1");
        }
        Ok(())
    }

    pub fn model(&self) -> Result<SdeModel> {
        let m = SdeModel::preset(&self.model)?;
        Ok(match self.horizon {
            Some(t) => m.with_horizon(t)?,
            None => m,
        })
    }

    pub fn distribution(&self, model: &SdeModel) -> Result<InitialDistribution> {
        Ok(InitialDistribution::preset(&self.distribution, model.domain())?)
    }

    pub fn grid_spec(&self, model: &SdeModel) -> Result<GridSpec> {
        if self.grid.cells.len() != model.dim() {
            bail!(
                "grid.cells has {} entries for a {}-dimensional model",
                self.grid.cells.len(),
                model.dim()
            );
        }
        Ok(GridSpec::new(model.domain(), &self.grid.cells, model.horizon(), self.grid.slices)?)
    }

    pub fn sample_plan(&self, seed: u64) -> SamplePlan {
        let s = &self.sampling;
        let mode = match s.mode {
            SamplingKind::Standard => SamplingMode::Standard,
            SamplingKind::Anchor => SamplingMode::Anchor {
                times: s.anchor_times.clone(),
                selection: match s.anchor_selection {
                    AnchorKind::Grid => AnchorSelection::Grid { stride: s.anchor_stride },
                    AnchorKind::UniformPlusDensity => AnchorSelection::UniformPlusDensity,
                },
            },
        };
        SamplePlan {
            mode,
            uniform_fraction: s.uniform_fraction,
            residual_uniform_fraction: s.residual_uniform_fraction,
            residual_count: s.residual_count,
            extra_uniform_residual: s.extra_uniform_residual,
            data_count: s.data_count,
            initial_count: s.initial_count,
            seed,
        }
    }

    pub fn strategy(&self) -> Strategy {
        let t = &self.trainer;
        match t.strategy {
            StrategyKind::AlternatingAdam => Strategy::AlternatingAdam,
            StrategyKind::FixedWeight => Strategy::FixedWeight,
            StrategyKind::TrainableWeight => Strategy::TrainableWeight { step: t.trainable_step },
            StrategyKind::LossMomentum => Strategy::LossMomentum {
                alpha: t.alpha,
                init: match t.ratio_init {
                    RatioInitKind::LastWarmup => RatioInit::LastWarmup,
                    RatioInitKind::WarmupAverage => RatioInit::WarmupAverage,
                },
            },
            StrategyKind::LossMomentumAlt => Strategy::LossMomentumAlt { alpha: t.alpha },
            StrategyKind::GradientMomentum => Strategy::GradientMomentum {
                alpha: t.alpha,
                probe: t.probe,
            },
        }
    }

    pub fn trainer_config(&self, seed: u64) -> TrainerConfig {
        let t = &self.trainer;
        TrainerConfig {
            residual_batch: t.residual_batch,
            data_batch: t.data_batch,
            warmup: t.warmup,
            checkpoint: t.checkpoint.map(|c| match c {
                CheckpointKind::MinCombinedLoss => CheckpointRule::MinCombinedLoss,
                CheckpointKind::FinalEpoch => CheckpointRule::FinalEpoch,
            }),
            adam: AdamConfig {
                learning_rate: t.learning_rate,
                beta1: t.beta1,
                beta2: t.beta2,
                epsilon: t.epsilon,
            },
            collapse_low: t.collapse_low,
            collapse_patience: t.collapse_patience,
            ..TrainerConfig::new(self.strategy(), t.epochs, t.theta0, seed)
        }
    }

    pub fn layer_sizes(&self, dim: usize) -> Vec<usize> {
        let mut sizes = vec![dim + 1];
        sizes.extend_from_slice(&self.network.widths);
        sizes.push(1);
        sizes
    }

    /// Freshly initialized network for a repeat.
    pub fn network(&self, seed: u64) -> Result<NetworkState> {
        let dim = self.grid.cells.len();
        let output = match self.network.output {
            OutputKind::Sigmoid => OutputActivation::Sigmoid,
            OutputKind::Linear => OutputActivation::Linear,
        };
        let mut net = NetworkState::with_init(&self.layer_sizes(dim), output, seed, self.network.init_gain)?;
        net.set_adam_config(self.trainer_config(seed).adam);
        Ok(net)
    }

    pub fn cn_options(&self) -> CnOptions {
        let r = &self.reference;
        CnOptions {
            refine: r.refine,
            pad_cells: r.pad_cells,
            method: match r.method {
                MethodKind::Auto => CnMethod::Auto,
                MethodKind::Direct => CnMethod::Direct,
                MethodKind::Adi => CnMethod::Adi,
            },
            smoothing_steps: r.smoothing_steps,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "toy"
model = "double_well_1d"
distribution = "normal_1d"

[grid]
cells = [50]
slices = 20

[density]
samples = 1000

[sampling]
residual_count = 40
data_count = 40
initial_count = 20

[trainer]
strategy = "gradient_momentum"
epochs = 10
theta0 = 0.99
"#;

    #[test]
    fn minimal_config_gets_published_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.repeats, 1);
        assert_eq!(c.trainer.alpha, 0.4);
        assert_eq!(c.trainer.probe, 500);
        assert_eq!(c.trainer.warmup, 5);
        assert_eq!(c.sampling.uniform_fraction, 0.5);
        assert_eq!(c.network.widths, DEFAULT_WIDTHS.to_vec());
        assert_eq!(c.layer_sizes(1), vec![2, 16, 256, 256, 256, 16, 4, 1]);
    }

    #[test]
    fn round_trips_through_toml() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let again = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(ExperimentConfig::from_toml(&format!("{MINIMAL}\nbogus = 1\n")).is_err());
        let mut c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.repeats = 0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.model = "nope".into();
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.distribution = "gaussian_2d".into();
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.sampling.initial_count = 41;
        assert!(c.validate().is_err());
    }

    #[test]
    fn strategy_slugs_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(StrategyKind::from_slug(k.slug()), Some(k));
        }
        assert_eq!(
            StrategyKind::from_slug("gradient_momentum"),
            Some(StrategyKind::GradientMomentum)
        );
        assert_eq!(StrategyKind::from_slug("sgd"), None);
    }
}
