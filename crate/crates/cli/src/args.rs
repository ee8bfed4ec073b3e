//! Command-line overrides shared by every verb. Flags mirror config keys.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Result};
use clap::Args;

use crate::config::{AnchorKind, CheckpointKind, ExperimentConfig, SamplingKind, StrategyKind};
use crate::presets::preset;

#[derive(Args, Clone, Debug, Default)]
pub struct ExperimentArgs {
    /// TOML experiment file.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Named preset (see `fokker presets`).
    #[arg(long)]
    pub preset: Option<String>,
    /// `standard`, `anchor-grid` or `anchor-ud`.
    #[arg(long)]
    pub sampling: Option<String>,
    /// Momentum weight α of the momentum strategies.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Uniform fraction of the mixed collocation sampler.
    #[arg(long)]
    pub uniform_fraction: Option<f64>,
    /// Residual points N_X (mixed sampler; extra uniform points come on top).
    #[arg(long)]
    pub nx: Option<usize>,
    /// Collocation points N_Y, initial draws included.
    #[arg(long)]
    pub ny: Option<usize>,
    /// Collocation points I_Y drawn from the initial law at t = 0.
    #[arg(long)]
    pub iy: Option<usize>,
    /// Comma-separated anchor times.
    #[arg(long, value_delimiter = ',')]
    pub anchors: Option<Vec<f64>>,
    #[arg(long)]
    pub anchor_stride: Option<usize>,
    /// alternating, fixed, trainable, loss-momentum, loss-momentum-alt or grad-momentum.
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub theta0: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Residual and data mini-batch size.
    #[arg(long)]
    pub batch: Option<usize>,
    /// `min-combined-loss` or `final-epoch`.
    #[arg(long)]
    pub checkpoint_rule: Option<String>,
    /// Monte Carlo trajectories M.
    #[arg(long)]
    pub samples: Option<u64>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Master seed; every repeat derives its own.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Repeats trained in parallel.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Run directory; defaults to $FPNET_OUTPUT_ROOT/<name> (root `runs`).
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub density_cache: Option<PathBuf>,
    #[arg(long)]
    pub reference_cache: Option<PathBuf>,
}

impl ExperimentArgs {
    pub fn base(&self) -> Result<ExperimentConfig> {
        match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path),
            (None, Some(name)) => preset(name).ok_or_else(|| anyhow!("unknown preset '{name}'")),
            (None, None) => bail!("pass --config <file> or --preset <name>"),
        }
    }

    /// The base config with every given flag applied, validated.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = self.base()?;
        self.apply(&mut c)?;
        c.validate()?;
        Ok(c)
    }

    pub fn apply(&self, c: &mut ExperimentConfig) -> Result<()> {
        if let Some(s) = &self.sampling {
            match s.as_str() {
                "standard" => c.sampling.mode = SamplingKind::Standard,
                "anchor-grid" | "anchor" => {
                    c.sampling.mode = SamplingKind::Anchor;
                    c.sampling.anchor_selection = AnchorKind::Grid;
                }
                "anchor-ud" => {
                    c.sampling.mode = SamplingKind::Anchor;
                    c.sampling.anchor_selection = AnchorKind::UniformPlusDensity;
                }
                other => bail!("unknown sampling mode '{other}'"),
            }
            if c.sampling.mode == SamplingKind::Anchor && c.sampling.anchor_times.is_empty() && self.anchors.is_none() {
                c.sampling.anchor_times = vec![c.model()?.horizon()];
            }
        }
        if let Some(a) = &self.anchors {
            c.sampling.anchor_times = a.clone();
        }
        set(&mut c.sampling.anchor_stride, self.anchor_stride);
        set(&mut c.trainer.alpha, self.alpha);
        set(&mut c.sampling.uniform_fraction, self.uniform_fraction);
        set(&mut c.sampling.residual_count, self.nx);
        set(&mut c.sampling.data_count, self.ny);
        set(&mut c.sampling.initial_count, self.iy);
        if let Some(s) = &self.strategy {
            c.trainer.strategy = StrategyKind::from_slug(s).ok_or_else(|| anyhow!("unknown strategy '{s}'"))?;
        }
        set(&mut c.trainer.theta0, self.theta0);
        set(&mut c.trainer.epochs, self.epochs);
        set(&mut c.trainer.learning_rate, self.learning_rate);
        if let Some(b) = self.batch {
            c.trainer.residual_batch = b;
            c.trainer.data_batch = b;
        }
        if let Some(rule) = &self.checkpoint_rule {
            c.trainer.checkpoint = Some(match rule.as_str() {
                "min-combined-loss" => CheckpointKind::MinCombinedLoss,
                "final-epoch" => CheckpointKind::FinalEpoch,
                other => bail!("unknown checkpoint rule '{other}'"),
            });
        }
        set(&mut c.density.samples, self.samples);
        set(&mut c.repeats, self.repeats);
        set(&mut c.seed, self.seed);
        set(&mut c.workers, self.workers);
        if let Some(o) = &self.output {
            c.output_dir = Some(o.clone());
        }
        if let Some(p) = &self.density_cache {
            c.density.cache = Some(p.clone());
        }
        if let Some(p) = &self.reference_cache {
            c.reference.cache = Some(p.clone());
        }
        Ok(())
    }
}

fn set<T: Copy>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(preset: &str) -> ExperimentArgs {
        ExperimentArgs {
            preset: Some(preset.into()),
            ..Default::default()
        }
    }

    #[test]
    fn flags_override_preset_values() {
        let a = ExperimentArgs {
            alpha: Some(0.05),
            strategy: Some("loss-momentum".into()),
            epochs: Some(7),
            nx: Some(11),
            batch: Some(16),
            ..args("1d-multimodal-grad-momentum-desk")
        };
        let c = a.resolve().unwrap();
        assert_eq!(c.trainer.strategy, StrategyKind::LossMomentum);
        assert_eq!((c.trainer.alpha, c.trainer.epochs), (0.05, 7));
        assert_eq!(c.sampling.residual_count, 11);
        assert_eq!((c.trainer.residual_batch, c.trainer.data_batch), (16, 16));
    }

    #[test]
    fn alpha_and_uniform_fraction_are_separate_keys() {
        let a = ExperimentArgs {
            alpha: Some(0.2),
            uniform_fraction: Some(0.8),
            ..args("1d-normal-grad-momentum-desk")
        };
        let c = a.resolve().unwrap();
        assert_eq!(c.trainer.alpha, 0.2);
        assert_eq!(c.sampling.uniform_fraction, 0.8);
    }

    #[test]
    fn switching_to_anchor_sampling_defaults_to_the_horizon() {
        let a = ExperimentArgs {
            sampling: Some("anchor-grid".into()),
            ..args("1d-normal-grad-momentum-desk")
        };
        let c = a.resolve().unwrap();
        assert_eq!(c.sampling.mode, SamplingKind::Anchor);
        assert_eq!(c.sampling.anchor_times, vec![0.4]);
    }

    #[test]
    fn bad_names_are_errors() {
        assert!(args("no-such-preset").resolve().is_err());
        let a = ExperimentArgs {
            strategy: Some("sgd".into()),
            ..args("1d-normal-fixed")
        };
        assert!(a.resolve().is_err());
        assert!(ExperimentArgs::default().resolve().is_err());
    }
}
