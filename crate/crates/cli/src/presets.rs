//! Named experiments.
//!
//! Full-scale presets carry the published hyper-parameters. Each has a
//! `-desk` twin with fewer trajectories and epochs that finishes in minutes
//! on one core; the twins are separate names so nothing is scaled down
//! behind the user's back.

use crate::config::{
    AnchorKind, DensitySection, ExperimentConfig, GridSection, NetworkSection, ReferenceSection, SamplingKind,
    SamplingSection, StrategyKind, TrainerSection,
};

const DESK_SUFFIX: &str = "-desk";

fn trainer(strategy: StrategyKind, fixed_theta: f64, epochs: usize) -> TrainerSection {
    let (theta0, alpha) = match strategy {
        StrategyKind::AlternatingAdam => (0.5, 0.4),
        StrategyKind::FixedWeight => (fixed_theta, 0.4),
        StrategyKind::TrainableWeight => (0.0, 0.4),
        StrategyKind::LossMomentum => (0.99, 0.4),
        StrategyKind::LossMomentumAlt => (0.99, 0.6),
        StrategyKind::GradientMomentum => (0.99, 0.4),
    };
    TrainerSection {
        strategy,
        epochs,
        theta0,
        alpha,
        ratio_init: crate::config::RatioInitKind::LastWarmup,
        trainable_step: 1e-3,
        probe: 500,
        residual_batch: 128,
        data_batch: 128,
        warmup: 5,
        checkpoint: None,
        learning_rate: 1e-3,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
        collapse_low: 0.01,
        collapse_patience: 5,
    }
}

fn standard_sampling(nx: usize, ny: usize, iy: usize, extra: usize) -> SamplingSection {
    SamplingSection {
        mode: SamplingKind::Standard,
        uniform_fraction: 0.5,
        residual_uniform_fraction: 1.0,
        residual_count: nx,
        extra_uniform_residual: extra,
        data_count: ny,
        initial_count: iy,
        anchor_times: Vec::new(),
        anchor_selection: AnchorKind::Grid,
        anchor_stride: 1,
    }
}

fn anchor_sampling(
    nx: usize,
    extra: usize,
    initial: usize,
    times: Vec<f64>,
    selection: AnchorKind,
    per_anchor: usize,
    stride: usize,
) -> SamplingSection {
    SamplingSection {
        mode: SamplingKind::Anchor,
        data_count: initial + per_anchor * times.len(),
        anchor_times: times,
        anchor_selection: selection,
        anchor_stride: stride,
        ..standard_sampling(nx, 0, initial, extra)
    }
}

struct Base {
    name: String,
    model: &'static str,
    distribution: &'static str,
    horizon: Option<f64>,
    repeats: usize,
    cells: Vec<usize>,
    slices: usize,
    sampling: SamplingSection,
    trainer: TrainerSection,
    refine: usize,
}

fn build(b: Base) -> ExperimentConfig {
    ExperimentConfig {
        name: b.name,
        model: b.model.into(),
        distribution: b.distribution.into(),
        horizon: b.horizon,
        repeats: b.repeats,
        seed: 0,
        workers: 1,
        output_dir: None,
        grid: GridSection {
            cells: b.cells,
            slices: b.slices,
        },
        density: DensitySection {
            samples: 10_000_000,
            cache: None,
        },
        sampling: b.sampling,
        trainer: b.trainer,
        network: NetworkSection::default(),
        reference: ReferenceSection {
            refine: b.refine,
            ..ReferenceSection::default()
        },
    }
}

fn one_d(distribution: &'static str, strategy: StrategyKind) -> ExperimentConfig {
    let tag = if distribution == "normal_1d" { "normal" } else { "multimodal" };
    build(Base {
        name: format!("1d-{tag}-{}", strategy.slug()),
        model: "double_well_1d",
        distribution,
        horizon: None,
        repeats: 31,
        cells: vec![500],
        slices: 200,
        sampling: standard_sampling(500, 1000, 500, 20_000),
        trainer: trainer(strategy, 0.975, 120),
        refine: 4,
    })
}

fn ring(strategy: StrategyKind) -> ExperimentConfig {
    // smallest of the five published point counts, N_X : N_Y : I_Y = 1 : 2 : 1
    build(Base {
        name: format!("2d-ring-{}", strategy.slug()),
        model: "ring_2d",
        distribution: "gaussian_2d",
        horizon: None,
        repeats: 11,
        cells: vec![200, 200],
        slices: 200,
        sampling: standard_sampling(361, 722, 361, 20_000),
        trainer: trainer(strategy, 0.984, 120),
        refine: 4,
    })
}

fn ring_anchor(name: &str, selection: AnchorKind, epochs: usize) -> ExperimentConfig {
    build(Base {
        name: name.into(),
        model: "ring_2d",
        distribution: "gaussian_2d",
        horizon: None,
        repeats: 11,
        cells: vec![200, 200],
        slices: 200,
        // 34 × 34 = 1156 anchor boxes at stride 6
        sampling: anchor_sampling(361, 20_000, 40_000, vec![0.2], selection, 1156, 6),
        trainer: trainer(StrategyKind::GradientMomentum, 0.984, epochs),
        refine: 4,
    })
}

fn full_presets() -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    for dist in ["normal_1d", "multimodal_1d"] {
        for s in StrategyKind::ALL {
            out.push(one_d(dist, s));
        }
    }
    for s in StrategyKind::ALL {
        out.push(ring(s));
    }
    out.push(ring_anchor("2d-ring-anchor-grid", AnchorKind::Grid, 120));
    out.push(ring_anchor("2d-ring-anchor-ud", AnchorKind::UniformPlusDensity, 240));
    out.push(build(Base {
        name: "1d-multimodal-anchor".into(),
        model: "double_well_1d",
        distribution: "multimodal_1d",
        horizon: None,
        repeats: 31,
        cells: vec![500],
        slices: 200,
        // every one of the 500 boxes at t = 0.4
        sampling: anchor_sampling(500, 20_000, 2500, vec![0.4], AnchorKind::Grid, 500, 1),
        trainer: trainer(StrategyKind::GradientMomentum, 0.975, 240),
        refine: 4,
    }));
    out.push(build(Base {
        name: "2d-ring-multi-anchor".into(),
        model: "ring_2d",
        distribution: "gaussian_2d",
        horizon: Some(1.0),
        repeats: 11,
        cells: vec![200, 200],
        slices: 1000,
        sampling: anchor_sampling(361, 20_000, 40_000, vec![0.2, 0.4, 0.6, 0.8, 1.0], AnchorKind::Grid, 1156, 6),
        trainer: trainer(StrategyKind::GradientMomentum, 0.984, 240),
        refine: 1,
    }));
    out
}

/// Desk-scale twin: `M = 10⁶`, no extra uniform residual points, five
/// repeats, batch 32 and far fewer epochs.
fn desk(mut c: ExperimentConfig) -> ExperimentConfig {
    let two_d = c.grid.cells.len() == 2;
    let anchor = c.sampling.mode == SamplingKind::Anchor;
    c.name.push_str(DESK_SUFFIX);
    c.repeats = 5;
    c.density.samples = 1_000_000;
    c.sampling.extra_uniform_residual = 0;
    c.trainer.residual_batch = 32;
    c.trainer.data_batch = 32;
    c.trainer.epochs = match (two_d, anchor) {
        (false, false) => 40,
        (false, true) => 60,
        (true, _) => 20,
    };
    if two_d {
        c.reference.refine = 1;
        if anchor {
            // 2500 initial points instead of 40 000 keep an epoch short
            let per_anchor = (c.sampling.data_count - c.sampling.initial_count) / c.sampling.anchor_times.len();
            c.sampling.initial_count = 2500;
            c.sampling.data_count = 2500 + per_anchor * c.sampling.anchor_times.len();
        }
        if c.horizon == Some(1.0) {
            // a 100² × 250 grid keeps the density field small; stride 3 gives
            // the same 34 × 34 anchor lattice
            c.grid.cells = vec![100, 100];
            c.grid.slices = 250;
            c.sampling.anchor_stride = 3;
        }
    }
    c
}

pub fn all_presets() -> Vec<ExperimentConfig> {
    let full = full_presets();
    let desk_twins: Vec<_> = full.iter().cloned().map(desk).collect();
    full.into_iter().chain(desk_twins).collect()
}

pub fn preset_names() -> Vec<String> {
    all_presets().into_iter().map(|c| c.name).collect()
}

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    all_presets().into_iter().find(|c| c.name == name)
}
