//! Neural solver for time-dependent Fokker-Planck equations.
//!
//! A small sigmoid network `u(t, x)` is trained against two losses: the
//! squared Fokker-Planck residual at residual points, and the squared misfit
//! against Monte Carlo density estimates at collocation points. The crate
//! provides every stage of that pipeline:
//!
//! - [`sde`]: drift/diffusion models and Euler-Maruyama stepping
//! - [`density`]: rejection sampling of initial laws and histogram densities
//! - [`sampler`]: residual and collocation point generation (standard and anchor)
//! - [`network`]: the feed-forward surrogate with exact input jets and Adam
//! - [`loss`]: residual operator and the two loss terms
//! - [`trainer`]: the six weight-balancing training strategies
//! - [`reference`]: Crank-Nicolson ground truth and L² error reports
//!
//! [`grid`] holds the space-time lattice shared by Monte Carlo grids,
//! reference solutions and network evaluations, along with its binary format.

pub mod density;
pub mod error;
pub mod grid;
pub mod loss;
pub mod network;
pub mod reference;
pub mod rng;
pub mod sampler;
pub mod sde;
pub mod trainer;

pub use density::{
    estimate_density_grid, lookup_density, rejection_sample_initial, DensityGrid,
    DistributionKind, InitialDistribution,
};
pub use error::{Error, Result};
pub use grid::{GridSpec, GriddedField};
pub use loss::{fp_residual, loss1, loss2, weighted_loss, LossBreakdown};
pub use network::{AdamConfig, JetOrder, JetOutput, NetworkState, OutputActivation};
pub use reference::{
    crank_nicolson_solve, evaluate_network_on_grid, l2_error, CnMethod, CnOptions, ErrorReport,
    ReferenceSolution,
};
pub use sampler::{
    sample_anchor, sample_points, sample_standard, AnchorSelection, DataKind, DataPoint,
    PointSet, ResidualPoint, SamplePlan, SamplingMode,
};
pub use sde::{
    euler_maruyama_step, simulate_trajectory, BoxDomain, Diffusion, DriftField, SdeModel,
    TrajectoryConfig,
};
pub use trainer::{
    train, CheckpointRule, EpochRecord, RatioInit, Strategy, TrainerConfig, TrainingTelemetry,
};
