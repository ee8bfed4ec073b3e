//! Experiment orchestration: density grid, reference solve, and the
//! per-repeat sample/train/evaluate loop.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use fokker_core::reference::l2_norm;
use fokker_core::rng::derive_seed;
use fokker_core::{
    crank_nicolson_solve, estimate_density_grid, evaluate_network_on_grid, l2_error, sample_points, train,
    DensityGrid, ErrorReport, GridSpec, InitialDistribution, NetworkState, PointSet, ReferenceSolution, SdeModel,
    TrainingTelemetry,
};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::heatmap::{difference, export_heatmap};
use crate::summary::{RepeatRecord, RepeatStatus, Summary};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_VAR: &str = "FPNET_OUTPUT_ROOT";

/// Index passed to `derive_seed` for the Monte Carlo density grid, out of
/// the range used by repeats.
pub const DENSITY_SEED_INDEX: u64 = u64::MAX;

/// Seeds of one repeat. Each consumer gets its own child of the repeat seed
/// so point sampling, initialization and shuffling are independent streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RepeatSeeds {
    pub repeat: u64,
    pub sampling: u64,
    pub network: u64,
    pub trainer: u64,
}

impl RepeatSeeds {
    pub fn new(master: u64, repeat: usize) -> Self {
        let repeat = derive_seed(master, repeat as u64);
        Self {
            repeat,
            sampling: derive_seed(repeat, 0),
            network: derive_seed(repeat, 1),
            trainer: derive_seed(repeat, 2),
        }
    }
}

pub fn density_seed(master: u64) -> u64 {
    derive_seed(master, DENSITY_SEED_INDEX)
}

/// Where results go: the config's `output_dir`, else `<root>/<name>` with
/// the root taken from `FPNET_OUTPUT_ROOT` (default `runs`).
pub fn output_dir(config: &ExperimentConfig) -> PathBuf {
    match &config.output_dir {
        Some(p) => p.clone(),
        None => {
            let root = std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| "runs".into());
            root.join(&config.name)
        }
    }
}

/// Model, law and grid resolved from a config.
pub struct Setup {
    pub model: SdeModel,
    pub dist: InitialDistribution,
    pub spec: GridSpec,
}

impl Setup {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let model = config.model()?;
        let dist = config.distribution(&model)?;
        let spec = config.grid_spec(&model)?;
        Ok(Self { model, dist, spec })
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush()?;
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

/// Estimates the density grid, or reads it from `cache` when that file
/// exists. A cached grid must match the configured lattice and `M`.
pub fn density_grid(config: &ExperimentConfig, setup: &Setup, cache: Option<&Path>) -> Result<DensityGrid> {
    if let Some(path) = cache.filter(|p| p.exists()) {
        let grid = DensityGrid::read_binary(open(path)?).with_context(|| format!("reading {}", path.display()))?;
        if !grid.spec().is_compatible(&setup.spec) || grid.samples() != config.density.samples {
            bail!(
                "density cache {} was built for a different grid or sample count; remove it or choose another path",
                path.display()
            );
        }
        return Ok(grid);
    }
    let grid = estimate_density_grid(
        &setup.model,
        &setup.dist,
        &setup.spec,
        config.density.samples,
        density_seed(config.seed),
    )?;
    if let Some(path) = cache {
        write_file(path, |w| Ok(grid.write_binary(w)?))?;
    }
    Ok(grid)
}

/// Crank-Nicolson reference on the experiment grid, cached like the density.
pub fn reference(config: &ExperimentConfig, setup: &Setup, cache: Option<&Path>) -> Result<ReferenceSolution> {
    if let Some(path) = cache.filter(|p| p.exists()) {
        let r = ReferenceSolution::read_binary(open(path)?, setup.model.name())
            .with_context(|| format!("reading {}", path.display()))?;
        if !r.spec().is_compatible(&setup.spec) {
            bail!("reference cache {} was built for a different grid", path.display());
        }
        return Ok(r);
    }
    let r = crank_nicolson_solve(&setup.model, &setup.dist, &setup.spec, &config.cn_options())?;
    if let Some(path) = cache {
        write_file(path, |w| Ok(r.write_binary(w)?))?;
    }
    Ok(r)
}

pub fn sample(config: &ExperimentConfig, setup: &Setup, grid: &DensityGrid, seeds: RepeatSeeds) -> Result<PointSet> {
    Ok(sample_points(&setup.model, &setup.dist, grid, &config.sample_plan(seeds.sampling))?)
}

pub fn train_repeat(
    config: &ExperimentConfig,
    setup: &Setup,
    points: &PointSet,
    seeds: RepeatSeeds,
) -> Result<(NetworkState, TrainingTelemetry)> {
    let net = config.network(seeds.network)?;
    Ok(train(&config.trainer_config(seeds.trainer), &setup.model, points, net)?)
}

/// Network evaluated on the reference grid plus its error report.
pub fn evaluate(net: &NetworkState, reference: &ReferenceSolution) -> Result<(fokker_core::GriddedField, ErrorReport)> {
    let field = evaluate_network_on_grid(net, reference.spec())?;
    let report = l2_error(&field, reference.field(), None)?;
    Ok((field, report))
}

pub fn write_error_csv<W: Write>(report: &ErrorReport, spec: &GridSpec, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["slice", "t", "l2_error"])?;
    for (n, e) in report.per_slice.iter().enumerate() {
        out.write_record([n.to_string(), spec.slice_time(n).to_string(), e.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_checkpoint(net: &NetworkState, path: &Path) -> Result<()> {
    write_file(path, |w| Ok(net.write_checkpoint(w)?))
}

pub fn read_checkpoint(path: &Path) -> Result<NetworkState> {
    NetworkState::read_checkpoint(open(path)?).with_context(|| format!("reading {}", path.display()))
}

/// What the per-repeat loop writes besides the summary row.
#[derive(Clone, Copy, Debug, Default)]
pub struct Artifacts {
    pub points: bool,
    pub heatmaps: bool,
}

/// Shared inputs of every repeat.
pub struct Prepared {
    pub setup: Setup,
    pub grid: DensityGrid,
    pub reference: ReferenceSolution,
    pub reference_norm: f64,
}

pub fn prepare(config: &ExperimentConfig, dir: &Path) -> Result<Prepared> {
    let setup = Setup::new(config)?;
    let density_cache = config.density.cache.clone().unwrap_or_else(|| dir.join("density.bin"));
    let reference_cache = config.reference.cache.clone().unwrap_or_else(|| dir.join("reference.bin"));
    let grid = density_grid(config, &setup, Some(&density_cache))?;
    let reference = reference(config, &setup, Some(&reference_cache))?;
    let reference_norm = l2_norm(reference.field());
    Ok(Prepared {
        setup,
        grid,
        reference,
        reference_norm,
    })
}

/// Samples, trains and evaluates one repeat, writing its files under
/// `dir/repeat-NNN`. Failures end up in the record rather than an `Err`.
pub fn run_repeat(config: &ExperimentConfig, prep: &Prepared, repeat: usize, dir: &Path, artifacts: Artifacts) -> RepeatRecord {
    let seeds = RepeatSeeds::new(config.seed, repeat);
    let start = Instant::now();
    let mut record = RepeatRecord::pending(repeat, seeds.repeat);
    let result = (|| -> Result<()> {
        let rdir = dir.join(format!("repeat-{repeat:03}"));
        fs::create_dir_all(&rdir).with_context(|| format!("creating {}", rdir.display()))?;
        let points = sample(config, &prep.setup, &prep.grid, seeds)?;
        if artifacts.points {
            write_file(&rdir.join("points.csv"), |w| Ok(points.write_csv(w)?))?;
        }
        let (net, tel) = train_repeat(config, &prep.setup, &points, seeds)?;
        write_file(&rdir.join("telemetry.csv"), |w| Ok(tel.write_csv(w)?))?;
        write_checkpoint(&net, &rdir.join("network.fpnet"))?;
        let (field, report) = evaluate(&net, &prep.reference)?;
        write_file(&rdir.join("errors.csv"), |w| write_error_csv(&report, prep.reference.spec(), w))?;
        if artifacts.heatmaps {
            let last = prep.reference.spec().slices();
            export_heatmap(&field, last, &rdir.join("solution.csv"))?;
            let err = difference(prep.reference.field(), &field)?;
            export_heatmap(&err, last, &rdir.join("error_map.csv"))?;
        }
        record.status = if tel.failed {
            RepeatStatus::Collapsed
        } else {
            RepeatStatus::Completed
        };
        record.aggregate_l2 = Some(report.aggregate);
        record.relative_l2 = Some(report.aggregate / prep.reference_norm);
        record.max_abs = Some(report.max_abs);
        record.selected_epoch = Some(tel.selected_epoch);
        record.failure_epoch = tel.failure_epoch;
        record.final_theta = tel.records.last().map(|r| r.theta);
        Ok(())
    })();
    if let Err(e) = result {
        record.status = RepeatStatus::Error;
        record.message = format!("{e:#}");
    }
    record.wall_s = start.elapsed().as_secs_f64();
    record
}

/// Runs every repeat (in parallel up to `workers`), writes per-repeat files
/// and `summary.csv` / `summary.txt` under `dir`, and returns the summary.
pub fn run_experiment_in(config: &ExperimentConfig, dir: &Path, artifacts: Artifacts) -> Result<Summary> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_file(&dir.join("config.toml"), |w| Ok(w.write_all(config.to_toml()?.as_bytes())?))?;
    let prep = prepare(config, dir)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(config.workers).build()?;
    let records: Vec<RepeatRecord> = pool.install(|| {
        (0..config.repeats)
            .into_par_iter()
            .map(|r| run_repeat(config, &prep, r, dir, artifacts))
            .collect()
    });
    let summary = Summary::new(config.name.clone(), prep.reference_norm, records);
    write_file(&dir.join("summary.csv"), |w| summary.write_csv(w))?;
    write_file(&dir.join("summary.txt"), |w| Ok(w.write_all(summary.report().as_bytes())?))?;
    Ok(summary)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<Summary> {
    run_experiment_in(config, &output_dir(config), Artifacts::default())
}

/// Re-reads a finished run directory. The reference norm is recovered from
/// any record carrying both the absolute and the relative error.
pub fn load_summary(dir: &Path) -> Result<Summary> {
    let config = ExperimentConfig::load(&dir.join("config.toml"))?;
    let s = Summary::read_csv(config.name, f64::NAN, open(&dir.join("summary.csv"))?)?;
    let norm = s
        .records
        .iter()
        .find_map(|r| match (r.aggregate_l2, r.relative_l2) {
            (Some(a), Some(rel)) if rel > 0.0 => Some(a / rel),
            _ => None,
        })
        .unwrap_or(f64::NAN);
    Ok(Summary { reference_norm: norm, ..s })
}
