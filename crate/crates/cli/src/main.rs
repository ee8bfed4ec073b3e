use std::fs;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use fokker_cli::args::ExperimentArgs;
use fokker_cli::heatmap::{difference, export_heatmap};
use fokker_cli::pipeline::{self, Artifacts, Setup};
use fokker_cli::presets::all_presets;
use fokker_cli::summary::RepeatStatus;
use fokker_core::reference::l2_norm;

#[derive(Parser)]
#[command(name = "fokker", version, about = "Neural Fokker-Planck experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo density grid, written in the binary grid format.
    EstimateDensity {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Defaults to `<output>/density.bin`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Crank-Nicolson reference solution.
    SolveReference {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Defaults to `<output>/reference.bin`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also export a heat map CSV of the reference.
        #[arg(long)]
        heatmap: Option<PathBuf>,
        /// Slice for 2D heat maps; defaults to the last one.
        #[arg(long)]
        slice: Option<usize>,
    },
    /// One training repeat: sample, train, evaluate.
    Train {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, default_value_t = 0)]
        repeat: usize,
        /// Copy the trained network here as well.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write solution.csv and error_map.csv at the final slice.
        #[arg(long)]
        heatmaps: bool,
        /// Write the sampled training points.
        #[arg(long)]
        points: bool,
    },
    /// Error report of a saved network against the reference.
    Evaluate {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory for errors.csv and heat maps.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        slice: Option<usize>,
    },
    /// All repeats of an experiment plus the summary.
    Run {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Write solution.csv and error_map.csv at the final slice.
        #[arg(long)]
        heatmaps: bool,
        /// Write the sampled training points.
        #[arg(long)]
        points: bool,
    },
    /// Recomputes the statistics of a finished run directory.
    Summarize { dir: PathBuf },
    /// Lists the presets, or prints one as TOML.
    Presets {
        #[arg(long)]
        show: Option<String>,
    },
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::EstimateDensity { exp, out } => {
            let config = exp.resolve()?;
            let setup = Setup::new(&config)?;
            let out = out.unwrap_or_else(|| pipeline::output_dir(&config).join("density.bin"));
            let grid = pipeline::density_grid(&config, &setup, Some(&out))?;
            println!("density grid {} ({} trajectories)", out.display(), grid.samples());
        }
        Command::SolveReference {
            exp,
            out,
            heatmap,
            slice,
        } => {
            let config = exp.resolve()?;
            let setup = Setup::new(&config)?;
            let out = out.unwrap_or_else(|| pipeline::output_dir(&config).join("reference.bin"));
            let r = pipeline::reference(&config, &setup, Some(&out))?;
            println!("reference {} (L2 norm {:.6e})", out.display(), l2_norm(r.field()));
            if let Some(path) = heatmap {
                export_heatmap(r.field(), slice.unwrap_or(r.spec().slices()), &path)?;
            }
        }
        Command::Train {
            exp,
            repeat,
            checkpoint,
            heatmaps,
            points,
        } => {
            let config = exp.resolve()?;
            let dir = pipeline::output_dir(&config);
            let prep = pipeline::prepare(&config, &dir)?;
            let rec = pipeline::run_repeat(&config, &prep, repeat, &dir, Artifacts { points, heatmaps });
            println!("{}", serde_line(&rec)?);
            if rec.status == RepeatStatus::Error {
                anyhow::bail!("repeat {repeat} failed: {}", rec.message);
            }
            if let Some(path) = checkpoint {
                let src = dir.join(format!("repeat-{repeat:03}")).join("network.fpnet");
                fs::copy(&src, &path).with_context(|| format!("copying checkpoint to {}", path.display()))?;
            }
        }
        Command::Evaluate {
            exp,
            checkpoint,
            out,
            slice,
        } => {
            let config = exp.resolve()?;
            let setup = Setup::new(&config)?;
            let dir = pipeline::output_dir(&config);
            let cache = config.reference.cache.clone().unwrap_or_else(|| dir.join("reference.bin"));
            let reference = pipeline::reference(&config, &setup, Some(&cache))?;
            let net = pipeline::read_checkpoint(&checkpoint)?;
            let (field, report) = pipeline::evaluate(&net, &reference)?;
            let norm = l2_norm(reference.field());
            println!(
                "aggregate L2 {:.6e} (relative {:.4}), max |err| {:.6e}",
                report.aggregate,
                report.aggregate / norm,
                report.max_abs
            );
            if let Some(out) = out {
                fs::create_dir_all(&out)?;
                let f = fs::File::create(out.join("errors.csv"))?;
                pipeline::write_error_csv(&report, reference.spec(), std::io::BufWriter::new(f))?;
                let s = slice.unwrap_or(reference.spec().slices());
                export_heatmap(&field, s, &out.join("solution.csv"))?;
                export_heatmap(&difference(reference.field(), &field)?, s, &out.join("error_map.csv"))?;
            }
        }
        Command::Run { exp, heatmaps, points } => {
            let config = exp.resolve()?;
            let dir = pipeline::output_dir(&config);
            let summary = pipeline::run_experiment_in(&config, &dir, Artifacts { points, heatmaps })?;
            print!("{}", summary.report());
            println!("results in {}", dir.display());
        }
        Command::Summarize { dir } => {
            print!("{}", pipeline::load_summary(&dir)?.report());
        }
        Command::Presets { show } => {
            let mut stdout = std::io::stdout().lock();
            match show {
                Some(name) => {
                    let c = fokker_cli::presets::preset(&name).with_context(|| format!("unknown preset '{name}'"))?;
                    write!(stdout, "{}", c.to_toml()?)?;
                }
                None => {
                    for c in all_presets() {
                        writeln!(
                            stdout,
                            "{:<34} {:<15} {:>4} epochs {:>3} repeats",
                            c.name, c.model, c.trainer.epochs, c.repeats
                        )?;
                    }
                }
            }
        }
    }
    Ok(())
}

fn serde_line(rec: &fokker_cli::summary::RepeatRecord) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(Vec::new());
    w.serialize(rec)?;
    Ok(String::from_utf8(w.into_inner()?)?.trim_end().to_string())
}
