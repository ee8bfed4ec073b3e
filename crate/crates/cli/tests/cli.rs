use std::fs;
use std::path::Path;
use std::process::Command;

use fokker_cli::config::ExperimentConfig;
use fokker_cli::heatmap::read_heatmap;
use fokker_cli::pipeline::{load_summary, read_checkpoint, run_experiment_in, Artifacts};
use fokker_cli::summary::RepeatStatus;

const TOY: &str = r#"
name = "toy"
model = "double_well_1d"
distribution = "normal_1d"
repeats = 2
seed = 11

[grid]
cells = [60]
slices = 20

[density]
samples = 20000

[sampling]
residual_count = 64
data_count = 64
initial_count = 32

[trainer]
strategy = "gradient_momentum"
epochs = 10
theta0 = 0.99
probe = 32
residual_batch = 32
data_batch = 32

[network]
widths = [8, 8]
"#;

fn toy() -> ExperimentConfig {
    ExperimentConfig::from_toml(TOY).unwrap()
}

fn all_artifacts() -> Artifacts {
    Artifacts {
        points: true,
        heatmaps: true,
    }
}

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_experiment_in(&toy(), dir.path(), all_artifacts()).unwrap();
    assert_eq!(s.records.len(), 2);
    assert_eq!(s.count(RepeatStatus::Error), 0, "{}", s.report());
    for f in ["config.toml", "density.bin", "reference.bin", "summary.csv", "summary.txt"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    for r in 0..2 {
        let rd = dir.path().join(format!("repeat-{r:03}"));
        for f in ["telemetry.csv", "network.fpnet", "errors.csv", "points.csv", "solution.csv", "error_map.csv"] {
            assert!(rd.join(f).is_file(), "repeat {r}: {f}");
        }
        let tel = fs::read_to_string(rd.join("telemetry.csv")).unwrap();
        assert_eq!(tel.lines().count(), 1 + 10);
        let errors = fs::read_to_string(rd.join("errors.csv")).unwrap();
        assert_eq!(errors.lines().count(), 1 + 21);
        let map = read_heatmap(fs::File::open(rd.join("solution.csv")).unwrap()).unwrap();
        assert_eq!(map.rows.len(), 21 * 60);
        read_checkpoint(&rd.join("network.fpnet")).unwrap();
    }
    // the stored config reproduces the run's config
    let stored = ExperimentConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(stored, toy());
    let back = load_summary(dir.path()).unwrap();
    assert_eq!(back.completed(), s.completed());
    assert!((back.reference_norm - s.reference_norm).abs() <= 1e-12 * s.reference_norm);
}

fn summary_rows(dir: &Path) -> Vec<String> {
    // every column except wall-clock time
    let mut rdr = csv::Reader::from_path(dir.join("summary.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let wall = headers.iter().position(|h| h == "wall_s").unwrap();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            r.iter()
                .enumerate()
                .filter(|(i, _)| *i != wall)
                .map(|(_, v)| v)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect()
}

#[test]
fn same_master_seed_gives_identical_results() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut parallel = toy();
    parallel.workers = 2;
    run_experiment_in(&toy(), a.path(), Artifacts::default()).unwrap();
    run_experiment_in(&parallel, b.path(), Artifacts::default()).unwrap();
    assert_eq!(summary_rows(a.path()), summary_rows(b.path()));
    for r in 0..2 {
        let f = format!("repeat-{r:03}/network.fpnet");
        assert_eq!(fs::read(a.path().join(&f)).unwrap(), fs::read(b.path().join(&f)).unwrap());
    }

    let c = tempfile::tempdir().unwrap();
    let mut other = toy();
    other.seed = 12;
    run_experiment_in(&other, c.path(), Artifacts::default()).unwrap();
    assert_ne!(summary_rows(a.path()), summary_rows(c.path()));
}

#[test]
fn mismatched_cache_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment_in(&toy(), dir.path(), Artifacts::default()).unwrap();
    let mut finer = toy();
    finer.grid.cells = vec![70];
    finer.density.cache = Some(dir.path().join("density.bin"));
    let err = run_experiment_in(&finer, &dir.path().join("finer"), Artifacts::default()).unwrap_err();
    assert!(format!("{err:#}").contains("density cache"), "{err:#}");
}

fn fokker(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fokker")).args(args).output().unwrap()
}

#[test]
fn binary_verbs_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("toy.toml");
    fs::write(&cfg, TOY).unwrap();
    let out = dir.path().join("out");
    let (cfg_s, out_s) = (cfg.to_str().unwrap(), out.to_str().unwrap());

    let o = fokker(&["train", "--config", cfg_s, "--output", out_s, "--epochs", "7", "--checkpoint", dir.path().join("net.fpnet").to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("net.fpnet").is_file());

    let eval_dir = dir.path().join("eval");
    let o = fokker(&[
        "evaluate",
        "--config",
        cfg_s,
        "--output",
        out_s,
        "--checkpoint",
        dir.path().join("net.fpnet").to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("aggregate L2"));
    assert!(eval_dir.join("error_map.csv").is_file());

    let o = fokker(&["run", "--config", cfg_s, "--output", out_s, "--repeats", "1", "--epochs", "6"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = fokker(&["summarize", out_s]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("repeats 1"));

    let o = fokker(&["presets"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("1d-normal-grad-momentum-desk"));
    let o = fokker(&["presets", "--show", "2d-ring-anchor-ud"]);
    let c = ExperimentConfig::from_toml(&String::from_utf8_lossy(&o.stdout)).unwrap();
    assert_eq!(c.name, "2d-ring-anchor-ud");

    let o = fokker(&["run", "--preset", "no-such-thing"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown preset"));
}
