use fokker_core::sampler::anchor_lattice;
use fokker_core::{
    estimate_density_grid, sample_anchor, sample_standard, AnchorSelection, DataKind, DensityGrid, GridSpec,
    InitialDistribution, SamplePlan, SamplingMode, SdeModel,
};
use proptest::prelude::*;

fn ks_uniform(mut xs: Vec<f64>, a: f64, b: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = (x - a) / (b - a);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

fn double_well_grid(samples: u64) -> (SdeModel, InitialDistribution, DensityGrid) {
    let m = SdeModel::double_well();
    let dist = InitialDistribution::normal_1d();
    let spec = GridSpec::new(m.domain(), &[500], 0.4, 200).unwrap();
    let g = estimate_density_grid(&m, &dist, &spec, samples, 17).unwrap();
    (m, dist, g)
}

#[test]
fn uniform_residual_points_pass_ks() {
    let (m, dist, g) = double_well_grid(2000);
    let plan = SamplePlan::standard(1000, 10, 5, 99);
    let ps = sample_standard(&m, &dist, &g, &plan).unwrap();
    let crit = 1.95 / 1000f64.sqrt();
    let dt = ks_uniform(ps.residual.iter().map(|p| p.t).collect(), 0.0, 0.4);
    let dx = ks_uniform(ps.residual.iter().map(|p| p.x[0]).collect(), -2.5, 2.5);
    assert!(dt < crit && dx < crit, "KS t {dt}, x {dx}");
}

#[test]
fn density_branch_follows_the_monte_carlo_law() {
    let (m, dist, g) = double_well_grid(200_000);
    let plan = SamplePlan {
        uniform_fraction: 0.0,
        ..SamplePlan::standard(10, 10_500, 500, 5)
    };
    let ps = sample_standard(&m, &dist, &g, &plan).unwrap();
    // points from the last tenth of the horizon, 25 coarse bins
    let spec = g.spec();
    let bins = 25;
    let mut hist = vec![0.0; bins];
    let mut reference = vec![0.0; bins];
    for p in ps.data.iter().filter(|p| p.kind == DataKind::MonteCarlo && p.t >= 0.36) {
        hist[((p.y[0] + 2.5) / 0.2) as usize] += 1.0;
    }
    for n in spec.slice_of(0.36).unwrap()..=200 {
        for (b, v) in g.field().slice(n).iter().enumerate() {
            reference[b / 20] += v;
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mh, mr) = (mean(&hist), mean(&reference));
    let cov: f64 = hist.iter().zip(&reference).map(|(a, b)| (a - mh) * (b - mr)).sum();
    let sh: f64 = hist.iter().map(|a| (a - mh).powi(2)).sum::<f64>().sqrt();
    let sr: f64 = reference.iter().map(|b| (b - mr).powi(2)).sum::<f64>().sqrt();
    let r = cov / (sh * sr);
    assert!(r > 0.9, "Pearson r = {r}");
}

#[test]
fn ring_anchor_grid_has_34_by_34_points() {
    let m = SdeModel::ring();
    let dist = InitialDistribution::gaussian_2d();
    let spec = GridSpec::new(m.domain(), &[200, 200], 0.2, 100).unwrap();
    let g = estimate_density_grid(&m, &dist, &spec, 2000, 1).unwrap();
    let plan = SamplePlan {
        mode: SamplingMode::Anchor {
            times: vec![0.2],
            selection: AnchorSelection::Grid { stride: 200 / 33 },
        },
        ..SamplePlan::standard(100, 40_000, 40_000, 3)
    };
    let ps = sample_anchor(&m, &dist, &g, &plan).unwrap();
    let anchors: Vec<_> = ps.data.iter().filter(|p| p.kind == DataKind::MonteCarlo).collect();
    assert!((1089..=1156).contains(&anchors.len()));
    assert_eq!(anchors.len(), 1156);
    assert!(anchors.iter().all(|p| (p.t - 0.2).abs() < 1e-12));
    assert_eq!(ps.initial_count(), 40_000);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn point_sets_respect_counts_and_lattice(seed in any::<u64>(), alpha in 0.0f64..=1.0, nx in 1usize..60, ny in 1usize..60) {
        let (m, dist, g) = double_well_grid(500);
        let iy = ny / 2;
        let plan = SamplePlan { uniform_fraction: alpha, residual_uniform_fraction: alpha, ..SamplePlan::standard(nx, ny, iy, seed) };
        let ps = sample_standard(&m, &dist, &g, &plan).unwrap();
        prop_assert_eq!(ps.residual.len(), nx);
        prop_assert_eq!(ps.data.len(), ny);
        prop_assert_eq!(ps.data.iter().filter(|p| p.t == 0.0).count(), iy);
        let spec = g.spec();
        for p in &ps.data {
            prop_assert!(p.target >= 0.0);
            if p.t > 0.0 {
                let k = p.t / spec.dt();
                prop_assert!((k - k.round()).abs() < 1e-9);
                let j = (p.y[0] - spec.lower()[0] - spec.h()[0] / 2.0) / spec.h()[0];
                prop_assert!((j - j.round()).abs() < 1e-9);
            }
        }
        let again = sample_standard(&m, &dist, &g, &plan).unwrap();
        prop_assert_eq!(ps, again);
    }

    #[test]
    fn anchor_lattice_is_centered(cells in 1usize..400, stride in 1usize..50) {
        let l = anchor_lattice(cells, stride);
        prop_assert_eq!(l.len(), (cells - 1) / stride + 1);
        let left = l[0];
        let right = cells - 1 - l[l.len() - 1];
        prop_assert!(left == right || left + 1 == right);
    }
}
