use std::f64::consts::PI;

use fokker_core::density::multimodal_normalizer;
use fokker_core::rng::stream_rng;
use fokker_core::{
    estimate_density_grid, rejection_sample_initial, BoxDomain, GridSpec, InitialDistribution, SdeModel,
};

fn gaussian(x: f64, var: f64) -> f64 {
    (-x * x / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

/// Simpson integral of `f` over `[a, b]`.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn histogram_mass_never_exceeds_one() {
    let m = SdeModel::double_well();
    let spec = GridSpec::new(m.domain(), &[100], 0.4, 40).unwrap();
    let g = estimate_density_grid(&m, &InitialDistribution::multimodal_1d(), &spec, 20_000, 3).unwrap();
    assert!(g.field().slice(0).iter().all(|&v| v == 0.0));
    for n in 1..=40 {
        let mass: f64 = g.field().slice(n).iter().sum::<f64>() * spec.cell_volume();
        assert!(mass <= 1.0 + 1e-12 && mass > 0.95, "slice {n}: mass {mass}");
    }
}

#[test]
fn estimate_is_deterministic_and_seed_sensitive() {
    let m = SdeModel::ring();
    let spec = GridSpec::new(m.domain(), &[20, 20], 0.2, 10).unwrap();
    let d = InitialDistribution::gaussian_2d();
    let a = estimate_density_grid(&m, &d, &spec, 5000, 1).unwrap();
    let b = estimate_density_grid(&m, &d, &spec, 5000, 1).unwrap();
    let c = estimate_density_grid(&m, &d, &spec, 5000, 2).unwrap();
    assert_eq!(a.values(), b.values());
    assert_ne!(a.values(), c.values());
}

fn heat_rms_error(samples: u64, seed: u64) -> f64 {
    let domain = BoxDomain::cube(1, -5.0, 5.0).unwrap();
    let m = SdeModel::pure_diffusion(1, 1.0, domain.clone(), 0.4).unwrap();
    let spec = GridSpec::new(&domain, &[50], 0.4, 20).unwrap();
    let g = estimate_density_grid(&m, &InitialDistribution::normal_1d(), &spec, samples, seed).unwrap();
    let h = spec.h()[0];
    let mut sum = 0.0;
    for (b, v) in g.field().slice(20).iter().enumerate() {
        let a = spec.lower()[0] + b as f64 * h;
        let exact = simpson(|x| gaussian(x, 1.4), a, a + h, 16) / h;
        sum += (v - exact).powi(2);
    }
    (sum / 50.0).sqrt()
}

#[test]
fn quadrupling_samples_halves_the_error() {
    // averaged over a few seeds so the ratio is not one noisy draw
    let avg = |m: u64| (0..4).map(|s| heat_rms_error(m, 100 + s)).sum::<f64>() / 4.0;
    let coarse = avg(20_000);
    let fine = avg(80_000);
    let ratio = coarse / fine;
    assert!((2.0 / 1.5..=2.0 * 1.5).contains(&ratio), "ratio {ratio}");
}

/// Kolmogorov-Smirnov statistic of `xs` against the CDF `cdf`.
fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn rejection_sampler_reproduces_the_truncated_normal() {
    let domain = BoxDomain::cube(1, -2.5, 2.5).unwrap();
    let dist = InitialDistribution::normal_1d();
    let mut rng = stream_rng(5, 0);
    let xs: Vec<f64> = (0..4000)
        .map(|_| rejection_sample_initial(&dist, &domain, &mut rng).unwrap()[0])
        .collect();
    let mass = simpson(|x| gaussian(x, 1.0), -2.5, 2.5, 2000);
    let d = ks_statistic(xs, |x| simpson(|s| gaussian(s, 1.0), -2.5, x, 200) / mass);
    // critical value at p = 0.001
    assert!(d < 1.95 / 4000f64.sqrt(), "KS statistic {d}");
}

#[test]
fn rejection_sampler_matches_multimodal_bins() {
    let domain = BoxDomain::cube(1, -2.5, 2.5).unwrap();
    let dist = InitialDistribution::multimodal_1d();
    let mut rng = stream_rng(6, 0);
    let n = 50_000;
    let bins = 25;
    let mut counts = vec![0usize; bins];
    for _ in 0..n {
        let x = rejection_sample_initial(&dist, &domain, &mut rng).unwrap()[0];
        counts[(((x + 2.5) / 0.2) as usize).min(bins - 1)] += 1;
    }
    let z = multimodal_normalizer();
    let density = |x: f64| (1.0 + (5.0 * x).cos()) * (-0.5 * x * x).exp() / z;
    let mass = simpson(density, -2.5, 2.5, 4000);
    let mut chi2 = 0.0;
    let mut dof = 0;
    for (i, &c) in counts.iter().enumerate() {
        let a = -2.5 + 0.2 * i as f64;
        let e = n as f64 * simpson(density, a, a + 0.2, 64) / mass;
        if e >= 5.0 {
            chi2 += (c as f64 - e).powi(2) / e;
            dof += 1;
        }
    }
    // chi-square 0.999 quantile for ~24 degrees of freedom is about 51
    assert!(dof >= 20);
    assert!(chi2 < 51.2, "chi2 {chi2} over {dof} bins");
}

#[test]
fn multimodal_peak_value() {
    // peak of u₀ near x = ±2.34, and of the law truncated to the domain
    let dist = InitialDistribution::multimodal_1d();
    let (mut best, mut at) = (0.0, 0.0);
    for i in 0..=10_000 {
        let x = 2.0 + 0.5 * i as f64 / 10_000.0;
        let v = dist.density(&[x]);
        if v > best {
            best = v;
            at = x;
        }
    }
    assert!((at - 2.338).abs() < 2e-3);
    assert!((best - 0.04254).abs() < 1e-4, "peak {best}");
    let mass = simpson(|x| dist.density(&[x]), -2.5, 2.5, 4000);
    assert!((best / mass - 0.0432).abs() < 1e-4, "truncated peak {}", best / mass);
}
