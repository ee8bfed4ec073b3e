use std::f64::consts::PI;

use fokker_core::reference::l2_norm;
use fokker_core::{
    crank_nicolson_solve, evaluate_network_on_grid, l2_error, BoxDomain, CnMethod, CnOptions, GridSpec,
    GriddedField, InitialDistribution, NetworkState, OutputActivation, SdeModel,
};

fn heat_kernel(t: f64, x: f64) -> f64 {
    let s = 1.0 + t;
    (-x * x / (2.0 * s)).exp() / (2.0 * PI * s).sqrt()
}

fn heat_max_error(cells: usize, slices: usize, pad: usize) -> f64 {
    let domain = BoxDomain::cube(1, -2.5, 2.5).unwrap();
    let model = SdeModel::pure_diffusion(1, 1.0, domain.clone(), 0.4).unwrap();
    let spec = GridSpec::new(&domain, &[cells], 0.4, slices).unwrap();
    let opts = CnOptions {
        pad_cells: pad,
        ..CnOptions::default()
    };
    let sol = crank_nicolson_solve(&model, &InitialDistribution::normal_1d(), &spec, &opts).unwrap();
    let exact = GriddedField::from_fn(spec, |t, y| heat_kernel(t, y[0]));
    l2_error(sol.field(), &exact, None).unwrap().max_abs
}

#[test]
fn heat_equation_matches_analytic_solution() {
    // the exact solution is ~0.036 at the domain edge, so the lattice is
    // padded out to |x| = 8 where it is negligible
    let e = heat_max_error(500, 200, 550);
    assert!(e < 1e-4, "max error {e}");
}

#[test]
fn heat_equation_converges_at_second_order() {
    let coarse = heat_max_error(100, 40, 110);
    let fine = heat_max_error(200, 80, 220);
    let ratio = coarse / fine;
    assert!((3.5..=4.5).contains(&ratio), "error ratio {ratio} ({coarse} / {fine})");
}

#[test]
fn zero_dynamics_keep_the_initial_density() {
    let domain = BoxDomain::cube(1, -2.5, 2.5).unwrap();
    let model = SdeModel::pure_diffusion(1, 0.0, domain.clone(), 0.4).unwrap();
    let spec = GridSpec::new(&domain, &[50], 0.4, 10).unwrap();
    let sol = crank_nicolson_solve(&model, &InitialDistribution::multimodal_1d(), &spec, &CnOptions::default()).unwrap();
    for n in 1..=10 {
        assert_eq!(sol.field().slice(n), sol.field().slice(0));
    }
}

#[test]
fn heat_mass_is_conserved() {
    // a domain wide enough that the Dirichlet boundary sees no mass
    let wide = BoxDomain::cube(1, -8.0, 8.0).unwrap();
    let model = SdeModel::pure_diffusion(1, 1.0, wide.clone(), 0.4).unwrap();
    let wide_spec = GridSpec::new(&wide, &[1600], 0.4, 200).unwrap();
    let sol = crank_nicolson_solve(&model, &InitialDistribution::normal_1d(), &wide_spec, &CnOptions::default()).unwrap();
    let m0: f64 = sol.field().slice(0).iter().sum::<f64>() * 0.01;
    for n in 0..=200 {
        let m: f64 = sol.field().slice(n).iter().sum::<f64>() * 0.01;
        assert!((m - m0).abs() < 1e-3, "mass drift at slice {n}: {}", m - m0);
    }
}

#[test]
fn double_well_solution_is_nearly_nonnegative() {
    let m = SdeModel::double_well();
    let spec = GridSpec::new(m.domain(), &[500], 0.4, 200).unwrap();
    let sol = crank_nicolson_solve(&m, &InitialDistribution::multimodal_1d(), &spec, &CnOptions::default()).unwrap();
    let min = sol.field().values().iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(min > -1e-3, "min {min}");
}

#[test]
fn refined_solve_agrees_with_plain_solve() {
    let m = SdeModel::double_well();
    let spec = GridSpec::new(m.domain(), &[100], 0.4, 40).unwrap();
    let dist = InitialDistribution::normal_1d();
    let plain = crank_nicolson_solve(&m, &dist, &spec, &CnOptions::default()).unwrap();
    let fine = crank_nicolson_solve(
        &m,
        &dist,
        &spec,
        &CnOptions {
            refine: 4,
            ..CnOptions::default()
        },
    )
    .unwrap();
    let e = l2_error(plain.field(), fine.field(), None).unwrap();
    let norm = l2_norm(fine.field());
    assert!(e.aggregate < 0.01 * norm, "{} vs norm {norm}", e.aggregate);
}

#[test]
fn ring_adi_agrees_with_direct_solve() {
    let m = SdeModel::ring();
    let spec = GridSpec::new(m.domain(), &[60, 60], 0.2, 40).unwrap();
    let dist = InitialDistribution::gaussian_2d();
    let run = |method| {
        crank_nicolson_solve(
            &m,
            &dist,
            &spec,
            &CnOptions {
                method,
                ..CnOptions::default()
            },
        )
        .unwrap()
    };
    let direct = run(CnMethod::Direct);
    let adi = run(CnMethod::Adi);
    let e = l2_error(direct.field(), adi.field(), None).unwrap();
    let norm = l2_norm(direct.field());
    assert!(e.aggregate < 0.01 * norm, "ADI differs by {} (norm {norm})", e.aggregate);
    // N(0, I) starts with about 0.91 of its mass inside the box; the drift
    // points inward near the boundary, so little of it leaks out
    let mass = |n: usize| direct.field().slice(n).iter().sum::<f64>() * spec.cell_volume();
    assert!((mass(0) - 0.911).abs() < 0.01, "initial mass {}", mass(0));
    assert!((mass(40) - mass(0)).abs() < 0.02, "mass {} -> {}", mass(0), mass(40));
}

#[test]
fn l2_error_is_symmetric() {
    let domain = BoxDomain::cube(2, -1.0, 1.0).unwrap();
    let spec = GridSpec::new(&domain, &[7, 5], 0.1, 3).unwrap();
    let a = GriddedField::from_fn(spec.clone(), |t, y| (t + y[0]).sin() * y[1]);
    let b = GriddedField::from_fn(spec, |t, y| (t * y[1]).cos());
    let ab = l2_error(&a, &b, None).unwrap();
    let ba = l2_error(&b, &a, None).unwrap();
    assert_eq!(ab.per_slice, ba.per_slice);
    assert_eq!(ab.aggregate, ba.aggregate);
    let zero = l2_error(&a, &a, None).unwrap();
    assert_eq!(zero.aggregate, 0.0);
}

#[test]
fn network_grid_evaluation() {
    let zero = NetworkState::zeros(&[2, 16, 256, 256, 256, 16, 4, 1], OutputActivation::Sigmoid).unwrap();
    let m = SdeModel::double_well();
    let spec = GridSpec::new(m.domain(), &[50], 0.4, 10).unwrap();
    let f = evaluate_network_on_grid(&zero, &spec).unwrap();
    assert!(f.values().iter().all(|&v| v == 0.5));

    let net = NetworkState::new(1, 3);
    let f = evaluate_network_on_grid(&net, &spec).unwrap();
    let mut c = [0.0];
    for (n, b) in [(0usize, 0usize), (4, 17), (10, 49)] {
        spec.box_center(b, &mut c);
        assert!((f.get(n, b) - net.forward(spec.slice_time(n), &c)).abs() < 1e-12);
    }

    let one = GridSpec::from_parts(vec![0.0], vec![1], vec![1.0], 1.0, 1).unwrap();
    let f = evaluate_network_on_grid(&net, &one).unwrap();
    assert_eq!(f.values().len(), 2);
    assert!((f.get(0, 0) - net.forward(0.0, &[0.5])).abs() < 1e-12);
    assert!((f.get(1, 0) - net.forward(1.0, &[0.5])).abs() < 1e-12);
}
