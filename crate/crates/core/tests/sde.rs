use polar_qhd::eigensolver::solve_radial;
use polar_qhd::geometry::Grid;
use polar_qhd::madelung::PhysicalParams;
use polar_qhd::sde::*;
use proptest::prelude::*;

fn osc() -> PhysicalParams {
    PhysicalParams::natural_oscillator()
}

fn eigen_sampler(grid: &Grid, alpha: f64) -> (ndarray::Array2<f64>, FieldSampler) {
    let spec = solve_radial(grid, alpha, &osc(), 0).unwrap();
    let fields = spec.stationary_fields(&osc(), grid).unwrap();
    (spec.density(grid).unwrap(), FieldSampler::new(grid, &fields).unwrap())
}

#[test]
fn same_seed_gives_bit_identical_ensembles() {
    let grid = Grid::polar_disc(200, 16, 8.0).unwrap();
    let (rho, sampler) = eigen_sampler(&grid, 1.0);
    let run = |seed| {
        let init = sample_from_density(&grid, &rho, 5000, seed).unwrap();
        let config = EnsembleConfig { particles: 5000, dt: 1e-3, steps: 50, seed, direction: Direction::Forward };
        run_ensemble(&init, &sampler, 0.5, &config, 0.0, None).unwrap().particles
    };
    let (a, b, c) = (run(9), run(9), run(10));
    assert!(a.iter().zip(&b).all(|(p, q)| p.r.to_bits() == q.r.to_bits()
        && p.theta_unwrapped.to_bits() == q.theta_unwrapped.to_bits()));
    assert_ne!(a, c);
}

#[test]
fn trajectory_paths_match_the_ensemble() {
    let grid = Grid::polar_disc(100, 16, 8.0).unwrap();
    let (rho, sampler) = eigen_sampler(&grid, 1.0);
    let init = sample_from_density(&grid, &rho, 64, 3).unwrap();
    let config = EnsembleConfig { particles: 64, dt: 1e-3, steps: 20, seed: 3, direction: Direction::Backward };
    let paths = run_trajectory(&init, &sampler, 0.5, &config, 1.0).unwrap();
    let run = run_ensemble(&init, &sampler, 0.5, &config, 1.0, None).unwrap();
    assert_eq!(paths.len(), 21);
    assert_eq!(paths[20], run.particles);
    assert!((run.time - 0.98).abs() < 1e-12);
}

#[test]
fn noise_streams_are_uncorrelated() {
    let n = 20_000;
    let xs: Vec<f64> = {
        let mut s = NoiseStream::new(1, 0);
        (0..n).map(|_| s.normal_pair()[0]).collect()
    };
    let ys: Vec<f64> = {
        let mut s = NoiseStream::new(1, 1);
        (0..n).map(|_| s.normal_pair()[0]).collect()
    };
    let corr = xs.iter().zip(&ys).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    // standard error 1/√n ≈ 0.007
    assert!(corr.abs() < 0.03, "{corr}");
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    assert!(mean.abs() < 0.03 && (var - 1.0).abs() < 0.05);
}

#[test]
fn deterministic_flow_reproduces_the_input_drift() {
    let bins = DriftBins::new(4, 4, 10.0).unwrap();
    let init: Vec<Particle> = (0..100).map(|k| Particle::new(3.0 + 0.01 * k as f64, 0.06 * k as f64)).collect();
    let u = [0.3, -0.2];
    let config = EnsembleConfig { particles: 100, dt: 1e-3, steps: 10, seed: 0, direction: Direction::Forward };
    let run = run_ensemble(&init, &ConstantDrift(u), 0.0, &config, 0.0, Some(bins)).unwrap();
    let est = run.drifts.unwrap().estimate();
    assert!((est.pooled_forward.mean[0] - u[0]).abs() < 1e-9);
    assert!((est.pooled_forward.mean[1] - u[1]).abs() < 1e-9);
    // streaming sums leave a rounding-level spread
    assert!(est.pooled_forward.se[0] < 1e-6);
}

#[test]
fn ground_state_drifts_are_minus_and_plus_r() {
    // v = 0 and ν ∂_r ln ρ = −r: u₊^r = −r, u₋^r = +r
    let grid = Grid::polar_disc(200, 16, 8.0).unwrap();
    let (rho, sampler) = eigen_sampler(&grid, 0.0);
    let init = sample_from_density(&grid, &rho, 20_000, 5).unwrap();
    let bins = DriftBins::new(8, 1, 4.0).unwrap();
    let config = EnsembleConfig { particles: 20_000, dt: 1e-3, steps: 100, seed: 5, direction: Direction::Forward };
    let run = run_ensemble(&init, &sampler, 0.5, &config, 0.0, Some(bins)).unwrap();
    let est = run.drifts.unwrap().estimate();
    for (f, b) in est.forward.iter().zip(&est.backward).skip(1).take(4) {
        let r = f.center[0];
        assert!(f.estimated && b.estimated);
        // bin averages of ∓r differ from the centre value by less than the band
        assert!((f.mean[0] + r).abs() < 4.0 * f.se[0] + 0.02, "fwd r={r}: {:?}", f.mean);
        assert!((b.mean[0] - r).abs() < 4.0 * b.se[0] + 0.02, "bwd r={r}: {:?}", b.mean);
    }
}

#[test]
fn reflections_are_rare_for_the_eigenstate() {
    let grid = Grid::polar_disc(200, 16, 8.0).unwrap();
    let (rho, sampler) = eigen_sampler(&grid, 1.0);
    let init = sample_from_density(&grid, &rho, 10_000, 8).unwrap();
    let config = EnsembleConfig { particles: 10_000, dt: 1e-3, steps: 200, seed: 8, direction: Direction::Forward };
    let run = run_ensemble(&init, &sampler, 0.5, &config, 0.0, None).unwrap();
    assert!(run.reflection_fraction() < 1e-4, "{}", run.reflection_fraction());
}

#[test]
fn sampling_reproduces_the_density() {
    let grid = Grid::polar_disc(200, 16, 8.0).unwrap();
    let (rho, _) = eigen_sampler(&grid, 1.0);
    let particles = sample_from_density(&grid, &rho, 100_000, 2).unwrap();
    let positions: Vec<[f64; 2]> = particles.iter().map(Particle::position).collect();
    let coarse = Grid::polar_disc(16, 16, 5.0).unwrap();
    let hist = estimate_density(&positions, &coarse).unwrap();
    let l1 = histogram_l1(&hist, &coarse, |r, t| grid.interpolate(&rho, [r, t]), 8);
    assert!(l1 < 0.05, "{l1}");
}

#[test]
fn invalid_runs_are_rejected() {
    let init = vec![Particle::new(1.0, 0.0)];
    let mut config = EnsembleConfig { particles: 1, dt: -1.0, steps: 1, seed: 0, direction: Direction::Forward };
    assert!(run_ensemble(&init, &ZeroDrift, 0.5, &config, 0.0, None).is_err());
    config.dt = 1e-3;
    config.particles = 2;
    assert!(run_ensemble(&init, &ZeroDrift, 0.5, &config, 0.0, None).is_err());
    config.particles = 1;
    assert!(run_ensemble(&[Particle::new(0.0, 0.0)], &ZeroDrift, 0.5, &config, 0.0, None).is_err());
    let cart = Grid::cartesian(8, 8, 1.0).unwrap();
    assert!(sample_from_density(&cart, &cart.zeros(), 1, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn steps_keep_the_radius_positive(r in 1e-6f64..5.0, theta in 0.0f64..std::f64::consts::TAU, xr in -6.0f64..6.0, xt in -6.0f64..6.0) {
        let p = Particle::new(r, theta);
        for step in [forward_step(&p, [0.0, 0.0], 0.5, 1e-2, [xr, xt]), backward_step(&p, [0.0, 0.0], 0.5, 1e-2, [xr, xt])] {
            prop_assert!(step.particle.r > 0.0 && step.particle.r.is_finite());
            let th = step.particle.theta();
            prop_assert!((0.0..std::f64::consts::TAU).contains(&th));
        }
    }

    #[test]
    fn winding_and_wrapped_angle_recompose(t in -100.0f64..100.0) {
        let p = Particle::new(1.0, t);
        let back = p.theta() + std::f64::consts::TAU * p.winding() as f64;
        prop_assert!((back - t).abs() < 1e-9);
    }
}
