use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use polar_qhd::eigensolver::{solve_radial, stationary_residual};
use polar_qhd::evolution::*;
use polar_qhd::geometry::Grid;
use polar_qhd::madelung::{normalize, PhysicalParams, Potential};
use polar_qhd::states::{gaussian, StateSpec};
use polar_qhd::Error;

fn beat(grid: &Grid, params: &PhysicalParams) -> Array2<Complex64> {
    StateSpec::Superposition { alpha: 0.0, n_a: 0, n_b: 1, a: 0.99, b: 0.14 }.prepare(params, grid).unwrap()
}

fn coherent(grid: &Grid) -> Array2<Complex64> {
    // ground-state width, displaced by 1.5 and boosted so it circles the origin
    normalize(&gaussian(grid, [1.5, 0.0], 0.5f64.sqrt(), [0.0, 1.5]), grid).unwrap()
}

fn mean_r2(psi: &Array2<Complex64>, grid: &Grid) -> f64 {
    let r = grid.coordinate(0);
    grid.integrate(&(psi.mapv(|z| z.norm_sqr()) * &r * &r)).unwrap()
}

fn three_snapshots(prop: &Propagator, psi: &Array2<Complex64>) -> [Array2<Complex64>; 3] {
    let a = psi.clone();
    let mut b = a.clone();
    prop.step(&mut b).unwrap();
    let mut c = b.clone();
    prop.step(&mut c).unwrap();
    [a, b, c]
}

#[test]
fn eigenstate_modulus_is_constant_and_phase_advances() {
    let params = PhysicalParams::natural_oscillator();
    let grid = Grid::polar_disc(300, 8, 8.0).unwrap();
    let spec = solve_radial(&grid, 1.0, &params, 1).unwrap();
    let psi0 = spec.wave_function(&grid).unwrap();
    let dt = 1e-3;
    let prop = Propagator::new(&grid, &params, dt).unwrap();
    let mut psi = psi0.clone();
    let steps = 500;
    for _ in 0..steps {
        prop.step(&mut psi).unwrap();
    }
    // Crank–Nicolson advances an eigenphase by 2 atan(ε dt / 2ħ) per step
    let per_step = 2.0 * (0.5 * spec.epsilon * dt / params.hbar()).atan();
    let expected = -per_step * steps as f64;
    assert!((expected + spec.epsilon * dt * steps as f64).abs() < 1e-5);
    let peak = psi0.iter().map(|z| z.norm()).fold(0.0, f64::max);
    for (a, b) in psi0.iter().zip(psi.iter()) {
        assert!((a.norm() - b.norm()).abs() < 1e-12 * peak);
        if a.norm() > 1e-6 * peak {
            let dphi = (b / a).arg();
            assert!((dphi - expected).abs() < 1e-9, "{dphi} vs {expected}");
        }
    }
}

#[test]
fn beat_period_matches_level_spacing() {
    let params = PhysicalParams::natural_oscillator();
    let grid = Grid::polar_disc(200, 8, 8.0).unwrap();
    let (e1, e2) = (
        solve_radial(&grid, 0.0, &params, 0).unwrap().epsilon,
        solve_radial(&grid, 0.0, &params, 1).unwrap().epsilon,
    );
    let expected = 2.0 * PI * params.hbar() / (e2 - e1);
    let dt = 2e-3;
    let prop = Propagator::new(&grid, &params, dt).unwrap();
    let mut psi = beat(&grid, &params);
    let mut series = vec![mean_r2(&psi, &grid)];
    for _ in 0..(3.2 * expected / dt) as usize {
        prop.step(&mut psi).unwrap();
        series.push(mean_r2(&psi, &grid));
    }
    // local maxima refined by a parabola through three samples
    let peaks: Vec<f64> = (1..series.len() - 1)
        .filter(|&k| series[k] > series[k - 1] && series[k] >= series[k + 1])
        .map(|k| {
            let (a, b, c) = (series[k - 1], series[k], series[k + 1]);
            (k as f64 + 0.5 * (a - c) / (a - 2.0 * b + c)) * dt
        })
        .collect();
    assert!(peaks.len() >= 3, "{peaks:?}");
    let period = (peaks[peaks.len() - 1] - peaks[0]) / (peaks.len() - 1) as f64;
    assert!((period - expected).abs() < 0.01 * expected, "{period} vs {expected}");
    assert!((expected - PI).abs() < 1e-2 * PI);
}

#[test]
fn free_gaussian_spreads_analytically() {
    let params = PhysicalParams::natural_oscillator().with_potential(Potential::Free);
    let grid = Grid::polar_disc(1500, 8, 30.0).unwrap();
    let sigma: f64 = 1.0;
    let mut psi = normalize(&gaussian(&grid, [0.0, 0.0], sigma, [0.0, 0.0]), &grid).unwrap();
    let dt = 0.01;
    let prop = Propagator::new(&grid, &params, dt).unwrap();
    for k in 1..=300 {
        prop.step(&mut psi).unwrap();
        if k % 100 == 0 {
            let t = k as f64 * dt;
            let width2 = mean_r2(&psi, &grid) / 2.0;
            let s = params.hbar() * t / (2.0 * params.m() * sigma * sigma);
            let expected = sigma * sigma * (1.0 + s * s);
            assert!((width2 - expected).abs() < 0.01 * expected, "t={t}: {width2} vs {expected}");
        }
    }
}

#[test]
fn norm_and_energy_are_conserved() {
    let params = PhysicalParams::natural_oscillator();
    let grid = Grid::polar_disc(200, 32, 8.0).unwrap();
    let psi0 = coherent(&grid);
    let prop = Propagator::new(&grid, &params, 5e-3).unwrap();
    let e0 = prop.energy(&psi0);
    // coherent state energy ħω(1 + (x0² + p0²)/2)
    assert!((e0 - 3.25).abs() < 1e-3, "{e0}");
    let mut psi = psi0;
    for _ in 0..1000 {
        prop.step(&mut psi).unwrap();
    }
    let norm = grid.integrate(&psi.mapv(|z| z.norm_sqr())).unwrap();
    assert!((1.0 - norm).abs() < 1e-8);
    assert!(((prop.energy(&psi) - e0) / e0).abs() < 1e-6);
}

#[test]
fn non_finite_state_is_rejected() {
    let params = PhysicalParams::natural_oscillator();
    let grid = Grid::polar_disc(50, 8, 8.0).unwrap();
    let mut psi = coherent(&grid);
    psi[[3, 3]] = Complex64::new(f64::NAN, 0.0);
    let prop = Propagator::new(&grid, &params, 1e-2).unwrap();
    assert!(matches!(prop.step(&mut psi), Err(Error::NormDrift { .. })));
}

#[test]
fn cartesian_grid_is_rejected() {
    let grid = Grid::cartesian(16, 16, 4.0).unwrap();
    assert!(Propagator::new(&grid, &PhysicalParams::natural_oscillator(), 1e-2).is_err());
}

#[test]
fn stationary_continuity_residual_vanishes() {
    let params = PhysicalParams::natural_oscillator();
    let grid = Grid::polar_disc(400, 16, 8.0).unwrap();
    for (alpha, n_r) in [(0.0, 0), (1.0, 0), (-2.0, 1)] {
        let psi = StateSpec::Eigenstate { alpha, n_r }.prepare(&params, &grid).unwrap();
        let dt = 1e-3;
        let next = schrodinger_step(&psi, &params, &grid, dt).unwrap();
        let res = continuity_residual(&psi, &next, &params, &grid, dt);
        assert!(res < 1e-8, "alpha={alpha}: {res:e}");
    }
}

#[test]
fn beat_continuity_residual_converges_at_second_order() {
    let params = PhysicalParams::natural_oscillator();
    let dt = 1e-3;
    let res: Vec<f64> = [200usize, 400]
        .iter()
        .map(|&n| {
            let grid = Grid::polar_disc(n, 8, 8.0).unwrap();
            let prop = Propagator::new(&grid, &params, dt).unwrap();
            let mut psi = beat(&grid, &params);
            for _ in 0..300 {
                prop.step(&mut psi).unwrap();
            }
            let [a, b, _] = three_snapshots(&prop, &psi);
            let r = continuity_residual(&a, &b, &params, &grid, dt);
            let corrupted = continuity_field(&a, &b, &params, &grid, dt, 2.0);
            let c = grid.integrate(&corrupted.mapv(|x| x * x)).unwrap().sqrt();
            assert!(c > 10.0 * r, "corrupted {c:e} vs {r:e}");
            r
        })
        .collect();
    assert!(res[1] < 1e-3);
    let order = (res[0] / res[1]).log2();
    assert!(order > 1.8, "observed order {order}");
}

#[test]
fn eigenstate_hydro_residual_matches_stationary_residual() {
    let params = PhysicalParams::natural_oscillator();
    let grid = Grid::polar_disc(800, 16, 8.0).unwrap();
    let spec = solve_radial(&grid, 1.0, &params, 0).unwrap();
    let psi = spec.wave_function(&grid).unwrap();
    let prop = Propagator::new(&grid, &params, 1e-3).unwrap();
    let [a, b, c] = three_snapshots(&prop, &psi);
    let status = hydro_residual_at(&a, &b, &c, &params, &grid, 1e-3, &HydroOptions::for_grid(&grid));
    let (radial, angular) = status.norms().unwrap();
    assert!(radial < 1e-3 && angular < 1e-3, "{status:?}");
    let stat = stationary_residual(&spec, &params, &grid).unwrap();
    assert!(stat.radial < 1e-3);
    assert!((radial - stat.radial).abs() < 1e-4, "{radial:e} vs {:e}", stat.radial);
}

#[test]
fn coherent_packet_hydro_residual_over_one_period() {
    let params = PhysicalParams::natural_oscillator();
    let grid = Grid::polar_disc(400, 64, 8.0).unwrap();
    let dt = 2e-3;
    let config = EvolutionConfig { dt, horizon: 2.0 * PI, audit_every: 628 };
    let (_, records) = evolve_with_audits(&coherent(&grid), &params, &grid, &config).unwrap();
    assert_eq!(records.len(), 5);
    for r in &records {
        let (radial, angular) = r.hydro.norms().unwrap_or_else(|| panic!("{r:?}"));
        assert!(radial < 1e-3 && angular < 1e-3, "{r:?}");
        assert!((r.norm - 1.0).abs() < 1e-8);
        assert!(r.min_margin.unwrap() >= -1e-6, "{r:?}");
        assert_eq!(r.winding, Some(0));
    }
}

#[test]
fn hydro_residual_refines_at_second_order() {
    let params = PhysicalParams::natural_oscillator();
    let res: Vec<(f64, f64)> = [400usize, 800]
        .iter()
        .map(|&n| {
            let grid = Grid::polar_disc(n, 64, 8.0).unwrap();
            let prop = Propagator::new(&grid, &params, 1e-3).unwrap();
            let [a, b, c] = three_snapshots(&prop, &coherent(&grid));
            hydro_residual_at(&a, &b, &c, &params, &grid, 1e-3, &HydroOptions::for_grid(&grid)).norms().unwrap()
        })
        .collect();
    assert!((res[0].0 / res[1].0).log2() > 1.8, "{res:?}");
    assert!((res[0].1 / res[1].1).log2() > 1.8, "{res:?}");
}

#[test]
fn hydro_residual_scales_with_diffusivity_mismatch() {
    let params = PhysicalParams::natural_oscillator();
    let grid = Grid::polar_disc(400, 64, 8.0).unwrap();
    let prop = Propagator::new(&grid, &params, 1e-3).unwrap();
    let [a, b, c] = three_snapshots(&prop, &coherent(&grid));
    let nu0 = params.nu();
    let slopes: Vec<f64> = [0.6, 0.7, 0.9]
        .iter()
        .map(|&nu| {
            let opts = HydroOptions { nu_override: Some(nu), ..HydroOptions::for_grid(&grid) };
            let (radial, _) = hydro_residual_at(&a, &b, &c, &params, &grid, 1e-3, &opts).norms().unwrap();
            radial / (nu * nu - nu0 * nu0).abs()
        })
        .collect();
    for s in &slopes {
        assert!((s / slopes[0] - 1.0).abs() < 0.05, "{slopes:?}");
    }
}

#[test]
fn audit_is_skipped_when_interior_nodes_vanish() {
    let params = PhysicalParams::natural_oscillator();
    let grid = Grid::polar_disc(100, 16, 8.0).unwrap();
    let mut psi = coherent(&grid);
    // carve an annulus out of the support
    for i in 10..20 {
        for j in 0..16 {
            psi[[i, j]] = Complex64::new(0.0, 0.0);
        }
    }
    let rho = psi.mapv(|z| z.norm_sqr());
    assert!((interior_flagged_fraction(&rho) - 0.1).abs() < 1e-12);
    let status = hydro_residual_at(&psi, &psi, &psi, &params, &grid, 1e-3, &HydroOptions::for_grid(&grid));
    assert!(matches!(status, HydroStatus::Skipped { .. }));
    // tail nodes beyond the support do not count
    assert_eq!(interior_flagged_fraction(&coherent(&grid).mapv(|z| z.norm_sqr())), 0.0);
}

#[test]
fn audit_csv_has_one_row_per_audit() {
    let params = PhysicalParams::natural_oscillator();
    let grid = Grid::polar_disc(100, 16, 8.0).unwrap();
    let config = EvolutionConfig { dt: 1e-2, horizon: 0.5, audit_every: 10 };
    let (_, records) = evolve_with_audits(&coherent(&grid), &params, &grid, &config).unwrap();
    let mut buf = Vec::new();
    write_audit_csv(&mut buf, &records).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), records.len() + 1);
    assert!(text.starts_with("t,norm,energy,continuity_residual"));
}
