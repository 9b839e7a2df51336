use polar_qhd::eigensolver::*;
use polar_qhd::geometry::{Axis, Grid};
use polar_qhd::madelung::{PhysicalParams, Potential};
use polar_qhd::Error;
use proptest::prelude::*;

fn osc() -> PhysicalParams {
    PhysicalParams::natural_oscillator()
}

#[test]
fn profiles_at_one_alpha_are_orthogonal() {
    let grid = Grid::polar_disc(1000, 8, 8.0).unwrap();
    for alpha in [0.0, 1.0, 2.5] {
        let states: Vec<EigenstateSpec> = (0..3).map(|n| solve_radial(&grid, alpha, &osc(), n).unwrap()).collect();
        for a in 0..3 {
            assert_eq!(states[a].sign_changes(), a);
            for b in a + 1..3 {
                let o = states[a].overlap(&states[b]);
                assert!(o.abs() < 1e-8, "alpha={alpha} {a},{b}: {o:e}");
            }
        }
    }
}

#[test]
fn eigenvalue_error_quarters_under_refinement() {
    let exact = 4.0; // n_r = 1, |α| = 1
    let err = |n| (solve_on_axis(&Axis::bounded(0.0, 8.0, n).unwrap(), 1.0, &osc(), 1).unwrap().epsilon - exact).abs();
    let ratio = err(500) / err(1000);
    assert!((ratio - 4.0).abs() < 0.2, "{ratio}");
}

#[test]
fn non_integer_alpha_is_solved_but_not_quantized() {
    // f ~ r^{1/2} at the origin: first-order convergence only
    let err = |n| {
        let grid = Grid::polar_disc(n, 16, 8.0).unwrap();
        (solve_radial(&grid, 0.5, &osc(), 0).unwrap().epsilon - 1.5).abs()
    };
    let (a, b) = (err(1000), err(2000));
    assert!(b < 1e-3 && a / b > 1.9, "{a:e} {b:e}");
    let grid = Grid::polar_disc(100, 16, 8.0).unwrap();
    let s = solve_radial(&grid, 0.5, &osc(), 0).unwrap();
    assert!(s.wave_function(&grid).is_err());
}

#[test]
fn wrong_energy_shows_in_the_schrodinger_residual() {
    let grid = Grid::polar_disc(800, 8, 8.0).unwrap();
    let mut s = solve_radial(&grid, 1.0, &osc(), 0).unwrap();
    let good = stationary_residual(&s, &osc(), &grid).unwrap();
    s.epsilon += 0.5;
    let bad = stationary_residual(&s, &osc(), &grid).unwrap();
    assert!(good.schrodinger < 1e-9);
    assert!(bad.schrodinger > 0.1, "{bad:?}");
}

#[test]
fn radial_line_converges_to_the_bernoulli_gradient() {
    // the radial hydrodynamic line is ∂_r of the Bernoulli function over m; the
    // discrete Bernoulli function is constant to rounding, so the gap between
    // the two is the truncation error of the radial line
    for (alpha, n_r) in [(1.0, 0), (2.0, 1)] {
        let gap = |n| {
            let grid = Grid::polar_disc(n, 8, 8.0).unwrap();
            let s = solve_radial(&grid, alpha, &osc(), n_r).unwrap();
            let f = stationary_fields(&s, &osc(), &grid).unwrap();
            let g = bernoulli_gradient(&f, &osc(), &grid);
            let rho = s.density(&grid).unwrap();
            let w = grid.cell_volume();
            let mut acc = 0.0;
            for ((ix, &keep), &x) in f.mask.indexed_iter().zip(f.radial.iter()) {
                if keep && ix.0 > 0 {
                    acc += w[ix] * rho[ix] * (x - g[ix]).powi(2);
                }
            }
            acc.sqrt()
        };
        let (a, b) = (gap(800), gap(1600));
        assert!(b < 1e-3 && (a / b).log2() > 1.8, "alpha={alpha}: {a:e} {b:e}");
    }
}

#[test]
fn angular_residual_vanishes_for_radial_densities() {
    let grid = Grid::polar_disc(400, 16, 8.0).unwrap();
    for alpha in [-2.0, 0.0, 1.0, 0.5] {
        let s = solve_radial(&grid, alpha, &osc(), 0).unwrap();
        assert_eq!(stationary_residual(&s, &osc(), &grid).unwrap().angular, 0.0);
    }
}

#[test]
fn scaled_units_follow_the_oracle() {
    let params = PhysicalParams::new(2.0, 0.7, Potential::Harmonic { omega: 1.3 }).unwrap();
    let r_max = suggested_r_max(&params, 1.0, 1);
    let grid = Grid::polar_disc(2000, 8, r_max).unwrap();
    let s = solve_radial(&grid, 1.0, &params, 1).unwrap();
    let exact = oscillator_energy(&params, 1.0, 1).unwrap();
    assert!((s.epsilon - exact).abs() < 1e-4 * exact, "{} vs {exact}", s.epsilon);
}

#[test]
fn errors_are_specific() {
    let small = Grid::polar_disc(200, 8, 1.5).unwrap();
    assert!(matches!(solve_radial(&small, 0.0, &osc(), 0), Err(Error::DomainTooSmall { .. })));
    let cart = Grid::cartesian(16, 16, 4.0).unwrap();
    assert!(solve_radial(&cart, 0.0, &osc(), 0).is_err());
    let grid = Grid::polar_disc(20, 8, 8.0).unwrap();
    assert!(solve_radial(&grid, 0.0, &osc(), 25).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn spectrum_matches_the_oracle(alpha in -3i32..=3, n_r in 0usize..3) {
        let grid = Grid::polar_disc(1500, 8, 9.0).unwrap();
        let s = solve_radial(&grid, alpha as f64, &osc(), n_r).unwrap();
        let exact = oscillator_energy(&osc(), alpha as f64, n_r).unwrap();
        prop_assert!((s.epsilon - exact).abs() < 1e-4 * exact);
        prop_assert!((s.norm() - 1.0).abs() < 1e-10);
        prop_assert_eq!(s.sign_changes(), n_r);
    }
}
