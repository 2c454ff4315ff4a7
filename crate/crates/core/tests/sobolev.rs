mod common;

use std::f64::consts::PI;

use rand::Rng;

use smoothwass::sobolev::{solve_p2, GeneralPOptions};
use smoothwass::stats::normal_pdf;
use smoothwass::{
    dual_norm, dual_norm_general_p, dual_norm_p2, project_to_grid, simulate_null_limit, verify_comparison,
    Boundary, DistributionSpec, Grid, GridMeasure, GridSigned, GridSource, SeedPath, SmoothingConfig,
};

use common::{integrate, rng};

#[test]
fn smoothed_uniform_matches_gauss_legendre() {
    let sigma = 0.5;
    let grid = Grid::interval(-4.0, 5.0, 401, Boundary::ZeroFlux).unwrap();
    let rho = project_to_grid(GridSource::Spec(&DistributionSpec::uniform(0.0, 1.0)), sigma, &grid).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..grid.len() {
        let z = grid.coords(i)[0];
        let exact = integrate(|x| normal_pdf((z - x) / sigma) / sigma, 0.0, 1.0, 200);
        worst = worst.max((rho.density[i] - exact).abs());
    }
    assert!(worst <= 1e-6, "{worst}");
    let mass: f64 = rho.density.iter().sum::<f64>() * grid.cell_volume();
    assert!((mass - 1.0).abs() <= 1e-10);
}

#[test]
fn smoothed_point_mass_is_the_gaussian_density() {
    let grid = Grid::interval(-8.0, 8.0, 321, Boundary::ZeroFlux).unwrap();
    let rho = project_to_grid(GridSource::Spec(&DistributionSpec::point_mass(vec![0.0])), 1.0, &grid).unwrap();
    for i in 0..grid.len() {
        assert!((rho.density[i] - normal_pdf(grid.coords(i)[0])).abs() <= 1e-8);
    }
}

fn fourier_error(nodes: usize) -> f64 {
    let grid = Grid::periodic(0.0, 1.0, nodes).unwrap();
    let rho = GridMeasure::normalized(grid.clone(), vec![1.0; nodes]).unwrap();
    let h = GridSigned::new(grid.clone(), (0..nodes).map(|i| (2.0 * PI * grid.coords(i)[0]).cos()).collect()).unwrap();
    (dual_norm_p2(&rho, &h).unwrap() - 1.0 / (2.0 * PI * 2f64.sqrt())).abs()
}

#[test]
fn fourier_mode_converges_at_second_order() {
    let errors: Vec<f64> = [64, 128, 256, 512].iter().map(|&n| fourier_error(n)).collect();
    assert!(errors[2] <= 1e-3);
    for w in errors.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.5..=4.5).contains(&ratio), "refinement ratio {ratio}");
    }
}

fn random_line_instance<R: Rng>(r: &mut R, nodes: usize) -> (GridMeasure, GridSigned) {
    let grid = Grid::interval(-1.0, 2.0, nodes, Boundary::ZeroFlux).unwrap();
    let rho = GridMeasure::normalized(grid.clone(), (0..nodes).map(|_| r.random_range(0.2..3.0)).collect()).unwrap();
    let raw: Vec<f64> = (0..nodes).map(|_| r.random_range(-1.0..1.0)).collect();
    let m = raw.iter().sum::<f64>() / nodes as f64;
    (rho, GridSigned::new(grid, raw.iter().map(|v| v - m).collect()).unwrap())
}

/// On a zero-flux line the optimal field is pinned by the cumulative mass of
/// `h`, so the norm is a weighted `L^p` norm of that flux.
fn line_oracle(rho: &GridMeasure, h: &GridSigned, p: f64) -> f64 {
    let dx = rho.grid.spacing[0];
    let mut flux = 0.0;
    let mut total = 0.0;
    for k in 0..h.values.len() - 1 {
        flux += h.values[k] * dx;
        let (a, b) = (rho.density[k], rho.density[k + 1]);
        let rho_e = 2.0 * a * b / (a + b);
        total += flux.abs().powf(p) * rho_e.powf(1.0 - p) * dx;
    }
    total.powf(1.0 / p)
}

#[test]
fn line_norms_match_the_flux_formula() {
    let mut r = rng("sobolev-line");
    for t in 0..12 {
        let (rho, h) = random_line_instance(&mut r, 20 + 7 * t);
        for p in [1.5, 2.0, 3.0] {
            let oracle = line_oracle(&rho, &h, p);
            let got = dual_norm(&rho, &h, p).unwrap();
            assert!(((got - oracle) / oracle).abs() <= 1e-9, "p={p}: {got} vs {oracle}");
        }
    }
}

#[test]
fn p2_residual_and_quadratic_identity() {
    let mut r = rng("sobolev-residual");
    let grid = Grid::rectangle([0.0, 0.0], [1.0, 2.0], [14, 17], Boundary::ZeroFlux).unwrap();
    let n = grid.len();
    let rho = GridMeasure::normalized(grid.clone(), (0..n).map(|_| r.random_range(0.5..2.0)).collect()).unwrap();
    let raw: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let m = raw.iter().sum::<f64>() / n as f64;
    let h = GridSigned::new(grid.clone(), raw.iter().map(|v| v - m).collect()).unwrap();
    let sol = solve_p2(&rho, &h).unwrap();
    assert!(sol.residual <= 1e-8, "{}", sol.residual);
    let hu: f64 = h.values.iter().zip(&sol.potential).map(|(a, b)| a * b).sum::<f64>() * grid.cell_volume();
    assert!((sol.norm * sol.norm - hu).abs() <= 1e-8 * hu);
    let doubled = dual_norm_p2(&rho, &h.scaled(2.0)).unwrap();
    assert!((doubled - 2.0 * sol.norm).abs() <= 1e-10 * sol.norm);
}

#[test]
fn test_potentials_never_beat_the_norm() {
    let mut r = rng("sobolev-duality");
    for p in [1.5, 2.0, 3.0] {
        let q = p / (p - 1.0);
        let (rho, h) = random_line_instance(&mut r, 60);
        let norm = dual_norm_general_p(&rho, &h, p, 1e-12, 200_000).unwrap();
        let dx = rho.grid.spacing[0];
        for _ in 0..50 {
            let phi: Vec<f64> = (0..60).map(|_| r.random_range(-1.0..1.0)).collect();
            let pairing: f64 = h.values.iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>() * dx;
            let grad: f64 = (0..59)
                .map(|k| {
                    let (a, b) = (rho.density[k], rho.density[k + 1]);
                    2.0 * a * b / (a + b) * ((phi[k + 1] - phi[k]) / dx).abs().powf(q) * dx
                })
                .sum::<f64>()
                .powf(1.0 / q);
            assert!(pairing / grad <= norm + 1e-6);
        }
    }
}

#[test]
fn renormalization_is_idempotent_and_norm_invariant() {
    let mut r = rng("sobolev-renorm");
    let (rho, h) = random_line_instance(&mut r, 40);
    let again = GridMeasure::normalized(rho.grid.clone(), rho.density.clone()).unwrap();
    for (a, b) in rho.density.iter().zip(&again.density) {
        assert!((a - b).abs() <= 1e-14);
    }
    let opts = GeneralPOptions::default();
    let a = smoothwass::sobolev::solve_general_p(&rho, &h, 3.0, opts).unwrap().norm;
    let b = smoothwass::sobolev::solve_general_p(&again, &h, 3.0, opts).unwrap().norm;
    assert!((a - b).abs() <= 1e-10 * a);
}

#[test]
fn comparison_is_trivial_for_equal_measures() {
    let grid = Grid::interval(-6.0, 6.0, 160, Boundary::ZeroFlux).unwrap();
    let mu = project_to_grid(GridSource::Spec(&DistributionSpec::gaussian(vec![0.0], vec![1.0])), 0.0, &grid).unwrap();
    let rep = verify_comparison(&mu, &mu, &mu, 2.0).unwrap();
    assert!(rep.holds);
    assert!(rep.lhs.abs() <= 1e-12);
}

#[test]
fn null_limit_draws_are_reproducible() {
    let cfg = SmoothingConfig::new(2.0, 0.5, 1).unwrap();
    let grid = Grid::interval(-2.5, 3.5, 128, Boundary::ZeroFlux).unwrap();
    let spec = DistributionSpec::uniform(0.0, 1.0);
    let s = SeedPath::root(3).child("null");
    let a = simulate_null_limit(&spec, &cfg, &grid, 1000, 6, &s).unwrap();
    let b = simulate_null_limit(&spec, &cfg, &grid, 1000, 6, &s).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|v| *v >= 0.0));
}
