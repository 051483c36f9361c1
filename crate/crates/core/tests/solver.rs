use roughpam::heat_solver::*;
use roughpam::spectral_noise::{default_catalog, ito_integral_variance_check};
use roughpam::{HurstParam, SpectralGrid};

fn h(v: f64) -> HurstParam {
    HurstParam::new(v).unwrap()
}

fn small() -> (ModelParams, SpectralGrid) {
    let p = ModelParams::new(h(0.35), 1.0, 0.05, InitialCondition::bump(1.0, 0.5, 0.6)).unwrap();
    (p, SpectralGrid::new(8.0, 32, 1e-3).unwrap())
}

#[test]
fn ensemble_mean_follows_heat_flow() {
    let (p, g) = small();
    let s = SpectralSolver::new(&p, &g, TimeScheme::ExactVariance);
    let sum = s.run_ensemble(2_000, 4, 50, 25, 4).unwrap();
    let heat = s.heat_flow_field(0.05).unwrap();
    let last = sum.times.len() - 1;
    for k in 0..=4usize {
        let c = heat.coeff(k as i64);
        let re = &sum.mode_re[last][k];
        assert!((re.mean() - c.re).abs() < 4.0 * re.stderr(), "k={k}");
        let im = &sum.mode_im[last][k];
        assert!((im.mean() - c.im).abs() < 4.0 * im.stderr() + 1e-14, "k={k}");
    }
}

#[test]
fn ensemble_is_thread_count_independent() {
    let (p, g) = small();
    let s = SpectralSolver::new(&p, &g, TimeScheme::ExponentialEuler);
    let a = s.run_ensemble(40, 9, 50, 10, 2).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(|| s.run_ensemble(40, 9, 50, 10, 2)).unwrap();
    assert_eq!(a, b);
    assert_eq!(s.solve(9, 3, 50, 5).unwrap(), s.solve(9, 3, 50, 5).unwrap());
}

#[test]
fn picard_iterates_contract() {
    let (p, g) = small();
    let s = SpectralSolver::new(&p, &g, TimeScheme::ExponentialEuler);
    let r = picard_contraction_probe(&s, 5, 40, 2).unwrap();
    assert!(r.differences.windows(2).all(|w| w[1] < w[0]), "{:?}", r.differences);
    assert!(r.final_discrepancy < 1e-3, "{}", r.final_discrepancy);
}

#[test]
fn discrete_isometry_holds_in_law() {
    let cat = default_catalog();
    for name in ["unit_bump", "dipole", "staggered"] {
        let g = cat.iter().find(|f| f.name == name).unwrap();
        let grid = SpectralGrid::new(128.0, g.suggested_cutoff(128.0), 0.25).unwrap();
        let r = ito_integral_variance_check(g, &grid, h(0.3), 20_000, 3).unwrap();
        let z = (r.empirical_second_moment - r.grid_norm_sq) / r.stderr;
        assert!(z.abs() < 4.0, "{name}: z = {z}");
    }
}

#[test]
fn grid_norm_approaches_continuum_norm() {
    let g = default_catalog().into_iter().find(|f| f.name == "unit_bump").unwrap();
    let gap = |l: f64| {
        let grid = SpectralGrid::new(l, g.suggested_cutoff(l), 0.25).unwrap();
        let r = ito_integral_variance_check(&g, &grid, h(0.35), 2, 1).unwrap();
        (r.grid_norm_sq / r.continuum_norm_sq - 1.0).abs()
    };
    let (a, b) = (gap(64.0), gap(1024.0));
    assert!(b < a && b < 2e-3, "{a} {b}");
}
