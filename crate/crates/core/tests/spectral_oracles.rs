use growfrag::numerics::integrate;
use growfrag::spectral::{assemble, leading_eigen, Evolver, Field, Grid};
use growfrag::{CoefficientModel, FragRate, GrowthRate, Kernel, Profile};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn benchmark() -> CoefficientModel {
    CoefficientModel::new(
        GrowthRate::affine(1.0, 0.5),
        FragRate::Constant(1.0),
        Kernel::self_similar(Profile::uniform_binary()),
        1.0,
    )
    .unwrap()
}

fn bump(x: f64) -> f64 {
    (-x.ln().powi(2)).exp()
}

/// `tau f' + int f(y) k(x, y) dy - f` for the benchmark and `f = bump`,
/// with the fragment integral `(2/x) int_0^x f` done by adaptive quadrature.
fn exact_generator(x: f64) -> f64 {
    let df = -2.0 * x.ln() / x * bump(x);
    let (inner, _) = integrate(bump, 1e-12, x, 1e-12).unwrap();
    (1.0 + 0.5 * x) * df + 2.0 * inner / x - bump(x)
}

fn max_error(grid: &Grid) -> f64 {
    let op = assemble(&benchmark(), grid).unwrap();
    let f: Vec<f64> = grid.nodes().iter().map(|&x| bump(x)).collect();
    let af = op.apply(&f);
    grid.nodes()
        .iter()
        .zip(&af)
        .filter(|(x, _)| (0.1..=10.0).contains(*x))
        .map(|(&x, v)| (v - exact_generator(x)).abs())
        .fold(0.0, f64::max)
}

#[test]
fn generator_is_first_order_consistent() {
    let coarse = Grid::geometric(1e-4, 200.0, 200).unwrap();
    let e1 = max_error(&coarse);
    let e2 = max_error(&coarse.refined());
    let e3 = max_error(&coarse.refined().refined());
    let p1 = (e1 / e2).log2();
    let p2 = (e2 / e3).log2();
    assert!((0.8..=1.2).contains(&p1) && (0.8..=1.2).contains(&p2), "observed orders {p1}, {p2} (errors {e1}, {e2}, {e3})");
}

#[test]
fn transport_only_maps_identity_to_speed() {
    for growth in [GrowthRate::Constant(1.0), GrowthRate::affine(1.0, 1.0), GrowthRate::power_law(1.0, 0.5)] {
        let m = CoefficientModel::new(growth.clone(), FragRate::Constant(0.0), Kernel::self_similar(Profile::uniform_binary()), 1.0)
            .unwrap();
        let grid = Grid::geometric(1e-3, 1e3, 300).unwrap();
        let op = assemble(&m, &grid).unwrap();
        let ax = op.apply(grid.nodes());
        for (i, &x) in grid.nodes().iter().enumerate().take(grid.len() - 1) {
            let tau = growth.eval(x);
            assert!((ax[i] - tau).abs() <= 1e-10 * tau, "{x}: {} vs {tau}", ax[i]);
        }
    }
}

#[test]
fn implicit_step_balances_the_first_moment() {
    let grid = Grid::geometric(1e-4, 200.0, 400).unwrap();
    let op = assemble(&benchmark(), &grid).unwrap();
    let dt = 0.02;
    let ev = Evolver::new(&op, dt).unwrap();
    let mut m = Field::from_fn(&grid, |x| (-4.0 * x.ln().powi(2)).exp()).masses(&grid);
    for _ in 0..50 {
        let next = ev.step_masses(&m).unwrap();
        let dx: f64 = next.iter().zip(&m).zip(grid.nodes()).map(|((a, b), x)| (a - b) * x).sum();
        let tau: f64 = next.iter().zip(grid.nodes()).map(|(a, x)| a * (1.0 + 0.5 * x)).sum();
        assert!((dx / dt - tau).abs() <= 1e-8 * tau, "{} vs {tau}", dx / dt);
        m = next;
    }
}

#[test]
fn eigenvalue_converges_under_refinement() {
    let model = CoefficientModel::new(
        GrowthRate::affine(1.0, 0.5),
        FragRate::hyperbolic(1.0, 2.0, 1.0),
        Kernel::self_similar(Profile::uniform_binary()),
        1.0,
    )
    .unwrap();
    let g1 = Grid::geometric(1e-4, 200.0, 150).unwrap();
    let g2 = g1.refined();
    let g3 = g2.refined();
    let rho: Vec<f64> = [g1, g2, g3].iter().map(|g| leading_eigen(&assemble(&model, g).unwrap()).unwrap().rho).collect();
    let d1 = (rho[0] - rho[1]).abs();
    let d2 = (rho[1] - rho[2]).abs();
    assert!(d2 < 0.7 * d1, "successive differences {d1}, {d2}");
    assert!((rho[2] - 1.6).abs() < 0.02, "rho = {}", rho[2]);
}

#[test]
fn eigenvectors_are_positive_and_normalized() {
    let grid = Grid::geometric(1e-4, 200.0, 300).unwrap();
    let e = leading_eigen(&assemble(&benchmark(), &grid).unwrap()).unwrap();
    assert!(e.h.iter().all(|v| *v > 0.0) && e.nu.iter().all(|v| *v > 0.0));
    let nu = Field { values: e.nu.clone() };
    assert!((nu.total_mass(&grid) - 1.0).abs() < 1e-12);
    let pairing: f64 = nu.masses(&grid).iter().zip(&e.h).map(|(m, h)| m * h).sum();
    assert!((pairing - 1.0).abs() < 1e-12);
    // constant rates: h is flat away from the outflow boundary
    let i = grid.cell_of(1.0).unwrap();
    let j = grid.cell_of(10.0).unwrap();
    assert!((e.h[i] / e.h[j] - 1.0).abs() < 1e-3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn transpose_is_the_adjoint(seed in any::<u64>()) {
        let grid = Grid::geometric(1e-3, 100.0, 60).unwrap();
        let op = assemble(&benchmark(), &grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m: Vec<f64> = (0..grid.len()).map(|_| rng.random::<f64>()).collect();
        let f: Vec<f64> = (0..grid.len()).map(|_| rng.random::<f64>() - 0.5).collect();
        let left: f64 = op.apply_transpose(&m).iter().zip(&f).map(|(a, b)| a * b).sum();
        let right: f64 = m.iter().zip(op.apply(&f)).map(|(a, b)| a * b).sum();
        prop_assert!((left - right).abs() <= 1e-10 * (1.0 + left.abs()));
    }

    #[test]
    fn evolution_keeps_masses_non_negative(seed in any::<u64>(), dt in 0.01f64..0.45) {
        let grid = Grid::geometric(1e-3, 100.0, 60).unwrap();
        let op = assemble(&benchmark(), &grid).unwrap();
        let ev = Evolver::new(&op, dt).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m: Vec<f64> = (0..grid.len()).map(|_| rng.random::<f64>().powi(4)).collect();
        for _ in 0..20 {
            m = ev.step_masses(&m).unwrap();
            prop_assert!(m.iter().all(|v| *v >= 0.0));
        }
    }
}
