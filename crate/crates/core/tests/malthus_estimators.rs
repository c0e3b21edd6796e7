use growfrag::malthus::{crossing_profile, estimate_l, tags, ExcursionSet};
use growfrag::{CoefficientModel, FragRate, GrowthRate, Kernel, Profile};

fn model(rate: FragRate) -> CoefficientModel {
    CoefficientModel::new(GrowthRate::affine(1.0, 0.5), rate, Kernel::self_similar(Profile::uniform_binary()), 1.0).unwrap()
}

#[test]
fn constant_g_at_its_value_counts_hits() {
    let set = ExcursionSet::simulate(&model(FragRate::Constant(1.0)), 1.0, 1.0, 50.0, 5000, 1, tags::LAPLACE, 0).unwrap();
    let e = set.laplace(1.0);
    assert!((e.estimate - set.hits() as f64 / set.len() as f64).abs() < 1e-14);
}

#[test]
fn derivative_matches_common_number_difference() {
    let set =
        ExcursionSet::simulate(&model(FragRate::hyperbolic(1.0, 2.0, 1.0)), 1.0, 1.0, 50.0, 5000, 2, tags::LAPLACE, 0)
            .unwrap();
    let q = 1.7;
    let step = 1e-5;
    let fd = (set.laplace(q + step).estimate - set.laplace(q - step).estimate) / (2.0 * step);
    let (d, _) = set.derivative(q);
    assert!((fd - d).abs() <= 1e-6 * d.abs(), "{fd} vs {d}");
}

#[test]
fn transport_never_reaches_a_lower_level() {
    let m = model(FragRate::Constant(0.0));
    let e = estimate_l(&m, 2.0, 1.0, 0.0, 100, 20.0, 4).unwrap();
    assert_eq!(e.estimate, 0.0);
    assert_eq!(e.truncated, 100);
}

#[test]
fn crossing_profile_integrates_to_one_on_constant_rates() {
    let m = model(FragRate::Constant(1.0));
    let levels: Vec<f64> = (0..41).map(|i| 10f64.powf(-2.0 + 0.1 * i as f64)).collect();
    let c = crossing_profile(&m, 1.0, 1.0, &levels, 20_000, 50.0, 6).unwrap();
    let integral = growfrag::malthus::integrate_nodes(&levels, &c.nu);
    assert!((integral - 1.0).abs() < 0.05, "int nu = {integral}");
    assert!(c.nu.iter().zip(&c.nu_stderr).all(|(v, s)| *v >= 0.0 && *s >= 0.0));
}
