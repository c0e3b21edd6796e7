use growfrag::criteria::{
    check_tail_rate, check_growth_balance, drift_quadrature, drift_ratio_closed_form, lyapunov_drift, CriterionStatus, LyapunovSpec,
    SampleGrid,
};
use growfrag::{CoefficientModel, FragRate, GrowthRate, Kernel, Profile};

fn model(rate: FragRate, profile: Profile) -> CoefficientModel {
    CoefficientModel::new(GrowthRate::affine(1.0, 0.5), rate, Kernel::self_similar(profile), 1.0).unwrap()
}

#[test]
fn power_drift_closed_form_matches_quadrature() {
    let models = [
        model(FragRate::Constant(1.0), Profile::uniform_binary()),
        model(FragRate::hyperbolic(1.0, 2.0, 1.0), Profile::uniform_binary()),
        model(FragRate::Constant(1.0), Profile::power(3.0, 0.5)),
    ];
    for m in &models {
        for p in [1.0, 2.0, -0.5, -0.25] {
            for x in [0.01, 0.1, 0.5, 1.0, 3.0, 20.0, 100.0] {
                let closed = drift_ratio_closed_form(m, x, p).unwrap() * x.powf(p);
                let quad = drift_quadrature(m, |y| y.powf(p), |y| p * y.powf(p - 1.0), x).unwrap();
                assert!((closed - quad).abs() <= 0.01 * closed.abs().max(1e-12), "p = {p}, x = {x}: {closed} vs {quad}");
            }
        }
    }
}

#[test]
fn balance_chooses_a_working_exponent_without_hints() {
    let m = model(FragRate::Constant(1.0), Profile::uniform_binary());
    let t = check_growth_balance(&m, None, None).unwrap();
    assert!(t.report.all_pass(), "{}", t.report.table());
    let c = t.choice.unwrap();
    assert!(c.a > 0.0 && c.b == 0.5 && c.x_infinity.is_finite());
}

#[test]
fn tail_rate_criterion_on_a_decreasing_rate() {
    let m = model(FragRate::hyperbolic(1.0, 2.0, 1.0), Profile::uniform_binary());
    // limsup g = 1 lies below the exponent (about 1.6)
    assert_eq!(check_tail_rate(&m, 1.6, 0.01).status, CriterionStatus::Pass);
    assert_eq!(check_tail_rate(&m, 0.9, 0.01).status, CriterionStatus::Fail);
    // the lower confidence bound is what must clear the limit
    assert_eq!(check_tail_rate(&m, 1.005, 0.01).status, CriterionStatus::Fail);
}

#[test]
fn convex_bridge_gives_a_drift_certificate_on_the_hyperbolic_model() {
    let m = model(FragRate::hyperbolic(1.0, 2.0, 1.0), Profile::uniform_binary());
    let t = check_growth_balance(&m, Some(1.0), Some(0.5)).unwrap();
    let c = t.choice.expect("growth balance");
    let spec = LyapunovSpec::convex_below(c.a, c.b, 0.25, c.x_infinity).unwrap().expect("convex bridge");
    assert!(spec.bridge_is_convex());
    let d = lyapunov_drift(&m, &spec, &SampleGrid::around(1.0)).unwrap();
    assert_eq!(d.entry.status, CriterionStatus::Pass, "{}", d.entry.detail);
}

#[test]
fn lyapunov_function_is_continuously_differentiable() {
    let spec = LyapunovSpec::new(1.0, 0.5, 0.25, 4.0).unwrap();
    for knot in [0.25, 4.0] {
        let (lo, hi) = (knot * (1.0 - 1e-9), knot * (1.0 + 1e-9));
        assert!((spec.value(lo) / spec.value(hi) - 1.0).abs() < 1e-7);
        assert!((spec.derivative(lo) / spec.derivative(hi) - 1.0).abs() < 1e-6);
    }
}
