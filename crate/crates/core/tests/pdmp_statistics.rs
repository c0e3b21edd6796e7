use growfrag::pdmp::{
    excursion, sample_holding_time, sample_holding_time_thinning, sample_jump_target, simulate, Event, HoldingTime,
    RngStream, StoppingRule, Termination,
};
use growfrag::{CoefficientModel, FragRate, GrowthRate, Kernel, Profile};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};

fn model(rate: FragRate) -> CoefficientModel {
    CoefficientModel::new(GrowthRate::Constant(1.0), rate, Kernel::self_similar(Profile::uniform_binary()), 1.0).unwrap()
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
fn ks_distance(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn two_sample_ks(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

fn holding(h: HoldingTime) -> f64 {
    match h {
        HoldingTime::After(t) => t,
        HoldingTime::Never => f64::INFINITY,
    }
}

// Independent oracle: with tau = 1 the hazard of the first jump from x is
// int_0^t 2 B(x + s) ds; B(y) = 1 + 1/(1 + y) integrates to t + ln((1+x+t)/(1+x)).
#[test]
fn holding_time_matches_hazard_cdf() {
    let m = model(FragRate::hyperbolic(1.0, 2.0, 1.0));
    let x = 0.5;
    let mut rng = RngStream::new(1, 0).rng();
    let n = 20_000;
    let sample: Vec<f64> = (0..n).map(|_| holding(sample_holding_time(&m, x, &mut rng).unwrap())).collect();
    let d = ks_distance(sample, |t| 1.0 - (-2.0 * (t + ((1.0 + x + t) / (1.0 + x)).ln())).exp());
    assert!(d < 1.63 / (n as f64).sqrt(), "KS distance {d}");
}

#[test]
fn thinning_and_inversion_agree() {
    let m = model(FragRate::hyperbolic(1.0, 2.0, 1.0));
    let mut a_rng = RngStream::new(2, 0).rng();
    let mut b_rng = RngStream::new(2, 1).rng();
    let n = 10_000;
    let a: Vec<f64> = (0..n).map(|_| holding(sample_holding_time(&m, 0.2, &mut a_rng).unwrap())).collect();
    let b: Vec<f64> =
        (0..n).map(|_| holding(sample_holding_time_thinning(&m, 0.2, 1e3, &mut b_rng).unwrap())).collect();
    let d = two_sample_ks(a, b);
    assert!(d < 1.63 * (2.0 / n as f64).sqrt(), "two-sample KS distance {d}");
}

#[test]
fn uniform_binary_fragments_are_uniform() {
    let m = model(FragRate::Constant(1.0));
    let mut rng = RngStream::new(3, 0).rng();
    let n = 20_000;
    let sample: Vec<f64> = (0..n).map(|_| sample_jump_target(&m, 4.0, &mut rng) / 4.0).collect();
    let d = ks_distance(sample, |z| z.clamp(0.0, 1.0));
    assert!(d < 1.63 / (n as f64).sqrt(), "KS distance {d}");
}

// With B N = 2 constant the jump times form a Poisson process of rate 2.
#[test]
fn jump_counts_are_poisson() {
    let m = model(FragRate::Constant(1.0));
    let horizon = 1.5;
    let n = 10_000;
    let max_k = 9;
    let mut observed = vec![0usize; max_k + 1];
    for i in 0..n {
        let mut rng = RngStream::new(4, i).rng();
        let p = simulate(&m, 1.0, StoppingRule::FixedHorizon(horizon), horizon, &mut rng).unwrap();
        observed[p.jump_count().min(max_k)] += 1;
    }
    let law = Poisson::new(2.0 * horizon).unwrap();
    let mut chi2 = 0.0;
    for (k, &o) in observed.iter().enumerate() {
        let p = if k < max_k { law.pmf(k as u64) } else { 1.0 - (0..max_k as u64).map(|j| law.pmf(j)).sum::<f64>() };
        let e = p * n as f64;
        chi2 += (o as f64 - e).powi(2) / e;
    }
    let critical = ChiSquared::new(max_k as f64).unwrap().inverse_cdf(0.999);
    assert!(chi2 < critical, "chi-square {chi2} above {critical}");
}

fn benchmark() -> CoefficientModel {
    CoefficientModel::new(
        GrowthRate::affine(1.0, 0.5),
        FragRate::hyperbolic(1.0, 2.0, 1.0),
        Kernel::self_similar(Profile::uniform_binary()),
        1.0,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn paths_grow_between_downward_jumps(seed in any::<u64>(), x in 0.01f64..20.0, t in 0.1f64..10.0) {
        let m = benchmark();
        let mut rng = RngStream::new(seed, 0).rng();
        let p = simulate(&m, x, StoppingRule::FixedHorizon(t), t, &mut rng).unwrap();
        let mut clock = 0.0;
        let mut mass = x;
        for e in &p.events {
            match *e {
                Event::Flow { start_time, start_mass, duration, end_mass } => {
                    prop_assert!((start_time - clock).abs() <= 1e-12 * (1.0 + clock));
                    prop_assert!((start_mass - mass).abs() <= 1e-12 * mass);
                    prop_assert!(duration > 0.0 && end_mass >= start_mass);
                    let expect = m.flow(start_mass, duration).unwrap();
                    prop_assert!((end_mass - expect).abs() <= 1e-9 * expect);
                    clock = start_time + duration;
                    mass = end_mass;
                }
                Event::Jump { time, pre, post } => {
                    prop_assert!((time - clock).abs() <= 1e-12 * (1.0 + clock));
                    prop_assert!(post > 0.0 && post < pre);
                    mass = post;
                }
            }
        }
        prop_assert_eq!(p.outcome.termination, Termination::HorizonReached);
        prop_assert!((p.end_time() - t).abs() <= 1e-12 * t);
        prop_assert!((p.outcome.mass - mass).abs() <= 1e-12 * mass);
    }

    #[test]
    fn constant_g_weight_is_exponential_in_time(seed in any::<u64>(), t in 0.1f64..5.0) {
        let m = CoefficientModel::new(
            GrowthRate::affine(1.0, 0.5),
            FragRate::Constant(1.5),
            Kernel::self_similar(Profile::uniform_binary()),
            1.0,
        ).unwrap();
        let mut rng = RngStream::new(seed, 0).rng();
        let p = simulate(&m, 1.0, StoppingRule::FixedHorizon(t), t, &mut rng).unwrap();
        prop_assert!((p.outcome.log_fk - 1.5 * t).abs() <= 1e-9 * t);
        let half = 0.5 * t;
        prop_assert!((p.log_fk_until(&m, half).unwrap() - 1.5 * half).abs() <= 1e-9 * t);
    }

    #[test]
    fn hitting_an_upper_level_happens_on_the_flow(seed in any::<u64>(), x in 0.05f64..2.0, gap in 0.01f64..5.0) {
        let m = benchmark();
        let y = x + gap;
        let mut rng = RngStream::new(seed, 0).rng();
        let e = excursion(&m, x, y, 200.0, &mut rng).unwrap();
        if e.hit {
            // skip-free upward: the hitting time is at least the flow time
            prop_assert!(e.time >= m.travel_time(x, y).unwrap() * (1.0 - 1e-12));
            prop_assert!(e.weight(0.0) > 0.0);
        } else {
            prop_assert!(e.truncated);
            prop_assert_eq!(e.weight(0.0), 0.0);
        }
    }

    #[test]
    fn streams_are_reproducible(seed in any::<u64>(), stream in any::<u64>()) {
        let m = benchmark();
        let a = simulate(&m, 1.0, StoppingRule::FixedHorizon(3.0), 3.0, &mut RngStream::new(seed, stream).rng()).unwrap();
        let b = simulate(&m, 1.0, StoppingRule::FixedHorizon(3.0), 3.0, &mut RngStream::new(seed, stream).rng()).unwrap();
        prop_assert_eq!(a, b);
    }
}
