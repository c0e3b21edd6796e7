//! Malthus exponent by stochastic root finding, then `h` and the profile `nu`.

use growfrag::malthus::{estimate_h, estimate_profile, solve_malthus, tags, MalthusSettings};
use growfrag::numerics::geomspace;
use growfrag::{CoefficientModel, FragRate, GrowthRate, Kernel, Profile};

fn main() -> growfrag::Result<()> {
    let m = CoefficientModel::new(
        GrowthRate::affine(1.0, 0.5),
        FragRate::hyperbolic(1.0, 2.0, 1.0),
        Kernel::self_similar(Profile::uniform_binary()),
        1.0,
    )?;
    let settings = MalthusSettings { seed: 7, budget: 200_000, ..Default::default() };
    let r = solve_malthus(&m, 1.0, &settings)?;
    println!("lambda = {:.5}, interval [{:.5}, {:.5}], {:?}, {:?}", r.lambda, r.ci.0, r.ci.1, r.status, r.certificate);

    let nodes = geomspace(0.05, 20.0, 17);
    let h = estimate_h(&m, &nodes, r.lambda, 1.0, 2000, settings.horizon, 7, tags::HARMONIC)?;
    let p = estimate_profile(&m, &h, r.lambda, 2000, settings.horizon, 7)?;
    println!("x,h,nu");
    for i in 0..nodes.len() {
        println!("{:.4},{:.5},{:.5}", nodes[i], h.values[i], p.nu[i]);
    }
    println!("<nu, h> = {:.4}", p.pairing);
    Ok(())
}
