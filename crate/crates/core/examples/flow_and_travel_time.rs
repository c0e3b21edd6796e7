//! Deterministic flow `dx/dt = tau(x)` and travel times for three growth laws.

use growfrag::{CoefficientModel, FragRate, GrowthRate, Kernel, Profile};

fn main() -> growfrag::Result<()> {
    let laws = [
        ("tau = 1", GrowthRate::Constant(1.0)),
        ("tau = 1 + x", GrowthRate::affine(1.0, 1.0)),
        ("tau = sqrt(x)", GrowthRate::power_law(1.0, 0.5)),
    ];
    for (name, growth) in laws {
        let m = CoefficientModel::new(growth, FragRate::Constant(0.0), Kernel::self_similar(Profile::uniform_binary()), 1.0)?;
        let s = m.travel_time(0.0, 1.0)?;
        println!("{name:<14} s(0, 1) = {s:.12}  flow(0, s) = {:.12}", m.flow(0.0, s)?);
    }
    Ok(())
}
