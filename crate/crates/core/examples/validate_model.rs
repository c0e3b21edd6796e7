//! Standing-assumption checks for a valid and an invalid growth law.

use growfrag::coeffs::validate;
use growfrag::{CoefficientModel, FragRate, GrowthRate, Kernel, Profile};

fn main() -> growfrag::Result<()> {
    for (name, growth) in [("1 + x/2", GrowthRate::affine(1.0, 0.5)), ("x", GrowthRate::power_law(1.0, 1.0))] {
        let m = CoefficientModel::new(growth, FragRate::Constant(1.0), Kernel::self_similar(Profile::uniform_binary()), 1.0)?;
        let report = validate(&m);
        println!("tau(x) = {name}: hard failure = {}", report.hard_failure());
        for e in &report.entries {
            println!("  {:<34} {:?}  {}", e.id, e.status, e.detail);
        }
    }
    Ok(())
}
