//! Moment and growth-balance conditions, then the Lyapunov drift they imply.

use growfrag::criteria::{check_growth_balance, constant_case, lyapunov_drift, LyapunovSpec, SampleGrid};
use growfrag::{CoefficientModel, FragRate, GrowthRate, Kernel, Profile};

fn main() -> growfrag::Result<()> {
    let m = CoefficientModel::new(
        GrowthRate::affine(1.0, 0.5),
        FragRate::Constant(1.0),
        Kernel::self_similar(Profile::uniform_binary()),
        1.0,
    )?;
    let t = check_growth_balance(&m, Some(1.0), Some(0.5))?;
    print!("{}", t.report.table());
    let choice = t.choice.expect("balance holds on the benchmark");
    let spec = LyapunovSpec::new(choice.a, choice.b, 0.25, choice.x_infinity)?;
    let d = lyapunov_drift(&m, &spec, &SampleGrid::around(1.0))?;
    println!("{:?}: {}", d.entry.status, d.entry.detail);
    let c = constant_case(&m, 1.0, 0.5)?;
    println!("constant rates: lambda = {}", c.lambda);
    print!("{}", c.report.table());
    Ok(())
}
