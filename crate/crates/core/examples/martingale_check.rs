//! `e^{-lambda t} E_t h(X_t)` has constant mean; above the exponent the
//! same functional is a supermartingale.

use growfrag::malthus::{estimate_h, martingale_test, supermartingale_test, tags, HFunction};
use growfrag::numerics::geomspace;
use growfrag::{CoefficientModel, FragRate, GrowthRate, Kernel, Profile};

fn main() -> growfrag::Result<()> {
    let m = CoefficientModel::new(
        GrowthRate::affine(1.0, 0.5),
        FragRate::Constant(1.0),
        Kernel::self_similar(Profile::uniform_binary()),
        1.0,
    )?;
    let times = [0.5, 1.0, 2.0];
    let r = martingale_test(&m, 1.0, 1.0, 0.0, &HFunction::Constant(1.0), 0.0, &times, 20_000, 3.0, 1)?;
    for row in &r.rows {
        println!("martingale      t = {:.1}: mean {:.6} +- {:.2e}", row.t, row.mean, row.stderr);
    }
    let nodes = geomspace(0.05, 20.0, 17);
    let hq = estimate_h(&m, &nodes, 1.5, 1.0, 2000, 50.0, 1, tags::HARMONIC_SHIFTED)?;
    let s = supermartingale_test(&m, 1.0, 1.5, &hq.function()?, hq.max_relative_stderr(), &times, 20_000, 3.0, 1)?;
    for row in &s.rows {
        println!("supermartingale t = {:.1}: mean {:.6} +- {:.2e}", row.t, row.mean, row.stderr);
    }
    println!("pass: {} / {}", r.pass, s.pass);
    Ok(())
}
