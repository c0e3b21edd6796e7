//! Leading eigenvalue of the operator killed outside nested intervals.

use growfrag::spectral::{assemble, killed_spectral_of, leading_eigen, Grid};
use growfrag::{CoefficientModel, FragRate, GrowthRate, Kernel, Profile};

fn main() -> growfrag::Result<()> {
    let m = CoefficientModel::new(
        GrowthRate::affine(1.0, 0.5),
        FragRate::Constant(1.0),
        Kernel::self_similar(Profile::uniform_binary()),
        1.0,
    )?;
    let op = assemble(&m, &Grid::geometric(1e-4, 200.0, 400)?)?;
    for (a, b) in [(0.5, 2.0), (0.2, 5.0), (0.05, 20.0), (1e-3, 100.0)] {
        let k = killed_spectral_of(&op, a, b)?;
        println!("({a}, {b}): rho = {:.6} on {} nodes", k.rho, k.nodes.len());
    }
    println!("whole grid: rho = {:.6}", leading_eigen(&op)?.rho);
    Ok(())
}
