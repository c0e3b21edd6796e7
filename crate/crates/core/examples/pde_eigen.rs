//! Finite-volume operator: leading eigen-triple, evolution and the rate of
//! convergence to the profile.

use growfrag::spectral::{assemble, convergence_rate, evolve_snapshots, leading_eigen, Field, Grid};
use growfrag::{CoefficientModel, FragRate, GrowthRate, Kernel, Profile};

fn main() -> growfrag::Result<()> {
    let m = CoefficientModel::new(
        GrowthRate::affine(1.0, 0.5),
        FragRate::hyperbolic(1.0, 2.0, 1.0),
        Kernel::self_similar(Profile::uniform_binary()),
        1.0,
    )?;
    let grid = Grid::geometric(1e-4, 200.0, 400)?;
    let op = assemble(&m, &grid)?;
    let e = leading_eigen(&op)?;
    println!("rho = {:.6}, residuals {:.1e} / {:.1e}, leakage {:?}", e.rho, e.residual_right, e.residual_left, e.leakage);

    let u0 = Field::from_fn(&grid, |x| (-4.0 * x.ln().powi(2)).exp());
    let snaps = evolve_snapshots(&op, &u0, 20.0, 0.02, 10)?;
    let fit = convergence_rate(&grid, &snaps[3..], e.rho, &Field { values: e.nu.clone() })?;
    println!("beta = {:.4} (R^2 = {:.5}), mass drift {:.2e}", fit.beta, fit.r_squared, fit.mass_drift);
    Ok(())
}
