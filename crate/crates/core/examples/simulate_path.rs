//! One path of the piecewise-deterministic process, dumped as CSV.

use growfrag::pdmp::{simulate, RngStream, StoppingRule};
use growfrag::{CoefficientModel, FragRate, GrowthRate, Kernel, Profile};

fn main() -> growfrag::Result<()> {
    let m = CoefficientModel::new(
        GrowthRate::affine(1.0, 0.5),
        FragRate::Constant(1.0),
        Kernel::self_similar(Profile::uniform_binary()),
        1.0,
    )?;
    let mut rng = RngStream::new(42, 0).rng();
    let path = simulate(&m, 1.0, StoppingRule::FixedHorizon(10.0), 10.0, &mut rng)?;
    eprintln!("{} jumps, X(10) = {:.6}", path.jump_count(), path.state_at(&m, 10.0)?);
    path.write_csv(std::io::stdout().lock())
}
