//! Monte Carlo `L_{x0,x0}(q)` over a range of `q`, with common random numbers.

use growfrag::malthus::{tags, ExcursionSet};
use growfrag::{CoefficientModel, FragRate, GrowthRate, Kernel, Profile};

fn main() -> growfrag::Result<()> {
    let m = CoefficientModel::new(
        GrowthRate::affine(1.0, 0.5),
        FragRate::hyperbolic(1.0, 2.0, 1.0),
        Kernel::self_similar(Profile::uniform_binary()),
        1.0,
    )?;
    let set = ExcursionSet::simulate(&m, 1.0, 1.0, 50.0, 20_000, 1, tags::LAPLACE, 0)?;
    println!("q,L,stderr");
    for k in 0..=10 {
        let q = 1.0 + 0.1 * k as f64;
        let e = set.laplace(q);
        println!("{q:.2},{:.6},{:.6}", e.estimate, e.stderr);
    }
    Ok(())
}
