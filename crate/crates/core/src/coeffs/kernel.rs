use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{self, Pchip};

/// `int_a^b z^s dz` for `0 <= a <= b`, infinite when not integrable at 0.
fn pow_integral(s: f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let e = s + 1.0;
    if e.abs() < 1e-14 {
        if a == 0.0 {
            return f64::INFINITY;
        }
        return (b / a).ln();
    }
    if a == 0.0 {
        if e < 0.0 {
            return f64::INFINITY;
        }
        return b.powf(e) / e;
    }
    (b.powf(e) - a.powf(e)) / e
}

/// Fragment-size profile `k0` on `(0, 1)` of a self-similar kernel
/// `k(x, y) = k0(y / x) / x`.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    /// `coeff * z^exponent`; `coeff = 2, exponent = 0` is uniform binary
    /// fragmentation.
    Power { coeff: f64, exponent: f64 },
    /// Piecewise linear through `(z, k)` knots with `z` spanning `[0, 1]`.
    Tabulated(LinearProfile),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProfile {
    z: Vec<f64>,
    k: Vec<f64>,
    cumulative: Vec<f64>,
}

impl LinearProfile {
    pub fn new(z: Vec<f64>, k: Vec<f64>) -> Result<Self> {
        if z.len() != k.len() || z.len() < 2 {
            return Err(Error::invalid("profile table needs matching z and k arrays of length >= 2"));
        }
        if z[0] != 0.0 || z[z.len() - 1] != 1.0 {
            return Err(Error::invalid("profile knots must start at 0 and end at 1"));
        }
        if z.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("profile knots must be strictly increasing"));
        }
        if k.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("profile values must be finite and non-negative"));
        }
        let mut cumulative = vec![0.0];
        for i in 0..z.len() - 1 {
            let seg = 0.5 * (k[i] + k[i + 1]) * (z[i + 1] - z[i]);
            cumulative.push(cumulative[i] + seg);
        }
        if !(cumulative[cumulative.len() - 1] > 0.0) {
            return Err(Error::invalid("profile has zero mass"));
        }
        Ok(Self { z, k, cumulative })
    }

    fn density(&self, z: f64) -> f64 {
        if !(z > 0.0 && z < 1.0) {
            return 0.0;
        }
        let i = self.z.partition_point(|&v| v <= z).clamp(1, self.z.len() - 1) - 1;
        let t = (z - self.z[i]) / (self.z[i + 1] - self.z[i]);
        self.k[i] + t * (self.k[i + 1] - self.k[i])
    }

    fn partial_moment(&self, r: f64, a: f64, b: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.z.len() - 1 {
            let lo = self.z[i].max(a);
            let hi = self.z[i + 1].min(b);
            if hi <= lo {
                continue;
            }
            let beta = (self.k[i + 1] - self.k[i]) / (self.z[i + 1] - self.z[i]);
            let alpha = self.k[i] - beta * self.z[i];
            let mut seg = 0.0;
            if alpha != 0.0 {
                seg += alpha * pow_integral(r, lo, hi);
            }
            if beta != 0.0 {
                seg += beta * pow_integral(r + 1.0, lo, hi);
            }
            acc += seg;
        }
        acc
    }

    fn quantile(&self, u: f64) -> f64 {
        let total = self.cumulative[self.cumulative.len() - 1];
        let target = u * total;
        let n = self.z.len();
        let i = self.cumulative.partition_point(|&c| c <= target).clamp(1, n - 1) - 1;
        let rem = (target - self.cumulative[i]).max(0.0);
        let width = self.z[i + 1] - self.z[i];
        let beta = (self.k[i + 1] - self.k[i]) / width;
        let ka = self.k[i];
        // ka * w + beta / 2 * w^2 = rem, in the cancellation-free form
        let disc = (ka * ka + 2.0 * beta * rem).max(0.0);
        let denom = ka + disc.sqrt();
        let w = if denom > 0.0 { 2.0 * rem / denom } else { 0.0 };
        (self.z[i] + w.min(width)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
    }

    fn value_at_zero(&self) -> (f64, f64) {
        (self.k[0], (self.k[1] - self.k[0]) / self.z[1])
    }
}

impl Profile {
    pub fn uniform_binary() -> Self {
        Profile::Power { coeff: 2.0, exponent: 0.0 }
    }

    pub fn power(coeff: f64, exponent: f64) -> Self {
        Profile::Power { coeff, exponent }
    }

    pub fn tabulated(z: Vec<f64>, k: Vec<f64>) -> Result<Self> {
        Ok(Profile::Tabulated(LinearProfile::new(z, k)?))
    }

    pub fn check_parameters(&self) -> Result<()> {
        match self {
            Profile::Power { coeff, exponent } => {
                if !(*coeff > 0.0 && coeff.is_finite()) {
                    return Err(Error::invalid("profile coefficient must be positive"));
                }
                if !(*exponent > -1.0 && exponent.is_finite()) {
                    return Err(Error::invalid("profile exponent must exceed -1 (k0 must be integrable)"));
                }
                Ok(())
            }
            Profile::Tabulated(_) => Ok(()),
        }
    }

    pub fn density(&self, z: f64) -> f64 {
        match self {
            Profile::Power { coeff, exponent } => {
                if z > 0.0 && z < 1.0 {
                    coeff * z.powf(*exponent)
                } else {
                    0.0
                }
            }
            Profile::Tabulated(t) => t.density(z),
        }
    }

    /// `int_a^b z^r k0(z) dz` for `0 <= a <= b <= 1`; infinite if divergent.
    pub fn partial_moment(&self, r: f64, a: f64, b: f64) -> f64 {
        let (a, b) = (a.clamp(0.0, 1.0), b.clamp(0.0, 1.0));
        match self {
            Profile::Power { coeff, exponent } => coeff * pow_integral(r + exponent, a, b),
            Profile::Tabulated(t) => t.partial_moment(r, a, b),
        }
    }

    /// `M_r = int_0^1 z^r k0(z) dz`.
    pub fn moment(&self, r: f64) -> Result<f64> {
        let m = self.partial_moment(r, 0.0, 1.0);
        if m.is_finite() {
            Ok(m)
        } else {
            Err(Error::InfiniteMoment { r })
        }
    }

    pub fn mass(&self) -> f64 {
        match self {
            Profile::Power { coeff, exponent } => coeff / (exponent + 1.0),
            Profile::Tabulated(t) => t.cumulative[t.cumulative.len() - 1],
        }
    }

    /// `p` such that `k0(z) ~ z^p` near 0; `M_r < infinity` iff `r > -(p + 1)`.
    pub fn exponent_at_zero(&self) -> f64 {
        match self {
            Profile::Power { exponent, .. } => *exponent,
            Profile::Tabulated(t) => {
                let (v0, slope) = t.value_at_zero();
                if v0 > 0.0 {
                    0.0
                } else if slope > 0.0 {
                    1.0
                } else {
                    // vanishes identically on the first segment
                    f64::INFINITY
                }
            }
        }
    }

    /// Normalized distribution function of the fragment fraction.
    pub fn cdf(&self, z: f64) -> f64 {
        if z <= 0.0 {
            return 0.0;
        }
        if z >= 1.0 {
            return 1.0;
        }
        match self {
            Profile::Power { exponent, .. } => z.powf(exponent + 1.0),
            Profile::Tabulated(_) => self.partial_moment(0.0, 0.0, z) / self.mass(),
        }
    }

    /// Inverse of [`Profile::cdf`].
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            Profile::Power { exponent, .. } => u.powf(1.0 / (exponent + 1.0)),
            Profile::Tabulated(t) => t.quantile(u),
        }
    }
}

/// Moments `M_r` of a self-similar profile at a list of orders.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable {
    pub orders: Vec<f64>,
    pub values: Vec<f64>,
    /// Absolute error estimates; the supported profiles integrate exactly.
    pub errors: Vec<f64>,
}

impl MomentTable {
    pub fn new(profile: &Profile, orders: &[f64]) -> Result<Self> {
        let values = orders.iter().map(|&r| profile.moment(r)).collect::<Result<Vec<_>>>()?;
        Ok(Self { orders: orders.to_vec(), values, errors: vec![0.0; orders.len()] })
    }

    pub fn is_strictly_decreasing(&self) -> bool {
        let mut idx: Vec<usize> = (0..self.orders.len()).collect();
        idx.sort_by(|&a, &b| self.orders[a].total_cmp(&self.orders[b]));
        idx.windows(2).all(|w| self.values[w[1]] < self.values[w[0]])
    }
}

pub type KernelDensity = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A kernel given by an arbitrary density `k(x, y)`, with `N(x)` and inverse
/// distribution tables precomputed at geometric knots in `x`.
#[derive(Clone)]
pub struct GeneralKernel {
    density: KernelDensity,
    log_knots: Vec<f64>,
    number: Pchip,
    number_sup: f64,
    quantiles: Vec<Vec<f64>>,
}

impl fmt::Debug for GeneralKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneralKernel")
            .field("knots", &self.log_knots.len())
            .field("number_sup", &self.number_sup)
            .finish()
    }
}

const QUANTILE_LEVELS: usize = 256;
const CDF_CELLS: usize = 256;

impl GeneralKernel {
    /// Tabulates `k` on `[x_lo, x_hi]` with 16 knots per decade. Outside that
    /// range the nearest knot's tables are reused.
    pub fn new(density: KernelDensity, x_lo: f64, x_hi: f64) -> Result<Self> {
        if !(x_lo > 0.0 && x_hi > x_lo) {
            return Err(Error::invalid("general kernel table needs 0 < x_lo < x_hi"));
        }
        let decades = (x_hi / x_lo).log10();
        let n = ((decades * 16.0).ceil() as usize).max(2) + 1;
        let xs = numerics::geomspace(x_lo, x_hi, n);
        let zgrid: Vec<f64> = (0..=CDF_CELLS).map(|j| (j as f64 / CDF_CELLS as f64).powi(2)).collect();
        let mut numbers = Vec::with_capacity(n);
        let mut quantiles = Vec::with_capacity(n);
        for &x in &xs {
            let slice = |z: f64| x * density(x, x * z);
            let mut cum = vec![0.0];
            for j in 0..CDF_CELLS {
                let (a, b) = (zgrid[j], zgrid[j + 1]);
                let piece = if j == 0 {
                    numerics::integrate_endpoint_singular(slice, a, b, 1e-10)?
                } else {
                    numerics::gauss_legendre(slice, a, b)
                };
                if !(piece >= 0.0) || !piece.is_finite() {
                    return Err(Error::Quadrature(format!("kernel density invalid near x = {x}")));
                }
                cum.push(cum[j] + piece);
            }
            let total = cum[CDF_CELLS];
            if !(total > 0.0) {
                return Err(Error::invalid(format!("kernel has no mass at x = {x}")));
            }
            let mut q = Vec::with_capacity(QUANTILE_LEVELS + 1);
            for l in 0..=QUANTILE_LEVELS {
                let target = total * l as f64 / QUANTILE_LEVELS as f64;
                let j = cum.partition_point(|&c| c < target).clamp(1, CDF_CELLS) - 1;
                let span = cum[j + 1] - cum[j];
                let t = if span > 0.0 { ((target - cum[j]) / span).clamp(0.0, 1.0) } else { 0.0 };
                q.push(zgrid[j] + t * (zgrid[j + 1] - zgrid[j]));
            }
            numbers.push(total);
            quantiles.push(q);
        }
        let number_sup = numbers.iter().cloned().fold(0.0, f64::max);
        let log_knots: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
        let number = Pchip::new(log_knots.clone(), numbers)?;
        Ok(Self { density, log_knots, number, number_sup, quantiles })
    }

    fn locate(&self, x: f64) -> (usize, f64) {
        let lx = x.ln();
        let n = self.log_knots.len();
        if !(lx > self.log_knots[0]) {
            return (0, 0.0);
        }
        if lx >= self.log_knots[n - 1] {
            return (n - 2, 1.0);
        }
        let i = self.log_knots.partition_point(|&k| k <= lx) - 1;
        let w = (lx - self.log_knots[i]) / (self.log_knots[i + 1] - self.log_knots[i]);
        (i, w)
    }

    fn table_quantile(&self, k: usize, u: f64) -> f64 {
        let pos = u.clamp(0.0, 1.0) * QUANTILE_LEVELS as f64;
        let l = (pos.floor() as usize).min(QUANTILE_LEVELS - 1);
        let frac = pos - l as f64;
        let q = &self.quantiles[k];
        q[l] + frac * (q[l + 1] - q[l])
    }
}

/// Fragmentation kernel `k(x, y)`, supported on `0 < y < x`.
#[derive(Debug, Clone)]
pub enum Kernel {
    SelfSimilar(Profile),
    General(GeneralKernel),
}

impl Kernel {
    pub fn self_similar(profile: Profile) -> Self {
        Kernel::SelfSimilar(profile)
    }

    pub fn general(density: KernelDensity, x_lo: f64, x_hi: f64) -> Result<Self> {
        Ok(Kernel::General(GeneralKernel::new(density, x_lo, x_hi)?))
    }

    pub fn profile(&self) -> Option<&Profile> {
        match self {
            Kernel::SelfSimilar(p) => Some(p),
            Kernel::General(_) => None,
        }
    }

    pub fn check_parameters(&self) -> Result<()> {
        match self {
            Kernel::SelfSimilar(p) => p.check_parameters(),
            Kernel::General(_) => Ok(()),
        }
    }

    pub fn density(&self, x: f64, y: f64) -> f64 {
        if !(y > 0.0 && y < x) {
            return 0.0;
        }
        match self {
            Kernel::SelfSimilar(p) => p.density(y / x) / x,
            Kernel::General(g) => (g.density)(x, y),
        }
    }

    /// `N(x) = int_0^x k(x, y) dy`.
    pub fn number(&self, x: f64) -> f64 {
        match self {
            Kernel::SelfSimilar(p) => p.mass(),
            Kernel::General(g) => {
                let lx = x.max(f64::MIN_POSITIVE).ln();
                g.number.eval_clamped(lx)
            }
        }
    }

    pub fn constant_number(&self) -> Option<f64> {
        match self {
            Kernel::SelfSimilar(p) => Some(p.mass()),
            Kernel::General(_) => None,
        }
    }

    pub fn number_sup(&self) -> f64 {
        match self {
            Kernel::SelfSimilar(p) => p.mass(),
            Kernel::General(g) => g.number_sup,
        }
    }

    /// Self-similar moment `M_r`.
    pub fn moment(&self, r: f64) -> Result<f64> {
        self.profile().ok_or(Error::NotSelfSimilar)?.moment(r)
    }

    /// `int_lo^hi k(x, y) dy`, clipped to `(0, x)`.
    pub fn mass_between(&self, x: f64, lo: f64, hi: f64) -> Result<f64> {
        let (lo, hi) = (lo.max(0.0), hi.min(x));
        if hi <= lo {
            return Ok(0.0);
        }
        match self {
            Kernel::SelfSimilar(p) => Ok(p.partial_moment(0.0, lo / x, hi / x)),
            Kernel::General(g) => {
                numerics::integrate_endpoint_singular(|y| (g.density)(x, y), lo, hi, 1e-10)
            }
        }
    }

    /// `int_lo^hi y k(x, y) dy`, clipped to `(0, x)`.
    pub fn first_moment_between(&self, x: f64, lo: f64, hi: f64) -> Result<f64> {
        let (lo, hi) = (lo.max(0.0), hi.min(x));
        if hi <= lo {
            return Ok(0.0);
        }
        match self {
            Kernel::SelfSimilar(p) => Ok(x * p.partial_moment(1.0, lo / x, hi / x)),
            Kernel::General(g) => {
                numerics::integrate_endpoint_singular(|y| y * (g.density)(x, y), lo, hi, 1e-10)
            }
        }
    }

    /// `int_0^x f(y) k(x, y) dy` by double-exponential quadrature in `y / x`.
    pub fn integrate_against<F: Fn(f64) -> f64>(&self, x: f64, f: F) -> Result<f64> {
        let slice = |z: f64| {
            let y = x * z;
            let k = match self {
                Kernel::SelfSimilar(p) => p.density(z),
                Kernel::General(g) => x * (g.density)(x, y),
            };
            if k == 0.0 {
                0.0
            } else {
                f(y) * k
            }
        };
        numerics::integrate_endpoint_singular(slice, 0.0, 1.0, 1e-11)
    }

    /// Normalized distribution function of the fragment size given parent `x`.
    pub fn cdf(&self, x: f64, y: f64) -> Result<f64> {
        match self {
            Kernel::SelfSimilar(p) => Ok(p.cdf(y / x)),
            Kernel::General(_) => {
                if y <= 0.0 {
                    return Ok(0.0);
                }
                if y >= x {
                    return Ok(1.0);
                }
                let total = self.mass_between(x, 0.0, x)?;
                Ok(self.mass_between(x, 0.0, y)? / total)
            }
        }
    }

    /// Fragment size for parent `x` driven by a uniform variate `u`.
    pub fn sample(&self, x: f64, u: f64) -> f64 {
        let z = match self {
            Kernel::SelfSimilar(p) => p.quantile(u),
            Kernel::General(g) => {
                let (i, w) = g.locate(x);
                let a = g.table_quantile(i, u);
                let b = g.table_quantile(i + 1, u);
                a + w * (b - a)
            }
        };
        let y = x * z;
        // Keep the draw strictly inside (0, x).
        if y >= x {
            x * (1.0 - f64::EPSILON)
        } else if y <= 0.0 {
            x * f64::MIN_POSITIVE
        } else {
            y
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_binary_moments() {
        let p = Profile::uniform_binary();
        assert_eq!(p.moment(0.0).unwrap(), 2.0);
        assert_eq!(p.moment(1.0).unwrap(), 1.0);
        assert!((p.moment(-0.5).unwrap() - 4.0).abs() < 1e-14);
        assert!(matches!(p.moment(-1.0), Err(Error::InfiniteMoment { .. })));
        let t = MomentTable::new(&p, &[-0.5, 0.0, 0.5, 1.0, 2.0]).unwrap();
        assert!(t.is_strictly_decreasing());
    }

    #[test]
    fn linear_profile_matches_power_profile() {
        let lin = Profile::tabulated(vec![0.0, 0.5, 1.0], vec![2.0, 2.0, 2.0]).unwrap();
        let pow = Profile::uniform_binary();
        for r in [0.0, 0.5, 1.0, 3.0, -0.5] {
            assert!((lin.moment(r).unwrap() - pow.moment(r).unwrap()).abs() < 1e-13);
        }
        for u in [0.01, 0.3, 0.77] {
            assert!((lin.quantile(u) - u).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_profile_quantile_inverts_cdf() {
        let p = Profile::tabulated(vec![0.0, 0.3, 1.0], vec![0.0, 4.0, 1.0]).unwrap();
        for u in [0.05, 0.2, 0.5, 0.9, 0.999] {
            let z = p.quantile(u);
            assert!((p.cdf(z) - u).abs() < 1e-12, "u={u} z={z}");
        }
        assert_eq!(p.exponent_at_zero(), 1.0);
    }

    #[test]
    fn general_kernel_reproduces_self_similar() {
        let dens: KernelDensity = Arc::new(|x: f64, y: f64| if y < x { 2.0 / x } else { 0.0 });
        let k = Kernel::general(dens, 1e-2, 1e2).unwrap();
        assert!((k.number(3.0) - 2.0).abs() < 1e-9);
        for u in [0.1, 0.5, 0.9] {
            assert!((k.sample(3.0, u) - 3.0 * u).abs() < 1e-3);
        }
        let m = k.integrate_against(2.0, |y| y).unwrap();
        assert!((m - 2.0).abs() < 1e-9);
    }
}
