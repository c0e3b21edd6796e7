use crate::error::{Error, Result};
use crate::numerics::Pchip;

/// Growth speed `tau(x)` of a particle of mass `x`.
#[derive(Debug, Clone, PartialEq)]
pub enum GrowthRate {
    Constant(f64),
    /// `intercept + slope * x`
    Affine { intercept: f64, slope: f64 },
    /// `coeff * x^exponent`
    PowerLaw { coeff: f64, exponent: f64 },
    /// Monotone cubic through `(ln x, ln tau)` knots. Constant below the first
    /// knot and a power law (last log-log slope) above the last one.
    Tabulated(LogLogTable),
    Sum(Vec<GrowthRate>),
    Scaled { factor: f64, inner: Box<GrowthRate> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogLogTable {
    interp: Pchip,
}

impl LogLogTable {
    pub fn new(xs: &[f64], values: &[f64]) -> Result<Self> {
        if xs.iter().chain(values).any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("tabulated growth knots and values must be positive"));
        }
        let lx = xs.iter().map(|x| x.ln()).collect();
        let ly = values.iter().map(|y| y.ln()).collect();
        Ok(Self { interp: Pchip::new(lx, ly)? })
    }

    fn eval(&self, x: f64) -> f64 {
        let (lx0, ly0) = self.interp.first();
        if x <= 0.0 || x.ln() <= lx0 {
            return ly0.exp();
        }
        let (lx1, ly1) = self.interp.last();
        let lx = x.ln();
        if lx >= lx1 {
            return (ly1 + self.tail_exponent() * (lx - lx1)).exp();
        }
        self.interp.eval_clamped(lx).exp()
    }

    fn tail_exponent(&self) -> f64 {
        self.interp.last_slope()
    }

    pub fn knots(&self) -> (Vec<f64>, Vec<f64>) {
        let (lx, ly) = self.interp.knots();
        (lx.iter().map(|v| v.exp()).collect(), ly.iter().map(|v| v.exp()).collect())
    }
}

impl GrowthRate {
    pub fn affine(intercept: f64, slope: f64) -> Self {
        GrowthRate::Affine { intercept, slope }
    }

    pub fn power_law(coeff: f64, exponent: f64) -> Self {
        GrowthRate::PowerLaw { coeff, exponent }
    }

    pub fn tabulated(xs: &[f64], values: &[f64]) -> Result<Self> {
        Ok(GrowthRate::Tabulated(LogLogTable::new(xs, values)?))
    }

    pub fn scaled(self, factor: f64) -> Self {
        GrowthRate::Scaled { factor, inner: Box::new(self) }
    }

    /// Rejects parameter combinations that cannot give a positive rate.
    pub fn check_parameters(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::invalid(format!("growth rate: {what}")));
        match self {
            GrowthRate::Constant(c) if !(*c > 0.0 && c.is_finite()) => bad("constant must be positive"),
            GrowthRate::Affine { intercept, slope } => {
                if !(*intercept >= 0.0 && *slope >= 0.0) || !(intercept.is_finite() && slope.is_finite()) {
                    bad("affine intercept and slope must be non-negative")
                } else if *intercept == 0.0 && *slope == 0.0 {
                    bad("affine rate is identically zero")
                } else {
                    Ok(())
                }
            }
            GrowthRate::PowerLaw { coeff, exponent } => {
                if !(*coeff > 0.0 && coeff.is_finite() && exponent.is_finite()) {
                    bad("power-law coefficient must be positive")
                } else {
                    Ok(())
                }
            }
            GrowthRate::Sum(terms) => {
                if terms.is_empty() {
                    return bad("empty sum");
                }
                terms.iter().try_for_each(|t| t.check_parameters())
            }
            GrowthRate::Scaled { factor, inner } => {
                if !(*factor > 0.0 && factor.is_finite()) {
                    return bad("scale factor must be positive");
                }
                inner.check_parameters()
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            GrowthRate::Constant(c) => *c,
            GrowthRate::Affine { intercept, slope } => intercept + slope * x,
            GrowthRate::PowerLaw { coeff, exponent } => {
                if *exponent == 0.0 {
                    *coeff
                } else {
                    coeff * x.powf(*exponent)
                }
            }
            GrowthRate::Tabulated(t) => t.eval(x),
            GrowthRate::Sum(terms) => terms.iter().map(|t| t.eval(x)).sum(),
            GrowthRate::Scaled { factor, inner } => factor * inner.eval(x),
        }
    }

    /// `gamma` such that `tau(x) ~ x^gamma` as `x -> 0`.
    pub fn exponent_at_zero(&self) -> f64 {
        match self {
            GrowthRate::Constant(_) | GrowthRate::Tabulated(_) => 0.0,
            GrowthRate::Affine { intercept, .. } => {
                if *intercept > 0.0 {
                    0.0
                } else {
                    1.0
                }
            }
            GrowthRate::PowerLaw { exponent, .. } => *exponent,
            GrowthRate::Sum(terms) => terms.iter().map(|t| t.exponent_at_zero()).fold(f64::INFINITY, f64::min),
            GrowthRate::Scaled { inner, .. } => inner.exponent_at_zero(),
        }
    }

    /// `gamma` such that `tau(x) ~ x^gamma` as `x -> infinity`.
    pub fn exponent_at_infinity(&self) -> f64 {
        match self {
            GrowthRate::Constant(_) => 0.0,
            GrowthRate::Affine { slope, .. } => {
                if *slope > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            GrowthRate::PowerLaw { exponent, .. } => *exponent,
            GrowthRate::Tabulated(t) => t.tail_exponent(),
            GrowthRate::Sum(terms) => terms
                .iter()
                .map(|t| t.exponent_at_infinity())
                .fold(f64::NEG_INFINITY, f64::max),
            GrowthRate::Scaled { inner, .. } => inner.exponent_at_infinity(),
        }
    }

    /// `lim_{x -> infinity} tau(x) / x` when the family declares it.
    pub fn linear_slope_at_infinity(&self) -> Option<f64> {
        match self {
            GrowthRate::Constant(_) => Some(0.0),
            GrowthRate::Affine { slope, .. } => Some(*slope),
            GrowthRate::PowerLaw { coeff, exponent } => {
                if *exponent < 1.0 {
                    Some(0.0)
                } else if *exponent == 1.0 {
                    Some(*coeff)
                } else {
                    Some(f64::INFINITY)
                }
            }
            GrowthRate::Tabulated(t) => {
                let e = t.tail_exponent();
                if e < 1.0 - 1e-12 {
                    Some(0.0)
                } else if e > 1.0 + 1e-12 {
                    Some(f64::INFINITY)
                } else {
                    None
                }
            }
            GrowthRate::Sum(terms) => {
                let mut acc = 0.0;
                for t in terms {
                    acc += t.linear_slope_at_infinity()?;
                }
                Some(acc)
            }
            GrowthRate::Scaled { factor, inner } => inner.linear_slope_at_infinity().map(|s| s * factor),
        }
    }

    /// Closed-form travel time `int_x^y dz / tau(z)`, when the family has one.
    pub fn travel_closed_form(&self, x: f64, y: f64) -> Option<Result<f64>> {
        match self {
            GrowthRate::Constant(c) => Some(Ok((y - x) / c)),
            GrowthRate::Affine { intercept, slope } => {
                let (c, m) = (*intercept, *slope);
                if m == 0.0 {
                    return Some(Ok((y - x) / c));
                }
                let base = c + m * x;
                if base == 0.0 {
                    return Some(Err(Error::Divergent { exponent: 1.0 }));
                }
                Some(Ok((m * (y - x) / base).ln_1p() / m))
            }
            GrowthRate::PowerLaw { coeff, exponent } => {
                let g = *exponent;
                if g == 1.0 {
                    if x == 0.0 {
                        return Some(Err(Error::Divergent { exponent: g }));
                    }
                    return Some(Ok((y / x).ln() / coeff));
                }
                if x == 0.0 && g > 1.0 {
                    return Some(Err(Error::Divergent { exponent: g }));
                }
                let e = 1.0 - g;
                let value = if x > 0.0 {
                    // x^e * ((y/x)^e - 1) keeps precision when y is close to x
                    x.powf(e) * (e * (y / x).ln()).exp_m1() / (e * coeff)
                } else {
                    y.powf(e) / (e * coeff)
                };
                Some(Ok(value))
            }
            GrowthRate::Scaled { factor, inner } => inner.travel_closed_form(x, y).map(|r| r.map(|v| v / factor)),
            GrowthRate::Tabulated(_) | GrowthRate::Sum(_) => None,
        }
    }

    /// Closed-form flow `phi(t, x)`, when the family has one. Returns
    /// `f64::INFINITY` on finite-time blow-up.
    pub fn flow_closed_form(&self, x: f64, t: f64) -> Option<f64> {
        match self {
            GrowthRate::Constant(c) => Some(x + c * t),
            GrowthRate::Affine { intercept, slope } => {
                let (c, m) = (*intercept, *slope);
                if m == 0.0 {
                    Some(x + c * t)
                } else {
                    Some(x + (c + m * x) * (m * t).exp_m1() / m)
                }
            }
            GrowthRate::PowerLaw { coeff, exponent } => {
                let g = *exponent;
                if g == 1.0 {
                    return Some(x * (coeff * t).exp());
                }
                let e = 1.0 - g;
                let base = if x > 0.0 { x.powf(e) } else { 0.0 };
                if x == 0.0 && e < 0.0 {
                    return Some(0.0);
                }
                let inside = base + e * coeff * t;
                if inside <= 0.0 {
                    return Some(f64::INFINITY);
                }
                if x > 0.0 {
                    // x * (1 + e c t / x^e)^(1/e)
                    let v = x * ((e * coeff * t / base).ln_1p() / e).exp();
                    Some(v)
                } else {
                    Some(inside.powf(1.0 / e))
                }
            }
            GrowthRate::Scaled { factor, inner } => inner.flow_closed_form(x, factor * t),
            GrowthRate::Tabulated(_) | GrowthRate::Sum(_) => None,
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            GrowthRate::Constant(_) => "constant",
            GrowthRate::Affine { .. } => "affine",
            GrowthRate::PowerLaw { .. } => "power_law",
            GrowthRate::Tabulated(_) => "tabulated",
            GrowthRate::Sum(_) => "sum",
            GrowthRate::Scaled { .. } => "scaled",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_closed_forms_agree() {
        let g = GrowthRate::affine(1.0, 1.0);
        let s = g.travel_closed_form(0.0, 1.0).unwrap().unwrap();
        assert!((s - std::f64::consts::LN_2).abs() < 1e-15);
        let y = g.flow_closed_form(0.0, std::f64::consts::LN_2).unwrap();
        assert!((y - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sqrt_growth_closed_forms() {
        let g = GrowthRate::power_law(1.0, 0.5);
        assert!((g.travel_closed_form(0.0, 1.0).unwrap().unwrap() - 2.0).abs() < 1e-15);
        assert!((g.flow_closed_form(0.0, 2.0).unwrap() - 1.0).abs() < 1e-15);
        let s = g.travel_closed_form(0.3, 0.7).unwrap().unwrap();
        assert!((g.flow_closed_form(0.3, s).unwrap() - 0.7).abs() < 1e-14);
    }

    #[test]
    fn superlinear_power_blows_up() {
        let g = GrowthRate::power_law(1.0, 2.0);
        assert!(g.flow_closed_form(1.0, 1.5).unwrap().is_infinite());
        assert!(matches!(g.travel_closed_form(0.0, 1.0), Some(Err(Error::Divergent { .. }))));
    }

    #[test]
    fn tabulated_tail_follows_last_slope() {
        let g = GrowthRate::tabulated(&[1.0, 2.0, 4.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((g.eval(8.0) - 8.0).abs() < 1e-12);
        assert!((g.eval(0.1) - 1.0).abs() < 1e-12);
        assert_eq!(g.exponent_at_zero(), 0.0);
    }
}
