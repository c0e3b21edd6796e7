use crate::error::{Error, Result};
use crate::numerics::Pchip;

/// Fragmentation rate `B(x)`: bounded, continuous, non-negative.
#[derive(Debug, Clone, PartialEq)]
pub enum FragRate {
    Constant(f64),
    /// `limit + (at_zero - limit) / (1 + x / scale)`; equals `at_zero` at the
    /// origin and tends to `limit`.
    Hyperbolic { limit: f64, at_zero: f64, scale: f64 },
    /// Monotone cubic in `ln x`, flat outside the knot range.
    Tabulated(Pchip),
    Sum(Vec<FragRate>),
    Scaled { factor: f64, inner: Box<FragRate> },
}

impl FragRate {
    pub fn hyperbolic(limit: f64, at_zero: f64, scale: f64) -> Self {
        FragRate::Hyperbolic { limit, at_zero, scale }
    }

    pub fn tabulated(xs: &[f64], values: &[f64]) -> Result<Self> {
        if xs.iter().any(|x| !(*x > 0.0)) {
            return Err(Error::invalid("tabulated rate knots must be positive"));
        }
        let lx = xs.iter().map(|x| x.ln()).collect();
        Ok(FragRate::Tabulated(Pchip::new(lx, values.to_vec())?))
    }

    pub fn check_parameters(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::invalid(format!("fragmentation rate: {what}")));
        match self {
            FragRate::Constant(c) if !(*c >= 0.0 && c.is_finite()) => bad("constant must be non-negative"),
            FragRate::Hyperbolic { limit, at_zero, scale } => {
                if !(*limit >= 0.0 && *at_zero >= 0.0 && *scale > 0.0)
                    || !(limit.is_finite() && at_zero.is_finite() && scale.is_finite())
                {
                    bad("hyperbolic parameters must be non-negative with a positive scale")
                } else {
                    Ok(())
                }
            }
            FragRate::Tabulated(p) => {
                if p.knots().1.iter().any(|v| *v < 0.0) {
                    bad("tabulated values must be non-negative")
                } else {
                    Ok(())
                }
            }
            FragRate::Sum(terms) => {
                if terms.is_empty() {
                    return bad("empty sum");
                }
                terms.iter().try_for_each(|t| t.check_parameters())
            }
            FragRate::Scaled { factor, inner } => {
                if !(*factor >= 0.0 && factor.is_finite()) {
                    return bad("scale factor must be non-negative");
                }
                inner.check_parameters()
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            FragRate::Constant(c) => *c,
            FragRate::Hyperbolic { limit, at_zero, scale } => limit + (at_zero - limit) / (1.0 + x / scale),
            FragRate::Tabulated(p) => {
                if x <= 0.0 {
                    p.first().1
                } else {
                    p.eval_clamped(x.ln()).max(0.0)
                }
            }
            FragRate::Sum(terms) => terms.iter().map(|t| t.eval(x)).sum(),
            FragRate::Scaled { factor, inner } => factor * inner.eval(x),
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match self {
            FragRate::Constant(c) => Some(*c),
            FragRate::Hyperbolic { limit, at_zero, .. } if limit == at_zero => Some(*limit),
            FragRate::Sum(terms) => terms.iter().map(|t| t.constant_value()).sum(),
            FragRate::Scaled { factor, inner } => inner.constant_value().map(|c| c * factor),
            _ => None,
        }
    }

    /// Declared `lim_{x -> infinity} B(x)`.
    pub fn limit_at_infinity(&self) -> f64 {
        match self {
            FragRate::Constant(c) => *c,
            FragRate::Hyperbolic { limit, .. } => *limit,
            FragRate::Tabulated(p) => p.last().1.max(0.0),
            FragRate::Sum(terms) => terms.iter().map(|t| t.limit_at_infinity()).sum(),
            FragRate::Scaled { factor, inner } => factor * inner.limit_at_infinity(),
        }
    }

    /// An upper bound for `sup_x B(x)`.
    pub fn sup_bound(&self) -> f64 {
        match self {
            FragRate::Constant(c) => *c,
            FragRate::Hyperbolic { limit, at_zero, .. } => limit.max(*at_zero),
            FragRate::Tabulated(p) => {
                // A monotone cubic never leaves the range of adjacent knots.
                p.knots().1.iter().cloned().fold(0.0, f64::max)
            }
            FragRate::Sum(terms) => terms.iter().map(|t| t.sup_bound()).sum(),
            FragRate::Scaled { factor, inner } => factor * inner.sup_bound(),
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            FragRate::Constant(_) => "constant",
            FragRate::Hyperbolic { .. } => "hyperbolic",
            FragRate::Tabulated(_) => "tabulated",
            FragRate::Sum(_) => "sum",
            FragRate::Scaled { .. } => "scaled",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hyperbolic_endpoints() {
        let b = FragRate::hyperbolic(1.0, 2.0, 1.0);
        assert_eq!(b.eval(0.0), 2.0);
        assert!((b.eval(1.0) - 1.5).abs() < 1e-15);
        assert_eq!(b.limit_at_infinity(), 1.0);
        assert_eq!(b.sup_bound(), 2.0);
        assert_eq!(b.constant_value(), None);
    }

    #[test]
    fn tabulated_is_flat_outside() {
        let b = FragRate::tabulated(&[1.0, 10.0], &[0.5, 2.0]).unwrap();
        assert_eq!(b.eval(0.01), 0.5);
        assert_eq!(b.eval(1e6), 2.0);
        assert_eq!(b.sup_bound(), 2.0);
    }
}
