//! Coefficients of the growth-fragmentation equation, the deterministic flow
//! between jumps, and checks of the standing assumptions.

mod growth;
mod kernel;
mod potential;
mod rate;
mod validate;

pub mod config;

use std::sync::Arc;

pub use growth::{GrowthRate, LogLogTable};
pub use kernel::{GeneralKernel, Kernel, KernelDensity, LinearProfile, MomentTable, Profile};
pub use config::{load_config, parse_config, LoadedConfig, RunConfig};
pub use rate::FragRate;
pub use validate::{validate, CheckStatus, ValidationEntry, ValidationReport};

use crate::error::{Error, Result};
use potential::{Integrand, Potential, PotentialTable};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSettings {
    /// Relative tolerance for adaptive quadrature.
    pub rel_tol: f64,
    /// Lower edge of the tabulated potentials; below it a local power law is used.
    pub mass_floor: f64,
    /// Masses beyond this are reported as overflow.
    pub mass_ceiling: f64,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        Self { rel_tol: 1e-10, mass_floor: 1e-10, mass_ceiling: 1e12 }
    }
}

/// Growth rate, fragmentation rate and kernel, plus the reference mass `x0`.
#[derive(Debug, Clone)]
pub struct CoefficientModel {
    growth: GrowthRate,
    rate: FragRate,
    kernel: Kernel,
    x0: f64,
    quadrature: QuadratureSettings,
    travel: Option<PotentialTable>,
    hazard: Potential,
    log_weight: Potential,
}

impl CoefficientModel {
    pub fn new(growth: GrowthRate, rate: FragRate, kernel: Kernel, x0: f64) -> Result<Self> {
        Self::with_quadrature(growth, rate, kernel, x0, QuadratureSettings::default())
    }

    pub fn with_quadrature(
        growth: GrowthRate,
        rate: FragRate,
        kernel: Kernel,
        x0: f64,
        quadrature: QuadratureSettings,
    ) -> Result<Self> {
        growth.check_parameters()?;
        rate.check_parameters()?;
        kernel.check_parameters()?;
        if !(x0 > 0.0 && x0.is_finite()) {
            return Err(Error::invalid("reference mass x0 must be positive"));
        }
        let q = quadrature;
        if !(q.rel_tol > 0.0 && q.mass_floor > 0.0 && q.mass_ceiling > q.mass_floor * 10.0) {
            return Err(Error::invalid("quadrature settings must be positive with floor << ceiling"));
        }
        let travel = if growth.travel_closed_form(1.0, 2.0).is_some() {
            None
        } else {
            let g = growth.clone();
            let f: Integrand = Arc::new(move |z| 1.0 / g.eval(z));
            Some(PotentialTable::new(f, q.mass_floor, q.mass_ceiling, Some(-growth.exponent_at_zero())))
        };
        let constant_b = rate.constant_value();
        let constant_n = kernel.constant_number();
        let build = |offset: f64| -> Potential {
            if let (Some(b), Some(n)) = (constant_b, constant_n) {
                let c = b * (n - offset);
                return if c == 0.0 { Potential::Zero } else { Potential::TravelScaled(c) };
            }
            let (g, r, k) = (growth.clone(), rate.clone(), kernel.clone());
            let f: Integrand = Arc::new(move |z| (r.eval(z) * (k.number(z) - offset)).max(0.0) / g.eval(z));
            Potential::Table(PotentialTable::new(f, q.mass_floor, q.mass_ceiling, None))
        };
        let hazard = build(0.0);
        let log_weight = build(1.0);
        Ok(Self { growth, rate, kernel, x0, quadrature, travel, hazard, log_weight })
    }

    /// Same coefficients with a different reference mass.
    pub fn with_reference(&self, x0: f64) -> Result<Self> {
        if !(x0 > 0.0 && x0.is_finite()) {
            return Err(Error::invalid("reference mass x0 must be positive"));
        }
        let mut m = self.clone();
        m.x0 = x0;
        Ok(m)
    }

    pub fn growth(&self) -> &GrowthRate {
        &self.growth
    }

    pub fn rate(&self) -> &FragRate {
        &self.rate
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn quadrature(&self) -> QuadratureSettings {
        self.quadrature
    }

    pub fn tau(&self, x: f64) -> f64 {
        self.growth.eval(x)
    }

    pub fn frag_rate(&self, x: f64) -> f64 {
        self.rate.eval(x)
    }

    pub fn number(&self, x: f64) -> f64 {
        self.kernel.number(x)
    }

    /// Total jump rate `B(x) N(x)`.
    pub fn jump_rate(&self, x: f64) -> f64 {
        self.rate.eval(x) * self.kernel.number(x)
    }

    /// `g(x) = B(x) (N(x) - 1)`, the Feynman-Kac potential.
    pub fn g(&self, x: f64) -> f64 {
        self.rate.eval(x) * (self.kernel.number(x) - 1.0)
    }

    /// Upper bound for `sup B N`.
    pub fn jump_rate_bound(&self) -> f64 {
        self.rate.sup_bound() * self.kernel.number_sup()
    }

    /// Upper bound for `sup g`; exact for constant coefficients.
    pub fn g_bound(&self) -> f64 {
        if let (Some(b), Some(n)) = (self.rate.constant_value(), self.kernel.constant_number()) {
            return b * (n - 1.0);
        }
        self.rate.sup_bound() * (self.kernel.number_sup() - 1.0).max(0.0)
    }

    /// `B (N - 1)` when both are constant.
    pub fn constant_g(&self) -> Option<f64> {
        Some(self.rate.constant_value()? * (self.kernel.constant_number()? - 1.0))
    }

    /// Travel time `s(x, y) = int_x^y dz / tau(z)` for `0 <= x <= y`.
    pub fn travel_time(&self, x: f64, y: f64) -> Result<f64> {
        if !(x >= 0.0 && y >= x) {
            return Err(Error::invalid(format!("travel_time needs 0 <= x <= y, got x = {x}, y = {y}")));
        }
        if y == x {
            return Ok(0.0);
        }
        let s = match &self.travel {
            None => self.growth.travel_closed_form(x, y).expect("closed-form family")?,
            Some(t) => t.integral(x, y),
        };
        if s.is_finite() {
            Ok(s)
        } else {
            Err(Error::Divergent { exponent: self.growth.exponent_at_zero() })
        }
    }

    /// `phi(t, x)`: the mass reached from `x` after flowing for `t`.
    pub fn flow(&self, x: f64, t: f64) -> Result<f64> {
        if !(x >= 0.0 && t >= 0.0 && t.is_finite()) {
            return Err(Error::invalid(format!("flow needs x >= 0 and finite t >= 0, got x = {x}, t = {t}")));
        }
        if t == 0.0 {
            return Ok(x);
        }
        let y = match &self.travel {
            None => self.growth.flow_closed_form(x, t).expect("closed-form family"),
            Some(table) => {
                if x == 0.0 && !table.finite_at_zero() {
                    return Ok(0.0);
                }
                table.inverse(x, t).unwrap_or(f64::INFINITY)
            }
        };
        if !(y <= self.quadrature.mass_ceiling) {
            return Err(Error::Overflow { mass: y, ceiling: self.quadrature.mass_ceiling });
        }
        Ok(y)
    }

    fn potential_between(&self, p: &Potential, x: f64, y: f64) -> Result<f64> {
        match p {
            Potential::Zero => Ok(0.0),
            Potential::TravelScaled(c) => Ok(c * self.travel_time(x, y)?),
            Potential::Table(t) => Ok(t.integral(x, y)),
        }
    }

    /// Cumulative jump hazard `int_x^y B N / tau` accumulated while flowing
    /// from `x` to `y`.
    pub fn hazard_between(&self, x: f64, y: f64) -> Result<f64> {
        self.potential_between(&self.hazard, x, y)
    }

    /// `int_x^y B (N - 1) / tau`, the log Feynman-Kac weight gained while
    /// flowing from `x` to `y`.
    pub fn log_weight_between(&self, x: f64, y: f64) -> Result<f64> {
        self.potential_between(&self.log_weight, x, y)
    }

    /// Mass at which the cumulative hazard from `x` reaches `e`; `None` when
    /// the flow passes the mass ceiling first (or the hazard stays below `e`).
    pub fn hazard_inverse(&self, x: f64, e: f64) -> Result<Option<f64>> {
        let y = match &self.hazard {
            Potential::Zero => return Ok(None),
            Potential::TravelScaled(c) => match self.flow(x, e / c) {
                Ok(y) => Some(y),
                Err(Error::Overflow { .. }) => None,
                Err(err) => return Err(err),
            },
            Potential::Table(t) => t.inverse(x, e),
        };
        Ok(y.filter(|y| *y <= self.quadrature.mass_ceiling))
    }

    /// Whether jumps happen at a constant rate along the flow.
    pub fn has_constant_jump_rate(&self) -> bool {
        matches!(self.hazard, Potential::Zero | Potential::TravelScaled(_))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn benchmark(growth: GrowthRate) -> CoefficientModel {
        CoefficientModel::new(growth, FragRate::Constant(1.0), Kernel::self_similar(Profile::uniform_binary()), 1.0)
            .unwrap()
    }

    #[test]
    fn flow_examples() {
        let m = benchmark(GrowthRate::Constant(1.0));
        assert_eq!(m.flow(0.0, 1.0).unwrap(), 1.0);
        let m = benchmark(GrowthRate::affine(1.0, 1.0));
        assert!((m.flow(0.0, std::f64::consts::LN_2).unwrap() - 1.0).abs() < 1e-14);
        let m = benchmark(GrowthRate::power_law(1.0, 0.5));
        assert!((m.flow(0.0, 2.0).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn travel_time_examples() {
        assert_eq!(benchmark(GrowthRate::Constant(1.0)).travel_time(0.0, 1.0).unwrap(), 1.0);
        let s = benchmark(GrowthRate::power_law(1.0, 0.5)).travel_time(0.0, 1.0).unwrap();
        assert!((s - 2.0).abs() < 1e-14);
        let s = benchmark(GrowthRate::affine(1.0, 1.0)).travel_time(0.0, 1.0).unwrap();
        assert!((s - std::f64::consts::LN_2).abs() < 1e-14);
        let lin = benchmark(GrowthRate::power_law(1.0, 1.0));
        assert!(matches!(lin.travel_time(0.0, 1.0), Err(Error::Divergent { .. })));
    }

    #[test]
    fn tabulated_flow_matches_closed_form() {
        let xs: Vec<f64> = crate::numerics::geomspace(1e-3, 1e3, 61);
        let taus: Vec<f64> = xs.iter().map(|x| 1.0 + x).collect();
        let tab = benchmark(GrowthRate::tabulated(&xs, &taus).unwrap());
        let exact = benchmark(GrowthRate::affine(1.0, 1.0));
        for (x, y) in [(0.5, 2.0), (3.0, 40.0), (10.0, 10.5)] {
            let a = tab.travel_time(x, y).unwrap();
            let b = exact.travel_time(x, y).unwrap();
            assert!((a - b).abs() / b < 1e-4, "{x} {y}: {a} vs {b}");
            let back = tab.flow(x, a).unwrap();
            assert!((back - y).abs() / y < 1e-10);
        }
    }

    #[test]
    fn constant_hazard_is_scaled_travel_time() {
        let m = benchmark(GrowthRate::affine(1.0, 0.5));
        let s = m.travel_time(1.0, 3.0).unwrap();
        assert!((m.hazard_between(1.0, 3.0).unwrap() - 2.0 * s).abs() < 1e-14);
        assert!((m.log_weight_between(1.0, 3.0).unwrap() - s).abs() < 1e-14);
        let y = m.hazard_inverse(1.0, 2.0 * s).unwrap().unwrap();
        assert!((y - 3.0).abs() < 1e-12);
    }

    #[test]
    fn variable_hazard_matches_quadrature() {
        let m = CoefficientModel::new(
            GrowthRate::affine(1.0, 0.5),
            FragRate::hyperbolic(1.0, 2.0, 1.0),
            Kernel::self_similar(Profile::uniform_binary()),
            1.0,
        )
        .unwrap();
        let f = |z: f64| 2.0 * (1.0 + 1.0 / (1.0 + z)) / (1.0 + 0.5 * z);
        let (exact, _) = crate::numerics::integrate(f, 0.2, 7.0, 1e-13).unwrap();
        let h = m.hazard_between(0.2, 7.0).unwrap();
        assert!((h - exact).abs() / exact < 1e-10, "{h} vs {exact}");
        let y = m.hazard_inverse(0.2, exact).unwrap().unwrap();
        assert!((y - 7.0).abs() < 1e-9);
    }
}
