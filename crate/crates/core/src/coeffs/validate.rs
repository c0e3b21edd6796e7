use serde::Serialize;

use super::CoefficientModel;
use crate::error::Error;
use crate::numerics::geomspace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationEntry {
    pub id: &'static str,
    pub status: CheckStatus,
    /// A failure of a hard check puts the model outside the supported regime.
    pub hard: bool,
    /// Checked on a finite grid only.
    pub sampled: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_nodes: usize,
    pub entries: Vec<ValidationEntry>,
}

impl ValidationReport {
    pub fn hard_failure(&self) -> bool {
        self.entries.iter().any(|e| e.hard && e.status == CheckStatus::Fail)
    }

    pub fn entry(&self, id: &str) -> Option<&ValidationEntry> {
        self.entries.iter().find(|e| e.id == id)
    }
}

fn entry(id: &'static str, status: CheckStatus, hard: bool, sampled: bool, detail: String) -> ValidationEntry {
    ValidationEntry { id, status, hard, sampled, detail }
}

fn pass_fail(ok: bool) -> CheckStatus {
    if ok {
        CheckStatus::Pass
    } else {
        CheckStatus::Fail
    }
}

/// Checks the standing assumptions on a geometric grid spanning twelve
/// decades around `x0`. Never errors: problems become report entries.
pub fn validate(model: &CoefficientModel) -> ValidationReport {
    let x0 = model.x0();
    let (lo, hi) = (x0 * 1e-6, x0 * 1e6);
    let grid = geomspace(lo, hi, 121);
    let mut entries = Vec::new();

    let bad_tau = grid.iter().find(|&&x| !(model.tau(x) > 0.0 && model.tau(x).is_finite()));
    entries.push(entry(
        "growth_positive",
        pass_fail(bad_tau.is_none()),
        true,
        true,
        match bad_tau {
            Some(x) => format!("tau({x:e}) = {:e}", model.tau(*x)),
            None => "tau > 0 at every grid node".into(),
        },
    ));

    let tau0 = model.tau(0.0);
    entries.push(entry(
        "growth_positive_at_zero",
        if tau0 > 0.0 && tau0.is_finite() { CheckStatus::Pass } else { CheckStatus::Inconclusive },
        false,
        false,
        format!("tau(0) = {tau0:e}; the simulator only needs the entrance time from 0 to be finite"),
    ));

    let rates: Vec<f64> = grid.iter().map(|&x| model.frag_rate(x)).collect();
    let rate_ok = rates.iter().all(|b| *b >= 0.0 && b.is_finite());
    let rate_max = rates.iter().cloned().fold(0.0, f64::max);
    entries.push(entry(
        "rate_bounded",
        pass_fail(rate_ok && rate_max <= model.rate().sup_bound() * (1.0 + 1e-12)),
        true,
        true,
        format!("sampled max B = {rate_max:e}, declared bound {:e}", model.rate().sup_bound()),
    ));

    let numbers: Vec<f64> = grid.iter().map(|&x| model.number(x)).collect();
    let n_min = numbers.iter().cloned().fold(f64::INFINITY, f64::min);
    let n_max = numbers.iter().cloned().fold(0.0, f64::max);
    entries.push(entry(
        "number_at_least_one_and_bounded",
        pass_fail(n_min >= 1.0 - 1e-9 && n_max.is_finite()),
        true,
        true,
        format!("N ranges over [{n_min:.6}, {n_max:.6}] on the grid"),
    ));

    let jr_max = grid.iter().map(|&x| model.jump_rate(x)).fold(0.0, f64::max);
    entries.push(entry(
        "jump_rate_bounded",
        pass_fail(jr_max.is_finite() && jr_max <= model.jump_rate_bound() * (1.0 + 1e-9)),
        true,
        true,
        format!("sampled max BN = {jr_max:e}, bound {:e}", model.jump_rate_bound()),
    ));

    let g0 = model.growth().exponent_at_zero();
    let entrance = model.travel_time(0.0, x0);
    let (status, detail) = match entrance {
        Ok(t) if g0 < 1.0 => (CheckStatus::Pass, format!("travel time from 0 to x0 = {t:.6e}")),
        Ok(t) => (CheckStatus::Fail, format!("declared exponent {g0} at 0 but quadrature gave {t:e}")),
        Err(Error::Divergent { exponent }) => {
            (CheckStatus::Fail, format!("int_0 dx / tau diverges (tau ~ x^{exponent} at 0)"))
        }
        Err(e) => (CheckStatus::Inconclusive, e.to_string()),
    };
    entries.push(entry("entrance_time_finite", status, true, false, detail));

    let ginf = model.growth().exponent_at_infinity();
    let far = model.quadrature().mass_ceiling;
    let tail = model.travel_time(1.0, far);
    let status = if ginf > 1.0 {
        CheckStatus::Fail
    } else if ginf < 1.0 || (ginf - 1.0).abs() < 1e-12 {
        CheckStatus::Pass
    } else {
        CheckStatus::Inconclusive
    };
    entries.push(entry(
        "no_explosion",
        status,
        true,
        false,
        match tail {
            Ok(t) => format!("tau ~ x^{ginf} at infinity; travel time from 1 to {far:e} = {t:.6e}"),
            Err(e) => format!("tau ~ x^{ginf} at infinity; {e}"),
        },
    ));

    entries.push(irreducibility(model, &grid));
    entries.push(vague_convergence(model));

    ValidationReport { grid_min: lo, grid_max: hi, grid_nodes: grid.len(), entries }
}

/// For each node `x`, look for `alpha < x < beta` (from the grid) with
/// `int_alpha^x k(beta, y) dy > 0`.
fn irreducibility(model: &CoefficientModel, grid: &[f64]) -> ValidationEntry {
    let kernel = model.kernel();
    let alpha = grid[0] * 1e-3;
    let mut failures = Vec::new();
    for (i, &x) in grid.iter().enumerate() {
        let found = grid[i + 1..]
            .iter()
            .take(40)
            .chain(std::iter::once(&(x * 1e4)))
            .any(|&beta| matches!(kernel.mass_between(beta, alpha, x), Ok(m) if m > 0.0));
        if !found {
            failures.push(x);
        }
    }
    entry(
        "irreducibility",
        pass_fail(failures.is_empty()),
        true,
        true,
        if failures.is_empty() {
            format!("positive kernel mass found below every one of {} grid nodes", grid.len())
        } else {
            format!("no positive kernel mass below {} grid nodes, first at {:e}", failures.len(), failures[0])
        },
    )
}

/// `B(x) int_E k(x, y) dy -> 0` along a geometric sequence, `E = [0, 10 x0]`.
fn vague_convergence(model: &CoefficientModel) -> ValidationEntry {
    let e_max = 10.0 * model.x0();
    let ceiling = model.quadrature().mass_ceiling;
    let mut values = Vec::new();
    let mut x = e_max * 10.0;
    while x <= ceiling {
        let v = model.kernel().mass_between(x, 0.0, e_max).unwrap_or(f64::NAN) * model.frag_rate(x);
        values.push(v);
        x *= 10.0;
    }
    let first = values.first().cloned().unwrap_or(0.0);
    let last = values.last().cloned().unwrap_or(0.0);
    let decaying = values.iter().all(|v| v.is_finite()) && (last == 0.0 || last <= 1e-3 * first);
    entry(
        "vague_convergence",
        if decaying { CheckStatus::Pass } else { CheckStatus::Inconclusive },
        false,
        true,
        format!("B(x) k(x, [0, {e_max:e}]) falls from {first:e} to {last:e} over {} decades", values.len()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{FragRate, GrowthRate, Kernel, Profile};

    fn model(growth: GrowthRate) -> CoefficientModel {
        CoefficientModel::new(growth, FragRate::Constant(1.0), Kernel::self_similar(Profile::uniform_binary()), 1.0)
            .unwrap()
    }

    #[test]
    fn benchmark_passes_everything() {
        let r = validate(&model(GrowthRate::affine(1.0, 1.0)));
        assert!(r.entries.iter().all(|e| e.status == CheckStatus::Pass), "{r:#?}");
        assert!(!r.hard_failure());
    }

    #[test]
    fn linear_growth_fails_entrance() {
        let r = validate(&model(GrowthRate::power_law(1.0, 1.0)));
        assert_eq!(r.entry("entrance_time_finite").unwrap().status, CheckStatus::Fail);
        assert!(r.hard_failure());
    }

    #[test]
    fn quadratic_growth_explodes() {
        let r = validate(&model(GrowthRate::power_law(1.0, 2.0)));
        assert_eq!(r.entry("no_explosion").unwrap().status, CheckStatus::Fail);
        assert!(r.hard_failure());
    }
}
