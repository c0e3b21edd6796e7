//! Monte Carlo estimation of the Laplace transform of hitting times, the
//! Malthus exponent, the harmonic function `h` and the profile `nu`.

mod martingale;
mod occupation;

pub use martingale::{martingale_test, supermartingale_test, MartingaleReport, MartingaleRow};
pub use occupation::{crossing_profile, tilted_occupation, CrossingProfile, OccupationEstimate};

use serde::Serialize;

use crate::coeffs::CoefficientModel;
use crate::error::{Error, Result};
use crate::numerics::{self, mean_and_stderr, Pchip};
use crate::pdmp::{excursion_batch, ExcursionSample};

/// Stream tags, one per estimator, so that no two estimators share draws.
pub mod tags {
    pub const SOLVE: u16 = 1;
    pub const HARMONIC: u16 = 2;
    pub const DERIVATIVE: u16 = 3;
    pub const MARTINGALE: u16 = 4;
    pub const OCCUPATION: u16 = 5;
    pub const LAPLACE: u16 = 6;
    pub const SUPERMARTINGALE: u16 = 7;
    pub const HARMONIC_SHIFTED: u16 = 8;
    pub const CROSSING: u16 = 9;
}

/// Monte Carlo estimate of `L_{x,y}(q)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LaplaceEstimate {
    pub q: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub samples: usize,
    pub truncated: usize,
    /// Bound on the bias from excursions stopped at the horizon; only
    /// available when `q > sup g`.
    pub bias_bound: Option<f64>,
    /// No bias bound and more than half the excursions were stopped.
    pub truncation_dominated: bool,
}

/// A fixed set of excursions from `x` to `y`, re-weighted for every `q`
/// (common random numbers).
#[derive(Debug, Clone)]
pub struct ExcursionSet {
    pub x: f64,
    pub y: f64,
    pub horizon: f64,
    pub g_sup: f64,
    pub samples: Vec<ExcursionSample>,
}

impl ExcursionSet {
    #[allow(clippy::too_many_arguments)]
    pub fn simulate(
        model: &CoefficientModel,
        x: f64,
        y: f64,
        horizon: f64,
        n: usize,
        seed: u64,
        tag: u16,
        block: u16,
    ) -> Result<Self> {
        let samples = excursion_batch(model, x, y, horizon, seed, tag, block, 0, n)?;
        Ok(Self { x, y, horizon, g_sup: model.g_bound(), samples })
    }

    /// Appends `n` further excursions on the next stream indices.
    pub fn extend(&mut self, model: &CoefficientModel, n: usize, seed: u64, tag: u16, block: u16) -> Result<()> {
        let offset = self.samples.len() as u32;
        let more = excursion_batch(model, self.x, self.y, self.horizon, seed, tag, block, offset, n)?;
        self.samples.extend(more);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn hits(&self) -> usize {
        self.samples.iter().filter(|s| s.hit).count()
    }

    pub fn truncated(&self) -> usize {
        self.samples.iter().filter(|s| s.truncated).count()
    }

    /// Per-path weights `e^{-qH} E_H 1{hit}` in sample order.
    pub fn weights(&self, q: f64) -> Vec<f64> {
        self.samples.iter().map(|s| s.weight(q)).collect()
    }

    pub fn laplace(&self, q: f64) -> LaplaceEstimate {
        let (estimate, stderr) = mean_and_stderr(&self.weights(q));
        let n = self.samples.len();
        let truncated = self.truncated();
        let frac = truncated as f64 / n.max(1) as f64;
        let bias_bound = (q > self.g_sup).then(|| frac * (-(q - self.g_sup) * self.horizon).exp());
        LaplaceEstimate {
            q,
            estimate,
            stderr,
            samples: n,
            truncated,
            bias_bound,
            truncation_dominated: bias_bound.is_none() && 2 * truncated > n,
        }
    }

    /// `L'(q) = -E[H e^{-qH} E_H; hit]`, with its standard error.
    pub fn derivative(&self, q: f64) -> (f64, f64) {
        let v: Vec<f64> = self.samples.iter().map(|s| -s.weighted_time(q)).collect();
        mean_and_stderr(&v)
    }

    /// Largest single weight as a fraction of the total at `q`; near 1 means
    /// the estimate is carried by one path.
    pub fn max_weight_share(&self, q: f64) -> f64 {
        let w = self.weights(q);
        let total = numerics::pairwise_sum(&w);
        if total > 0.0 {
            w.iter().cloned().fold(0.0, f64::max) / total
        } else {
            0.0
        }
    }
}

/// `L_{x,y}(q)` from `n` fresh excursions.
#[allow(clippy::too_many_arguments)]
pub fn estimate_l(
    model: &CoefficientModel,
    x: f64,
    y: f64,
    q: f64,
    n: usize,
    horizon: f64,
    seed: u64,
) -> Result<LaplaceEstimate> {
    if n < 100 {
        return Err(Error::invalid("estimate_l needs at least 100 paths"));
    }
    Ok(ExcursionSet::simulate(model, x, y, horizon, n, seed, tags::LAPLACE, 0)?.laplace(q))
}

/// `L'_{x,x}(q)` from `n` fresh excursions, returned as (value, stderr, truncated count).
pub fn estimate_l_derivative(
    model: &CoefficientModel,
    x: f64,
    q: f64,
    n: usize,
    horizon: f64,
    seed: u64,
) -> Result<(f64, f64, usize)> {
    if n < 100 {
        return Err(Error::invalid("estimate_l_derivative needs at least 100 paths"));
    }
    let set = ExcursionSet::simulate(model, x, x, horizon, n, seed, tags::DERIVATIVE, 0)?;
    let (d, se) = set.derivative(q);
    Ok((d, se, set.truncated()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MalthusSettings {
    pub initial_paths: usize,
    /// Cap on the total number of excursions.
    pub budget: usize,
    pub horizon: f64,
    /// Target width of the bracket around the exponent.
    pub tolerance: f64,
    /// Normal quantile for confidence statements.
    pub confidence: f64,
    pub curve_points: usize,
    pub seed: u64,
}

impl Default for MalthusSettings {
    fn default() -> Self {
        Self {
            initial_paths: 20_000,
            budget: 400_000,
            horizon: 50.0,
            tolerance: 0.02,
            confidence: 3.0,
            curve_points: 21,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    BudgetExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Certificate {
    /// A probe below the exponent has `L` confidently in `(1, infinity)`.
    ExponentialCertified,
    /// Malthusian, rate uncertified.
    RateUncertified,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MalthusResult {
    pub x0: f64,
    pub lambda: f64,
    /// Bracket `[lo, hi]` with `L(lo)` confidently above 1 and `L(hi)` confidently below.
    pub ci: (f64, f64),
    pub status: SolveStatus,
    pub certificate: Certificate,
    pub samples: usize,
    pub hits: usize,
    pub truncated: usize,
    /// `L'(lambda)` and its standard error.
    pub derivative: (f64, f64),
    pub lower_probe: LaplaceEstimate,
    pub upper_probe: LaplaceEstimate,
    pub curve: Vec<LaplaceEstimate>,
}

impl MalthusResult {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci.1 - self.ci.0)
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.ci.0 && value <= self.ci.1
    }
}

fn confidently_above(e: &LaplaceEstimate, z: f64) -> bool {
    e.estimate - z * e.stderr > 1.0
}

fn confidently_below(e: &LaplaceEstimate, z: f64) -> bool {
    e.estimate + z * e.stderr < 1.0
}

/// Searches downward from `start_lo` and upward from `start_hi` for a
/// bracket. Errors with `NoBracket` when no probe is confidently above 1.
fn find_bracket(set: &ExcursionSet, z: f64, start_lo: f64, start_hi: f64, floor: f64) -> Result<(f64, f64)> {
    let mut hi = start_hi;
    let mut step = 0.25;
    while !confidently_below(&set.laplace(hi), z) {
        hi += step;
        step *= 2.0;
        if step > 1e6 {
            return Err(Error::NonConvergence { iterations: 0, residual: set.laplace(hi).estimate });
        }
    }
    if set.hits() == 0 {
        return Err(Error::NoBracket { lo: floor, hi });
    }
    let mut lo = start_lo.min(hi);
    let mut step = 0.25;
    while !confidently_above(&set.laplace(lo), z) {
        if lo <= floor {
            return Err(Error::NoBracket { lo, hi });
        }
        lo = (lo - step).max(floor);
        step *= 2.0;
    }
    Ok((lo, hi))
}

/// Solves `L_{x0,x0}(lambda) = 1` by confidence-aware bisection on a common
/// pool of excursions, growing the pool when a probe is inconclusive.
pub fn solve_malthus(model: &CoefficientModel, x0: f64, settings: &MalthusSettings) -> Result<MalthusResult> {
    let s = settings;
    if s.initial_paths < 100 || s.budget < s.initial_paths {
        return Err(Error::invalid("need initial_paths >= 100 and budget >= initial_paths"));
    }
    if !(s.tolerance > 0.0 && s.confidence > 0.0 && s.horizon > 0.0) {
        return Err(Error::invalid("tolerance, confidence and horizon must be positive"));
    }
    let z = s.confidence;
    let g_bound = model.g_bound();
    let floor = g_floor(model) - 1.0;
    let mut set = ExcursionSet::simulate(model, x0, x0, s.horizon, s.initial_paths, s.seed, tags::SOLVE, 0)?;
    let (mut lo, mut hi) = find_bracket(&set, z, g_bound, g_bound + 1.0, floor)?;

    let mut status = SolveStatus::Converged;
    let mut iterations = 0;
    while hi - lo > s.tolerance {
        iterations += 1;
        if iterations > 10_000 {
            return Err(Error::NonConvergence { iterations, residual: hi - lo });
        }
        let mid = 0.5 * (lo + hi);
        let e = set.laplace(mid);
        if confidently_above(&e, z) {
            lo = mid;
        } else if confidently_below(&e, z) {
            hi = mid;
        } else {
            let room = s.budget - set.len();
            if room == 0 {
                status = SolveStatus::BudgetExhausted;
                break;
            }
            set.extend(model, set.len().min(room), s.seed, tags::SOLVE, 0)?;
            // The bracket was certified on the smaller pool; re-certify.
            let (a, b) = find_bracket(&set, z, lo, hi, floor)?;
            lo = a;
            hi = b;
        }
    }

    let root = numerics::brent(|q| set.laplace(q).estimate - 1.0, lo, hi, 1e-12)?;
    let lower_probe = set.laplace(lo);
    let upper_probe = set.laplace(hi);
    let certified = confidently_above(&lower_probe, z)
        && lower_probe.stderr < 0.1 * lower_probe.estimate
        && set.max_weight_share(lo) < 0.05;
    let width = (hi - lo).max(0.05);
    let n_curve = s.curve_points.max(3);
    let curve = (0..n_curve)
        .map(|i| {
            let q = root - 10.0 * width + 20.0 * width * i as f64 / (n_curve - 1) as f64;
            set.laplace(q)
        })
        .collect();
    Ok(MalthusResult {
        x0,
        lambda: root,
        ci: (lo, hi),
        status,
        certificate: if certified { Certificate::ExponentialCertified } else { Certificate::RateUncertified },
        samples: set.len(),
        hits: set.hits(),
        truncated: set.truncated(),
        derivative: set.derivative(root),
        lower_probe,
        upper_probe,
        curve,
    })
}

/// Smallest sampled value of `g` over twelve decades around `x0`.
pub fn g_floor(model: &CoefficientModel) -> f64 {
    numerics::geomspace(model.x0() * 1e-6, model.x0() * 1e6, 121)
        .into_iter()
        .map(|x| model.g(x))
        .fold(f64::INFINITY, f64::min)
        .min(0.0)
}

/// Harmonic function `h`, interpolated monotonically in `ln x` between nodes
/// and constant outside them.
#[derive(Debug, Clone, PartialEq)]
pub enum HFunction {
    Constant(f64),
    Nodes(Pchip),
}

impl HFunction {
    pub fn from_nodes(nodes: &[f64], values: &[f64]) -> Result<Self> {
        if values.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("h must be positive at every node"));
        }
        let lx = nodes.iter().map(|x| x.ln()).collect();
        Ok(HFunction::Nodes(Pchip::new(lx, values.to_vec())?))
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            HFunction::Constant(c) => *c,
            HFunction::Nodes(p) => p.eval_clamped(x.max(f64::MIN_POSITIVE).ln()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HEstimate {
    pub q: f64,
    pub x0: f64,
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub truncated: Vec<usize>,
    /// Nodes where `h` departs from the average of its neighbours by more
    /// than three joint standard errors.
    pub continuity_flags: Vec<usize>,
}

impl HEstimate {
    pub fn function(&self) -> Result<HFunction> {
        HFunction::from_nodes(&self.nodes, &self.values)
    }

    /// Largest relative standard error over the nodes.
    pub fn max_relative_stderr(&self) -> f64 {
        self.values.iter().zip(&self.stderr).map(|(v, s)| s / v).fold(0.0, f64::max)
    }
}

/// `h(x) = L_{x, x0}(q)` at every node.
#[allow(clippy::too_many_arguments)]
pub fn estimate_h(
    model: &CoefficientModel,
    nodes: &[f64],
    q: f64,
    x0: f64,
    per_node_paths: usize,
    horizon: f64,
    seed: u64,
    tag: u16,
) -> Result<HEstimate> {
    if per_node_paths < 100 {
        return Err(Error::invalid("estimate_h needs at least 100 paths per node"));
    }
    let mut values = Vec::with_capacity(nodes.len());
    let mut stderr = Vec::with_capacity(nodes.len());
    let mut truncated = Vec::with_capacity(nodes.len());
    for (i, &x) in nodes.iter().enumerate() {
        let set = ExcursionSet::simulate(model, x, x0, horizon, per_node_paths, seed, tag, i as u16)?;
        let e = set.laplace(q);
        values.push(e.estimate);
        stderr.push(e.stderr);
        truncated.push(e.truncated);
    }
    let continuity_flags = (1..nodes.len().saturating_sub(1))
        .filter(|&i| {
            let mid = 0.5 * (values[i - 1] + values[i + 1]);
            let joint = (stderr[i].powi(2) + 0.25 * (stderr[i - 1].powi(2) + stderr[i + 1].powi(2))).sqrt();
            (values[i] - mid).abs() > 3.0 * joint + 1e-12
        })
        .collect();
    Ok(HEstimate { q, x0, nodes: nodes.to_vec(), values, stderr, truncated, continuity_flags })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileEstimate {
    pub lambda: f64,
    pub nodes: Vec<f64>,
    pub h: Vec<f64>,
    /// `|L'_{x,x}(lambda)|` per node.
    pub lprime: Vec<f64>,
    pub lprime_stderr: Vec<f64>,
    /// Density of `nu` at each node.
    pub nu: Vec<f64>,
    pub nu_stderr: Vec<f64>,
    /// Fraction of each node's own excursions stopped at the horizon.
    pub truncated_fraction: Vec<f64>,
    /// Nodes whose value comes from the level-crossing estimator at `x0`
    /// because their own excursions were too often truncated.
    pub from_crossings: Vec<bool>,
    /// `int nu` over `(0, infinity)` with power-law tails beyond the grid.
    pub integral: f64,
    /// `<nu, h>`, which equals 1 for the exact profile.
    pub pairing: f64,
    pub normalization_defect: f64,
    pub pairing_defect: f64,
    /// `nu / <nu, h>`.
    pub renormalized: Vec<f64>,
}

/// `int f(x) dx` from node values on an increasing positive grid: trapezoid
/// in `ln x`, a flat piece on `(0, x_min)` and a power-law tail past `x_max`.
pub fn integrate_nodes(nodes: &[f64], values: &[f64]) -> f64 {
    let n = nodes.len();
    let mut pieces = Vec::with_capacity(n + 1);
    pieces.push(values[0] * nodes[0]);
    for i in 0..n - 1 {
        let dl = (nodes[i + 1] / nodes[i]).ln();
        pieces.push(0.5 * dl * (values[i] * nodes[i] + values[i + 1] * nodes[i + 1]));
    }
    if n >= 2 && values[n - 1] > 0.0 && values[n - 2] > 0.0 {
        let s = (values[n - 1] / values[n - 2]).ln() / (nodes[n - 1] / nodes[n - 2]).ln();
        if s < -1.0 {
            pieces.push(values[n - 1] * nodes[n - 1] / (-s - 1.0));
        }
    }
    numerics::pairwise_sum(&pieces)
}

const TRUNCATION_LIMIT: f64 = 0.01;

/// Profile density `nu(x) = 1 / (h(x) tau(x) |L'_{x,x}(lambda)|)` at the nodes of `h`.
pub fn estimate_profile(
    model: &CoefficientModel,
    h: &HEstimate,
    lambda: f64,
    paths_per_node: usize,
    horizon: f64,
    seed: u64,
) -> Result<ProfileEstimate> {
    if paths_per_node < 100 {
        return Err(Error::invalid("estimate_profile needs at least 100 paths per node"));
    }
    let nodes = &h.nodes;
    let mut lprime = Vec::with_capacity(nodes.len());
    let mut lprime_stderr = Vec::with_capacity(nodes.len());
    let mut truncated_fraction = Vec::with_capacity(nodes.len());
    for (i, &x) in nodes.iter().enumerate() {
        let set = ExcursionSet::simulate(model, x, x, horizon, paths_per_node, seed, tags::DERIVATIVE, i as u16)?;
        let (d, se) = set.derivative(lambda);
        lprime.push(-d);
        lprime_stderr.push(se);
        truncated_fraction.push(set.truncated() as f64 / set.len() as f64);
    }
    let from_crossings: Vec<bool> =
        truncated_fraction.iter().zip(&lprime).map(|(t, l)| *t > TRUNCATION_LIMIT || !(*l > 0.0)).collect();
    let crossings = if from_crossings.iter().any(|b| *b) {
        let n = (4 * paths_per_node).max(10_000);
        Some(occupation::crossing_profile(model, model.x0(), lambda, nodes, n, horizon, seed)?)
    } else {
        None
    };
    let mut nu = Vec::with_capacity(nodes.len());
    let mut nu_stderr = Vec::with_capacity(nodes.len());
    for i in 0..nodes.len() {
        if let (true, Some(c)) = (from_crossings[i], &crossings) {
            nu.push(c.nu[i]);
            nu_stderr.push(c.nu_stderr[i]);
            continue;
        }
        let v = 1.0 / (h.values[i] * model.tau(nodes[i]) * lprime[i]);
        let rel = ((h.stderr[i] / h.values[i]).powi(2) + (lprime_stderr[i] / lprime[i]).powi(2)).sqrt();
        nu.push(v);
        nu_stderr.push(v * rel);
    }
    let integral = integrate_nodes(nodes, &nu);
    let nu_h: Vec<f64> = nu.iter().zip(&h.values).map(|(a, b)| a * b).collect();
    let pairing = integrate_nodes(nodes, &nu_h);
    let renormalized = nu.iter().map(|v| v / pairing).collect();
    Ok(ProfileEstimate {
        lambda,
        nodes: nodes.clone(),
        h: h.values.clone(),
        lprime,
        lprime_stderr,
        nu,
        nu_stderr,
        truncated_fraction,
        from_crossings,
        integral,
        pairing,
        normalization_defect: (integral - 1.0).abs(),
        pairing_defect: (pairing - 1.0).abs(),
        renormalized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{FragRate, GrowthRate, Kernel, Profile};

    fn model(growth: GrowthRate, b: f64) -> CoefficientModel {
        CoefficientModel::new(growth, FragRate::Constant(b), Kernel::self_similar(Profile::uniform_binary()), 1.0)
            .unwrap()
    }

    #[test]
    fn deterministic_laplace() {
        let m = model(GrowthRate::Constant(1.0), 0.0);
        for q in [0.0, 1.0, 5.0] {
            let e = estimate_l(&m, 0.0, 1.0, q, 100, 10.0, 1).unwrap();
            assert!((e.estimate - (-q).exp()).abs() < 1e-15);
            assert_eq!(e.stderr, 0.0);
        }
        let (d, se, _) = estimate_l_derivative(&m, 1.0, 0.0, 100, 5.0, 1).unwrap();
        assert_eq!((d, se), (0.0, 0.0));
    }

    #[test]
    fn no_fragmentation_has_no_bracket() {
        let m = model(GrowthRate::Constant(1.0), 0.0);
        let s = MalthusSettings { initial_paths: 200, budget: 400, ..Default::default() };
        assert!(matches!(solve_malthus(&m, 1.0, &s), Err(Error::NoBracket { .. })));
    }

    #[test]
    fn l_below_one_past_sup_g() {
        let m = model(GrowthRate::affine(1.0, 0.5), 1.0);
        let e = estimate_l(&m, 1.0, 1.0, m.g_bound() + 1.0, 2000, 50.0, 3).unwrap();
        assert!(e.estimate + 3.0 * e.stderr < 1.0);
        assert!(e.bias_bound.unwrap() < 1e-10);
    }

    #[test]
    fn integrate_nodes_exact_for_power_tail() {
        // density 3 / (1 + x)^4 has unit mass; use a grid where the tail is nearly a power law
        let nodes = numerics::geomspace(1e-4, 1e4, 400);
        let vals: Vec<f64> = nodes.iter().map(|x| 3.0 / (1.0 + x).powi(4)).collect();
        assert!((integrate_nodes(&nodes, &vals) - 1.0).abs() < 1e-3);
    }
}
