//! Checkable sufficient conditions for Malthusian behaviour: the tail
//! condition on `g = B (N - 1)`, the moment and growth balance conditions for
//! self-similar kernels, Foster-Lyapunov drift of power-law functions and the
//! constant-rate case.

use std::fmt::Write as _;

use serde::Serialize;

use crate::coeffs::CoefficientModel;
use crate::error::{Error, Result};
use crate::numerics::geomspace;

/// Margins within this distance of zero are reported as marginal.
pub const MARGINAL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionStatus {
    Pass,
    Fail,
    Inconclusive,
    Marginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleGrid {
    pub min: f64,
    pub max: f64,
    pub nodes: usize,
}

impl SampleGrid {
    /// Twelve decades around `x0`, ten nodes per decade.
    pub fn around(x0: f64) -> Self {
        Self { min: x0 * 1e-6, max: x0 * 1e6, nodes: 121 }
    }

    pub fn points(&self) -> Vec<f64> {
        geomspace(self.min, self.max, self.nodes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionEntry {
    pub id: &'static str,
    pub status: CriterionStatus,
    /// Positive when the condition holds with room to spare.
    pub margin: f64,
    pub grid: Option<SampleGrid>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct CriteriaReport {
    pub entries: Vec<CriterionEntry>,
}

impl CriteriaReport {
    pub fn entry(&self, id: &str) -> Option<&CriterionEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.status == CriterionStatus::Pass)
    }

    pub fn extend(&mut self, other: CriteriaReport) {
        self.entries.extend(other.entries);
    }

    /// Fixed-width text table, one row per entry.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<34} {:<13} {:>14}  detail", "condition", "status", "margin");
        for e in &self.entries {
            let status = serde_json::to_value(e.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            let _ = writeln!(s, "{:<34} {:<13} {:>14.6e}  {}", e.id, status, e.margin, e.detail);
        }
        s
    }
}

fn status_of(margin: f64) -> CriterionStatus {
    if margin.is_nan() {
        CriterionStatus::Inconclusive
    } else if margin.abs() <= MARGINAL {
        CriterionStatus::Marginal
    } else if margin > 0.0 {
        CriterionStatus::Pass
    } else {
        CriterionStatus::Fail
    }
}

/// `lim_{x -> infinity} g(x)` from the coefficient families, when declared.
pub fn declared_tail_g(model: &CoefficientModel) -> Option<f64> {
    let b = model.rate().limit_at_infinity();
    if !b.is_finite() {
        return None;
    }
    let n = match model.kernel().constant_number() {
        Some(n) => n,
        None => model.kernel().number(f64::MAX),
    };
    Some(b * (n - 1.0))
}

/// Tail condition `limsup g < lambda`, tightened by the half-width of the
/// exponent's confidence interval. Equality fails: the condition is strict.
pub fn check_tail_rate(model: &CoefficientModel, lambda: f64, half_width: f64) -> CriterionEntry {
    let grid = SampleGrid { min: model.x0() * 1e3, max: model.x0() * 1e6, nodes: 31 };
    let values: Vec<f64> = grid.points().iter().map(|&x| model.g(x)).collect();
    let sampled = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let last_decade = &values[values.len() - 11..];
    let (lo, hi) = last_decade.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let declared = declared_tail_g(model);
    let stable = hi - lo <= 1e-3 * hi.abs().max(1.0);
    let tail = match declared {
        Some(d) => d.max(values[values.len() - 1]),
        None => sampled,
    };
    let margin = lambda - half_width - tail;
    let (status, note) = if declared.is_none() && !stable {
        (CriterionStatus::Inconclusive, "tail of g has not settled on the probed range")
    } else if margin.abs() <= MARGINAL {
        (CriterionStatus::Fail, "limsup g equals the exponent: the strict inequality fails")
    } else {
        (status_of(margin), "")
    };
    CriterionEntry {
        id: "tail_rate_below_exponent",
        status,
        margin,
        grid: Some(grid),
        detail: format!("limsup g = {tail:.6}, lambda = {lambda:.6} +- {half_width:.2e}. {note}").trim().to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BalanceChoice {
    pub a: f64,
    pub b: f64,
    /// Smallest grid node from which the growth balance holds at every larger node.
    pub x_infinity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceReport {
    pub report: CriteriaReport,
    pub choice: Option<BalanceChoice>,
}

/// `(1/a) (M_0 - M_a)`, the bound on `tau / (x B)` at large masses.
fn balance_bound(model: &CoefficientModel, a: f64) -> Result<f64> {
    Ok((model.kernel().moment(0.0)? - model.kernel().moment(a)?) / a)
}

/// Smallest node from which `tau(x) / (x B(x)) <= bound` at every larger node,
/// with the minimal slack over those nodes.
fn balance_onset(model: &CoefficientModel, nodes: &[f64], bound: f64) -> Option<(f64, f64)> {
    let mut onset = None;
    let mut slack = f64::INFINITY;
    for &x in nodes.iter().rev() {
        let b = model.frag_rate(x);
        let ratio = if b > 0.0 { model.tau(x) / (x * b) } else { f64::INFINITY };
        let s = bound - ratio;
        if !(s >= 0.0) {
            break;
        }
        slack = slack.min(s);
        onset = Some(x);
    }
    onset.filter(|x| *x < nodes[nodes.len() - 1]).map(|x| (x, slack))
}

/// Limit of `tau(x) / (x B(x))`, when the families declare it.
fn balance_limit(model: &CoefficientModel) -> Option<f64> {
    let slope = model.growth().linear_slope_at_infinity()?;
    let b = model.rate().limit_at_infinity();
    if b > 0.0 && b.is_finite() {
        Some(slope / b)
    } else {
        None
    }
}

/// Moment conditions and the growth balance for self-similar kernels.
///
/// `a` and `b` fix the exponents; when absent they are searched on log grids,
/// `a` maximizing `a` times the tail slack of the growth balance.
pub fn check_growth_balance(model: &CoefficientModel, a: Option<f64>, b: Option<f64>) -> Result<BalanceReport> {
    let profile = model.kernel().profile().ok_or(Error::NotSelfSimilar)?;
    let grid = SampleGrid::around(model.x0());
    let nodes = grid.points();
    let m0 = profile.moment(0.0)?;
    let mut report = CriteriaReport::default();

    // exponent a: M_a < M_0, then the balance tau / (x B) <= (M_0 - M_a) / a in the tail
    let a_grid: Vec<f64> = match a {
        Some(a) => vec![a],
        None => (-26..=26).map(|k| 10f64.powf(k as f64 / 20.0)).collect(),
    };
    let mut best: Option<(f64, f64, f64)> = None;
    let mut best_moment_gap = f64::NEG_INFINITY;
    for &ac in &a_grid {
        let ma = profile.moment(ac)?;
        best_moment_gap = best_moment_gap.max(m0 - ma);
        if !(ma < m0) {
            continue;
        }
        let bound = (m0 - ma) / ac;
        if let Some((x_inf, slack)) = balance_onset(model, &nodes, bound) {
            // a times the tail slack is the drift rate of x^a at infinity
            let score = ac * balance_limit(model).map_or(slack, |l| bound - l);
            let better = match best {
                None => true,
                Some((_, bx, bscore)) => score > bscore || (score == bscore && x_inf < bx),
            };
            if better {
                best = Some((ac, x_inf, score));
            }
        }
    }
    report.entries.push(CriterionEntry {
        id: "moment_decreasing",
        status: status_of(best_moment_gap),
        margin: best_moment_gap,
        grid: None,
        detail: match a {
            Some(a) => format!("M_0 - M_a at a = {a}"),
            None => "largest M_0 - M_a over a in [0.05, 20]".into(),
        },
    });

    // exponent b: M_{-b} finite
    let b_choice = match b {
        Some(b) => profile.moment(-b).ok().map(|_| b),
        None if profile.moment(-0.5).is_ok() => Some(0.5),
        None => geomspace(1e-3, 0.5, 30).into_iter().rev().find(|&b| profile.moment(-b).is_ok()),
    };
    report.entries.push(match b_choice {
        Some(bc) => CriterionEntry {
            id: "negative_moment_finite",
            status: CriterionStatus::Pass,
            margin: profile.moment(-bc)?,
            grid: None,
            detail: format!("M_-b = {:.6} at b = {bc}", profile.moment(-bc)?),
        },
        None => CriterionEntry {
            id: "negative_moment_finite",
            status: CriterionStatus::Fail,
            margin: f64::NEG_INFINITY,
            grid: None,
            detail: "no b > 0 with finite M_-b".into(),
        },
    });

    report.entries.push(match best {
        Some((ac, x_inf, _)) => {
            let bound = balance_bound(model, ac)?;
            let (_, slack) = balance_onset(model, &nodes, bound).expect("onset found during the search");
            let limit_margin = balance_limit(model).map(|l| bound - l);
            let margin = limit_margin.unwrap_or(slack);
            let status = if margin.abs() <= MARGINAL { CriterionStatus::Marginal } else { status_of(margin) };
            CriterionEntry {
                id: "growth_balance_at_infinity",
                status,
                margin,
                grid: Some(grid),
                detail: format!("a = {ac}, bound {bound:.6} holds from x = {x_inf:.6e}; grid slack {slack:.3e}"),
            }
        }
        None => {
            let margin = match a {
                Some(ac) => match balance_limit(model) {
                    Some(l) => balance_bound(model, ac)? - l,
                    None => f64::NEG_INFINITY,
                },
                None => f64::NEG_INFINITY,
            };
            CriterionEntry {
                id: "growth_balance_at_infinity",
                status: if margin.abs() <= MARGINAL { CriterionStatus::Marginal } else { CriterionStatus::Fail },
                margin,
                grid: Some(grid),
                detail: "tau / (x B) exceeds (M_0 - M_a) / a at the largest grid nodes".into(),
            }
        }
    });

    // lim g = inf g
    let inf_g = nodes.iter().map(|&x| model.g(x)).fold(f64::INFINITY, f64::min);
    let tail = declared_tail_g(model).unwrap_or_else(|| model.g(grid.max));
    let gap = tail - inf_g;
    let tol = MARGINAL * tail.abs().max(1.0);
    report.entries.push(CriterionEntry {
        id: "rate_limit_is_infimum",
        status: if gap <= tol { CriterionStatus::Pass } else { CriterionStatus::Fail },
        margin: inf_g - tail,
        grid: Some(grid),
        detail: format!("lim g = {tail:.6}, grid inf g = {inf_g:.6}"),
    });

    let choice = match (best, b_choice) {
        (Some((a, x_infinity, _)), Some(b)) => Some(BalanceChoice { a, b, x_infinity }),
        _ => None,
    };
    Ok(BalanceReport { report, choice })
}

/// `V(x) = x^{-b}` below `x_low`, `x^a` above `x_high`, and a cubic in
/// `(ln x, ln V)` matching values and slopes in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovSpec {
    pub a: f64,
    pub b: f64,
    pub x_low: f64,
    pub x_high: f64,
}

impl LyapunovSpec {
    pub fn new(a: f64, b: f64, x_low: f64, x_high: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && x_low > 0.0 && x_high > x_low && x_high.is_finite()) {
            return Err(Error::invalid("Lyapunov spec needs a, b > 0 and 0 < x_low < x_high"));
        }
        Ok(Self { a, b, x_low, x_high })
    }

    /// `ln V` and its derivative in `s = ln x`.
    fn log_v(&self, x: f64) -> (f64, f64) {
        let s = x.ln();
        let (s0, s1) = (self.x_low.ln(), self.x_high.ln());
        if s <= s0 {
            return (-self.b * s, -self.b);
        }
        if s >= s1 {
            return (self.a * s, self.a);
        }
        let h = s1 - s0;
        let t = (s - s0) / h;
        let (p0, p1, m0, m1) = (-self.b * s0, self.a * s1, -self.b * h, self.a * h);
        let (t2, t3) = (t * t, t * t * t);
        let value = (2.0 * t3 - 3.0 * t2 + 1.0) * p0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * p1
            + (t3 - t2) * m1;
        let slope = ((6.0 * t2 - 6.0 * t) * p0
            + (3.0 * t2 - 4.0 * t + 1.0) * m0
            + (-6.0 * t2 + 6.0 * t) * p1
            + (3.0 * t2 - 2.0 * t) * m1)
            / h;
        (value, slope)
    }

    /// Largest `x_low <= x_low_max` (in steps of a tenth of a decade, at most
    /// six decades down) for which the bridge is convex.
    pub fn convex_below(a: f64, b: f64, x_low_max: f64, x_high: f64) -> Result<Option<Self>> {
        for k in 0..=60 {
            let spec = Self::new(a, b, x_low_max * 10f64.powf(-0.1 * k as f64), x_high)?;
            if spec.bridge_is_convex() {
                return Ok(Some(spec));
            }
        }
        Ok(None)
    }

    pub fn value(&self, x: f64) -> f64 {
        self.log_v(x).0.exp()
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let (lv, ds) = self.log_v(x);
        lv.exp() * ds / x
    }

    /// Whether `V` is convex on the bridge, checked by second differences.
    pub fn bridge_is_convex(&self) -> bool {
        let xs = geomspace(self.x_low, self.x_high, 201);
        xs.windows(3).all(|w| {
            let d1 = (self.value(w[1]) - self.value(w[0])) / (w[1] - w[0]);
            let d2 = (self.value(w[2]) - self.value(w[1])) / (w[2] - w[1]);
            d2 >= d1 - 1e-12 * d1.abs().max(1.0)
        })
    }
}

/// Closed forms for pure powers: `GV / V` with `V = x^{-b}` (below) or `x^a` (above).
pub fn drift_ratio_closed_form(model: &CoefficientModel, x: f64, exponent: f64) -> Result<f64> {
    let m0 = model.kernel().moment(0.0)?;
    let me = model.kernel().moment(exponent)?;
    Ok(exponent * model.tau(x) / x + model.frag_rate(x) * (me - m0))
}

/// `GV(x) = tau V' + B int (V(y) - V(x)) k(x, y) dy` by quadrature, for any `V`.
pub fn drift_quadrature(model: &CoefficientModel, v: impl Fn(f64) -> f64, dv: impl Fn(f64) -> f64, x: f64) -> Result<f64> {
    let vx = v(x);
    let jump = model.kernel().integrate_against(x, |y| v(y) - vx)?;
    Ok(model.tau(x) * dv(x) + model.frag_rate(x) * jump)
}

/// `GV(x)` for the `V` described by `spec`.
pub fn drift(model: &CoefficientModel, spec: &LyapunovSpec, x: f64) -> Result<f64> {
    let v = spec.value(x);
    if model.kernel().profile().is_some() {
        if x <= spec.x_low {
            return Ok(v * drift_ratio_closed_form(model, x, -spec.b)?);
        }
        if x >= spec.x_high {
            // pure-power closed form plus the correction where V differs from x^a
            let base = v * drift_ratio_closed_form(model, x, spec.a)?;
            let a = spec.a;
            let corr = model.kernel().integrate_against(x, |y| {
                if y < spec.x_high {
                    spec.value(y) - y.powf(a)
                } else {
                    0.0
                }
            })?;
            return Ok(base + model.frag_rate(x) * corr);
        }
    }
    drift_quadrature(model, |y| spec.value(y), |y| spec.derivative(y), x)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    pub entry: CriterionEntry,
    /// Upper end of the compact `[x_low, compact_upper]` outside which
    /// `GV < 0` on the grid.
    pub compact_upper: Option<f64>,
    pub nodes: Vec<f64>,
    /// `GV / V` at each node.
    pub ratio: Vec<f64>,
}

/// Foster-Lyapunov drift: `GV <= 0` at every grid node below `x_low` and at
/// every node beyond some compact upper end at or above `x_high`.
pub fn lyapunov_drift(model: &CoefficientModel, spec: &LyapunovSpec, grid: &SampleGrid) -> Result<DriftReport> {
    let nodes = grid.points();
    let mut ratio = Vec::with_capacity(nodes.len());
    for &x in &nodes {
        ratio.push(drift(model, spec, x)? / spec.value(x));
    }
    let below: Vec<f64> = nodes.iter().zip(&ratio).filter(|(x, _)| **x < spec.x_low).map(|(_, r)| -r).collect();
    let mut compact_upper = None;
    let mut above_margin = f64::INFINITY;
    for (x, r) in nodes.iter().zip(&ratio).rev() {
        if *x < spec.x_high || !(-r > 0.0) {
            break;
        }
        above_margin = above_margin.min(-r);
        compact_upper = Some(*x);
    }
    // the tail must be covered by at least the last decade of the grid
    let tail_ok = compact_upper.is_some_and(|c| c <= grid.max / 10.0);
    let below_margin = below.iter().cloned().fold(f64::INFINITY, f64::min);
    let margin = if tail_ok { below_margin.min(above_margin) } else { f64::NEG_INFINITY };
    let mut status = status_of(margin);
    if !spec.bridge_is_convex() && status == CriterionStatus::Pass {
        status = CriterionStatus::Inconclusive;
    }
    let detail = match compact_upper.filter(|_| tail_ok) {
        Some(c) => format!(
            "GV < 0 below {:.4e} and above {c:.4e}; min -GV/V = {margin:.4e}{}",
            spec.x_low,
            if spec.bridge_is_convex() { "" } else { "; bridge not convex" }
        ),
        None => "GV > 0 at the largest grid nodes".into(),
    };
    Ok(DriftReport {
        entry: CriterionEntry { id: "lyapunov_drift", status, margin, grid: Some(*grid), detail },
        compact_upper: compact_upper.filter(|_| tail_ok),
        nodes,
        ratio,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantCase {
    /// `B (N - 1)`, exact.
    pub lambda: f64,
    pub report: CriteriaReport,
}

/// Constant `B` and `N`: the exponent is `B (N - 1)` with `h = 1`, and the
/// tail condition never applies; ergodicity follows from the power-law
/// drift bounds instead.
pub fn constant_case(model: &CoefficientModel, a: f64, b: f64) -> Result<ConstantCase> {
    let (Some(rate), Some(n)) = (model.rate().constant_value(), model.kernel().constant_number()) else {
        return Err(Error::invalid("constant_case needs a constant fragmentation rate and a constant fragment number"));
    };
    let lambda = rate * (n - 1.0);
    let profile = model.kernel().profile().ok_or(Error::NotSelfSimilar)?;
    let grid = SampleGrid::around(model.x0());
    let nodes = grid.points();
    let mut report = CriteriaReport::default();
    report.entries.push(CriterionEntry {
        id: "exponent_closed_form",
        status: CriterionStatus::Pass,
        margin: 0.0,
        grid: None,
        detail: format!("lambda = B (N - 1) = {lambda}"),
    });
    let mut tail = check_tail_rate(model, lambda, 0.0);
    tail.detail.push_str("; not applicable with constant rates");
    report.entries.push(tail);

    // small masses: tau / x >= (B / b) (M_-b - M_0) for x <= x0
    let low_bound = rate / b * (profile.moment(-b)? - profile.moment(0.0)?);
    let mut x_low = None;
    let mut low_slack = f64::INFINITY;
    for &x in &nodes {
        let s = model.tau(x) / x - low_bound;
        if !(s >= 0.0) {
            break;
        }
        low_slack = low_slack.min(s);
        x_low = Some(x);
    }
    report.entries.push(CriterionEntry {
        id: "small_mass_drift",
        status: if x_low.is_some() { status_of(low_slack) } else { CriterionStatus::Fail },
        margin: if x_low.is_some() { low_slack } else { f64::NEG_INFINITY },
        grid: Some(grid),
        detail: match x_low {
            Some(x) => format!("tau/x >= {low_bound:.6} up to x = {x:.4e}"),
            None => format!("tau/x < {low_bound:.6} at the smallest node"),
        },
    });

    // large masses: tau / x <= (B / a) (M_0 - M_a) for x >= x_inf
    let high_bound = rate / a * (profile.moment(0.0)? - profile.moment(a)?);
    let limit = model.growth().linear_slope_at_infinity();
    let onset = nodes.iter().rev().take_while(|&&x| model.tau(x) / x <= high_bound).last().copied();
    let high_margin = match limit {
        Some(l) => high_bound - l,
        None => onset.map_or(f64::NEG_INFINITY, |x| high_bound - model.tau(x) / x),
    };
    report.entries.push(CriterionEntry {
        id: "large_mass_drift",
        status: status_of(high_margin),
        margin: high_margin,
        grid: Some(grid),
        detail: match onset {
            Some(x) => format!("tau/x <= {high_bound:.6} from x = {x:.4e}; limit margin {high_margin:.3e}"),
            None => format!("tau/x > {high_bound:.6} on the whole grid; limit margin {high_margin:.3e}"),
        },
    });

    // Foster-Lyapunov: GV <= -alpha V outside a compact, with alpha from the slack
    let alpha_low = b * low_slack;
    let alpha_high = a * high_margin;
    let alpha = if x_low.is_some() { alpha_low.min(alpha_high) } else { f64::NEG_INFINITY };
    report.entries.push(CriterionEntry {
        id: "exponential_ergodicity",
        status: status_of(alpha),
        margin: alpha,
        grid: Some(grid),
        detail: format!("alpha = min(b * {low_slack:.4e}, a * {high_margin:.4e})"),
    });
    Ok(ConstantCase { lambda, report })
}
