use rayon::prelude::*;
use serde::Serialize;

use super::{tags, HFunction};
use crate::coeffs::CoefficientModel;
use crate::error::{Error, Result};
use crate::numerics::{mean_and_stderr, pairwise_sum};
use crate::pdmp::{simulate_with, EventSink, RngStream, StoppingRule, Termination};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OccupationEstimate {
    pub lambda: f64,
    pub edges: Vec<f64>,
    /// Geometric cell midpoints.
    pub centers: Vec<f64>,
    /// Density of the tilted occupation measure per cell.
    pub density: Vec<f64>,
    /// `density / h`, an estimate of the profile `nu`.
    pub nu: Vec<f64>,
    /// Weighted fraction of time spent outside the cells.
    pub outside_fraction: f64,
    pub excursions: usize,
    pub hits: usize,
    pub effective_sample_size: f64,
    /// Effective sample size below a tenth of the excursion count.
    pub ess_warning: bool,
}

struct CellTimes<'a> {
    model: &'a CoefficientModel,
    edges: &'a [f64],
    times: Vec<f64>,
    error: Option<Error>,
}

impl EventSink for CellTimes<'_> {
    fn flow(&mut self, _start_time: f64, start: f64, _duration: f64, end: f64) {
        let e = self.edges;
        let n = e.len() - 1;
        if end <= e[0] || start >= e[n] {
            return;
        }
        let first = e.partition_point(|&v| v <= start).saturating_sub(1).min(n - 1);
        for k in first..n {
            if e[k] >= end {
                break;
            }
            let (a, b) = (start.max(e[k]), end.min(e[k + 1]));
            if b > a {
                match self.model.travel_time(a, b) {
                    Ok(t) => self.times[k] += t,
                    Err(err) => self.error = Some(err),
                }
            }
        }
    }
}

/// Occupation density of the tilted process over excursions from `x0` back
/// to `x0`, each weighted by `M_H = e^{-lambda H} E_H`.
#[allow(clippy::too_many_arguments)]
pub fn tilted_occupation(
    model: &CoefficientModel,
    x0: f64,
    lambda: f64,
    h: &HFunction,
    n_excursions: usize,
    edges: &[f64],
    horizon: f64,
    seed: u64,
) -> Result<OccupationEstimate> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) || !(edges[0] > 0.0) {
        return Err(Error::invalid("occupation edges must be positive and strictly increasing"));
    }
    if n_excursions < 100 {
        return Err(Error::invalid("tilted_occupation needs at least 100 excursions"));
    }
    let cells = edges.len() - 1;
    let per_path: Vec<(f64, f64, Vec<f64>)> = (0..n_excursions)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::derive(seed, tags::OCCUPATION, 0, i as u32).rng();
            let mut sink = CellTimes { model, edges, times: vec![0.0; cells], error: None };
            let o = simulate_with(model, x0, StoppingRule::HitTarget(x0), horizon, &mut rng, &mut sink)?;
            if let Some(err) = sink.error {
                return Err(err);
            }
            if o.termination != Termination::HitTarget {
                return Ok((0.0, 0.0, sink.times));
            }
            Ok(((o.log_fk - lambda * o.time).exp(), o.time, sink.times))
        })
        .collect::<Result<_>>()?;

    let weights: Vec<f64> = per_path.iter().map(|p| p.0).collect();
    let hits = weights.iter().filter(|w| **w > 0.0).count();
    let total_time = pairwise_sum(&per_path.iter().map(|p| p.0 * p.1).collect::<Vec<_>>());
    if !(total_time > 0.0) {
        return Err(Error::invalid("no excursion returned to x0"));
    }
    let mut density = Vec::with_capacity(cells);
    let mut inside = 0.0;
    for k in 0..cells {
        let mass = pairwise_sum(&per_path.iter().map(|p| p.0 * p.2[k]).collect::<Vec<_>>()) / total_time;
        inside += mass;
        density.push(mass / (edges[k + 1] - edges[k]));
    }
    let centers: Vec<f64> = edges.windows(2).map(|w| (w[0] * w[1]).sqrt()).collect();
    let nu = density.iter().zip(&centers).map(|(d, &c)| d / h.eval(c)).collect();
    let sum_w = pairwise_sum(&weights);
    let sum_w2 = pairwise_sum(&weights.iter().map(|w| w * w).collect::<Vec<_>>());
    let ess = if sum_w2 > 0.0 { sum_w * sum_w / sum_w2 } else { 0.0 };
    Ok(OccupationEstimate {
        lambda,
        edges: edges.to_vec(),
        centers,
        density,
        nu,
        outside_fraction: (1.0 - inside).max(0.0),
        excursions: n_excursions,
        hits,
        effective_sample_size: ess,
        ess_warning: ess < 0.1 * n_excursions as f64,
    })
}

/// Level-crossing form of the profile, from excursions at `x0` only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossingProfile {
    pub lambda: f64,
    pub levels: Vec<f64>,
    pub nu: Vec<f64>,
    pub nu_stderr: Vec<f64>,
    /// `|L'_{x0,x0}(lambda)|` from the same excursions.
    pub lprime: f64,
    pub excursions: usize,
}

struct Crossings<'a> {
    model: &'a CoefficientModel,
    levels: &'a [f64],
    lambda: f64,
    log_fk: f64,
    sums: Vec<f64>,
    error: Option<Error>,
}

impl Crossings<'_> {
    fn record(&mut self, start_time: f64, start: f64, end: f64) -> Result<()> {
        let first = self.levels.partition_point(|&v| v <= start);
        for k in first..self.levels.len() {
            let level = self.levels[k];
            if level > end {
                break;
            }
            let s = start_time + self.model.travel_time(start, level)?;
            let lw = self.log_fk + self.model.log_weight_between(start, level)?;
            self.sums[k] += (lw - self.lambda * s).exp();
        }
        self.log_fk += self.model.log_weight_between(start, end)?;
        Ok(())
    }
}

impl EventSink for Crossings<'_> {
    fn flow(&mut self, start_time: f64, start: f64, _duration: f64, end: f64) {
        if self.error.is_none() && end > start {
            if let Err(e) = self.record(start_time, start, end) {
                self.error = Some(e);
            }
        }
    }
}

/// `nu(x) = E_{x0}[sum over up-crossings s < H of x of e^{-lambda s} E_s] / (tau(x) |L'_{x0,x0}(lambda)|)`.
///
/// Every level is estimated from the same excursions, so levels whose own
/// return times are long (far in the tail) do not need long horizons.
pub fn crossing_profile(
    model: &CoefficientModel,
    x0: f64,
    lambda: f64,
    levels: &[f64],
    n_excursions: usize,
    horizon: f64,
    seed: u64,
) -> Result<CrossingProfile> {
    if levels.is_empty() || levels.windows(2).any(|w| !(w[1] > w[0])) || !(levels[0] > 0.0) {
        return Err(Error::invalid("crossing levels must be positive and strictly increasing"));
    }
    if n_excursions < 100 {
        return Err(Error::invalid("crossing_profile needs at least 100 excursions"));
    }
    let per_path: Vec<(f64, Vec<f64>)> = (0..n_excursions)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::derive(seed, tags::CROSSING, 0, i as u32).rng();
            let mut sink =
                Crossings { model, levels, lambda, log_fk: 0.0, sums: vec![0.0; levels.len()], error: None };
            let o = simulate_with(model, x0, StoppingRule::HitTarget(x0), horizon, &mut rng, &mut sink)?;
            if let Some(err) = sink.error {
                return Err(err);
            }
            let ht = if o.termination == Termination::HitTarget { o.time * (o.log_fk - lambda * o.time).exp() } else { 0.0 };
            Ok((ht, sink.sums))
        })
        .collect::<Result<_>>()?;
    let (lprime, _) = mean_and_stderr(&per_path.iter().map(|p| p.0).collect::<Vec<_>>());
    if !(lprime > 0.0) {
        return Err(Error::invalid("no excursion returned to x0"));
    }
    let mut nu = Vec::with_capacity(levels.len());
    let mut nu_stderr = Vec::with_capacity(levels.len());
    for (k, &x) in levels.iter().enumerate() {
        let (m, se) = mean_and_stderr(&per_path.iter().map(|p| p.1[k]).collect::<Vec<_>>());
        let scale = 1.0 / (model.tau(x) * lprime);
        nu.push(m * scale);
        nu_stderr.push(se * scale);
    }
    Ok(CrossingProfile { lambda, levels: levels.to_vec(), nu, nu_stderr, lprime, excursions: n_excursions })
}
