//! Finite-volume discretization of the growth-fragmentation operator on a
//! geometric grid: evolution of the density, the leading eigen-triple and
//! the spectrum of operators killed outside an interval.

mod lu;

use std::collections::VecDeque;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::coeffs::CoefficientModel;
use crate::error::{Error, Result};
use crate::numerics::pairwise_sum;
use lu::Lu;

/// Geometric grid: nodes `x_i` with cells `[e_i, e_{i+1}]` whose edges are
/// the geometric midpoints between nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    nodes: Vec<f64>,
    edges: Vec<f64>,
    widths: Vec<f64>,
}

impl Grid {
    pub fn geometric(x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        if !(x_min > 0.0 && x_max > x_min && x_max.is_finite()) || n < 3 {
            return Err(Error::invalid("grid needs 0 < x_min < x_max and at least 3 nodes"));
        }
        let nodes = crate::numerics::geomspace(x_min, x_max, n);
        let root = (nodes[1] / nodes[0]).sqrt();
        let mut edges = Vec::with_capacity(n + 1);
        edges.push(x_min / root);
        edges.extend(nodes.windows(2).map(|w| (w[0] * w[1]).sqrt()));
        edges.push(x_max * root);
        let widths = edges.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Self { nodes, edges, widths })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    /// Common ratio `x_{i+1} / x_i`.
    pub fn ratio(&self) -> f64 {
        self.nodes[1] / self.nodes[0]
    }

    /// Same range with twice as many cells.
    pub fn refined(&self) -> Self {
        let n = 2 * self.len() - 1;
        Self::geometric(self.nodes[0], self.nodes[self.len() - 1], n).expect("refining a valid grid")
    }

    pub fn cell_of(&self, x: f64) -> Option<usize> {
        if !(x >= self.edges[0] && x < self.edges[self.len()]) {
            return None;
        }
        Some(self.edges.partition_point(|&e| e <= x) - 1)
    }
}

/// Per-cell density values on a [`Grid`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Field {
    pub values: Vec<f64>,
}

impl Field {
    pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> f64) -> Self {
        Self { values: grid.nodes.iter().map(|&x| f(x)).collect() }
    }

    pub fn from_masses(grid: &Grid, masses: &[f64]) -> Self {
        Self { values: masses.iter().zip(&grid.widths).map(|(m, w)| m / w).collect() }
    }

    pub fn masses(&self, grid: &Grid) -> Vec<f64> {
        self.values.iter().zip(&grid.widths).map(|(u, w)| u * w).collect()
    }

    /// `<u, f>` with `f` sampled at the nodes.
    pub fn pair(&self, grid: &Grid, f: impl Fn(f64) -> f64) -> f64 {
        let terms: Vec<f64> =
            self.values.iter().zip(&grid.widths).zip(&grid.nodes).map(|((u, w), &x)| u * w * f(x)).collect();
        pairwise_sum(&terms)
    }

    pub fn total_mass(&self, grid: &Grid) -> f64 {
        self.pair(grid, |_| 1.0)
    }

    pub fn write_csv<W: Write>(&self, grid: &Grid, header: &str, mut w: W) -> Result<()> {
        for line in header.lines() {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "x,value")?;
        for (x, v) in grid.nodes.iter().zip(&self.values) {
            writeln!(w, "{x:.12e},{v:.12e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryPolicy {
    /// Transport leaves the grid past `x_max` and does not come back.
    pub outflow_at_max: bool,
    /// Kernel mass below the first edge is assigned to the first node.
    pub lumped_below_min: bool,
}

/// Sparse (CSR) matrix of the generator acting on grid functions `f_i = f(x_i)`.
///
/// Transport uses the forward difference `tau_i (f_{i+1} - f_i) / (x_{i+1} - x_i)`,
/// which is the upwind direction for test functions; its transpose is the
/// upwind flux for the density. The fragmentation integral puts the exact
/// kernel mass of each cell on the two nodes around the cell's kernel mean,
/// so that mass and first moment are both reproduced.
#[derive(Debug, Clone)]
pub struct GridOperator {
    grid: Grid,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    g: Vec<f64>,
    g_sup: f64,
    /// `B(x_i) int_0^{e_0} k(x_i, y) dy` per row.
    lumped: Vec<f64>,
    /// Killing rate of the last row from outflow.
    outflow_rate: f64,
    pub boundary: BoundaryPolicy,
}

/// Nodes `k, k+1` and weights putting unit mass with mean `m` on them.
fn split(nodes: &[f64], m: f64) -> [(usize, f64); 2] {
    let n = nodes.len();
    if m <= nodes[0] {
        return [(0, 1.0), (0, 0.0)];
    }
    if m >= nodes[n - 1] {
        return [(n - 1, 1.0), (n - 1, 0.0)];
    }
    let k = nodes.partition_point(|&x| x <= m) - 1;
    let t = (m - nodes[k]) / (nodes[k + 1] - nodes[k]);
    [(k, 1.0 - t), (k + 1, t)]
}

pub fn assemble(model: &CoefficientModel, grid: &Grid) -> Result<GridOperator> {
    let n = grid.len();
    let nodes = &grid.nodes;
    let edges = &grid.edges;
    let rows: Vec<(Vec<(usize, f64)>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = nodes[i];
            let width = (i + 2).min(n);
            let mut row = vec![0.0; width];
            let tau = model.tau(x);
            if i + 1 < n {
                let c = tau / (nodes[i + 1] - x);
                row[i] -= c;
                row[i + 1] += c;
            } else {
                row[i] -= tau / (x - nodes[i - 1]);
            }
            let b = model.frag_rate(x);
            let mut lumped = 0.0;
            if b > 0.0 {
                row[i] -= b;
                for j in 0..=i {
                    let lo = if j == 0 { 0.0 } else { edges[j] };
                    let hi = if j == i { x } else { edges[j + 1] };
                    let mass = model.kernel().mass_between(x, lo, hi)?;
                    if !mass.is_finite() || mass < 0.0 {
                        return Err(Error::Quadrature(format!("kernel mass at x = {x} is {mass}")));
                    }
                    if mass == 0.0 {
                        continue;
                    }
                    let mom = model.kernel().first_moment_between(x, lo, hi)?;
                    if !mom.is_finite() {
                        return Err(Error::Quadrature(format!("kernel first moment at x = {x} is {mom}")));
                    }
                    if j == 0 {
                        lumped = b * model.kernel().mass_between(x, 0.0, edges[0].min(x))?;
                    }
                    for (k, w) in split(&nodes[..=i], mom / mass) {
                        row[k] += b * mass * w;
                    }
                }
            }
            let entries = row.into_iter().enumerate().filter(|(_, v)| *v != 0.0).collect();
            Ok((entries, lumped))
        })
        .collect::<Result<_>>()?;

    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut lumped = Vec::with_capacity(n);
    row_ptr.push(0);
    for (entries, l) in rows {
        for (j, v) in entries {
            cols.push(j);
            vals.push(v);
        }
        row_ptr.push(cols.len());
        lumped.push(l);
    }
    let g: Vec<f64> = nodes.iter().map(|&x| model.g(x)).collect();
    let g_sup = g.iter().cloned().fold(model.g_bound().min(f64::MAX), f64::max).max(0.0);
    Ok(GridOperator {
        grid: grid.clone(),
        row_ptr,
        cols,
        vals,
        g,
        g_sup,
        lumped,
        outflow_rate: model.tau(nodes[n - 1]) / (nodes[n - 1] - nodes[n - 2]),
        boundary: BoundaryPolicy { outflow_at_max: true, lumped_below_min: true },
    })
}

impl GridOperator {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `q_g = 1 + sup g`.
    pub fn shift(&self) -> f64 {
        1.0 + self.g_sup
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().cloned().zip(self.vals[r].iter().cloned())
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|(c, _)| *c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|i| self.row(i).map(|(j, v)| v * f[j]).sum()).collect()
    }

    /// `A^T m`, the evolution of cell masses.
    pub fn apply_transpose(&self, m: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (i, mi) in m.iter().enumerate() {
            for (j, v) in self.row(i) {
                out[j] += v * mi;
            }
        }
        out
    }

    /// Smallest off-diagonal entry; non-negative for a Metzler matrix.
    pub fn off_diagonal_min(&self) -> f64 {
        (0..self.len())
            .flat_map(|i| self.row(i).filter(move |(j, _)| *j != i).map(|(_, v)| v))
            .fold(f64::INFINITY, f64::min)
    }

    /// `max_i |(A 1)_i - g(x_i)| / max(1, |g(x_i)|)` over the rows not
    /// touched by the outflow boundary.
    pub fn row_sum_defect(&self) -> f64 {
        let ones = vec![1.0; self.len()];
        let a1 = self.apply(&ones);
        (0..self.len() - 1).map(|i| (a1[i] - self.g[i]).abs() / self.g[i].abs().max(1.0)).fold(0.0, f64::max)
    }

    fn dense(&self, indices: &[usize], transpose: bool) -> Vec<f64> {
        let m = indices.len();
        let mut pos = vec![usize::MAX; self.len()];
        for (k, &i) in indices.iter().enumerate() {
            pos[i] = k;
        }
        let mut a = vec![0.0; m * m];
        for (k, &i) in indices.iter().enumerate() {
            for (j, v) in self.row(i) {
                let l = pos[j];
                if l != usize::MAX {
                    if transpose {
                        a[l * m + k] = v;
                    } else {
                        a[k * m + l] = v;
                    }
                }
            }
        }
        a
    }

    /// Whether the directed graph of the restriction to `indices` is
    /// strongly connected.
    pub fn is_irreducible(&self, indices: &[usize]) -> bool {
        let m = indices.len();
        if m == 0 {
            return false;
        }
        let mut pos = vec![usize::MAX; self.len()];
        for (k, &i) in indices.iter().enumerate() {
            pos[i] = k;
        }
        let mut fwd = vec![Vec::new(); m];
        let mut bwd = vec![Vec::new(); m];
        for (k, &i) in indices.iter().enumerate() {
            for (j, v) in self.row(i) {
                let l = pos[j];
                if l != usize::MAX && l != k && v > 0.0 {
                    fwd[k].push(l);
                    bwd[l].push(k);
                }
            }
        }
        let reach_all = |adj: &Vec<Vec<usize>>| {
            let mut seen = vec![false; m];
            let mut queue = VecDeque::from([0]);
            seen[0] = true;
            while let Some(k) = queue.pop_front() {
                for &l in &adj[k] {
                    if !seen[l] {
                        seen[l] = true;
                        queue.push_back(l);
                    }
                }
            }
            seen.iter().all(|s| *s)
        };
        reach_all(&fwd) && reach_all(&bwd)
    }

    /// Matrix Market coordinate text (1-based indices); `comment` lines go
    /// after the banner.
    pub fn write_coordinate<W: Write>(&self, comment: &str, mut w: W) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        for line in comment.lines() {
            writeln!(w, "% {line}")?;
        }
        writeln!(w, "{} {} {}", self.len(), self.len(), self.nnz())?;
        for i in 0..self.len() {
            for (j, v) in self.row(i) {
                writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
            }
        }
        Ok(())
    }
}

/// Implicit Euler stepper for `dm/dt = A^T m` on cell masses.
#[derive(Debug, Clone)]
pub struct Evolver<'a> {
    op: &'a GridOperator,
    dt: f64,
    lu: Lu,
}

impl<'a> Evolver<'a> {
    /// Requires `dt * sup g < 1`, which makes `I - dt A^T` a non-singular
    /// M-matrix so that every step maps non-negative masses to non-negative masses.
    pub fn new(op: &'a GridOperator, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt * op.g_sup < 1.0) {
            return Err(Error::invalid(format!("time step {dt} must be positive with dt * sup g < 1")));
        }
        let n = op.len();
        let all: Vec<usize> = (0..n).collect();
        let mut a = op.dense(&all, true);
        for v in a.iter_mut() {
            *v *= -dt;
        }
        for i in 0..n {
            a[i * n + i] += 1.0;
        }
        Ok(Self { op, dt, lu: Lu::factor(n, a)? })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step_masses(&self, m: &[f64]) -> Result<Vec<f64>> {
        let mut next = self.lu.solve(m);
        let scale = next.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        for v in next.iter_mut() {
            if *v < 0.0 {
                // only roundoff may go below zero
                if *v < -1e-12 * scale {
                    return Err(Error::NonConvergence { iterations: 1, residual: *v });
                }
                *v = 0.0;
            }
        }
        Ok(next)
    }

    pub fn step(&self, u: &Field) -> Result<Field> {
        let m = self.step_masses(&u.masses(&self.op.grid))?;
        Ok(Field::from_masses(&self.op.grid, &m))
    }
}

fn check_field(op: &GridOperator, u0: &Field) -> Result<()> {
    if u0.values.len() != op.len() {
        return Err(Error::invalid("field length does not match the grid"));
    }
    if u0.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("field has non-finite entries"));
    }
    Ok(())
}

/// Density at time `t` by implicit Euler with step at most `dt`.
pub fn evolve(op: &GridOperator, u0: &Field, t: f64, dt: f64) -> Result<Field> {
    Ok(evolve_snapshots(op, u0, t, dt, 1)?.pop().expect("final snapshot").1)
}

/// Densities at `count + 1` equally spaced times from 0 to `t_final`.
pub fn evolve_snapshots(
    op: &GridOperator,
    u0: &Field,
    t_final: f64,
    dt: f64,
    count: usize,
) -> Result<Vec<(f64, Field)>> {
    check_field(op, u0)?;
    if !(t_final >= 0.0 && t_final.is_finite()) || count == 0 {
        return Err(Error::invalid("need a finite t_final >= 0 and at least one snapshot"));
    }
    let per_snapshot = ((t_final / count as f64) / dt).ceil().max(1.0) as usize;
    let step = t_final / (count * per_snapshot) as f64;
    let mut out = vec![(0.0, u0.clone())];
    if t_final == 0.0 {
        out.push((0.0, u0.clone()));
        return Ok(out);
    }
    let ev = Evolver::new(op, step)?;
    let mut m = u0.masses(&op.grid);
    for k in 1..=count {
        for _ in 0..per_snapshot {
            m = ev.step_masses(&m)?;
        }
        out.push((t_final * k as f64 / count as f64, Field::from_masses(&op.grid, &m)));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Leakage {
    /// Rate at which the normalized profile flows out past `x_max`.
    pub outflow: f64,
    /// Rate at which the normalized profile sends fragments below `x_min`.
    pub below_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenTriple {
    pub rho: f64,
    /// Right eigenvector, scaled so that `<nu, h> = 1`.
    pub h: Vec<f64>,
    /// Left eigenvector as a density, `sum nu_i width_i = 1`.
    pub nu: Vec<f64>,
    pub residual_right: f64,
    pub residual_left: f64,
    pub iterations: usize,
    pub shift: f64,
    pub leakage: Leakage,
}

const MAX_POWER_ITERATIONS: usize = 200_000;

/// Perron vector of a dense Metzler matrix `a` (size `n`) and its eigenvalue:
/// power iteration on `(q I - a)^{-1}`, then inverse iteration just above the
/// estimate.
fn perron(n: usize, a: &[f64], q: f64) -> Result<(f64, Vec<f64>, usize)> {
    let mut m = a.iter().map(|v| -v).collect::<Vec<_>>();
    for i in 0..n {
        m[i * n + i] += q;
    }
    let lu = Lu::factor(n, m)?;
    let mut v = vec![1.0 / n as f64; n];
    let mut mu = 0.0;
    let mut iterations = 0;
    let mut change = f64::INFINITY;
    while iterations < MAX_POWER_ITERATIONS {
        iterations += 1;
        let w = lu.solve(&v);
        mu = w.iter().sum::<f64>();
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::NonConvergence { iterations, residual: mu });
        }
        let w: Vec<f64> = w.iter().map(|x| x / mu).collect();
        change = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = w;
        if change < 1e-13 {
            break;
        }
    }
    if change > 1e-8 {
        return Err(Error::NonConvergence { iterations, residual: change });
    }
    let rho = q - 1.0 / mu;
    let sigma = rho + 1e-7 * (1.0 + rho.abs());
    let mut m = a.iter().map(|v| -v).collect::<Vec<_>>();
    for i in 0..n {
        m[i * n + i] += sigma;
    }
    if let Ok(lu) = Lu::factor(n, m) {
        for _ in 0..3 {
            let w = lu.solve(&v);
            let s: f64 = w.iter().sum();
            if !(s.is_finite() && s != 0.0) {
                break;
            }
            v = w.iter().map(|x| x / s).collect();
        }
    }
    let scale = v.iter().fold(0.0f64, |s, x| s.max(x.abs()));
    if v.iter().any(|x| *x < -1e-10 * scale) {
        return Err(Error::Reducible("Perron vector changes sign".into()));
    }
    for x in v.iter_mut() {
        *x = x.max(0.0);
    }
    let av = dense_apply(n, a, &v);
    let rho = dot(&v, &av) / dot(&v, &v);
    Ok((rho, v, iterations))
}

fn dense_apply(n: usize, a: &[f64], v: &[f64]) -> Vec<f64> {
    a.chunks_exact(n).map(|row| dot(row, v)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn residual(n: usize, a: &[f64], v: &[f64], rho: f64) -> f64 {
    let av = dense_apply(n, a, v);
    let r: f64 = av.iter().zip(v).map(|(x, y)| (x - rho * y).powi(2)).sum();
    (r / dot(v, v)).sqrt()
}

/// Leading eigenvalue with positive right and left eigenvectors.
pub fn leading_eigen(op: &GridOperator) -> Result<EigenTriple> {
    let n = op.len();
    let all: Vec<usize> = (0..n).collect();
    if !op.is_irreducible(&all) {
        return Err(Error::Reducible("discretized operator is not irreducible".into()));
    }
    let a = op.dense(&all, false);
    let at = op.dense(&all, true);
    let q = op.shift();
    let (_, h, it_r) = perron(n, &a, q)?;
    let (_, m, it_l) = perron(n, &at, q)?;
    let ah = dense_apply(n, &a, &h);
    let rho = dot(&m, &ah) / dot(&m, &h);
    let widths = op.grid.widths();
    let total: f64 = pairwise_sum(&m);
    let m: Vec<f64> = m.iter().map(|x| x / total).collect();
    let nu: Vec<f64> = m.iter().zip(widths).map(|(x, w)| x / w).collect();
    let pairing = dot(&m, &h);
    let h: Vec<f64> = h.iter().map(|x| x / pairing).collect();
    let leakage = Leakage {
        outflow: m[n - 1] * op.outflow_rate,
        below_min: dot(&m, &op.lumped),
    };
    Ok(EigenTriple {
        rho,
        residual_right: residual(n, &a, &h, rho),
        residual_left: residual(n, &at, &m, rho),
        h,
        nu,
        iterations: it_r + it_l,
        shift: q,
        leakage,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KilledSpectrum {
    pub a: f64,
    pub b: f64,
    pub rho: f64,
    pub nodes: Vec<f64>,
    pub h: Vec<f64>,
}

/// Leading eigenvalue of the operator killed outside `(a, b)`.
pub fn killed_spectral(model: &CoefficientModel, a: f64, b: f64, grid: &Grid) -> Result<KilledSpectrum> {
    killed_spectral_of(&assemble(model, grid)?, a, b)
}

/// [`killed_spectral`] on an already assembled operator.
pub fn killed_spectral_of(op: &GridOperator, a: f64, b: f64) -> Result<KilledSpectrum> {
    if !(a < b) {
        return Err(Error::invalid("killed interval needs a < b"));
    }
    let nodes = op.grid.nodes();
    let idx: Vec<usize> = (0..op.len()).filter(|&i| nodes[i] > a && nodes[i] < b).collect();
    if idx.is_empty() {
        return Err(Error::invalid(format!("no grid node inside ({a}, {b})")));
    }
    if !op.is_irreducible(&idx) {
        return Err(Error::Reducible(format!("restriction to ({a}, {b}) is not irreducible")));
    }
    let sub = op.dense(&idx, false);
    let (rho, h, _) = perron(idx.len(), &sub, op.shift())?;
    let top = h.iter().cloned().fold(0.0, f64::max);
    Ok(KilledSpectrum {
        a,
        b,
        rho,
        nodes: idx.iter().map(|&i| nodes[i]).collect(),
        h: h.iter().map(|x| x / top).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    /// Decay rate of the L1 distance to the profile.
    pub beta: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
    /// Slope of `ln(e^{-rho t} <u_t, 1>)`; near 0 when `rho` is right.
    pub mass_drift: f64,
    /// `beta <= 0`: no exponential convergence detected.
    pub nonpositive_slope: bool,
}

fn least_squares(ts: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = ts.len() as f64;
    let tm = ts.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = ts.iter().map(|t| (t - tm).powi(2)).sum();
    let sxy: f64 = ts.iter().zip(ys).map(|(t, y)| (t - tm) * (y - ym)).sum();
    let syy: f64 = ys.iter().map(|y| (y - ym).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, ym - slope * tm, r2)
}

/// Fits `ln || u_t / <u_t, 1> - nu ||_1 = c - beta t` over the snapshots.
pub fn convergence_rate(grid: &Grid, snapshots: &[(f64, Field)], rho: f64, profile: &Field) -> Result<RateFit> {
    if snapshots.len() < 4 {
        return Err(Error::invalid("convergence_rate needs at least 4 snapshots"));
    }
    let pm = profile.masses(grid);
    let ptotal = pairwise_sum(&pm);
    let mut ts = Vec::new();
    let mut ds = Vec::new();
    let mut masses = Vec::new();
    for (t, u) in snapshots {
        let m = u.masses(grid);
        let total = pairwise_sum(&m);
        if !(total > 0.0) {
            continue;
        }
        masses.push((*t, total.ln() - rho * t));
        let d: f64 = m.iter().zip(&pm).map(|(a, b)| (a / total - b / ptotal).abs()).sum();
        if d > 1e-12 {
            ts.push(*t);
            ds.push(d.ln());
        }
    }
    if ts.len() < 3 {
        return Err(Error::invalid("too few snapshots above the roundoff floor"));
    }
    let (slope, intercept, r_squared) = least_squares(&ts, &ds);
    let (mt, my): (Vec<f64>, Vec<f64>) = masses.into_iter().unzip();
    let (mass_drift, _, _) = least_squares(&mt, &my);
    Ok(RateFit {
        beta: -slope,
        intercept,
        r_squared,
        points: ts.len(),
        mass_drift,
        nonpositive_slope: !(slope < 0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{FragRate, GrowthRate, Kernel, Profile};

    fn benchmark() -> CoefficientModel {
        CoefficientModel::new(
            GrowthRate::affine(1.0, 0.5),
            FragRate::Constant(1.0),
            Kernel::self_similar(Profile::uniform_binary()),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn row_sums_and_metzler() {
        let grid = Grid::geometric(1e-3, 100.0, 120).unwrap();
        let op = assemble(&benchmark(), &grid).unwrap();
        assert!(op.off_diagonal_min() >= 0.0);
        assert!(op.row_sum_defect() < 1e-12, "{}", op.row_sum_defect());
    }

    #[test]
    fn constant_case_eigenvalue() {
        let grid = Grid::geometric(1e-4, 200.0, 300).unwrap();
        let e = leading_eigen(&assemble(&benchmark(), &grid).unwrap()).unwrap();
        assert!((e.rho - 1.0).abs() < 0.02, "{}", e.rho);
        assert!(e.residual_right < 1e-8 && e.residual_left < 1e-8, "{e:?}");
        let s: f64 = e.nu.iter().zip(grid.widths()).map(|(a, b)| a * b).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pure_transport_is_reducible() {
        let m = CoefficientModel::new(
            GrowthRate::affine(1.0, 0.5),
            FragRate::Constant(0.0),
            Kernel::self_similar(Profile::uniform_binary()),
            1.0,
        )
        .unwrap();
        let op = assemble(&m, &Grid::geometric(0.1, 10.0, 20).unwrap()).unwrap();
        assert!(matches!(leading_eigen(&op), Err(Error::Reducible(_))));
    }
}
