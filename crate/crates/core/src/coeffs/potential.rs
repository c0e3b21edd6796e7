//! Cumulative integrals `int_x^y f(z) dz` of non-negative functions along
//! the mass axis, with fast inversion. The three integrands the simulator
//! needs are `1/tau` (travel time), `B N / tau` (jump hazard) and
//! `B (N - 1) / tau` (log Feynman-Kac weight).

use std::fmt;
use std::sync::Arc;

use crate::numerics::{self, gauss_legendre};

pub(crate) type Integrand = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

const NODES_PER_DECADE: f64 = 32.0;
const CHEB: usize = 12;

/// Chebyshev expansions of `f` and of its antiderivative on one table cell;
/// `None` when the expansion does not reproduce the cell integral.
#[derive(Clone)]
struct Cheb {
    mid: f64,
    half: f64,
    f: [f64; CHEB],
    anti: [f64; CHEB + 1],
}

fn clenshaw(c: &[f64], u: f64) -> f64 {
    let (mut d, mut dd) = (0.0, 0.0);
    for &cj in c[1..].iter().rev() {
        let sv = d;
        d = 2.0 * u * d - dd + cj;
        dd = sv;
    }
    u * d - dd + 0.5 * c[0]
}

impl Cheb {
    fn fit(f: &dyn Fn(f64) -> f64, a: f64, b: f64, exact: f64) -> Option<Self> {
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        let n = CHEB as f64;
        let samples: Vec<f64> = (0..CHEB)
            .map(|j| f(mid + half * (std::f64::consts::PI * (j as f64 + 0.5) / n).cos()))
            .collect();
        let mut c = [0.0; CHEB];
        for (k, ck) in c.iter_mut().enumerate() {
            let s: f64 = samples
                .iter()
                .enumerate()
                .map(|(j, v)| v * (std::f64::consts::PI * k as f64 * (j as f64 + 0.5) / n).cos())
                .sum();
            *ck = 2.0 * s / n;
        }
        let mut anti = [0.0; CHEB + 1];
        let con = 0.5 * half;
        for k in 1..=CHEB {
            let next = if k + 1 < CHEB { c[k + 1] } else { 0.0 };
            anti[k] = con * (c[k - 1] - next) / k as f64;
        }
        let at_lo: f64 = (1..=CHEB).map(|k| if k % 2 == 0 { anti[k] } else { -anti[k] }).sum();
        anti[0] = -2.0 * at_lo;
        let cell = Self { mid, half, f: c, anti };
        let total = cell.antiderivative(b);
        let tol = 1e-13 * exact.abs().max(f64::MIN_POSITIVE);
        let half_exact = gauss_legendre(f, a, mid);
        if (total - exact).abs() <= tol && (cell.antiderivative(mid) - half_exact).abs() <= tol {
            Some(cell)
        } else {
            None
        }
    }

    fn u(&self, z: f64) -> f64 {
        ((z - self.mid) / self.half).clamp(-1.0, 1.0)
    }

    /// `int_{cell start}^z f`.
    fn antiderivative(&self, z: f64) -> f64 {
        clenshaw(&self.anti, self.u(z))
    }

    fn value(&self, z: f64) -> f64 {
        clenshaw(&self.f, self.u(z))
    }
}

#[derive(Clone)]
pub(crate) struct PotentialTable {
    f: Integrand,
    nodes: Vec<f64>,
    /// `int_{nodes[0]}^{nodes[k]} f`
    cum: Vec<f64>,
    cells: Vec<Option<Cheb>>,
    /// Local power law `f(z) ~ f(z_edge) (z / z_edge)^s` outside the table.
    lo_value: f64,
    lo_exponent: f64,
    hi_value: f64,
    hi_exponent: f64,
}

impl fmt::Debug for PotentialTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PotentialTable")
            .field("nodes", &self.nodes.len())
            .field("lo_exponent", &self.lo_exponent)
            .field("hi_exponent", &self.hi_exponent)
            .finish()
    }
}

/// `int_a^b c (z / z_ref)^s dz` with `c = value`, `0 <= a <= b`.
fn power_piece(value: f64, z_ref: f64, s: f64, a: f64, b: f64) -> f64 {
    if value == 0.0 || b <= a {
        return 0.0;
    }
    let e = s + 1.0;
    if e.abs() < 1e-12 {
        if a == 0.0 {
            return f64::INFINITY;
        }
        return value * z_ref * (b / a).ln();
    }
    if a == 0.0 && e < 0.0 {
        return f64::INFINITY;
    }
    let ra = (a / z_ref).powf(e);
    let rb = (b / z_ref).powf(e);
    value * z_ref * (rb - ra) / e
}

/// Smallest `b >= a` with `power_piece(.., a, b) = v`, if finite.
fn power_piece_inverse(value: f64, z_ref: f64, s: f64, a: f64, v: f64) -> Option<f64> {
    if v == 0.0 {
        return Some(a);
    }
    if value == 0.0 {
        return None;
    }
    let e = s + 1.0;
    if e.abs() < 1e-12 {
        return Some(a * (v / (value * z_ref)).exp());
    }
    let target = (a / z_ref).powf(e) + v * e / (value * z_ref);
    if target <= 0.0 {
        return None;
    }
    let b = z_ref * target.powf(1.0 / e);
    b.is_finite().then_some(b)
}

impl PotentialTable {
    /// `exponent_at_zero`: declared `s` with `f(z) ~ z^s` at 0; measured from
    /// the table when `None`.
    pub(crate) fn new(f: Integrand, floor: f64, ceiling: f64, exponent_at_zero: Option<f64>) -> Self {
        let n = (((ceiling / floor).log10() * NODES_PER_DECADE).ceil() as usize).max(2) + 1;
        let nodes = numerics::geomspace(floor, ceiling, n);
        let mut cum = Vec::with_capacity(n);
        let mut cells = Vec::with_capacity(n - 1);
        cum.push(0.0);
        for k in 0..n - 1 {
            let piece = gauss_legendre(|z| f(z), nodes[k], nodes[k + 1]).max(0.0);
            cum.push(cum[k] + piece);
            cells.push(Cheb::fit(&|z| f(z), nodes[k], nodes[k + 1], piece));
        }
        let log_slope = |a: f64, b: f64| {
            let (fa, fb) = (f(a), f(b));
            if fa > 0.0 && fb > 0.0 {
                (fb / fa).ln() / (b / a).ln()
            } else {
                0.0
            }
        };
        let lo_exponent = exponent_at_zero.unwrap_or_else(|| log_slope(nodes[0], nodes[1]));
        let hi_exponent = log_slope(nodes[n - 2], nodes[n - 1]);
        Self {
            lo_value: f(nodes[0]),
            hi_value: f(nodes[n - 1]),
            f,
            nodes,
            cum,
            cells,
            lo_exponent,
            hi_exponent,
        }
    }

    fn last(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Index of the last node `<= x`, for `x` inside the table.
    fn cell(&self, x: f64) -> usize {
        (self.nodes.partition_point(|&z| z <= x).max(1) - 1).min(self.last() - 1)
    }

    /// `int_{nodes[k]}^z f` for `z` in cell `k`.
    fn from_node(&self, k: usize, z: f64) -> f64 {
        match &self.cells[k] {
            Some(c) => c.antiderivative(z),
            None => gauss_legendre(|v| (self.f)(v), self.nodes[k], z),
        }
    }

    fn inside(&self, x: f64, y: f64) -> f64 {
        let (kx, ky) = (self.cell(x), self.cell(y));
        if kx == ky {
            return match &self.cells[kx] {
                Some(c) => (c.antiderivative(y) - c.antiderivative(x)).max(0.0),
                None => gauss_legendre(|z| (self.f)(z), x, y),
            };
        }
        let head = self.cum[kx + 1] - self.cum[kx] - self.from_node(kx, x);
        let tail = self.from_node(ky, y);
        head.max(0.0) + (self.cum[ky] - self.cum[kx + 1]) + tail
    }

    /// `int_x^y f`, for `0 <= x <= y`; may be infinite.
    pub(crate) fn integral(&self, x: f64, y: f64) -> f64 {
        if y <= x {
            return 0.0;
        }
        let z0 = self.nodes[0];
        let zn = self.nodes[self.last()];
        let mut acc = 0.0;
        let mut a = x;
        if a < z0 {
            let b = y.min(z0);
            acc += power_piece(self.lo_value, z0, self.lo_exponent, a, b);
            a = b;
        }
        if a < y && a < zn {
            let b = y.min(zn);
            acc += self.inside(a, b);
            a = b;
        }
        if a < y {
            acc += power_piece(self.hi_value, zn, self.hi_exponent, a, y);
        }
        acc
    }

    /// Smallest `y >= x` with `integral(x, y) = v`; `None` if the remaining
    /// integral to infinity is smaller than `v`.
    pub(crate) fn inverse(&self, x: f64, v: f64) -> Option<f64> {
        if v <= 0.0 {
            return Some(x);
        }
        let z0 = self.nodes[0];
        let zn = self.nodes[self.last()];
        let mut a = x;
        let mut v = v;
        if a < z0 {
            let piece = power_piece(self.lo_value, z0, self.lo_exponent, a, z0);
            if v <= piece {
                return power_piece_inverse(self.lo_value, z0, self.lo_exponent, a, v).map(|y| y.min(z0));
            }
            v -= piece;
            a = z0;
        }
        if a < zn {
            let ka = self.cell(a);
            let start = self.cum[ka] + self.from_node(ka, a);
            let target = start + v;
            if target < self.cum[self.last()] {
                let k = (self.cum.partition_point(|&c| c <= target).max(1) - 1).max(ka);
                if let Some(c) = &self.cells[k] {
                    let lo = if k == ka { a } else { self.nodes[k] };
                    let goal = if k == ka { target - self.cum[ka] } else { target - self.cum[k] };
                    return Some(solve_cheb(c, lo, self.nodes[k + 1], goal));
                }
                let lo = if k == ka { a } else { self.nodes[k] };
                let need = if k == ka { target - start } else { target - self.cum[k] };
                return Some(self.solve_in_cell(lo, self.nodes[k + 1], need));
            }
            v = target - self.cum[self.last()];
            a = zn;
        }
        power_piece_inverse(self.hi_value, zn, self.hi_exponent, a, v)
    }

    /// Root of `int_lo^y f = need` for `y` in `[lo, hi]`.
    fn solve_in_cell(&self, lo: f64, hi: f64, need: f64) -> f64 {
        let full = gauss_legendre(|z| (self.f)(z), lo, hi);
        if need >= full {
            return hi;
        }
        let (mut a, mut b) = (lo, hi);
        let mut y = lo + (hi - lo) * (need / full).clamp(0.0, 1.0);
        for _ in 0..100 {
            let r = gauss_legendre(|z| (self.f)(z), lo, y) - need;
            if r > 0.0 {
                b = y;
            } else {
                a = y;
            }
            let d = (self.f)(y);
            let mut next = if d > 0.0 { y - r / d } else { f64::NAN };
            if !(next > a && next < b) {
                next = 0.5 * (a + b);
            }
            if (next - y).abs() <= 1e-15 * y.abs() || b - a <= 1e-15 * b.abs() {
                return next;
            }
            y = next;
        }
        y
    }

    /// Whether `int_0^1 f` is finite.
    pub(crate) fn finite_at_zero(&self) -> bool {
        self.integral(0.0, 1.0).is_finite()
    }
}

/// Root of `c.antiderivative(y) = goal` for `y` in `[lo, hi]`.
fn solve_cheb(c: &Cheb, lo: f64, hi: f64, goal: f64) -> f64 {
    let (g_lo, g_hi) = (c.antiderivative(lo), c.antiderivative(hi));
    if goal >= g_hi {
        return hi;
    }
    if goal <= g_lo {
        return lo;
    }
    let (mut a, mut b) = (lo, hi);
    let mut y = lo + (hi - lo) * ((goal - g_lo) / (g_hi - g_lo));
    for _ in 0..100 {
        let r = c.antiderivative(y) - goal;
        if r > 0.0 {
            b = y;
        } else {
            a = y;
        }
        let d = c.value(y);
        let mut next = if d > 0.0 { y - r / d } else { f64::NAN };
        if !(next > a && next < b) {
            next = 0.5 * (a + b);
        }
        if (next - y).abs() <= 1e-15 * y.abs() || b - a <= 1e-15 * b.abs() {
            return next;
        }
        y = next;
    }
    y
}

/// How a cumulative integral is evaluated.
#[derive(Debug, Clone)]
pub(crate) enum Potential {
    Zero,
    /// `c` times the travel time (the integrand is `c / tau`).
    TravelScaled(f64),
    Table(PotentialTable),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_integrates_and_inverts_inverse_square_root() {
        let f: Integrand = Arc::new(|z: f64| z.powf(-0.5));
        let t = PotentialTable::new(f, 1e-10, 1e12, Some(-0.5));
        assert!((t.integral(0.0, 1.0) - 2.0).abs() < 1e-10);
        assert!((t.integral(0.25, 4.0) - 3.0).abs() < 1e-12);
        let y = t.inverse(0.0, 2.0).unwrap();
        assert!((y - 1.0).abs() < 1e-10, "{y}");
        let y = t.inverse(0.3, 0.01).unwrap();
        assert!((t.integral(0.3, y) - 0.01).abs() < 1e-14);
        let far = t.inverse(1.0, 1e7).unwrap();
        assert!((far.sqrt() - 0.5e7 - 1.0).abs() / far.sqrt() < 1e-10);
    }

    #[test]
    fn finite_total_integral_has_no_inverse_beyond() {
        let f: Integrand = Arc::new(|z: f64| 1.0 / ((1.0 + z) * (1.0 + z)));
        let t = PotentialTable::new(f, 1e-10, 1e12, None);
        assert!((t.integral(0.0, f64::INFINITY) - 1.0).abs() < 1e-9);
        assert!(t.inverse(0.0, 1.5).is_none());
        let y = t.inverse(0.0, 0.5).unwrap();
        assert!((y - 1.0).abs() < 1e-9);
    }
}
