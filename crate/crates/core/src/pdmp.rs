//! Event-driven simulation of the piecewise-deterministic process that flows
//! along `tau` and jumps down at rate `B N` to a size drawn from
//! `k(x, .) / N(x)`.

use std::io::Write;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::Serialize;

use crate::coeffs::CoefficientModel;
use crate::error::{Error, Result};

/// A reproducible random stream: ChaCha8 keyed by the master seed, with the
/// stream index selecting an independent 2^64-block sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Stream index packed from a purpose tag, a block number and an index.
    pub fn derive(seed: u64, tag: u16, block: u16, index: u32) -> Self {
        Self::new(seed, (tag as u64) << 48 | (block as u64) << 32 | index as u64)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Flow { start_time: f64, start_mass: f64, duration: f64, end_mass: f64 },
    Jump { time: f64, pre: f64, post: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    HitTarget,
    ExitedInterval,
    HorizonReached,
    /// Stopped by the safety horizon or the mass ceiling before the rule fired.
    Capped,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StoppingRule {
    /// First time the process equals `y`, not counting time 0.
    HitTarget(f64),
    /// First exit from the open interval `(a, b)`.
    ExitInterval { a: f64, b: f64 },
    FixedHorizon(f64),
}

/// Receives the events of a trajectory as they are generated.
pub trait EventSink {
    fn flow(&mut self, start_time: f64, start_mass: f64, duration: f64, end_mass: f64);
    fn jump(&mut self, _time: f64, _pre: f64, _post: f64) {}
}

impl EventSink for () {
    fn flow(&mut self, _: f64, _: f64, _: f64, _: f64) {}
}

impl EventSink for Vec<Event> {
    fn flow(&mut self, start_time: f64, start_mass: f64, duration: f64, end_mass: f64) {
        if duration > 0.0 {
            self.push(Event::Flow { start_time, start_mass, duration, end_mass });
        }
    }

    fn jump(&mut self, time: f64, pre: f64, post: f64) {
        self.push(Event::Jump { time, pre, post });
    }
}

/// Summary of a simulated trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Outcome {
    pub termination: Termination,
    pub time: f64,
    pub mass: f64,
    /// `int_0^time g(X_s) ds`, the log of the Feynman-Kac weight.
    pub log_fk: f64,
    pub jumps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HoldingTime {
    After(f64),
    Never,
}

fn exp1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(Exp1)
}

/// Time to the next jump from `x`, by inverting the cumulative hazard along
/// the flow.
pub fn sample_holding_time<R: Rng + ?Sized>(model: &CoefficientModel, x: f64, rng: &mut R) -> Result<HoldingTime> {
    let e = exp1(rng);
    match model.hazard_inverse(x, e)? {
        Some(y) => Ok(HoldingTime::After(model.travel_time(x, y)?)),
        None => Ok(HoldingTime::Never),
    }
}

/// Same law as [`sample_holding_time`] by thinning a Poisson clock of rate
/// `sup B N`. Returns `Never` past `t_max`.
pub fn sample_holding_time_thinning<R: Rng + ?Sized>(
    model: &CoefficientModel,
    x: f64,
    t_max: f64,
    rng: &mut R,
) -> Result<HoldingTime> {
    let bound = model.jump_rate_bound();
    if bound == 0.0 {
        return Ok(HoldingTime::Never);
    }
    let mut t = 0.0;
    loop {
        t += exp1(rng) / bound;
        if t > t_max {
            return Ok(HoldingTime::Never);
        }
        let y = match model.flow(x, t) {
            Ok(y) => y,
            Err(Error::Overflow { .. }) => return Ok(HoldingTime::Never),
            Err(e) => return Err(e),
        };
        let u: f64 = rng.random();
        if u * bound < model.jump_rate(y) {
            return Ok(HoldingTime::After(t));
        }
    }
}

/// Post-jump size from a parent of size `x_pre`.
pub fn sample_jump_target<R: Rng + ?Sized>(model: &CoefficientModel, x_pre: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    model.kernel().sample(x_pre, u)
}

enum Stop {
    Target,
    Exit,
    Horizon,
    Ceiling,
    Jump,
}

/// Core event loop. Stops at the rule or at `horizon_cap`, whichever first.
pub fn simulate_with<R: Rng + ?Sized, S: EventSink>(
    model: &CoefficientModel,
    x0: f64,
    rule: StoppingRule,
    horizon_cap: f64,
    rng: &mut R,
    sink: &mut S,
) -> Result<Outcome> {
    if !(x0 >= 0.0 && x0.is_finite()) {
        return Err(Error::invalid(format!("initial mass must be finite and >= 0, got {x0}")));
    }
    if !(horizon_cap > 0.0 && horizon_cap.is_finite()) {
        return Err(Error::invalid("horizon cap must be positive and finite"));
    }
    let (t_end, rule_horizon) = match rule {
        StoppingRule::FixedHorizon(t) if t <= horizon_cap => (t, true),
        _ => (horizon_cap, false),
    };
    if let StoppingRule::ExitInterval { a, b } = rule {
        if !(x0 > a && x0 < b) {
            return Ok(Outcome {
                termination: Termination::ExitedInterval,
                time: 0.0,
                mass: x0,
                log_fk: 0.0,
                jumps: 0,
            });
        }
    }
    let ceiling = model.quadrature().mass_ceiling;
    let mut t = 0.0;
    let mut x = x0;
    let mut log_fk = 0.0;
    let mut jumps = 0usize;
    loop {
        let remaining = t_end - t;
        let (horizon_mass, overflow) = match model.flow(x, remaining) {
            Ok(m) => (m, false),
            Err(Error::Overflow { .. }) => (ceiling, true),
            Err(e) => return Err(e),
        };
        let mut stop_mass = horizon_mass;
        let mut stop = if overflow { Stop::Ceiling } else { Stop::Horizon };
        if let Some(y) = model.hazard_inverse(x, exp1(rng))? {
            if y < stop_mass {
                stop_mass = y;
                stop = Stop::Jump;
            }
        }
        match rule {
            // Ties go to the stopping rule.
            StoppingRule::HitTarget(y) if y > x && y <= stop_mass => {
                stop_mass = y;
                stop = Stop::Target;
            }
            StoppingRule::ExitInterval { b, .. } if b <= stop_mass => {
                stop_mass = b;
                stop = Stop::Exit;
            }
            _ => {}
        }
        let dt = match stop {
            Stop::Horizon => remaining,
            _ => model.travel_time(x, stop_mass)?.min(remaining),
        };
        log_fk += model.log_weight_between(x, stop_mass)?;
        sink.flow(t, x, dt, stop_mass);
        t += dt;
        x = stop_mass;
        let termination = match stop {
            Stop::Target => Termination::HitTarget,
            Stop::Exit => Termination::ExitedInterval,
            Stop::Horizon if rule_horizon => Termination::HorizonReached,
            Stop::Horizon | Stop::Ceiling => Termination::Capped,
            Stop::Jump => {
                let post = sample_jump_target(model, x, rng);
                sink.jump(t, x, post);
                jumps += 1;
                x = post;
                match rule {
                    StoppingRule::ExitInterval { a, .. } if post <= a => Termination::ExitedInterval,
                    _ => continue,
                }
            }
        };
        return Ok(Outcome { termination, time: t, mass: x, log_fk, jumps });
    }
}

/// A recorded trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Path {
    pub start_mass: f64,
    pub events: Vec<Event>,
    pub outcome: Outcome,
}

pub fn simulate<R: Rng + ?Sized>(
    model: &CoefficientModel,
    x0: f64,
    rule: StoppingRule,
    horizon_cap: f64,
    rng: &mut R,
) -> Result<Path> {
    let mut events = Vec::new();
    let outcome = simulate_with(model, x0, rule, horizon_cap, rng, &mut events)?;
    Ok(Path { start_mass: x0, events, outcome })
}

impl Path {
    pub fn jump_count(&self) -> usize {
        self.outcome.jumps
    }

    pub fn end_time(&self) -> f64 {
        self.outcome.time
    }

    /// Right-continuous state at time `t` (post-jump size at a jump time).
    pub fn state_at(&self, model: &CoefficientModel, t: f64) -> Result<f64> {
        if !(t >= 0.0 && t <= self.outcome.time) {
            return Err(Error::invalid(format!("time {t} outside the path's range")));
        }
        let mut mass = self.start_mass;
        for ev in &self.events {
            match *ev {
                Event::Flow { start_time, start_mass, duration, end_mass } => {
                    if t < start_time + duration {
                        return model.flow(start_mass, t - start_time).map(|m| m.min(end_mass));
                    }
                    mass = end_mass;
                }
                Event::Jump { time, post, .. } => {
                    if time > t {
                        return Ok(mass);
                    }
                    mass = post;
                }
            }
        }
        Ok(mass)
    }

    /// `e^{-q t} E_t`, with `E_t = exp(int_0^t g(X_s) ds)`.
    pub fn fk_weight(&self, model: &CoefficientModel, q: f64, t: f64) -> Result<f64> {
        Ok((self.log_fk_until(model, t)? - q * t).exp())
    }

    /// `int_0^t g(X_s) ds`.
    pub fn log_fk_until(&self, model: &CoefficientModel, t: f64) -> Result<f64> {
        if !(t >= 0.0 && t <= self.outcome.time * (1.0 + 1e-15)) {
            return Err(Error::invalid(format!("time {t} outside the path's range")));
        }
        let mut acc = 0.0;
        for ev in &self.events {
            if let Event::Flow { start_time, start_mass, duration, end_mass } = *ev {
                if start_time >= t {
                    break;
                }
                let upper = if t >= start_time + duration {
                    end_mass
                } else {
                    model.flow(start_mass, t - start_time)?.min(end_mass)
                };
                acc += model.log_weight_between(start_mass, upper)?;
            }
        }
        Ok(acc)
    }

    /// One record per event: `time,kind,mass`. Flow records carry the start
    /// of the segment, jump records the post-jump size, and a final `end`
    /// record the terminal state.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time,kind,mass")?;
        for ev in &self.events {
            match ev {
                Event::Flow { start_time, start_mass, .. } => writeln!(w, "{start_time:.17e},flow,{start_mass:.17e}")?,
                Event::Jump { time, post, .. } => writeln!(w, "{time:.17e},jump,{post:.17e}")?,
            }
        }
        let o = &self.outcome;
        writeln!(w, "{:.17e},end,{:.17e}", o.time, o.mass)?;
        Ok(())
    }
}

/// One hitting-time experiment from `x` to `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExcursionSample {
    pub hit: bool,
    /// Hitting time if `hit`, otherwise the time at which simulation stopped.
    pub time: f64,
    pub log_fk: f64,
    /// Stopped by the horizon cap rather than by hitting.
    pub truncated: bool,
    pub jumps: usize,
}

impl ExcursionSample {
    /// `e^{-q H} E_H` on `{H < cap}`, else 0.
    pub fn weight(&self, q: f64) -> f64 {
        if self.hit {
            (self.log_fk - q * self.time).exp()
        } else {
            0.0
        }
    }

    /// `H e^{-q H} E_H` on `{H < cap}`, else 0.
    pub fn weighted_time(&self, q: f64) -> f64 {
        self.time * self.weight(q)
    }
}

pub fn excursion<R: Rng + ?Sized>(
    model: &CoefficientModel,
    x: f64,
    y: f64,
    horizon_cap: f64,
    rng: &mut R,
) -> Result<ExcursionSample> {
    if !(y > 0.0) {
        return Err(Error::invalid("excursion target must be positive"));
    }
    let o = simulate_with(model, x, StoppingRule::HitTarget(y), horizon_cap, rng, &mut ())?;
    let hit = o.termination == Termination::HitTarget;
    Ok(ExcursionSample { hit, time: o.time, log_fk: o.log_fk, truncated: !hit, jumps: o.jumps })
}

/// Runs `n` independent excursions, the `i`-th on stream
/// `RngStream::derive(seed, tag, block, offset + i)`. Output order is the
/// index order regardless of scheduling.
pub fn excursion_batch(
    model: &CoefficientModel,
    x: f64,
    y: f64,
    horizon_cap: f64,
    seed: u64,
    tag: u16,
    block: u16,
    offset: u32,
    n: usize,
) -> Result<Vec<ExcursionSample>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::derive(seed, tag, block, offset + i as u32).rng();
            excursion(model, x, y, horizon_cap, &mut rng)
        })
        .collect()
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
    fn no_fragmentation_never_jumps() {
        let m = model(GrowthRate::Constant(1.0), 0.0);
        let mut rng = RngStream::new(1, 0).rng();
        assert_eq!(sample_holding_time(&m, 1.0, &mut rng).unwrap(), HoldingTime::Never);
        let p = simulate(&m, 0.0, StoppingRule::HitTarget(1.0), 10.0, &mut rng).unwrap();
        assert_eq!(p.outcome.termination, Termination::HitTarget);
        assert_eq!(p.outcome.time, 1.0);
        assert_eq!(p.jump_count(), 0);
    }

    #[test]
    fn downward_target_is_unreachable_without_jumps() {
        let m = model(GrowthRate::Constant(1.0), 0.0);
        let mut rng = RngStream::new(1, 0).rng();
        let e = excursion(&m, 2.0, 1.0, 5.0, &mut rng).unwrap();
        assert!(!e.hit && e.truncated);
        assert_eq!(e.weight(0.3), 0.0);
    }

    #[test]
    fn same_stream_same_path() {
        let m = model(GrowthRate::affine(1.0, 0.5), 1.0);
        let a = simulate(&m, 1.0, StoppingRule::FixedHorizon(5.0), 10.0, &mut RngStream::new(9, 3).rng()).unwrap();
        let b = simulate(&m, 1.0, StoppingRule::FixedHorizon(5.0), 10.0, &mut RngStream::new(9, 3).rng()).unwrap();
        assert_eq!(a, b);
        let c = simulate(&m, 1.0, StoppingRule::FixedHorizon(5.0), 10.0, &mut RngStream::new(9, 4).rng()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn constant_g_weight_is_exponential() {
        let m = model(GrowthRate::affine(1.0, 1.0), 1.0);
        let p = simulate(&m, 1.0, StoppingRule::FixedHorizon(3.0), 10.0, &mut RngStream::new(2, 0).rng()).unwrap();
        for t in [0.0, 0.7, 1.9, 3.0] {
            let w = p.fk_weight(&m, 0.0, t).unwrap();
            assert!((w - t.exp()).abs() / t.exp() < 1e-12);
            assert!((p.fk_weight(&m, 1.0, t).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exit_interval_dichotomy() {
        let m = model(GrowthRate::affine(1.0, 0.5), 1.0);
        for s in 0..200 {
            let p = simulate(&m, 1.0, StoppingRule::ExitInterval { a: 0.5, b: 2.0 }, 100.0, &mut RngStream::new(5, s).rng())
                .unwrap();
            assert_eq!(p.outcome.termination, Termination::ExitedInterval);
            assert!(p.outcome.mass == 2.0 || p.outcome.mass <= 0.5);
        }
    }

    #[test]
    fn state_at_follows_events() {
        let m = model(GrowthRate::Constant(1.0), 1.0);
        let p = simulate(&m, 1.0, StoppingRule::FixedHorizon(4.0), 10.0, &mut RngStream::new(3, 1).rng()).unwrap();
        assert_eq!(p.state_at(&m, 0.0).unwrap(), 1.0);
        assert!((p.state_at(&m, 4.0).unwrap() - p.outcome.mass).abs() < 1e-12);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("time,kind,mass\n"));
        assert_eq!(text.lines().filter(|l| l.contains(",jump,")).count(), p.jump_count());
    }
}
