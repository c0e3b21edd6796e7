use rayon::prelude::*;
use serde::Serialize;

use super::{tags, HFunction};
use crate::coeffs::CoefficientModel;
use crate::error::{Error, Result};
use crate::numerics::mean_and_stderr;
use crate::pdmp::{simulate, RngStream, StoppingRule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MartingaleRow {
    pub t: f64,
    pub mean: f64,
    /// Monte Carlo standard error of the mean.
    pub stderr: f64,
    /// Standard error including the uncertainty of the exponent and of `h`.
    pub joint_stderr: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub kind: &'static str,
    pub q: f64,
    pub x: f64,
    pub paths: usize,
    pub rows: Vec<MartingaleRow>,
    pub pass: bool,
}

/// `e^{-q t} E_t h(X_t) / h(x)` at each requested time, one row per path.
#[allow(clippy::too_many_arguments)]
fn sample_functional(
    model: &CoefficientModel,
    x: f64,
    q: f64,
    h: &HFunction,
    times: &[f64],
    n_paths: usize,
    seed: u64,
    tag: u16,
) -> Result<Vec<Vec<f64>>> {
    if n_paths < 2 || times.is_empty() {
        return Err(Error::invalid("need at least two paths and one time"));
    }
    if times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return Err(Error::invalid("times must be finite and non-negative"));
    }
    let t_max = times.iter().cloned().fold(0.0, f64::max);
    let h0 = h.eval(x);
    (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::derive(seed, tag, 0, i as u32).rng();
            let path = simulate(model, x, StoppingRule::FixedHorizon(t_max), t_max.max(f64::MIN_POSITIVE), &mut rng)?;
            times
                .iter()
                .map(|&t| {
                    let t = t.min(path.end_time());
                    let log_fk = path.log_fk_until(model, t)?;
                    let xt = path.state_at(model, t)?;
                    Ok((log_fk - q * t).exp() * h.eval(xt) / h0)
                })
                .collect()
        })
        .collect()
}

fn columns(samples: &[Vec<f64>], k: usize) -> Vec<f64> {
    samples.iter().map(|row| row[k]).collect()
}

/// Checks `E_x[M_t] = 1` for `M_t = e^{-lambda t} E_t h(X_t) / h(x)`.
///
/// `lambda_sd` and `h_rel_sd` are the standard deviations of the exponent and
/// the relative one of `h`; they widen the acceptance band.
#[allow(clippy::too_many_arguments)]
pub fn martingale_test(
    model: &CoefficientModel,
    x: f64,
    lambda: f64,
    lambda_sd: f64,
    h: &HFunction,
    h_rel_sd: f64,
    times: &[f64],
    n_paths: usize,
    confidence: f64,
    seed: u64,
) -> Result<MartingaleReport> {
    let samples = sample_functional(model, x, lambda, h, times, n_paths, seed, tags::MARTINGALE)?;
    let rows: Vec<MartingaleRow> = times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let (mean, stderr) = mean_and_stderr(&columns(&samples, k));
            let joint = (stderr.powi(2) + (t * lambda_sd * mean).powi(2) + 2.0 * (h_rel_sd * mean).powi(2)).sqrt();
            MartingaleRow { t, mean, stderr, joint_stderr: joint, pass: (mean - 1.0).abs() <= confidence * joint + 1e-12 }
        })
        .collect();
    let pass = rows.iter().all(|r| r.pass);
    Ok(MartingaleReport { kind: "martingale", q: lambda, x, paths: n_paths, rows, pass })
}

/// Checks `E_x[S_t] <= 1` for `S_t = e^{-q t} E_t h_q(X_t) / h_q(x)`, `q` above the exponent.
#[allow(clippy::too_many_arguments)]
pub fn supermartingale_test(
    model: &CoefficientModel,
    x: f64,
    q: f64,
    h_q: &HFunction,
    h_rel_sd: f64,
    times: &[f64],
    n_paths: usize,
    confidence: f64,
    seed: u64,
) -> Result<MartingaleReport> {
    let samples = sample_functional(model, x, q, h_q, times, n_paths, seed, tags::SUPERMARTINGALE)?;
    let rows: Vec<MartingaleRow> = times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let (mean, stderr) = mean_and_stderr(&columns(&samples, k));
            let joint = (stderr.powi(2) + 2.0 * (h_rel_sd * mean).powi(2)).sqrt();
            MartingaleRow { t, mean, stderr, joint_stderr: joint, pass: mean <= 1.0 + confidence * joint + 1e-12 }
        })
        .collect();
    let pass = rows.iter().all(|r| r.pass);
    Ok(MartingaleReport { kind: "supermartingale", q, x, paths: n_paths, rows, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{FragRate, GrowthRate, Kernel, Profile};

    #[test]
    fn constant_case_is_exact() {
        let m = CoefficientModel::new(
            GrowthRate::affine(1.0, 0.5),
            FragRate::Constant(1.0),
            Kernel::self_similar(Profile::uniform_binary()),
            1.0,
        )
        .unwrap();
        let r = martingale_test(&m, 1.0, 1.0, 0.0, &HFunction::Constant(1.0), 0.0, &[0.5, 1.0, 2.0], 200, 3.0, 4)
            .unwrap();
        assert!(r.pass);
        for row in &r.rows {
            assert!((row.mean - 1.0).abs() < 1e-12 && row.stderr < 1e-12, "{row:?}");
        }
    }
}
