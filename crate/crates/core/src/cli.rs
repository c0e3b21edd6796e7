//! Batch commands behind the `growfrag` binary. Every output file starts
//! with the SHA-256 of the configuration text and the seed; nothing
//! depending on timing or on the worker count is written.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::coeffs::{load_config, validate, LoadedConfig, ValidationReport};
use crate::criteria::{self, CriteriaReport, LyapunovSpec, SampleGrid};
use crate::error::{Error, Result};
use crate::malthus::{
    self, estimate_h, estimate_profile, martingale_test, supermartingale_test, tags, MalthusResult, MalthusSettings,
    MartingaleReport, ProfileEstimate,
};
use crate::numerics::geomspace;
use crate::spectral::{self, EigenTriple, Field, Grid, RateFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Validate,
    Malthus,
    Pde,
    Criteria,
    All,
}

#[derive(Debug, Clone, Default)]
pub struct CliOptions {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// A loaded configuration with the command-line overrides applied.
#[derive(Debug, Clone)]
pub struct Run {
    pub loaded: LoadedConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Run {
    pub fn new(opts: &CliOptions) -> Result<Self> {
        let loaded = load_config(&opts.config)?;
        let seed = opts.seed.or(loaded.config.run.seed).ok_or_else(|| Error::Config {
            line: 1,
            key: "run.seed".into(),
            message: "a seed is required (set run.seed or pass --seed)".into(),
        })?;
        let out = opts
            .out
            .clone()
            .or_else(|| loaded.config.run.out.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok(Self { loaded, seed, out })
    }

    fn header(&self, what: &str) -> String {
        format!("growfrag {what}\nconfig_sha256={}\nseed={}", self.loaded.hash, self.seed)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_json<T: Serialize>(&self, name: &str, body: &T) -> Result<()> {
        #[derive(Serialize)]
        struct Stamped<'a, T> {
            config_sha256: &'a str,
            seed: u64,
            #[serde(flatten)]
            body: &'a T,
        }
        let stamped = Stamped { config_sha256: &self.loaded.hash, seed: self.seed, body };
        let mut text = serde_json::to_string_pretty(&stamped)?;
        text.push('\n');
        write_file(&self.path(name), text.as_bytes())
    }

    fn csv(&self, name: &str, columns: &str) -> Result<CsvFile> {
        let path = self.path(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut w = BufWriter::new(fs::File::create(&path)?);
        for line in self.header(name).lines() {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "{columns}")?;
        Ok(CsvFile(w))
    }
}

struct CsvFile(BufWriter<fs::File>);

impl CsvFile {
    fn row(&mut self, values: &[String]) -> Result<()> {
        writeln!(self.0, "{}", values.join(","))?;
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.0.flush()?;
        Ok(())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn num(v: f64) -> String {
    format!("{v:.12e}")
}

/// Exit code for an error surfacing from a command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

/// Runs `cmd` on a worker pool of the requested size and returns the exit code.
pub fn run(cmd: Command, opts: &CliOptions) -> i32 {
    let run = match Run::new(opts) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let workers = opts.workers.or(run.loaded.config.run.workers);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_FAILURE;
        }
    };
    let result = pool.install(|| match cmd {
        Command::Validate => cmd_validate(&run),
        Command::Malthus => cmd_malthus(&run).map(|_| EXIT_OK),
        Command::Pde => cmd_pde(&run).map(|_| EXIT_OK),
        Command::Criteria => cmd_criteria(&run, None).map(|_| EXIT_OK),
        Command::All => cmd_all(&run),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Writes `validate.json`; exit code 1 when a hard assumption fails.
pub fn cmd_validate(run: &Run) -> Result<i32> {
    let report = validate(&run.loaded.model);
    run.write_json("validate.json", &report)?;
    print_validation(&report);
    Ok(if report.hard_failure() { EXIT_FAILURE } else { EXIT_OK })
}

fn print_validation(report: &ValidationReport) {
    for e in &report.entries {
        println!("{:<36} {:?}{}", e.id, e.status, if e.hard { " (hard)" } else { "" });
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MalthusSummary {
    /// `ok` or `no_bracket`.
    pub outcome: &'static str,
    pub result: Option<MalthusResult>,
    pub h_max_relative_stderr: Option<f64>,
    pub h_continuity_flags: Vec<f64>,
    pub profile_integral: Option<f64>,
    pub profile_pairing: Option<f64>,
    pub martingale_pass: Option<bool>,
    pub supermartingale_pass: Option<bool>,
    pub detail: Option<String>,
}

#[derive(Debug, Clone)]
pub struct MalthusOutputs {
    pub summary: MalthusSummary,
    pub profile: Option<ProfileEstimate>,
    pub martingale: Vec<MartingaleReport>,
}

pub fn malthus_settings(run: &Run) -> MalthusSettings {
    let m = &run.loaded.config.malthus;
    MalthusSettings {
        initial_paths: m.initial_paths,
        budget: m.budget,
        horizon: m.horizon,
        tolerance: m.tolerance,
        confidence: m.confidence,
        curve_points: m.curve_points,
        seed: run.seed,
    }
}

/// Exponent, `h`, profile and martingale checks: `malthus.json`,
/// `L_curve.csv`, `profile.csv`, `martingale.csv`.
pub fn cmd_malthus(run: &Run) -> Result<MalthusOutputs> {
    let cfg = &run.loaded.config;
    let model = &run.loaded.model;
    let x0 = model.x0();
    let settings = malthus_settings(run);
    let result = match malthus::solve_malthus(model, x0, &settings) {
        Ok(r) => r,
        Err(Error::NoBracket { lo, hi }) => {
            let summary = MalthusSummary {
                outcome: "no_bracket",
                result: None,
                h_max_relative_stderr: None,
                h_continuity_flags: Vec::new(),
                profile_integral: None,
                profile_pairing: None,
                martingale_pass: None,
                supermartingale_pass: None,
                detail: Some(format!("L(q) < 1 for every probed q in [{lo}, {hi}]")),
            };
            run.write_json("malthus.json", &summary)?;
            println!("no bracket: L(q) < 1 over [{lo}, {hi}]");
            return Ok(MalthusOutputs { summary, profile: None, martingale: Vec::new() });
        }
        Err(e) => return Err(e),
    };
    let lambda = result.lambda;

    let mut curve = run.csv("L_curve.csv", "q,estimate,stderr,samples,truncated")?;
    for p in &result.curve {
        curve.row(&[num(p.q), num(p.estimate), num(p.stderr), p.samples.to_string(), p.truncated.to_string()])?;
    }
    curve.finish()?;

    let (lo, hi) = run.loaded.profile_grid();
    let nodes = geomspace(lo, hi, cfg.profile.nodes.max(2));
    let horizon = cfg.malthus.horizon;
    let h = estimate_h(model, &nodes, lambda, x0, cfg.profile.paths_per_node, horizon, run.seed, tags::HARMONIC)?;
    let profile = estimate_profile(model, &h, lambda, cfg.profile.paths_per_node, horizon, run.seed)?;
    let mut pcsv = run.csv("profile.csv", "x,h,h_stderr,lprime,lprime_stderr,nu,nu_stderr,from_crossings")?;
    for i in 0..nodes.len() {
        pcsv.row(&[
            num(nodes[i]),
            num(h.values[i]),
            num(h.stderr[i]),
            num(profile.lprime[i]),
            num(profile.lprime_stderr[i]),
            num(profile.nu[i]),
            num(profile.nu_stderr[i]),
            (profile.from_crossings[i] as u8).to_string(),
        ])?;
    }
    pcsv.finish()?;

    let mt = &cfg.martingale;
    let lambda_sd = result.half_width() / settings.confidence;
    let h_fn = h.function()?;
    let mart = martingale_test(
        model,
        x0,
        lambda,
        lambda_sd,
        &h_fn,
        h.max_relative_stderr(),
        &mt.times,
        mt.paths,
        settings.confidence,
        run.seed,
    )?;
    let q_super = lambda + mt.super_shift;
    let h_q = estimate_h(model, &nodes, q_super, x0, cfg.profile.paths_per_node, horizon, run.seed, tags::HARMONIC_SHIFTED)?;
    let sup = supermartingale_test(
        model,
        x0,
        q_super,
        &h_q.function()?,
        h_q.max_relative_stderr(),
        &mt.times,
        mt.paths,
        settings.confidence,
        run.seed,
    )?;
    let mut mcsv = run.csv("martingale.csv", "kind,q,t,mean,stderr,joint_stderr,pass")?;
    for rep in [&mart, &sup] {
        for r in &rep.rows {
            mcsv.row(&[
                rep.kind.to_string(),
                num(rep.q),
                num(r.t),
                num(r.mean),
                num(r.stderr),
                num(r.joint_stderr),
                (r.pass as u8).to_string(),
            ])?;
        }
    }
    mcsv.finish()?;

    let summary = MalthusSummary {
        outcome: "ok",
        h_max_relative_stderr: Some(h.max_relative_stderr()),
        h_continuity_flags: h.continuity_flags.iter().map(|&i| nodes[i]).collect(),
        profile_integral: Some(profile.integral),
        profile_pairing: Some(profile.pairing),
        martingale_pass: Some(mart.pass),
        supermartingale_pass: Some(sup.pass),
        detail: None,
        result: Some(result),
    };
    run.write_json("malthus.json", &summary)?;
    if let Some(r) = &summary.result {
        println!(
            "lambda = {:.6} in [{:.6}, {:.6}] ({:?}, {:?}); int nu = {:.4}; martingale {}",
            r.lambda,
            r.ci.0,
            r.ci.1,
            r.status,
            r.certificate,
            profile.integral,
            if mart.pass && sup.pass { "pass" } else { "FAIL" }
        );
    }
    Ok(MalthusOutputs { summary, profile: Some(profile), martingale: vec![mart, sup] })
}

#[derive(Debug, Clone, Serialize)]
pub struct Refinement {
    pub nodes: usize,
    pub rho: f64,
    /// `|rho - rho_refined| / |rho_refined|`.
    pub relative_drift: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PdeSummary {
    pub nodes: usize,
    pub grid_min: f64,
    pub grid_max: f64,
    pub rho: f64,
    pub residual_right: f64,
    pub residual_left: f64,
    pub leakage: spectral::Leakage,
    pub row_sum_defect: f64,
    pub off_diagonal_min: f64,
    pub refinement: Option<Refinement>,
    pub fit: Option<RateFit>,
    pub fit_error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct PdeOutputs {
    pub grid: Grid,
    pub eigen: EigenTriple,
    pub summary: PdeSummary,
}

/// Eigen-triple, evolution snapshots and the convergence rate fit:
/// `eigen.csv`, `snapshots/*.csv`, `rate.json`, `operator.mtx`.
pub fn cmd_pde(run: &Run) -> Result<PdeOutputs> {
    let cfg = &run.loaded.config.pde;
    let model = &run.loaded.model;
    let (lo, hi) = run.loaded.pde_grid();
    let grid = Grid::geometric(lo, hi, cfg.nodes)?;
    let op = spectral::assemble(model, &grid)?;
    let eigen = spectral::leading_eigen(&op)?;

    let mut ecsv = run.csv("eigen.csv", "x,width,h,nu")?;
    for i in 0..grid.len() {
        ecsv.row(&[num(grid.nodes()[i]), num(grid.widths()[i]), num(eigen.h[i]), num(eigen.nu[i])])?;
    }
    ecsv.finish()?;
    let mut mtx = BufWriter::new(fs::File::create(run.path("operator.mtx"))?);
    op.write_coordinate(&run.header("operator"), &mut mtx)?;
    mtx.flush()?;

    let refinement = if cfg.refine {
        let fine = grid.refined();
        let e2 = spectral::leading_eigen(&spectral::assemble(model, &fine)?)?;
        Some(Refinement { nodes: fine.len(), rho: e2.rho, relative_drift: (eigen.rho - e2.rho).abs() / e2.rho.abs() })
    } else {
        None
    };

    let x0 = model.x0();
    let u0 = Field::from_fn(&grid, |x| (-4.0 * (x / x0).ln().powi(2)).exp());
    let snaps = spectral::evolve_snapshots(&op, &u0, cfg.t_final, cfg.dt, cfg.snapshots.max(1))?;
    for (k, (t, u)) in snaps.iter().enumerate() {
        let path = run.path(&format!("snapshots/snapshot_{k:03}.csv"));
        fs::create_dir_all(path.parent().expect("snapshot directory"))?;
        let mut w = BufWriter::new(fs::File::create(&path)?);
        u.write_csv(&grid, &format!("{}\nt={t}", run.header("snapshot")), &mut w)?;
        w.flush()?;
    }
    let late: Vec<(f64, Field)> = snaps.iter().filter(|(t, _)| *t >= 0.25 * cfg.t_final).cloned().collect();
    let profile = Field { values: eigen.nu.clone() };
    let (fit, fit_error) = match spectral::convergence_rate(&grid, &late, eigen.rho, &profile) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let summary = PdeSummary {
        nodes: grid.len(),
        grid_min: lo,
        grid_max: hi,
        rho: eigen.rho,
        residual_right: eigen.residual_right,
        residual_left: eigen.residual_left,
        leakage: eigen.leakage,
        row_sum_defect: op.row_sum_defect(),
        off_diagonal_min: op.off_diagonal_min(),
        refinement,
        fit,
        fit_error,
    };
    run.write_json("rate.json", &summary)?;
    println!(
        "rho = {:.6}{}; beta = {}",
        eigen.rho,
        summary.refinement.as_ref().map_or(String::new(), |r| format!(" (refined {:.6})", r.rho)),
        summary.fit.as_ref().map_or("n/a".to_string(), |f| format!("{:.4}", f.beta))
    );
    Ok(PdeOutputs { grid, eigen, summary })
}

#[derive(Debug, Clone, Serialize)]
pub struct CriteriaSummary {
    pub lambda: f64,
    pub lambda_source: &'static str,
    pub report: CriteriaReport,
    pub choice: Option<criteria::BalanceChoice>,
    pub lyapunov: Option<LyapunovSpec>,
    pub compact_upper: Option<f64>,
}

/// Largest grid node below which `-b tau / x + B (M_-b - M_0) < 0` holds.
fn small_mass_switch(run: &Run, b: f64) -> Result<Option<f64>> {
    let model = &run.loaded.model;
    let mut last = None;
    for x in SampleGrid::around(model.x0()).points() {
        if criteria::drift_ratio_closed_form(model, x, -b)? < 0.0 {
            last = Some(x);
        } else {
            break;
        }
    }
    Ok(last)
}

/// Condition table: `criteria.json`, `criteria.txt`. The exponent is the
/// given one, the exact constant-rate value, or the spectral estimate with
/// its refinement drift as half-width.
pub fn cmd_criteria(run: &Run, lambda: Option<(f64, f64)>) -> Result<CriteriaSummary> {
    let model = &run.loaded.model;
    let cc = &run.loaded.config.criteria;
    let mut report = CriteriaReport::default();
    let constant = criteria::constant_case(model, cc.a.unwrap_or(1.0), cc.b.unwrap_or(0.5)).ok();
    let (lambda, half_width, source) = match (&constant, lambda) {
        (Some(c), _) => (c.lambda, 0.0, "constant_rates"),
        (None, Some((l, hw))) => (l, hw, "monte_carlo"),
        (None, None) => {
            let (lo, hi) = run.loaded.pde_grid();
            let grid = Grid::geometric(lo, hi, run.loaded.config.pde.nodes)?;
            let e1 = spectral::leading_eigen(&spectral::assemble(model, &grid)?)?;
            let e2 = spectral::leading_eigen(&spectral::assemble(model, &grid.refined())?)?;
            (e2.rho, (e1.rho - e2.rho).abs(), "spectral")
        }
    };
    match &constant {
        Some(c) => report.extend(c.report.clone()),
        None => report.entries.push(criteria::check_tail_rate(model, lambda, half_width)),
    }
    let mut choice = None;
    let mut lyapunov = None;
    let mut compact_upper = None;
    if model.kernel().profile().is_some() {
        let balance = criteria::check_growth_balance(model, cc.a, cc.b)?;
        report.extend(balance.report);
        choice = balance.choice;
        if let Some(ch) = choice {
            let x_high = cc.lyapunov_high.unwrap_or(ch.x_infinity);
            let spec = match cc.lyapunov_low {
                Some(x) => Some(LyapunovSpec::new(ch.a, ch.b, x, x_high)?),
                None => match small_mass_switch(run, ch.b)?.filter(|x| *x < x_high) {
                    Some(x) => LyapunovSpec::convex_below(ch.a, ch.b, x, x_high)?,
                    None => None,
                },
            };
            if let Some(spec) = spec {
                let d = criteria::lyapunov_drift(model, &spec, &SampleGrid::around(model.x0()))?;
                report.entries.push(d.entry);
                lyapunov = Some(spec);
                compact_upper = d.compact_upper;
            }
        }
    }
    let summary = CriteriaSummary { lambda, lambda_source: source, report, choice, lyapunov, compact_upper };
    run.write_json("criteria.json", &summary)?;
    let table = summary.report.table();
    write_file(&run.path("criteria.txt"), format!("# {}\n{table}", run.header("criteria").replace('\n', "\n# ")).as_bytes())?;
    print!("{table}");
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossCheck {
    pub lambda_mc: f64,
    pub ci: (f64, f64),
    pub rho: f64,
    pub tolerance: f64,
    pub eigenvalue_agrees: bool,
    /// L1 distance between the normalized Monte Carlo and spectral profiles
    /// over the profile grid.
    pub profile_l1: f64,
}

/// Spectral density `nu` at `x`, linear in `(ln x, ln nu)` between nodes.
pub fn density_at(grid: &Grid, values: &[f64], x: f64) -> f64 {
    let nodes = grid.nodes();
    if x <= nodes[0] {
        return values[0];
    }
    if x >= nodes[nodes.len() - 1] {
        return values[values.len() - 1];
    }
    let k = nodes.partition_point(|&v| v <= x) - 1;
    let t = (x / nodes[k]).ln() / (nodes[k + 1] / nodes[k]).ln();
    if values[k] > 0.0 && values[k + 1] > 0.0 {
        (values[k].ln() * (1.0 - t) + values[k + 1].ln() * t).exp()
    } else {
        values[k] * (1.0 - t) + values[k + 1] * t
    }
}

/// `int |nu_mc / int nu_mc - nu_pde| dx` over the profile nodes (log-trapezoid).
pub fn profile_l1_distance(profile: &ProfileEstimate, grid: &Grid, nu: &[f64]) -> f64 {
    let nodes = &profile.nodes;
    let diff: Vec<f64> =
        nodes.iter().zip(&profile.nu).map(|(&x, v)| (v / profile.integral - density_at(grid, nu, x)).abs()).collect();
    let mut acc = 0.0;
    for i in 0..nodes.len() - 1 {
        acc += 0.5 * (nodes[i + 1] / nodes[i]).ln() * (diff[i] * nodes[i] + diff[i + 1] * nodes[i + 1]);
    }
    acc
}

pub fn cross_check(result: &MalthusResult, profile: &ProfileEstimate, pde: &PdeOutputs) -> CrossCheck {
    let width = result.ci.1 - result.ci.0;
    let tolerance = (0.02 * result.lambda.abs()).max(width);
    CrossCheck {
        lambda_mc: result.lambda,
        ci: result.ci,
        rho: pde.eigen.rho,
        tolerance,
        eigenvalue_agrees: (pde.eigen.rho - result.lambda).abs() <= tolerance,
        profile_l1: profile_l1_distance(profile, &pde.grid, &pde.eigen.nu),
    }
}

/// Validation, Monte Carlo, PDE and criteria in sequence, plus `crosscheck.json`.
pub fn cmd_all(run: &Run) -> Result<i32> {
    if cmd_validate(run)? != EXIT_OK {
        return Ok(EXIT_FAILURE);
    }
    let mc = cmd_malthus(run)?;
    let pde = cmd_pde(run)?;
    let lambda = mc.summary.result.as_ref().map(|r| (r.lambda, r.half_width()));
    cmd_criteria(run, lambda)?;
    if let (Some(r), Some(p)) = (&mc.summary.result, &mc.profile) {
        let cc = cross_check(r, p, &pde);
        println!(
            "cross-check: |rho - lambda| = {:.4e} (tolerance {:.4e}), profile L1 = {:.4}",
            (cc.rho - cc.lambda_mc).abs(),
            cc.tolerance,
            cc.profile_l1
        );
        run.write_json("crosscheck.json", &cc)?;
    }
    Ok(EXIT_OK)
}
