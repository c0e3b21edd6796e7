//! Acceptance gate. Prints one line per criterion and exits non-zero if any
//! criterion fails. Runs with its own harness so the lines always show.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use growfrag::cli::{self, CliOptions, Command, MalthusOutputs, PdeOutputs, Run};
use growfrag::criteria::{check_growth_balance, constant_case, lyapunov_drift, CriterionStatus, LyapunovSpec, SampleGrid};
use growfrag::malthus::{estimate_l, solve_malthus, tags, ExcursionSet, MalthusSettings};
use growfrag::spectral::{assemble, killed_spectral_of, leading_eigen, Evolver, Field, Grid};
use growfrag::{CoefficientModel, FragRate, GrowthRate, Kernel, Profile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one criterion: pass flag and a one-line summary.
type Outcome = Result<(bool, String), String>;

fn benchmark() -> CoefficientModel {
    CoefficientModel::new(
        GrowthRate::affine(1.0, 0.5),
        FragRate::Constant(1.0),
        Kernel::self_similar(Profile::uniform_binary()),
        1.0,
    )
    .unwrap()
}

fn transport(growth: GrowthRate) -> CoefficientModel {
    CoefficientModel::new(growth, FragRate::Constant(0.0), Kernel::self_similar(Profile::uniform_binary()), 1.0).unwrap()
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

struct Pipeline {
    mc: MalthusOutputs,
    pde: PdeOutputs,
}

fn pipeline(name: &str, out: &Path) -> Result<Pipeline, String> {
    let opts = CliOptions { config: config(name), out: Some(out.to_path_buf()), ..Default::default() };
    let run = Run::new(&opts).map_err(|e| e.to_string())?;
    let mc = cli::cmd_malthus(&run).map_err(|e| e.to_string())?;
    let pde = cli::cmd_pde(&run).map_err(|e| e.to_string())?;
    Ok(Pipeline { mc, pde })
}

fn constant_exactness() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| e.to_string())?;
    let settings = MalthusSettings { initial_paths: 200_000, budget: 200_000, seed: 1, ..Default::default() };
    let start = Instant::now();
    let r = pool.install(|| solve_malthus(&benchmark(), 1.0, &settings)).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let pass = (0.95..=1.05).contains(&r.lambda) && secs <= 120.0;
    Ok((pass, format!("lambda = {:.5} from {} excursions in {secs:.1} s on one thread", r.lambda, r.samples)))
}

fn deterministic_oracle() -> Outcome {
    let laws = [
        (GrowthRate::Constant(1.0), 1.0),
        (GrowthRate::affine(1.0, 1.0), std::f64::consts::LN_2),
        (GrowthRate::power_law(1.0, 0.5), 2.0),
    ];
    let mut worst = 0.0f64;
    for (growth, s) in laws {
        let m = transport(growth);
        for q in [0.0, 1.0, 5.0] {
            let e = estimate_l(&m, 0.0, 1.0, q, 100, 50.0, 3).map_err(|e| e.to_string())?;
            worst = worst.max((e.estimate - (-q * s).exp()).abs());
        }
    }
    Ok((worst < 1e-10, format!("max |L(q) - exp(-q s(0, 1))| = {worst:.2e}")))
}

fn cross_method(bench: &Pipeline, hyper: &Pipeline) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, p) in [("benchmark", bench), ("hyperbolic", hyper)] {
        let (Some(r), Some(profile)) = (&p.mc.summary.result, &p.mc.profile) else {
            return Ok((false, format!("{name}: no Monte Carlo exponent")));
        };
        let cc = cli::cross_check(r, profile, &p.pde);
        pass &= cc.eigenvalue_agrees && cc.profile_l1 < 0.1;
        parts.push(format!(
            "{name}: |rho - lambda| = {:.2e} (tol {:.2e}), nu L1 = {:.4}",
            (cc.rho - cc.lambda_mc).abs(),
            cc.tolerance,
            cc.profile_l1
        ));
    }
    Ok((pass, parts.join("; ")))
}

fn martingales(bench: &Pipeline) -> Outcome {
    let reports = &bench.mc.martingale;
    if reports.len() != 2 {
        return Ok((false, "martingale reports missing".into()));
    }
    let (mart, sup) = (&reports[0], &reports[1]);
    let lambda = bench.mc.summary.result.as_ref().map_or(f64::NAN, |r| r.lambda);
    let shift_ok = (sup.q - lambda - 0.5).abs() < 1e-12;
    let worst_m = mart.rows.iter().map(|r| (r.mean - 1.0).abs() / r.joint_stderr).fold(0.0, f64::max);
    let worst_s = sup.rows.iter().map(|r| (r.mean - 1.0) / r.joint_stderr).fold(f64::NEG_INFINITY, f64::max);
    let pass = mart.pass && sup.pass && shift_ok && worst_m < 3.0 && worst_s <= 3.0;
    Ok((
        pass,
        format!(
            "max |E M_t - 1| = {worst_m:.2} stderr at t in {:?}; max (E S_t - 1) = {worst_s:.2} stderr at q = {:.4}",
            mart.rows.iter().map(|r| r.t).collect::<Vec<_>>(),
            sup.q
        ),
    ))
}

fn pathwise_structure() -> Outcome {
    let set = ExcursionSet::simulate(&benchmark(), 1.0, 1.0, 50.0, 20_000, 5, tags::LAPLACE, 0).map_err(|e| e.to_string())?;
    let qs: Vec<f64> = (0..10).map(|i| 0.8 + 0.1 * i as f64).collect();
    let l: Vec<f64> = qs.iter().map(|&q| set.laplace(q).estimate).collect();
    let monotone = l.windows(2).all(|w| w[1] <= w[0]);
    let convex = l.windows(3).all(|w| w[0] - 2.0 * w[1] + w[2] >= 0.0);
    let min_second = l.windows(3).map(|w| w[0] - 2.0 * w[1] + w[2]).fold(f64::INFINITY, f64::min);
    Ok((monotone && convex, format!("L from {:.4} to {:.4}; min second difference {min_second:.3e}", l[0], l[9])))
}

fn profile_normalization(bench: &Pipeline) -> Outcome {
    let Some(p) = &bench.mc.profile else {
        return Ok((false, "no profile".into()));
    };
    Ok(((p.integral - 1.0).abs() < 0.05, format!("int nu = {:.4} over {} nodes", p.integral, p.nodes.len())))
}

fn killed_nesting() -> Outcome {
    let op = assemble(&benchmark(), &Grid::geometric(1e-4, 200.0, 400).unwrap()).map_err(|e| e.to_string())?;
    let rho = leading_eigen(&op).map_err(|e| e.to_string())?.rho;
    let mut values = Vec::new();
    for (a, b) in [(0.5, 2.0), (0.2, 5.0), (0.05, 20.0)] {
        values.push(killed_spectral_of(&op, a, b).map_err(|e| e.to_string())?.rho);
    }
    let pass = values[0] < values[1] && values[1] < values[2] && values[2] < rho;
    Ok((pass, format!("rho_ab = {values:.5?} below rho = {rho:.6}")))
}

fn first_moment(grid: &Grid, masses: &[f64]) -> f64 {
    masses.iter().zip(grid.nodes()).map(|(m, x)| m * x).sum()
}

fn pde_physics() -> Outcome {
    // non-negativity on random fields
    let grid = Grid::geometric(1e-3, 100.0, 80).unwrap();
    let op = assemble(&benchmark(), &grid).map_err(|e| e.to_string())?;
    let ev = Evolver::new(&op, 0.05).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut min_value = f64::INFINITY;
    for _ in 0..1000 {
        let mut m: Vec<f64> = (0..grid.len()).map(|_| if rng.random::<f64>() < 0.3 { 0.0 } else { rng.random::<f64>() }).collect();
        for _ in 0..20 {
            m = ev.step_masses(&m).map_err(|e| e.to_string())?;
            min_value = min_value.min(m.iter().cloned().fold(f64::INFINITY, f64::min));
        }
    }
    let nonneg = min_value >= 0.0;

    // first moment balance over one unit of time
    let grid = Grid::geometric(1e-4, 200.0, 400).unwrap();
    let op = assemble(&benchmark(), &grid).map_err(|e| e.to_string())?;
    let dt = 0.01;
    let ev = Evolver::new(&op, dt).map_err(|e| e.to_string())?;
    let u0 = Field::from_fn(&grid, |x| (-4.0 * x.ln().powi(2)).exp());
    let mut m = u0.masses(&grid);
    let tau_pair = |m: &[f64]| m.iter().zip(grid.nodes()).map(|(a, &x)| a * (1.0 + 0.5 * x)).sum::<f64>();
    let start = first_moment(&grid, &m);
    let mut integral = 0.0;
    for _ in 0..100 {
        m = ev.step_masses(&m).map_err(|e| e.to_string())?;
        integral += dt * tau_pair(&m);
    }
    let balance = ((first_moment(&grid, &m) - start) - integral).abs() / integral;

    // a bump under pure transport with affine speed keeps its mean on the flow
    let law = transport(GrowthRate::affine(1.0, 1.0));
    let grid = Grid::geometric(1e-3, 1e3, 600).unwrap();
    let op = assemble(&law, &grid).map_err(|e| e.to_string())?;
    let ev = Evolver::new(&op, 0.005).map_err(|e| e.to_string())?;
    let u0 = Field::from_fn(&grid, |x| (-50.0 * x.ln().powi(2)).exp());
    let mut m = u0.masses(&grid);
    let mean = |m: &[f64]| first_moment(&grid, m) / m.iter().sum::<f64>();
    let mean0 = mean(&m);
    for _ in 0..400 {
        m = ev.step_masses(&m).map_err(|e| e.to_string())?;
    }
    let target = law.flow(mean0, 2.0).map_err(|e| e.to_string())?;
    let cell = grid.cell_of(target).ok_or("bump left the grid")?;
    let offset = (mean(&m) - target).abs() / grid.widths()[cell];

    let pass = nonneg && balance < 0.02 && offset < 1.0;
    Ok((
        pass,
        format!(
            "min mass {min_value:.1e} over 1000 fields; first-moment balance relative error {balance:.1e}; bump offset {offset:.3} cells",

        ),
    ))
}

fn criteria_chain() -> Outcome {
    let m = benchmark();
    let t = check_growth_balance(&m, Some(1.0), Some(0.5)).map_err(|e| e.to_string())?;
    let Some(choice) = t.choice else {
        return Ok((false, "growth balance not established".into()));
    };
    let spec = LyapunovSpec::new(1.0, 0.5, 0.25, choice.x_infinity).map_err(|e| e.to_string())?;
    let drift = lyapunov_drift(&m, &spec, &SampleGrid::around(1.0)).map_err(|e| e.to_string())?;
    let c = constant_case(&m, 1.0, 0.5).map_err(|e| e.to_string())?;
    let tail = c.report.entry("tail_rate_below_exponent").map(|e| e.status);
    let pass = t.report.all_pass()
        && drift.entry.status == CriterionStatus::Pass
        && c.lambda == 1.0
        && tail == Some(CriterionStatus::Fail);
    Ok((
        pass,
        format!(
            "x_inf = {:.4}; drift {:?} outside (0.25, {:.3}); constant-case lambda = {}, tail-rate test {:?}",
            choice.x_infinity,
            drift.entry.status,
            drift.compact_upper.unwrap_or(f64::NAN),
            c.lambda,
            tail
        ),
    ))
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn reproducibility(tmp: &Path) -> Outcome {
    let cfg = tmp.join("small.toml");
    let text = fs::read_to_string(config("benchmark.toml")).map_err(|e| e.to_string())?
        + "\n[malthus]\nbudget = 40000\ninitial_paths = 10000\n\n[profile]\nnodes = 9\npaths_per_node = 500\n\n[martingale]\npaths = 2000\n";
    fs::write(&cfg, text).map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    for workers in [1, 4] {
        let out = tmp.join(format!("workers_{workers}"));
        let opts = CliOptions { config: cfg.clone(), seed: Some(99), workers: Some(workers), out: Some(out.clone()) };
        let code = cli::run(Command::Malthus, &opts);
        if code != cli::EXIT_OK {
            return Ok((false, format!("malthus exited with {code} on {workers} workers")));
        }
        trees.push(tree(&out));
    }
    let files = trees[0].len();
    Ok((files > 0 && trees[0] == trees[1], format!("{files} output files compared byte for byte (1 vs 4 workers)")))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let bench = pipeline("benchmark.toml", &tmp.path().join("benchmark"));
    let hyper = pipeline("hyperbolic.toml", &tmp.path().join("hyperbolic"));
    let both = || match (&bench, &hyper) {
        (Ok(b), Ok(h)) => Ok((b, h)),
        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
    };

    let results: Vec<(&str, Outcome)> = vec![
        ("constant-coefficient exactness", constant_exactness()),
        ("deterministic oracle", deterministic_oracle()),
        ("cross-method agreement", both().and_then(|(b, h)| cross_method(b, h))),
        ("martingale suite", both().and_then(|(b, _)| martingales(b))),
        ("path-wise monotone and convex L", pathwise_structure()),
        ("profile normalization", both().and_then(|(b, _)| profile_normalization(b))),
        ("killed-spectral nesting", killed_nesting()),
        ("PDE physics", pde_physics()),
        ("criteria chain", criteria_chain()),
        ("reproducibility across workers", reproducibility(tmp.path())),
    ];

    println!();
    let mut failed = 0;
    for (i, (name, outcome)) in results.iter().enumerate() {
        let (pass, detail) = match outcome {
            Ok((p, d)) => (*p, d.clone()),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!("criterion {:>2} {name:<34} {}  {detail}", i + 1, if pass { "PASS" } else { "FAIL" });
    }
    println!("\n{} of {} criteria pass", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
