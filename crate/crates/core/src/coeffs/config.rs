//! TOML run configuration. See the README for the full schema.

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{CoefficientModel, FragRate, GrowthRate, Kernel, Profile, QuadratureSettings};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum GrowthSpec {
    Constant { value: f64 },
    Affine { intercept: f64, slope: f64 },
    PowerLaw { coeff: f64, exponent: f64 },
    Tabulated { x: Vec<f64>, tau: Vec<f64> },
    Sum { terms: Vec<GrowthSpec> },
    Scaled { factor: f64, inner: Box<GrowthSpec> },
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateSpec {
    Constant { value: f64 },
    Hyperbolic { limit: f64, at_zero: f64, scale: f64 },
    Tabulated { x: Vec<f64>, b: Vec<f64> },
    Sum { terms: Vec<RateSpec> },
    Scaled { factor: f64, inner: Box<RateSpec> },
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    UniformBinary {},
    Power { coeff: f64, exponent: f64 },
    Tabulated { z: Vec<f64>, k: Vec<f64> },
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub profile: ProfileSpec,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub x0: Option<f64>,
    pub growth: GrowthSpec,
    pub rate: RateSpec,
    pub kernel: KernelSpec,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSection {
    pub rel_tol: f64,
    pub mass_floor: f64,
    pub mass_ceiling: f64,
}

impl Default for QuadratureSection {
    fn default() -> Self {
        let q = QuadratureSettings::default();
        Self { rel_tol: q.rel_tol, mass_floor: q.mass_floor, mass_ceiling: q.mass_ceiling }
    }
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<String>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct MalthusSection {
    /// Cap on the number of excursions drawn by the root search.
    pub budget: usize,
    pub initial_paths: usize,
    pub horizon: f64,
    /// Target width of the confidence interval for the exponent.
    pub tolerance: f64,
    /// Normal quantile used for every confidence statement.
    pub confidence: f64,
    pub curve_points: usize,
}

impl Default for MalthusSection {
    fn default() -> Self {
        Self { budget: 400_000, initial_paths: 20_000, horizon: 50.0, tolerance: 0.02, confidence: 3.0, curve_points: 21 }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSection {
    pub grid_min: Option<f64>,
    pub grid_max: Option<f64>,
    pub nodes: usize,
    pub paths_per_node: usize,
}

impl Default for ProfileSection {
    fn default() -> Self {
        Self { grid_min: None, grid_max: None, nodes: 25, paths_per_node: 4000 }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct MartingaleSection {
    pub times: Vec<f64>,
    pub paths: usize,
    pub super_shift: f64,
}

impl Default for MartingaleSection {
    fn default() -> Self {
        Self { times: vec![0.5, 1.0, 2.0], paths: 20_000, super_shift: 0.5 }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PdeSection {
    pub grid_min: Option<f64>,
    pub grid_max: Option<f64>,
    pub nodes: usize,
    pub dt: f64,
    pub t_final: f64,
    pub snapshots: usize,
    pub refine: bool,
}

impl Default for PdeSection {
    fn default() -> Self {
        Self { grid_min: None, grid_max: None, nodes: 400, dt: 0.02, t_final: 20.0, snapshots: 10, refine: true }
    }
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CriteriaSection {
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub lyapunov_low: Option<f64>,
    pub lyapunov_high: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub quadrature: QuadratureSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub malthus: MalthusSection,
    #[serde(default)]
    pub profile: ProfileSection,
    #[serde(default)]
    pub martingale: MartingaleSection,
    #[serde(default)]
    pub pde: PdeSection,
    #[serde(default)]
    pub criteria: CriteriaSection,
}

/// A parsed configuration together with its source and the model it defines.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub model: CoefficientModel,
    /// Hex SHA-256 of the raw configuration text.
    pub hash: String,
    pub text: String,
}

impl LoadedConfig {
    /// Profile grid `[min, max]`, defaulting to two decades either side of x0.
    pub fn profile_grid(&self) -> (f64, f64) {
        let x0 = self.model.x0();
        (self.config.profile.grid_min.unwrap_or(x0 / 20.0), self.config.profile.grid_max.unwrap_or(x0 * 20.0))
    }

    pub fn pde_grid(&self) -> (f64, f64) {
        let x0 = self.model.x0();
        (self.config.pde.grid_min.unwrap_or(x0 * 1e-4), self.config.pde.grid_max.unwrap_or(x0 * 200.0))
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

/// Line of `key` inside table `section` (dotted path), falling back to the
/// table header and then to line 1.
pub fn locate_key(text: &str, section: &str, key: &str) -> usize {
    let mut current = String::new();
    let mut header_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == section {
                header_line = Some(i + 1);
            }
            continue;
        }
        if current == section && line.split('=').next().unwrap_or("").trim() == key {
            return i + 1;
        }
    }
    header_line.unwrap_or(1)
}

fn config_error(text: &str, section: &str, key: &str, message: impl Into<String>) -> Error {
    let full = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
    Error::Config { line: locate_key(text, section, key), key: full, message: message.into() }
}

fn growth_from(spec: &GrowthSpec) -> Result<GrowthRate> {
    Ok(match spec {
        GrowthSpec::Constant { value } => GrowthRate::Constant(*value),
        GrowthSpec::Affine { intercept, slope } => GrowthRate::affine(*intercept, *slope),
        GrowthSpec::PowerLaw { coeff, exponent } => GrowthRate::power_law(*coeff, *exponent),
        GrowthSpec::Tabulated { x, tau } => GrowthRate::tabulated(x, tau)?,
        GrowthSpec::Sum { terms } => GrowthRate::Sum(terms.iter().map(growth_from).collect::<Result<_>>()?),
        GrowthSpec::Scaled { factor, inner } => growth_from(inner)?.scaled(*factor),
    })
}

fn rate_from(spec: &RateSpec) -> Result<FragRate> {
    Ok(match spec {
        RateSpec::Constant { value } => FragRate::Constant(*value),
        RateSpec::Hyperbolic { limit, at_zero, scale } => FragRate::hyperbolic(*limit, *at_zero, *scale),
        RateSpec::Tabulated { x, b } => FragRate::tabulated(x, b)?,
        RateSpec::Sum { terms } => FragRate::Sum(terms.iter().map(rate_from).collect::<Result<_>>()?),
        RateSpec::Scaled { factor, inner } => FragRate::Scaled { factor: *factor, inner: Box::new(rate_from(inner)?) },
    })
}

fn profile_from(spec: &ProfileSpec) -> Result<Profile> {
    Ok(match spec {
        ProfileSpec::UniformBinary {} => Profile::uniform_binary(),
        ProfileSpec::Power { coeff, exponent } => Profile::power(*coeff, *exponent),
        ProfileSpec::Tabulated { z, k } => Profile::tabulated(z.clone(), k.clone())?,
    })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses and checks a configuration document. Every error is an
/// [`Error::Config`] citing a line and a key.
pub fn parse_config(text: &str) -> Result<LoadedConfig> {
    let config: RunConfig = toml::from_str(text).map_err(|e| {
        let mut line = e.span().map(|s| line_of_offset(text, s.start)).unwrap_or(1);
        let message = e.message().to_string();
        let quoted = message.split('`').nth(1).map(str::to_string);
        if let Some(k) = &quoted {
            // Spans of buffered (tagged) tables point at the table header;
            // refine to the offending key when it appears below it.
            if let Some(found) = text
                .lines()
                .enumerate()
                .skip(line - 1)
                .find(|(_, l)| l.split('=').next().map(str::trim) == Some(k.as_str()))
            {
                line = found.0 + 1;
            }
        }
        let key = quoted
            .or_else(|| {
                text.lines()
                    .nth(line - 1)
                    .and_then(|l| l.split('=').next())
                    .map(|k| k.trim().trim_matches(|c| c == '[' || c == ']').to_string())
            })
            .unwrap_or_default();
        Error::Config { line, key, message }
    })?;

    let growth = growth_from(&config.model.growth)
        .and_then(|g| g.check_parameters().map(|_| g))
        .map_err(|e| config_error(text, "model.growth", "family", e.to_string()))?;
    let rate = rate_from(&config.model.rate)
        .and_then(|r| r.check_parameters().map(|_| r))
        .map_err(|e| config_error(text, "model.rate", "family", e.to_string()))?;
    let profile = profile_from(&config.model.kernel.profile)
        .and_then(|p| p.check_parameters().map(|_| p))
        .map_err(|e| config_error(text, "model.kernel", "profile", e.to_string()))?;

    let x0 = match config.model.x0 {
        Some(x0) if x0 > 0.0 && x0.is_finite() => x0,
        Some(_) => return Err(config_error(text, "model", "x0", "x0 must be positive")),
        None => match (config.profile.grid_min, config.profile.grid_max) {
            (Some(a), Some(b)) if a > 0.0 && b > a => (a * b).sqrt(),
            _ => {
                return Err(config_error(
                    text,
                    "model",
                    "x0",
                    "x0 is missing and no [profile] grid_min/grid_max to take its geometric midpoint from",
                ))
            }
        },
    };

    let q = &config.quadrature;
    for (key, v) in [("rel_tol", q.rel_tol), ("mass_floor", q.mass_floor), ("mass_ceiling", q.mass_ceiling)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(config_error(text, "quadrature", key, "must be positive"));
        }
    }
    let m = &config.malthus;
    for (key, v) in [("horizon", m.horizon), ("tolerance", m.tolerance), ("confidence", m.confidence)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(config_error(text, "malthus", key, "must be positive"));
        }
    }
    if m.initial_paths < 100 {
        return Err(config_error(text, "malthus", "initial_paths", "at least 100 paths are required"));
    }
    if m.budget < m.initial_paths {
        return Err(config_error(text, "malthus", "budget", "budget must be at least initial_paths"));
    }
    if m.curve_points < 3 {
        return Err(config_error(text, "malthus", "curve_points", "at least 3 curve points are required"));
    }
    let p = &config.profile;
    if p.nodes < 3 {
        return Err(config_error(text, "profile", "nodes", "at least 3 nodes are required"));
    }
    if p.paths_per_node < 100 {
        return Err(config_error(text, "profile", "paths_per_node", "at least 100 paths are required"));
    }
    if let (Some(a), Some(b)) = (p.grid_min, p.grid_max) {
        if !(a > 0.0 && b > a) {
            return Err(config_error(text, "profile", "grid_max", "need 0 < grid_min < grid_max"));
        }
    }
    let mg = &config.martingale;
    if mg.times.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(config_error(text, "martingale", "times", "times must be positive"));
    }
    if mg.paths < 100 {
        return Err(config_error(text, "martingale", "paths", "at least 100 paths are required"));
    }
    if !(mg.super_shift > 0.0) {
        return Err(config_error(text, "martingale", "super_shift", "must be positive"));
    }
    let d = &config.pde;
    for (key, v) in [("dt", d.dt), ("t_final", d.t_final)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(config_error(text, "pde", key, "must be positive"));
        }
    }
    if d.nodes < 10 {
        return Err(config_error(text, "pde", "nodes", "at least 10 nodes are required"));
    }
    if d.snapshots < 4 {
        return Err(config_error(text, "pde", "snapshots", "at least 4 snapshots are required"));
    }
    if let (Some(a), Some(b)) = (d.grid_min, d.grid_max) {
        if !(a > 0.0 && b > a) {
            return Err(config_error(text, "pde", "grid_max", "need 0 < grid_min < grid_max"));
        }
    }
    let c = &config.criteria;
    for (key, v) in [("a", c.a), ("b", c.b), ("lyapunov_low", c.lyapunov_low), ("lyapunov_high", c.lyapunov_high)] {
        if matches!(v, Some(v) if !(v > 0.0 && v.is_finite())) {
            return Err(config_error(text, "criteria", key, "must be positive"));
        }
    }
    if config.run.workers == Some(0) {
        return Err(config_error(text, "run", "workers", "must be at least 1"));
    }

    let settings = QuadratureSettings { rel_tol: q.rel_tol, mass_floor: q.mass_floor, mass_ceiling: q.mass_ceiling };
    let model = CoefficientModel::with_quadrature(growth, rate, Kernel::self_similar(profile), x0, settings)
        .map_err(|e| config_error(text, "quadrature", "mass_ceiling", e.to_string()))?;
    let hash = hex(&Sha256::digest(text.as_bytes()));
    Ok(LoadedConfig { config, model, hash, text: text.to_string() })
}

pub fn load_config(path: &std::path::Path) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BENCH: &str = r#"
[model]
x0 = 1.0

[model.growth]
family = "affine"
intercept = 1.0
slope = 0.5

[model.rate]
family = "constant"
value = 1.0

[model.kernel]
profile = { family = "uniform_binary" }

[run]
seed = 7
"#;

    #[test]
    fn parses_benchmark() {
        let c = parse_config(BENCH).unwrap();
        assert_eq!(c.model.x0(), 1.0);
        assert_eq!(c.config.run.seed, Some(7));
        assert_eq!(c.hash.len(), 64);
        assert_eq!(c.model.constant_g(), Some(1.0));
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = BENCH.replace("slope = 0.5", "slope = 0.5\nslop = 1");
        match parse_config(&text) {
            Err(Error::Config { line, key, .. }) => {
                assert_eq!(key, "slop");
                assert_eq!(line, 9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_error_reports_line() {
        let text = BENCH.replace("value = 1.0", "value = = 1.0");
        match parse_config(&text) {
            Err(Error::Config { line, .. }) => assert_eq!(line, 12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn semantic_error_cites_key() {
        let text = BENCH.replace("x0 = 1.0", "x0 = -1.0");
        match parse_config(&text) {
            Err(Error::Config { line, key, .. }) => {
                assert_eq!(key, "model.x0");
                assert_eq!(line, 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_x0_uses_profile_grid_midpoint() {
        let text = BENCH.replace("x0 = 1.0", "") + "\n[profile]\ngrid_min = 0.1\ngrid_max = 10.0\n";
        let c = parse_config(&text).unwrap();
        assert!((c.model.x0() - 1.0).abs() < 1e-15);
    }
}
