//! Experiment configuration files.
//!
//! A configuration is TOML with unknown keys rejected. A run manifest (JSON)
//! embeds the resolved configuration and can be used in its place.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::action::EventSpec;
use crate::corrector::{CorrectorMethod, DEFAULT_RHO_SCHEDULE};
use crate::diagnostics::{ErgodicMode, OccupationSpec};
use crate::dynamics::ScaleParams;
use crate::effective::XGrid;
use crate::error::{Error, Result};
use crate::medium::{CoefficientSpec, Environment, Family, MediumParams, Mode};
use crate::rareevent::EstimatorMode;

/// π-means of `b` above this are reported by [`validate`].
pub const B_MEAN_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Homogenize,
    Rate,
    Estimate,
    Ergodic,
    Occupation,
    FullPipeline,
}

impl std::str::FromStr for Experiment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::InvalidArgument(format!("unknown experiment {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub family: Family,
    pub fast_dim: usize,
    /// Seed of the first medium; further media use consecutive seeds.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub potential: Vec<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_const: Option<f64>,
    /// Threshold for the nondegeneracy check.
    #[serde(default = "default_lambda_min")]
    pub lambda_min: f64,
}

fn default_lambda_min() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalesConfig {
    pub eps: Vec<f64>,
    #[serde(default = "default_exponent")]
    pub delta_exponent: f64,
    #[serde(default = "default_c_step")]
    pub c_step: f64,
}

fn default_exponent() -> f64 {
    ScaleParams::DEFAULT_EXPONENT
}

fn default_c_step() -> f64 {
    ScaleParams::DEFAULT_C_STEP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectorConfig {
    #[serde(default = "default_method")]
    pub method: CorrectorMethod,
    #[serde(default = "default_n_grid")]
    pub n_grid: usize,
    #[serde(default = "default_schedule")]
    pub rho_schedule: Vec<f64>,
    /// Use ξ; when false the smallest-ρ Dχ_ρ is used.
    #[serde(default = "yes")]
    pub extrapolate: bool,
    /// Build the importance-sampling control from Dχ_ρ at this ρ instead of ξ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    /// Paths per point for the Monte Carlo cell solver.
    #[serde(default = "default_mc_paths")]
    pub mc_paths: usize,
    /// Evaluation points of the Monte Carlo cell solver.
    #[serde(default = "default_mc_points")]
    pub mc_points: usize,
}

fn default_method() -> CorrectorMethod {
    CorrectorMethod::Grid
}
fn default_n_grid() -> usize {
    4096
}
fn default_schedule() -> Vec<f64> {
    DEFAULT_RHO_SCHEDULE.to_vec()
}
fn yes() -> bool {
    true
}
fn default_mc_paths() -> usize {
    200
}
fn default_mc_points() -> usize {
    8
}

impl Default for CorrectorConfig {
    fn default() -> Self {
        Self {
            method: default_method(),
            n_grid: default_n_grid(),
            rho_schedule: default_schedule(),
            extrapolate: true,
            rho: None,
            mc_paths: default_mc_paths(),
            mc_points: default_mc_points(),
        }
    }
}

/// Uniform tensor grid of slow states for tabulating r and q.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XGridConfig {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0: Option<Vec<f64>>,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    pub event: EventSpec,
    #[serde(default = "default_n_seg")]
    pub n_seg: usize,
    #[serde(default = "default_modes")]
    pub modes: Vec<EstimatorMode>,
}

fn default_horizon() -> f64 {
    1.0
}
fn default_n_seg() -> usize {
    32
}
fn default_modes() -> Vec<EstimatorMode> {
    vec![EstimatorMode::Is]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErgodicConfig {
    pub observable: Vec<Mode>,
    #[serde(default = "default_shifts")]
    pub shifts: Vec<f64>,
    #[serde(default = "default_media")]
    pub media: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_ergodic_mode")]
    pub mode: ErgodicMode,
}

fn default_shifts() -> Vec<f64> {
    (0..8).map(|i| 0.1 * i as f64).collect()
}
fn default_media() -> usize {
    5
}
fn default_beta() -> f64 {
    0.5
}
fn default_ergodic_mode() -> ErgodicMode {
    ErgodicMode::Uncontrolled
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupationConfig {
    #[serde(default = "default_time_bins")]
    pub time_bins: usize,
    #[serde(default = "default_u_bins")]
    pub u_bins: usize,
    #[serde(default = "default_u_max")]
    pub u_max: f64,
    #[serde(default = "default_y_bins")]
    pub y_bins: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Use the importance-sampling control of the rate problem when present.
    #[serde(default)]
    pub controlled: bool,
    /// Store every `thin`-th state of the first replica's path; 0 disables the dump.
    #[serde(default)]
    pub dump_thin: usize,
}

fn default_time_bins() -> usize {
    OccupationSpec::default().time_bins
}
fn default_u_bins() -> usize {
    OccupationSpec::default().u_bins
}
fn default_u_max() -> f64 {
    OccupationSpec::default().u_max
}
fn default_y_bins() -> usize {
    OccupationSpec::default().y_bins
}

impl OccupationConfig {
    pub fn spec(&self) -> OccupationSpec {
        OccupationSpec {
            time_bins: self.time_bins,
            u_bins: self.u_bins,
            u_max: self.u_max,
            y_bins: self.y_bins,
            delta: self.delta,
        }
    }
}

impl Default for OccupationConfig {
    fn default() -> Self {
        Self {
            time_bins: default_time_bins(),
            u_bins: default_u_bins(),
            u_max: default_u_max(),
            y_bins: default_y_bins(),
            delta: None,
            controlled: false,
            dump_thin: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default = "default_output")]
    pub output_dir: String,
    pub environment: EnvironmentConfig,
    pub coefficients: CoefficientSpec,
    pub scales: ScalesConfig,
    #[serde(default)]
    pub corrector: CorrectorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_grid: Option<XGridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ergodic: Option<ErgodicConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occupation: Option<OccupationConfig>,
}

fn default_replicas() -> usize {
    1000
}
fn default_output() -> String {
    "out".into()
}

/// A schema error with the path of the offending key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for SchemaError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.path.is_empty() || self.path == "." {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

fn schema(path: &str, message: impl Into<String>) -> SchemaError {
    SchemaError {
        path: path.into(),
        message: message.into(),
    }
}

/// Parses TOML text.
pub fn parse_toml(text: &str) -> std::result::Result<ExperimentConfig, SchemaError> {
    let de = toml::Deserializer::parse(text).map_err(|e| schema("", e.message().to_string()))?;
    serde_path_to_error::deserialize(de).map_err(|e| schema(&e.path().to_string(), strip_toml(e.inner())))
}

fn strip_toml(e: &toml::de::Error) -> String {
    e.message().to_string()
}

/// Parses a run manifest, returning its embedded configuration.
pub fn parse_manifest(text: &str) -> std::result::Result<ExperimentConfig, SchemaError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| schema("", e.to_string()))?;
    let cfg = value
        .get("config")
        .ok_or_else(|| schema("config", "manifest has no embedded config"))?;
    serde_path_to_error::deserialize(cfg).map_err(|e| {
        schema(&format!("config.{}", e.path()), e.inner().to_string())
    })
}

/// Reads a TOML config, or a JSON manifest when the extension is `.json`.
pub fn load(path: &Path) -> std::result::Result<ExperimentConfig, SchemaError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| schema("", format!("cannot read {}: {e}", path.display())))?;
    let cfg = if path.extension().is_some_and(|e| e == "json") {
        parse_manifest(&text)?
    } else {
        parse_toml(&text)?
    };
    cfg.check().map_err(|e| e[0].clone())?;
    Ok(cfg)
}

impl ExperimentConfig {
    /// Semantic checks that the type system does not cover.
    pub fn check(&self) -> std::result::Result<(), Vec<SchemaError>> {
        let mut errs = Vec::new();
        let m = self.coefficients.slow_dim;
        if self.scales.eps.is_empty() {
            errs.push(schema("scales.eps", "at least one value is required"));
        }
        if let Some(i) = self.scales.eps.iter().position(|e| !(*e > 0.0 && e.is_finite())) {
            errs.push(schema(&format!("scales.eps[{i}]"), "must be positive"));
        }
        if !(self.scales.delta_exponent > 0.0) {
            errs.push(schema("scales.delta_exponent", "must be positive"));
        }
        if !(self.scales.c_step > 0.0) {
            errs.push(schema("scales.c_step", "must be positive"));
        }
        if self.replicas < 2 {
            errs.push(schema("replicas", "at least two replicas are needed"));
        }
        if self.corrector.rho_schedule.len() < 3 {
            errs.push(schema("corrector.rho_schedule", "at least three values are needed"));
        }
        if self.corrector.rho_schedule.iter().any(|r| !(*r > 0.0)) {
            errs.push(schema("corrector.rho_schedule", "values must be positive"));
        }
        if let Some(r) = self.corrector.rho {
            if !(r > 0.0) {
                errs.push(schema("corrector.rho", "must be positive"));
            }
        }
        if self.corrector.n_grid < 8 {
            errs.push(schema("corrector.n_grid", "must be at least 8"));
        }
        if let Some(g) = &self.x_grid {
            if g.n == 0 || !(g.hi >= g.lo) {
                errs.push(schema("x_grid", "needs n >= 1 and hi >= lo"));
            }
        }
        let needs_problem = matches!(
            self.experiment,
            Experiment::Rate | Experiment::Estimate | Experiment::FullPipeline
        );
        match &self.problem {
            None if needs_problem => errs.push(schema("problem", "missing section")),
            Some(p) => {
                if p.x0.len() != m {
                    errs.push(schema("problem.x0", format!("expected {m} components")));
                }
                if let Some(y0) = &p.y0 {
                    if y0.len() != self.environment.fast_dim {
                        errs.push(schema("problem.y0", "length must equal fast_dim"));
                    }
                }
                if !(p.horizon > 0.0) {
                    errs.push(schema("problem.horizon", "must be positive"));
                }
                if p.event.dim().is_some_and(|d| d != m) {
                    errs.push(schema("problem.event", format!("expected dimension {m}")));
                }
                if p.n_seg == 0 {
                    errs.push(schema("problem.n_seg", "must be positive"));
                }
                if p.modes.is_empty() {
                    errs.push(schema("problem.modes", "at least one mode is required"));
                }
            }
            None => {}
        }
        let needs_ergodic = matches!(self.experiment, Experiment::Ergodic | Experiment::FullPipeline);
        if needs_ergodic && self.ergodic.is_none() {
            errs.push(schema("ergodic", "missing section"));
        }
        if let Some(e) = &self.ergodic {
            if e.media == 0 {
                errs.push(schema("ergodic.media", "must be positive"));
            }
            if e.shifts.is_empty() {
                errs.push(schema("ergodic.shifts", "at least one shift is required"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    pub fn medium_params(&self) -> MediumParams {
        MediumParams {
            fast_dim: self.environment.fast_dim,
            slow_dim: self.coefficients.slow_dim,
            potential: self.environment.potential.clone(),
            d_const: self.environment.d_const,
            wavevectors: Vec::new(),
        }
    }

    /// Environment of medium number `index` (seed `environment.seed + index`).
    pub fn environment(&self, index: u64) -> Result<Environment> {
        Environment::sample(
            self.environment.family,
            &self.medium_params(),
            &self.coefficients,
            self.environment.seed.wrapping_add(index),
        )
    }

    pub fn scale(&self, eps: f64) -> Result<ScaleParams> {
        Ok(ScaleParams::new(eps, self.scales.delta_exponent)?.with_c_step(self.scales.c_step))
    }

    pub fn x_grid(&self) -> XGrid {
        let m = self.coefficients.slow_dim;
        match &self.x_grid {
            Some(g) => XGrid::uniform(m, g.lo, g.hi, g.n),
            None => XGrid::single(&vec![0.0; m]),
        }
    }

    pub fn y0(&self) -> Vec<f64> {
        self.problem
            .as_ref()
            .and_then(|p| p.y0.clone())
            .unwrap_or_else(|| vec![0.0; self.environment.fast_dim])
    }
}

/// Outcome of [`validate`]: schema errors and physics warnings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<SchemaError>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.errors.is_empty() && self.warnings.is_empty()
    }
}

/// Schema and physics checks of a configuration file; never fails.
pub fn validate(path: &Path) -> ValidationReport {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            return ValidationReport {
                errors: vec![schema("", format!("cannot read {}: {e}", path.display()))],
                warnings: Vec::new(),
            }
        }
    };
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        parse_manifest(&text)
    } else {
        parse_toml(&text)
    };
    match parsed {
        Err(e) => ValidationReport {
            errors: vec![e],
            warnings: Vec::new(),
        },
        Ok(cfg) => validate_config(&cfg),
    }
}

pub fn validate_config(cfg: &ExperimentConfig) -> ValidationReport {
    let mut report = ValidationReport::default();
    if let Err(errs) = cfg.check() {
        report.errors = errs;
        return report;
    }
    if cfg.scales.delta_exponent <= 1.0 {
        report.warnings.push(format!(
            "regime ε/δ → ∞ violated: delta_exponent = {} must exceed 1",
            cfg.scales.delta_exponent
        ));
    }
    let env = match cfg.environment(0) {
        Ok(env) => env,
        Err(e) => {
            report.errors.push(schema("coefficients", e.to_string()));
            return report;
        }
    };
    if env.density.is_none() {
        report.warnings.push(
            "invariant density not available in closed form: homogenization, rate and estimate experiments will fail"
                .into(),
        );
    }
    for (l, off) in env.b_offset.iter().enumerate() {
        if off.abs() > B_MEAN_TOL {
            report.warnings.push(format!(
                "b[{l}] has π-mean {off:.10e}; the constant {:.10e} is subtracted",
                -off
            ));
        }
    }
    let x0 = cfg
        .problem
        .as_ref()
        .map(|p| p.x0.clone())
        .unwrap_or_else(|| vec![0.0; cfg.coefficients.slow_dim]);
    let (min_sigma, min_fast) = env.coeffs.nondegeneracy(&x0, 256);
    let lam = cfg.environment.lambda_min;
    if min_sigma < lam {
        report
            .warnings
            .push(format!("σσᵀ degenerate: smallest eigenvalue {min_sigma:e} below {lam:e}"));
    }
    if min_fast < lam {
        report.warnings.push(format!(
            "τ₁τ₁ᵀ + τ₂τ₂ᵀ degenerate: smallest eigenvalue {min_fast:e} below {lam:e}"
        ));
    }
    report
}
