//! Experiment orchestration behind the `quench-ldp` binary.
//!
//! `run` loads a configuration, applies command-line overrides, writes a
//! manifest and then the artifacts of the requested experiment into the
//! output directory. Every artifact is a deterministic function of the
//! resolved configuration, so a manifest can be fed back as a config.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::action::{minimize_action, Minimizer};
use crate::config::{self, Experiment, ExperimentConfig, SchemaError};
use crate::corrector::{solve_cell_problem_grid, solve_cell_problem_mc, CorrectorField, CorrectorMethod, GradientTable};
use crate::diagnostics::{build_occupation, ergodic_average, total_variation, ErgodicMode, ErgodicOptions, ErgodicReport};
use crate::dynamics::{integrate_controlled, ControlPolicy};
use crate::effective::{EffectiveCoefficients, RateModel};
use crate::error::{Error, Result};
use crate::io;
use crate::medium::Environment;
use crate::rareevent::{build_is_control, estimate_probability, ldp_scaling_report, EstimatorMode, RareEventProblem};

pub const EXIT_SCHEMA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Name of the marker left in the output directory by a failed run.
pub const FAILURE_MARKER: &str = "FAILED";

/// Command-line values that replace configuration entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub experiment: Option<Experiment>,
    pub eps: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub replicas: Option<usize>,
    pub out: Option<PathBuf>,
    pub corrector_method: Option<CorrectorMethod>,
    pub mode: Option<EstimatorMode>,
    pub rho: Option<f64>,
}

#[derive(Debug)]
pub enum RunError {
    Schema(SchemaError),
    Numerical(Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Schema(_) => EXIT_SCHEMA,
            RunError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Schema(e) => write!(f, "schema error: {e}"),
            RunError::Numerical(e) => write!(f, "numerical failure: {e}"),
        }
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Numerical(e)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    /// Files written, relative to `out_dir`, in order.
    pub artifacts: Vec<String>,
}

pub fn apply_overrides(cfg: &mut ExperimentConfig, o: &Overrides) {
    if let Some(e) = o.experiment {
        cfg.experiment = e;
    }
    if let Some(eps) = &o.eps {
        cfg.scales.eps = eps.clone();
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(r) = o.replicas {
        cfg.replicas = r;
    }
    if let Some(out) = &o.out {
        cfg.output_dir = out.to_string_lossy().into_owned();
    }
    if let Some(m) = o.corrector_method {
        cfg.corrector.method = m;
    }
    if let Some(m) = o.mode {
        if let Some(p) = cfg.problem.as_mut() {
            p.modes = vec![m];
        }
    }
    if let Some(r) = o.rho {
        cfg.corrector.rho = Some(r);
    }
}

/// SHA-256 of the canonical JSON form of `cfg`.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let canonical = serde_json::to_string(cfg).expect("config serializes");
    Sha256::digest(canonical.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Loads `config_path`, applies `overrides` and runs the experiment.
pub fn run(config_path: &Path, overrides: &Overrides) -> std::result::Result<RunOutcome, RunError> {
    let mut cfg = config::load(config_path).map_err(RunError::Schema)?;
    apply_overrides(&mut cfg, overrides);
    cfg.check().map_err(|e| RunError::Schema(e[0].clone()))?;
    run_config(&cfg)
}

/// Runs an already resolved configuration.
pub fn run_config(cfg: &ExperimentConfig) -> std::result::Result<RunOutcome, RunError> {
    let out_dir = PathBuf::from(&cfg.output_dir);
    fs::create_dir_all(&out_dir).map_err(|e| RunError::Numerical(e.into()))?;
    let marker = out_dir.join(FAILURE_MARKER);
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| RunError::Numerical(e.into()))?;
    }
    let mut run = Runner::new(cfg, out_dir.clone());
    let result = run.manifest().and_then(|_| run.experiment(cfg.experiment));
    match result {
        Ok(()) => Ok(RunOutcome {
            out_dir,
            artifacts: run.artifacts,
        }),
        Err(e) => {
            let note = format!("{e}\nartifacts written before the failure:\n{}\n", run.artifacts.join("\n"));
            let _ = fs::write(&marker, note);
            Err(RunError::Numerical(e))
        }
    }
}

/// Lazily computed stages shared between experiments.
struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    out: PathBuf,
    artifacts: Vec<String>,
    env: Option<Arc<Environment>>,
    corrector: Option<CorrectorField>,
    effective: Option<Arc<EffectiveCoefficients>>,
    minimizer: Option<Minimizer>,
}

fn eps_tag(i: usize) -> String {
    format!("eps{i}")
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a ExperimentConfig, out: PathBuf) -> Self {
        Self {
            cfg,
            out,
            artifacts: Vec::new(),
            env: None,
            corrector: None,
            effective: None,
            minimizer: None,
        }
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.out.join(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        let p = self.path(name);
        io::write_json(&p, v)
    }

    fn csv<S: AsRef<str>>(&mut self, name: &str, header: &[S], rows: &[Vec<f64>]) -> Result<()> {
        let p = self.path(name);
        io::write_csv(&p, header, rows)
    }

    fn manifest(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let m = json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "config_hash": config_hash(cfg),
            "seed": cfg.seed,
            "experiment": cfg.experiment,
            "config": cfg,
        });
        self.json("manifest.json", &m)
    }

    fn experiment(&mut self, e: Experiment) -> Result<()> {
        match e {
            Experiment::Homogenize => self.homogenize(),
            Experiment::Rate => self.rate(),
            Experiment::Estimate => self.estimate(),
            Experiment::Ergodic => self.ergodic(),
            Experiment::Occupation => self.occupation(),
            Experiment::FullPipeline => {
                self.estimate()?;
                self.ergodic()?;
                self.occupation()
            }
        }
    }

    fn env(&mut self) -> Result<Arc<Environment>> {
        if self.env.is_none() {
            self.env = Some(Arc::new(self.cfg.environment(0)?));
        }
        Ok(self.env.clone().expect("set above"))
    }

    fn corrector(&mut self) -> Result<&CorrectorField> {
        if self.corrector.is_none() {
            let env = self.env()?;
            let c = &self.cfg.corrector;
            let field = CorrectorField::compute(&env, &c.rho_schedule, c.n_grid)?;
            let xi = &field.xi;
            let meta = json!({
                "rho_schedule": field.rho_schedule,
                "residual_norms": field.residual_norms,
                "xi_residual": field.xi_residual,
                "converged": field.converged,
            });
            let shape = [xi.grid.len(), xi.rows, xi.grid.dim];
            let p = self.path("corrector_xi.bin");
            self.artifacts.push("corrector_xi.bin.json".into());
            io::write_binary(&p, &shape, &[], meta, &xi.values)?;
            self.corrector = Some(field);
        }
        Ok(self.corrector.as_ref().expect("set above"))
    }

    fn homogenize(&mut self) -> Result<()> {
        if self.effective.is_some() {
            return Ok(());
        }
        let env = self.env()?;
        self.corrector()?;
        let cor = self.corrector.as_ref().expect("computed");
        let eff = EffectiveCoefficients::compute(&env, cor, &self.cfg.x_grid(), self.cfg.corrector.extrapolate)?;
        let report = json!({
            "b_offset": env.b_offset,
            "rho_schedule": cor.rho_schedule,
            "residual_norms": cor.residual_norms,
            "xi_residual": cor.xi_residual,
            "converged": cor.converged,
            "vanishing_mass": cor.vanishing_mass(&env)?,
            "provenance": eff.provenance,
        });
        let header = eff.header();
        let rows = eff.rows();
        self.csv("effective.csv", &header, &rows)?;
        self.json("homogenize.json", &report)?;
        if self.cfg.corrector.method == CorrectorMethod::Mc {
            self.mc_cross_check()?;
        }
        self.effective = Some(Arc::new(eff));
        Ok(())
    }

    /// Monte Carlo cell solutions at grid nodes against the grid solve at the
    /// largest scheduled ρ.
    fn mc_cross_check(&mut self) -> Result<()> {
        let env = self.env()?;
        let c = &self.cfg.corrector;
        let rho = c.rho_schedule.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let grid = solve_cell_problem_grid(&env, rho, c.n_grid)?;
        let dim = env.fast_dim();
        let stride = (c.n_grid / c.mc_points.max(1)).max(1);
        let nodes: Vec<usize> = (0..c.mc_points).map(|i| (i * stride) % c.n_grid).collect();
        let points: Vec<Vec<f64>> = nodes
            .iter()
            .map(|&i| {
                let mut y = vec![0.0; dim];
                y[0] = i as f64 / c.n_grid as f64;
                y
            })
            .collect();
        let mc = solve_cell_problem_mc(&env, rho, &points, c.mc_paths, 10.0 / rho, self.cfg.seed)?;
        let grid_vals: Vec<Vec<f64>> = nodes.iter().map(|&i| grid.chi.iter().map(|f| f[i]).collect()).collect();
        self.json("corrector_mc.json", &json!({ "mc": mc, "grid": grid_vals }))
    }

    fn model(&mut self) -> Result<Arc<EffectiveCoefficients>> {
        self.homogenize()?;
        Ok(self.effective.clone().expect("computed"))
    }

    fn rate(&mut self) -> Result<()> {
        if self.minimizer.is_some() {
            return Ok(());
        }
        let model = self.model()?;
        let p = self.cfg.problem.as_ref().expect("checked by config");
        let min = minimize_action(&p.x0, &p.event, p.horizon, model.as_ref(), p.n_seg)?;
        let m = p.x0.len();
        let mut header = vec!["t".to_string()];
        header.extend((0..m).map(|i| format!("psi{i}")));
        header.extend((0..m).map(|i| format!("dpsi{i}")));
        let rows = min.path.rows();
        self.csv("minimizer.csv", &header, &rows)?;
        self.json(
            "action.json",
            &json!({ "s_star": min.value, "info": min.info, "event": p.event }),
        )?;
        self.minimizer = Some(min);
        Ok(())
    }

    /// Tracking control of the minimizer, using ξ or Dχ_ρ at the configured ρ.
    fn is_policy(&mut self) -> Result<ControlPolicy> {
        self.rate()?;
        let env = self.env()?;
        let model: Arc<dyn RateModel> = self.model()?;
        let n_grid = self.cfg.corrector.n_grid;
        let table: GradientTable = match self.cfg.corrector.rho {
            Some(rho) => solve_cell_problem_grid(&env, rho, n_grid)?.dchi,
            None if self.cfg.corrector.extrapolate => self.corrector()?.xi.clone(),
            None => self.corrector()?.smallest_rho().dchi.clone(),
        };
        let psi = self.minimizer.as_ref().expect("computed").path.clone();
        build_is_control(env, model, Some(Arc::new(table)), psi)
    }

    fn estimate(&mut self) -> Result<()> {
        let policy = self.is_policy()?;
        let env = self.env()?;
        let cfg = self.cfg;
        let p = cfg.problem.as_ref().expect("checked by config");
        let s_star = self.minimizer.as_ref().expect("computed").value;
        let problem = RareEventProblem {
            env,
            x0: p.x0.clone(),
            y0: cfg.y0(),
            horizon: p.horizon,
            event: p.event.clone(),
            is_policy: policy,
        };
        let mut per_mode = Vec::new();
        for &mode in &p.modes {
            let mut estimates = Vec::new();
            for (i, &eps) in cfg.scales.eps.iter().enumerate() {
                let scale = cfg.scale(eps)?;
                let (est, recs) = estimate_probability(&problem, &scale, cfg.replicas, mode, cfg.seed)?;
                let mut header = vec!["replica", "hit", "log_weight", "control_cost"]
                    .into_iter()
                    .map(String::from)
                    .collect::<Vec<_>>();
                header.extend((0..p.x0.len()).map(|j| format!("x_final{j}")));
                let rows: Vec<Vec<f64>> = recs
                    .iter()
                    .map(|r| {
                        let mut row = vec![r.replica as f64, f64::from(u8::from(r.hit)), r.log_weight, r.control_cost];
                        row.extend(&r.x_final);
                        row
                    })
                    .collect();
                let name = format!("replicas_{}_{}.csv", mode_name(mode), eps_tag(i));
                self.csv(&name, &header, &rows)?;
                estimates.push(est);
            }
            let scaling = if estimates.len() >= 3 {
                Some(ldp_scaling_report(&estimates, s_star)?)
            } else {
                None
            };
            per_mode.push(json!({ "mode": mode, "estimates": estimates, "scaling": scaling }));
        }
        self.json("estimate.json", &json!({ "s_star": s_star, "results": per_mode }))
    }

    fn slow_start(&self) -> Vec<f64> {
        self.cfg
            .problem
            .as_ref()
            .map(|p| p.x0.clone())
            .unwrap_or_else(|| vec![0.0; self.cfg.coefficients.slow_dim])
    }

    fn ergodic(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let e = cfg.ergodic.as_ref().expect("checked by config");
        let policy = if e.mode == ErgodicMode::Controlled {
            self.is_policy()?
        } else {
            ControlPolicy::Zero
        };
        let media = (0..e.media as u64).map(|i| cfg.environment(i)).collect::<Result<Vec<_>>>()?;
        let mut opts = ErgodicOptions::new(e.shifts.clone(), cfg.replicas, cfg.seed);
        opts.beta = e.beta;
        opts.x0 = self.slow_start();
        opts.y0 = cfg.y0();
        let reports: Vec<ErgodicReport> = cfg
            .scales
            .eps
            .iter()
            .map(|&eps| ergodic_average(&media, &cfg.scale(eps)?, &e.observable, e.mode, &policy, &opts))
            .collect::<Result<_>>()?;
        let mut by_eps: Vec<&ErgodicReport> = reports.iter().collect();
        by_eps.sort_by(|a, b| b.eps.total_cmp(&a.eps));
        let decreasing = by_eps.windows(2).all(|w| w[1].max_deviation <= w[0].max_deviation);
        self.json("ergodic.json", &json!({ "reports": reports, "deviation_decreasing": decreasing }))
    }

    fn occupation(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let oc = cfg.occupation.clone().unwrap_or_default();
        let policy = if oc.controlled { self.is_policy()? } else { ControlPolicy::Zero };
        let env = self.env()?;
        let x0 = self.slow_start();
        let y0 = cfg.y0();
        let horizon = cfg.problem.as_ref().map_or(1.0, |p| p.horizon);
        let spec = oc.spec();
        let mut summaries = Vec::new();
        for (i, &eps) in cfg.scales.eps.iter().enumerate() {
            let scale = cfg.scale(eps)?;
            let h = build_occupation(&env, &scale, &x0, &y0, horizon, &policy, &spec, cfg.seed, 0)?;
            let header = ["t_lo", "t_hi", "u1_lo", "u1_hi", "u2_lo", "u2_hi", "y_lo", "y_hi", "mass"];
            let rows: Vec<Vec<f64>> = h.rows().iter().map(|r| r.to_vec()).collect();
            self.csv(&format!("occupation_{}.csv", eps_tag(i)), &header, &rows)?;
            let tv = match &env.density {
                Some(d) if env.fast_dim() == 1 => Some(total_variation(&h.y_marginal(), &d.bin_masses(spec.y_bins))),
                _ => None,
            };
            summaries.push(json!({
                "eps": eps,
                "delta": h.delta,
                "dt": h.dt,
                "overflow": h.overflow,
                "overflow_mass": h.overflow_mass,
                "y_marginal": h.y_marginal(),
                "y_marginal_tv": tv,
                "cumulative_time_mass": h.cumulative_time_mass(),
            }));
            if oc.dump_thin > 0 {
                self.dump_path(&env, &scale, &x0, &y0, horizon, &policy, oc.dump_thin, i)?;
            }
        }
        self.json("occupation.json", &summaries)
    }

    #[allow(clippy::too_many_arguments)]
    fn dump_path(
        &mut self,
        env: &Environment,
        scale: &crate::dynamics::ScaleParams,
        x0: &[f64],
        y0: &[f64],
        horizon: f64,
        policy: &ControlPolicy,
        thin: usize,
        i: usize,
    ) -> Result<()> {
        let c = integrate_controlled(env, scale, x0, y0, horizon, policy, self.cfg.seed, 0, thin)?;
        let path = &c.path;
        let (m, n) = (path.slow_dim, path.fast_dim);
        let mut header = vec!["t".to_string()];
        header.extend((0..m).map(|j| format!("x{j}")));
        header.extend((0..n).map(|j| format!("y{j}")));
        let rows: Vec<Vec<f64>> = (0..path.len())
            .map(|k| {
                let mut row = vec![path.times[k]];
                row.extend(path.x_at(k));
                row.extend(path.y_at(k));
                row
            })
            .collect();
        self.csv(&format!("trajectory_{}.csv", eps_tag(i)), &header, &rows)?;
        let flat: Vec<f64> = rows.concat();
        let name = format!("trajectory_{}.bin", eps_tag(i));
        let p = self.path(&name);
        self.artifacts.push(format!("{name}.json"));
        let meta = json!({ "dt": path.dt, "thin": thin, "log_weight": c.log_weight });
        io::write_binary(&p, &[rows.len(), 1 + m + n], &header, meta, &flat)
    }
}

fn mode_name(m: EstimatorMode) -> &'static str {
    match m {
        EstimatorMode::Plain => "plain",
        EstimatorMode::Is => "is",
    }
}
