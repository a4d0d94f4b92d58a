//! Euler–Maruyama integration of the slow/fast system, its controlled
//! version with the Girsanov log-likelihood, and the fast process on its
//! natural time scale.
//!
//! Slow/fast system (`Z = (W, B)`):
//!
//! ```text
//! dX = [(ε/δ) b(Y) + c(X,Y) + σ u₁] dt + √ε σ dW
//! dY = (1/δ)[(ε/δ) f(Y) + g(X,Y) + τ₁ u₁ + τ₂ u₂] dt + (√ε/δ)[τ₁ dW + τ₂ dB]
//! ```
//!
//! The log-weight accumulated along a controlled path is
//! `log M = −(1/√ε) ∫ u·dZ − (1/2ε) ∫ |u|² dt`, the density of the
//! uncontrolled law with respect to the controlled one.

mod control;

pub use control::{ControlLaw, ControlPolicy, TrackingControl};

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::medium::{CoefficientValues, Environment};
use crate::rng;

/// Small-noise and scale-separation parameters, δ = ε^a.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub epsilon: f64,
    pub delta_exponent: f64,
    /// Time step as a fraction of the fast time scale δ²/ε.
    pub c_step: f64,
    /// Explicit time step; must not exceed `c_step·δ²/ε`.
    pub dt_override: Option<f64>,
}

impl ScaleParams {
    pub const DEFAULT_EXPONENT: f64 = 1.5;
    /// The fast variable relaxes at rate 4π² (in units of ρ) for unit-period
    /// media, so a step of 0.02ρ resolves it.
    pub const DEFAULT_C_STEP: f64 = 0.02;

    pub fn new(epsilon: f64, delta_exponent: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        if !(delta_exponent > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "delta exponent must be positive, got {delta_exponent}"
            )));
        }
        Ok(Self {
            epsilon,
            delta_exponent,
            c_step: Self::DEFAULT_C_STEP,
            dt_override: None,
        })
    }

    pub fn with_c_step(mut self, c_step: f64) -> Self {
        self.c_step = c_step;
        self
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt_override = Some(dt);
        self
    }

    pub fn delta(&self) -> f64 {
        self.epsilon.powf(self.delta_exponent)
    }

    pub fn eps_over_delta(&self) -> f64 {
        self.epsilon / self.delta()
    }

    /// ρ(ε) = δ²/ε, also the time scale of the fast motion.
    pub fn rho(&self) -> f64 {
        let d = self.delta();
        d * d / self.epsilon
    }

    /// ε/δ → ∞ requires a > 1.
    pub fn is_homogenization_regime(&self) -> bool {
        self.delta_exponent > 1.0
    }

    pub fn max_step(&self) -> f64 {
        self.c_step * self.rho()
    }

    /// Number of uniform steps and their size for horizon `horizon`.
    pub fn steps_for(&self, horizon: f64) -> Result<(usize, f64)> {
        if horizon == 0.0 {
            return Ok((0, 0.0));
        }
        let limit = self.max_step();
        let target = match self.dt_override {
            Some(dt) if dt > limit * (1.0 + 1e-12) => {
                return Err(Error::StepSize { dt, limit });
            }
            Some(dt) => dt,
            None => limit,
        };
        let n = (horizon / target).ceil().max(1.0) as usize;
        Ok((n, horizon / n as f64))
    }
}

/// Stored trajectory, possibly thinned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub slow_dim: usize,
    pub fast_dim: usize,
    pub times: Vec<f64>,
    /// Row-major, one row of `slow_dim` per stored time.
    pub x: Vec<f64>,
    /// Row-major, one row of `fast_dim` per stored time.
    pub y: Vec<f64>,
    pub replica_id: u64,
    pub stream_seed: u64,
    /// Simulation step (before thinning).
    pub dt: f64,
}

impl PathSample {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn x_at(&self, i: usize) -> &[f64] {
        &self.x[i * self.slow_dim..(i + 1) * self.slow_dim]
    }

    pub fn y_at(&self, i: usize) -> &[f64] {
        &self.y[i * self.fast_dim..(i + 1) * self.fast_dim]
    }

    pub fn x_final(&self) -> &[f64] {
        self.x_at(self.len() - 1)
    }
}

/// Which parts of the system are integrated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsOptions {
    /// Keep the `(1/δ) g` drift of the fast variable.
    pub include_g: bool,
    /// Evolve the slow variable; when false X stays at x₀.
    pub evolve_x: bool,
    /// Cap on the running control cost ½∫|u|²; exceeding it is flagged.
    pub cost_cap: f64,
}

impl Default for DynamicsOptions {
    fn default() -> Self {
        Self {
            include_g: true,
            evolve_x: true,
            cost_cap: f64::INFINITY,
        }
    }
}

/// Receives the state at the start of each step together with the control
/// applied over that step, plus the final state.
pub trait Observer {
    fn observe(&mut self, step: usize, t: f64, x: &[f64], y: &[f64], u1: &[f64], u2: &[f64]);
}

impl<F: FnMut(usize, f64, &[f64], &[f64], &[f64], &[f64])> Observer for F {
    fn observe(&mut self, step: usize, t: f64, x: &[f64], y: &[f64], u1: &[f64], u2: &[f64]) {
        self(step, t, x, y, u1, u2)
    }
}

/// Outcome of one integrated path.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub steps: usize,
    pub dt: f64,
    pub x_final: Vec<f64>,
    pub y_final: Vec<f64>,
    pub log_weight: f64,
    pub control_cost: f64,
    pub cost_cap_exceeded: bool,
}

/// Integrates the (optionally controlled) system from `(x0, y0)` over `[0, horizon]`.
///
/// Euler–Maruyama, except that the fast drift `(ε/δ)f + g` takes a Heun
/// predictor–corrector stage. With the plain left-point drift a kick from `g`
/// lands one full step before the response of `b` is sampled, which loses
/// `O(λ dt)` of the corrector drift `E[ξ g]` (λ the fast relaxation rate in
/// the fast clock). Controls enter as a shift of the Gaussian increments, so
/// the discrete likelihood ratio is exactly the accumulated log-weight.
#[allow(clippy::too_many_arguments)]
pub fn integrate_with<O: Observer>(
    env: &Environment,
    scale: &ScaleParams,
    x0: &[f64],
    y0: &[f64],
    horizon: f64,
    policy: &ControlPolicy,
    options: DynamicsOptions,
    rng: &mut ChaCha8Rng,
    observer: &mut O,
) -> Result<RunSummary> {
    let co = &env.coeffs;
    let (m, n, k1, k2) = (co.slow_dim, co.fast_dim, co.k1, co.k2);
    check_dims(x0, m, "x0")?;
    check_dims(y0, n, "y0")?;
    if !(horizon >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "horizon must be nonnegative, got {horizon}"
        )));
    }
    let (steps, dt) = scale.steps_for(horizon)?;
    let eps = scale.epsilon;
    let delta = scale.delta();
    let eod = eps / delta;
    let sqrt_eps = eps.sqrt();
    let sqrt_dt = dt.sqrt();

    let mut x = x0.to_vec();
    let mut y = y0.to_vec();
    let mut y_red = vec![0.0; n];
    let mut vals: CoefficientValues = co.zero_values();
    let varying = co.varying();
    reduce(&y, &mut y_red);
    co.eval_into(&x, &y_red, &mut vals);
    // the fast drift needs a corrector stage only where it varies with y
    let heun = !varying.f.is_empty() || (options.include_g && !varying.g.is_empty());
    let mut f_pred = vec![0.0; n];
    let mut g_pred = vec![0.0; n];
    let mut y_pred = vec![0.0; n];
    let mut u1 = vec![0.0; k1];
    let mut u2 = vec![0.0; k2];
    let mut dw = vec![0.0; k1];
    let mut db = vec![0.0; k2];
    let mut dw_hat = vec![0.0; k1];
    let mut db_hat = vec![0.0; k2];
    let mut y_noise = vec![0.0; n];
    let mut y_drift = vec![0.0; n];
    let mut log_weight = 0.0;
    let mut cost = 0.0;
    let controlled = !matches!(policy, ControlPolicy::Zero);
    let g_on = if options.include_g { 1.0 } else { 0.0 };

    for step in 0..steps {
        let t = step as f64 * dt;
        if step > 0 {
            co.eval_varying_into(&x, &y_red, &varying, &mut vals);
        }
        if controlled {
            policy.control(t, &x, &y_red, &mut u1, &mut u2);
        }
        observer.observe(step, t, &x, &y, &u1, &u2);

        rng::fill_normal(rng, sqrt_dt, &mut dw);
        rng::fill_normal(rng, sqrt_dt, &mut db);
        // the control acts as a shift of the driving increments
        let shift = dt / sqrt_eps;
        for j in 0..k1 {
            dw_hat[j] = dw[j] + u1[j] * shift;
        }
        for j in 0..k2 {
            db_hat[j] = db[j] + u2[j] * shift;
        }

        for i in 0..n {
            let mut noise = 0.0;
            for j in 0..k1 {
                noise += vals.tau1[i * k1 + j] * dw_hat[j];
            }
            for j in 0..k2 {
                noise += vals.tau2[i * k2 + j] * db_hat[j];
            }
            y_noise[i] = sqrt_eps * noise;
            y_drift[i] = eod * vals.f[i] + g_on * vals.g[i];
        }
        if heun {
            for i in 0..n {
                let v = y[i] + (y_drift[i] * dt + y_noise[i]) / delta;
                y_pred[i] = frac(v);
            }
            f_pred.copy_from_slice(&vals.f);
            g_pred.copy_from_slice(&vals.g);
            co.f.eval_entries_into(&x, &y_pred, &varying.f, &mut f_pred);
            if options.include_g {
                co.g.eval_entries_into(&x, &y_pred, &varying.g, &mut g_pred);
            }
            for i in 0..n {
                y_drift[i] = 0.5 * (y_drift[i] + eod * f_pred[i] + g_on * g_pred[i]);
            }
        }

        if options.evolve_x {
            for i in 0..m {
                let drift = eod * vals.b[i] + vals.c[i];
                let mut noise = 0.0;
                for j in 0..k1 {
                    noise += vals.sigma[i * k1 + j] * dw_hat[j];
                }
                x[i] += drift * dt + sqrt_eps * noise;
            }
        }
        for i in 0..n {
            y[i] += (y_drift[i] * dt + y_noise[i]) / delta;
        }
        reduce(&y, &mut y_red);
        if controlled {
            let mut stoch = 0.0;
            let mut sq = 0.0;
            for j in 0..k1 {
                stoch += u1[j] * dw[j];
                sq += u1[j] * u1[j];
            }
            for j in 0..k2 {
                stoch += u2[j] * db[j];
                sq += u2[j] * u2[j];
            }
            log_weight += -stoch / sqrt_eps - 0.5 * sq * dt / eps;
            cost += 0.5 * sq * dt;
        }
        if !x.iter().chain(&y).all(|v| v.is_finite()) || !log_weight.is_finite() {
            return Err(Error::NonFinite { step: step + 1 });
        }
    }
    let t_end = steps as f64 * dt;
    reduce(&y, &mut y_red);
    if controlled {
        policy.control(t_end, &x, &y_red, &mut u1, &mut u2);
    }
    observer.observe(steps, t_end, &x, &y, &u1, &u2);
    Ok(RunSummary {
        steps,
        dt,
        x_final: x,
        y_final: y,
        log_weight,
        control_cost: cost,
        cost_cap_exceeded: cost > options.cost_cap,
    })
}

#[inline]
fn reduce(y: &[f64], out: &mut [f64]) {
    for (o, v) in out.iter_mut().zip(y) {
        *o = frac(*v);
    }
}

/// `v − ⌊v⌋`, bit for bit, without a libm call. The subtraction of the
/// truncated value is exact for |v| < 2⁵².
#[inline]
pub fn frac(v: f64) -> f64 {
    let r = v - (v as i64) as f64;
    if r < 0.0 {
        r + 1.0
    } else {
        r
    }
}

fn check_dims(v: &[f64], dim: usize, name: &str) -> Result<()> {
    if v.len() != dim {
        return Err(Error::InvalidArgument(format!(
            "{name} has length {}, expected {dim}",
            v.len()
        )));
    }
    Ok(())
}

/// Observer that stores every `thin`-th state and the final one.
struct Recorder {
    thin: usize,
    total: usize,
    times: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Observer for Recorder {
    fn observe(&mut self, step: usize, t: f64, x: &[f64], y: &[f64], _: &[f64], _: &[f64]) {
        if step % self.thin == 0 || step == self.total {
            self.times.push(t);
            self.x.extend_from_slice(x);
            self.y.extend_from_slice(y);
        }
    }
}

/// Result of a controlled integration.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlledPath {
    pub path: PathSample,
    pub log_weight: f64,
    /// ½∫(|u₁|² + |u₂|²) dt.
    pub control_cost: f64,
    pub cost_cap_exceeded: bool,
}

/// Simulates the controlled system, storing every `thin`-th state.
#[allow(clippy::too_many_arguments)]
pub fn integrate_controlled(
    env: &Environment,
    scale: &ScaleParams,
    x0: &[f64],
    y0: &[f64],
    horizon: f64,
    policy: &ControlPolicy,
    stream_seed: u64,
    replica_id: u64,
    thin: usize,
) -> Result<ControlledPath> {
    let (total, _) = scale.steps_for(horizon)?;
    let mut rec = Recorder {
        thin: thin.max(1),
        total,
        times: Vec::new(),
        x: Vec::new(),
        y: Vec::new(),
    };
    let mut rng = rng::stream(stream_seed, replica_id);
    let summary = integrate_with(
        env,
        scale,
        x0,
        y0,
        horizon,
        policy,
        DynamicsOptions::default(),
        &mut rng,
        &mut rec,
    )?;
    Ok(ControlledPath {
        path: PathSample {
            slow_dim: env.slow_dim(),
            fast_dim: env.fast_dim(),
            times: rec.times,
            x: rec.x,
            y: rec.y,
            replica_id,
            stream_seed,
            dt: summary.dt,
        },
        log_weight: summary.log_weight,
        control_cost: summary.control_cost,
        cost_cap_exceeded: summary.cost_cap_exceeded,
    })
}

/// Simulates the uncontrolled system, storing every `thin`-th state.
#[allow(clippy::too_many_arguments)]
pub fn integrate_uncontrolled(
    env: &Environment,
    scale: &ScaleParams,
    x0: &[f64],
    y0: &[f64],
    horizon: f64,
    stream_seed: u64,
    replica_id: u64,
    thin: usize,
) -> Result<PathSample> {
    integrate_controlled(
        env,
        scale,
        x0,
        y0,
        horizon,
        &ControlPolicy::Zero,
        stream_seed,
        replica_id,
        thin,
    )
    .map(|c| c.path)
}

/// Default step of the rescaled fast process.
pub const FAST_STEP: f64 = 1e-3;

/// Integrates `dŶ = f(Ŷ) dt + τ₁ dW + τ₂ dB` (so `κκᵀ = τ₁τ₁ᵀ + τ₂τ₂ᵀ`),
/// calling `visit(step, t, y)` at every grid time including 0 and the end.
pub fn integrate_fast_with<V: FnMut(usize, f64, &[f64])>(
    env: &Environment,
    y0: &[f64],
    horizon: f64,
    dt: f64,
    rng: &mut ChaCha8Rng,
    mut visit: V,
) -> Result<()> {
    let co = &env.coeffs;
    let (n, k1, k2) = (co.fast_dim, co.k1, co.k2);
    check_dims(y0, n, "y0")?;
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument("fast step must be positive".into()));
    }
    let steps = if horizon > 0.0 {
        (horizon / dt).ceil() as usize
    } else {
        0
    };
    let h = if steps > 0 { horizon / steps as f64 } else { 0.0 };
    let sqrt_h = h.sqrt();
    let mut y = y0.to_vec();
    let mut y_red = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut t1 = vec![0.0; n * k1];
    let mut t2 = vec![0.0; n * k2];
    let mut dw = vec![0.0; k1];
    let mut db = vec![0.0; k2];
    visit(0, 0.0, &y);
    for step in 0..steps {
        reduce(&y, &mut y_red);
        co.f.eval_into(&[], &y_red, &mut f);
        co.tau1.eval_into(&[], &y_red, &mut t1);
        co.tau2.eval_into(&[], &y_red, &mut t2);
        rng::fill_normal(rng, sqrt_h, &mut dw);
        rng::fill_normal(rng, sqrt_h, &mut db);
        for i in 0..n {
            let mut d = f[i] * h;
            for j in 0..k1 {
                d += t1[i * k1 + j] * dw[j];
            }
            for j in 0..k2 {
                d += t2[i * k2 + j] * db[j];
            }
            y[i] += d;
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { step: step + 1 });
        }
        visit(step + 1, (step + 1) as f64 * h, &y);
    }
    Ok(())
}

/// Stored fast path Ŷ on its own time scale.
#[derive(Debug, Clone, PartialEq)]
pub struct FastPath {
    pub fast_dim: usize,
    pub times: Vec<f64>,
    pub y: Vec<f64>,
}

/// Integrates the rescaled fast process and stores every `thin`-th state.
pub fn integrate_fast_rescaled(
    env: &Environment,
    y0: &[f64],
    horizon: f64,
    stream_seed: u64,
    replica_id: u64,
    thin: usize,
) -> Result<FastPath> {
    let mut rng = rng::stream(stream_seed, replica_id);
    let thin = thin.max(1);
    let total = if horizon > 0.0 {
        (horizon / FAST_STEP).ceil() as usize
    } else {
        0
    };
    let mut times = Vec::new();
    let mut ys = Vec::new();
    integrate_fast_with(env, y0, horizon, FAST_STEP, &mut rng, |step, t, y| {
        if step % thin == 0 || step == total {
            times.push(t);
            ys.extend_from_slice(y);
        }
    })?;
    Ok(FastPath {
        fast_dim: env.fast_dim(),
        times,
        y: ys,
    })
}

/// Runs `f(replica_id)` for ids `0..n` in parallel, returning results in id order.
pub fn run_replicas<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..n as u64).into_par_iter().map(f).collect()
}

#[cfg(test)]
mod tests;
