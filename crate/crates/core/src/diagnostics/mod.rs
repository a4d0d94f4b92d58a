//! Numerical checks of the limit structure: quenched ergodic window
//! averages of the fast process, occupation measures of (control, fast
//! state) pairs, and the mean slow path against its limiting ODE.

use serde::{Deserialize, Serialize};

use crate::action::DiscretePath;
use crate::dynamics::{frac, integrate_with, run_replicas, ControlPolicy, DynamicsOptions, ScaleParams};
use crate::error::{Error, Result};
use crate::medium::field::{Mode, ScalarField};
use crate::medium::Environment;
use crate::rng;

/// Shortest admissible averaging window, in simulation steps.
pub const MIN_WINDOW_STEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErgodicMode {
    /// Fast drift `(ε/δ)f` only.
    Uncontrolled,
    /// Adds the bounded `(1/δ)g` drift.
    Perturbed,
    /// Adds `g` and the supplied control.
    Controlled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicOptions {
    /// Window `h = ρ^{1−β}`.
    pub beta: f64,
    /// Window start times.
    pub shifts: Vec<f64>,
    pub replicas: usize,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub seed: u64,
}

impl ErgodicOptions {
    pub fn new(shifts: Vec<f64>, replicas: usize, seed: u64) -> Self {
        Self {
            beta: 0.5,
            shifts,
            replicas,
            x0: vec![0.0],
            y0: vec![0.0],
            seed,
        }
    }
}

/// Window averages for one (medium, shift) pair, over replicas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStat {
    pub medium: usize,
    pub shift: f64,
    pub mean_average: f64,
    /// Mean over replicas of |window average − Ψ̄|.
    pub deviation: f64,
    pub deviation_std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicReport {
    pub observable: Vec<Mode>,
    pub mode: ErgodicMode,
    pub eps: f64,
    pub window: f64,
    pub window_steps: usize,
    /// Ψ̄ per medium.
    pub target: Vec<f64>,
    pub stats: Vec<WindowStat>,
    pub max_deviation: f64,
    /// Standard error attached to the maximizing (medium, shift).
    pub max_deviation_std_err: f64,
    /// Largest deviation over media at the first shift.
    pub first_shift_deviation: f64,
    pub per_medium_max: Vec<f64>,
}

/// Averages `(1/h)∫_t^{t+h} Ψ(Y_s) ds` for each shift `t`, medium and
/// replica. All media are run with the same replica streams offset by
/// medium index.
pub fn ergodic_average(
    media: &[Environment],
    scale: &ScaleParams,
    observable: &[Mode],
    mode: ErgodicMode,
    policy: &ControlPolicy,
    options: &ErgodicOptions,
) -> Result<ErgodicReport> {
    if media.is_empty() || options.shifts.is_empty() || options.replicas < 2 {
        return Err(Error::InvalidArgument(
            "ergodic averages need media, shifts and at least two replicas".into(),
        ));
    }
    if !(options.beta > 0.0 && options.beta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "beta must lie in (0, 1), got {}",
            options.beta
        )));
    }
    if options.shifts.iter().any(|&s| !(s >= 0.0)) {
        return Err(Error::InvalidArgument("shifts must be nonnegative".into()));
    }
    let psi = ScalarField::from_modes(observable);
    let window = scale.rho().powf(1.0 - options.beta);
    let (_, dt) = scale.steps_for(window)?;
    let window_steps = (window / dt).round() as usize;
    if window_steps < MIN_WINDOW_STEPS {
        return Err(Error::InvalidArgument(format!(
            "window {window:e} spans {window_steps} steps, fewer than {MIN_WINDOW_STEPS}"
        )));
    }
    let starts: Vec<usize> = options.shifts.iter().map(|&s| (s / dt).round() as usize).collect();
    let horizon = (starts.iter().max().unwrap() + window_steps) as f64 * dt;
    // slightly inflated so that the step count is exactly the intended one
    let run_scale = scale.with_dt(dt * (1.0 + 1e-13));
    let (dyn_options, policy) = match mode {
        ErgodicMode::Uncontrolled => (
            DynamicsOptions {
                include_g: false,
                ..Default::default()
            },
            ControlPolicy::Zero,
        ),
        ErgodicMode::Perturbed => (DynamicsOptions::default(), ControlPolicy::Zero),
        ErgodicMode::Controlled => (DynamicsOptions::default(), policy.clone()),
    };

    let n_rep = options.replicas;
    let mut stats = Vec::new();
    let mut target = Vec::new();
    for (mi, env) in media.iter().enumerate() {
        let bar = env.pi_average(|y| psi.value(&[], y))?;
        target.push(bar);
        let averages: Vec<Result<Vec<f64>>> = run_replicas(n_rep, |rep| {
            let mut sums = vec![0.0; starts.len()];
            let mut rng = rng::stream(options.seed, (mi * n_rep) as u64 + rep);
            let mut y_red = vec![0.0; env.fast_dim()];
            integrate_with(
                env,
                &run_scale,
                &options.x0,
                &options.y0,
                horizon,
                &policy,
                dyn_options,
                &mut rng,
                &mut |step: usize, _: f64, _: &[f64], y: &[f64], _: &[f64], _: &[f64]| {
                    let mut reduced = false;
                    for (k, &s0) in starts.iter().enumerate() {
                        if step >= s0 && step < s0 + window_steps {
                            if !reduced {
                                for (o, v) in y_red.iter_mut().zip(y) {
                                    *o = frac(*v);
                                }
                                reduced = true;
                            }
                            sums[k] += psi.value(&[], &y_red);
                        }
                    }
                },
            )?;
            Ok(sums.into_iter().map(|s| s / window_steps as f64).collect())
        });
        let averages = averages.into_iter().collect::<Result<Vec<_>>>()?;
        for (k, &shift) in options.shifts.iter().enumerate() {
            let a: Vec<f64> = averages.iter().map(|v| v[k]).collect();
            let d: Vec<f64> = a.iter().map(|v| (v - bar).abs()).collect();
            let (dm, dse) = mean_se(&d);
            stats.push(WindowStat {
                medium: mi,
                shift,
                mean_average: mean_se(&a).0,
                deviation: dm,
                deviation_std_err: dse,
            });
        }
    }
    let argmax = stats
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.deviation.total_cmp(&b.1.deviation))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let per_medium_max = (0..media.len())
        .map(|mi| {
            stats
                .iter()
                .filter(|s| s.medium == mi)
                .fold(0.0, |a: f64, s| a.max(s.deviation))
        })
        .collect();
    let first_shift_deviation = stats
        .iter()
        .filter(|s| s.shift == options.shifts[0])
        .fold(0.0, |a: f64, s| a.max(s.deviation));
    Ok(ErgodicReport {
        observable: observable.to_vec(),
        mode,
        eps: scale.epsilon,
        window,
        window_steps,
        target,
        max_deviation: stats[argmax].deviation,
        max_deviation_std_err: stats[argmax].deviation_std_err,
        first_shift_deviation,
        per_medium_max,
        stats,
    })
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (var / n).sqrt())
}

/// Default occupation window `Δ = 10ρ(ε/δ)^{1/4}`.
pub fn default_occupation_window(scale: &ScaleParams) -> f64 {
    10.0 * scale.rho() * scale.eps_over_delta().powf(0.25)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationSpec {
    pub time_bins: usize,
    /// Odd, so that zero is the centre of a bin.
    pub u_bins: usize,
    /// Control bins cover `[−u_max, u_max]`.
    pub u_max: f64,
    pub y_bins: usize,
    /// `None` selects [`default_occupation_window`].
    pub delta: Option<f64>,
}

impl Default for OccupationSpec {
    fn default() -> Self {
        Self {
            time_bins: 10,
            u_bins: 21,
            u_max: 5.0,
            y_bins: 20,
            delta: None,
        }
    }
}

/// Histogram of the occupation measure
///
/// ```text
/// P(A × B × Γ × [0,t]) = ∫₀ᵗ (1/Δ) ∫_s^{s+Δ} 1{u₁(r) ∈ A, u₂(r) ∈ B, Y_r ∈ Γ} dr ds
/// ```
///
/// on bins of the first components of `u₁`, `u₂`, of `Y mod 1` (first fast
/// coordinate) and of `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationHistogram {
    pub delta: f64,
    pub horizon: f64,
    pub dt: f64,
    pub time_bins: usize,
    pub u1_bins: usize,
    pub u2_bins: usize,
    pub y_bins: usize,
    pub u_max: f64,
    /// Index `((t·u1_bins + a)·u2_bins + b)·y_bins + c`.
    pub masses: Vec<f64>,
    /// Mass of control values beyond `u_max`, clamped into the edge bins.
    pub overflow_mass: f64,
    pub overflow: bool,
}

impl OccupationHistogram {
    fn index(&self, t: usize, a: usize, b: usize, c: usize) -> usize {
        ((t * self.u1_bins + a) * self.u2_bins + b) * self.y_bins + c
    }

    pub fn time_edges(&self) -> Vec<f64> {
        (0..=self.time_bins)
            .map(|k| self.horizon * k as f64 / self.time_bins as f64)
            .collect()
    }

    /// Mass over `[0, t_k]` for each time edge `t_k`, `k ≥ 1`.
    pub fn cumulative_time_mass(&self) -> Vec<f64> {
        let per_t = self.u1_bins * self.u2_bins * self.y_bins;
        let mut acc = 0.0;
        self.masses
            .chunks(per_t)
            .map(|c| {
                acc += c.iter().sum::<f64>();
                acc
            })
            .collect()
    }

    /// y-marginal normalized to a probability vector.
    pub fn y_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.y_bins];
        for (i, m) in self.masses.iter().enumerate() {
            out[i % self.y_bins] += m;
        }
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= total);
        out
    }

    /// u₁-marginal normalized to a probability vector.
    pub fn u1_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.u1_bins];
        for t in 0..self.time_bins {
            for a in 0..self.u1_bins {
                for b in 0..self.u2_bins {
                    for c in 0..self.y_bins {
                        out[a] += self.masses[self.index(t, a, b, c)];
                    }
                }
            }
        }
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= total);
        out
    }

    /// Rows `t_lo, t_hi, u1_lo, u1_hi, u2_lo, u2_hi, y_lo, y_hi, mass`.
    pub fn rows(&self) -> Vec<[f64; 9]> {
        let te = self.time_edges();
        let edge = |k: usize, n: usize| {
            if n == 1 {
                (0.0, 0.0)
            } else {
                let w = 2.0 * self.u_max / n as f64;
                (-self.u_max + k as f64 * w, -self.u_max + (k + 1) as f64 * w)
            }
        };
        let mut out = Vec::with_capacity(self.masses.len());
        for t in 0..self.time_bins {
            for a in 0..self.u1_bins {
                let (a0, a1) = edge(a, self.u1_bins);
                for b in 0..self.u2_bins {
                    let (b0, b1) = edge(b, self.u2_bins);
                    for c in 0..self.y_bins {
                        let y0 = c as f64 / self.y_bins as f64;
                        let y1 = (c + 1) as f64 / self.y_bins as f64;
                        out.push([te[t], te[t + 1], a0, a1, b0, b1, y0, y1, self.masses[self.index(t, a, b, c)]]);
                    }
                }
            }
        }
        out
    }
}

/// Total-variation distance `½Σ|p − q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn u_bin(u: f64, n: usize, u_max: f64) -> (usize, bool) {
    if n == 1 {
        return (0, u != 0.0);
    }
    let s = (u + u_max) / (2.0 * u_max) * n as f64;
    if s < 0.0 {
        (0, true)
    } else if s >= n as f64 {
        (n - 1, s > n as f64 || u > u_max)
    } else {
        (s as usize, false)
    }
}

/// Occupation histogram of one run over `[0, horizon]`; the run is extended
/// by `Δ` so that every window is complete.
#[allow(clippy::too_many_arguments)]
pub fn build_occupation(
    env: &Environment,
    scale: &ScaleParams,
    x0: &[f64],
    y0: &[f64],
    horizon: f64,
    policy: &ControlPolicy,
    spec: &OccupationSpec,
    seed: u64,
    replica: u64,
) -> Result<OccupationHistogram> {
    if spec.u_bins % 2 == 0 || spec.time_bins == 0 || spec.y_bins == 0 || !(spec.u_max > 0.0) {
        return Err(Error::InvalidArgument(
            "occupation bins: u_bins must be odd, other counts positive, u_max > 0".into(),
        ));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    let delta = spec.delta.unwrap_or_else(|| default_occupation_window(scale));
    if delta < 10.0 * scale.rho() * (1.0 - 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "occupation window {delta:e} is shorter than 10ρ = {:e}",
            10.0 * scale.rho()
        )));
    }
    let nb = spec.time_bins;
    let n = nb * (horizon / (scale.max_step() * nb as f64)).ceil().max(1.0) as usize;
    let dt = horizon / n as f64;
    let w = ((delta / dt).round() as usize).max(1);
    // slightly inflated so that the step count is exactly the intended one
    let run_scale = scale.with_dt(dt * (1.0 + 1e-13));
    let run_horizon = (n + w) as f64 * dt;
    let (k2, n_fast) = (env.coeffs.k2, env.fast_dim());
    let u2_bins = if k2 == 0 { 1 } else { spec.u_bins };

    let mut hist = OccupationHistogram {
        delta: w as f64 * dt,
        horizon,
        dt,
        time_bins: nb,
        u1_bins: spec.u_bins,
        u2_bins,
        y_bins: spec.y_bins,
        u_max: spec.u_max,
        masses: vec![0.0; nb * spec.u_bins * u2_bins * spec.y_bins],
        overflow_mass: 0.0,
        overflow: false,
    };
    let per_bin = n / nb;
    let unit = dt / w as f64;
    let mut rng = rng::stream(seed, replica);
    let mut overflow_mass = 0.0;
    let summary = integrate_with(
        env,
        &run_scale,
        x0,
        y0,
        run_horizon,
        policy,
        DynamicsOptions::default(),
        &mut rng,
        &mut |j: usize, _: f64, _: &[f64], y: &[f64], u1: &[f64], u2: &[f64]| {
            if j >= n + w - 1 || n_fast == 0 {
                return;
            }
            // s-steps i ∈ [j − w + 1, j] ∩ [0, n) see this sample
            let lo = j.saturating_sub(w - 1);
            let hi = j.min(n - 1);
            if lo > hi {
                return;
            }
            let (a, o1) = u_bin(u1.first().copied().unwrap_or(0.0), hist.u1_bins, spec.u_max);
            let (b, o2) = u_bin(u2.first().copied().unwrap_or(0.0), u2_bins, spec.u_max);
            let yr = frac(y[0]);
            let c = ((yr * spec.y_bins as f64) as usize).min(spec.y_bins - 1);
            let mut tb = lo / per_bin;
            loop {
                let b_lo = (tb * per_bin).max(lo);
                let b_hi = ((tb + 1) * per_bin - 1).min(hi);
                if b_lo > b_hi {
                    break;
                }
                let mass = (b_hi - b_lo + 1) as f64 * unit;
                let idx = hist.index(tb, a, b, c);
                hist.masses[idx] += mass;
                if o1 || o2 {
                    overflow_mass += mass;
                }
                tb += 1;
                if tb == nb {
                    break;
                }
            }
        },
    )?;
    debug_assert_eq!(summary.steps, n + w);
    hist.overflow_mass = overflow_mass;
    hist.overflow = overflow_mass > 0.0;
    Ok(hist)
}

/// Mean slow path over replicas compared with a reference path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathDeviation {
    pub times: Vec<f64>,
    /// Row-major, one row per time.
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
    pub reference: Vec<f64>,
    /// `max_t |mean − reference|_∞`.
    pub sup_gap: f64,
    /// Standard error of the component attaining the sup.
    pub sup_gap_std_err: f64,
    pub replicas: usize,
}

/// Mean of `X_t` over replicas at `checkpoints + 1` equally spaced times,
/// against `reference`.
#[allow(clippy::too_many_arguments)]
pub fn mean_path_deviation(
    env: &Environment,
    scale: &ScaleParams,
    y0: &[f64],
    policy: &ControlPolicy,
    reference: &DiscretePath,
    replicas: usize,
    checkpoints: usize,
    seed: u64,
) -> Result<PathDeviation> {
    if replicas < 2 || checkpoints == 0 {
        return Err(Error::InvalidArgument(
            "need at least two replicas and one checkpoint".into(),
        ));
    }
    let m = reference.dim;
    let horizon = reference.horizon;
    let (steps, dt) = scale.steps_for(horizon)?;
    let marks: Vec<usize> = (0..=checkpoints)
        .map(|k| ((k as f64 / checkpoints as f64) * steps as f64).round() as usize)
        .collect();
    let x0 = reference.start().to_vec();
    let runs: Vec<Result<Vec<f64>>> = run_replicas(replicas, |rep| {
        let mut rng = rng::stream(seed, rep);
        let mut rec = Vec::with_capacity(marks.len() * m);
        let mut next = 0;
        integrate_with(
            env,
            scale,
            &x0,
            y0,
            horizon,
            policy,
            DynamicsOptions::default(),
            &mut rng,
            &mut |step: usize, _: f64, x: &[f64], _: &[f64], _: &[f64], _: &[f64]| {
                while next < marks.len() && marks[next] == step {
                    rec.extend_from_slice(x);
                    next += 1;
                }
            },
        )?;
        Ok(rec)
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let len = marks.len() * m;
    let n = replicas as f64;
    let mut mean = vec![0.0; len];
    for r in &runs {
        for (a, v) in mean.iter_mut().zip(r) {
            *a += v / n;
        }
    }
    let mut var = vec![0.0; len];
    for r in &runs {
        for ((s, v), mu) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - mu).powi(2) / (n - 1.0);
        }
    }
    let std_err: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
    let times: Vec<f64> = marks.iter().map(|&s| s as f64 * dt).collect();
    let reference_vals: Vec<f64> = times.iter().flat_map(|&t| reference.position_at(t)).collect();
    let (mut sup_gap, mut sup_se) = (0.0, 0.0);
    for i in 0..len {
        let g = (mean[i] - reference_vals[i]).abs();
        if g > sup_gap {
            sup_gap = g;
            sup_se = std_err[i];
        }
    }
    Ok(PathDeviation {
        times,
        mean,
        std_err,
        reference: reference_vals,
        sup_gap,
        sup_gap_std_err: sup_se,
        replicas,
    })
}

/// Mean controlled path against the reference of a tracking control.
pub fn viability_drift_check(
    env: &Environment,
    scale: &ScaleParams,
    y0: &[f64],
    policy: &ControlPolicy,
    replicas: usize,
    checkpoints: usize,
    seed: u64,
) -> Result<PathDeviation> {
    let ControlPolicy::PathTracking(tc) = policy else {
        return Err(Error::InvalidArgument(
            "viability check needs a path-tracking control".into(),
        ));
    };
    mean_path_deviation(env, scale, y0, policy, tc.reference(), replicas, checkpoints, seed)
}
