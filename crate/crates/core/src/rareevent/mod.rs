//! Rare-event probabilities `P(X_T ∈ A)` by plain Monte Carlo or by
//! importance sampling under the tracking control of a near-optimal path.
//!
//! Estimates are accumulated in log space: with `ℓ_i` the log-weights of the
//! replicas that hit the event and `M = max ℓ_i`,
//!
//! ```text
//! p̂ = e^M S₁ / n,   S₁ = Σ e^{ℓ_i − M},   S₂ = Σ e^{2(ℓ_i − M)}
//! ```
//!
//! and the sample variance of `1_A·w` is `e^{2M}(S₂ − S₁²/n)/(n − 1)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::action::{DiscretePath, EventSpec};
use crate::corrector::GradientTable;
use crate::dynamics::{integrate_with, run_replicas, ControlPolicy, DynamicsOptions, ScaleParams, TrackingControl};
use crate::effective::RateModel;
use crate::error::{Error, Result};
use crate::medium::Environment;
use crate::rng;

/// Effective sample sizes below this are flagged.
pub const MIN_ESS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    Plain,
    Is,
}

impl std::str::FromStr for EstimatorMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Self::Plain),
            "is" => Ok(Self::Is),
            other => Err(Error::InvalidArgument(format!("unknown estimator mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightStats {
    /// Largest log-weight among replicas in the event.
    pub max_log_weight: Option<f64>,
    /// `(Σw)²/Σw²` over replicas in the event.
    pub effective_sample_size: f64,
    pub degenerate: bool,
    /// Mean weight over all replicas and its standard error; 1 in expectation.
    pub mean_weight: f64,
    pub mean_weight_std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RareEventEstimate {
    pub eps: f64,
    pub mode: EstimatorMode,
    pub n_replicas: usize,
    pub n_hits: usize,
    pub p_hat: f64,
    /// `None` when no replica hit the event.
    pub log_p_hat: Option<f64>,
    pub std_err: f64,
    /// `std_err / p_hat`; infinite when `p_hat = 0`.
    #[serde(with = "finite_or_null")]
    pub relative_error: f64,
    pub minus_eps_log: Option<f64>,
    pub weight_stats: WeightStats,
}

/// Outcome of one replica, kept for the per-replica CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaRecord {
    pub replica: u64,
    pub hit: bool,
    pub log_weight: f64,
    pub control_cost: f64,
    pub x_final: Vec<f64>,
}

/// Everything about a rare-event problem except ε and the estimator.
#[derive(Clone)]
pub struct RareEventProblem {
    pub env: Arc<Environment>,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub horizon: f64,
    pub event: EventSpec,
    /// Control used in importance-sampling mode.
    pub is_policy: ControlPolicy,
}

/// Tracking control for the reference path `psi`, using the gradient field
/// `xi` (ξ, or Dχ_ρ at a fixed ρ). A vanishing field is dropped.
pub fn build_is_control(
    env: Arc<Environment>,
    model: Arc<dyn RateModel>,
    xi: Option<Arc<GradientTable>>,
    psi: DiscretePath,
) -> Result<ControlPolicy> {
    let xi = xi.filter(|g| g.max_abs() > 0.0);
    Ok(ControlPolicy::PathTracking(Arc::new(TrackingControl::new(
        env, model, xi, psi,
    )?)))
}

/// Runs `n_replicas` paths at scale `scale` and aggregates the estimate.
/// Replica `i` uses the stream `(seed, i)`.
pub fn estimate_probability(
    problem: &RareEventProblem,
    scale: &ScaleParams,
    n_replicas: usize,
    mode: EstimatorMode,
    seed: u64,
) -> Result<(RareEventEstimate, Vec<ReplicaRecord>)> {
    if n_replicas < 2 {
        return Err(Error::InvalidArgument("at least two replicas are needed".into()));
    }
    let event = &problem.event;
    if let EventSpec::Endpoint { .. } = event {
        return Err(Error::UnsupportedEvent(
            "a fixed endpoint has probability zero; use a half-space".into(),
        ));
    }
    if event.dim().is_some_and(|d| d != problem.x0.len()) {
        return Err(Error::InvalidArgument("event dimension differs from x0".into()));
    }
    if let EventSpec::Whole = event {
        return Ok((certain(scale.epsilon, mode, n_replicas), Vec::new()));
    }
    let policy = match mode {
        EstimatorMode::Plain => ControlPolicy::Zero,
        EstimatorMode::Is => problem.is_policy.clone(),
    };
    let runs: Vec<Result<ReplicaRecord>> = run_replicas(n_replicas, |rep| {
        let mut rng = rng::stream(seed, rep);
        let s = integrate_with(
            &problem.env,
            scale,
            &problem.x0,
            &problem.y0,
            problem.horizon,
            &policy,
            DynamicsOptions::default(),
            &mut rng,
            &mut |_: usize, _: f64, _: &[f64], _: &[f64], _: &[f64], _: &[f64]| {},
        )?;
        Ok(ReplicaRecord {
            replica: rep,
            hit: event.contains(&s.x_final),
            log_weight: s.log_weight,
            control_cost: s.control_cost,
            x_final: s.x_final,
        })
    });
    let records = runs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((aggregate(scale.epsilon, mode, &records), records))
}

fn certain(eps: f64, mode: EstimatorMode, n: usize) -> RareEventEstimate {
    RareEventEstimate {
        eps,
        mode,
        n_replicas: n,
        n_hits: n,
        p_hat: 1.0,
        log_p_hat: Some(0.0),
        std_err: 0.0,
        relative_error: 0.0,
        minus_eps_log: Some(0.0),
        weight_stats: WeightStats {
            max_log_weight: Some(0.0),
            effective_sample_size: n as f64,
            degenerate: (n as f64) < MIN_ESS,
            mean_weight: 1.0,
            mean_weight_std_err: 0.0,
        },
    }
}

/// Shifted sums `(M, S₁, S₂)` of `e^{ℓ}` over `logs`.
fn shifted_sums(logs: impl Iterator<Item = f64> + Clone) -> Option<(f64, f64, f64)> {
    let m = logs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return None;
    }
    let (s1, s2) = logs.fold((0.0, 0.0), |(a, b), l| {
        let e = (l - m).exp();
        (a + e, b + e * e)
    });
    Some((m, s1, s2))
}

/// Aggregates replica records (in replica order) into an estimate.
pub fn aggregate(eps: f64, mode: EstimatorMode, records: &[ReplicaRecord]) -> RareEventEstimate {
    let n = records.len() as f64;
    let hits = records.iter().filter(|r| r.hit).map(|r| r.log_weight);
    let n_hits = hits.clone().count();

    let (p_hat, log_p_hat, std_err, max_lw, ess) = match shifted_sums(hits) {
        None => (0.0, None, 0.0, None, 0.0),
        Some((m, s1, s2)) => {
            let log_p = m + s1.ln() - n.ln();
            let var = ((s2 - s1 * s1 / n) / (n - 1.0)).max(0.0);
            let se = (m + 0.5 * (var / n).ln()).exp();
            (log_p.exp(), Some(log_p), se, Some(m), s1 * s1 / s2)
        }
    };
    let all = records.iter().map(|r| r.log_weight);
    let (mean_weight, mean_weight_std_err) = match shifted_sums(all) {
        None => (0.0, 0.0),
        Some((m, s1, s2)) => {
            let var = ((s2 - s1 * s1 / n) / (n - 1.0)).max(0.0);
            ((m + s1.ln() - n.ln()).exp(), (m + 0.5 * (var / n).ln()).exp())
        }
    };
    RareEventEstimate {
        eps,
        mode,
        n_replicas: records.len(),
        n_hits,
        p_hat: p_hat.min(1.0),
        log_p_hat,
        std_err,
        relative_error: if p_hat > 0.0 { std_err / p_hat } else { f64::INFINITY },
        minus_eps_log: log_p_hat.map(|l| -eps * l),
        weight_stats: WeightStats {
            max_log_weight: max_lw,
            effective_sample_size: ess,
            degenerate: ess < MIN_ESS,
            mean_weight,
            mean_weight_std_err,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub eps: f64,
    pub minus_eps_log: Option<f64>,
    /// `|−ε log p̂ − S*|`.
    pub gap: Option<f64>,
    pub relative_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub s_star: f64,
    /// Rows by decreasing ε.
    pub rows: Vec<ScalingRow>,
    /// Gap strictly decreasing as ε decreases.
    pub gap_monotone: bool,
}

/// Table of `−ε log p̂` against `S*` over at least three values of ε.
pub fn ldp_scaling_report(estimates: &[RareEventEstimate], s_star: f64) -> Result<ScalingReport> {
    if estimates.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "scaling report needs at least 3 values of eps, got {}",
            estimates.len()
        )));
    }
    let mut sorted: Vec<&RareEventEstimate> = estimates.iter().collect();
    sorted.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    let rows: Vec<ScalingRow> = sorted
        .iter()
        .map(|e| {
            let gap = e.minus_eps_log.map(|v| (v - s_star).abs());
            ScalingRow {
                eps: e.eps,
                minus_eps_log: e.minus_eps_log,
                gap,
                relative_gap: gap.filter(|_| s_star > 0.0).map(|g| g / s_star),
            }
        })
        .collect();
    let gap_monotone = rows.windows(2).all(|w| match (w[0].gap, w[1].gap) {
        (Some(a), Some(b)) => b < a,
        _ => false,
    });
    Ok(ScalingReport {
        s_star,
        rows,
        gap_monotone,
    })
}

mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}
