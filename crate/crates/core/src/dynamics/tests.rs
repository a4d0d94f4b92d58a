use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::*;
use crate::action::DiscretePath;
use crate::effective::EffectiveCoefficients;
use crate::medium::field::TermSpec;
use crate::medium::CoefficientSpec;
use crate::presets;

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn final_x(env: &Environment, scale: &ScaleParams, policy: &ControlPolicy, seed: u64, n: usize) -> Vec<(f64, f64)> {
    run_replicas(n, |rep| {
        let c = integrate_controlled(env, scale, &[0.0], &[0.0], 1.0, policy, seed, rep, usize::MAX)
            .unwrap();
        (c.path.x_final()[0], c.log_weight)
    })
}

#[test]
fn scale_params() {
    let s = ScaleParams::new(0.01, 1.5).unwrap();
    assert!((s.delta() - 1e-3).abs() < 1e-15);
    assert!((s.rho() - 1e-4).abs() < 1e-16);
    assert!((s.eps_over_delta() - 10.0).abs() < 1e-10);
    assert!(s.is_homogenization_regime());
    assert!(!ScaleParams::new(0.01, 0.5).unwrap().is_homogenization_regime());
    assert!(ScaleParams::new(0.0, 1.5).is_err());
    assert!(ScaleParams::new(0.1, -1.0).is_err());
    let (n, dt) = s.steps_for(1.0).unwrap();
    assert!(dt <= s.max_step() * (1.0 + 1e-12));
    assert!((n as f64 * dt - 1.0).abs() < 1e-12);
    assert!(matches!(s.with_dt(1e-4).steps_for(1.0), Err(Error::StepSize { .. })));
}

#[test]
fn frozen_dynamics() {
    let spec = CoefficientSpec {
        slow_dim: 1,
        k1: 1,
        k2: 0,
        ..Default::default()
    };
    let mut p = presets::sine();
    p.spec = spec;
    let env = p.environment(1).unwrap();
    let scale = ScaleParams::new(0.1, 1.5).unwrap();
    let path = integrate_uncontrolled(&env, &scale, &[0.3], &[0.7], 1.0, 4, 0, 1).unwrap();
    assert!(path.x.iter().all(|&v| v == 0.3));
    assert!(path.y.iter().all(|&v| v == 0.7));
    assert_eq!(path.x_at(0), [0.3]);
    assert_eq!(path.times.len(), path.len());
}

#[test]
fn deterministic_drift() {
    let mut p = presets::constant(0.7, 0.0);
    p.spec.sigma.clear();
    let env = p.environment(2).unwrap();
    let scale = ScaleParams::new(0.1, 1.5).unwrap();
    let path = integrate_uncontrolled(&env, &scale, &[1.0], &[0.0], 2.0, 4, 0, 100).unwrap();
    assert!((path.x_final()[0] - 2.4).abs() < 1e-12);
    assert_eq!(*path.times.last().unwrap(), 2.0);
}

#[test]
fn brownian_variance() {
    let env = presets::schilder().environment(3).unwrap();
    let eps = 0.1;
    let scale = ScaleParams::new(eps, 1.5).unwrap();
    let xs: Vec<f64> = final_x(&env, &scale, &ControlPolicy::Zero, 9, 10_000)
        .into_iter()
        .map(|v| v.0)
        .collect();
    let (_, var) = mean_var(&xs);
    let se = var * (2.0 / (xs.len() as f64 - 1.0)).sqrt();
    assert!((var - eps).abs() <= 3.0 * se, "var {var}");
}

#[test]
fn reproducible_streams() {
    let env = presets::sine().environment(5).unwrap();
    let scale = ScaleParams::new(0.1, 1.5).unwrap();
    let a = integrate_uncontrolled(&env, &scale, &[0.0], &[0.1], 0.5, 42, 3, 7).unwrap();
    let b = integrate_uncontrolled(&env, &scale, &[0.0], &[0.1], 0.5, 42, 3, 7).unwrap();
    let c = integrate_uncontrolled(&env, &scale, &[0.0], &[0.1], 0.5, 42, 4, 7).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.x, c.x);
    assert_eq!(a.y_at(0), [0.1]);
}

#[test]
fn zero_policy_is_uncontrolled() {
    let env = presets::sine().environment(5).unwrap();
    let scale = ScaleParams::new(0.1, 1.5).unwrap();
    let u = integrate_uncontrolled(&env, &scale, &[0.0], &[0.1], 0.5, 1, 0, 1).unwrap();
    let c = integrate_controlled(&env, &scale, &[0.0], &[0.1], 0.5, &ControlPolicy::Zero, 1, 0, 1)
        .unwrap();
    assert_eq!(c.path, u);
    assert_eq!(c.log_weight, 0.0);
    assert_eq!(c.control_cost, 0.0);
}

#[test]
fn girsanov_weight_has_mean_one() {
    let env = presets::schilder().environment(3).unwrap();
    let scale = ScaleParams::new(0.2, 1.5).unwrap();
    let policy = ControlPolicy::Constant {
        u1: vec![0.5],
        u2: vec![-0.3],
    };
    let w: Vec<f64> = final_x(&env, &scale, &policy, 10, 10_000)
        .into_iter()
        .map(|v| v.1.exp())
        .collect();
    let (mean, var) = mean_var(&w);
    let se = (var / w.len() as f64).sqrt();
    assert!((mean - 1.0).abs() <= 3.0 * se, "mean {mean} se {se}");
}

#[test]
fn constant_control_shifts_the_mean() {
    let env = presets::schilder().environment(3).unwrap();
    let eps = 0.05;
    let scale = ScaleParams::new(eps, 1.5).unwrap();
    let u = 0.8;
    let policy = ControlPolicy::Constant {
        u1: vec![u],
        u2: vec![0.0],
    };
    let xs: Vec<f64> = final_x(&env, &scale, &policy, 12, 10_000)
        .into_iter()
        .map(|v| v.0)
        .collect();
    let (mean, var) = mean_var(&xs);
    let n = xs.len() as f64;
    assert!((mean - u).abs() <= 3.0 * (var / n).sqrt());
    assert!((var - eps).abs() <= 3.0 * var * (2.0 / (n - 1.0)).sqrt());
}

#[test]
fn reweighting_recovers_uncontrolled_expectations() {
    let env = presets::schilder().environment(3).unwrap();
    let scale = ScaleParams::new(0.2, 1.5).unwrap();
    let f = |x: f64| (2.0 * x).cos() + x;
    let plain: Vec<f64> = final_x(&env, &scale, &ControlPolicy::Zero, 20, 10_000)
        .into_iter()
        .map(|v| f(v.0))
        .collect();
    let policy = ControlPolicy::Constant {
        u1: vec![0.4],
        u2: vec![0.2],
    };
    let is: Vec<f64> = final_x(&env, &scale, &policy, 21, 10_000)
        .into_iter()
        .map(|(x, lw)| f(x) * lw.exp())
        .collect();
    let (m1, v1) = mean_var(&plain);
    let (m2, v2) = mean_var(&is);
    let se = (v1 / plain.len() as f64 + v2 / is.len() as f64).sqrt();
    assert!((m1 - m2).abs() <= 3.0 * se, "{m1} vs {m2}");
}

#[test]
fn halving_the_step_is_within_noise() {
    let env = presets::constant(0.3, 1.0).environment(3).unwrap();
    let scale = ScaleParams::new(0.1, 1.5).unwrap();
    let f = |x: f64| (x).cos();
    let coarse: Vec<f64> = final_x(&env, &scale, &ControlPolicy::Zero, 30, 10_000)
        .into_iter()
        .map(|v| f(v.0))
        .collect();
    let fine_scale = scale.with_dt(scale.max_step() / 2.0);
    let fine: Vec<f64> = final_x(&env, &fine_scale, &ControlPolicy::Zero, 31, 10_000)
        .into_iter()
        .map(|v| f(v.0))
        .collect();
    let (m1, v1) = mean_var(&coarse);
    let (m2, v2) = mean_var(&fine);
    let se = (v1 / 1e4 + v2 / 1e4).sqrt();
    assert!((m1 - m2).abs() <= 3.0 * se);
}

#[test]
fn non_finite_state_is_reported() {
    let mut p = presets::constant(0.0, 1.0);
    p.spec.c = vec![TermSpec::constant(&[0], 1e300).with_x_pow(&[2])];
    let env = p.environment(1).unwrap();
    let scale = ScaleParams::new(0.1, 1.5).unwrap();
    let err = integrate_uncontrolled(&env, &scale, &[10.0], &[0.0], 1.0, 0, 0, 1).unwrap_err();
    assert!(matches!(err, Error::NonFinite { step } if step >= 1));
}

#[test]
fn tracking_the_drift_needs_no_control() {
    let env = Arc::new(presets::sine().environment(1).unwrap());
    let model = Arc::new(
        EffectiveCoefficients::constant(DVector::from_vec(vec![0.3]), DMatrix::identity(1, 1))
            .unwrap(),
    );
    let reference = DiscretePath::straight(&[0.0], &[0.3], 1.0, 8).unwrap();
    let tc = TrackingControl::new(env, model, None, reference).unwrap();
    let policy = ControlPolicy::PathTracking(Arc::new(tc));
    let (mut u1, mut u2) = ([1.0], []);
    for t in [0.0, 0.4, 1.0] {
        policy.control(t, &[0.5], &[0.2], &mut u1, &mut u2);
        assert!(u1[0].abs() < 1e-15);
    }
}

#[test]
fn fast_process_variance() {
    let env = presets::sine().environment(1).unwrap();
    let t = 1.0;
    let ends: Vec<f64> = run_replicas(10_000, |rep| {
        let p = integrate_fast_rescaled(&env, &[0.0], t, 8, rep, usize::MAX).unwrap();
        *p.y.last().unwrap()
    });
    let (_, var) = mean_var(&ends);
    let se = var * (2.0 / 9_999.0f64).sqrt();
    assert!((var - 2.0 * t).abs() <= 3.0 * se, "var {var}");
}

#[test]
fn fast_process_empty_horizon() {
    let env = presets::sine().environment(1).unwrap();
    let p = integrate_fast_rescaled(&env, &[0.37], 0.0, 8, 0, 1).unwrap();
    assert_eq!(p.y, vec![0.37]);
    assert_eq!(p.times, vec![0.0]);
}

#[test]
fn fast_process_samples_gibbs_density() {
    let env = presets::gradient().unshifted().unwrap();
    let bins = 20;
    let mut counts = vec![0u64; bins];
    let mut rng = crate::rng::stream(4, 0);
    integrate_fast_with(&env, &[0.0], 1e4, FAST_STEP, &mut rng, |step, _, y| {
        if step > 0 {
            let u = y[0] - y[0].floor();
            counts[((u * bins as f64) as usize).min(bins - 1)] += 1;
        }
    })
    .unwrap();
    let total: u64 = counts.iter().sum();
    let target = env.density().unwrap().bin_masses(bins);
    let tv: f64 = counts
        .iter()
        .zip(&target)
        .map(|(&c, &p)| (c as f64 / total as f64 - p).abs())
        .sum::<f64>()
        * 0.5;
    assert!(tv <= 0.03, "tv {tv}");
}

#[test]
fn fast_drift_response_recovers_corrector_drift() {
    // r = E[ξ g] = 1/(4π); the left-point fast drift would lose most of it
    let env = presets::sine_with_g().environment(1).unwrap();
    let scale = ScaleParams::new(0.05, 1.5).unwrap();
    let xs: Vec<f64> = final_x(&env, &scale, &ControlPolicy::Zero, 40, 2000)
        .into_iter()
        .map(|v| v.0)
        .collect();
    let (mean, var) = mean_var(&xs);
    let r = 0.25 / std::f64::consts::PI;
    let se = (var / xs.len() as f64).sqrt();
    // discretization bias (λh/2)coth(λh/2) − 1 ≈ 5% at the default step
    assert!((mean - r).abs() <= 3.0 * se + 0.06 * r, "mean {mean} se {se}");
}
