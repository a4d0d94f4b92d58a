use std::f64::consts::{PI, TAU};

use super::*;
use crate::corrector::{CorrectorField, NodeGrid, DEFAULT_RHO_SCHEDULE};
use crate::medium::field::{ModeKind, TermSpec};
use crate::presets;

fn corrector(env: &Environment) -> CorrectorField {
    CorrectorField::compute(env, &DEFAULT_RHO_SCHEDULE, 4096).unwrap()
}

fn effective(env: &Environment) -> EffectiveCoefficients {
    EffectiveCoefficients::compute(env, &corrector(env), &XGrid::single(&[0.0]), true).unwrap()
}

#[test]
fn constant_coefficients_pass_through() {
    let env = presets::constant(0.7, 1.3).environment(4).unwrap();
    let eff = effective(&env);
    assert!((eff.drift(&[0.0])[0] - 0.7).abs() <= 1e-12);
    assert!((eff.diffusion(&[0.0])[(0, 0)] - 1.69).abs() <= 1e-12);
}

#[test]
fn sine_diffusivity_matches_closed_form() {
    let env = presets::sine().unshifted().unwrap();
    let eff = effective(&env);
    let q = eff.diffusion(&[0.0])[(0, 0)];
    assert!((q - (1.0 + 1.0 / (4.0 * PI * PI))).abs() <= 1e-6, "q = {q}");
    assert!(eff.drift(&[0.0])[0].abs() <= 1e-12);
}

#[test]
fn sine_drift_with_g_matches_closed_form() {
    let env = presets::sine_with_g().unshifted().unwrap();
    let eff = effective(&env);
    // independent quadrature of cos²(2πy)/(2π) over [0, 1]
    let n = 10_000;
    let oracle: f64 = (0..n)
        .map(|i| {
            let y = (i as f64 + 0.5) / n as f64;
            (TAU * y).cos().powi(2) / TAU
        })
        .sum::<f64>()
        / n as f64;
    let r = eff.drift(&[0.0])[0];
    assert!((r - oracle).abs() <= 1e-6, "{r} vs {oracle}");
    assert!((r - 1.0 / (4.0 * PI)).abs() <= 1e-6);
}

#[test]
fn oscillating_drift_averages_out() {
    let mut p = presets::sine();
    p.spec.b.clear();
    p.spec.c = vec![TermSpec::new(&[0], 1.0, ModeKind::Cos, &[1]).with_x_pow(&[1])];
    let env = p.environment(9).unwrap();
    let cor = corrector(&env);
    for x in [-2.0, 0.5, 3.0] {
        assert!(compute_r(&env, &cor.xi, &[x]).unwrap()[0].abs() < 1e-12);
    }
}

#[test]
fn fast_noise_irrelevant_without_corrector() {
    let mut p = presets::schilder();
    p.spec.sigma = vec![TermSpec::constant(&[0, 0], 0.8)];
    p.spec.tau1 = vec![TermSpec::constant(&[0, 0], 0.6)];
    let env = p.environment(2).unwrap();
    let eff = effective(&env);
    assert!((eff.diffusion(&[0.0])[(0, 0)] - 0.64).abs() <= 1e-12);
}

#[test]
fn lambda_rho_pieces() {
    let env = presets::sine_with_g().unshifted().unwrap();
    let rho = 1e-4;
    let sol = crate::corrector::solve_cell_problem_grid(&env, rho, 4096).unwrap();
    let zero = assemble_lambda_rho(&env, &sol.dchi, &[0.0], &[0.3], &[0.0], &[]).unwrap();
    let dchi = |y: f64| TAU * (TAU * y).cos() / (rho + 4.0 * PI * PI);
    // z = 0: c + Dχ g, with c = 0
    let expect = dchi(0.3) * (TAU * 0.3).cos();
    assert!((zero[0] - expect).abs() < 1e-6);

    // y = 0, z₁ = 1: Dχ·g + σ + Dχ·τ₁
    let v = assemble_lambda_rho(&env, &sol.dchi, &[0.0], &[0.0], &[1.0], &[]).unwrap();
    let hand = dchi(0.0) * 1.0 + 1.0 + dchi(0.0) * 2f64.sqrt();
    assert!((v[0] - hand).abs() < 1e-6, "{} vs {hand}", v[0]);

    // vanishing gradient: c + σz₁
    let zero_table = GradientTable::zeros(NodeGrid::new(1, 16), 1);
    let v = assemble_lambda_rho(&env, &zero_table, &[0.0], &[0.7], &[2.0], &[]).unwrap();
    assert!((v[0] - 2.0).abs() < 1e-15);
}

#[test]
fn coefficients_do_not_depend_on_the_realization() {
    let p = presets::sine_with_g();
    let base = effective(&p.unshifted().unwrap());
    for seed in 1..=5 {
        let eff = effective(&p.environment(seed).unwrap());
        assert!((eff.drift(&[0.0])[0] - base.drift(&[0.0])[0]).abs() < 1e-9);
        assert!((eff.diffusion(&[0.0])[(0, 0)] - base.diffusion(&[0.0])[(0, 0)]).abs() < 1e-9);
    }
}

#[test]
fn x_dependent_table_interpolates() {
    let env = presets::sine_relaxing().unshifted().unwrap();
    let grid = XGrid::uniform(1, -1.0, 2.0, 7);
    let eff = EffectiveCoefficients::compute(&env, &corrector(&env), &grid, true).unwrap();
    assert_eq!(eff.grid.len(), 7);
    let r0 = 1.0 / (4.0 * PI);
    for x in [-1.0, -0.3, 0.41, 1.9] {
        assert!((eff.drift(&[x])[0] - (r0 - x)).abs() < 1e-6);
    }
    let (jac, dq) = eff.derivatives(&[0.2]);
    assert!((jac[(0, 0)] + 1.0).abs() < 1e-9);
    assert!(dq[0][(0, 0)].abs() < 1e-12);
    // Lipschitz ratio between neighbouring nodes
    for i in 1..grid.len() {
        let (a, b) = (grid.node(i - 1)[0], grid.node(i)[0]);
        let ratio = (eff.r[i][0] - eff.r[i - 1][0]).abs() / (b - a);
        assert!(ratio < 1.0 + 1e-6);
    }
}

#[test]
fn unconverged_corrector_is_reported() {
    let env = presets::sine().unshifted().unwrap();
    let mut cor = corrector(&env);
    cor.converged = false;
    assert!(matches!(
        EffectiveCoefficients::compute(&env, &cor, &XGrid::single(&[0.0]), true),
        Err(Error::NonConvergence(_))
    ));
    // the smallest-ρ form does not need the extrapolation
    assert!(EffectiveCoefficients::compute(&env, &cor, &XGrid::single(&[0.0]), false).is_ok());
}

#[test]
fn spd_check_rejects_indefinite() {
    let q = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    assert!(spd_check(&q).is_err());
    let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let l = spd_check(&q).unwrap();
    assert!((&l * l.transpose() - q).amax() < 1e-14);
}

#[test]
fn csv_rows_layout() {
    let eff = EffectiveCoefficients::constant(
        DVector::from_vec(vec![0.1, 0.2]),
        DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
    )
    .unwrap();
    assert_eq!(eff.header(), ["x0", "x1", "r0", "r1", "q00", "q01", "q10", "q11"]);
    assert_eq!(eff.rows()[0], [0.0, 0.0, 0.1, 0.2, 2.0, 0.5, 0.5, 1.0]);
}
