//! Reference configurations with known homogenized limits.

use std::f64::consts::SQRT_2;

use crate::error::Result;
use crate::medium::field::{Mode, ModeKind, TermSpec};
use crate::medium::{sample_medium, CoefficientSpec, Environment, Family, MediumParams};

/// Family, medium parameters and coefficient modes of one setup.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub family: Family,
    pub params: MediumParams,
    pub spec: CoefficientSpec,
}

impl Preset {
    /// Environment for the medium drawn from `seed`.
    pub fn environment(&self, seed: u64) -> Result<Environment> {
        Environment::sample(self.family, &self.params, &self.spec, seed)
    }

    /// Environment with the shift fixed at the origin, so that fields are
    /// exactly the configured Fourier modes.
    pub fn unshifted(&self) -> Result<Environment> {
        let mut params = self.params.clone();
        params.slow_dim = self.spec.slow_dim;
        params.wavevectors.extend(self.spec.wavevectors());
        let mut sample = sample_medium(self.family, &params, 0)?;
        if !sample.shift.is_empty() {
            sample = sample.with_shift(&vec![0.0; sample.fast_dim]);
        }
        Environment::build(&self.spec, sample)
    }
}

fn one_by_one(family: Family) -> MediumParams {
    let mut p = MediumParams {
        fast_dim: 1,
        slow_dim: 1,
        ..Default::default()
    };
    if family == Family::GradientType {
        p.potential = vec![Mode {
            amp: 1.0,
            kind: ModeKind::Cos,
            k: vec![1],
        }];
        p.d_const = Some(1.0);
    }
    p
}

/// m = d − m = 1, f = 0, τ₁ = √2, τ₂ = 0, σ = 1, b = sin(2πy), c = g = 0.
/// Then χ_ρ = sin(2πy)/(ρ + 4π²), ξ = cos(2πy)/(2π), r = 0 and
/// q = 1 + 1/(4π²).
pub fn sine() -> Preset {
    Preset {
        family: Family::RandomShiftPeriodic,
        params: one_by_one(Family::RandomShiftPeriodic),
        spec: CoefficientSpec {
            slow_dim: 1,
            k1: 1,
            k2: 0,
            b: vec![TermSpec::new(&[0], 1.0, ModeKind::Sin, &[1])],
            sigma: vec![TermSpec::constant(&[0, 0], 1.0)],
            tau1: vec![TermSpec::constant(&[0, 0], SQRT_2)],
            ..Default::default()
        },
    }
}

/// Sine preset with g = cos(2πy), adding 1/(4π) to r.
pub fn sine_with_g() -> Preset {
    let mut p = sine();
    p.spec.g = vec![TermSpec::new(&[0], 1.0, ModeKind::Cos, &[1])];
    p
}

/// Sine preset with g = cos(2πy) and c = −x, so r(x) = 1/(4π) − x.
pub fn sine_relaxing() -> Preset {
    let mut p = sine_with_g();
    p.spec.c = vec![TermSpec::constant(&[0], -1.0).with_x_pow(&[1])];
    p
}

/// Brownian slow variable: σ = 1, b = c = g = 0, with the fast variable
/// driven by an independent noise (τ₁ = 0, τ₂ = √2). r = 0, q = 1.
pub fn schilder() -> Preset {
    Preset {
        family: Family::RandomShiftPeriodic,
        params: one_by_one(Family::RandomShiftPeriodic),
        spec: CoefficientSpec {
            slow_dim: 1,
            k1: 1,
            k2: 1,
            sigma: vec![TermSpec::constant(&[0, 0], 1.0)],
            tau2: vec![TermSpec::constant(&[0, 0], SQRT_2)],
            ..Default::default()
        },
    }
}

/// Constant coefficients c = c₀, σ = σ₀ with a Brownian fast variable.
pub fn constant(c0: f64, sigma0: f64) -> Preset {
    let mut p = schilder();
    p.spec.c = vec![TermSpec::constant(&[0], c0)];
    p.spec.sigma = vec![TermSpec::constant(&[0, 0], sigma0)];
    p
}

/// Gradient medium Q = cos(2πy), D = 1 (so π ∝ exp(−cos 2πy)), with
/// σ = 1 and b = sin(2πy) centered under π.
pub fn gradient() -> Preset {
    Preset {
        family: Family::GradientType,
        params: one_by_one(Family::GradientType),
        spec: CoefficientSpec {
            slow_dim: 1,
            k1: 1,
            k2: 0,
            b: vec![TermSpec::new(&[0], 1.0, ModeKind::Sin, &[1])],
            sigma: vec![TermSpec::constant(&[0, 0], 1.0)],
            ..Default::default()
        },
    }
}
