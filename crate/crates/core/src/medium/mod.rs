//! Stationary random environments on the unit torus and the coefficient
//! fields they generate.
//!
//! A realization fixes a shift (periodic family), a phase per wavevector
//! (random-phase family) or nothing (gradient family). Each coefficient entry
//! is then a trigonometric polynomial in the fast variable whose phases come
//! from the realization, so `φ(y, γ) = φ̃(τ_y γ)` holds by construction.

pub mod density;
pub mod field;

use std::f64::consts::TAU;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use density::{DensityKind, InvariantDensity, TorusGrid};
pub use field::{MatrixField, Mode, ModeKind, ScalarField, Term, TermSpec};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    RandomShiftPeriodic,
    RandomPhaseFourier,
    GradientType,
}

/// Parameters from which a medium is sampled.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MediumParams {
    pub fast_dim: usize,
    pub slow_dim: usize,
    /// Fourier modes of the potential Q (gradient family).
    pub potential: Vec<Mode>,
    /// Temperature-like constant D (gradient family).
    pub d_const: Option<f64>,
    /// Wavevectors that receive an independent phase (random-phase family).
    pub wavevectors: Vec<Vec<i32>>,
}

/// One realization γ of the random environment.
#[derive(Debug, Clone, PartialEq)]
pub struct MediumSample {
    pub family: Family,
    pub fast_dim: usize,
    pub slow_dim: usize,
    pub shift: Vec<f64>,
    pub phases: Vec<f64>,
    pub wavevectors: Vec<Vec<i32>>,
    pub potential: Vec<Mode>,
    pub d_const: f64,
    pub seed: u64,
}

/// Draws a medium realization; a deterministic function of its inputs.
pub fn sample_medium(family: Family, params: &MediumParams, seed: u64) -> Result<MediumSample> {
    if !(1..=2).contains(&params.fast_dim) {
        return Err(Error::InvalidConfig(format!(
            "fast_dim must be 1 or 2, got {}",
            params.fast_dim
        )));
    }
    if params.slow_dim == 0 {
        return Err(Error::InvalidConfig("slow_dim must be positive".into()));
    }
    let mut d_const = 0.0;
    if family == Family::GradientType {
        d_const = params.d_const.unwrap_or(0.0);
        if !(d_const > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "d_const must be positive, got {d_const}"
            )));
        }
        if params.potential.is_empty() {
            return Err(Error::InvalidConfig(
                "gradient family needs a non-empty potential".into(),
            ));
        }
    }
    let mut wavevectors: Vec<Vec<i32>> = params
        .wavevectors
        .iter()
        .filter(|k| k.iter().any(|&ki| ki != 0))
        .map(|k| {
            let mut k = k.clone();
            k.resize(params.fast_dim, 0);
            k
        })
        .collect();
    wavevectors.sort();
    wavevectors.dedup();
    if family == Family::RandomPhaseFourier && wavevectors.is_empty() {
        return Err(Error::InvalidConfig(
            "random-phase family needs at least one non-constant mode".into(),
        ));
    }

    let mut rng = rng::stream(seed, 0);
    let (shift, phases) = match family {
        Family::RandomShiftPeriodic => {
            let s = (0..params.fast_dim).map(|_| rng.random::<f64>()).collect();
            (s, Vec::new())
        }
        Family::RandomPhaseFourier => {
            let p = wavevectors.iter().map(|_| TAU * rng.random::<f64>()).collect();
            (vec![0.0; params.fast_dim], p)
        }
        Family::GradientType => (vec![0.0; params.fast_dim], Vec::new()),
    };
    Ok(MediumSample {
        family,
        fast_dim: params.fast_dim,
        slow_dim: params.slow_dim,
        shift,
        phases,
        wavevectors,
        potential: params.potential.clone(),
        d_const,
        seed,
    })
}

impl MediumSample {
    /// Phase attached to wavevector `k` in this realization.
    pub fn phase_for(&self, k: &[i32]) -> f64 {
        match self.family {
            Family::RandomShiftPeriodic => k
                .iter()
                .zip(&self.shift)
                .map(|(&ki, s)| TAU * ki as f64 * s)
                .sum(),
            Family::RandomPhaseFourier => self
                .wavevectors
                .binary_search_by(|w| w.as_slice().cmp(k))
                .map(|i| self.phases[i])
                .unwrap_or(0.0),
            Family::GradientType => 0.0,
        }
    }

    /// Same realization with the shift replaced (periodic family).
    pub fn with_shift(&self, shift: &[f64]) -> Self {
        Self {
            shift: shift.to_vec(),
            ..self.clone()
        }
    }

    fn resolve(&self, amp: f64, kind: ModeKind, k: &[i32], x_pow: &[u32]) -> Term {
        let mut kk: Vec<i32> = k.to_vec();
        kk.resize(self.fast_dim, 0);
        let phase = if kind == ModeKind::Const {
            0.0
        } else {
            self.phase_for(&kk)
        };
        Term {
            amp,
            kind,
            k: kk.iter().map(|&v| v as f64).collect(),
            phase,
            x_pow: x_pow.to_vec(),
        }
    }

    /// Potential Q resolved against this realization.
    pub fn potential_field(&self) -> ScalarField {
        ScalarField {
            terms: self
                .potential
                .iter()
                .map(|m| self.resolve(m.amp, m.kind, &m.k, &[]))
                .collect(),
        }
    }
}

/// Fourier-mode description of the seven coefficient fields.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSpec {
    pub slow_dim: usize,
    /// Columns of W (shared by σ and τ₁).
    pub k1: usize,
    /// Columns of B (τ₂).
    pub k2: usize,
    #[serde(default)]
    pub b: Vec<TermSpec>,
    #[serde(default)]
    pub c: Vec<TermSpec>,
    #[serde(default)]
    pub sigma: Vec<TermSpec>,
    #[serde(default)]
    pub f: Vec<TermSpec>,
    #[serde(default)]
    pub g: Vec<TermSpec>,
    #[serde(default)]
    pub tau1: Vec<TermSpec>,
    #[serde(default)]
    pub tau2: Vec<TermSpec>,
}

impl CoefficientSpec {
    /// All wavevectors used by any field, for phase sampling.
    pub fn wavevectors(&self) -> Vec<Vec<i32>> {
        [
            &self.b, &self.c, &self.sigma, &self.f, &self.g, &self.tau1, &self.tau2,
        ]
        .iter()
        .flat_map(|list| list.iter())
        .filter(|t| t.kind != ModeKind::Const)
        .map(|t| t.k.clone())
        .collect()
    }
}

/// Values of all coefficients at one point; matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientValues {
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub sigma: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub tau1: Vec<f64>,
    pub tau2: Vec<f64>,
}

/// Per-field indices of the entries that depend on the state.
#[derive(Debug, Clone, Default)]
pub struct VaryingEntries {
    pub b: Vec<usize>,
    pub c: Vec<usize>,
    pub sigma: Vec<usize>,
    pub f: Vec<usize>,
    pub g: Vec<usize>,
    pub tau1: Vec<usize>,
    pub tau2: Vec<usize>,
}

/// Evaluators for b, c, σ, f, g, τ₁, τ₂ of one medium realization.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    pub slow_dim: usize,
    pub fast_dim: usize,
    pub k1: usize,
    pub k2: usize,
    pub b: MatrixField,
    pub c: MatrixField,
    pub sigma: MatrixField,
    pub f: MatrixField,
    pub g: MatrixField,
    pub tau1: MatrixField,
    pub tau2: MatrixField,
}

impl CoefficientSet {
    pub fn new(spec: &CoefficientSpec, sample: &MediumSample) -> Result<Self> {
        let m = spec.slow_dim;
        let n = sample.fast_dim;
        if m != sample.slow_dim {
            return Err(Error::InvalidConfig(format!(
                "slow_dim mismatch: coefficients {m}, medium {}",
                sample.slow_dim
            )));
        }
        if spec.k1 == 0 && spec.k2 == 0 {
            return Err(Error::InvalidConfig("k1 + k2 must be positive".into()));
        }
        let build = |name: &str, list: &[TermSpec], rows: usize, cols: usize, x_ok: bool| {
            let mut field = MatrixField::zeros(rows, cols);
            for (t_idx, t) in list.iter().enumerate() {
                let (i, j) = match (t.index.as_slice(), cols) {
                    ([i], 1) => (*i, 0),
                    ([i, j], _) => (*i, *j),
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "{name}[{t_idx}]: index must have {} entries",
                            if cols == 1 { 1 } else { 2 }
                        )))
                    }
                };
                if i >= rows || j >= cols {
                    return Err(Error::InvalidConfig(format!(
                        "{name}[{t_idx}]: index ({i},{j}) out of range {rows}x{cols}"
                    )));
                }
                if t.k.len() > n && t.k[n..].iter().any(|&v| v != 0) {
                    return Err(Error::InvalidConfig(format!(
                        "{name}[{t_idx}]: wavevector longer than fast_dim {n}"
                    )));
                }
                if !x_ok && t.x_pow.iter().any(|&p| p > 0) {
                    return Err(Error::InvalidConfig(format!(
                        "{name}[{t_idx}]: field may not depend on x"
                    )));
                }
                if t.x_pow.len() > m {
                    return Err(Error::InvalidConfig(format!(
                        "{name}[{t_idx}]: x_pow longer than slow_dim {m}"
                    )));
                }
                if !t.amp.is_finite() {
                    return Err(Error::InvalidConfig(format!(
                        "{name}[{t_idx}]: amplitude must be finite"
                    )));
                }
                field
                    .entry_mut(i, j)
                    .terms
                    .push(sample.resolve(t.amp, t.kind, &t.k, &t.x_pow));
            }
            Ok(field)
        };

        let b = build("b", &spec.b, m, 1, false)?;
        let c = build("c", &spec.c, m, 1, true)?;
        let sigma = build("sigma", &spec.sigma, m, spec.k1, true)?;
        let g = build("g", &spec.g, n, 1, true)?;
        let (f, tau1, tau2) = if sample.family == Family::GradientType {
            if !(spec.f.is_empty() && spec.tau1.is_empty() && spec.tau2.is_empty()) {
                return Err(Error::InvalidConfig(
                    "gradient family derives f, tau1, tau2 from the potential; do not set them"
                        .into(),
                ));
            }
            if spec.k1 < n {
                return Err(Error::InvalidConfig(format!(
                    "gradient family needs k1 >= fast_dim ({n})"
                )));
            }
            let q = sample.potential_field();
            let mut f = MatrixField::zeros(n, 1);
            for j in 0..n {
                *f.entry_mut(j, 0) = q.dy(j).scaled(-1.0);
            }
            let mut tau1 = MatrixField::zeros(n, spec.k1);
            let amp = (2.0 * sample.d_const).sqrt();
            for j in 0..n {
                tau1.entry_mut(j, j).push_constant(amp);
            }
            (f, tau1, MatrixField::zeros(n, spec.k2))
        } else {
            (
                build("f", &spec.f, n, 1, false)?,
                build("tau1", &spec.tau1, n, spec.k1, false)?,
                build("tau2", &spec.tau2, n, spec.k2, false)?,
            )
        };
        Ok(Self {
            slow_dim: m,
            fast_dim: n,
            k1: spec.k1,
            k2: spec.k2,
            b,
            c,
            sigma,
            f,
            g,
            tau1,
            tau2,
        })
    }

    pub fn zero_values(&self) -> CoefficientValues {
        let (m, n) = (self.slow_dim, self.fast_dim);
        CoefficientValues {
            b: vec![0.0; m],
            c: vec![0.0; m],
            sigma: vec![0.0; m * self.k1],
            f: vec![0.0; n],
            g: vec![0.0; n],
            tau1: vec![0.0; n * self.k1],
            tau2: vec![0.0; n * self.k2],
        }
    }

    /// All seven fields at `(x, y)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> CoefficientValues {
        let mut v = self.zero_values();
        self.eval_into(x, y, &mut v);
        v
    }

    #[inline]
    pub fn eval_into(&self, x: &[f64], y: &[f64], out: &mut CoefficientValues) {
        self.b.eval_into(x, y, &mut out.b);
        self.c.eval_into(x, y, &mut out.c);
        self.sigma.eval_into(x, y, &mut out.sigma);
        self.f.eval_into(x, y, &mut out.f);
        self.g.eval_into(x, y, &mut out.g);
        self.tau1.eval_into(x, y, &mut out.tau1);
        self.tau2.eval_into(x, y, &mut out.tau2);
    }

    /// Entries that must be re-evaluated when the state changes.
    pub fn varying(&self) -> VaryingEntries {
        VaryingEntries {
            b: self.b.varying_entries(),
            c: self.c.varying_entries(),
            sigma: self.sigma.varying_entries(),
            f: self.f.varying_entries(),
            g: self.g.varying_entries(),
            tau1: self.tau1.varying_entries(),
            tau2: self.tau2.varying_entries(),
        }
    }

    /// Refreshes only the varying entries of `out`, which must already hold
    /// a full evaluation.
    #[inline]
    pub fn eval_varying_into(&self, x: &[f64], y: &[f64], idx: &VaryingEntries, out: &mut CoefficientValues) {
        self.b.eval_entries_into(x, y, &idx.b, &mut out.b);
        self.c.eval_entries_into(x, y, &idx.c, &mut out.c);
        self.sigma.eval_entries_into(x, y, &idx.sigma, &mut out.sigma);
        self.f.eval_entries_into(x, y, &idx.f, &mut out.f);
        self.g.eval_entries_into(x, y, &idx.g, &mut out.g);
        self.tau1.eval_entries_into(x, y, &idx.tau1, &mut out.tau1);
        self.tau2.eval_entries_into(x, y, &idx.tau2, &mut out.tau2);
    }

    /// Fast diffusion matrix τ₁τ₁ᵀ + τ₂τ₂ᵀ at `y`.
    pub fn fast_diffusion(&self, y: &[f64]) -> DMatrix<f64> {
        let n = self.fast_dim;
        let t1 = DMatrix::from_row_slice(n, self.k1, &self.tau1.eval(&[], y));
        let t2 = DMatrix::from_row_slice(n, self.k2, &self.tau2.eval(&[], y));
        &t1 * t1.transpose() + &t2 * t2.transpose()
    }

    /// Smallest eigenvalues of σσᵀ (at slow state `x`) and of τ₁τ₁ᵀ+τ₂τ₂ᵀ
    /// over a uniform y-grid with `n_per_axis` nodes per axis.
    pub fn nondegeneracy(&self, x: &[f64], n_per_axis: usize) -> (f64, f64) {
        let grid = TorusGrid::new(self.fast_dim, n_per_axis);
        let mut min_sigma = f64::INFINITY;
        let mut min_fast = f64::INFINITY;
        for y in grid.points() {
            let s = DMatrix::from_row_slice(self.slow_dim, self.k1, &self.sigma.eval(x, &y));
            let ss = &s * s.transpose();
            min_sigma = min_sigma.min(SymmetricEigen::new(ss).eigenvalues.min());
            min_fast = min_fast.min(SymmetricEigen::new(self.fast_diffusion(&y)).eigenvalues.min());
        }
        (min_sigma, min_fast)
    }

    /// True when f ≡ 0 and the fast diffusion matrix is constant in y.
    pub fn has_uniform_invariant_density(&self) -> bool {
        self.f.is_zero() && self.tau1.is_y_constant() && self.tau2.is_y_constant()
    }
}

/// A medium realization together with its coefficients and, when available
/// in closed form, its invariant density. The fast drift `b` is centered
/// under π whenever the density is known.
#[derive(Debug, Clone)]
pub struct Environment {
    pub sample: MediumSample,
    pub coeffs: CoefficientSet,
    pub density: Option<InvariantDensity>,
    /// π-mean removed from each component of `b`.
    pub b_offset: Vec<f64>,
}

impl Environment {
    pub fn build(spec: &CoefficientSpec, sample: MediumSample) -> Result<Self> {
        Self::build_with_grid(spec, sample, None)
    }

    pub fn build_with_grid(
        spec: &CoefficientSpec,
        sample: MediumSample,
        grid: Option<TorusGrid>,
    ) -> Result<Self> {
        let mut coeffs = CoefficientSet::new(spec, &sample)?;
        let grid = grid.unwrap_or_else(|| TorusGrid::default_for(sample.fast_dim));
        let kind = if sample.family == Family::GradientType {
            Some(DensityKind::Gibbs {
                potential: sample.potential_field(),
                d_const: sample.d_const,
            })
        } else if coeffs.has_uniform_invariant_density() {
            Some(DensityKind::Uniform)
        } else {
            None
        };
        let density = kind.map(|k| InvariantDensity::new(k, grid)).transpose()?;
        let mut b_offset = vec![0.0; coeffs.slow_dim];
        if let Some(d) = &density {
            for (l, off) in b_offset.iter_mut().enumerate() {
                let field = coeffs.b.entry(l, 0).clone();
                let mean = d.average(|y| field.value(&[], y));
                if mean != 0.0 {
                    coeffs.b.entry_mut(l, 0).push_constant(-mean);
                }
                *off = mean;
            }
        }
        Ok(Self {
            sample,
            coeffs,
            density,
            b_offset,
        })
    }

    /// Samples a medium and builds its environment in one step.
    pub fn sample(
        family: Family,
        params: &MediumParams,
        spec: &CoefficientSpec,
        seed: u64,
    ) -> Result<Self> {
        let mut params = params.clone();
        params.slow_dim = spec.slow_dim;
        params.wavevectors.extend(spec.wavevectors());
        Self::build(spec, sample_medium(family, &params, seed)?)
    }

    pub fn density(&self) -> Result<&InvariantDensity> {
        self.density.as_ref().ok_or_else(|| {
            Error::DensityUnavailable(format!(
                "{:?} medium with non-gradient fast dynamics",
                self.sample.family
            ))
        })
    }

    /// π-average of a scalar field on the torus.
    pub fn pi_average<F: Fn(&[f64]) -> f64>(&self, h: F) -> Result<f64> {
        Ok(self.density()?.average(h))
    }

    pub fn slow_dim(&self) -> usize {
        self.coeffs.slow_dim
    }

    pub fn fast_dim(&self) -> usize {
        self.coeffs.fast_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(dim: usize) -> MediumParams {
        MediumParams {
            fast_dim: dim,
            slow_dim: 1,
            ..Default::default()
        }
    }

    fn gradient_params() -> MediumParams {
        MediumParams {
            potential: vec![Mode {
                amp: 1.0,
                kind: ModeKind::Cos,
                k: vec![1],
            }],
            d_const: Some(1.0),
            ..params(1)
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_medium(Family::RandomShiftPeriodic, &params(1), 7).unwrap();
        let b = sample_medium(Family::RandomShiftPeriodic, &params(1), 7).unwrap();
        assert_eq!(a.shift, b.shift);
        assert!(a.shift.iter().all(|s| (0.0..1.0).contains(s)));
        let c = sample_medium(Family::RandomShiftPeriodic, &params(1), 8).unwrap();
        assert_ne!(a.shift, c.shift);
    }

    #[test]
    fn phases_in_range() {
        let mut p = params(2);
        p.wavevectors = vec![vec![1, 0], vec![0, 1], vec![1, 1], vec![1, 0]];
        let s = sample_medium(Family::RandomPhaseFourier, &p, 3).unwrap();
        assert_eq!(s.phases.len(), 3);
        assert!(s.phases.iter().all(|t| (0.0..TAU).contains(t)));
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = gradient_params();
        p.d_const = Some(0.0);
        assert!(sample_medium(Family::GradientType, &p, 1).is_err());
        p.d_const = Some(-1.0);
        assert!(sample_medium(Family::GradientType, &p, 1).is_err());
        let mut p = gradient_params();
        p.potential.clear();
        assert!(sample_medium(Family::GradientType, &p, 1).is_err());
        assert!(sample_medium(Family::RandomPhaseFourier, &params(1), 1).is_err());
        assert!(sample_medium(Family::RandomShiftPeriodic, &params(3), 1).is_err());
    }

    #[test]
    fn gradient_density_and_drift() {
        let spec = CoefficientSpec {
            slow_dim: 1,
            k1: 1,
            k2: 1,
            sigma: vec![TermSpec::constant(&[0, 0], 1.0)],
            ..Default::default()
        };
        for seed in [1, 99] {
            let env = Environment::sample(Family::GradientType, &gradient_params(), &spec, seed)
                .unwrap();
            let d = env.density().unwrap();
            for &y in &[0.0, 0.2, 0.5, 0.9] {
                assert!((d.m_tilde(&[y]) - (-(TAU * y).cos()).exp()).abs() < 1e-14);
                let f = env.coeffs.f.entry(0, 0).value(&[], &[y]);
                assert!((f - TAU * (TAU * y).sin()).abs() < 1e-12);
                let t = env.coeffs.tau1.entry(0, 0).value(&[], &[y]);
                assert!((t - 2f64.sqrt()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn constant_coefficients_ignore_position() {
        let spec = CoefficientSpec {
            slow_dim: 1,
            k1: 1,
            k2: 1,
            c: vec![TermSpec::constant(&[0], 0.3)],
            sigma: vec![TermSpec::constant(&[0, 0], 0.8)],
            tau2: vec![TermSpec::constant(&[0, 0], 1.2)],
            ..Default::default()
        };
        let env =
            Environment::sample(Family::RandomShiftPeriodic, &params(1), &spec, 4).unwrap();
        let v0 = env.coeffs.eval(&[0.0], &[0.0]);
        for (x, y) in [(1.5, 0.3), (-2.0, 7.9)] {
            assert_eq!(env.coeffs.eval(&[x], &[y]), v0);
        }
        assert_eq!(v0.c, vec![0.3]);
        assert_eq!(v0.tau2, vec![1.2]);
    }

    #[test]
    fn b_is_centered_under_pi() {
        let spec = CoefficientSpec {
            slow_dim: 1,
            k1: 1,
            k2: 1,
            b: vec![
                TermSpec::new(&[0], 1.0, ModeKind::Cos, &[1]),
                TermSpec::constant(&[0], 0.25),
            ],
            sigma: vec![TermSpec::constant(&[0, 0], 1.0)],
            ..Default::default()
        };
        let env = Environment::sample(Family::GradientType, &gradient_params(), &spec, 1).unwrap();
        // E^π cos(2πy) = −I₁(1)/I₀(1) for m̃ = exp(−cos 2πy)
        let expected = 0.25 - 0.565_159_103_992_485_0 / 1.266_065_877_752_008_4;
        assert!((env.b_offset[0] - expected).abs() < 1e-12);
        let mean = env
            .pi_average(|y| env.coeffs.b.entry(0, 0).value(&[], y))
            .unwrap();
        assert!(mean.abs() < 1e-14);
    }

    #[test]
    fn gradient_family_rejects_explicit_fast_fields() {
        let spec = CoefficientSpec {
            slow_dim: 1,
            k1: 1,
            k2: 1,
            f: vec![TermSpec::constant(&[0], 1.0)],
            ..Default::default()
        };
        assert!(Environment::sample(Family::GradientType, &gradient_params(), &spec, 1).is_err());
    }

    #[test]
    fn nondegeneracy_check() {
        let spec = CoefficientSpec {
            slow_dim: 1,
            k1: 1,
            k2: 1,
            sigma: vec![
                TermSpec::constant(&[0, 0], 1.0),
                TermSpec::new(&[0, 0], 0.5, ModeKind::Cos, &[1]),
            ],
            tau2: vec![TermSpec::constant(&[0, 0], 2.0)],
            ..Default::default()
        };
        let env =
            Environment::sample(Family::RandomShiftPeriodic, &params(1), &spec, 2).unwrap();
        let (s, f) = env.coeffs.nondegeneracy(&[0.0], 256);
        assert!(s >= 0.25 - 1e-12 && s <= 0.25 + 1e-3);
        assert!((f - 4.0).abs() < 1e-12);
    }
}
