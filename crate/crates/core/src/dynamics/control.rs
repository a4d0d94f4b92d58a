use std::sync::Arc;

use nalgebra::DVector;

use crate::action::DiscretePath;
use crate::corrector::GradientTable;
use crate::effective::RateModel;
use crate::error::{Error, Result};
use crate::medium::Environment;

/// A feedback control `(t, x, y) ↦ (u₁, u₂)`.
pub trait ControlLaw: Send + Sync {
    fn control(&self, t: f64, x: &[f64], y: &[f64], u1: &mut [f64], u2: &mut [f64]);
}

/// Control applied to the slow/fast system.
#[derive(Clone)]
pub enum ControlPolicy {
    Zero,
    /// Constant controls, mainly for testing the change of measure.
    Constant { u1: Vec<f64>, u2: Vec<f64> },
    PathTracking(Arc<TrackingControl>),
}

impl std::fmt::Debug for ControlPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::Constant { u1, u2 } => write!(f, "Constant {{ u1: {u1:?}, u2: {u2:?} }}"),
            Self::PathTracking(_) => write!(f, "PathTracking"),
        }
    }
}

impl ControlPolicy {
    #[inline]
    pub fn control(&self, t: f64, x: &[f64], y: &[f64], u1: &mut [f64], u2: &mut [f64]) {
        match self {
            Self::Zero => {
                u1.fill(0.0);
                u2.fill(0.0);
            }
            Self::Constant { u1: c1, u2: c2 } => {
                u1.copy_from_slice(c1);
                u2.copy_from_slice(c2);
            }
            Self::PathTracking(c) => c.control(t, x, y, u1, u2),
        }
    }
}

/// Control steering the slow motion along a reference path ψ:
///
/// ```text
/// u₁ = (σ + ξτ₁)ᵀ q⁻¹(x) (ψ̇_t − r(x))
/// u₂ = (ξτ₂)ᵀ q⁻¹(x) (ψ̇_t − r(x))
/// ```
///
/// with ξ the corrector gradient (or Dχ_ρ at a fixed ρ).
pub struct TrackingControl {
    env: Arc<Environment>,
    model: Arc<dyn RateModel>,
    gradient: Option<Arc<GradientTable>>,
    reference: DiscretePath,
    /// q⁻¹(ψ̇ − r) per reference segment when r and q are constant.
    cached: Option<Vec<f64>>,
}

const STACK: usize = 16;

impl TrackingControl {
    /// `gradient = None` means ξ ≡ 0.
    pub fn new(
        env: Arc<Environment>,
        model: Arc<dyn RateModel>,
        gradient: Option<Arc<GradientTable>>,
        reference: DiscretePath,
    ) -> Result<Self> {
        let co = &env.coeffs;
        let m = co.slow_dim;
        if model.dim() != m || reference.dim != m {
            return Err(Error::InvalidArgument(format!(
                "slow dimension {m} does not match the rate model ({}) or the reference path ({})",
                model.dim(),
                reference.dim
            )));
        }
        if let Some(g) = &gradient {
            if g.rows != m || g.grid.dim != co.fast_dim {
                return Err(Error::InvalidArgument(
                    "corrector gradient has the wrong shape".into(),
                ));
            }
        }
        let mut tc = Self {
            env,
            model,
            gradient,
            reference,
            cached: None,
        };
        if tc.model.is_constant() {
            let x = vec![0.0; m];
            let mut all = Vec::with_capacity(tc.reference.n_seg() * m);
            for seg in 0..tc.reference.n_seg() {
                let v = tc.reference.segment_velocity(seg);
                all.extend(tc.solve(&x, &v)?.iter());
            }
            tc.cached = Some(all);
        } else {
            // fail early on a non-SPD q along the reference
            for i in 0..=tc.reference.n_seg() {
                let x = tc.reference.knot(i).to_vec();
                tc.solve(&x, &vec![0.0; m])?;
            }
        }
        Ok(tc)
    }

    pub fn reference(&self) -> &DiscretePath {
        &self.reference
    }

    pub fn model(&self) -> &Arc<dyn RateModel> {
        &self.model
    }

    fn solve(&self, x: &[f64], v: &[f64]) -> Result<DVector<f64>> {
        let rhs = DVector::from_column_slice(v) - self.model.drift(x);
        self.model
            .diffusion(x)
            .cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or_else(|| Error::NotSpd(format!("q at x = {x:?}")))
    }

    /// Multiplier `q⁻¹(x)(ψ̇_t − r(x))`, shared by both control blocks.
    pub fn multiplier(&self, t: f64, x: &[f64]) -> DVector<f64> {
        let m = self.reference.dim;
        let seg = self.reference.segment_of(t);
        match &self.cached {
            Some(c) => DVector::from_column_slice(&c[seg * m..(seg + 1) * m]),
            None => self
                .solve(x, &self.reference.segment_velocity(seg))
                .unwrap_or_else(|_| DVector::zeros(m)),
        }
    }

    fn apply(&self, p: &[f64], x: &[f64], y: &[f64], xi: &mut [f64], u1: &mut [f64], u2: &mut [f64]) {
        let co = &self.env.coeffs;
        let (m, n, k1, k2) = (co.slow_dim, co.fast_dim, co.k1, co.k2);
        for (j, u) in u1.iter_mut().enumerate() {
            *u = (0..m).map(|i| co.sigma.entries[i * k1 + j].value(x, y) * p[i]).sum();
        }
        u2.fill(0.0);
        if let Some(gt) = &self.gradient {
            gt.eval(y, xi);
            // w = ξᵀp, then u₁ += τ₁ᵀw and u₂ = τ₂ᵀw
            for l in 0..n {
                let w: f64 = (0..m).map(|i| xi[i * n + l] * p[i]).sum();
                if w == 0.0 {
                    continue;
                }
                for (j, u) in u1.iter_mut().enumerate() {
                    *u += co.tau1.entries[l * k1 + j].value(&[], y) * w;
                }
                for (j, u) in u2.iter_mut().enumerate() {
                    *u += co.tau2.entries[l * k2 + j].value(&[], y) * w;
                }
            }
        }
    }
}

impl ControlLaw for TrackingControl {
    fn control(&self, t: f64, x: &[f64], y: &[f64], u1: &mut [f64], u2: &mut [f64]) {
        let m = self.reference.dim;
        let mn = m * self.env.coeffs.fast_dim;
        let seg = self.reference.segment_of(t);
        let owned;
        let p: &[f64] = match &self.cached {
            Some(c) => &c[seg * m..(seg + 1) * m],
            None => {
                owned = self.multiplier(t, x);
                owned.as_slice()
            }
        };
        if mn <= STACK {
            let mut xi = [0.0; STACK];
            self.apply(p, x, y, &mut xi[..mn], u1, u2);
        } else {
            let mut xi = vec![0.0; mn];
            self.apply(p, x, y, &mut xi, u1, u2);
        }
    }
}
