//! Invariant density of the environment process and π-averages.

use super::field::ScalarField;
use crate::error::{Error, Result};

/// Uniform midpoint grid on the unit torus `[0,1)^dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TorusGrid {
    pub dim: usize,
    pub n: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize) -> Self {
        Self { dim, n }
    }

    /// Default quadrature resolution: 4096 nodes in 1-d, 256 per axis in 2-d.
    pub fn default_for(dim: usize) -> Self {
        match dim {
            1 => Self::new(1, 4096),
            _ => Self::new(dim, 256),
        }
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Midpoint of cell `idx` (flattened, first axis fastest).
    pub fn point(&self, idx: usize, out: &mut [f64]) {
        let mut rem = idx;
        let h = self.spacing();
        for o in out.iter_mut().take(self.dim) {
            *o = ((rem % self.n) as f64 + 0.5) * h;
            rem /= self.n;
        }
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(move |i| {
            let mut p = vec![0.0; self.dim];
            self.point(i, &mut p);
            p
        })
    }
}

/// Closed forms available for the invariant density.
#[derive(Debug, Clone, PartialEq)]
pub enum DensityKind {
    /// Divergence-free fast generator with constant diffusion: m̃ ≡ 1.
    Uniform,
    /// Gradient medium: m̃ = exp(−Q/D).
    Gibbs { potential: ScalarField, d_const: f64 },
}

/// Unnormalized density m̃ on the torus with its normalizer ∫ m̃.
#[derive(Debug, Clone)]
pub struct InvariantDensity {
    pub kind: DensityKind,
    pub normalizer: f64,
    grid: TorusGrid,
    weights: Vec<f64>,
}

impl InvariantDensity {
    pub fn new(kind: DensityKind, grid: TorusGrid) -> Result<Self> {
        let mut weights = Vec::with_capacity(grid.len());
        let mut y = vec![0.0; grid.dim];
        let mut sum = 0.0;
        for i in 0..grid.len() {
            grid.point(i, &mut y);
            let m = m_tilde(&kind, &y);
            if !(m > 0.0) || !m.is_finite() {
                return Err(Error::NonPositiveDensity { node: i });
            }
            sum += m;
            weights.push(m);
        }
        let cell = grid.spacing().powi(grid.dim as i32);
        for w in &mut weights {
            *w /= sum;
        }
        Ok(Self {
            kind,
            normalizer: sum * cell,
            grid,
            weights,
        })
    }

    pub fn m_tilde(&self, y: &[f64]) -> f64 {
        m_tilde(&self.kind, y)
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    /// Normalized quadrature weights, one per grid node; they sum to 1.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// ∫ h m̃ / ∫ m̃ by the midpoint rule.
    pub fn average<F: Fn(&[f64]) -> f64>(&self, h: F) -> f64 {
        let mut y = vec![0.0; self.grid.dim];
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            self.grid.point(i, &mut y);
            acc += w * h(&y);
        }
        acc
    }

    /// π-average of values already tabulated on this density's grid.
    pub fn average_values(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.weights.len());
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// Probability mass of each of `bins` equal cells along the first fast axis.
    pub fn bin_masses(&self, bins: usize) -> Vec<f64> {
        let mut masses = vec![0.0; bins];
        let mut y = vec![0.0; self.grid.dim];
        for (i, w) in self.weights.iter().enumerate() {
            self.grid.point(i, &mut y);
            let b = ((y[0] * bins as f64) as usize).min(bins - 1);
            masses[b] += w;
        }
        masses
    }
}

fn m_tilde(kind: &DensityKind, y: &[f64]) -> f64 {
    match kind {
        DensityKind::Uniform => 1.0,
        DensityKind::Gibbs { potential, d_const } => (-potential.value(&[], y) / d_const).exp(),
    }
}
