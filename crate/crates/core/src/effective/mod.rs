//! Homogenized drift r(x) and diffusion q(x):
//!
//! ```text
//! r(x) = E^π[c(x,·) + ξ g(x,·)]
//! q(x) = E^π[(σ + ξτ₁)(σ + ξτ₁)ᵀ + (ξτ₂)(ξτ₂)ᵀ]
//! ```
//!
//! π-averages are taken with the node weights of the corrector grid, so ξ is
//! used at its tabulated values without interpolation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrector::{node_weights, CorrectorField, GradientTable};
use crate::error::{Error, Result};
use crate::medium::Environment;

/// Drift and diffusion of the limiting small-noise diffusion.
pub trait RateModel: Send + Sync {
    fn dim(&self) -> usize;
    fn drift(&self, x: &[f64]) -> DVector<f64>;
    fn diffusion(&self, x: &[f64]) -> DMatrix<f64>;

    /// True when r and q do not depend on x.
    fn is_constant(&self) -> bool {
        false
    }

    /// Jacobian of r (`J[(i,j)] = ∂r_i/∂x_j`) and `∂q/∂x_j` for each j.
    /// The default uses central differences.
    fn derivatives(&self, x: &[f64]) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let m = self.dim();
        let mut jac = DMatrix::zeros(m, m);
        let mut dq = Vec::with_capacity(m);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        for j in 0..m {
            let h = 1e-6 * x[j].abs().max(1.0);
            xp[j] = x[j] + h;
            xm[j] = x[j] - h;
            let dr = (self.drift(&xp) - self.drift(&xm)) / (2.0 * h);
            jac.set_column(j, &dr);
            dq.push((self.diffusion(&xp) - self.diffusion(&xm)) / (2.0 * h));
            xp[j] = x[j];
            xm[j] = x[j];
        }
        (jac, dq)
    }
}

/// Rate model given by closures; handy for analytic test cases.
pub struct AnalyticModel {
    pub dim: usize,
    pub drift: Box<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>,
    pub diffusion: Box<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>,
}

impl RateModel for AnalyticModel {
    fn dim(&self) -> usize {
        self.dim
    }
    fn drift(&self, x: &[f64]) -> DVector<f64> {
        (self.drift)(x)
    }
    fn diffusion(&self, x: &[f64]) -> DMatrix<f64> {
        (self.diffusion)(x)
    }
}

/// Tensor-product grid of slow states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XGrid {
    /// Sorted node coordinates per axis.
    pub axes: Vec<Vec<f64>>,
}

impl XGrid {
    pub fn single(x: &[f64]) -> Self {
        Self {
            axes: x.iter().map(|&v| vec![v]).collect(),
        }
    }

    /// `n` equispaced nodes on `[lo, hi]` along every axis.
    pub fn uniform(dim: usize, lo: f64, hi: f64, n: usize) -> Self {
        let axis: Vec<f64> = if n <= 1 {
            vec![0.5 * (lo + hi)]
        } else {
            (0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect()
        };
        Self {
            axes: vec![axis; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        let mut rem = idx;
        self.axes
            .iter()
            .map(|a| {
                let v = a[rem % a.len()];
                rem /= a.len();
                v
            })
            .collect()
    }

    /// Multilinear weights: (node index, weight, ∂weight/∂x per axis).
    fn stencil(&self, x: &[f64]) -> Vec<(usize, f64, Vec<f64>)> {
        let d = self.dim();
        let mut lo = Vec::with_capacity(d);
        let mut frac = Vec::with_capacity(d);
        let mut inv_w = Vec::with_capacity(d);
        for (a, &xv) in self.axes.iter().zip(x) {
            if a.len() == 1 {
                lo.push(0);
                frac.push(0.0);
                inv_w.push(0.0);
                continue;
            }
            let (i, t, iw) = if xv <= a[0] {
                (0, 0.0, 0.0)
            } else if xv >= a[a.len() - 1] {
                (a.len() - 2, 1.0, 0.0)
            } else {
                let i = a.partition_point(|&v| v <= xv).saturating_sub(1).min(a.len() - 2);
                let w = a[i + 1] - a[i];
                (i, (xv - a[i]) / w, 1.0 / w)
            };
            lo.push(i);
            frac.push(t);
            inv_w.push(iw);
        }
        let mut out = Vec::with_capacity(1 << d);
        for c in 0..(1usize << d) {
            let mut idx = 0;
            let mut stride = 1;
            let mut w = 1.0;
            let mut grad = vec![1.0; d];
            let mut skip = false;
            for k in 0..d {
                let hi = (c >> k) & 1 == 1;
                let len = self.axes[k].len();
                if len == 1 && hi {
                    skip = true;
                    break;
                }
                let i = lo[k] + usize::from(hi);
                let (wk, dk) = if len == 1 {
                    (1.0, 0.0)
                } else if hi {
                    (frac[k], inv_w[k])
                } else {
                    (1.0 - frac[k], -inv_w[k])
                };
                for (kk, g) in grad.iter_mut().enumerate() {
                    *g *= if kk == k { dk } else { wk };
                }
                w *= wk;
                idx += i * stride;
                stride *= len;
            }
            if !skip {
                out.push((idx, w, grad));
            }
        }
        out
    }
}

/// Where a table of effective coefficients came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub rho_schedule: Vec<f64>,
    pub n_grid: usize,
    /// False when the smallest-ρ Dχ_ρ was used instead of ξ.
    pub extrapolated: bool,
}

/// r and q tabulated on an x-grid with multilinear interpolation.
#[derive(Debug, Clone)]
pub struct EffectiveCoefficients {
    pub grid: XGrid,
    pub r: Vec<DVector<f64>>,
    pub q: Vec<DMatrix<f64>>,
    /// Lower Cholesky factor of q at each node.
    pub q_chol: Vec<DMatrix<f64>>,
    pub provenance: Provenance,
}

/// Smallest admissible eigenvalue of q.
pub const Q_FLOOR: f64 = 1e-10;

impl EffectiveCoefficients {
    pub fn constant(r: DVector<f64>, q: DMatrix<f64>) -> Result<Self> {
        let grid = XGrid::single(&vec![0.0; r.len()]);
        Self::from_nodes(
            grid,
            vec![r],
            vec![q],
            Provenance {
                rho_schedule: Vec::new(),
                n_grid: 0,
                extrapolated: true,
            },
        )
    }

    pub fn from_nodes(
        grid: XGrid,
        r: Vec<DVector<f64>>,
        q: Vec<DMatrix<f64>>,
        provenance: Provenance,
    ) -> Result<Self> {
        let q_chol = q
            .iter()
            .enumerate()
            .map(|(i, qi)| spd_check(qi).map_err(|e| tag(e, &grid.node(i))))
            .collect::<Result<_>>()?;
        Ok(Self {
            grid,
            r,
            q,
            q_chol,
            provenance,
        })
    }

    /// Tabulates r and q on `grid` using ξ from `corrector`, or the
    /// smallest-ρ Dχ_ρ when `extrapolated` is false. A grid is collapsed to
    /// a single node when c, σ and g do not depend on x.
    pub fn compute(
        env: &Environment,
        corrector: &CorrectorField,
        grid: &XGrid,
        extrapolated: bool,
    ) -> Result<Self> {
        if extrapolated && !corrector.converged {
            return Err(Error::NonConvergence(
                corrector.xi_residual.iter().fold(0.0, |a: f64, &b| a.max(b)),
            ));
        }
        let table = if extrapolated {
            &corrector.xi
        } else {
            &corrector.smallest_rho().dchi
        };
        let co = &env.coeffs;
        let grid = if co.c.depends_on_x() || co.sigma.depends_on_x() || co.g.depends_on_x() {
            grid.clone()
        } else {
            XGrid::single(&vec![0.0; co.slow_dim])
        };
        let nodes: Vec<(DVector<f64>, DMatrix<f64>)> = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let x = grid.node(i);
                Ok((compute_r(env, table, &x)?, compute_q(env, table, &x)?))
            })
            .collect::<Result<_>>()?;
        let (r, q) = nodes.into_iter().unzip();
        Self::from_nodes(
            grid,
            r,
            q,
            Provenance {
                rho_schedule: corrector.rho_schedule.clone(),
                n_grid: corrector.grid.n,
                extrapolated,
            },
        )
    }

    /// Cholesky-based solve of `q(x) z = v`.
    pub fn solve_q(&self, x: &[f64], v: &DVector<f64>) -> Result<DVector<f64>> {
        let q = self.diffusion(x);
        q.cholesky()
            .map(|c| c.solve(v))
            .ok_or_else(|| Error::NotSpd(format!("q at x = {x:?}")))
    }

    /// Rows `x…, r…, q (row-major)…` for CSV export.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.grid.len())
            .map(|i| {
                let mut row = self.grid.node(i);
                row.extend(self.r[i].iter());
                row.extend(self.q[i].transpose().iter());
                row
            })
            .collect()
    }

    pub fn header(&self) -> Vec<String> {
        let m = self.grid.dim();
        let mut h: Vec<String> = (0..m).map(|i| format!("x{i}")).collect();
        h.extend((0..m).map(|i| format!("r{i}")));
        for i in 0..m {
            for j in 0..m {
                h.push(format!("q{i}{j}"));
            }
        }
        h
    }
}

fn tag(e: Error, x: &[f64]) -> Error {
    match e {
        Error::NotSpd(msg) => Error::NotSpd(format!("{msg} at x = {x:?}")),
        other => other,
    }
}

/// Checks symmetry and the eigenvalue floor; returns the Cholesky factor.
pub fn spd_check(q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !q.is_square() {
        return Err(Error::NotSpd("not square".into()));
    }
    let sym = (q + q.transpose()) * 0.5;
    let min_eig = SymmetricEigen::new(sym.clone()).eigenvalues.min();
    if !(min_eig >= Q_FLOOR) {
        return Err(Error::NotSpd(format!("smallest eigenvalue {min_eig:e}")));
    }
    sym.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::NotSpd("Cholesky failed".into()))
}

impl RateModel for EffectiveCoefficients {
    fn dim(&self) -> usize {
        self.grid.dim()
    }

    fn is_constant(&self) -> bool {
        self.grid.len() == 1
    }

    fn drift(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for (i, w, _) in self.grid.stencil(x) {
            if w != 0.0 {
                out += &self.r[i] * w;
            }
        }
        out
    }

    fn diffusion(&self, x: &[f64]) -> DMatrix<f64> {
        let m = self.dim();
        let mut out = DMatrix::zeros(m, m);
        for (i, w, _) in self.grid.stencil(x) {
            if w != 0.0 {
                out += &self.q[i] * w;
            }
        }
        out
    }

    fn derivatives(&self, x: &[f64]) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let m = self.dim();
        let mut jac = DMatrix::zeros(m, m);
        let mut dq = vec![DMatrix::zeros(m, m); m];
        for (i, _, grad) in self.grid.stencil(x) {
            for j in 0..m {
                if grad[j] != 0.0 {
                    let col = &self.r[i] * grad[j];
                    let mut c = jac.column_mut(j);
                    c += col;
                    dq[j] += &self.q[i] * grad[j];
                }
            }
        }
        (jac, dq)
    }
}

/// Shared handle used by controls and reports.
pub type SharedModel = Arc<dyn RateModel>;

/// ξ (or Dχ_ρ) at grid node `i` as an `m × n` matrix.
fn table_at(table: &GradientTable, i: usize, m: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(m, n, table.node(i))
}

fn check_table(env: &Environment, table: &GradientTable) -> Result<()> {
    if table.rows != env.slow_dim() || table.grid.dim != env.fast_dim() {
        return Err(Error::InvalidArgument(format!(
            "gradient table shape {}x{} does not match environment {}x{}",
            table.rows,
            table.grid.dim,
            env.slow_dim(),
            env.fast_dim()
        )));
    }
    Ok(())
}

/// r(x) = E^π[c(x,·) + ξ g(x,·)].
pub fn compute_r(env: &Environment, xi: &GradientTable, x: &[f64]) -> Result<DVector<f64>> {
    check_table(env, xi)?;
    let co = &env.coeffs;
    let (m, n) = (co.slow_dim, co.fast_dim);
    let w = node_weights(env, xi.grid)?;
    let mut y = vec![0.0; n];
    let mut acc = DVector::zeros(m);
    for (i, wi) in w.iter().enumerate() {
        xi.grid.point(i, &mut y);
        let c = DVector::from_vec(co.c.eval(x, &y));
        let g = DVector::from_vec(co.g.eval(x, &y));
        acc += (c + table_at(xi, i, m, n) * g) * *wi;
    }
    Ok(acc)
}

/// q(x) = E^π[(σ + ξτ₁)(σ + ξτ₁)ᵀ + (ξτ₂)(ξτ₂)ᵀ], symmetrized.
pub fn compute_q(env: &Environment, xi: &GradientTable, x: &[f64]) -> Result<DMatrix<f64>> {
    check_table(env, xi)?;
    let co = &env.coeffs;
    let (m, n, k1, k2) = (co.slow_dim, co.fast_dim, co.k1, co.k2);
    let w = node_weights(env, xi.grid)?;
    let mut y = vec![0.0; n];
    let mut acc = DMatrix::zeros(m, m);
    for (i, wi) in w.iter().enumerate() {
        xi.grid.point(i, &mut y);
        let s = DMatrix::from_row_slice(m, k1, &co.sigma.eval(x, &y));
        let t1 = DMatrix::from_row_slice(n, k1, &co.tau1.eval(&[], &y));
        let t2 = DMatrix::from_row_slice(n, k2, &co.tau2.eval(&[], &y));
        let xi_i = table_at(xi, i, m, n);
        let a1 = s + &xi_i * t1;
        let a2 = xi_i * t2;
        acc += (&a1 * a1.transpose() + &a2 * a2.transpose()) * *wi;
    }
    let q = (&acc + acc.transpose()) * 0.5;
    spd_check(&q).map_err(|e| tag(e, x))?;
    Ok(q)
}

/// `c + Dχ·g + σz₁ + Dχ(τ₁z₁ + τ₂z₂)` at one point, with `dchi` the
/// corrector gradient (Dχ_ρ, or ξ for the limiting integrand).
pub fn assemble_lambda_rho(
    env: &Environment,
    dchi: &GradientTable,
    x: &[f64],
    y: &[f64],
    z1: &[f64],
    z2: &[f64],
) -> Result<DVector<f64>> {
    check_table(env, dchi)?;
    let co = &env.coeffs;
    let (m, n, k1, k2) = (co.slow_dim, co.fast_dim, co.k1, co.k2);
    if z1.len() != k1 || z2.len() != k2 {
        return Err(Error::InvalidArgument("control dimensions mismatch".into()));
    }
    let y_red: Vec<f64> = y.iter().map(|v| v - v.floor()).collect();
    let mut d = vec![0.0; m * n];
    dchi.eval(&y_red, &mut d);
    let d = DMatrix::from_row_slice(m, n, &d);
    let c = DVector::from_vec(co.c.eval(x, &y_red));
    let g = DVector::from_vec(co.g.eval(x, &y_red));
    let s = DMatrix::from_row_slice(m, k1, &co.sigma.eval(x, &y_red));
    let t1 = DMatrix::from_row_slice(n, k1, &co.tau1.eval(&[], &y_red));
    let t2 = DMatrix::from_row_slice(n, k2, &co.tau2.eval(&[], &y_red));
    let z1 = DVector::from_column_slice(z1);
    let z2 = DVector::from_column_slice(z2);
    Ok(c + &d * g + s * &z1 + d * (t1 * z1 + t2 * z2))
}

#[cfg(test)]
mod tests;
