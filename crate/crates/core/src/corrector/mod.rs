//! Cell problem `ρχ_ρ − Lχ_ρ = b` on the torus and the ρ↓0 limit ξ of its gradient.
//!
//! `L = f·∇ + ½ tr[(τ₁τ₁ᵀ + τ₂τ₂ᵀ)∇²]` is discretized with second-order
//! central differences on a uniform periodic node grid `y_i = i/n`. One scalar
//! problem is solved per slow component ℓ of `b`. Gradients are taken by
//! central differencing the solution.

pub mod linalg;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate_fast_with, run_replicas, FAST_STEP};
use crate::error::{Error, Result};
use crate::medium::Environment;
use crate::rng;
use linalg::{bicgstab, CsrMatrix, CyclicTridiagonal};

/// Default ρ schedule for the extrapolation of ξ.
pub const DEFAULT_RHO_SCHEDULE: [f64; 5] = [1e-2, 3.16e-3, 1e-3, 3.16e-4, 1e-4];

/// Residual tolerance of the grid solve (sup norm).
pub const RESIDUAL_TOL: f64 = 1e-10;

/// Relative tolerance of the 2-d iterative solve.
pub const ITERATIVE_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectorMethod {
    Grid,
    Mc,
}

/// Uniform periodic node grid `y = i/n` on `[0,1)^dim`, first axis fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeGrid {
    pub dim: usize,
    pub n: usize,
}

impl NodeGrid {
    pub fn new(dim: usize, n: usize) -> Self {
        Self { dim, n }
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

    pub fn point(&self, idx: usize, out: &mut [f64]) {
        let mut rem = idx;
        for o in out.iter_mut().take(self.dim) {
            *o = (rem % self.n) as f64 / self.n as f64;
            rem /= self.n;
        }
    }

    /// Index of the node displaced by `offset` along `axis` (periodic).
    #[inline]
    fn neighbor(&self, idx: usize, axis: usize, offset: isize) -> usize {
        let stride = self.n.pow(axis as u32);
        let coord = (idx / stride) % self.n;
        let shifted = (coord as isize + offset).rem_euclid(self.n as isize) as usize;
        idx - coord * stride + shifted * stride
    }
}

/// Gradient field tabulated on a node grid: an `rows × dim` matrix per node,
/// evaluated by periodic (bi)linear interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientTable {
    pub grid: NodeGrid,
    pub rows: usize,
    /// Node-major, each node holds `rows × dim` row-major.
    pub values: Vec<f64>,
}

impl GradientTable {
    pub fn zeros(grid: NodeGrid, rows: usize) -> Self {
        Self {
            grid,
            rows,
            values: vec![0.0; grid.len() * rows * grid.dim],
        }
    }

    fn block(&self) -> usize {
        self.rows * self.grid.dim
    }

    pub fn node(&self, idx: usize) -> &[f64] {
        let b = self.block();
        &self.values[idx * b..(idx + 1) * b]
    }

    /// Interpolated value at `y` (any real coordinates; reduced mod 1).
    pub fn eval(&self, y: &[f64], out: &mut [f64]) {
        let n = self.grid.n;
        let b = self.block();
        out[..b].fill(0.0);
        let mut base = [0usize; 2];
        let mut frac = [0.0f64; 2];
        for d in 0..self.grid.dim {
            let s = (y[d] - y[d].floor()) * n as f64;
            let i = (s.floor() as usize).min(n - 1);
            base[d] = i;
            frac[d] = s - i as f64;
        }
        let corners = 1usize << self.grid.dim;
        for c in 0..corners {
            let mut w = 1.0;
            let mut idx = 0;
            let mut stride = 1;
            for d in 0..self.grid.dim {
                let hi = (c >> d) & 1 == 1;
                let i = if hi { (base[d] + 1) % n } else { base[d] };
                w *= if hi { frac[d] } else { 1.0 - frac[d] };
                idx += i * stride;
                stride *= n;
            }
            if w != 0.0 {
                for (o, v) in out.iter_mut().zip(&self.values[idx * b..(idx + 1) * b]) {
                    *o += w * v;
                }
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// Solution of one cell problem at a fixed ρ.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSolution {
    pub rho: f64,
    pub grid: NodeGrid,
    /// One field per slow component.
    pub chi: Vec<Vec<f64>>,
    /// Dχ_ρ, shape `slow_dim × fast_dim` per node.
    pub dchi: GradientTable,
    /// sup-norm of ρχ − L_hχ − b over nodes and components.
    pub residual: f64,
}

/// Discretized `ρI − L_h` for one environment.
enum Operator {
    Periodic1d(CyclicTridiagonal),
    Sparse(CsrMatrix),
}

impl Operator {
    fn build(env: &Environment, grid: NodeGrid, rho: f64) -> Self {
        let co = &env.coeffs;
        let h = grid.spacing();
        let mut y = vec![0.0; grid.dim];
        let mut f = vec![0.0; grid.dim];
        match grid.dim {
            1 => {
                let n = grid.n;
                let mut lower = vec![0.0; n];
                let mut upper = vec![0.0; n];
                for i in 0..n {
                    grid.point(i, &mut y);
                    co.f.eval_into(&[], &y, &mut f);
                    let a = co.fast_diffusion(&y)[(0, 0)];
                    let diff = 0.5 * a / (h * h);
                    let adv = f[0] / (2.0 * h);
                    lower[i] = -(diff - adv);
                    upper[i] = -(diff + adv);
                }
                Operator::Periodic1d(CyclicTridiagonal::new(lower, upper, vec![rho; n]))
            }
            _ => {
                let len = grid.len();
                let mut m = CsrMatrix {
                    n: len,
                    row_ptr: Vec::with_capacity(len + 1),
                    cols: Vec::with_capacity(9 * len),
                    vals: Vec::with_capacity(9 * len),
                };
                m.row_ptr.push(0);
                let mut row: Vec<(usize, f64)> = Vec::with_capacity(9);
                for i in 0..len {
                    grid.point(i, &mut y);
                    co.f.eval_into(&[], &y, &mut f);
                    let a = co.fast_diffusion(&y);
                    row.clear();
                    row.push((i, rho));
                    for d in 0..2 {
                        let diff = 0.5 * a[(d, d)] / (h * h);
                        let adv = f[d] / (2.0 * h);
                        row.push((i, 2.0 * diff));
                        row.push((grid.neighbor(i, d, -1), -(diff - adv)));
                        row.push((grid.neighbor(i, d, 1), -(diff + adv)));
                    }
                    // ½·2·a₁₂ ∂₁₂ with the four-point cross stencil
                    let cross = a[(0, 1)] / (4.0 * h * h);
                    if cross != 0.0 {
                        for (s0, s1, sign) in [(1, 1, 1.0), (-1, -1, 1.0), (1, -1, -1.0), (-1, 1, -1.0)] {
                            let j = grid.neighbor(grid.neighbor(i, 0, s0), 1, s1);
                            row.push((j, -sign * cross));
                        }
                    }
                    row.sort_by_key(|e| e.0);
                    let mut k = 0;
                    while k < row.len() {
                        let (c, mut v) = row[k];
                        k += 1;
                        while k < row.len() && row[k].0 == c {
                            v += row[k].1;
                            k += 1;
                        }
                        m.cols.push(c);
                        m.vals.push(v);
                    }
                    m.row_ptr.push(m.cols.len());
                }
                Operator::Sparse(m)
            }
        }
    }

    /// Smallest sup-norm defect attainable by rounded solutions:
    /// `4·ε_mach·‖u‖∞·max_i Σ_j≠i |a_ij|`.
    fn rounding_floor(&self, fields: &[Vec<f64>]) -> f64 {
        let u_sup = fields
            .iter()
            .flat_map(|f| f.iter())
            .fold(0.0f64, |a, v| a.max(v.abs()));
        let off = match self {
            Operator::Periodic1d(s) => s
                .lower
                .iter()
                .zip(&s.upper)
                .fold(0.0f64, |a, (l, u)| a.max(l.abs() + u.abs())),
            Operator::Sparse(m) => (0..m.n)
                .map(|i| {
                    (m.row_ptr[i]..m.row_ptr[i + 1])
                        .filter(|&k| m.cols[k] != i)
                        .map(|k| m.vals[k].abs())
                        .sum::<f64>()
                })
                .fold(0.0, f64::max),
        };
        4.0 * f64::EPSILON * u_sup * off
    }

    fn apply(&self, u: &[f64], out: &mut [f64]) {
        match self {
            Operator::Periodic1d(s) => s.apply(u, out),
            Operator::Sparse(m) => m.apply(u, out),
        }
    }

    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        match self {
            Operator::Periodic1d(s) => s.solve(rhs),
            Operator::Sparse(m) => {
                let (x, _) = bicgstab(m, rhs, ITERATIVE_REL_TOL, 20 * m.n.max(1000))?;
                Ok(x)
            }
        }
    }
}

/// Solves `ρχ − L_hχ = b` on an `n_grid`-per-axis node grid.
pub fn solve_cell_problem_grid(env: &Environment, rho: f64, n_grid: usize) -> Result<CellSolution> {
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rho must be positive, got {rho}"
        )));
    }
    if n_grid < 3 {
        return Err(Error::InvalidArgument("n_grid must be at least 3".into()));
    }
    let co = &env.coeffs;
    let grid = NodeGrid::new(co.fast_dim, n_grid);
    let op = Operator::build(env, grid, rho);
    let len = grid.len();
    let mut y = vec![0.0; grid.dim];
    let mut chi = Vec::with_capacity(co.slow_dim);
    let mut residual: f64 = 0.0;
    let mut au = vec![0.0; len];
    for l in 0..co.slow_dim {
        let field = co.b.entry(l, 0);
        let rhs: Vec<f64> = (0..len)
            .map(|i| {
                grid.point(i, &mut y);
                field.value(&[], &y)
            })
            .collect();
        let u = if field.is_zero() {
            vec![0.0; len]
        } else {
            op.solve(&rhs)?
        };
        op.apply(&u, &mut au);
        let res = au
            .iter()
            .zip(&rhs)
            .fold(0.0f64, |a, (x, b)| a.max((x - b).abs()));
        residual = residual.max(res);
        chi.push(u);
    }
    let tol = match op {
        // the defect of any f64 vector is limited by rounding of χ itself
        Operator::Periodic1d(_) => RESIDUAL_TOL.max(op.rounding_floor(&chi)),
        // relative criterion of the iterative solver, converted to sup norm
        Operator::Sparse(_) => {
            ITERATIVE_REL_TOL * (len as f64).sqrt() * co.b.entries.iter().map(|e| e.amplitude_bound()).fold(1.0, f64::max)
        }
    };
    if residual > tol {
        return Err(Error::Residual { residual, tol });
    }
    let dchi = central_gradient(grid, &chi);
    Ok(CellSolution {
        rho,
        grid,
        chi,
        dchi,
        residual,
    })
}

/// Central-difference gradient of each component field.
pub fn central_gradient(grid: NodeGrid, fields: &[Vec<f64>]) -> GradientTable {
    let rows = fields.len();
    let mut table = GradientTable::zeros(grid, rows);
    let inv = 1.0 / (2.0 * grid.spacing());
    let block = rows * grid.dim;
    for i in 0..grid.len() {
        for (l, u) in fields.iter().enumerate() {
            for d in 0..grid.dim {
                let up = u[grid.neighbor(i, d, 1)];
                let dn = u[grid.neighbor(i, d, -1)];
                table.values[i * block + l * grid.dim + d] = (up - dn) * inv;
            }
        }
    }
    table
}

/// Pointwise linear-in-ρ extrapolation of Dχ_ρ to ρ = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct XiExtrapolation {
    pub xi: GradientTable,
    /// Per-node max |fit − data| over the schedule.
    pub residual: Vec<f64>,
    pub max_residual: f64,
    pub converged: bool,
}

/// Relative tolerance on the linear-model misfit of the extrapolation.
pub const EXTRAPOLATION_TOL: f64 = 1e-6;

/// Least-squares fit `Dχ_ρ ≈ ξ + c·ρ` at every node and entry.
pub fn extrapolate_xi(solutions: &[CellSolution]) -> Result<XiExtrapolation> {
    if solutions.len() < 3 {
        return Err(Error::InvalidArgument(
            "extrapolation needs at least 3 values of rho".into(),
        ));
    }
    let rhos: Vec<f64> = solutions.iter().map(|s| s.rho).collect();
    let (lo, hi) = rhos
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &r| (lo.min(r), hi.max(r)));
    if hi / lo < 100.0 * (1.0 - 1e-9) {
        return Err(Error::InvalidArgument(
            "rho schedule must span at least two decades".into(),
        ));
    }
    let first = &solutions[0].dchi;
    if solutions
        .iter()
        .any(|s| s.dchi.grid != first.grid || s.dchi.rows != first.rows)
    {
        return Err(Error::InvalidArgument(
            "all cell solutions must share one grid".into(),
        ));
    }
    let k = rhos.len() as f64;
    let mean_r = rhos.iter().sum::<f64>() / k;
    let srr: f64 = rhos.iter().map(|r| (r - mean_r).powi(2)).sum();
    let block = first.block();
    let nodes = first.grid.len();
    let mut xi = GradientTable::zeros(first.grid, first.rows);
    let mut residual = vec![0.0; nodes];
    let scale = solutions
        .iter()
        .map(|s| s.dchi.max_abs())
        .fold(0.0, f64::max)
        .max(1.0);
    xi.values
        .par_chunks_mut(block)
        .zip(residual.par_iter_mut())
        .enumerate()
        .for_each(|(node, (out, res))| {
            for e in 0..block {
                let idx = node * block + e;
                let mean_v = solutions.iter().map(|s| s.dchi.values[idx]).sum::<f64>() / k;
                let srv: f64 = solutions
                    .iter()
                    .map(|s| (s.rho - mean_r) * (s.dchi.values[idx] - mean_v))
                    .sum();
                let slope = srv / srr;
                let intercept = mean_v - slope * mean_r;
                out[e] = intercept;
                for s in solutions {
                    let fit = intercept + slope * s.rho;
                    *res = f64::max(*res, (fit - s.dchi.values[idx]).abs());
                }
            }
        });
    let max_residual = residual.iter().fold(0.0f64, |a, &b| a.max(b));
    Ok(XiExtrapolation {
        xi,
        residual,
        max_residual,
        converged: max_residual <= EXTRAPOLATION_TOL * scale,
    })
}

/// Cell solutions along a ρ schedule plus the extrapolated ξ.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectorField {
    pub grid: NodeGrid,
    pub rho_schedule: Vec<f64>,
    pub solutions: Vec<CellSolution>,
    pub xi: GradientTable,
    pub xi_residual: Vec<f64>,
    pub converged: bool,
    pub residual_norms: Vec<f64>,
}

impl CorrectorField {
    /// Solves the schedule (in parallel over ρ) and extrapolates ξ.
    pub fn compute(env: &Environment, rho_schedule: &[f64], n_grid: usize) -> Result<Self> {
        let solutions: Vec<CellSolution> = rho_schedule
            .par_iter()
            .map(|&rho| solve_cell_problem_grid(env, rho, n_grid))
            .collect::<Result<_>>()?;
        let ex = extrapolate_xi(&solutions)?;
        Ok(Self {
            grid: solutions[0].grid,
            rho_schedule: rho_schedule.to_vec(),
            residual_norms: solutions.iter().map(|s| s.residual).collect(),
            solutions,
            xi: ex.xi,
            xi_residual: ex.residual,
            converged: ex.converged,
        })
    }

    /// Solution at the smallest scheduled ρ.
    pub fn smallest_rho(&self) -> &CellSolution {
        self.solutions
            .iter()
            .min_by(|a, b| a.rho.total_cmp(&b.rho))
            .expect("non-empty schedule")
    }

    /// ρ·E^π[χ_ρ²] for each scheduled ρ (summed over components), with π
    /// weights `m̃` evaluated at the grid nodes.
    pub fn vanishing_mass(&self, env: &Environment) -> Result<Vec<f64>> {
        let w = node_weights(env, self.grid)?;
        Ok(self
            .solutions
            .iter()
            .map(|s| {
                s.rho
                    * s.chi
                        .iter()
                        .map(|c| c.iter().zip(&w).map(|(v, wi)| wi * v * v).sum::<f64>())
                        .sum::<f64>()
            })
            .collect())
    }
}

/// Normalized π weights at the nodes of `grid`.
pub fn node_weights(env: &Environment, grid: NodeGrid) -> Result<Vec<f64>> {
    let d = env.density()?;
    let mut y = vec![0.0; grid.dim];
    let mut w: Vec<f64> = (0..grid.len())
        .map(|i| {
            grid.point(i, &mut y);
            d.m_tilde(&y)
        })
        .collect();
    if let Some(i) = w.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::NonPositiveDensity { node: i });
    }
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    Ok(w)
}

/// Monte Carlo estimate of χ_ρ at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCorrectorPoint {
    pub y: Vec<f64>,
    /// One estimate per slow component.
    pub value: Vec<f64>,
    pub std_err: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCorrectorEstimate {
    pub rho: f64,
    pub points: Vec<McCorrectorPoint>,
    /// e^{−ρT}·‖b‖_∞/ρ.
    pub truncation_bias: f64,
    /// Set when the truncation bound exceeds half the smallest nonzero standard error.
    pub truncation_flag: bool,
}

/// χ_ρ(y) ≈ E ∫₀^T e^{−ρt} b(Ŷ_t) dt with Ŷ the rescaled fast process started at y.
pub fn solve_cell_problem_mc(
    env: &Environment,
    rho: f64,
    y_points: &[Vec<f64>],
    n_paths: usize,
    t_trunc: f64,
    seed: u64,
) -> Result<McCorrectorEstimate> {
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rho must be positive, got {rho}"
        )));
    }
    if t_trunc < 10.0 / rho {
        return Err(Error::InvalidArgument(format!(
            "truncation horizon {t_trunc} below 10/rho"
        )));
    }
    if n_paths < 2 {
        return Err(Error::InvalidArgument("need at least 2 paths".into()));
    }
    let co = &env.coeffs;
    let m = co.slow_dim;
    let b_sup: f64 = (0..m)
        .map(|l| co.b.entry(l, 0).amplitude_bound())
        .fold(0.0, f64::max);
    let mut points = Vec::with_capacity(y_points.len());
    for (p_idx, y0) in y_points.iter().enumerate() {
        if co.b.is_zero() {
            points.push(McCorrectorPoint {
                y: y0.clone(),
                value: vec![0.0; m],
                std_err: vec![0.0; m],
            });
            continue;
        }
        let samples: Vec<Result<Vec<f64>>> = run_replicas(n_paths, |rep| {
            let mut r = rng::stream(seed ^ (p_idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15), rep);
            let mut acc = vec![0.0; m];
            let mut prev = vec![0.0; m];
            let mut cur = vec![0.0; m];
            let mut y_red = vec![0.0; y0.len()];
            let mut t_prev = 0.0;
            integrate_fast_with(env, y0, t_trunc, FAST_STEP, &mut r, |step, t, y| {
                for (o, v) in y_red.iter_mut().zip(y) {
                    *o = crate::dynamics::frac(*v);
                }
                let disc = (-rho * t).exp();
                for (l, c) in cur.iter_mut().enumerate() {
                    *c = disc * co.b.entry(l, 0).value(&[], &y_red);
                }
                if step > 0 {
                    let h = t - t_prev;
                    for l in 0..m {
                        acc[l] += 0.5 * h * (prev[l] + cur[l]);
                    }
                }
                prev.copy_from_slice(&cur);
                t_prev = t;
            })?;
            Ok(acc)
        });
        let samples: Vec<Vec<f64>> = samples.into_iter().collect::<Result<_>>()?;
        let nf = n_paths as f64;
        let mut value = vec![0.0; m];
        let mut std_err = vec![0.0; m];
        for l in 0..m {
            let mean = samples.iter().map(|s| s[l]).sum::<f64>() / nf;
            let var = samples.iter().map(|s| (s[l] - mean).powi(2)).sum::<f64>() / (nf - 1.0);
            value[l] = mean;
            std_err[l] = (var / nf).sqrt();
        }
        points.push(McCorrectorPoint {
            y: y0.clone(),
            value,
            std_err,
        });
    }
    let truncation_bias = (-rho * t_trunc).exp() * b_sup / rho;
    let min_se = points
        .iter()
        .flat_map(|p| p.std_err.iter().copied())
        .filter(|&s| s > 0.0)
        .fold(f64::INFINITY, f64::min);
    Ok(McCorrectorEstimate {
        rho,
        points,
        truncation_bias,
        truncation_flag: min_se.is_finite() && truncation_bias > 0.5 * min_se,
    })
}
