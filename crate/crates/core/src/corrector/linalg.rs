//! Linear solvers for periodic finite-difference operators.

use crate::error::{Error, Result};

/// Periodic tridiagonal system
/// `lower[i]·u[i−1] + diag[i]·u[i] + upper[i]·u[i+1] = rhs[i]` (indices mod n).
///
/// The row sums are kept separately and products are formed as
/// `row_sum[i]·u[i] + lower[i]·(u[i−1] − u[i]) + upper[i]·(u[i+1] − u[i])`,
/// which avoids the cancellation of the large diffusive entries when the
/// grid is fine.
#[derive(Debug, Clone)]
pub struct CyclicTridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
    pub row_sum: Vec<f64>,
}

impl CyclicTridiagonal {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, row_sum: Vec<f64>) -> Self {
        let diag = row_sum
            .iter()
            .zip(lower.iter().zip(&upper))
            .map(|(s, (l, u))| s - l - u)
            .collect();
        Self {
            lower,
            diag,
            upper,
            row_sum,
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            let im = if i == 0 { n - 1 } else { i - 1 };
            let ip = if i + 1 == n { 0 } else { i + 1 };
            out[i] = self.row_sum[i] * u[i]
                + self.lower[i] * (u[im] - u[i])
                + self.upper[i] * (u[ip] - u[i]);
        }
    }

    /// Direct solve by the Sherman–Morrison reduction to a tridiagonal system,
    /// followed by up to four sweeps of iterative refinement.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.len();
        if n < 3 {
            return Err(Error::InvalidArgument(
                "periodic grid needs at least 3 nodes".into(),
            ));
        }
        let factor = Factorized::new(self)?;
        let mut u = factor.solve(rhs);
        let mut r = vec![0.0; n];
        let mut last = f64::INFINITY;
        for _ in 0..4 {
            self.apply(&u, &mut r);
            for (ri, bi) in r.iter_mut().zip(rhs) {
                *ri = bi - *ri;
            }
            let sup = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if sup == 0.0 || sup >= 0.5 * last {
                break;
            }
            last = sup;
            let du = factor.solve(&r);
            for (ui, d) in u.iter_mut().zip(&du) {
                *ui += d;
            }
        }
        Ok(u)
    }
}

struct Factorized<'a> {
    sys: &'a CyclicTridiagonal,
    gamma: f64,
    // Thomas factors of the modified tridiagonal matrix.
    c_prime: Vec<f64>,
    denom: Vec<f64>,
    z: Vec<f64>,
    vz_scale: f64,
}

impl<'a> Factorized<'a> {
    fn new(sys: &'a CyclicTridiagonal) -> Result<Self> {
        let n = sys.len();
        let gamma = -sys.diag[0];
        let alpha = sys.upper[n - 1]; // A[n-1][0]
        let beta = sys.lower[0]; // A[0][n-1]
        let mut diag = sys.diag.clone();
        diag[0] -= gamma;
        diag[n - 1] -= alpha * beta / gamma;
        let mut c_prime = vec![0.0; n];
        let mut denom = vec![0.0; n];
        denom[0] = diag[0];
        if denom[0] == 0.0 {
            return Err(Error::Singular("zero pivot at node 0".into()));
        }
        c_prime[0] = sys.upper[0] / denom[0];
        for i in 1..n {
            denom[i] = diag[i] - sys.lower[i] * c_prime[i - 1];
            if denom[i] == 0.0 || !denom[i].is_finite() {
                return Err(Error::Singular(format!("zero pivot at node {i}")));
            }
            c_prime[i] = if i + 1 < n { sys.upper[i] / denom[i] } else { 0.0 };
        }
        let mut f = Self {
            sys,
            gamma,
            c_prime,
            denom,
            z: Vec::new(),
            vz_scale: 0.0,
        };
        let mut uvec = vec![0.0; n];
        uvec[0] = gamma;
        uvec[n - 1] = alpha;
        let z = f.thomas(&uvec);
        let vz = z[0] + beta / gamma * z[n - 1];
        if (1.0 + vz).abs() < 1e-300 {
            return Err(Error::Singular("Sherman–Morrison denominator vanishes".into()));
        }
        f.vz_scale = 1.0 / (1.0 + vz);
        f.z = z;
        Ok(f)
    }

    fn thomas(&self, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let lower = &self.sys.lower;
        let mut d = vec![0.0; n];
        d[0] = rhs[0] / self.denom[0];
        for i in 1..n {
            d[i] = (rhs[i] - lower[i] * d[i - 1]) / self.denom[i];
        }
        for i in (0..n - 1).rev() {
            d[i] -= self.c_prime[i] * d[i + 1];
        }
        d
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let beta = self.sys.lower[0];
        let y = self.thomas(rhs);
        let vy = y[0] + beta / self.gamma * y[n - 1];
        let s = vy * self.vz_scale;
        y.iter().zip(&self.z).map(|(yi, zi)| yi - s * zi).collect()
    }
}

/// Sparse matrix in compressed-row form.
#[derive(Debug, Clone, Default)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * u[self.cols[k]];
            }
            out[i] = s;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .find(|&k| self.cols[k] == i)
                    .map(|k| self.vals[k])
                    .unwrap_or(0.0)
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Jacobi-preconditioned BiCGSTAB; stops when `‖b − Ax‖₂ ≤ rel_tol·‖b‖₂`.
pub fn bicgstab(
    a: &CsrMatrix,
    b: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)> {
    let n = a.n;
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let mut r = b.to_vec();
    let r_hat = r.clone();
    let mut rho_old = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=max_iter {
        let rho = dot(&r_hat, &r);
        if rho == 0.0 {
            return Err(Error::Singular("BiCGSTAB breakdown (rho = 0)".into()));
        }
        let beta = (rho / rho_old) * (alpha / omega);
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        for i in 0..n {
            y[i] = inv_diag[i] * p[i];
        }
        a.apply(&y, &mut v);
        alpha = rho / dot(&r_hat, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) <= rel_tol * bnorm {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok((x, it));
        }
        for i in 0..n {
            z[i] = inv_diag[i] * s[i];
        }
        a.apply(&z, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm(&r) <= rel_tol * bnorm {
            return Ok((x, it));
        }
        if omega == 0.0 {
            return Err(Error::Singular("BiCGSTAB breakdown (omega = 0)".into()));
        }
        rho_old = rho;
    }
    a.apply(&x, &mut t);
    let res = b.iter().zip(&t).map(|(bi, ti)| (bi - ti).powi(2)).sum::<f64>().sqrt() / bnorm;
    Err(Error::Residual {
        residual: res,
        tol: rel_tol,
    })
}
