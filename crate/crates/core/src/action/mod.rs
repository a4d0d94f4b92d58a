//! Rate function `S(φ) = ½ ∫ (φ̇ − r(φ))ᵀ q⁻¹(φ) (φ̇ − r(φ)) dt` on
//! piecewise-linear paths, and its minimization under endpoint events.

pub mod lbfgs;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::effective::RateModel;
use crate::error::{Error, Result};
use lbfgs::{minimize, LbfgsOptions};

/// Piecewise-linear path on uniform knots over `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePath {
    pub dim: usize,
    pub horizon: f64,
    /// Row-major, `n_seg + 1` rows of `dim`.
    pub knots: Vec<f64>,
}

impl DiscretePath {
    pub fn new(dim: usize, horizon: f64, knots: Vec<f64>) -> Result<Self> {
        if dim == 0 || knots.len() < 2 * dim || knots.len() % dim != 0 {
            return Err(Error::InvalidArgument(
                "path needs at least two knots of matching dimension".into(),
            ));
        }
        if !(horizon > 0.0) {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        Ok(Self {
            dim,
            horizon,
            knots,
        })
    }

    /// Straight line from `a` to `b`.
    pub fn straight(a: &[f64], b: &[f64], horizon: f64, n_seg: usize) -> Result<Self> {
        let knots = (0..=n_seg)
            .flat_map(|i| {
                let s = i as f64 / n_seg as f64;
                a.iter().zip(b).map(move |(ai, bi)| ai + s * (bi - ai))
            })
            .collect();
        Self::new(a.len(), horizon, knots)
    }

    pub fn n_seg(&self) -> usize {
        self.knots.len() / self.dim - 1
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.n_seg() as f64
    }

    pub fn knot(&self, i: usize) -> &[f64] {
        &self.knots[i * self.dim..(i + 1) * self.dim]
    }

    pub fn start(&self) -> &[f64] {
        self.knot(0)
    }

    pub fn end(&self) -> &[f64] {
        self.knot(self.n_seg())
    }

    pub fn segment_velocity(&self, seg: usize) -> Vec<f64> {
        let h = self.step();
        self.knot(seg + 1)
            .iter()
            .zip(self.knot(seg))
            .map(|(b, a)| (b - a) / h)
            .collect()
    }

    /// Index of the segment containing `t` (right-continuous, clamped).
    pub fn segment_of(&self, t: f64) -> usize {
        let s = (t / self.step()).floor();
        if s < 0.0 {
            0
        } else {
            (s as usize).min(self.n_seg() - 1)
        }
    }

    /// Velocity of the segment containing `t` (right-continuous).
    pub fn velocity_at(&self, t: f64) -> Vec<f64> {
        self.segment_velocity(self.segment_of(t))
    }

    pub fn position_at(&self, t: f64) -> Vec<f64> {
        let seg = self.segment_of(t);
        let h = self.step();
        let s = ((t - seg as f64 * h) / h).clamp(0.0, 1.0);
        self.knot(seg)
            .iter()
            .zip(self.knot(seg + 1))
            .map(|(a, b)| a + s * (b - a))
            .collect()
    }

    /// Rows `t, ψ…, ψ̇…` (velocity of the segment starting at t; the last
    /// row repeats the final segment velocity).
    pub fn rows(&self) -> Vec<Vec<f64>> {
        let h = self.step();
        (0..=self.n_seg())
            .map(|i| {
                let mut row = vec![i as f64 * h];
                row.extend_from_slice(self.knot(i));
                row.extend(self.segment_velocity(i.min(self.n_seg() - 1)));
                row
            })
            .collect()
    }
}

/// Value of the discretized rate function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionValue {
    pub total: f64,
    pub per_segment: Vec<f64>,
    /// ∂S/∂knot for knots 1..=n_seg, row-major.
    pub gradient: Vec<f64>,
}

/// Target event at the final time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventSpec {
    /// φ(T) = point.
    Endpoint { point: Vec<f64> },
    /// normal·φ(T) ≥ level.
    HalfSpace { normal: Vec<f64>, level: f64 },
    /// No constraint.
    Whole,
}

impl EventSpec {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            EventSpec::Endpoint { point } => point == x,
            EventSpec::HalfSpace { normal, level } => {
                normal.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() >= *level
            }
            EventSpec::Whole => true,
        }
    }

    /// Slow dimension the event refers to; `None` for the whole space.
    pub fn dim(&self) -> Option<usize> {
        match self {
            EventSpec::Endpoint { point } => Some(point.len()),
            EventSpec::HalfSpace { normal, .. } => Some(normal.len()),
            EventSpec::Whole => None,
        }
    }
}

fn solve_spd(q: &DMatrix<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    q.clone()
        .cholesky()
        .map(|c| c.solve(v))
        .ok_or_else(|| Error::NotSpd("q is not positive definite".into()))
}

/// L(x, v) = ½ (v − r(x))ᵀ q⁻¹(x) (v − r(x)).
pub fn local_rate(x: &[f64], v: &[f64], model: &dyn RateModel) -> Result<f64> {
    let d = DVector::from_column_slice(v) - model.drift(x);
    let p = solve_spd(&model.diffusion(x), &d)?;
    Ok(0.5 * d.dot(&p))
}

/// Midpoint-rule action of a piecewise-linear path with its knot gradient.
pub fn path_action(path: &DiscretePath, model: &dyn RateModel) -> Result<ActionValue> {
    let m = path.dim;
    if model.dim() != m {
        return Err(Error::InvalidArgument(format!(
            "path dimension {m} does not match model dimension {}",
            model.dim()
        )));
    }
    let n = path.n_seg();
    let h = path.step();
    let mut per_segment = Vec::with_capacity(n);
    let mut grad = vec![0.0; n * m];
    for seg in 0..n {
        let a = path.knot(seg);
        let b = path.knot(seg + 1);
        let mid: Vec<f64> = a.iter().zip(b).map(|(u, w)| 0.5 * (u + w)).collect();
        let v = DVector::from_vec(path.segment_velocity(seg));
        let d = v - model.drift(&mid);
        let p = solve_spd(&model.diffusion(&mid), &d)?;
        per_segment.push(0.5 * h * d.dot(&p));

        let (jac, dq) = model.derivatives(&mid);
        // ∂L/∂x_j = −(∂r/∂x_j)·p − ½ pᵀ (∂q/∂x_j) p
        let mut dl_dx = -(jac.transpose() * &p);
        for (j, dqj) in dq.iter().enumerate() {
            dl_dx[j] -= 0.5 * p.dot(&(dqj * &p));
        }
        for j in 0..m {
            let half = 0.5 * h * dl_dx[j];
            if seg > 0 {
                grad[(seg - 1) * m + j] += half - p[j];
            }
            grad[seg * m + j] += half + p[j];
        }
    }
    Ok(ActionValue {
        total: per_segment.iter().sum(),
        per_segment,
        gradient: grad,
    })
}

/// Diagnostics of a minimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizeInfo {
    pub iterations: usize,
    /// Sup-norm of the reduced gradient at the returned path.
    pub grad_inf: f64,
    pub converged: bool,
    /// True when the drift path already realizes the event (S* = 0).
    pub drift_feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimizer {
    pub path: DiscretePath,
    pub value: f64,
    pub info: MinimizeInfo,
}

/// Stationarity target of the path minimizer.
pub const STATIONARITY_TOL: f64 = 1e-8;

/// Knots of the implicit-midpoint solution of φ̇ = r(φ), on which the
/// discretized action vanishes.
pub fn drift_path(
    x0: &[f64],
    horizon: f64,
    model: &dyn RateModel,
    n_seg: usize,
) -> Result<DiscretePath> {
    let m = x0.len();
    let h = horizon / n_seg as f64;
    let mut knots = x0.to_vec();
    let mut cur = DVector::from_column_slice(x0);
    for _ in 0..n_seg {
        // fixed point for k₊ = k + h r((k + k₊)/2)
        let mut next = &cur + model.drift(cur.as_slice()) * h;
        for _ in 0..200 {
            let mid = (&cur + &next) * 0.5;
            let cand = &cur + model.drift(mid.as_slice()) * h;
            let diff = (&cand - &next).amax();
            next = cand;
            if diff <= 1e-15 * (1.0 + next.amax()) {
                break;
            }
        }
        knots.extend(next.iter());
        cur = next;
    }
    debug_assert_eq!(knots.len(), (n_seg + 1) * m);
    DiscretePath::new(m, horizon, knots)
}

/// Orthonormal basis of the complement of `a`.
fn tangent_basis(a: &[f64]) -> Vec<DVector<f64>> {
    let m = a.len();
    let an = DVector::from_column_slice(a).normalize();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(m.saturating_sub(1));
    for k in 0..m {
        let mut e = DVector::zeros(m);
        e[k] = 1.0;
        let mut v = &e - &an * an.dot(&e);
        for b in &basis {
            v -= b * b.dot(&v);
        }
        if v.norm() > 1e-8 && basis.len() + 1 < m {
            basis.push(v.normalize());
        }
    }
    basis
}

/// Minimizes the discretized action from `x0` over paths realizing `event`
/// at time `horizon`. Starts from the straight line to the target (or to the
/// projection of `x0` on the half-space boundary).
pub fn minimize_action(
    x0: &[f64],
    event: &EventSpec,
    horizon: f64,
    model: &dyn RateModel,
    n_seg: usize,
) -> Result<Minimizer> {
    minimize_action_with(x0, event, horizon, model, n_seg, LbfgsOptions::default())
}

pub fn minimize_action_with(
    x0: &[f64],
    event: &EventSpec,
    horizon: f64,
    model: &dyn RateModel,
    n_seg: usize,
    opts: LbfgsOptions,
) -> Result<Minimizer> {
    let m = x0.len();
    if n_seg == 0 {
        return Err(Error::InvalidArgument("n_seg must be positive".into()));
    }
    if model.dim() != m {
        return Err(Error::InvalidArgument("x0 dimension mismatch".into()));
    }
    let drift_feasible_path = || -> Result<Option<Minimizer>> {
        let p = drift_path(x0, horizon, model, n_seg)?;
        if event.contains(p.end()) {
            let value = path_action(&p, model)?.total;
            return Ok(Some(Minimizer {
                path: p,
                value,
                info: MinimizeInfo {
                    iterations: 0,
                    grad_inf: 0.0,
                    converged: true,
                    drift_feasible: true,
                },
            }));
        }
        Ok(None)
    };

    // endpoint = anchor + Σ z_k basis_k
    let (anchor, basis): (DVector<f64>, Vec<DVector<f64>>) = match event {
        EventSpec::Whole => {
            return drift_feasible_path()?
                .ok_or_else(|| Error::InvalidArgument("unreachable".into()));
        }
        EventSpec::Endpoint { point } => {
            if point.len() != m {
                return Err(Error::InvalidArgument("endpoint dimension mismatch".into()));
            }
            (DVector::from_column_slice(point), Vec::new())
        }
        EventSpec::HalfSpace { normal, level } => {
            if normal.len() != m {
                return Err(Error::InvalidArgument("normal dimension mismatch".into()));
            }
            let a = DVector::from_column_slice(normal);
            let an2 = a.norm_squared();
            if !(an2 > 0.0) {
                return Err(Error::InvalidArgument("half-space normal is zero".into()));
            }
            if let Some(found) = drift_feasible_path()? {
                return Ok(found);
            }
            let x = DVector::from_column_slice(x0);
            let proj = &x + &a * ((level - a.dot(&x)) / an2);
            (proj, tangent_basis(normal))
        }
    };

    let interior = (n_seg - 1) * m;
    let nz = basis.len();
    let init = DiscretePath::straight(x0, anchor.as_slice(), horizon, n_seg)?;
    let mut vars: Vec<f64> = init.knots[m..m + interior].to_vec();
    vars.extend(std::iter::repeat_n(0.0, nz));

    let build = |v: &[f64]| -> DiscretePath {
        let mut knots = Vec::with_capacity((n_seg + 1) * m);
        knots.extend_from_slice(x0);
        knots.extend_from_slice(&v[..interior]);
        let mut end = anchor.clone();
        for (k, b) in basis.iter().enumerate() {
            end += b * v[interior + k];
        }
        knots.extend(end.iter());
        DiscretePath {
            dim: m,
            horizon,
            knots,
        }
    };
    let mut failure = None;
    let objective = |v: &[f64]| -> (f64, Vec<f64>) {
        match path_action(&build(v), model) {
            Ok(a) => {
                let mut g = a.gradient[..interior].to_vec();
                let ge = &a.gradient[interior..];
                for b in &basis {
                    g.push(b.iter().zip(ge).map(|(x, y)| x * y).sum());
                }
                (a.total, g)
            }
            Err(e) => {
                failure.get_or_insert(e);
                (f64::INFINITY, vec![0.0; v.len()])
            }
        }
    };
    let res = minimize(objective, &vars, opts);
    if let Some(e) = failure {
        if !res.value.is_finite() {
            return Err(e);
        }
    }
    let path = build(&res.x);
    let value = path_action(&path, model)?.total;
    Ok(Minimizer {
        path,
        value,
        info: MinimizeInfo {
            iterations: res.iterations,
            grad_inf: res.grad_inf,
            converged: res.converged,
            drift_feasible: false,
        },
    })
}
