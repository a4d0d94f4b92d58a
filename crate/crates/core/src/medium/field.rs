//! Trigonometric-polynomial coefficient fields.
//!
//! A field entry is a finite sum of terms
//! `amp * x^pow * trig(2π k·y + phase)` with integer wavevectors `k`, so every
//! entry is 1-periodic in each fast coordinate.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

/// Shape of the y-dependence of a term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    #[default]
    Const,
    Cos,
    Sin,
}

/// One Fourier mode as written in a configuration file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mode {
    pub amp: f64,
    #[serde(default)]
    pub kind: ModeKind,
    /// Integer wavevector; ignored for `const` modes.
    #[serde(default)]
    pub k: Vec<i32>,
}

/// A term of a vector or matrix field, addressed by `index` (`[i]` or `[i, j]`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub index: Vec<usize>,
    pub amp: f64,
    #[serde(default)]
    pub kind: ModeKind,
    #[serde(default)]
    pub k: Vec<i32>,
    /// Exponents of the slow variables multiplying the mode; empty means 1.
    #[serde(default)]
    pub x_pow: Vec<u32>,
}

impl TermSpec {
    pub fn new(index: &[usize], amp: f64, kind: ModeKind, k: &[i32]) -> Self {
        Self {
            index: index.to_vec(),
            amp,
            kind,
            k: k.to_vec(),
            x_pow: Vec::new(),
        }
    }

    pub fn constant(index: &[usize], amp: f64) -> Self {
        Self::new(index, amp, ModeKind::Const, &[])
    }

    pub fn with_x_pow(mut self, pow: &[u32]) -> Self {
        self.x_pow = pow.to_vec();
        self
    }

    pub fn mode(&self) -> Mode {
        Mode {
            amp: self.amp,
            kind: self.kind,
            k: self.k.clone(),
        }
    }
}

/// A resolved term with its phase fixed by the medium realization.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub amp: f64,
    pub kind: ModeKind,
    pub k: Vec<f64>,
    pub phase: f64,
    pub x_pow: Vec<u32>,
}

impl Term {
    #[inline]
    fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut v = self.amp;
        for (xi, &p) in x.iter().zip(&self.x_pow) {
            match p {
                0 => {}
                1 => v *= xi,
                2 => v *= xi * xi,
                _ => v *= xi.powi(p as i32),
            }
        }
        match self.kind {
            ModeKind::Const => v,
            ModeKind::Cos => v * self.angle(y).cos(),
            ModeKind::Sin => v * self.angle(y).sin(),
        }
    }

    #[inline]
    fn angle(&self, y: &[f64]) -> f64 {
        let mut a = self.phase;
        for (ki, yi) in self.k.iter().zip(y) {
            a += TAU * ki * yi;
        }
        a
    }

    fn depends_on_x(&self) -> bool {
        self.x_pow.iter().any(|&p| p > 0)
    }

    /// Partial derivative in `y_j`, as a single term.
    fn dy(&self, j: usize) -> Option<Term> {
        let kj = self.k.get(j).copied().unwrap_or(0.0);
        if kj == 0.0 || self.kind == ModeKind::Const {
            return None;
        }
        let (amp, kind) = match self.kind {
            ModeKind::Cos => (-self.amp * TAU * kj, ModeKind::Sin),
            ModeKind::Sin => (self.amp * TAU * kj, ModeKind::Cos),
            ModeKind::Const => unreachable!(),
        };
        Some(Term {
            amp,
            kind,
            ..self.clone()
        })
    }
}

/// Scalar field: a sum of terms.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScalarField {
    pub terms: Vec<Term>,
}

impl ScalarField {
    #[inline]
    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.value(x, y)).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.amp == 0.0)
    }

    /// Field `Σ amp·trig(2π k·y)` of the given modes, with zero phases.
    pub fn from_modes(modes: &[Mode]) -> Self {
        ScalarField {
            terms: modes
                .iter()
                .map(|m| Term {
                    amp: m.amp,
                    kind: m.kind,
                    k: m.k.iter().map(|&v| v as f64).collect(),
                    phase: 0.0,
                    x_pow: Vec::new(),
                })
                .collect(),
        }
    }

    /// True when the field does not vary with `y`.
    pub fn is_y_constant(&self) -> bool {
        self.terms
            .iter()
            .all(|t| t.kind == ModeKind::Const || t.amp == 0.0 || t.k.iter().all(|&k| k == 0.0))
    }

    pub fn depends_on_x(&self) -> bool {
        self.terms.iter().any(Term::depends_on_x)
    }

    pub fn dy(&self, j: usize) -> ScalarField {
        ScalarField {
            terms: self.terms.iter().filter_map(|t| t.dy(j)).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> ScalarField {
        ScalarField {
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    amp: t.amp * s,
                    ..t.clone()
                })
                .collect(),
        }
    }

    pub fn push_constant(&mut self, amp: f64) {
        self.terms.push(Term {
            amp,
            kind: ModeKind::Const,
            k: Vec::new(),
            phase: 0.0,
            x_pow: Vec::new(),
        });
    }

    /// Sup of |value| bounded by the sum of |amp| (valid for x-independent fields).
    pub fn amplitude_bound(&self) -> f64 {
        self.terms.iter().map(|t| t.amp.abs()).sum()
    }
}

/// Row-major matrix of scalar fields; vectors are single-column matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixField {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<ScalarField>,
}

impl MatrixField {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: vec![ScalarField::default(); rows * cols],
        }
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> &ScalarField {
        &self.entries[i * self.cols + j]
    }

    #[inline]
    pub fn entry_mut(&mut self, i: usize, j: usize) -> &mut ScalarField {
        &mut self.entries[i * self.cols + j]
    }

    /// Writes the field values row-major into `out`.
    #[inline]
    pub fn eval_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.entries) {
            *o = e.value(x, y);
        }
    }

    /// Indices of entries that vary with x or y.
    pub fn varying_entries(&self) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| {
                let e = &self.entries[i];
                e.depends_on_x() || !e.is_y_constant()
            })
            .collect()
    }

    /// Like `eval_into`, restricted to the listed entries.
    #[inline]
    pub fn eval_entries_into(&self, x: &[f64], y: &[f64], idx: &[usize], out: &mut [f64]) {
        for &i in idx {
            out[i] = self.entries[i].value(x, y);
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        self.eval_into(x, y, &mut out);
        out
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(ScalarField::is_zero)
    }

    pub fn is_y_constant(&self) -> bool {
        self.entries.iter().all(ScalarField::is_y_constant)
    }

    pub fn depends_on_x(&self) -> bool {
        self.entries.iter().any(ScalarField::depends_on_x)
    }
}
