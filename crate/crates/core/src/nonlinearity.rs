//! The cubic Nemytskii operator `F(v) = v³ − v` and the drift `A P_N F`.
//!
//! The cubic is formed pointwise on the collocation grid and projected back.
//! A grid of at least `2N + 1` midpoints integrates `v³ e_j` exactly for
//! `v` in the span of the first `N` modes, so the projection is alias-free.
//! The linear part `−v` never leaves coefficient space.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::spectral::{eigenvalue, Basis, SpectralField};

/// Evaluator with scratch buffers; one per worker thread.
#[derive(Debug, Clone)]
pub struct NemytskiiEval {
    basis: Arc<Basis>,
    phys: Vec<f64>,
    work: Vec<f64>,
    sup: f64,
}

impl NemytskiiEval {
    pub fn new(basis: Arc<Basis>) -> Result<Self> {
        let n = basis.n();
        if basis.grid_size() < 2 * n + 1 {
            return Err(Error::InvalidArgument(format!(
                "grid of {} points aliases the cubic for N = {n}; need at least {}",
                basis.grid_size(),
                2 * n + 1
            )));
        }
        let g = basis.grid_size();
        Ok(Self {
            basis,
            phys: vec![0.0; g],
            work: vec![0.0; g],
            sup: 0.0,
        })
    }

    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    pub fn n(&self) -> usize {
        self.basis.n()
    }

    /// Grid sup-norm of the argument of the most recent evaluation.
    pub fn last_sup_norm(&self) -> f64 {
        self.sup
    }

    fn load(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: v.len(),
            });
        }
        self.basis.synthesize_into(v, &mut self.phys)?;
        self.sup = self.phys.iter().fold(0.0, |m, x| m.max(x.abs()));
        Ok(())
    }

    /// `out = P_N (v³)`.
    pub fn cubic_into(&mut self, v: &[f64], out: &mut [f64]) -> Result<()> {
        self.load(v)?;
        for (w, p) in self.work.iter_mut().zip(&self.phys) {
            *w = p * p * p;
        }
        self.basis.analyze_into(&self.work, out)
    }

    /// `out = P_N P (v³ − v)`.
    pub fn f_into(&mut self, v: &[f64], out: &mut [f64]) -> Result<()> {
        self.cubic_into(v, out)?;
        for (o, x) in out.iter_mut().zip(v) {
            *o -= x;
        }
        Ok(())
    }

    /// `out = P_N P ((3v² − 1) y)`.
    pub fn f_prime_into(&mut self, v: &[f64], y: &[f64], out: &mut [f64]) -> Result<()> {
        if y.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: y.len(),
            });
        }
        self.load(v)?;
        self.basis.synthesize_into(y, &mut self.work)?;
        for (w, p) in self.work.iter_mut().zip(&self.phys) {
            *w *= 3.0 * p * p;
        }
        self.basis.analyze_into(&self.work, out)?;
        for (o, x) in out.iter_mut().zip(y) {
            *o -= x;
        }
        Ok(())
    }

    /// `out = A P_N F(v)`.
    pub fn drift_into(&mut self, v: &[f64], out: &mut [f64]) -> Result<()> {
        self.f_into(v, out)?;
        for (j, o) in out.iter_mut().enumerate() {
            *o *= eigenvalue(j + 1);
        }
        Ok(())
    }

    pub fn apply_f(&mut self, v: &SpectralField) -> Result<SpectralField> {
        v.ensure_finite("F argument")?;
        let v = v.truncated(self.n());
        let mut out = vec![0.0; self.n()];
        self.f_into(v.coeffs(), &mut out)?;
        Ok(SpectralField::from_coeffs(out))
    }

    pub fn apply_f_prime(&mut self, v: &SpectralField, y: &SpectralField) -> Result<SpectralField> {
        v.ensure_finite("F' base point")?;
        y.ensure_finite("F' direction")?;
        let (v, y) = (v.truncated(self.n()), y.truncated(self.n()));
        let mut out = vec![0.0; self.n()];
        self.f_prime_into(v.coeffs(), y.coeffs(), &mut out)?;
        Ok(SpectralField::from_coeffs(out))
    }

    pub fn apply_drift(&mut self, v: &SpectralField) -> Result<SpectralField> {
        Ok(self.apply_f(v)?.fractional_power(1.0))
    }

    /// Galerkin matrix of multiplication by `3v²`:
    /// `M[j,k] = ⟨3v² e_k, e_j⟩`, symmetric positive semi-definite.
    pub fn cubic_jacobian(&mut self, v: &[f64]) -> Result<DMatrix<f64>> {
        self.load(v)?;
        let n = self.n();
        let g = self.basis.grid_size();
        let w = self.basis.weight();
        // Scaled synthesis rows: r_k = sqrt(3 w) |v(x_k)| e(x_k), M = Σ_k r_k r_kᵀ.
        let mut rows = DMatrix::<f64>::zeros(g, n);
        for k in 0..g {
            let s = (3.0 * w).sqrt() * self.phys[k].abs();
            for (c, e) in self.basis.synthesis_row(k).iter().enumerate() {
                rows[(k, c)] = s * e;
            }
        }
        Ok(rows.transpose() * rows)
    }

    /// `∫ (v⁴/4 − v²/2) dx` by grid quadrature (exact for `N`-mode fields
    /// when the grid has more than `2N` points).
    pub fn potential(&mut self, v: &[f64]) -> Result<f64> {
        self.load(v)?;
        let quartic: f64 = self.phys.iter().map(|p| p * p * p * p).sum::<f64>() * self.basis.weight();
        Ok(0.25 * quartic - 0.5 * dot(v, v))
    }
}
