//! Neumann-Laplacian eigenbasis on the unit interval.
//!
//! The operator `A = -Δ` with homogeneous Neumann conditions on `(0, 1)`,
//! restricted to mean-zero functions, has eigenpairs
//! `e_j(x) = √2 cos(jπx)`, `λ_j = (jπ)²` for `j ≥ 1`. Every linear operator
//! used by the scheme (fractional powers, the semigroup `e^{-tA²}`, the
//! backward Euler resolvent) is diagonal in this basis, so fields are stored
//! as coefficient vectors and the only non-diagonal work is the collocation
//! transform used to evaluate the cubic nonlinearity.
//!
//! Collocation uses the midpoint grid `x_k = (k + ½)/G`. On that grid
//! `Σ_k cos(mπx_k) = 0` for every integer `0 < m < 2G`, so the discrete inner
//! product of a degree-`K` cosine polynomial with a test mode `j` is exact
//! whenever `K + j < 2G`.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};
use crate::linalg::dot;

/// `λ_j = (jπ)²` for the 1-based mode index `j`.
#[inline]
pub fn eigenvalue(j: usize) -> f64 {
    let k = j as f64 * PI;
    k * k
}

#[derive(Debug, Clone)]
pub struct Basis {
    n: usize,
    lambdas: Vec<f64>,
    grid: Vec<f64>,
    /// G × N, row-major: `synthesis[k*N + (j-1)] = e_j(x_k)`.
    synthesis: Vec<f64>,
    /// N × G, row-major: `analysis[(j-1)*G + k] = e_j(x_k) / G`.
    analysis: Vec<f64>,
}

impl Basis {
    /// Builds the first `n` modes with a collocation grid of
    /// `ceil(dealias_factor · n)` midpoints.
    pub fn new(n: usize, dealias_factor: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("mode count N must be at least 1".into()));
        }
        if !(dealias_factor.is_finite() && dealias_factor >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "dealias factor must be finite and >= 1, got {dealias_factor}"
            )));
        }
        // Guard against 2.0000000001 * n rounding up an extra point.
        let g = ((dealias_factor * n as f64) - 1e-9).ceil().max(n as f64 + 1.0) as usize;
        Ok(Self::with_grid_size(n, g))
    }

    /// Builds the basis on an explicit grid size `g > n`.
    pub fn with_grid_size(n: usize, g: usize) -> Self {
        assert!(n >= 1 && g > n, "grid size must exceed the mode count");
        let lambdas: Vec<f64> = (1..=n).map(eigenvalue).collect();
        let grid: Vec<f64> = (0..g).map(|k| (k as f64 + 0.5) / g as f64).collect();
        let mut synthesis = vec![0.0; g * n];
        let mut analysis = vec![0.0; n * g];
        let w = 1.0 / g as f64;
        for (k, &x) in grid.iter().enumerate() {
            for j in 1..=n {
                let v = SQRT_2 * (j as f64 * PI * x).cos();
                synthesis[k * n + j - 1] = v;
                analysis[(j - 1) * g + k] = v * w;
            }
        }
        Self {
            n,
            lambdas,
            grid,
            synthesis,
            analysis,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn grid_size(&self) -> usize {
        self.grid.len()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Quadrature weight of every node (uniform).
    pub fn weight(&self) -> f64 {
        1.0 / self.grid.len() as f64
    }

    /// Largest mode index `K` such that products up to total frequency `K`
    /// against any retained test mode are integrated exactly.
    pub fn exact_frequency(&self) -> usize {
        2 * self.grid.len() - 1 - self.n
    }

    /// Point values on the grid. Missing trailing coefficients count as zero.
    pub fn to_physical(&self, field: &SpectralField) -> Result<PhysicalField> {
        let mut values = vec![0.0; self.grid_size()];
        self.synthesize_into(field.coeffs(), &mut values)?;
        Ok(PhysicalField { values })
    }

    /// Applies `P_N P`: drops the mean and every mode above `N`.
    pub fn to_spectral(&self, phys: &PhysicalField) -> Result<SpectralField> {
        let mut coeffs = vec![0.0; self.n];
        self.analyze_into(phys.values(), &mut coeffs)?;
        Ok(SpectralField::from_coeffs(coeffs))
    }

    pub fn synthesize_into(&self, coeffs: &[f64], out: &mut [f64]) -> Result<()> {
        if coeffs.len() > self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: coeffs.len(),
            });
        }
        if out.len() != self.grid_size() {
            return Err(Error::DimensionMismatch {
                expected: self.grid_size(),
                got: out.len(),
            });
        }
        let m = coeffs.len();
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.synthesis[k * self.n..k * self.n + m];
            *o = dot(row, coeffs);
        }
        Ok(())
    }

    pub fn analyze_into(&self, values: &[f64], out: &mut [f64]) -> Result<()> {
        let g = self.grid_size();
        if values.len() != g {
            return Err(Error::DimensionMismatch {
                expected: g,
                got: values.len(),
            });
        }
        if out.len() > self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: out.len(),
            });
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o = dot(&self.analysis[j * g..(j + 1) * g], values);
        }
        Ok(())
    }

    /// Pointwise evaluation `Σ_j v_j e_j(x)` at an arbitrary `x`.
    pub fn evaluate_at(&self, field: &SpectralField, x: f64) -> f64 {
        field
            .coeffs()
            .iter()
            .enumerate()
            .map(|(i, c)| c * SQRT_2 * ((i + 1) as f64 * PI * x).cos())
            .sum()
    }

    /// Row `k` of the synthesis matrix, `e_j(x_k)` for `j = 1..=N`.
    pub(crate) fn synthesis_row(&self, k: usize) -> &[f64] {
        &self.synthesis[k * self.n..(k + 1) * self.n]
    }
}

/// A mean-zero function stored by its first `N` eigen-coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn zeros(n: usize) -> Self {
        Self { coeffs: vec![0.0; n] }
    }

    pub fn from_coeffs(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    /// Unit coefficient on mode `j` (1-based) in an `n`-mode field.
    pub fn unit(n: usize, j: usize) -> Self {
        assert!(j >= 1 && j <= n, "mode {j} outside 1..={n}");
        let mut f = Self::zeros(n);
        f.coeffs[j - 1] = 1.0;
        f
    }

    pub fn n(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Coefficient of mode `j` (1-based); zero past the stored length.
    pub fn mode(&self, j: usize) -> f64 {
        self.coeffs.get(j.wrapping_sub(1)).copied().unwrap_or(0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    pub fn ensure_finite(&self, what: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    /// `P_N` onto the first `n` modes (zero-padded when growing).
    pub fn truncated(&self, n: usize) -> Self {
        let mut coeffs = vec![0.0; n];
        let m = n.min(self.coeffs.len());
        coeffs[..m].copy_from_slice(&self.coeffs[..m]);
        Self { coeffs }
    }

    fn scaled_by(&self, factor: impl Fn(f64) -> f64) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c * factor(eigenvalue(i + 1)))
            .collect();
        Self { coeffs }
    }

    /// `A^α v = Σ λ_j^α ⟨v, e_j⟩ e_j`.
    pub fn fractional_power(&self, alpha: f64) -> Self {
        if alpha == 0.0 {
            return self.clone();
        }
        self.scaled_by(|l| l.powf(alpha))
    }

    /// `|v|_α = (Σ λ_j^α v_j²)^{1/2}`.
    pub fn sobolev_norm(&self, alpha: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let w = if alpha == 0.0 {
                    1.0
                } else {
                    eigenvalue(i + 1).powf(alpha)
                };
                w * c * c
            })
            .sum::<f64>()
            .sqrt()
    }

    /// `E(t) v = e^{-tA²} v`.
    pub fn semigroup(&self, t: f64) -> Result<Self> {
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(format!("semigroup time must be >= 0, got {t}")));
        }
        Ok(self.scaled_by(|l| (-t * l * l).exp()))
    }

    /// `E_{τ,N}^m v = (I + τA²)^{-m} v`.
    pub fn discrete_semigroup(&self, tau: f64, m: u32) -> Result<Self> {
        if !(tau > 0.0) || m == 0 {
            return Err(Error::InvalidArgument(format!(
                "discrete semigroup needs tau > 0 and m >= 1, got tau={tau}, m={m}"
            )));
        }
        Ok(self.scaled_by(|l| discrete_factor(tau, l, m)))
    }

    /// `Ψ(t) v = (E(t) − E_{τ,N}^k) v` for `t ∈ [(k−1)τ, kτ)`.
    pub fn error_operator(&self, t: f64, tau: f64, k: u32) -> Result<Self> {
        check_error_operator_args(t, tau, k)?;
        Ok(self.scaled_by(|l| error_operator_factor(t, tau, k, l)))
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// `|self − other|₀`, padding the shorter field with zeros.
    pub fn distance(&self, other: &Self) -> f64 {
        let n = self.n().max(other.n());
        (1..=n)
            .map(|j| {
                let d = self.mode(j) - other.mode(j);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn add_scaled(&mut self, s: f64, other: &Self) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += s * b;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalField {
    values: Vec<f64>,
}

impl PhysicalField {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn from_fn(basis: &Basis, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: basis.grid().iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `‖v‖` by midpoint quadrature.
    pub fn l2_norm(&self) -> f64 {
        let g = self.values.len() as f64;
        (self.values.iter().map(|v| v * v).sum::<f64>() / g).sqrt()
    }

    /// Grid sup-norm, standing in for `‖·‖_V`.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Per-mode factor `(1 + τλ²)^{-m}`.
#[inline]
pub fn discrete_factor(tau: f64, lambda: f64, m: u32) -> f64 {
    (1.0 + tau * lambda * lambda).powi(-(m as i32))
}

/// Per-mode factor `e^{-tλ²} − (1 + τλ²)^{-k}`.
#[inline]
pub fn error_operator_factor(t: f64, tau: f64, k: u32, lambda: f64) -> f64 {
    let mu = lambda * lambda;
    let log_resolvent = k as f64 * (tau * mu).ln_1p();
    let d = t * mu - log_resolvent;
    if d.abs() < 1.0 {
        // e^{-tμ}(1 − e^{d}) keeps full relative accuracy when the two terms
        // nearly cancel.
        -(-t * mu).exp() * d.exp_m1()
    } else {
        (-t * mu).exp() - (-log_resolvent).exp()
    }
}

fn check_error_operator_args(t: f64, tau: f64, k: u32) -> Result<()> {
    if !(tau > 0.0) || k == 0 {
        return Err(Error::InvalidArgument(format!("need tau > 0 and k >= 1, got tau={tau}, k={k}")));
    }
    let lo = (k - 1) as f64 * tau;
    let hi = k as f64 * tau;
    if !(t >= lo - 1e-12 * hi && t < hi) {
        return Err(Error::InvalidArgument(format!(
            "t = {t} is not in [{lo}, {hi}) for step k = {k}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn eigenvalues() {
        let b = Basis::new(1, 2.0).unwrap();
        assert!(close(b.lambdas()[0], 9.869_604_401_089_358, 1e-12));
        let b = Basis::new(3, 2.0).unwrap();
        let pi2 = PI * PI;
        assert_eq!(b.lambdas(), &[pi2, 4.0 * pi2, 9.0 * pi2]);
        assert!(b.lambdas().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(Basis::new(8, 2.0).unwrap().grid_size(), 16);
        assert!(Basis::new(0, 2.0).is_err());
    }

    #[test]
    fn gram_matrix_is_identity() {
        let b = Basis::new(16, 2.0).unwrap();
        for i in 1..=16 {
            let ei = b.to_physical(&SpectralField::unit(16, i)).unwrap();
            let proj = b.to_spectral(&ei).unwrap();
            for j in 1..=16 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((proj.mode(j) - want).abs() < 1e-10, "({i},{j})");
            }
        }
    }

    #[test]
    fn physical_values() {
        let b = Basis::new(4, 2.0).unwrap();
        let z = b.to_physical(&SpectralField::zeros(4)).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
        let e1 = SpectralField::unit(4, 1);
        assert_eq!(b.evaluate_at(&e1, 0.0), SQRT_2);
        let row = b.synthesis_row(0);
        assert!(close(row[0], b.evaluate_at(&e1, b.grid()[0]), 1e-15));
        assert!(b.to_physical(&SpectralField::zeros(5)).is_err());
        assert!(b.to_spectral(&PhysicalField::new(vec![0.0; 3])).is_err());
    }

    #[test]
    fn projection_drops_mean_and_high_modes() {
        let b = Basis::new(6, 2.0).unwrap();
        let c = b.to_spectral(&PhysicalField::from_fn(&b, |_| 3.7)).unwrap();
        assert!(c.coeffs().iter().all(|v| v.abs() < 1e-14));
        let e2 = PhysicalField::from_fn(&b, |x| SQRT_2 * (2.0 * PI * x).cos());
        let c = b.to_spectral(&e2).unwrap();
        for j in 1..=6 {
            let want = if j == 2 { 1.0 } else { 0.0 };
            assert!((c.mode(j) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn cube_of_first_mode() {
        // cos³θ = (3cosθ + cos3θ)/4  =>  e_1³ = 3/2 e_1 + 1/2 e_3
        let b = Basis::new(5, 2.25).unwrap();
        let cube = PhysicalField::from_fn(&b, |x| (SQRT_2 * (PI * x).cos()).powi(3));
        let c = b.to_spectral(&cube).unwrap();
        assert!(close(c.mode(1), 1.5, 1e-13));
        assert!(close(c.mode(3), 0.5, 1e-13));
        for j in [2, 4, 5] {
            assert!(c.mode(j).abs() < 1e-13);
        }
        // independent check by fine midpoint quadrature
        let g = 4000;
        let q: f64 = (0..g)
            .map(|k| {
                let x = (k as f64 + 0.5) / g as f64;
                (SQRT_2 * (PI * x).cos()).powi(3) * SQRT_2 * (3.0 * PI * x).cos()
            })
            .sum::<f64>()
            / g as f64;
        assert!(close(q, 0.5, 1e-12));
    }

    #[test]
    fn round_trip() {
        let b = Basis::new(12, 2.0).unwrap();
        let f = SpectralField::from_coeffs((1..=12).map(|j| 1.0 / j as f64 - 0.3).collect());
        let back = b.to_spectral(&b.to_physical(&f).unwrap()).unwrap();
        assert!(f.distance(&back) < 1e-12);
    }

    #[test]
    fn parseval() {
        let b = Basis::new(10, 2.0).unwrap();
        let f = SpectralField::from_coeffs((1..=10).map(|j| (j as f64).sin()).collect());
        let phys = b.to_physical(&f).unwrap();
        assert!((phys.l2_norm() - f.sobolev_norm(0.0)).abs() < 1e-10);
    }

    #[test]
    fn fractional_powers() {
        let e1 = SpectralField::unit(3, 1);
        assert_eq!(e1.fractional_power(0.0), e1);
        assert!(close(e1.fractional_power(1.0).mode(1), PI * PI, 1e-15));
        let f = SpectralField::from_coeffs(vec![0.3, -1.2, 2.5, 0.01]);
        let g = f.fractional_power(-0.5).fractional_power(0.5);
        assert!(f.distance(&g) < 1e-13);
    }

    #[test]
    fn norms() {
        let e1 = SpectralField::unit(2, 1);
        assert!(close(e1.sobolev_norm(2.0), PI * PI, 1e-15));
        let f = SpectralField::from_coeffs(vec![3.0, 4.0]);
        assert_eq!(f.sobolev_norm(0.0), 5.0);
        let e2 = SpectralField::unit(2, 2);
        assert!(close(e2.sobolev_norm(-1.0), 1.0 / (4.0 * PI * PI).sqrt(), 1e-15));
    }

    #[test]
    fn semigroups() {
        let e1 = SpectralField::unit(1, 1);
        assert_eq!(e1.semigroup(0.0).unwrap(), e1);
        // exp(-0.01 π⁴), 30-digit reference value
        let v = e1.semigroup(0.01).unwrap().mode(1);
        assert!((v - 0.377_535_411_143_025_88).abs() < 1e-15, "{v}");
        assert!(e1.semigroup(-1.0).is_err());
        let f = SpectralField::from_coeffs(vec![1.0, 0.5, -0.25]);
        let a = f.semigroup(0.001).unwrap().semigroup(0.002).unwrap();
        let b = f.semigroup(0.003).unwrap();
        assert!(a.distance(&b) < 1e-13);

        // 1/(1 + 0.01 π⁴), 30-digit reference value
        let d = e1.discrete_semigroup(0.01, 1).unwrap().mode(1);
        assert!((d - 0.506_562_283_814_860_62).abs() < 1e-15, "{d}");
        assert!(e1.discrete_semigroup(0.0, 1).is_err());
        assert!(e1.discrete_semigroup(0.1, 0).is_err());
        let mut prev = 1.0;
        for m in 1..50 {
            let c = e1.discrete_semigroup(0.01, m).unwrap().mode(1);
            assert!(c < prev);
            prev = c;
        }
    }

    #[test]
    fn error_operator_domain() {
        let f = SpectralField::from_coeffs(vec![1.0, 2.0]);
        assert!(f.error_operator(0.15, 0.1, 2).is_ok());
        assert!(f.error_operator(0.1, 0.1, 2).is_ok());
        assert!(f.error_operator(0.2, 0.1, 2).is_err());
        assert!(f.error_operator(0.05, 0.1, 2).is_err());
        let z = SpectralField::zeros(3).error_operator(0.0, 0.1, 1).unwrap();
        assert!(z.coeffs().iter().all(|&c| c == 0.0));
    }
}
