//! Monte Carlo estimation of weak and strong discretization errors.
//!
//! The exact solution is not available, so every estimator measures
//! self-convergence: each sample path is integrated once at the reference
//! resolution and at every tested level, all driven by one [`NoiseTable`]
//! (common random numbers). The reference path is simulated once per sample
//! and reused by every level.
//!
//! Paths run in parallel into pre-indexed slots; reductions are serial
//! pairwise sums, so reports do not depend on the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::integrator::{simulate_linear_exact, Simulator};
use crate::model::ModelConfig;
use crate::noise::NoiseTable;
use crate::rng::derive_seed;
use crate::spectral::{eigenvalue, SpectralField};
use crate::stats::{mean_estimate, rms_estimate, MeanEstimate};

/// A smooth test functional with bounded first and second derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunctional {
    /// `Φ(x) = exp(−|x|₀² / σ²)`.
    GaussExp { sigma: f64 },
    /// `Φ(x) = cos⟨x, ψ⟩`, with `ψ` given as sparse `(mode, coefficient)`.
    CosinePairing { psi: Vec<(usize, f64)> },
}

impl Default for TestFunctional {
    fn default() -> Self {
        TestFunctional::GaussExp { sigma: 1.0 }
    }
}

impl TestFunctional {
    pub fn validate(&self) -> Result<()> {
        match self {
            TestFunctional::GaussExp { sigma } if !(sigma.is_finite() && *sigma > 0.0) => {
                Err(Error::Config(format!("gauss_exp sigma must be positive, got {sigma}")))
            }
            TestFunctional::CosinePairing { psi } if psi.iter().any(|(j, c)| *j == 0 || !c.is_finite()) => {
                Err(Error::Config("cosine_pairing direction must use modes >= 1 with finite coefficients".into()))
            }
            _ => Ok(()),
        }
    }

    fn psi_dot(psi: &[(usize, f64)], x: &SpectralField) -> f64 {
        psi.iter().map(|&(j, c)| c * x.mode(j)).sum()
    }

    fn psi_norm(psi: &[(usize, f64)]) -> f64 {
        let n = psi.iter().map(|p| p.0).max().unwrap_or(0);
        let mut dense = vec![0.0; n];
        for &(j, c) in psi {
            dense[j - 1] += c;
        }
        dense.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// `sup ‖Φ′‖`.
    pub fn first_derivative_bound(&self) -> f64 {
        match self {
            TestFunctional::GaussExp { sigma } => std::f64::consts::SQRT_2 / (sigma * 0.5f64.exp()),
            TestFunctional::CosinePairing { psi } => Self::psi_norm(psi),
        }
    }

    /// `sup ‖Φ″‖`.
    pub fn second_derivative_bound(&self) -> f64 {
        match self {
            TestFunctional::GaussExp { sigma } => 2.0 / (sigma * sigma),
            TestFunctional::CosinePairing { psi } => Self::psi_norm(psi).powi(2),
        }
    }

    pub fn evaluate(&self, x: &SpectralField) -> f64 {
        match self {
            TestFunctional::GaussExp { sigma } => (-x.dot(x) / (sigma * sigma)).exp(),
            TestFunctional::CosinePairing { psi } => Self::psi_dot(psi, x).cos(),
        }
    }

    /// `Φ(a) − Φ(b)` without cancellation when `a ≈ b`.
    pub fn difference(&self, a: &SpectralField, b: &SpectralField) -> f64 {
        match self {
            TestFunctional::GaussExp { sigma } => {
                let n = a.n().max(b.n());
                let s2 = sigma * sigma;
                let gap: f64 = (1..=n).map(|j| (a.mode(j) - b.mode(j)) * (a.mode(j) + b.mode(j))).sum();
                (-b.dot(b) / s2).exp() * (-gap / s2).exp_m1()
            }
            TestFunctional::CosinePairing { psi } => {
                let p = Self::psi_dot(psi, a);
                let q = Self::psi_dot(psi, b);
                let d: f64 = psi.iter().map(|&(j, c)| c * (a.mode(j) - b.mode(j))).sum();
                -2.0 * (0.5 * (p + q)).sin() * (0.5 * d).sin()
            }
        }
    }

    /// Fréchet gradient `Φ′(x)` as a coefficient vector of length `x.n()`.
    pub fn gradient(&self, x: &SpectralField) -> SpectralField {
        match self {
            TestFunctional::GaussExp { sigma } => {
                let s2 = sigma * sigma;
                let phi = self.evaluate(x);
                SpectralField::from_coeffs(x.coeffs().iter().map(|c| -2.0 * c / s2 * phi).collect())
            }
            TestFunctional::CosinePairing { psi } => {
                let s = -Self::psi_dot(psi, x).sin();
                let mut g = SpectralField::zeros(x.n());
                for &(j, c) in psi {
                    if j <= x.n() {
                        g.coeffs_mut()[j - 1] += s * c;
                    }
                }
                g
            }
        }
    }
}

/// Which resolution is varied by a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Levels are step counts `M`; `h = τ = T/M`.
    Time,
    /// Levels are mode counts `N`; `h = 1/N`.
    Space,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub seed: u64,
    pub reference_m: usize,
    pub reference_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub axis: Axis,
    pub grid: Vec<usize>,
    pub h: Vec<f64>,
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    #[serde(rename = "K")]
    pub k: usize,
    pub coupling: Coupling,
    /// Closed-form expected values, where a study has them.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub oracle: Option<Vec<f64>>,
}

impl ErrorReport {
    /// Fit points `(h, |estimate|, std_error)`.
    pub fn points(&self) -> Vec<RatePoint> {
        self.h
            .iter()
            .zip(&self.estimates)
            .zip(&self.std_errors)
            .map(|((&h, &error), &se)| RatePoint {
                h,
                error: error.abs(),
                std_error: Some(se),
            })
            .collect()
    }

    /// CSV with header `level,estimate,std_error,K`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("level,estimate,std_error,K\n");
        for i in 0..self.grid.len() {
            s.push_str(&format!(
                "{},{:e},{:e},{}\n",
                self.grid[i], self.estimates[i], self.std_errors[i], self.k
            ));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub h: f64,
    pub error: f64,
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// 95% half-width on the slope; absent with only two points.
    pub ci95: Option<f64>,
    /// Root-mean-square residual of the log-log fit.
    pub residual: f64,
    /// Indices of points dropped as indistinguishable from zero.
    pub excluded_points: Vec<usize>,
    pub used_points: usize,
}

/// Least-squares slope of `log error` against `log h`.
///
/// Points with `error ≤ 2·std_error` (or non-positive `h`/`error`) are
/// excluded and reported; fewer than two survivors is [`Error::NoSignal`].
pub fn fit_rate(points: &[RatePoint], weights: Option<&[f64]>) -> Result<RateFit> {
    if let Some(w) = weights {
        if w.len() != points.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: w.len(),
            });
        }
    }
    let mut excluded = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ws = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let floor = 2.0 * p.std_error.unwrap_or(0.0);
        if !(p.h > 0.0 && p.error > 0.0 && p.error > floor && p.error.is_finite()) {
            excluded.push(i);
            continue;
        }
        xs.push(p.h.ln());
        ys.push(p.error.ln());
        ws.push(weights.map_or(1.0, |w| w[i]));
    }
    if xs.len() < 2 {
        return Err(Error::NoSignal {
            excluded: excluded.len(),
        });
    }
    let wsum: f64 = ws.iter().sum();
    let xbar = xs.iter().zip(&ws).map(|(x, w)| x * w).sum::<f64>() / wsum;
    let ybar = ys.iter().zip(&ws).map(|(y, w)| y * w).sum::<f64>() / wsum;
    let sxx: f64 = xs.iter().zip(&ws).map(|(x, w)| w * (x - xbar).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).zip(&ws).map(|((x, y), w)| w * (x - xbar) * (y - ybar)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidArgument("rate fit needs at least two distinct h".into()));
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ssr: f64 = xs
        .iter()
        .zip(&ys)
        .zip(&ws)
        .map(|((x, y), w)| w * (y - intercept - slope * x).powi(2))
        .sum();
    let n = xs.len();
    let ci95 = if n >= 3 {
        let dof = (n - 2) as f64;
        let se_slope = (ssr / dof / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, dof)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .inverse_cdf(0.975);
        Some(t * se_slope)
    } else {
        None
    };
    Ok(RateFit {
        slope,
        intercept,
        ci95,
        residual: (ssr / wsum).sqrt(),
        excluded_points: excluded,
        used_points: n,
    })
}

/// Runs `f(path)` for `0..k` on `workers` threads; slot `p` holds path `p`.
fn run_paths<T, I, F>(k: usize, workers: usize, init: I, f: F) -> Result<Vec<T>>
where
    T: Send,
    I: Fn() -> Result<Vec<Simulator>> + Sync + Send,
    F: Fn(&mut Vec<Simulator>, usize) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        (0..k)
            .into_par_iter()
            .map_init(init, |sims, p| match sims {
                Ok(s) => f(s, p),
                Err(e) => Err(Error::Config(e.to_string())),
            })
            .collect::<Vec<Result<T>>>()
    })
    .into_iter()
    .collect()
}

fn reduce(per_path: &[Vec<f64>], levels: usize, f: fn(&[f64]) -> MeanEstimate) -> (Vec<f64>, Vec<f64>) {
    let mut column = vec![0.0; per_path.len()];
    (0..levels)
        .map(|l| {
            for (slot, row) in column.iter_mut().zip(per_path) {
                *slot = row[l];
            }
            let m = f(&column);
            (m.mean, m.std_error)
        })
        .unzip()
}

fn path_failure(level: usize, path: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::PathFailure {
        level,
        path,
        source: Box::new(e),
    }
}

/// Parameters shared by every Monte Carlo study.
#[derive(Debug, Clone)]
pub struct StudySetup<'a> {
    pub model: &'a ModelConfig,
    /// Paths `K`.
    pub paths: usize,
    pub seed: u64,
    pub workers: usize,
}

impl StudySetup<'_> {
    /// The noise table driving path `path` of `study`.
    pub fn noise_table(&self, study: &str, path: usize, m_ref: usize, n_ref: usize) -> Result<NoiseTable> {
        let seed = derive_seed(self.seed, study, &[path as u64]);
        NoiseTable::build(seed, self.model.t_end, m_ref, n_ref, self.model.noise)
    }

    fn check(&self) -> Result<()> {
        if self.paths < 2 {
            return Err(Error::Config("need at least two sample paths".into()));
        }
        Ok(())
    }
}

/// Whether the temporal error `τ^{3/4}` stays below a quarter of the
/// spatial error `λ_N^{-3/2}` at the finest tested `N`. Returns the two sides.
pub fn spatial_subdominance(t_end: f64, m: usize, n_list: &[usize]) -> (bool, f64, f64) {
    let n_max = n_list.iter().copied().max().unwrap_or(1);
    let temporal = (t_end / m as f64).powf(0.75);
    let spatial = 0.25 * eigenvalue(n_max).powf(-1.5);
    (temporal <= spatial, temporal, spatial)
}

fn check_time_levels(m_list: &[usize], m_ref: usize) -> Result<()> {
    if m_list.is_empty() {
        return Err(Error::Config("empty level list".into()));
    }
    for &m in m_list {
        if m == 0 || m_ref % m != 0 {
            return Err(Error::Config(format!("M = {m} does not divide M_ref = {m_ref} ({m_ref} mod {m} != 0)")));
        }
    }
    Ok(())
}

fn check_space_levels(n_list: &[usize], n_ref: usize) -> Result<()> {
    if n_list.is_empty() {
        return Err(Error::Config("empty level list".into()));
    }
    for &n in n_list {
        if n == 0 || n > n_ref {
            return Err(Error::Config(format!("N = {n} must be in 1..={n_ref}")));
        }
    }
    Ok(())
}

/// Per-path samples of a temporal study: `measure(reference, level)` per level.
fn temporal_samples(
    setup: &StudySetup,
    study: &str,
    m_list: &[usize],
    m_ref: usize,
    n: usize,
    measure: &(dyn Fn(&SpectralField, &SpectralField) -> f64 + Sync),
) -> Result<Vec<Vec<f64>>> {
    setup.check()?;
    check_time_levels(m_list, m_ref)?;
    let model = setup.model;
    let init = || -> Result<Vec<Simulator>> {
        let mut sims = vec![Simulator::new(model, n, m_ref)?];
        for &m in m_list {
            sims.push(Simulator::new(model, n, m)?);
        }
        Ok(sims)
    };
    // Surface configuration errors before fanning out.
    init()?;
    run_paths(setup.paths, setup.workers, init, |sims, p| {
        let table = setup.noise_table(study, p, m_ref, n)?;
        let fine = table.fine();
        let reference = sims[0].run(&fine, false).map_err(path_failure(m_ref, p))?.state.field;
        let mut out = Vec::with_capacity(m_list.len());
        for (l, &m) in m_list.iter().enumerate() {
            let x = if m == m_ref {
                reference.clone()
            } else {
                let incs = fine.coarsen(m)?;
                sims[l + 1].run(&incs, false).map_err(path_failure(m, p))?.state.field
            };
            out.push(measure(&reference, &x));
        }
        Ok(out)
    })
}

fn spatial_samples(
    setup: &StudySetup,
    study: &str,
    n_list: &[usize],
    n_ref: usize,
    m: usize,
    measure: &(dyn Fn(&SpectralField, &SpectralField) -> f64 + Sync),
) -> Result<Vec<Vec<f64>>> {
    setup.check()?;
    check_space_levels(n_list, n_ref)?;
    let model = setup.model;
    let init = || -> Result<Vec<Simulator>> {
        let mut sims = vec![Simulator::new(model, n_ref, m)?];
        for &n in n_list {
            sims.push(Simulator::new(model, n, m)?);
        }
        Ok(sims)
    };
    init()?;
    run_paths(setup.paths, setup.workers, init, |sims, p| {
        let table = setup.noise_table(study, p, m, n_ref)?;
        let incs = table.fine();
        let reference = sims[0].run(&incs, false).map_err(path_failure(n_ref, p))?.state.field;
        let mut out = Vec::with_capacity(n_list.len());
        for (l, &n) in n_list.iter().enumerate() {
            let x = if n == n_ref {
                reference.clone()
            } else {
                sims[l + 1].run(&incs, false).map_err(path_failure(n, p))?.state.field
            };
            out.push(measure(&reference, &x));
        }
        Ok(out)
    })
}

fn report(
    axis: Axis,
    grid: &[usize],
    t_end: f64,
    per_path: &[Vec<f64>],
    f: fn(&[f64]) -> MeanEstimate,
    coupling: Coupling,
) -> ErrorReport {
    let (estimates, std_errors) = reduce(per_path, grid.len(), f);
    let h = grid
        .iter()
        .map(|&g| match axis {
            Axis::Time => t_end / g as f64,
            Axis::Space => 1.0 / g as f64,
        })
        .collect();
    ErrorReport {
        axis,
        grid: grid.to_vec(),
        h,
        estimates,
        std_errors,
        k: per_path.len(),
        coupling,
        oracle: None,
    }
}

fn squared_distance(a: &SpectralField, b: &SpectralField) -> f64 {
    let d = a.distance(b);
    d * d
}

/// `E[Φ(X_ref) − Φ(X_M)]` per level `M`, reference on `M_ref` steps.
pub fn estimate_weak_error_temporal(
    setup: &StudySetup,
    m_list: &[usize],
    m_ref: usize,
    n: usize,
    phi: &TestFunctional,
) -> Result<ErrorReport> {
    phi.validate()?;
    let measure = |r: &SpectralField, x: &SpectralField| phi.difference(r, x);
    let samples = temporal_samples(setup, "temporal_weak", m_list, m_ref, n, &measure)?;
    let coupling = Coupling {
        seed: setup.seed,
        reference_m: m_ref,
        reference_n: n,
    };
    Ok(report(Axis::Time, m_list, setup.model.t_end, &samples, mean_estimate, coupling))
}

/// `(E|X_ref − X_M|₀²)^{1/2}` per level `M`.
pub fn estimate_strong_error_temporal(setup: &StudySetup, m_list: &[usize], m_ref: usize, n: usize) -> Result<ErrorReport> {
    let samples = temporal_samples(setup, "temporal_strong", m_list, m_ref, n, &squared_distance)?;
    let coupling = Coupling {
        seed: setup.seed,
        reference_m: m_ref,
        reference_n: n,
    };
    Ok(report(Axis::Time, m_list, setup.model.t_end, &samples, rms_estimate, coupling))
}

/// `(E|X_{N_ref} − X_N|₀²)^{1/2}` per level `N`, all on `M` steps.
pub fn estimate_strong_error_spatial(setup: &StudySetup, n_list: &[usize], n_ref: usize, m: usize) -> Result<ErrorReport> {
    let samples = spatial_samples(setup, "spatial_strong", n_list, n_ref, m, &squared_distance)?;
    let coupling = Coupling {
        seed: setup.seed,
        reference_m: m,
        reference_n: n_ref,
    };
    Ok(report(Axis::Space, n_list, setup.model.t_end, &samples, rms_estimate, coupling))
}

/// `E[Φ(X_{N_ref}) − Φ(X_N)]` per level `N`, all on `M` steps.
pub fn estimate_weak_error_spatial(
    setup: &StudySetup,
    n_list: &[usize],
    n_ref: usize,
    m: usize,
    phi: &TestFunctional,
) -> Result<ErrorReport> {
    phi.validate()?;
    let measure = |r: &SpectralField, x: &SpectralField| phi.difference(r, x);
    let samples = spatial_samples(setup, "spatial_weak", n_list, n_ref, m, &measure)?;
    let coupling = Coupling {
        seed: setup.seed,
        reference_m: m,
        reference_n: n_ref,
    };
    Ok(report(Axis::Space, n_list, setup.model.t_end, &samples, mean_estimate, coupling))
}

/// Weak and strong spatial estimates from the same sample paths, for the
/// per-point bound `weak ≤ strong · sup‖Φ′‖ + 2·SE`.
pub fn estimate_spatial_pair(
    setup: &StudySetup,
    n_list: &[usize],
    n_ref: usize,
    m: usize,
    phi: &TestFunctional,
) -> Result<(ErrorReport, ErrorReport)> {
    phi.validate()?;
    setup.check()?;
    check_space_levels(n_list, n_ref)?;
    let mut levels = Vec::with_capacity(2 * n_list.len());
    // Interleave: weak sample then squared distance, per level.
    let measure = |r: &SpectralField, x: &SpectralField| (phi.difference(r, x), squared_distance(r, x));
    let model = setup.model;
    let init = || -> Result<Vec<Simulator>> {
        let mut sims = vec![Simulator::new(model, n_ref, m)?];
        for &n in n_list {
            sims.push(Simulator::new(model, n, m)?);
        }
        Ok(sims)
    };
    init()?;
    let samples = run_paths(setup.paths, setup.workers, init, |sims, p| {
        let table = setup.noise_table("spatial_weak", p, m, n_ref)?;
        let incs = table.fine();
        let reference = sims[0].run(&incs, false).map_err(path_failure(n_ref, p))?.state.field;
        let mut out = Vec::with_capacity(2 * n_list.len());
        for (l, &n) in n_list.iter().enumerate() {
            let x = if n == n_ref {
                reference.clone()
            } else {
                sims[l + 1].run(&incs, false).map_err(path_failure(n, p))?.state.field
            };
            let (w, s) = measure(&reference, &x);
            out.push(w);
            out.push(s);
        }
        Ok(out)
    })?;
    let weak: Vec<Vec<f64>> = samples.iter().map(|r| r.iter().step_by(2).copied().collect()).collect();
    let strong: Vec<Vec<f64>> = samples.iter().map(|r| r.iter().skip(1).step_by(2).copied().collect()).collect();
    levels.extend_from_slice(n_list);
    let coupling = Coupling {
        seed: setup.seed,
        reference_m: m,
        reference_n: n_ref,
    };
    Ok((
        report(Axis::Space, &levels, model.t_end, &weak, mean_estimate, coupling.clone()),
        report(Axis::Space, &levels, model.t_end, &strong, rms_estimate, coupling),
    ))
}

/// Strong error of linear backward Euler against the exact linear solution,
/// both driven by one table at `M_ref` fine steps. The report's `oracle`
/// column holds the closed-form value of each level.
pub fn estimate_linear_strong_error(setup: &StudySetup, m_list: &[usize], m_ref: usize, n: usize) -> Result<ErrorReport> {
    setup.check()?;
    check_time_levels(m_list, m_ref)?;
    let mut model = setup.model.clone();
    model.linear_mode = true;
    model.n = n;
    let init = || -> Result<Vec<Simulator>> {
        m_list.iter().map(|&m| Simulator::new(&model, n, m)).collect()
    };
    init()?;
    let samples = run_paths(setup.paths, setup.workers, init, |sims, p| {
        let table = setup.noise_table("linear_oracle", p, m_ref, n)?;
        let exact = simulate_linear_exact(&model, &table)?;
        let fine = table.fine();
        let mut out = Vec::with_capacity(m_list.len());
        for (l, &m) in m_list.iter().enumerate() {
            let incs = fine.coarsen(m)?;
            let x = sims[l].run(&incs, false).map_err(path_failure(m, p))?.state.field;
            out.push(squared_distance(&exact, &x));
        }
        Ok(out)
    })?;
    let coupling = Coupling {
        seed: setup.seed,
        reference_m: m_ref,
        reference_n: n,
    };
    let mut r = report(Axis::Time, m_list, model.t_end, &samples, rms_estimate, coupling);
    r.oracle = Some(m_list.iter().map(|&m| linear_strong_error_sq(&model, n, m).sqrt()).collect());
    Ok(r)
}

/// `E|X(T) − X_M(T)|₀²` for the linear equation in closed form:
///
/// ```text
/// Σ_j [ (e^{−μ_j T} − R_j^{−M})² x0_j² + q_j Σ_m ∫_{t_{m−1}}^{t_m} (e^{−μ_j(T−s)} − R_j^{−(M−m+1)})² ds ]
/// ```
///
/// with `μ_j = λ_j²`, `R_j = 1 + τμ_j`. Each step integral is evaluated
/// analytically.
pub fn linear_strong_error_sq(model: &ModelConfig, n: usize, m: usize) -> f64 {
    let t_end = model.t_end;
    let tau = t_end / m as f64;
    let x0 = model.initial.field(n);
    let mut total = 0.0;
    for j in 1..=n {
        let mu = eigenvalue(j).powi(2);
        let q = model.noise.variance(j);
        let r = 1.0 + tau * mu;
        let det = (-mu * t_end).exp() - r.powi(-(m as i32));
        let mut noise = 0.0;
        for step in 1..=m {
            let c = r.powi(-((m - step + 1) as i32));
            // s ∈ [t_{m−1}, t_m]; u = T − s ∈ [T − t_m, T − t_{m−1}]
            let u_lo = t_end - step as f64 * tau;
            let e_lo = (-mu * u_lo).exp();
            // ∫ (e^{−μu} − c)² du over [u_lo, u_lo + τ]
            let a = e_lo * e_lo * -(-2.0 * mu * tau).exp_m1() / (2.0 * mu);
            let b = e_lo * -(-mu * tau).exp_m1() / mu;
            noise += (a - 2.0 * c * b + c * c * tau).max(0.0);
        }
        total += det * det * x0.mode(j).powi(2) + q * noise;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law_slope() {
        let pts: Vec<RatePoint> = [0.1, 0.05, 0.025, 0.0125]
            .iter()
            .map(|&h: &f64| RatePoint {
                h,
                error: h * h,
                std_error: None,
            })
            .collect();
        let fit = fit_rate(&pts, None).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!(fit.excluded_points.is_empty());
    }

    #[test]
    fn no_signal() {
        let pts = vec![
            RatePoint {
                h: 0.1,
                error: 1.0,
                std_error: Some(0.1),
            },
            RatePoint {
                h: 0.05,
                error: 0.1,
                std_error: Some(0.2),
            },
        ];
        match fit_rate(&pts, None) {
            Err(Error::NoSignal { excluded }) => assert_eq!(excluded, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn functional_values() {
        let g = TestFunctional::GaussExp { sigma: 1.0 };
        assert_eq!(g.evaluate(&SpectralField::zeros(3)), 1.0);
        let c = TestFunctional::CosinePairing {
            psi: vec![(2, 1.0)],
        };
        assert_eq!(c.evaluate(&SpectralField::unit(3, 1)), 1.0);
        assert!((g.first_derivative_bound() - 2f64.sqrt() / 0.5f64.exp()).abs() < 1e-15);
        assert_eq!(c.second_derivative_bound(), 1.0);
    }

    #[test]
    fn stable_difference_matches_naive() {
        let a = SpectralField::from_coeffs(vec![0.3, -0.2, 0.1]);
        let b = SpectralField::from_coeffs(vec![0.31, -0.2, 0.05, 0.01]);
        for phi in [
            TestFunctional::GaussExp { sigma: 0.7 },
            TestFunctional::CosinePairing {
                psi: vec![(1, 0.5), (3, 2.0)],
            },
        ] {
            let naive = phi.evaluate(&a) - phi.evaluate(&b);
            assert!((phi.difference(&a, &b) - naive).abs() < 1e-14);
        }
    }

    #[test]
    fn level_checks() {
        assert!(check_time_levels(&[24], 2048).is_err());
        assert!(check_time_levels(&[16, 32], 2048).is_ok());
        assert!(check_space_levels(&[4, 130], 128).is_err());
    }
}
