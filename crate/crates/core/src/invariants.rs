//! Property suites run by the `invariants` command and by the test harness.
//!
//! Each check computes an empirical quantity (a constant, a defect, a slope)
//! and compares it to a fixed threshold. Checks never panic; a failure is
//! reported with the offending value.

use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::experiments::{estimate_strong_error_spatial, estimate_weak_error_temporal, StudySetup, TestFunctional};
use crate::integrator::{simulate_path, DefectChecker, SolveMethod, SolverConfig, Stepper};
use crate::model::{ModelConfig, DEFAULT_DEALIAS};
use crate::noise::{NoiseFamily, NoiseTable};
use crate::nonlinearity::NemytskiiEval;
use crate::rng::stream;
use crate::spectral::{discrete_factor, eigenvalue, error_operator_factor, Basis, SpectralField};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub name: &'static str,
    pub passed: bool,
    /// Observed value against the threshold, human-readable.
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantReport {
    pub seed: u64,
    pub checks: Vec<Check>,
    pub passed: usize,
    pub failed: usize,
}

impl InvariantReport {
    pub fn all_passed(&self) -> bool {
        self.failed == 0
    }
}

#[derive(Debug, Clone)]
pub struct InvariantOptions {
    pub seed: u64,
    /// Random pairs for the nonlinearity inequalities.
    pub pairs: usize,
    /// Accepted steps re-verified by the defect census.
    pub census_steps: usize,
    /// Worker counts that must give byte-identical reports.
    pub worker_counts: Vec<usize>,
}

impl Default for InvariantOptions {
    fn default() -> Self {
        Self {
            seed: 20240501,
            pairs: 1000,
            census_steps: 10_000,
            worker_counts: vec![1, 4, 8],
        }
    }
}

fn check(suite: &'static str, name: &'static str, passed: bool, detail: String) -> Check {
    Check {
        suite,
        name,
        passed,
        detail,
    }
}

fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

fn random_field(rng: &mut impl Rng, n: usize, amplitude: f64, decay: f64) -> SpectralField {
    SpectralField::from_coeffs(
        (1..=n)
            .map(|j| amplitude * rng.random_range(-1.0..=1.0) / (j as f64).powf(decay))
            .collect(),
    )
}

/// Least-squares slope of `log y` against `log x`.
fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

pub fn spectral_suite(opts: &InvariantOptions) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut rng = stream(opts.seed, "inv-spectral", &[]);

    // Parseval after a round trip through physical space.
    let mut worst = 0.0f64;
    for &n in &[1usize, 4, 16, 64, 256] {
        let basis = Basis::new(n, DEFAULT_DEALIAS)?;
        for _ in 0..8 {
            let f = random_field(&mut rng, n, 1.0, 0.0);
            let phys = basis.to_physical(&f)?;
            let back = basis.to_spectral(&phys)?;
            worst = worst
                .max((f.sobolev_norm(0.0) - phys.l2_norm()).abs())
                .max(back.distance(&f));
        }
    }
    out.push(check("spectral", "parseval_round_trip", worst <= 1e-10, format!("max deviation {worst:.3e} <= 1e-10")));

    // Per-mode smoothing envelope of the semigroup.
    let mut worst = 0.0f64;
    for mu in 1..=4 {
        let m = mu as f64;
        let c_mu = (m / 4.0).powf(m / 4.0) * (-m / 4.0).exp();
        for j in log_grid(1.0, 256.0, 40).into_iter().map(|x| x.round() as usize) {
            let l = eigenvalue(j);
            for t in log_grid(1e-9, 10.0, 60) {
                let lhs = l.powf(m / 2.0) * (-t * l * l).exp();
                worst = worst.max(lhs / (c_mu * t.powf(-m / 4.0)));
            }
        }
    }
    out.push(check(
        "spectral",
        "smoothing_envelope",
        worst <= 1.0 + 1e-12,
        format!("max ratio to exact envelope {worst:.12} <= 1"),
    ));

    // Discrete stability: the fitted constant must not move when the
    // (j, τ, m) grid is refined.
    let stability_constant = |mu: i32, density: usize| {
        let mut c = 0.0f64;
        let mut ms: Vec<u32> = log_grid(1.0, 1e4, 20 * density).iter().map(|m| m.round() as u32).collect();
        ms.dedup();
        for tau in log_grid(1e-8, 1.0, 20 * density) {
            for j in 1..=64 * density {
                let l = eigenvalue(j);
                for &m in &ms {
                    let t = m as f64 * tau;
                    c = c.max(l.powi(mu) * discrete_factor(tau, l, m) * t.powf(mu as f64 / 2.0));
                }
            }
        }
        c
    };
    let mut drift = 0.0f64;
    let mut constants = Vec::new();
    for mu in 0..=2 {
        let coarse = stability_constant(mu, 1);
        let fine = stability_constant(mu, 2);
        drift = drift.max((fine - coarse).abs() / coarse);
        constants.push(fine);
    }
    out.push(check(
        "spectral",
        "discrete_stability",
        drift <= 0.05,
        format!("constants {constants:.4?}, change under grid doubling {:.3}% <= 5%", 100.0 * drift),
    ));

    // Square-sum bound; the geometric sum equals 1/(2 + τλ²) < 1/2.
    let mut worst = 0.0f64;
    for tau in log_grid(1e-6, 1.0, 25) {
        for j in [1usize, 2, 3, 5, 8, 13, 21, 34, 55, 89, 144, 233] {
            let l = eigenvalue(j);
            let mut s = 0.0;
            for i in 1..=2000u32 {
                s += l * l * discrete_factor(tau, l, 2 * i);
            }
            worst = worst.max(tau * s);
        }
    }
    out.push(check("spectral", "square_sum_bound", worst <= 0.5, format!("max {worst:.6} <= 0.5")));

    // Taylor remainder of the resolvent against the exponential.
    let mut worst = 0.0f64;
    for s in log_grid(1e-4, 1.0, 200) {
        worst = worst.max(((1.0 + s).recip() - (-s).exp()).abs() / (s * s));
    }
    out.push(check("spectral", "resolvent_taylor", worst <= 0.5, format!("empirical C {worst:.6} <= 0.5")));

    // Error operator bounds, sup over t within each step.
    let (mut c_smooth, mut c_plain) = (0.0f64, 0.0f64);
    for tau in log_grid(1e-5, 0.5, 20) {
        for j in [1usize, 2, 4, 8, 16, 32, 64, 128, 256] {
            let l = eigenvalue(j);
            for k in [1u32, 2, 3, 5, 10, 50, 200] {
                for frac in [0.0, 0.1, 0.25, 0.5, 0.75, 0.99] {
                    let t = (k as f64 - 1.0 + frac) * tau;
                    let psi = error_operator_factor(t, tau, k, l).abs();
                    c_smooth = c_smooth.max(psi / (tau * l * l));
                    c_plain = c_plain.max(psi);
                }
            }
        }
    }
    out.push(check(
        "spectral",
        "error_operator_smooth_data",
        c_smooth <= 1.0,
        format!("empirical C {c_smooth:.6} <= 1"),
    ));
    out.push(check("spectral", "error_operator_bounded", c_plain <= 2.0, format!("empirical C {c_plain:.6} <= 2")));

    // Group and semigroup laws.
    let f = random_field(&mut rng, 32, 1.0, 1.0);
    let group = f.fractional_power(0.5).fractional_power(-0.5).distance(&f);
    let sum = f.fractional_power(0.3).fractional_power(0.45).distance(&f.fractional_power(0.75)) / f.fractional_power(0.75).sobolev_norm(0.0);
    let semi = f.semigroup(1e-3)?.semigroup(2e-3)?.distance(&f.semigroup(3e-3)?);
    out.push(check(
        "spectral",
        "fractional_power_group",
        group <= 1e-13 && sum <= 1e-13,
        format!("identity {group:.2e}, additivity {sum:.2e} <= 1e-13"),
    ));
    out.push(check("spectral", "semigroup_law", semi <= 1e-13, format!("deviation {semi:.2e} <= 1e-13")));
    Ok(out)
}

pub fn nonlinearity_suite(opts: &InvariantOptions) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut rng = stream(opts.seed, "inv-nonlinearity", &[]);
    let n = 16;
    let mut eval = NemytskiiEval::new(Arc::new(Basis::new(n, DEFAULT_DEALIAS)?))?;

    let (mut one_sided, mut lipschitz) = (f64::NEG_INFINITY, 0.0f64);
    for _ in 0..opts.pairs {
        let u = SpectralField::from_coeffs((0..n).map(|_| rng.random_range(-3.0..=3.0)).collect());
        let v = SpectralField::from_coeffs((0..n).map(|_| rng.random_range(-3.0..=3.0)).collect());
        let fu = eval.apply_f(&u)?;
        let sup_u = eval.last_sup_norm();
        let fv = eval.apply_f(&v)?;
        let sup_v = eval.last_sup_norm();
        let mut df = fu.clone();
        df.add_scaled(-1.0, &fv);
        let mut d = u.clone();
        d.add_scaled(-1.0, &v);
        let dd = d.dot(&d);
        // Relative slack of the one-sided inequality, <= 0 when it holds.
        one_sided = one_sided.max((-df.dot(&d) - dd) / dd);
        lipschitz = lipschitz.max(df.sobolev_norm(0.0) / ((1.0 + sup_u * sup_u + sup_v * sup_v) * dd.sqrt()));
    }
    out.push(check(
        "nonlinearity",
        "one_sided_condition",
        one_sided <= 1e-12,
        format!("{} pairs, max (-<F(u)-F(v),u-v> - |u-v|^2)/|u-v|^2 = {one_sided:.3e} <= 0", opts.pairs),
    ));
    out.push(check(
        "nonlinearity",
        "local_lipschitz",
        lipschitz <= 3.0,
        format!("{} pairs, empirical C {lipschitz:.4} <= 3", opts.pairs),
    ));

    // Dealiased grid against a 4x oversampled quadrature.
    let mut worst = 0.0f64;
    for &m in &[1usize, 2, 5, 8, 17, 32] {
        let basis = Arc::new(Basis::new(m, DEFAULT_DEALIAS)?);
        let fine = Arc::new(Basis::with_grid_size(m, 4 * basis.grid_size()));
        let mut e = NemytskiiEval::new(basis)?;
        let mut oracle = NemytskiiEval::new(fine)?;
        for _ in 0..10 {
            let v = random_field(&mut rng, m, 1.0, 1.0);
            worst = worst.max(e.apply_f(&v)?.distance(&oracle.apply_f(&v)?));
        }
    }
    out.push(check("nonlinearity", "dealiasing_exact", worst <= 1e-10, format!("max deviation {worst:.3e} <= 1e-10")));

    // Forward differences of F against F′: error O(h).
    let v = random_field(&mut rng, n, 1.0, 1.0);
    let y = random_field(&mut rng, n, 1.0, 1.0);
    let fv = eval.apply_f(&v)?;
    let dfy = eval.apply_f_prime(&v, &y)?;
    let hs = [1e-1, 5e-2, 2.5e-2, 1.25e-2, 6.25e-3];
    let mut errs = Vec::new();
    for &h in &hs {
        let mut vh = v.clone();
        vh.add_scaled(h, &y);
        let mut q = eval.apply_f(&vh)?;
        q.add_scaled(-1.0, &fv);
        let q = SpectralField::from_coeffs(q.coeffs().iter().map(|c| c / h).collect());
        errs.push(q.distance(&dfy));
    }
    let slope = loglog_slope(&hs, &errs);
    out.push(check("nonlinearity", "derivative_finite_difference", slope >= 0.9, format!("slope {slope:.4} >= 0.9")));

    let z = random_field(&mut rng, n, 1.0, 1.0);
    let lhs = eval.apply_f_prime(&v, &y)?.dot(&z);
    let rhs = eval.apply_f_prime(&v, &z)?.dot(&y);
    let asym = (lhs - rhs).abs();
    out.push(check("nonlinearity", "derivative_symmetry", asym <= 1e-11, format!("|<F'y,z> - <y,F'z>| = {asym:.2e} <= 1e-11")));
    Ok(out)
}

pub fn noise_suite(opts: &InvariantOptions) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let family = NoiseFamily::default();
    let (n, m_ref) = (8, 64);
    let narrow = NoiseTable::build(opts.seed, 1.0, m_ref, n, family)?;
    let wide = NoiseTable::build(opts.seed, 1.0, m_ref, 2 * n, family)?;
    let mut nested = true;
    for m in [1, 2, 8, 64] {
        let a = narrow.coarsen(m, n)?;
        let b = wide.coarsen(m, n)?;
        nested &= a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits());
        nested &= a.as_slice().len() == n * m && a.as_slice().iter().all(|x| x.is_finite());
    }
    out.push(check("noise", "mode_nesting", nested, format!("N_ref in {{{n}, {}}} bit-identical", 2 * n)));

    let fine = narrow.fine();
    let mut telescoping = true;
    for m in [1, 2, 4, 16, 32] {
        let coarse = fine.coarsen(m)?;
        telescoping &= coarse.totals().iter().zip(fine.totals()).all(|(a, b)| a.to_bits() == b.to_bits());
        let two_stage = fine.coarsen(2 * m.min(32))?.coarsen(m)?;
        telescoping &= two_stage.as_slice().iter().zip(coarse.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits());
    }
    out.push(check("noise", "telescoping", telescoping, "coarse sums equal fine sums bit-for-bit".into()));

    let mut monotone = true;
    let rs: Vec<f64> = (0..60).map(|i| 1.0 + 0.025 * i as f64).collect();
    for (i, &r) in rs.iter().enumerate() {
        if (NoiseFamily::PowerLaw { r }).check_admissible().is_ok() {
            monotone &= rs[i..].iter().all(|&r2| (NoiseFamily::PowerLaw { r: r2 }).check_admissible().is_ok());
        }
    }
    out.push(check("noise", "admissibility_monotone", monotone, "power-law exponents on [1, 2.5]".into()));
    Ok(out)
}

pub fn integrator_suite(opts: &InvariantOptions) -> Result<Vec<Check>> {
    let mut out = Vec::new();

    // Defect census over noise-driven paths.
    let model = ModelConfig::default();
    let steps_per_path = 1024;
    let paths = opts.census_steps.div_ceil(steps_per_path);
    let mut worst = 0.0f64;
    let mut accepted = 0usize;
    let tol = model.solver.tol;
    let mut checker = DefectChecker::new(model.n, model.t_end / steps_per_path as f64, false)?;
    for p in 0..paths {
        let table = NoiseTable::build(opts.seed.wrapping_add(p as u64), model.t_end, steps_per_path, model.n, model.noise)?;
        let incs = table.fine();
        let run = simulate_path(
            &ModelConfig {
                m: steps_per_path,
                ..model.clone()
            },
            &incs,
            true,
        )?;
        let traj = run.trajectory.unwrap_or_default();
        for m in 0..incs.steps() {
            let d = checker.defect(traj[m + 1].coeffs(), traj[m].coeffs(), incs.step(m))?;
            worst = worst.max(d);
            accepted += 1;
        }
    }
    out.push(check(
        "integrator",
        "defect_census",
        worst <= 2.0 * tol,
        format!("{accepted} steps, max defect {worst:.3e} <= {:.1e}", 2.0 * tol),
    ));

    // Stiff amplitude-3 solutions, where the fixed-point map is expanding.
    // The right-hand side is manufactured from the target state.
    let (n, tau) = (64, 0.1);
    let cfg = SolverConfig::default();
    let mut stepper = Stepper::with_modes(n, tau, cfg, false)?;
    let mut checker = DefectChecker::new(n, tau, false)?;
    let mut eval = NemytskiiEval::new(Arc::new(Basis::new(n, DEFAULT_DEALIAS)?))?;
    let mut rng = stream(opts.seed, "inv-stiff", &[]);
    let (mut newton, mut worst, mut recovered) = (0usize, 0.0f64, 0.0f64);
    let zero = vec![0.0; n];
    let trials = 20;
    for _ in 0..trials {
        let target = random_field(&mut rng, n, 3.0, 1.0);
        let drift = eval.apply_drift(&target)?;
        let rhs: Vec<f64> = (0..n)
            .map(|i| {
                let l = eigenvalue(i + 1);
                target.coeffs()[i] * (1.0 + tau * l * l) + tau * drift.coeffs()[i]
            })
            .collect();
        let mut x = vec![0.0; n];
        let stats = stepper.solve(&rhs, &mut x)?;
        if stats.method == SolveMethod::Newton {
            newton += 1;
        }
        worst = worst.max(checker.defect(&x, &rhs, &zero)?);
        recovered = recovered.max(SpectralField::from_coeffs(x).distance(&target) / target.sobolev_norm(0.0));
    }
    out.push(check(
        "integrator",
        "newton_fallback",
        newton > 0 && worst <= 2.0 * cfg.tol && recovered <= 1e-8,
        format!(
            "{newton}/{trials} solves needed Newton, max defect {worst:.3e} <= {:.1e}, target recovered to {recovered:.1e}",
            2.0 * cfg.tol
        ),
    ));

    // Linear mode against the closed-form sum.
    let linear = ModelConfig {
        n: 16,
        m: 64,
        linear_mode: true,
        initial: crate::model::InitialDatum {
            modes: vec![(1, 1.0), (3, -0.05)],
        },
        ..ModelConfig::default()
    };
    let table = NoiseTable::build(opts.seed, linear.t_end, 256, 16, linear.noise)?;
    let incs = table.coarsen(linear.m, linear.n)?;
    let got = simulate_path(&linear, &incs, false)?.state.field;
    let tau = linear.tau();
    let x0 = linear.initial.field(linear.n);
    let want = SpectralField::from_coeffs(
        (1..=linear.n)
            .map(|j| {
                let l = eigenvalue(j);
                let m_total = linear.m as u32;
                let mut v = discrete_factor(tau, l, m_total) * x0.mode(j);
                for m in 1..=m_total {
                    v += discrete_factor(tau, l, m_total - m + 1) * incs.step((m - 1) as usize)[j - 1];
                }
                v
            })
            .collect(),
    );
    let rel = got.distance(&want) / want.sobolev_norm(0.0);
    out.push(check("integrator", "linear_closed_form", rel <= 1e-12, format!("relative deviation {rel:.2e} <= 1e-12")));
    Ok(out)
}

pub fn experiments_suite(opts: &InvariantOptions) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let model = ModelConfig::default();
    let phi = TestFunctional::default();
    let mut weak = Vec::new();
    let mut strong = Vec::new();
    for &w in &opts.worker_counts {
        let setup = StudySetup {
            model: &model,
            paths: 24,
            seed: opts.seed,
            workers: w,
        };
        let r = estimate_weak_error_temporal(&setup, &[4, 8, 16], 64, 8, &phi)?;
        weak.push(serde_json::to_string(&r).map_err(|e| crate::Error::Format(e.to_string()))?);
        let r = estimate_strong_error_spatial(&setup, &[2, 4], 8, 32)?;
        strong.push(serde_json::to_string(&r).map_err(|e| crate::Error::Format(e.to_string()))?);
    }
    let identical = weak.windows(2).all(|w| w[0] == w[1]) && strong.windows(2).all(|w| w[0] == w[1]);
    out.push(check(
        "experiments",
        "worker_count_independence",
        identical,
        format!("reports byte-identical across workers {:?}", opts.worker_counts),
    ));

    let mut rng = stream(opts.seed, "inv-functional", &[]);
    let x = random_field(&mut rng, 12, 0.5, 1.0);
    let y = random_field(&mut rng, 12, 0.5, 1.0);
    let mut min_slope = f64::INFINITY;
    for phi in [
        TestFunctional::GaussExp { sigma: 1.0 },
        TestFunctional::CosinePairing {
            psi: vec![(1, 1.0), (2, -0.5), (5, 0.25)],
        },
    ] {
        let g = phi.gradient(&x).dot(&y);
        let hs = [1e-1, 5e-2, 2.5e-2, 1.25e-2];
        let errs: Vec<f64> = hs
            .iter()
            .map(|&h| {
                let mut xh = x.clone();
                xh.add_scaled(h, &y);
                ((phi.difference(&xh, &x) / h) - g).abs()
            })
            .collect();
        min_slope = min_slope.min(loglog_slope(&hs, &errs));
    }
    out.push(check(
        "experiments",
        "functional_gradient",
        min_slope >= 0.9,
        format!("finite-difference slope {min_slope:.4} >= 0.9"),
    ));
    Ok(out)
}

/// Runs every suite.
pub fn run_all(opts: &InvariantOptions) -> Result<InvariantReport> {
    let mut checks = spectral_suite(opts)?;
    checks.extend(nonlinearity_suite(opts)?);
    checks.extend(noise_suite(opts)?);
    checks.extend(integrator_suite(opts)?);
    checks.extend(experiments_suite(opts)?);
    let passed = checks.iter().filter(|c| c.passed).count();
    Ok(InvariantReport {
        seed: opts.seed,
        failed: checks.len() - passed,
        passed,
        checks,
    })
}
