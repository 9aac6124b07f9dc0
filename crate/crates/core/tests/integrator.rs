//! Solver behaviour and path-level oracles.

use cahn_spectral::integrator::{step_defect, SolveMethod, Stepper};
use cahn_spectral::model::InitialDatum;
use cahn_spectral::noise::NoiseTable;
use cahn_spectral::rng::stream;
use cahn_spectral::spectral::{eigenvalue, Basis};
use cahn_spectral::stats::{mean_estimate, rms_estimate};
use cahn_spectral::{backward_euler_step, simulate_linear_exact, simulate_path, ModelConfig, SolverConfig, SpectralField};
use rand::Rng;

fn random_state(seed: u64, n: usize, sup: f64) -> SpectralField {
    let mut rng = stream(seed, "test-state", &[n as u64]);
    let raw = SpectralField::from_coeffs((1..=n).map(|j| rng.random_range(-1.0..=1.0) / j as f64).collect());
    let basis = Basis::new(n, 4.0).unwrap();
    let s = basis.to_physical(&raw).unwrap().sup_norm();
    SpectralField::from_coeffs(raw.coeffs().iter().map(|c| c * sup / s).collect())
}

#[test]
fn returned_state_satisfies_the_step_equation() {
    let cfg = SolverConfig::default();
    for seed in 0..20 {
        let prev = random_state(seed, 8, 1.5);
        let dw = random_state(seed + 100, 8, 0.05);
        let (x, stats) = backward_euler_step(&prev, &dw, 1e-3, &cfg).unwrap();
        assert!(stats.residual <= cfg.tol);
        assert!(step_defect(&x, &prev, &dw, 1e-3, false).unwrap() <= 1e-12);
    }
}

#[test]
fn fixed_point_iteration_census() {
    let cfg = SolverConfig::default();
    let mut worst = 0;
    for &n in &[8usize, 16, 32, 64] {
        for &tau in &[1e-5, 1e-4, 1e-3] {
            let mut stepper = Stepper::with_modes(n, tau, cfg, false).unwrap();
            for seed in 0..25 {
                let prev = random_state(seed, n, 2.0);
                let mut out = vec![0.0; n];
                let stats = stepper.step(prev.coeffs(), &vec![0.0; n], &mut out).unwrap();
                assert_eq!(stats.method, SolveMethod::FixedPoint);
                worst = worst.max(stats.iterations);
            }
        }
    }
    assert!(worst <= 10, "worst iteration count {worst}");
}

#[test]
fn newton_rescues_a_stiff_solve() {
    let (n, tau) = (64, 0.1);
    let cfg = SolverConfig::default();
    let target = SpectralField::from_coeffs((1..=n).map(|j| if j == 1 { 3.0 } else { 0.3 / j as f64 }).collect());
    let mut eval = cahn_spectral::NemytskiiEval::new(std::sync::Arc::new(Basis::new(n, 2.25).unwrap())).unwrap();
    let drift = eval.apply_drift(&target).unwrap();
    let rhs: Vec<f64> = (0..n)
        .map(|i| target.coeffs()[i] * (1.0 + tau * eigenvalue(i + 1).powi(2)) + tau * drift.coeffs()[i])
        .collect();
    let (x, stats) = cahn_spectral::solve_implicit(&SpectralField::from_coeffs(rhs.clone()), tau, &cfg).unwrap();
    assert_eq!(stats.method, SolveMethod::Newton);
    assert!(x.distance(&target) < 1e-9);
    let zero = SpectralField::zeros(n);
    assert!(step_defect(&x, &SpectralField::from_coeffs(rhs), &zero, tau, false).unwrap() <= 2.0 * cfg.tol);
}

#[test]
fn one_step_path_is_one_backward_euler_step() {
    let model = ModelConfig {
        n: 8,
        m: 1,
        initial: InitialDatum {
            modes: vec![(1, 0.8), (2, -0.3)],
        },
        ..Default::default()
    };
    let table = NoiseTable::build(5, 1.0, 1, 8, model.noise).unwrap();
    let path = simulate_path(&model, &table.fine(), false).unwrap();
    let (x, _) = backward_euler_step(&model.initial.field(8), &table.fine().step_field(0), 1.0, &model.solver).unwrap();
    assert_eq!(path.state.field, x);
}

#[test]
fn zero_noise_and_zero_datum_stay_at_zero() {
    let model = ModelConfig {
        n: 8,
        m: 16,
        initial: InitialDatum { modes: vec![] },
        ..Default::default()
    };
    let incs = cahn_spectral::noise::CoarseIncrements::from_rows(1.0, 8, vec![vec![0.0; 8]; 16]).unwrap();
    let out = simulate_path(&model, &incs, true).unwrap();
    assert!(out.trajectory.unwrap().iter().all(|x| x.coeffs().iter().all(|&c| c == 0.0)));
}

#[test]
fn exact_linear_solution_without_noise_is_the_semigroup() {
    let model = ModelConfig {
        n: 6,
        linear_mode: true,
        t_end: 0.01,
        initial: InitialDatum {
            modes: vec![(1, 1.0), (2, 0.5)],
        },
        noise: cahn_spectral::NoiseFamily::PowerLaw { r: 60.0 },
        ..Default::default()
    };
    let table = NoiseTable::build(1, 0.01, 64, 6, model.noise).unwrap();
    let x = simulate_linear_exact(&model, &table).unwrap();
    let want = model.initial.field(6).semigroup(0.01).unwrap();
    // q_j = λ_j^{-60} makes the noise contribution negligible.
    assert!(x.distance(&want) < 1e-12, "{}", x.distance(&want));
}

#[test]
fn exact_linear_solution_has_the_ou_law() {
    let model = ModelConfig {
        n: 3,
        linear_mode: true,
        t_end: 0.02,
        initial: InitialDatum { modes: vec![] },
        ..Default::default()
    };
    let paths = 10_000;
    let samples: Vec<Vec<f64>> = (0..paths)
        .map(|p| {
            let table = NoiseTable::build(p, model.t_end, 8, 3, model.noise).unwrap();
            simulate_linear_exact(&model, &table).unwrap().into_coeffs()
        })
        .collect();
    for j in 1..=3 {
        let mu = eigenvalue(j).powi(2);
        let want = model.noise.variance(j) * -(-2.0 * mu * model.t_end).exp_m1() / (2.0 * mu);
        let sq: Vec<f64> = samples.iter().map(|s| s[j - 1].powi(2)).collect();
        let est = mean_estimate(&sq);
        assert!((est.mean - want).abs() < 4.0 * est.std_error, "mode {j}: {est:?} vs {want}");
    }
}

#[test]
fn moments_are_stable_under_step_refinement() {
    let paths = 1000;
    let base = ModelConfig {
        n: 32,
        ..Default::default()
    };
    let mut norms = Vec::new();
    for m in [256usize, 512] {
        let model = ModelConfig { m, ..base.clone() };
        let sq: Vec<f64> = (0..paths)
            .map(|p| {
                let table = NoiseTable::build(p as u64, 1.0, 512, 32, model.noise).unwrap();
                let out = simulate_path(&model, &table.coarsen(m, 32).unwrap(), false).unwrap();
                assert!(out.state.sup_h2.is_finite());
                out.state.field.sobolev_norm(2.0).powi(2)
            })
            .collect();
        norms.push(rms_estimate(&sq).mean);
    }
    let drift = (norms[1] - norms[0]).abs() / norms[0];
    assert!(drift < 0.05, "L2(H^2) norms {norms:?}, drift {drift}");
}
