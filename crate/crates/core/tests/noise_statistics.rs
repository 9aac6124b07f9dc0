//! Distributional checks of the noise tables and the stochastic convolution.

use cahn_spectral::noise::{convolution_moment, sample_convolution_path, NoiseFamily, NoiseTable, QSpectrum};
use cahn_spectral::spectral::eigenvalue;
use cahn_spectral::stats::mean_estimate;

#[test]
fn increments_have_the_prescribed_covariance() {
    let (m_ref, n) = (4096, 6);
    let family = NoiseFamily::default();
    let table = NoiseTable::build(11, 1.0, m_ref, n, family).unwrap();
    let tau = table.tau_ref();
    for j in 1..=n {
        let scaled: Vec<f64> = (0..m_ref)
            .map(|i| table.increment(i, j).powi(2) / (family.variance(j) * tau))
            .collect();
        let est = mean_estimate(&scaled);
        assert!((est.mean - 1.0).abs() < 4.0 * est.std_error, "mode {j}: {est:?}");
        for k in (j + 1)..=n {
            let cross: Vec<f64> = (0..m_ref).map(|i| table.normal(i, j) * table.normal(i, k)).collect();
            let est = mean_estimate(&cross);
            assert!(est.mean.abs() < 4.0 * est.std_error, "modes {j},{k}: {est:?}");
        }
    }
}

#[test]
fn increments_are_independent_across_steps() {
    let table = NoiseTable::build(12, 1.0, 4096, 2, NoiseFamily::TraceClass { s: 4.0 }).unwrap();
    let lagged: Vec<f64> = (1..4096).map(|i| table.normal(i, 1) * table.normal(i - 1, 1)).collect();
    let est = mean_estimate(&lagged);
    assert!(est.mean.abs() < 4.0 * est.std_error, "{est:?}");
}

#[test]
fn ou_modes_reach_the_stationary_variance() {
    let n = 4;
    let q = QSpectrum::new(NoiseFamily::default(), n).unwrap();
    let times = [0.0, 0.3, 1.0];
    let paths = 4000;
    let samples: Vec<Vec<f64>> = (0..paths)
        .map(|p| sample_convolution_path(1000 + p, &times, &q, n).unwrap()[2].coeffs().to_vec())
        .collect();
    for j in 1..=n {
        let mu = eigenvalue(j).powi(2);
        let stationary = q.variances()[j - 1] / (2.0 * mu);
        let scaled: Vec<f64> = samples.iter().map(|s| s[j - 1].powi(2) / stationary).collect();
        let est = mean_estimate(&scaled);
        assert!((est.mean - 1.0).abs() < 4.0 * est.std_error, "mode {j}: {est:?}");
    }
}

#[test]
fn convolution_moment_matches_closed_form() {
    let n = 32;
    let q = QSpectrum::new(NoiseFamily::default(), n).unwrap();
    let t = 0.05;
    let samples: Vec<f64> = (0..4000)
        .map(|p| sample_convolution_path(7 + p, &[0.0, t], &q, n).unwrap()[1].sobolev_norm(1.0).powi(2))
        .collect();
    let est = mean_estimate(&samples);
    let exact = convolution_moment(&q, n, 1.0, t);
    assert!((est.mean - exact).abs() < 4.0 * est.std_error, "{est:?} vs {exact}");
}

#[test]
fn convolution_path_is_deterministic_per_seed() {
    let q = QSpectrum::new(NoiseFamily::default(), 8).unwrap();
    let times = [0.0, 0.1, 0.2];
    let a = sample_convolution_path(3, &times, &q, 8).unwrap();
    let b = sample_convolution_path(3, &times, &q, 8).unwrap();
    let c = sample_convolution_path(4, &times, &q, 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a[0].coeffs(), &[0.0; 8]);
}
