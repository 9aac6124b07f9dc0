//! Estimator contracts on small configurations.

use cahn_spectral::experiments::*;
use cahn_spectral::rng::stream;
use cahn_spectral::{Error, ModelConfig, SpectralField};
use rand::Rng;
use rand_distr::StandardNormal;

fn setup(model: &ModelConfig, paths: usize, seed: u64) -> StudySetup<'_> {
    StudySetup {
        model,
        paths,
        seed,
        workers: 2,
    }
}

#[test]
fn reference_level_has_zero_error() {
    let model = ModelConfig::default();
    let phi = TestFunctional::default();
    let s = setup(&model, 8, 1);
    let r = estimate_weak_error_temporal(&s, &[4, 64], 64, 8, &phi).unwrap();
    assert_eq!((r.estimates[1], r.std_errors[1]), (0.0, 0.0));
    let r = estimate_strong_error_temporal(&s, &[64], 64, 8).unwrap();
    assert_eq!(r.estimates, vec![0.0]);
    let r = estimate_strong_error_spatial(&s, &[8], 8, 16).unwrap();
    assert_eq!(r.estimates, vec![0.0]);
    let r = estimate_weak_error_spatial(&s, &[2, 8], 8, 16, &phi).unwrap();
    assert_eq!(r.estimates[1], 0.0);
}

#[test]
fn invalid_grids_are_rejected() {
    let model = ModelConfig::default();
    let s = setup(&model, 8, 1);
    let e = estimate_strong_error_temporal(&s, &[24], 2048, 8).unwrap_err();
    assert!(e.to_string().contains("2048 mod 24"), "{e}");
    assert!(estimate_strong_error_spatial(&s, &[16], 8, 16).is_err());
    assert!(estimate_strong_error_temporal(&setup(&model, 1, 1), &[4], 16, 4).is_err());
}

#[test]
fn synthetic_first_order_data_fits_slope_one() {
    let mut rng = stream(3, "synthetic", &[]);
    let pts: Vec<RatePoint> = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0]
        .iter()
        .map(|&h| {
            let z: f64 = rng.sample(StandardNormal);
            RatePoint {
                h,
                error: 3.0 * h * (1.0 + 0.01 * z),
                std_error: None,
            }
        })
        .collect();
    let fit = fit_rate(&pts, None).unwrap();
    assert!((0.95..=1.05).contains(&fit.slope), "{fit:?}");
    assert!(fit.ci95.unwrap() < 0.05);
}

#[test]
fn single_surviving_point_is_no_signal() {
    let pts = [
        RatePoint {
            h: 0.5,
            error: 1.0,
            std_error: Some(0.01),
        },
        RatePoint {
            h: 0.25,
            error: 1e-3,
            std_error: Some(1e-2),
        },
        RatePoint {
            h: 0.125,
            error: 0.0,
            std_error: Some(1e-2),
        },
    ];
    match fit_rate(&pts, None) {
        Err(Error::NoSignal { excluded }) => assert_eq!(excluded, 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn standard_error_shrinks_like_root_k() {
    let model = ModelConfig {
        n: 8,
        ..Default::default()
    };
    // A single K-doubling ratio scatters over roughly [0.6, 0.9]; average 20.
    let ratios: Vec<f64> = (0..20)
        .map(|seed| {
            let a = estimate_strong_error_temporal(&setup(&model, 200, seed), &[4], 64, 8).unwrap();
            let b = estimate_strong_error_temporal(&setup(&model, 400, seed + 100), &[4], 64, 8).unwrap();
            b.std_errors[0] / a.std_errors[0]
        })
        .collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!((0.6..=0.85).contains(&mean), "{ratios:?}");
}

#[test]
fn weak_error_obeys_the_mean_value_bound() {
    let model = ModelConfig::default();
    let phi = TestFunctional::default();
    let (weak, strong) = estimate_spatial_pair(&setup(&model, 64, 5), &[2, 4, 8], 32, 256, &phi).unwrap();
    let lip = phi.first_derivative_bound();
    for i in 0..3 {
        assert!(weak.estimates[i].abs() <= strong.estimates[i] * lip + 2.0 * weak.std_errors[i]);
    }
}

#[test]
fn spatial_strong_error_is_monotone() {
    let model = ModelConfig::default();
    let r = estimate_strong_error_spatial(&setup(&model, 64, 9), &[2, 4, 8, 16], 64, 256).unwrap();
    for w in 0..3 {
        let slack = 2.0 * (r.std_errors[w] + r.std_errors[w + 1]);
        assert!(r.estimates[w + 1] <= r.estimates[w] + slack, "{r:?}");
    }
}

#[test]
fn linear_study_matches_its_oracle() {
    let model = ModelConfig::default();
    let r = estimate_linear_strong_error(&setup(&model, 400, 2), &[8, 32], 512, 16).unwrap();
    let oracle = r.oracle.clone().unwrap();
    for i in 0..2 {
        assert!((r.estimates[i] - oracle[i]).abs() <= 3.0 * r.std_errors[i], "{r:?}");
    }
}

#[test]
fn report_serializes_with_stable_names() {
    let model = ModelConfig::default();
    let r = estimate_strong_error_temporal(&setup(&model, 4, 1), &[4, 8], 64, 4).unwrap();
    let v: serde_json::Value = serde_json::to_value(&r).unwrap();
    for key in ["grid", "estimates", "std_errors", "K"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    let back: ErrorReport = serde_json::from_value(v).unwrap();
    assert_eq!(back, r);
    assert!(r.to_csv().starts_with("level,estimate,std_error,K\n4,"));
    let fit = fit_rate(&[RatePoint { h: 1.0, error: 1.0, std_error: None }, RatePoint { h: 0.5, error: 0.25, std_error: None }], None).unwrap();
    let v = serde_json::to_value(&fit).unwrap();
    for key in ["slope", "ci95", "excluded_points"] {
        assert!(v.get(key).is_some(), "{key}");
    }
}

#[test]
fn functional_gradients_match_finite_differences() {
    let x = SpectralField::from_coeffs(vec![0.3, -0.1, 0.2, 0.05]);
    let y = SpectralField::from_coeffs(vec![1.0, 0.5, -0.5, 0.25]);
    for phi in [
        TestFunctional::GaussExp { sigma: 0.8 },
        TestFunctional::CosinePairing {
            psi: vec![(1, 2.0), (4, -1.0)],
        },
    ] {
        let g = phi.gradient(&x).dot(&y);
        let hs = [1e-2, 5e-3, 2.5e-3];
        let errs: Vec<f64> = hs
            .iter()
            .map(|&h| {
                let mut xh = x.clone();
                xh.add_scaled(h, &y);
                (phi.difference(&xh, &x) / h - g).abs()
            })
            .collect();
        let slope = (errs[0] / errs[2]).ln() / (hs[0] / hs[2]).ln();
        assert!(slope >= 0.9, "{phi:?}: {slope}");
    }
}
