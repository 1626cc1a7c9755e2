mod common;

use subdist_iv::prediction::{cif_bands, predict_cif, predict_with_bands};
use subdist_iv::{fit_pipeline, Error, FitMode, FitOptions, Pipeline};

fn pipeline() -> Pipeline {
    let d = common::random_small(&mut common::rng(41), 150, 1, false);
    fit_pipeline(&d, &FitOptions::default(), FitMode::Iv).unwrap()
}

#[test]
fn cif_combines_baseline_and_linear_term() {
    let mut pl = pipeline();
    let b = &mut pl.fit.baseline;
    b.values.iter_mut().for_each(|v| *v = 0.2);
    b.prefix_max.iter_mut().for_each(|v| *v = 0.2);
    b.slopes.iter_mut().for_each(|v| *v = 0.0);
    let t = pl.fit.tau;
    // Choose x so that beta'x_c t = 0.1 with the observed covariate at its mean.
    let x_e = pl.fit.offsets[0] + 0.1 / (pl.fit.beta[0] * t);
    let x_o = [pl.fit.offsets[1]];
    let curve = predict_cif(&pl.fit, x_e, &x_o, &[t]).unwrap();
    assert!((curve.values[0] - (1.0 - (-0.3f64).exp())).abs() < 1e-12);
    assert!((curve.values[0] - 0.2592).abs() < 1e-4);
}

#[test]
fn cif_starts_at_zero_and_rejects_times_beyond_tau() {
    let pl = pipeline();
    let curve = predict_cif(&pl.fit, 0.0, &[0.0], &[0.0]).unwrap();
    assert_eq!(curve.values[0], 0.0);
    assert!(matches!(
        predict_cif(&pl.fit, 0.0, &[0.0], &[pl.fit.tau * 1.01]),
        Err(Error::OutsideSupport { .. })
    ));
    assert!(matches!(
        predict_cif(&pl.fit, 0.0, &[0.0, 1.0], &[0.1]),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn wider_level_gives_wider_bands() {
    let pl = pipeline();
    let times: Vec<f64> = (1..10).map(|k| pl.fit.tau * k as f64 / 10.0).collect();
    let c90 = predict_with_bands(&pl.fit, &pl.variance, 0.3, &[0.1], &times, 0.90).unwrap();
    let c99 = cif_bands(&c90, 0.99);
    for j in 0..times.len() {
        if c90.values[j] > 0.0 && c90.se[j] > 0.0 {
            assert!(c99.lower[j] <= c90.lower[j]);
            assert!(c99.upper[j] >= c90.upper[j]);
        }
    }
}
