//! Least-squares regression of the exposure on the instrument and observed
//! covariates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{column_scaled, condition_number, svd_inverse, svd_solve, CONDITION_LIMIT};

/// F-statistics at or below this value flag a weak instrument.
pub const WEAK_IV_THRESHOLD: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStageFit {
    /// Intercept, instrument, covariates (on the centered scale).
    pub gamma: Vec<f64>,
    pub gamma_se: Vec<f64>,
    /// Intercept expressed on the original, uncentered scale.
    pub intercept_uncentered: f64,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    pub sigma2_hat: f64,
    #[serde(with = "crate::artifact::nonfinite")]
    pub f_stat: f64,
    /// `(p+1) x (p+2)` map from `(1, X_I, X_o)` to `(fitted exposure, X_o)`.
    pub x_ioe: DMatrix<f64>,
    /// `(n^-1 X_Io' X_Io)^-1`.
    pub gram_inv: DMatrix<f64>,
    /// Residual variance among subjects with fitted exposure above the
    /// median divided by that below; a crude constant-variance check.
    #[serde(with = "crate::artifact::nonfinite")]
    pub dispersion_ratio: f64,
}

/// Design matrix `[1, X_I, X_o]`.
pub fn design_matrix(dataset: &Dataset) -> DMatrix<f64> {
    let n = dataset.n();
    let p = dataset.p;
    DMatrix::from_fn(n, p + 2, |i, j| {
        let s = &dataset.subjects[i];
        match j {
            0 => 1.0,
            1 => s.instrument,
            _ => s.covariates[j - 2],
        }
    })
}

fn column_label(dataset: &Dataset, j: usize) -> String {
    match j {
        0 => "intercept".into(),
        1 => "instrument".into(),
        _ => dataset.covariate_names[j - 2].clone(),
    }
}

pub fn fit_first_stage(dataset: &Dataset) -> Result<FirstStageFit> {
    let n = dataset.n();
    let p = dataset.p;
    if n <= p + 2 {
        return Err(Error::TooFewSubjects { n, p });
    }
    let x = design_matrix(dataset);
    let scaled = column_scaled(&x);
    let condition = condition_number(&scaled);
    if condition > CONDITION_LIMIT {
        // Name the first column whose inclusion breaks the rank.
        let offending = (1..=x.ncols())
            .find(|&k| condition_number(&scaled.columns(0, k).into_owned()) > CONDITION_LIMIT)
            .unwrap_or(x.ncols())
            - 1;
        return Err(Error::SingularDesign {
            column: column_label(dataset, offending),
            condition,
        });
    }
    let xe = DVector::from_iterator(n, dataset.subjects.iter().map(|s| s.exposure));
    let gamma = svd_solve(&x, &xe);
    let fitted = &x * &gamma;
    let residuals = &xe - &fitted;
    let rss = residuals.norm_squared();
    let sigma2_hat = rss / (n - p - 2) as f64;

    let gram = x.transpose() * &x;
    let gram_unscaled_inv = svd_inverse(&gram);
    let gamma_se: Vec<f64> = (0..p + 2)
        .map(|j| (sigma2_hat * gram_unscaled_inv[(j, j)]).max(0.0).sqrt())
        .collect();
    let f_stat = {
        let g = gamma[1];
        let v = sigma2_hat * gram_unscaled_inv[(1, 1)];
        if v > 0.0 {
            g * g / v
        } else if g != 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    };
    let offsets = &dataset.centering_offsets;
    let intercept_uncentered = gamma[0] + offsets[1]
        - gamma[1] * offsets[0]
        - (0..p).map(|j| gamma[2 + j] * offsets[2 + j]).sum::<f64>();

    let mut x_ioe = DMatrix::zeros(p + 1, p + 2);
    for j in 0..p + 2 {
        x_ioe[(0, j)] = gamma[j];
    }
    for j in 0..p {
        x_ioe[(1 + j, 2 + j)] = 1.0;
    }

    Ok(FirstStageFit {
        gamma: gamma.iter().copied().collect(),
        gamma_se,
        intercept_uncentered,
        dispersion_ratio: dispersion_ratio(fitted.as_slice(), residuals.as_slice()),
        fitted: fitted.iter().copied().collect(),
        residuals: residuals.iter().copied().collect(),
        sigma2_hat,
        f_stat,
        x_ioe,
        gram_inv: gram_unscaled_inv * n as f64,
    })
}

fn dispersion_ratio(fitted: &[f64], residuals: &[f64]) -> f64 {
    let mut order: Vec<usize> = (0..fitted.len()).collect();
    order.sort_by(|&a, &b| fitted[a].total_cmp(&fitted[b]));
    let half = order.len() / 2;
    let var = |idx: &[usize]| {
        if idx.is_empty() {
            return f64::NAN;
        }
        let m = idx.iter().map(|&i| residuals[i]).sum::<f64>() / idx.len() as f64;
        idx.iter().map(|&i| (residuals[i] - m).powi(2)).sum::<f64>() / idx.len() as f64
    };
    let lo = var(&order[..half]);
    let hi = var(&order[half..]);
    if lo > 0.0 {
        hi / lo
    } else {
        f64::NAN
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakIvReport {
    #[serde(with = "crate::artifact::nonfinite")]
    pub f_stat: f64,
    pub weak: bool,
    pub advice: String,
}

/// Flags `F <= 10` (and an undefined F) as a weak instrument.
pub fn weak_iv_diagnostic(fit: &FirstStageFit) -> WeakIvReport {
    let weak = !(fit.f_stat > WEAK_IV_THRESHOLD);
    let advice = if weak {
        format!(
            "first-stage F = {:.4} <= {WEAK_IV_THRESHOLD}: the instrument is weak; IV estimates may be \
             unstable with very large standard errors. Compare with the naive (non-IV) fit.",
            fit.f_stat
        )
    } else {
        format!(
            "first-stage F = {:.4} > {WEAK_IV_THRESHOLD}: no evidence of a weak instrument; \
             comparing with the naive (non-IV) fit is still recommended.",
            fit.f_stat
        )
    };
    WeakIvReport {
        f_stat: fit.f_stat,
        weak,
        advice,
    }
}
