//! Covariate-specific cumulative incidence with pointwise confidence bands.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::additive::SubdistFit;
use crate::error::{Error, Result};
use crate::inference::{normal_quantile, VarianceComponents};
use crate::linalg::svd_inverse;

/// Relative slack allowed when a query time equals tau up to rounding.
const TAU_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CifCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub se: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: Option<f64>,
    pub g_hat: Vec<f64>,
    pub gamma_hat: Vec<Vec<f64>>,
    /// Query covariates on the centered scale, exposure first.
    pub x_centered: Vec<f64>,
    pub warnings: Vec<String>,
}

fn centered_covariates(fit: &SubdistFit, x_e: f64, x_o: &[f64]) -> Result<DVector<f64>> {
    if x_o.len() + 1 != fit.q() {
        return Err(Error::DimensionMismatch {
            expected: fit.q() - 1,
            actual: x_o.len(),
        });
    }
    Ok(DVector::from_iterator(
        fit.q(),
        std::iter::once(x_e)
            .chain(x_o.iter().copied())
            .zip(&fit.offsets)
            .map(|(x, o)| x - o),
    ))
}

fn check_time(fit: &SubdistFit, t: f64) -> Result<()> {
    if !(t >= 0.0 && t <= fit.tau * (1.0 + TAU_SLACK)) {
        return Err(Error::OutsideSupport { time: t, tau: fit.tau });
    }
    Ok(())
}

/// `g(t) = n sum_{t_k <= t} d_k / S0_k^2`.
pub fn g_hat(fit: &SubdistFit, t: f64) -> f64 {
    let nf = fit.n as f64;
    fit.knots
        .iter()
        .zip(fit.events.iter().zip(&fit.s0))
        .take_while(|(&tk, _)| tk <= t)
        .map(|(_, (&d, &s0))| nf * d as f64 / (s0 * s0))
        .sum()
}

/// `Gamma(t) = sum_{t_k <= t} (sum of event rows at t_k) / S0_k`.
pub fn gamma_hat(fit: &SubdistFit, t: f64) -> DVector<f64> {
    let mut out = DVector::zeros(fit.q());
    for (k, &tk) in fit.knots.iter().enumerate() {
        if tk > t {
            break;
        }
        if fit.events[k] > 0 {
            out += &fit.event_sums[k] / fit.s0[k];
        }
    }
    out
}

/// `1 - exp(-H_mod(t) - t beta' x)` at each time; covariates are on the
/// original scale.
pub fn predict_cif(fit: &SubdistFit, x_e: f64, x_o: &[f64], times: &[f64]) -> Result<CifCurve> {
    let x = centered_covariates(fit, x_e, x_o)?;
    let lin = fit.beta_vec().dot(&x);
    let mut warnings = Vec::new();
    let mut values = Vec::with_capacity(times.len());
    for &t in times {
        check_time(fit, t)?;
        let f = 1.0 - (-fit.baseline.eval_mod(t) - t * lin).exp();
        if !(0.0..1.0).contains(&f) {
            warnings.push(format!(
                "F1({t}) = {f:.6} lies outside [0, 1): the additive hazard is negative for these covariates"
            ));
        }
        values.push(f);
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    if order.windows(2).any(|w| values[w[1]] < values[w[0]]) {
        warnings.push(
            "predicted incidence decreases over time: the covariate term outweighs the baseline".into(),
        );
    }
    Ok(CifCurve {
        times: times.to_vec(),
        se: vec![f64::NAN; times.len()],
        lower: vec![f64::NAN; times.len()],
        upper: vec![f64::NAN; times.len()],
        level: None,
        g_hat: times.iter().map(|&t| g_hat(fit, t)).collect(),
        gamma_hat: times
            .iter()
            .map(|&t| gamma_hat(fit, t).iter().copied().collect())
            .collect(),
        x_centered: x.iter().copied().collect(),
        values,
        warnings,
    })
}

/// `K(s, t)` for the process `sqrt(n)(F1_hat - F1)` at covariates `x`.
pub fn cif_covariance(
    fit: &SubdistFit,
    variance: &VarianceComponents,
    x_e: f64,
    x_o: &[f64],
    s: f64,
    t: f64,
) -> Result<f64> {
    check_time(fit, s)?;
    check_time(fit, t)?;
    let x = centered_covariates(fit, x_e, x_o)?;
    Ok(covariance_centered(fit, variance, &x, s, t))
}

fn covariance_centered(
    fit: &SubdistFit,
    variance: &VarianceComponents,
    x: &DVector<f64>,
    s: f64,
    t: f64,
) -> f64 {
    let lin = fit.beta_vec().dot(x);
    let surv = |u: f64| (-fit.baseline.eval_mod(u) - u * lin).exp();
    let nv = &variance.covariance * fit.n as f64;
    let omega_inv = svd_inverse(&variance.omega);
    let quad = x.dot(&(&nv * x));
    let cross = x.dot(&(&omega_inv * (gamma_hat(fit, t) * s + gamma_hat(fit, s) * t)));
    surv(t) * surv(s) * (g_hat(fit, s.min(t)) + s * t * quad + cross)
}

/// Fills pointwise standard errors `sqrt(K(t, t) / n)`.
pub fn attach_standard_errors(
    curve: &mut CifCurve,
    fit: &SubdistFit,
    variance: &VarianceComponents,
) {
    let x = DVector::from_column_slice(&curve.x_centered);
    let nf = fit.n as f64;
    for (j, &t) in curve.times.iter().enumerate() {
        let k = covariance_centered(fit, variance, &x, t, t);
        if k < 0.0 {
            curve
                .warnings
                .push(format!("K({t}, {t}) = {k:.3e} is negative; standard error set to zero"));
        }
        curve.se[j] = (k.max(0.0) / nf).sqrt();
    }
}

/// Pointwise bands built on the `log(-log(1 - F))` scale and mapped back,
/// so bounds stay in `[0, 1)`.
pub fn cif_bands(curve: &CifCurve, level: f64) -> CifCurve {
    let crit = normal_quantile(0.5 + level / 2.0);
    let mut out = curve.clone();
    out.level = Some(level);
    for j in 0..curve.times.len() {
        let f = curve.values[j];
        let se = curve.se[j];
        let cumhaz = -(1.0 - f).ln();
        if !(cumhaz > 0.0) || !(se > 0.0) || !f.is_finite() {
            let point = f.clamp(0.0, 1.0 - f64::EPSILON);
            if f != point {
                out.warnings.push(format!(
                    "band at t = {} collapsed to a point because F1 = {f:.6} is outside [0, 1)",
                    curve.times[j]
                ));
            }
            out.lower[j] = point;
            out.upper[j] = point;
            continue;
        }
        let se_log = se / ((1.0 - f) * cumhaz);
        let lo = cumhaz * (-crit * se_log).exp();
        let hi = cumhaz * (crit * se_log).exp();
        out.lower[j] = 1.0 - (-lo).exp();
        out.upper[j] = (1.0 - (-hi).exp()).min(1.0 - f64::EPSILON);
    }
    out
}

/// Prediction, standard errors and bands in one call.
pub fn predict_with_bands(
    fit: &SubdistFit,
    variance: &VarianceComponents,
    x_e: f64,
    x_o: &[f64],
    times: &[f64],
    level: f64,
) -> Result<CifCurve> {
    let mut curve = predict_cif(fit, x_e, x_o, times)?;
    attach_standard_errors(&mut curve, fit, variance);
    Ok(cif_bands(&curve, level))
}
