//! Influence functions and the sandwich covariance of the second-stage
//! coefficients.
//!
//! The influence of subject `i` has three parts: the martingale term of the
//! estimating equation, the first-stage term from estimating the fitted
//! exposure, and the censoring term from estimating `G` by Kaplan-Meier.
//! All three are evaluated with prefix sums over the merged grid, so the cost
//! is linear in `n` and in the grid size.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::additive::{FitMode, SubdistFit};
use crate::censoring::{CensoringSurvival, IpcwProcesses, SubjectKind};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::first_stage::{design_matrix, FirstStageFit};
use crate::linalg::{svd_inverse, symmetrize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceRecords {
    pub phi1: Vec<DVector<f64>>,
    pub phi2: Vec<DVector<f64>>,
    pub phi3: Vec<DVector<f64>>,
    /// `n^-1 sum_i v_i X_Io_i'`, where `v_i` integrates
    /// `(Z_i - xbar) Y_i^2 dt`; links the fit to the first-stage coefficients.
    pub d_matrix: DMatrix<f64>,
    /// `sum over events of (Z_i - xbar)(Z_i - xbar)'`.
    pub event_outer: DMatrix<f64>,
}

impl InfluenceRecords {
    pub fn n(&self) -> usize {
        self.phi1.len()
    }

    pub fn phi(&self, i: usize) -> DVector<f64> {
        &self.phi1[i] + &self.phi2[i] + &self.phi3[i]
    }

    pub fn phi1_sum(&self) -> DVector<f64> {
        self.phi1
            .iter()
            .fold(DVector::zeros(self.phi1[0].len()), |a, b| a + b)
    }
}

/// Prefix sums over knots of the pieces of `sum_k Y^2 (Z - xbar_k)
/// (delta_k beta'(Z - xbar_k) + jump_k)`, optionally weighted by `G(t_k)^2`.
struct Accumulators {
    w0: Vec<f64>,
    w1: Vec<DVector<f64>>,
    w2b: Vec<DVector<f64>>,
    j0: Vec<f64>,
    j1: Vec<DVector<f64>>,
}

impl Accumulators {
    /// Entry `l` sums knots `0..l`.
    fn prefix(fit: &SubdistFit, weights: &[f64]) -> Self {
        let m = fit.knots.len();
        let q = fit.q();
        let beta = fit.beta_vec();
        let jumps = fit.jumps();
        let mut acc = Accumulators {
            w0: vec![0.0; m + 1],
            w1: vec![DVector::zeros(q); m + 1],
            w2b: vec![DVector::zeros(q); m + 1],
            j0: vec![0.0; m + 1],
            j1: vec![DVector::zeros(q); m + 1],
        };
        for k in 0..m {
            let w = weights[k];
            let dt = fit.deltas[k] * w;
            let zb = &fit.xbar[k];
            let jw = jumps[k] * w;
            acc.w0[k + 1] = acc.w0[k] + dt;
            acc.w1[k + 1] = &acc.w1[k] + zb * dt;
            acc.w2b[k + 1] = &acc.w2b[k] + zb * (zb.dot(&beta) * dt);
            acc.j0[k + 1] = acc.j0[k] + jw;
            acc.j1[k + 1] = &acc.j1[k] + zb * jw;
        }
        acc
    }

    /// Sum over knots `from..m`.
    fn tail(&self, from: usize) -> Terms {
        let m = self.w0.len() - 1;
        Terms {
            w0: self.w0[m] - self.w0[from],
            w1: &self.w1[m] - &self.w1[from],
            w2b: &self.w2b[m] - &self.w2b[from],
            j0: self.j0[m] - self.j0[from],
            j1: &self.j1[m] - &self.j1[from],
        }
    }

    fn head(&self, to: usize) -> Terms {
        Terms {
            w0: self.w0[to],
            w1: self.w1[to].clone(),
            w2b: self.w2b[to].clone(),
            j0: self.j0[to],
            j1: self.j1[to].clone(),
        }
    }
}

struct Terms {
    w0: f64,
    w1: DVector<f64>,
    w2b: DVector<f64>,
    j0: f64,
    j1: DVector<f64>,
}

impl Terms {
    /// `sum_k (z - xbar_k)(delta_k beta'(z - xbar_k) + jump_k)` over the
    /// knots these terms cover.
    fn compensator(&self, z: &DVector<f64>, beta: &DVector<f64>) -> DVector<f64> {
        let bz = beta.dot(z);
        z * (bz * self.w0 - beta.dot(&self.w1) + self.j0) - &self.w1 * bz + &self.w2b - &self.j1
    }

    /// `sum_k delta_k (z - xbar_k)`.
    fn exposure_integral(&self, z: &DVector<f64>) -> DVector<f64> {
        z * self.w0 - &self.w1
    }
}

pub fn influence_functions(
    fit: &SubdistFit,
    dataset: &Dataset,
    first: Option<&FirstStageFit>,
    ipcw: &IpcwProcesses,
    g: &CensoringSurvival,
) -> Result<InfluenceRecords> {
    let n = ipcw.n();
    let q = fit.q();
    let m = fit.knots.len();
    let nf = n as f64;
    let beta = fit.beta_vec();
    let ones = vec![1.0; m];
    let g2: Vec<f64> = ipcw.g_grid.iter().map(|g| g * g).collect();
    let active = Accumulators::prefix(fit, &ones);
    let decayed = Accumulators::prefix(fit, &g2);

    let mut phi1 = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut event_outer = DMatrix::zeros(q, q);
    for i in 0..n {
        let zi = fit.z.row(i).transpose();
        let l = ipcw.last[i].min(m);
        let head = active.head(l);
        let mut comp = head.compensator(&zi, &beta);
        let mut vi = head.exposure_integral(&zi);
        if ipcw.kind[i] == SubjectKind::Competing && l < m {
            let w = 1.0 / (ipcw.g_own[i] * ipcw.g_own[i]);
            let tail = decayed.tail(l);
            comp += tail.compensator(&zi, &beta) * w;
            vi += tail.exposure_integral(&zi) * w;
        }
        let mut p1 = -comp;
        if let Some(k) = ipcw.event_index[i] {
            let centered = &zi - &fit.xbar[k];
            event_outer += &centered * centered.transpose();
            p1 += centered;
        }
        phi1.push(p1);
        v.push(vi);
    }

    // First-stage term.
    let xio = design_matrix(dataset);
    let mut d_matrix = DMatrix::zeros(q, xio.ncols());
    for (i, vi) in v.iter().enumerate() {
        d_matrix += vi * xio.row(i);
    }
    d_matrix /= nf;
    let phi2 = match (fit.mode, first) {
        (FitMode::Iv, Some(first)) => {
            let lin = &d_matrix * &first.gram_inv * (-fit.beta[0]);
            (0..n)
                .map(|j| &lin * xio.row(j).transpose() * first.residuals[j])
                .collect()
        }
        (FitMode::Iv, None) => {
            return Err(Error::InvalidOption(
                "an IV fit needs its first stage for influence functions".into(),
            ))
        }
        (FitMode::Naive, _) => vec![DVector::zeros(q); n],
    };

    let phi3 = censoring_term(fit, ipcw, g, &decayed, &beta)?;
    Ok(InfluenceRecords {
        phi1,
        phi2,
        phi3,
        d_matrix,
        event_outer,
    })
}

/// Influence of the Kaplan-Meier estimate of `G`: `int q(u)/pi(u) dM^c_j(u)`.
///
/// A perturbation of the censoring hazard at `u` changes the weight
/// `G(t)^2 / G(T_i)^2` of every competing-cause subject with `T_i <= u < t`,
/// so `q(u)` pairs the covariate moments of those subjects with the
/// `G^2`-weighted knot sums beyond `u`.
fn censoring_term(
    fit: &SubdistFit,
    ipcw: &IpcwProcesses,
    g: &CensoringSurvival,
    decayed: &Accumulators,
    beta: &DVector<f64>,
) -> Result<Vec<DVector<f64>>> {
    let n = ipcw.n();
    let q = fit.q();
    let m = fit.knots.len();
    let nf = n as f64;
    // Competing subjects sorted by event time, consumed as u advances.
    let mut comp: Vec<usize> = (0..n)
        .filter(|&i| ipcw.kind[i] == SubjectKind::Competing && ipcw.time[i] <= ipcw.tau)
        .collect();
    comp.sort_by(|&a, &b| ipcw.time[a].total_cmp(&ipcw.time[b]));
    let mut next = 0;
    let mut a0 = 0.0;
    let mut a1 = DVector::zeros(q);
    let mut a2b = DVector::zeros(q);

    // Per censoring time u <= tau: q(u) / pi(u) and the compensator increment.
    let mut u_times = Vec::new();
    let mut ratio = Vec::new();
    let mut compensator = Vec::new();
    for (c, &u) in g.jump_times.iter().enumerate() {
        if u > ipcw.tau || u <= 0.0 {
            continue;
        }
        while next < comp.len() && ipcw.time[comp[next]] <= u {
            let i = comp[next];
            let w = 1.0 / (ipcw.g_own[i] * ipcw.g_own[i]);
            let zi = fit.z.row(i).transpose();
            a0 += w;
            a1 += &zi * w;
            a2b += &zi * (zi.dot(beta) * w);
            next += 1;
        }
        let at_risk = g.risk_counts[c];
        if at_risk == 0 {
            return Err(Error::EmptyCensoringRiskSet { time: u });
        }
        // Knots strictly after u.
        let k = fit.knots.partition_point(|&t| t <= u);
        let qu = if k >= m {
            DVector::zeros(q)
        } else {
            let t = decayed.tail(k);
            (&a2b * t.w0 - &a1 * t.w1.dot(beta) - &t.w1 * a1.dot(beta) + &t.w2b * a0
                + &a1 * t.j0
                - &t.j1 * a0)
                * (2.0 / nf)
        };
        let pi = at_risk as f64 / nf;
        let r = qu / pi;
        compensator.push(&r * (g.censor_counts[c] as f64 / at_risk as f64));
        ratio.push(r);
        u_times.push(u);
    }
    let mut cum = Vec::with_capacity(compensator.len() + 1);
    cum.push(DVector::zeros(q));
    for (c, inc) in compensator.iter().enumerate() {
        let next = &cum[c] + inc;
        cum.push(next);
    }
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let t = ipcw.time[j];
        let k = u_times.partition_point(|&u| u <= t);
        let mut phi = -&cum[k];
        if ipcw.kind[j] == SubjectKind::Censored && k > 0 && u_times[k - 1] == t {
            phi += &ratio[k - 1];
        }
        out.push(phi);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    /// Plug-in of the derivative matrix, equal to `S2n`.
    pub omega: DMatrix<f64>,
    /// `n^-1 sum over events of (Z - xbar)^{(x)2}`.
    pub psi: DMatrix<f64>,
    /// First-stage contribution `sigma^2 beta_e^2 D M^-1 D'`.
    pub sigma: DMatrix<f64>,
    /// `n^-1 sum_i Phi_i Phi_i'`.
    pub meat: DMatrix<f64>,
    /// `S2n^-1 meat S2n^-1 / n`.
    pub covariance: DMatrix<f64>,
}

impl VarianceComponents {
    pub fn se(&self) -> Vec<f64> {
        (0..self.covariance.nrows())
            .map(|j| self.covariance[(j, j)].max(0.0).sqrt())
            .collect()
    }
}

pub fn sandwich_variance(
    records: &InfluenceRecords,
    fit: &SubdistFit,
    first: Option<&FirstStageFit>,
) -> Result<VarianceComponents> {
    let n = records.n();
    let q = fit.q();
    let nf = n as f64;
    let mut meat = DMatrix::zeros(q, q);
    for i in 0..n {
        let phi = records.phi(i);
        meat += &phi * phi.transpose();
    }
    meat /= nf;
    let meat = symmetrize(&meat);
    let omega_inv = svd_inverse(&fit.s2n);
    let covariance = symmetrize(&(&omega_inv * &meat * &omega_inv / nf));

    let psi = &records.event_outer / nf;

    let sigma = match (fit.mode, first) {
        (FitMode::Iv, Some(first)) => symmetrize(
            &(&records.d_matrix * &first.gram_inv * records.d_matrix.transpose()
                * (first.sigma2_hat * fit.beta[0] * fit.beta[0])),
        ),
        _ => DMatrix::zeros(q, q),
    };
    Ok(VarianceComponents {
        omega: fit.s2n.clone(),
        psi: symmetrize(&psi),
        sigma,
        meat,
        covariance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    #[serde(with = "crate::artifact::nonfinite")]
    pub z: f64,
    pub p_value: f64,
    pub lower: f64,
    pub upper: f64,
    /// Set when the standard error is zero and the test statistic is infinite.
    pub degenerate: bool,
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Two-sided Wald table at confidence `level`.
pub fn wald_summary(fit: &SubdistFit, variance: &VarianceComponents, level: f64) -> Vec<CoefficientRow> {
    let crit = normal_quantile(0.5 + level / 2.0);
    let std_normal = Normal::standard();
    fit.beta
        .iter()
        .zip(variance.se())
        .enumerate()
        .map(|(j, (&estimate, se))| {
            let degenerate = !(se > 0.0);
            let z = if degenerate {
                if estimate == 0.0 {
                    f64::NAN
                } else {
                    estimate.signum() * f64::INFINITY
                }
            } else {
                estimate / se
            };
            let p_value = if z.is_nan() {
                1.0
            } else {
                2.0 * std_normal.sf(z.abs())
            };
            CoefficientRow {
                name: fit.names.get(j).cloned().unwrap_or_else(|| format!("beta{j}")),
                estimate,
                se,
                z,
                p_value,
                lower: estimate - crit * se,
                upper: estimate + crit * se,
                degenerate,
            }
        })
        .collect()
}
