//! Second-stage estimating equations for the additive subdistribution
//! hazard model: closed-form coefficients and the baseline cumulative hazard.
//!
//! Every integrand is piecewise constant on the merged grid of observed
//! times, so all integrals are exact finite sums. Risk-set moments are built
//! with one sweep: fully at-risk subjects contribute through suffix sums over
//! their last grid index, and competing-cause subjects contribute through
//! prefix sums of `Z / G(T_i)^2` rescaled by `G(t_k)^2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::censoring::{IpcwProcesses, SubjectKind};
use crate::data::{Dataset, FitOptions};
use crate::error::{Error, Result};
use crate::first_stage::{design_matrix, FirstStageFit};
use crate::linalg::{condition_number, max_abs, refined_solve, CONDITION_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitMode {
    /// Fitted exposure from the first stage.
    Iv,
    /// Observed exposure, no instrument.
    Naive,
}

impl std::fmt::Display for FitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FitMode::Iv => "iv",
            FitMode::Naive => "naive",
        })
    }
}

/// Baseline cumulative hazard on the merged grid.
///
/// Between knots the estimate is linear (the `dt` part of the increment);
/// at a knot it jumps by `d_k / S0_k`. `values[k]` is the right-continuous
/// value at `knots[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineCurve {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    /// Slope on `(t_{k-1}, t_k)`, equal to `-beta' xbar_k`.
    pub slopes: Vec<f64>,
    /// Running maximum of `0, values[0..=k]`.
    pub prefix_max: Vec<f64>,
}

impl BaselineCurve {
    fn locate(&self, t: f64) -> usize {
        self.knots.partition_point(|&s| s < t)
    }

    /// Raw estimate; may decrease locally. Constant beyond the last knot.
    pub fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 || self.knots.is_empty() {
            return 0.0;
        }
        let k = self.locate(t);
        if k == self.knots.len() {
            return *self.values.last().unwrap();
        }
        if self.knots[k] == t {
            return self.values[k];
        }
        let (t_prev, h_prev) = if k == 0 {
            (0.0, 0.0)
        } else {
            (self.knots[k - 1], self.values[k - 1])
        };
        h_prev + (t - t_prev) * self.slopes[k]
    }

    /// Monotone modification `max_{s <= t} H(s)`. Within a gap the raw curve
    /// is linear, so the supremum is attained at a knot or at `t` itself.
    pub fn eval_mod(&self, t: f64) -> f64 {
        if t <= 0.0 || self.knots.is_empty() {
            return 0.0;
        }
        let k = self.knots.partition_point(|&s| s <= t);
        let knot_max = if k == 0 { 0.0 } else { self.prefix_max[k - 1] };
        knot_max.max(self.eval(t))
    }
}

/// Running maximum of a sequence.
pub fn monotone_baseline(h0_star: &[f64]) -> Vec<f64> {
    let mut best = f64::NEG_INFINITY;
    h0_star
        .iter()
        .map(|&h| {
            best = best.max(h);
            best
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubdistFit {
    pub mode: FitMode,
    /// Exposure coefficient first, then observed covariates.
    pub beta: Vec<f64>,
    pub s1n: DVector<f64>,
    pub s2n: DMatrix<f64>,
    /// Condition number of the correlation-scaled `S2n`.
    pub condition: f64,
    /// `max |S2n beta - S1n|`.
    pub equation_residual: f64,
    pub tau: f64,
    pub n: usize,
    pub names: Vec<String>,
    /// Offsets of exposure and covariates, to re-center original-scale inputs.
    pub offsets: Vec<f64>,
    /// Distinct cause-of-interest event times up to tau.
    pub grid: Vec<f64>,
    /// Baseline on `grid`, raw and monotone.
    pub h0_star: Vec<f64>,
    pub h0_mod: Vec<f64>,
    /// Merged grid of all observed times up to tau, plus tau.
    pub knots: Vec<f64>,
    pub deltas: Vec<f64>,
    /// `sum_i Y_i^2` per knot.
    pub s0: Vec<f64>,
    /// Weighted covariate mean per knot.
    pub xbar: Vec<DVector<f64>>,
    /// Events of interest per knot and the sum of their covariate rows.
    pub events: Vec<usize>,
    pub event_sums: Vec<DVector<f64>>,
    pub baseline: BaselineCurve,
    /// Second-stage covariate rows used in the fit (centered scale).
    pub z: DMatrix<f64>,
}

impl SubdistFit {
    pub fn q(&self) -> usize {
        self.beta.len()
    }

    pub fn beta_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.beta)
    }

    /// Baseline jump `d_k / S0_k` per knot.
    pub fn jumps(&self) -> Vec<f64> {
        self.events
            .iter()
            .zip(&self.s0)
            .map(|(&d, &s)| if d > 0 { d as f64 / s } else { 0.0 })
            .collect()
    }
}

/// Second-stage rows `(fitted exposure, X_o)`, i.e. `X_IOE X_Io_i`.
pub fn iv_rows(dataset: &Dataset, first: &FirstStageFit) -> DMatrix<f64> {
    design_matrix(dataset) * first.x_ioe.transpose()
}

/// Second-stage rows `(X_e, X_o)`.
pub fn naive_rows(dataset: &Dataset) -> DMatrix<f64> {
    let p = dataset.p;
    DMatrix::from_fn(dataset.n(), p + 1, |i, j| {
        let s = &dataset.subjects[i];
        if j == 0 {
            s.exposure
        } else {
            s.covariates[j - 1]
        }
    })
}

fn names_and_offsets(dataset: &Dataset) -> (Vec<String>, Vec<f64>) {
    let mut names = vec!["exposure".to_string()];
    names.extend(dataset.covariate_names.iter().cloned());
    (names, dataset.centering_offsets[1..].to_vec())
}

fn check_options(dataset: &Dataset, ipcw: &IpcwProcesses, opts: &FitOptions) -> Result<()> {
    let tau = opts.resolve_tau(dataset)?;
    if tau != ipcw.tau {
        return Err(Error::InvalidOption(format!(
            "weights were built for tau = {}, options request tau = {tau}",
            ipcw.tau
        )));
    }
    if ipcw.n() != dataset.n() {
        return Err(Error::DimensionMismatch {
            expected: dataset.n(),
            actual: ipcw.n(),
        });
    }
    Ok(())
}

pub fn fit_iv(
    dataset: &Dataset,
    first: &FirstStageFit,
    ipcw: &IpcwProcesses,
    opts: &FitOptions,
) -> Result<SubdistFit> {
    check_options(dataset, ipcw, opts)?;
    let (names, offsets) = names_and_offsets(dataset);
    fit_rows(iv_rows(dataset, first), ipcw, FitMode::Iv, names, offsets)
}

pub fn fit_naive(dataset: &Dataset, ipcw: &IpcwProcesses, opts: &FitOptions) -> Result<SubdistFit> {
    check_options(dataset, ipcw, opts)?;
    let (names, offsets) = names_and_offsets(dataset);
    fit_rows(naive_rows(dataset), ipcw, FitMode::Naive, names, offsets)
}

/// Weighted mean and centered second moment, updated one point at a time
/// (Welford) so that nearly constant risk sets do not lose precision to
/// cancellation.
#[derive(Clone)]
struct RunningMoments {
    weight: f64,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl RunningMoments {
    fn new(q: usize) -> Self {
        RunningMoments {
            weight: 0.0,
            mean: DVector::zeros(q),
            m2: DMatrix::zeros(q, q),
        }
    }

    fn push(&mut self, z: &DVector<f64>, w: f64) {
        self.weight += w;
        let before = z - &self.mean;
        self.mean += &before * (w / self.weight);
        let after = z - &self.mean;
        self.m2 += &before * after.transpose() * w;
    }

    /// Pools two groups, the second with all weights scaled by `scale`.
    fn merged(&self, other: &RunningMoments, scale: f64) -> RunningMoments {
        let wb = other.weight * scale;
        if wb == 0.0 {
            return self.clone();
        }
        if self.weight == 0.0 {
            return RunningMoments {
                weight: wb,
                mean: other.mean.clone(),
                m2: &other.m2 * scale,
            };
        }
        let weight = self.weight + wb;
        let d = &other.mean - &self.mean;
        RunningMoments {
            weight,
            mean: &self.mean + &d * (wb / weight),
            m2: &self.m2 + &other.m2 * scale + &d * d.transpose() * (self.weight * wb / weight),
        }
    }
}

/// Per-knot risk-set weight `S0_k`, mean `xbar_k` and centered second
/// moment `S2_k - S1_k S1_k' / S0_k`, all with weights `Y_i(t_k)^2`.
struct Moments {
    s0: Vec<f64>,
    xbar: Vec<DVector<f64>>,
    centered: Vec<DMatrix<f64>>,
}

fn risk_moments(z: &DMatrix<f64>, ipcw: &IpcwProcesses) -> Moments {
    let m = ipcw.grid.len();
    let q = z.ncols();
    // Subjects by last at-risk index (0..=m).
    let mut by_last: Vec<Vec<usize>> = vec![Vec::new(); m + 1];
    for i in 0..ipcw.n() {
        by_last[ipcw.last[i]].push(i);
    }
    let row = |i: usize| z.row(i).transpose();
    // Fully at risk at k when last > k: grows as k decreases.
    let mut active = Vec::with_capacity(m);
    let mut acc = RunningMoments::new(q);
    for k in (0..m).rev() {
        for &i in &by_last[k + 1] {
            acc.push(&row(i), 1.0);
        }
        active.push(acc.clone());
    }
    active.reverse();
    // Competing-cause subjects past their event time at k (last <= k),
    // with weight G(t_k)^2 / G(T_i)^2: accumulate 1 / G(T_i)^2, scale later.
    let mut decayed = RunningMoments::new(q);
    let mut out = Moments {
        s0: Vec::with_capacity(m),
        xbar: Vec::with_capacity(m),
        centered: Vec::with_capacity(m),
    };
    for k in 0..m {
        for &i in &by_last[k] {
            if ipcw.kind[i] == SubjectKind::Competing {
                decayed.push(&row(i), 1.0 / (ipcw.g_own[i] * ipcw.g_own[i]));
            }
        }
        let g2 = ipcw.g_grid[k] * ipcw.g_grid[k];
        let all = active[k].merged(&decayed, g2);
        out.s0.push(all.weight);
        out.xbar.push(all.mean);
        out.centered.push(all.m2);
    }
    out
}

/// Fits the second stage for arbitrary covariate rows. `fit_iv` and
/// `fit_naive` differ only in the rows they pass.
pub fn fit_rows(
    z: DMatrix<f64>,
    ipcw: &IpcwProcesses,
    mode: FitMode,
    names: Vec<String>,
    offsets: Vec<f64>,
) -> Result<SubdistFit> {
    let n = ipcw.n();
    let q = z.ncols();
    let m = ipcw.grid.len();
    if z.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: z.nrows(),
        });
    }
    let mut events = vec![0usize; m];
    let mut event_sums = vec![DVector::zeros(q); m];
    for i in 0..n {
        if let Some(k) = ipcw.event_index[i] {
            events[k] += 1;
            event_sums[k] += z.row(i).transpose();
        }
    }
    if events.iter().all(|&d| d == 0) {
        return Err(Error::EmptyGrid { tau: ipcw.tau });
    }
    let mom = risk_moments(&z, ipcw);
    let deltas = ipcw.deltas();
    let nf = n as f64;
    let mut s1n = DVector::zeros(q);
    let mut s2n = DMatrix::zeros(q, q);
    for k in 0..m {
        let s0 = mom.s0[k];
        if s0 < 1e-12 {
            return Err(Error::RiskSetExhausted {
                time: ipcw.grid[k],
                denominator: s0,
            });
        }
        if events[k] > 0 {
            s1n += &event_sums[k] - &mom.xbar[k] * events[k] as f64;
        }
        if deltas[k] > 0.0 {
            s2n += &mom.centered[k] * deltas[k];
        }
    }
    s1n /= nf;
    s2n /= nf;
    let s2n = (&s2n + s2n.transpose()) * 0.5;

    let scale = DMatrix::from_fn(q, q, |a, b| {
        let d = (s2n[(a, a)] * s2n[(b, b)]).sqrt();
        if d > 0.0 {
            s2n[(a, b)] / d
        } else {
            0.0
        }
    });
    let condition = if (0..q).any(|a| !(s2n[(a, a)] > 0.0)) {
        f64::INFINITY
    } else {
        condition_number(&scale)
    };
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::NotIdentifiable { condition });
    }
    let beta = refined_solve(&s2n, &s1n);
    let equation_residual = max_abs(&(&s2n * &beta - &s1n));

    let grid: Vec<f64> = (0..m)
        .filter(|&k| events[k] > 0)
        .map(|k| ipcw.grid[k])
        .collect();
    let mut fit = SubdistFit {
        mode,
        beta: beta.iter().copied().collect(),
        s1n,
        s2n,
        condition,
        equation_residual,
        tau: ipcw.tau,
        n,
        names,
        offsets,
        grid,
        h0_star: Vec::new(),
        h0_mod: Vec::new(),
        knots: ipcw.grid.clone(),
        deltas,
        s0: mom.s0,
        xbar: mom.xbar,
        events,
        event_sums,
        baseline: BaselineCurve {
            knots: Vec::new(),
            values: Vec::new(),
            slopes: Vec::new(),
            prefix_max: Vec::new(),
        },
        z,
    };
    fit.baseline = estimate_baseline(&fit)?;
    let (h0_star, h0_mod) = (0..m)
        .filter(|&k| fit.events[k] > 0)
        .map(|k| (fit.baseline.values[k], fit.baseline.prefix_max[k]))
        .unzip();
    fit.h0_star = h0_star;
    fit.h0_mod = h0_mod;
    assert!(
        fit.h0_mod.windows(2).all(|w| w[0] <= w[1]),
        "monotone baseline must be nondecreasing"
    );
    Ok(fit)
}

/// Baseline cumulative hazard for the fit's current coefficients.
pub fn estimate_baseline(fit: &SubdistFit) -> Result<BaselineCurve> {
    baseline_from_parts(
        &fit.knots,
        &fit.deltas,
        &fit.s0,
        &fit.xbar,
        &fit.events,
        &fit.beta_vec(),
    )
}

/// Accumulates `dH_k = d_k / S0_k - beta' xbar_k (t_k - t_{k-1})`.
pub fn baseline_from_parts(
    knots: &[f64],
    deltas: &[f64],
    s0: &[f64],
    xbar: &[DVector<f64>],
    events: &[usize],
    beta: &DVector<f64>,
) -> Result<BaselineCurve> {
    let m = knots.len();
    let mut values = Vec::with_capacity(m);
    let mut slopes = Vec::with_capacity(m);
    let mut h = 0.0;
    for k in 0..m {
        if s0[k] < 1e-12 {
            return Err(Error::RiskSetExhausted {
                time: knots[k],
                denominator: s0[k],
            });
        }
        let slope = -beta.dot(&xbar[k]);
        h += slope * deltas[k] + events[k] as f64 / s0[k];
        slopes.push(slope);
        values.push(h);
    }
    let prefix_max = monotone_baseline(&values).into_iter().map(|v| v.max(0.0)).collect();
    Ok(BaselineCurve {
        knots: knots.to_vec(),
        values,
        slopes,
        prefix_max,
    })
}
