//! Parallel replicate harness with bias / SE / coverage summaries.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::calibrate::{calibrate_censoring, Calibration};
use super::dgp::{generate_replicate, Replicate};
use super::scenario::{SimScenario, SimTau};
use crate::additive::FitMode;
use crate::data::{center, FitOptions, Tau};
use crate::error::{Error, Result};
use crate::first_stage::{fit_first_stage, weak_iv_diagnostic};
use crate::inference::normal_quantile;
use crate::pipeline::{fit_pipeline, Pipeline};

/// Fraction trimmed from each tail for the robust summaries.
pub const TRIM_FRACTION: f64 = 0.025;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEstimate {
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub rep: u64,
    pub iv: std::result::Result<MethodEstimate, String>,
    pub naive: std::result::Result<MethodEstimate, String>,
    /// First-stage F; `None` when the first stage itself failed.
    pub f_stat: Option<f64>,
    pub weak: bool,
    #[serde(with = "crate::artifact::nonfinite")]
    pub censored_fraction: f64,
    pub rejected: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(with = "crate::artifact::nonfinite")]
    pub bias: f64,
    #[serde(with = "crate::artifact::nonfinite")]
    pub empirical_se: f64,
    #[serde(with = "crate::artifact::nonfinite")]
    pub mean_se: f64,
    #[serde(with = "crate::artifact::nonfinite")]
    pub coverage: f64,
    pub used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub raw: Summary,
    /// Drops the most extreme estimates from each tail.
    pub trimmed: Summary,
    pub successes: usize,
    pub failures: usize,
    pub unreliable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub scenario: SimScenario,
    pub calibration: Calibration,
    pub truth: f64,
    pub level: f64,
    pub iv: MethodSummary,
    pub naive: MethodSummary,
    pub weak_flag_rate: f64,
    pub mean_censored_fraction: f64,
    pub rejected_draws: usize,
    pub replicates: Vec<ReplicateOutcome>,
}

/// Fit options used for a simulated replicate.
pub fn replicate_options(s: &SimScenario) -> FitOptions {
    FitOptions {
        tau: match s.tau {
            SimTau::Cutoff => Tau::Fixed(s.t0),
            SimTau::MaxEvent => Tau::Auto,
            SimTau::Fixed(t) => Tau::Fixed(t),
        },
        ..FitOptions::default()
    }
}

/// Resolves the censoring rate: explicit, or calibrated on the pilot sample.
pub fn resolve_calibration(s: &SimScenario) -> Result<Calibration> {
    match s.censoring_rate {
        Some(rate) => Ok(Calibration {
            rate,
            achieved: f64::NAN,
            degenerate: rate == 0.0,
            iterations: 0,
        }),
        None => calibrate_censoring(s),
    }
}

/// Runs `f` on every replicate in parallel and returns results in
/// replicate order, so output does not depend on the worker count.
pub fn map_replicates<T, F>(s: &SimScenario, rate: f64, workers: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, Result<Replicate>) -> T + Sync + Send,
{
    let work = || -> Vec<T> {
        (0..s.reps as u64)
            .into_par_iter()
            .map(|rep| f(rep, generate_replicate(s, rate, rep)))
            .collect()
    };
    match workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::InvalidOption(format!("cannot start worker pool: {e}")))?;
            Ok(pool.install(work))
        }
        None => Ok(work()),
    }
}

fn estimate_of(p: &Pipeline) -> MethodEstimate {
    MethodEstimate {
        estimate: p.fit.beta[0],
        se: p.variance.se()[0],
    }
}

fn run_replicate(opts: &FitOptions, rep: u64, r: Result<Replicate>) -> ReplicateOutcome {
    let r = match r {
        Ok(r) => r,
        Err(e) => {
            return ReplicateOutcome {
                rep,
                iv: Err(e.code().to_string()),
                naive: Err(e.code().to_string()),
                f_stat: None,
                weak: true,
                censored_fraction: f64::NAN,
                rejected: 0,
            }
        }
    };
    let first = center(&r.dataset).and_then(|d| fit_first_stage(&d));
    let f_stat = first.as_ref().ok().map(|f| f.f_stat);
    let weak = first.as_ref().map(|f| weak_iv_diagnostic(f).weak).unwrap_or(true);
    let run = |mode| {
        fit_pipeline(&r.dataset, opts, mode)
            .map(|p| estimate_of(&p))
            .map_err(|e| e.code().to_string())
    };
    ReplicateOutcome {
        rep,
        iv: run(FitMode::Iv),
        naive: run(FitMode::Naive),
        f_stat,
        weak,
        censored_fraction: r.censored_fraction,
        rejected: r.rejected,
    }
}

fn summarize(estimates: &[MethodEstimate], truth: f64, crit: f64) -> Summary {
    let k = estimates.len();
    if k == 0 {
        return Summary {
            bias: f64::NAN,
            empirical_se: f64::NAN,
            mean_se: f64::NAN,
            coverage: f64::NAN,
            used: 0,
        };
    }
    let kf = k as f64;
    let mean = estimates.iter().map(|e| e.estimate).sum::<f64>() / kf;
    let var = if k > 1 {
        estimates.iter().map(|e| (e.estimate - mean).powi(2)).sum::<f64>() / (kf - 1.0)
    } else {
        0.0
    };
    let covered = estimates
        .iter()
        .filter(|e| (e.estimate - truth).abs() <= crit * e.se)
        .count();
    Summary {
        bias: mean - truth,
        empirical_se: var.sqrt(),
        mean_se: estimates.iter().map(|e| e.se).sum::<f64>() / kf,
        coverage: covered as f64 / kf,
        used: k,
    }
}

fn method_summary(
    outcomes: &[&std::result::Result<MethodEstimate, String>],
    truth: f64,
    crit: f64,
    weak_rate: f64,
) -> MethodSummary {
    let ok: Vec<MethodEstimate> = outcomes
        .iter()
        .filter_map(|o| o.as_ref().ok().cloned())
        .collect();
    let failures = outcomes.len() - ok.len();
    let raw = summarize(&ok, truth, crit);
    let mut sorted = ok.clone();
    sorted.sort_by(|a, b| a.estimate.total_cmp(&b.estimate));
    let cut = (TRIM_FRACTION * sorted.len() as f64).floor() as usize;
    let trimmed = summarize(&sorted[cut..sorted.len() - cut], truth, crit);
    let failure_rate = failures as f64 / outcomes.len().max(1) as f64;
    MethodSummary {
        unreliable: ok.is_empty() || failure_rate > 0.1 || weak_rate > 0.5 || raw.empirical_se > 5.0,
        raw,
        trimmed,
        successes: ok.len(),
        failures,
    }
}

pub fn run_monte_carlo(s: &SimScenario, workers: Option<usize>) -> Result<SimResult> {
    s.validate()?;
    let calibration = resolve_calibration(s)?;
    let opts = replicate_options(s);
    let replicates = map_replicates(s, calibration.rate, workers, |rep, r| {
        run_replicate(&opts, rep, r)
    })?;
    let level = opts.ci_level;
    let crit = normal_quantile(0.5 + level / 2.0);
    let truth = s.beta[0];
    let reps = replicates.len() as f64;
    let weak_flag_rate = replicates.iter().filter(|r| r.weak).count() as f64 / reps;
    let iv = method_summary(
        &replicates.iter().map(|r| &r.iv).collect::<Vec<_>>(),
        truth,
        crit,
        weak_flag_rate,
    );
    let naive = method_summary(
        &replicates.iter().map(|r| &r.naive).collect::<Vec<_>>(),
        truth,
        crit,
        0.0,
    );
    if iv.successes == 0 && naive.successes == 0 {
        let last = replicates
            .last()
            .and_then(|r| r.iv.clone().err())
            .unwrap_or_default();
        return Err(Error::AllReplicatesFailed { reps: s.reps, last });
    }
    let fractions: Vec<f64> = replicates
        .iter()
        .map(|r| r.censored_fraction)
        .filter(|f| f.is_finite())
        .collect();
    Ok(SimResult {
        scenario: s.clone(),
        calibration,
        truth,
        level,
        iv,
        naive,
        weak_flag_rate,
        mean_censored_fraction: fractions.iter().sum::<f64>() / fractions.len().max(1) as f64,
        rejected_draws: replicates.iter().map(|r| r.rejected).sum(),
        replicates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimScenario {
        let mut s = SimScenario::linear(150, 0.4, 0.4, 0.3);
        s.reps = 12;
        s.pilot_size = 5000;
        s
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let s = small();
        let a = run_monte_carlo(&s, Some(1)).unwrap();
        let b = run_monte_carlo(&s, Some(4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iv.successes + a.iv.failures, s.reps);
        assert!((0.0..=1.0).contains(&a.iv.raw.coverage));
    }

    #[test]
    fn trimming_drops_tails() {
        let est: Vec<_> = (0..40)
            .map(|i| Ok(MethodEstimate {
                estimate: if i == 0 { 1e6 } else { 0.5 },
                se: 0.1,
            }))
            .collect();
        let refs: Vec<_> = est.iter().collect();
        let m = method_summary(&refs, 0.5, 1.96, 0.0);
        assert!(m.raw.bias > 1e4);
        assert_eq!(m.trimmed.bias, 0.0);
        assert_eq!(m.trimmed.used, 38);
    }
}
