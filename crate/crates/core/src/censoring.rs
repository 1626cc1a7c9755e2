//! Reversed Kaplan-Meier for the censoring distribution and the IPCW
//! at-risk processes built from it.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Product-limit estimate of `G(t) = P(C >= t)`.
///
/// `values[k]` is the estimate just after `jump_times[k]`, i.e. `P(C > t_k)`.
/// [`CensoringSurvival::eval`] returns the left-continuous `P(C >= t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoringSurvival {
    pub jump_times: Vec<f64>,
    pub values: Vec<f64>,
    pub risk_counts: Vec<usize>,
    pub censor_counts: Vec<usize>,
}

impl CensoringSurvival {
    /// `P(C >= t)`: product over censoring times strictly below `t`.
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.jump_times.partition_point(|&c| c < t);
        if k == 0 {
            1.0
        } else {
            self.values[k - 1]
        }
    }

    /// `P(C > t)`: product over censoring times at or below `t`.
    pub fn eval_right(&self, t: f64) -> f64 {
        let k = self.jump_times.partition_point(|&c| c <= t);
        if k == 0 {
            1.0
        } else {
            self.values[k - 1]
        }
    }

    /// Fails when the estimate has dropped to zero by `tau`.
    pub fn check_positive(&self, tau: f64) -> Result<()> {
        let g = self.eval(tau);
        if g > 0.0 {
            return Ok(());
        }
        let k = self.values.iter().position(|&v| v <= 0.0).unwrap_or(0);
        Err(Error::CensoringExhausted {
            time: self.jump_times.get(k).copied().unwrap_or(tau),
            tau,
        })
    }
}

/// Reversed product-limit estimator: censorings are the events, failures
/// the censorings. At tied times failures are ordered first, so a subject
/// failing at `c` is still in the censoring risk set at `c`.
pub fn fit_km_censoring(dataset: &Dataset) -> Result<CensoringSurvival> {
    if dataset.subjects.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut times: Vec<(f64, bool)> = dataset
        .subjects
        .iter()
        .map(|s| (s.time, s.is_censored()))
        .collect();
    times.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = times.len();
    let mut out = CensoringSurvival {
        jump_times: Vec::new(),
        values: Vec::new(),
        risk_counts: Vec::new(),
        censor_counts: Vec::new(),
    };
    let mut surv = 1.0;
    let mut i = 0;
    while i < n {
        let t = times[i].0;
        let mut j = i;
        let mut d = 0;
        while j < n && times[j].0 == t {
            d += times[j].1 as usize;
            j += 1;
        }
        if d > 0 {
            let at_risk = n - i;
            surv *= 1.0 - d as f64 / at_risk as f64;
            out.jump_times.push(t);
            out.values.push(surv);
            out.risk_counts.push(at_risk);
            out.censor_counts.push(d);
        }
        i = j;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubjectKind {
    /// Failed from the cause of interest.
    Event,
    Censored,
    /// Failed from a competing cause; stays in the risk set with decaying weight.
    Competing,
}

/// IPCW weights materialized on the merged grid of observed times up to tau.
///
/// The grid holds every distinct observed time `<= tau` plus `tau` itself.
/// Integrands are left-continuous, so the value at grid point `t_k` is also
/// the value on the whole interval `(t_{k-1}, t_k]` (with `t_0 = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct IpcwProcesses {
    pub tau: f64,
    pub grid: Vec<f64>,
    /// `G(t_k)` at each grid point.
    pub g_grid: Vec<f64>,
    pub kind: Vec<SubjectKind>,
    pub time: Vec<f64>,
    /// `G(T_i)`.
    pub g_own: Vec<f64>,
    /// Number of grid points `<= T_i`; subject `i` is fully at risk on grid
    /// indices `0..last[i]`.
    pub last: Vec<usize>,
    /// Grid index of the subject's own event, when it is a cause-of-interest
    /// failure at or before tau.
    pub event_index: Vec<Option<usize>>,
}

pub fn build_ipcw(dataset: &Dataset, g: &CensoringSurvival, tau: f64) -> Result<IpcwProcesses> {
    if dataset.subjects.is_empty() {
        return Err(Error::EmptyInput);
    }
    g.check_positive(tau)?;
    let mut grid: Vec<f64> = dataset
        .subjects
        .iter()
        .map(|s| s.time)
        .filter(|&t| t <= tau && t > 0.0)
        .collect();
    grid.push(tau);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let g_grid = grid.iter().map(|&t| g.eval(t)).collect();
    let n = dataset.n();
    let mut out = IpcwProcesses {
        tau,
        grid,
        g_grid,
        kind: Vec::with_capacity(n),
        time: Vec::with_capacity(n),
        g_own: Vec::with_capacity(n),
        last: Vec::with_capacity(n),
        event_index: Vec::with_capacity(n),
    };
    for (i, s) in dataset.subjects.iter().enumerate() {
        let kind = if s.status == 0 {
            SubjectKind::Censored
        } else if s.status == dataset.cause_of_interest {
            SubjectKind::Event
        } else {
            SubjectKind::Competing
        };
        let g_own = g.eval(s.time);
        if kind == SubjectKind::Competing && s.time < tau && g_own <= 0.0 {
            return Err(Error::UndefinedWeight {
                subject: i,
                time: s.time,
            });
        }
        let last = out.grid.partition_point(|&t| t <= s.time);
        let event_index = (kind == SubjectKind::Event && s.time <= tau && s.time > 0.0)
            .then(|| last - 1);
        out.kind.push(kind);
        out.time.push(s.time);
        out.g_own.push(g_own);
        out.last.push(last);
        out.event_index.push(event_index);
    }
    Ok(out)
}

impl IpcwProcesses {
    pub fn n(&self) -> usize {
        self.kind.len()
    }

    /// `R_i(t) = r_i(t) G(t) / G(T_i ^ t)` with `G` left-continuous.
    pub fn r_hat(&self, g: &CensoringSurvival, i: usize, t: f64) -> Result<f64> {
        let ti = self.time[i];
        if t <= ti {
            return Ok(1.0);
        }
        match self.kind[i] {
            SubjectKind::Censored => Ok(0.0),
            _ => {
                let denom = self.g_own[i];
                if denom <= 0.0 {
                    return Err(Error::UndefinedWeight { subject: i, time: t });
                }
                Ok(g.eval(t) / denom)
            }
        }
    }

    /// `Y_i(t) = R_i(t) (1 - N_i(t-))`.
    pub fn y_hat(&self, g: &CensoringSurvival, i: usize, t: f64) -> Result<f64> {
        if t <= self.time[i] {
            return Ok(1.0);
        }
        match self.kind[i] {
            SubjectKind::Competing => self.r_hat(g, i, t),
            _ => Ok(0.0),
        }
    }

    /// `Y_i` at grid index `k`.
    pub fn y_grid(&self, i: usize, k: usize) -> f64 {
        if k < self.last[i] {
            1.0
        } else if self.kind[i] == SubjectKind::Competing {
            self.g_grid[k] / self.g_own[i]
        } else {
            0.0
        }
    }

    /// Interval lengths `t_k - t_{k-1}`.
    pub fn deltas(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.grid
            .iter()
            .map(|&t| {
                let d = t - prev;
                prev = t;
                d
            })
            .collect()
    }

    /// Copy with every censoring weight set to one; on data without
    /// censoring this is identical to the estimated weights.
    pub fn with_unit_weights(&self) -> IpcwProcesses {
        let mut out = self.clone();
        out.g_grid.iter_mut().for_each(|g| *g = 1.0);
        out.g_own.iter_mut().for_each(|g| *g = 1.0);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Subject;

    fn ds(rows: &[(f64, u32)]) -> Dataset {
        let subjects = rows
            .iter()
            .map(|&(time, status)| Subject {
                id: String::new(),
                time,
                status,
                exposure: 0.0,
                instrument: 0.0,
                covariates: vec![],
            })
            .collect();
        let mut d = Dataset::new(
            subjects,
            if rows.iter().any(|r| r.1 == 1) { 1 } else { rows[0].1 },
        )
        .unwrap();
        d.cause_of_interest = 1;
        d
    }

    #[test]
    fn no_censoring_gives_unit_survival() {
        let g = fit_km_censoring(&ds(&[(1.0, 1), (2.0, 2), (3.0, 1)])).unwrap();
        assert!(g.jump_times.is_empty());
        for t in [0.0, 0.5, 10.0] {
            assert_eq!(g.eval(t), 1.0);
        }
    }

    #[test]
    fn hand_product_limit() {
        let g = fit_km_censoring(&ds(&[(1.0, 0), (2.0, 1), (3.0, 0)])).unwrap();
        assert_eq!(g.eval(0.0), 1.0);
        assert_eq!(g.eval(1.0), 1.0);
        assert!((g.eval(1.5) - 2.0 / 3.0).abs() < 1e-15);
        assert!((g.eval(3.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(g.eval(3.5), 0.0);
        assert!(g.check_positive(3.0).is_ok());
        assert!(matches!(
            g.check_positive(3.5),
            Err(Error::CensoringExhausted { .. })
        ));
    }

    #[test]
    fn tied_failure_stays_in_censoring_risk_set() {
        // At t = 2 one failure and one censoring; risk set at 2 holds 3 subjects.
        let g = fit_km_censoring(&ds(&[(1.0, 1), (2.0, 1), (2.0, 0), (4.0, 1)])).unwrap();
        assert_eq!(g.risk_counts, vec![3]);
        assert!((g.eval_right(2.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(g.eval(2.0), 1.0);
    }

    #[test]
    fn ipcw_weights_follow_definitions() {
        // Censorings at 0.5 (5 at risk) and 2 (2 at risk): G = 0.8 on (0.5, 2], 0.4 after.
        let d = ds(&[(0.5, 0), (1.0, 2), (1.5, 1), (2.0, 0), (3.0, 1)]);
        let g = fit_km_censoring(&d).unwrap();
        assert!((g.eval(1.0) - 0.8).abs() < 1e-15);
        assert!((g.eval(3.0) - 0.4).abs() < 1e-15);
        let w = build_ipcw(&d, &g, 3.0).unwrap();
        // competing subject: Y(3) = G(3)/G(1) = 0.5
        assert!((w.y_hat(&g, 1, 3.0).unwrap() - 0.5).abs() < 1e-15);
        // censored at 2: zero afterwards
        assert_eq!(w.r_hat(&g, 3, 2.5).unwrap(), 0.0);
        assert_eq!(w.r_hat(&g, 3, 2.0).unwrap(), 1.0);
        // event subject at own time
        assert_eq!(w.r_hat(&g, 2, 1.5).unwrap(), 1.0);
        assert_eq!(w.y_hat(&g, 2, 1.6).unwrap(), 0.0);
        for i in 0..d.n() {
            for (k, &t) in w.grid.iter().enumerate() {
                let y = w.y_hat(&g, i, t).unwrap();
                assert!((w.y_grid(i, k) - y).abs() < 1e-15);
                assert!((0.0..=1.0).contains(&w.r_hat(&g, i, t).unwrap()));
            }
        }
        assert_eq!(w.event_index[2], Some(2));
        assert_eq!(w.event_index[4], Some(4));
    }
}
