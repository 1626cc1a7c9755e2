//! Exponential censoring rate calibrated to a target censoring fraction.

use serde::{Deserialize, Serialize};

use super::dgp::{draw_latent, pilot_rng, LatentSubject};
use super::scenario::SimScenario;
use crate::error::{Error, Result};

pub const RATE_MIN: f64 = 1e-6;
pub const RATE_MAX: f64 = 1e3;
/// Accepted distance between realized and target censoring fraction.
pub const CALIBRATION_TOL: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub rate: f64,
    #[serde(with = "crate::artifact::nonfinite")]
    pub achieved: f64,
    /// Target 0: no censoring, rate pinned at zero.
    pub degenerate: bool,
    pub iterations: usize,
}

/// Censoring fraction on a pilot sample, with common random numbers so that
/// the fraction is monotone in `rate`.
pub fn censored_fraction(pilot: &[LatentSubject], rate: f64) -> f64 {
    if rate <= 0.0 {
        return 0.0;
    }
    let censored = pilot
        .iter()
        .filter(|l| l.censor_draw / rate < l.time)
        .count();
    censored as f64 / pilot.len() as f64
}

pub fn pilot_sample(s: &SimScenario) -> Vec<LatentSubject> {
    let mut rng = pilot_rng(s.seed);
    (0..s.pilot_size).map(|_| draw_latent(s, &mut rng).0).collect()
}

pub fn calibrate_censoring(s: &SimScenario) -> Result<Calibration> {
    s.validate()?;
    if s.target_censoring == 0.0 {
        return Ok(Calibration {
            rate: 0.0,
            achieved: 0.0,
            degenerate: true,
            iterations: 0,
        });
    }
    let pilot = pilot_sample(s);
    calibrate_on(&pilot, s.target_censoring)
}

/// Bisection on `log(rate)` over `[RATE_MIN, RATE_MAX]`.
pub fn calibrate_on(pilot: &[LatentSubject], target: f64) -> Result<Calibration> {
    let (mut lo, mut hi) = (RATE_MIN.ln(), RATE_MAX.ln());
    let mut f_lo = censored_fraction(pilot, lo.exp());
    let mut f_hi = censored_fraction(pilot, hi.exp());
    if target < f_lo - CALIBRATION_TOL || target > f_hi + CALIBRATION_TOL {
        return Err(Error::CalibrationFailed { target });
    }
    for iterations in 1..=200 {
        let mid = 0.5 * (lo + hi);
        let f = censored_fraction(pilot, mid.exp());
        if f < f_lo || f > f_hi {
            return Err(Error::CalibrationNotMonotone);
        }
        if (f - target).abs() <= CALIBRATION_TOL {
            return Ok(Calibration {
                rate: mid.exp(),
                achieved: f,
                degenerate: false,
                iterations,
            });
        }
        if f < target {
            lo = mid;
            f_lo = f;
        } else {
            hi = mid;
            f_hi = f;
        }
    }
    Err(Error::CalibrationFailed { target })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_target_is_degenerate() {
        let mut s = SimScenario::linear(100, 0.4, 0.4, 0.0);
        s.pilot_size = 1000;
        let c = calibrate_censoring(&s).unwrap();
        assert!(c.degenerate);
        assert_eq!(c.rate, 0.0);
    }

    #[test]
    fn doubling_rate_increases_censoring() {
        let mut s = SimScenario::linear(100, 0.4, 0.4, 0.3);
        s.pilot_size = 5000;
        let pilot = pilot_sample(&s);
        let mut r = 0.01;
        let mut prev = censored_fraction(&pilot, r);
        while r < 100.0 {
            r *= 2.0;
            let f = censored_fraction(&pilot, r);
            assert!(f >= prev);
            prev = f;
        }
    }

    #[test]
    fn reaches_target_on_pilot() {
        let mut s = SimScenario::linear(100, 0.4, 0.4, 0.3);
        s.pilot_size = 5000;
        let c = calibrate_censoring(&s).unwrap();
        assert!((c.achieved - 0.3).abs() <= CALIBRATION_TOL);
        assert!(c.rate > 0.0);
    }
}
