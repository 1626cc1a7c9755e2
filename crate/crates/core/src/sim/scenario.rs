use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficients of the logistic exposure model
/// `P(X_e = 1) = expit(a + b X_I + c X_o + d X_u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticExposure {
    pub intercept: f64,
    pub instrument: f64,
    pub observed: f64,
    pub unmeasured: f64,
}

impl Default for LogisticExposure {
    /// Chosen to give roughly 18% exposure prevalence with a strong
    /// instrument; these are tuning choices, not estimates from data.
    fn default() -> Self {
        LogisticExposure {
            intercept: -4.4,
            instrument: 3.7,
            observed: 0.3,
            unmeasured: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Link {
    /// `X_e = gamma2 X_I + 0.5 X_o - X_u`.
    Linear,
    /// Binary exposure drawn from a logistic model.
    Logistic(LogisticExposure),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum UnmeasuredLaw {
    StandardNormal,
    Uniform { half_width: f64 },
}

/// Upper integration limit used when fitting simulated data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SimTau {
    /// The cutoff `t0`, beyond which the covariate effect is switched off.
    Cutoff,
    /// Largest observed cause-1 time in the replicate.
    MaxEvent,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub n: usize,
    pub gamma2: f64,
    /// True `(beta_e, beta_o, beta_u)`.
    pub beta: [f64; 3],
    pub p_mix: f64,
    pub t0: f64,
    pub target_censoring: f64,
    pub link: Link,
    pub unmeasured: UnmeasuredLaw,
    pub tau: SimTau,
    pub reps: usize,
    pub seed: u64,
    /// Pilot sample size for censoring calibration.
    pub pilot_size: usize,
    /// Bypasses calibration when set.
    pub censoring_rate: Option<f64>,
}

impl SimScenario {
    /// Linear-link scenario with `beta = (0.5, 0.2, beta3)`.
    pub fn linear(n: usize, gamma2: f64, beta3: f64, target_censoring: f64) -> Self {
        SimScenario {
            n,
            gamma2,
            beta: [0.5, 0.2, beta3],
            p_mix: 0.8,
            t0: 0.6,
            target_censoring,
            link: Link::Linear,
            unmeasured: UnmeasuredLaw::StandardNormal,
            tau: SimTau::Cutoff,
            reps: 1000,
            seed: 20240607,
            pilot_size: 100_000,
            censoring_rate: None,
        }
    }

    /// Binary exposure with a logistic first stage, `n = 986`,
    /// `beta = (0.5, 0.2, 0.2)` and a bounded unmeasured confounder.
    pub fn logistic_default() -> Self {
        SimScenario {
            link: Link::Logistic(LogisticExposure::default()),
            unmeasured: UnmeasuredLaw::Uniform { half_width: 0.5 },
            ..SimScenario::linear(986, 0.0, 0.2, 0.30)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if self.n < 10 {
            return bad(format!("n must be at least 10, got {}", self.n));
        }
        if !(self.p_mix > 0.0 && self.p_mix < 1.0) {
            return bad(format!("p must lie in (0, 1), got {}", self.p_mix));
        }
        if !(self.t0 > 0.0 && self.t0.is_finite()) {
            return bad(format!("t0 must be positive, got {}", self.t0));
        }
        if !(0.0..1.0).contains(&self.target_censoring) {
            return bad(format!(
                "target censoring must lie in [0, 1), got {}",
                self.target_censoring
            ));
        }
        if self.reps == 0 {
            return bad("reps must be positive".into());
        }
        if self.pilot_size < 100 {
            return bad("pilot size must be at least 100".into());
        }
        if self.beta.iter().chain([&self.gamma2]).any(|b| !b.is_finite()) {
            return bad("coefficients must be finite".into());
        }
        if let UnmeasuredLaw::Uniform { half_width } = self.unmeasured {
            if !(half_width > 0.0 && half_width.is_finite()) {
                return bad(format!("uniform half width must be positive, got {half_width}"));
            }
        }
        if let SimTau::Fixed(t) = self.tau {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("tau must be positive, got {t}"));
            }
        }
        if let Some(r) = self.censoring_rate {
            if !(r >= 0.0 && r.is_finite()) {
                return bad(format!("censoring rate must be nonnegative and finite, got {r}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(SimScenario::linear(1000, 0.4, 0.4, 0.3).validate().is_ok());
        assert!(SimScenario::logistic_default().validate().is_ok());
        let mut s = SimScenario::linear(5, 0.4, 0.4, 0.3);
        assert!(s.validate().is_err());
        s.n = 100;
        s.p_mix = 1.0;
        assert!(s.validate().is_err());
        s.p_mix = 0.8;
        s.target_censoring = 1.0;
        assert!(s.validate().is_err());
    }
}
