//! Data-generating process for the simulation study.
//!
//! Cause 1 has conditional distribution
//! `F(t | e=1) = [1 - {1 - p(1 - e^-t)} exp(-lp t*)] / P1(X)` with
//! `t* = min(t, t0)` and `P1(X) = 1 - (1 - p) exp(-lp t0)`; cause 2 is
//! exponential truncated at `t0`. Covariate draws whose cause-1 curve would
//! decrease on `[0, t0]` are redrawn and counted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use super::scenario::{Link, SimScenario, UnmeasuredLaw};
use crate::data::{Dataset, Subject};
use crate::error::{Error, Result};

/// Bisection tolerance for inverse-CDF draws.
pub const INVERSION_TOL: f64 = 1e-10;

/// Independent stream for replicate `rep` under master `seed`.
pub fn replicate_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Stream reserved for censoring calibration.
pub fn pilot_rng(seed: u64) -> ChaCha8Rng {
    replicate_rng(seed, u64::MAX)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariates {
    pub instrument: f64,
    pub observed: f64,
    pub unmeasured: f64,
    pub exposure: f64,
}

impl Covariates {
    pub fn linear_predictor(&self, s: &SimScenario) -> f64 {
        s.beta[0] * self.exposure + s.beta[1] * self.observed + s.beta[2] * self.unmeasured
    }
}

/// Smallest linear predictor for which the cause-1 subdistribution is
/// nondecreasing on `[0, t0]`.
pub fn min_linear_predictor(s: &SimScenario) -> f64 {
    let e = (-s.t0).exp();
    -s.p_mix * e / (1.0 - s.p_mix + s.p_mix * e)
}

/// `P(e = 1 | X)`.
pub fn prob_cause1(s: &SimScenario, lp: f64) -> f64 {
    1.0 - (1.0 - s.p_mix) * (-lp * s.t0).exp()
}

/// Unconditional-on-cause subdistribution `P(T <= t, e = 1 | X)`.
pub fn subdistribution1(s: &SimScenario, lp: f64, t: f64) -> f64 {
    let ts = t.min(s.t0);
    1.0 - (1.0 - s.p_mix * (1.0 - (-t).exp())) * (-lp * ts).exp()
}

pub fn cdf_cause1(s: &SimScenario, lp: f64, t: f64) -> f64 {
    subdistribution1(s, lp, t) / prob_cause1(s, lp)
}

pub fn cdf_cause2(s: &SimScenario, t: f64) -> f64 {
    let ts = t.min(s.t0);
    (1.0 - (-ts).exp()) / (1.0 - (-s.t0).exp())
}

/// Cumulative incidence of cause 1 at covariates whose linear predictor is
/// zero: `p (1 - e^-t)`.
pub fn cif_at_zero(s: &SimScenario, t: f64) -> f64 {
    s.p_mix * (1.0 - (-t).exp())
}

/// Solves `cdf_cause1(t) = u` by bisection, doubling the upper bracket as needed.
pub fn invert_cause1(s: &SimScenario, lp: f64, u: f64) -> f64 {
    let f = |t: f64| cdf_cause1(s, lp, t);
    let mut hi = 1.0;
    while f(hi) < u && hi < 1e6 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > INVERSION_TOL {
        let mid = 0.5 * (lo + hi);
        if f(mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn invert_cause2(s: &SimScenario, u: f64) -> f64 {
    -(1.0 - u * (1.0 - (-s.t0).exp())).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentSubject {
    pub x: Covariates,
    pub cause: u32,
    pub time: f64,
    /// Standard exponential draw; censoring time is `e / rate`.
    pub censor_draw: f64,
}

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn draw_covariates<R: Rng>(s: &SimScenario, rng: &mut R) -> Covariates {
    let instrument = if rng.random::<bool>() { 1.0 } else { 0.0 };
    let observed: f64 = StandardNormal.sample(rng);
    let unmeasured = match s.unmeasured {
        UnmeasuredLaw::StandardNormal => StandardNormal.sample(rng),
        UnmeasuredLaw::Uniform { half_width } => rng.random_range(-half_width..half_width),
    };
    let exposure = match s.link {
        Link::Linear => s.gamma2 * instrument + 0.5 * observed - unmeasured,
        Link::Logistic(c) => {
            let pr = expit(
                c.intercept + c.instrument * instrument + c.observed * observed + c.unmeasured * unmeasured,
            );
            if rng.random::<f64>() < pr {
                1.0
            } else {
                0.0
            }
        }
    };
    Covariates {
        instrument,
        observed,
        unmeasured,
        exposure,
    }
}

/// Draws one subject before censoring. Returns the subject and the number of
/// covariate draws rejected on the way.
pub fn draw_latent<R: Rng>(s: &SimScenario, rng: &mut R) -> (LatentSubject, usize) {
    let lp_min = min_linear_predictor(s);
    let mut rejected = 0;
    let (x, p1, lp) = loop {
        let x = draw_covariates(s, rng);
        let lp = x.linear_predictor(s);
        let p1 = prob_cause1(s, lp);
        if lp >= lp_min && (0.0..=1.0).contains(&p1) {
            break (x, p1, lp);
        }
        rejected += 1;
    };
    let cause = if rng.random::<f64>() < p1 { 1 } else { 2 };
    let u: f64 = rng.random();
    let time = if cause == 1 {
        invert_cause1(s, lp, u)
    } else {
        invert_cause2(s, u)
    };
    let censor_draw: f64 = Exp1.sample(rng);
    (
        LatentSubject {
            x,
            cause,
            time,
            censor_draw,
        },
        rejected,
    )
}

#[derive(Debug, Clone)]
pub struct Replicate {
    pub dataset: Dataset,
    pub latent: Vec<LatentSubject>,
    /// Covariate draws rejected because the cause-1 curve would decrease.
    pub rejected: usize,
    pub censored_fraction: f64,
}

/// Generates replicate `rep_index` with exponential censoring at `rate`
/// (`rate = 0` means no censoring).
pub fn generate_replicate(s: &SimScenario, rate: f64, rep_index: u64) -> Result<Replicate> {
    s.validate()?;
    let mut rng = replicate_rng(s.seed, rep_index);
    let mut latent = Vec::with_capacity(s.n);
    let mut rejected = 0;
    for _ in 0..s.n {
        let (l, r) = draw_latent(s, &mut rng);
        rejected += r;
        latent.push(l);
    }
    // Cause 2 plateaus at t0, so no draw may land beyond it.
    assert!(
        latent.iter().all(|l| l.cause != 2 || l.time <= s.t0 + INVERSION_TOL),
        "cause-2 draw beyond t0 in replicate {rep_index}"
    );
    let mut censored = 0;
    let subjects: Vec<Subject> = latent
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let c = if rate > 0.0 {
                l.censor_draw / rate
            } else {
                f64::INFINITY
            };
            let (time, status) = if l.time <= c { (l.time, l.cause) } else { (c, 0) };
            censored += (status == 0) as usize;
            Subject {
                id: (i + 1).to_string(),
                time,
                status,
                exposure: l.x.exposure,
                instrument: l.x.instrument,
                covariates: vec![l.x.observed],
            }
        })
        .collect();
    if !subjects.iter().any(|s| s.status == 1) {
        return Err(Error::InvalidScenario(format!(
            "replicate {rep_index} has no cause-1 events"
        )));
    }
    let dataset = Dataset::new(subjects, 1)?.with_covariate_names(vec!["x_o".into()])?;
    Ok(Replicate {
        dataset,
        latent,
        rejected,
        censored_fraction: censored as f64 / s.n as f64,
    })
}
