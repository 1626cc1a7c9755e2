//! Independent reference implementations shared by the integration tests.
//!
//! Everything here is written from the model definitions with plain loops and
//! dense elimination; none of it calls the library's numerical code.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subdist_iv::{Dataset, Subject};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Hand product-limit estimate of `P(C >= t)`: product over distinct
/// censoring times `c < t` of `1 - #censored at c / #{T >= c}`.
pub fn km_oracle(d: &Dataset, t: f64) -> f64 {
    let mut cens: Vec<f64> = d
        .subjects
        .iter()
        .filter(|s| s.status == 0 && s.time < t)
        .map(|s| s.time)
        .collect();
    cens.sort_by(f64::total_cmp);
    cens.dedup();
    let mut g = 1.0;
    for c in cens {
        let at_risk = d.subjects.iter().filter(|s| s.time >= c).count() as f64;
        let censored = d
            .subjects
            .iter()
            .filter(|s| s.status == 0 && s.time == c)
            .count() as f64;
        g *= 1.0 - censored / at_risk;
    }
    g
}

/// `R_i(t) (1 - N_i(t-))` evaluated straight from its definition.
pub fn y_oracle(d: &Dataset, i: usize, t: f64) -> f64 {
    let s = &d.subjects[i];
    if t <= s.time {
        1.0
    } else if s.status != 0 && s.status != d.cause_of_interest {
        km_oracle(d, t) / km_oracle(d, s.time)
    } else {
        0.0
    }
}

/// Gaussian elimination with full pivoting.
pub fn solve_full_pivot(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let (mut pr, mut pc, mut best) = (col, col, -1.0);
        for r in col..n {
            for c in col..n {
                if a[r][c].abs() > best {
                    best = a[r][c].abs();
                    pr = r;
                    pc = c;
                }
            }
        }
        a.swap(col, pr);
        b.swap(col, pr);
        for row in a.iter_mut() {
            row.swap(col, pc);
        }
        perm.swap(col, pc);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut y = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = b[r];
        for c in r + 1..n {
            acc -= a[r][c] * y[c];
        }
        y[r] = acc / a[r][r];
    }
    let mut x = vec![0.0; n];
    for (k, &p) in perm.iter().enumerate() {
        x[p] = y[k];
    }
    x
}

pub fn inverse_full_pivot(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let e = (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect();
            solve_full_pivot(a.to_vec(), e)
        })
        .collect();
    (0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect()
}

/// First-stage rows `(1, X_I, X_o)`.
pub fn design_rows(d: &Dataset) -> Vec<Vec<f64>> {
    d.subjects
        .iter()
        .map(|s| {
            let mut r = vec![1.0, s.instrument];
            r.extend(&s.covariates);
            r
        })
        .collect()
}

pub struct FirstStageOracle {
    pub gamma: Vec<f64>,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `(X'X / n)^-1`.
    pub gram_inv: Vec<Vec<f64>>,
}

/// Least squares through the normal equations.
pub fn first_stage_oracle(d: &Dataset) -> FirstStageOracle {
    let x = design_rows(d);
    let k = x[0].len();
    let n = x.len() as f64;
    let mut xtx = vec![vec![0.0; k]; k];
    let mut xty = vec![0.0; k];
    for (row, s) in x.iter().zip(&d.subjects) {
        for a in 0..k {
            xty[a] += row[a] * s.exposure;
            for b in 0..k {
                xtx[a][b] += row[a] * row[b];
            }
        }
    }
    let gamma = solve_full_pivot(xtx.clone(), xty);
    let fitted: Vec<f64> = x
        .iter()
        .map(|r| r.iter().zip(&gamma).map(|(a, b)| a * b).sum())
        .collect();
    let residuals = d
        .subjects
        .iter()
        .zip(&fitted)
        .map(|(s, f)| s.exposure - f)
        .collect();
    let scaled: Vec<Vec<f64>> = xtx.iter().map(|r| r.iter().map(|v| v / n).collect()).collect();
    FirstStageOracle {
        gamma,
        fitted,
        residuals,
        gram_inv: inverse_full_pivot(&scaled),
    }
}

/// Second-stage rows: `(fitted exposure, X_o)` for IV, `(X_e, X_o)` otherwise.
pub fn second_stage_rows(d: &Dataset, iv: bool) -> Vec<Vec<f64>> {
    let fitted = iv.then(|| first_stage_oracle(d).fitted);
    d.subjects
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut r = vec![match &fitted {
                Some(f) => f[i],
                None => s.exposure,
            }];
            r.extend(&s.covariates);
            r
        })
        .collect()
}

/// The two estimating equations before the baseline is eliminated:
///
/// `sum_i [dN_i - Y_i^2 (dH + beta'Z_i dt)] = 0` and
/// `sum_i int Z_i [dN_i - Y_i^2 (dH + beta'Z_i dt)] = 0` on `[0, tau]`.
///
/// For a trial `beta` the first equation is solved for `dH` (atoms at the
/// event times, a drift between them) and the result substituted into the
/// second, subject by subject.
pub struct EstimatingEquations {
    z: Vec<Vec<f64>>,
    /// `(length, Y_i^2 at the interval midpoint for every i)`.
    intervals: Vec<(f64, Vec<f64>)>,
    /// `(subjects failing at s, Y_i^2(s) for every i)`.
    atoms: Vec<(Vec<usize>, Vec<f64>)>,
}

impl EstimatingEquations {
    pub fn new(d: &Dataset, z: Vec<Vec<f64>>, tau: f64) -> Self {
        let n = d.n();
        let mut cuts: Vec<f64> = d
            .subjects
            .iter()
            .map(|s| s.time)
            .filter(|&t| t > 0.0 && t <= tau)
            .collect();
        cuts.push(0.0);
        cuts.push(tau);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let intervals = cuts
            .windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                (w[1] - w[0], (0..n).map(|i| y_oracle(d, i, mid).powi(2)).collect())
            })
            .collect();
        let mut times: Vec<f64> = d
            .subjects
            .iter()
            .filter(|s| s.status == d.cause_of_interest && s.time <= tau)
            .map(|s| s.time)
            .collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let atoms = times
            .iter()
            .map(|&s| {
                let who = (0..n)
                    .filter(|&i| {
                        d.subjects[i].status == d.cause_of_interest && d.subjects[i].time == s
                    })
                    .collect();
                (who, (0..n).map(|i| y_oracle(d, i, s).powi(2)).collect())
            })
            .collect();
        EstimatingEquations { z, intervals, atoms }
    }

    pub fn q(&self) -> usize {
        self.z[0].len()
    }

    pub fn score(&self, beta: &[f64]) -> Vec<f64> {
        let q = self.q();
        let n = self.z.len();
        let bz: Vec<f64> = self
            .z
            .iter()
            .map(|z| z.iter().zip(beta).map(|(a, b)| a * b).sum())
            .collect();
        let mut u = vec![0.0; q];
        for (who, y2) in &self.atoms {
            let s0: f64 = y2.iter().sum();
            let dh = who.len() as f64 / s0;
            for &i in who {
                for a in 0..q {
                    u[a] += self.z[i][a];
                }
            }
            for i in 0..n {
                for a in 0..q {
                    u[a] -= self.z[i][a] * y2[i] * dh;
                }
            }
        }
        for (len, y2) in &self.intervals {
            let s0: f64 = y2.iter().sum();
            if s0 == 0.0 {
                continue;
            }
            let drift = -(0..n).map(|i| y2[i] * bz[i]).sum::<f64>() / s0;
            for i in 0..n {
                for a in 0..q {
                    u[a] -= self.z[i][a] * y2[i] * (drift + bz[i]) * len;
                }
            }
        }
        u
    }

    /// Root by bisection (nested for two coefficients). Each component of
    /// the score is nonincreasing in its own coefficient.
    pub fn root(&self) -> Vec<f64> {
        match self.q() {
            1 => vec![bisect(|b| self.score(&[b])[0])],
            2 => {
                let inner = |b0: f64| bisect(|b1| self.score(&[b0, b1])[1]);
                let b0 = bisect(|b0| self.score(&[b0, inner(b0)])[0]);
                vec![b0, inner(b0)]
            }
            q => panic!("brute-force root supports at most two coefficients, got {q}"),
        }
    }
}

/// Root of a nonincreasing function by bracket doubling and bisection.
pub fn bisect<F: Fn(f64) -> f64>(f: F) -> f64 {
    let mut lo = -1.0;
    let mut hi = 1.0;
    while f(lo) < 0.0 && lo > -1e12 {
        lo *= 2.0;
    }
    while f(hi) > 0.0 && hi < 1e12 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Influence meat `n^-1 sum_i Phi_i Phi_i'` by direct loops over subjects,
/// knots and censoring times.
pub fn meat_oracle(d: &Dataset, iv: bool, beta: &[f64], tau: f64) -> Vec<Vec<f64>> {
    let n = d.n();
    let nf = n as f64;
    let z = second_stage_rows(d, iv);
    let q = z[0].len();
    let mut knots: Vec<f64> = d
        .subjects
        .iter()
        .map(|s| s.time)
        .filter(|&t| t > 0.0 && t <= tau)
        .collect();
    knots.push(tau);
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let m = knots.len();
    let delta: Vec<f64> = (0..m)
        .map(|k| knots[k] - if k == 0 { 0.0 } else { knots[k - 1] })
        .collect();
    let y2: Vec<Vec<f64>> = (0..m)
        .map(|k| (0..n).map(|i| y_oracle(d, i, knots[k]).powi(2)).collect())
        .collect();
    let is_event = |i: usize| d.subjects[i].status == d.cause_of_interest;
    let events: Vec<Vec<usize>> = (0..m)
        .map(|k| {
            (0..n)
                .filter(|&i| is_event(i) && d.subjects[i].time == knots[k])
                .collect()
        })
        .collect();
    let s0: Vec<f64> = y2.iter().map(|y| y.iter().sum()).collect();
    let xbar: Vec<Vec<f64>> = (0..m)
        .map(|k| {
            (0..q)
                .map(|a| (0..n).map(|i| y2[k][i] * z[i][a]).sum::<f64>() / s0[k])
                .collect()
        })
        .collect();
    let jump: Vec<f64> = (0..m).map(|k| events[k].len() as f64 / s0[k]).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    // (z - xbar_k)(delta_k beta'(z - xbar_k) + jump_k)
    let integrand = |zi: &[f64], k: usize| -> Vec<f64> {
        let c: Vec<f64> = (0..q).map(|a| zi[a] - xbar[k][a]).collect();
        let s = delta[k] * dot(beta, &c) + jump[k];
        c.iter().map(|v| v * s).collect()
    };

    let mut phi = vec![vec![0.0; q]; n];
    // Martingale term.
    for i in 0..n {
        for k in 0..m {
            if events[k].contains(&i) {
                for a in 0..q {
                    phi[i][a] += z[i][a] - xbar[k][a];
                }
            }
            let g = integrand(&z[i], k);
            for a in 0..q {
                phi[i][a] -= y2[k][i] * g[a];
            }
        }
    }
    // First-stage term.
    if iv {
        let fs = first_stage_oracle(d);
        let x = design_rows(d);
        let kx = x[0].len();
        let mut dm = vec![vec![0.0; kx]; q];
        for i in 0..n {
            for k in 0..m {
                for a in 0..q {
                    let v = y2[k][i] * delta[k] * (z[i][a] - xbar[k][a]);
                    for b in 0..kx {
                        dm[a][b] += v * x[i][b] / nf;
                    }
                }
            }
        }
        for j in 0..n {
            let gx: Vec<f64> = (0..kx)
                .map(|a| (0..kx).map(|b| fs.gram_inv[a][b] * x[j][b]).sum())
                .collect();
            for a in 0..q {
                phi[j][a] -= beta[0] * dot(&dm[a], &gx) * fs.residuals[j];
            }
        }
    }
    // Censoring term.
    let mut cens: Vec<f64> = d
        .subjects
        .iter()
        .filter(|s| s.status == 0 && s.time <= tau && s.time > 0.0)
        .map(|s| s.time)
        .collect();
    cens.sort_by(f64::total_cmp);
    cens.dedup();
    let competing = |i: usize| d.subjects[i].status != 0 && !is_event(i);
    for &u in &cens {
        let at_risk = (0..n).filter(|&j| d.subjects[j].time >= u).count() as f64;
        let censored = (0..n)
            .filter(|&j| d.subjects[j].status == 0 && d.subjects[j].time == u)
            .count() as f64;
        let mut qu = vec![0.0; q];
        for i in (0..n).filter(|&i| competing(i) && d.subjects[i].time <= u) {
            for k in (0..m).filter(|&k| knots[k] > u) {
                let g = integrand(&z[i], k);
                for a in 0..q {
                    qu[a] += 2.0 / nf * y2[k][i] * g[a];
                }
            }
        }
        let ratio: Vec<f64> = qu.iter().map(|v| v / (at_risk / nf)).collect();
        for j in 0..n {
            let tj = d.subjects[j].time;
            if tj >= u {
                for a in 0..q {
                    phi[j][a] -= ratio[a] * censored / at_risk;
                }
            }
            if d.subjects[j].status == 0 && tj == u {
                for a in 0..q {
                    phi[j][a] += ratio[a];
                }
            }
        }
    }
    let mut meat = vec![vec![0.0; q]; q];
    for p in &phi {
        for a in 0..q {
            for b in 0..q {
                meat[a][b] += p[a] * p[b] / nf;
            }
        }
    }
    meat
}

/// Small random competing-risks dataset. Times come from a coarse lattice
/// when `ties` is set so that events, competing events and censorings
/// collide; at least one cause-1 event is guaranteed.
pub fn random_small<R: Rng>(rng: &mut R, n: usize, p: usize, ties: bool) -> Dataset {
    loop {
        let subjects: Vec<Subject> = (0..n)
            .map(|i| {
                let time = if ties {
                    f64::from(rng.random_range(1..=6u32)) * 0.5
                } else {
                    rng.random_range(0.05..3.0)
                };
                let instrument = rng.random_range(-1.0..1.0);
                let covariates: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
                let exposure = 0.8 * instrument
                    + covariates.iter().sum::<f64>() * 0.3
                    + rng.random_range(-0.5..0.5);
                Subject {
                    id: format!("s{i}"),
                    time,
                    status: rng.random_range(0..3u32),
                    exposure,
                    instrument,
                    covariates,
                }
            })
            .collect();
        if subjects.iter().any(|s| s.status == 1) {
            return Dataset::new(subjects, 1).expect("valid random dataset");
        }
    }
}

/// Dataset shaped like a registry extract: binary exposure, binary
/// instrument, three covariates, two competing causes.
pub fn registry_like(n: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let subjects = (0..n)
        .map(|i| {
            let instrument = f64::from(r.random_bool(0.5) as u8);
            let age: f64 = r.random_range(20.0..75.0);
            let status_cov = f64::from(r.random_bool(0.4) as u8);
            let lines = f64::from(r.random_range(1..=4u8));
            let exposure = f64::from(r.random_bool(if instrument > 0.0 { 0.35 } else { 0.03 }) as u8);
            let rate = 0.02 + 0.005 * status_cov + 0.0002 * age - 0.008 * exposure;
            let event: f64 = -r.random::<f64>().ln() / rate.max(0.005);
            let censor: f64 = -r.random::<f64>().ln() / 0.012;
            let (time, status) = if censor < event {
                (censor, 0)
            } else {
                (event, if r.random_bool(0.7) { 1 } else { 2 })
            };
            Subject {
                id: format!("p{i:04}"),
                time: (time * 100.0).round() / 100.0 + 0.01,
                status,
                exposure,
                instrument,
                covariates: vec![age, status_cov, lines],
            }
        })
        .collect();
    Dataset::new(subjects, 1)
        .unwrap()
        .with_covariate_names(vec!["age".into(), "disease_status".into(), "chemo_lines".into()])
        .unwrap()
}
