//! Plain-text report formatting.

use crate::first_stage::{weak_iv_diagnostic, FirstStageFit};
use crate::inference::CoefficientRow;
use crate::prediction::CifCurve;
use crate::sim::SimResult;

/// Number formatting: four significant digits unless full precision is
/// requested, in which case the shortest round-trip representation is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NumFmt {
    pub full: bool,
}

impl NumFmt {
    pub fn fmt(&self, x: f64) -> String {
        if x.is_nan() {
            return "NaN".into();
        }
        if x.is_infinite() {
            return if x > 0.0 { "inf".into() } else { "-inf".into() };
        }
        if self.full {
            return format!("{x:?}");
        }
        if x == 0.0 {
            return "0".into();
        }
        let mag = x.abs().log10().floor() as i32;
        if (-4..6).contains(&mag) {
            format!("{:.*}", (3 - mag).max(0) as usize, x)
        } else {
            format!("{x:.3e}")
        }
    }
}

/// Left-aligned first column, right-aligned numeric columns.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        self.rows.push(cells);
    }

    pub fn render(&self) -> String {
        let ncol = self.header.len();
        let mut width = vec![0; ncol];
        for r in std::iter::once(&self.header).chain(&self.rows) {
            for (j, c) in r.iter().enumerate().take(ncol) {
                width[j] = width[j].max(c.chars().count());
            }
        }
        let mut out = String::new();
        for r in std::iter::once(&self.header).chain(&self.rows) {
            let line: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(j, c)| {
                    if j == 0 {
                        format!("{c:<w$}", w = width[j])
                    } else {
                        format!("{c:>w$}", w = width[j])
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

pub fn first_stage_block(first: &FirstStageFit, names: &[String], nf: NumFmt) -> String {
    let mut t = Table::new(["term", "estimate", "se"]);
    let labels = std::iter::once("intercept".to_string())
        .chain(std::iter::once("instrument".to_string()))
        .chain(names.iter().cloned());
    for (j, label) in labels.enumerate() {
        let est = if j == 0 {
            first.intercept_uncentered
        } else {
            first.gamma[j]
        };
        t.row(vec![label, nf.fmt(est), nf.fmt(first.gamma_se[j])]);
    }
    let weak = weak_iv_diagnostic(first);
    format!(
        "FIRST STAGE (exposure ~ instrument + covariates)\n{}F-statistic: {}   weak instrument: {}\nresidual variance: {}   dispersion ratio (upper/lower half of fitted): {}\n{}\n",
        t.render(),
        nf.fmt(first.f_stat),
        if weak.weak { "yes" } else { "no" },
        nf.fmt(first.sigma2_hat),
        nf.fmt(first.dispersion_ratio),
        weak.advice
    )
}

pub fn coefficient_block(rows: &[CoefficientRow], level: f64, nf: NumFmt) -> String {
    let mut t = Table::new(["term", "estimate", "se", "z", "p", "lower", "upper"]);
    for r in rows {
        t.row(vec![
            r.name.clone(),
            nf.fmt(r.estimate),
            nf.fmt(r.se),
            nf.fmt(r.z),
            nf.fmt(r.p_value),
            nf.fmt(r.lower),
            nf.fmt(r.upper),
        ]);
    }
    let mut out = format!("COEFFICIENTS ({}% Wald intervals)\n{}", level * 100.0, t.render());
    for r in rows.iter().filter(|r| r.degenerate) {
        out.push_str(&format!("note: `{}` has zero standard error; z is infinite\n", r.name));
    }
    out
}

pub fn cif_table(curve: &CifCurve, nf: NumFmt) -> String {
    let mut t = Table::new(["time", "F1", "se", "lower", "upper"]);
    for j in 0..curve.times.len() {
        t.row(vec![
            nf.fmt(curve.times[j]),
            nf.fmt(curve.values[j]),
            nf.fmt(curve.se[j]),
            nf.fmt(curve.lower[j]),
            nf.fmt(curve.upper[j]),
        ]);
    }
    let mut out = t.render();
    for w in &curve.warnings {
        out.push_str(&format!("# warning: {w}\n"));
    }
    out
}

const SIM_COLUMNS: [&str; 19] = [
    "beta3",
    "gamma2",
    "n",
    "target_cens",
    "realized_cens",
    "method",
    "bias",
    "emp_se",
    "mean_se",
    "coverage",
    "failures",
    "trim_bias",
    "trim_emp_se",
    "trim_mean_se",
    "trim_coverage",
    "weak_rate",
    "rejected",
    "link",
    "unreliable",
];

fn sim_rows(r: &SimResult, nf: NumFmt) -> Vec<Vec<String>> {
    let s = &r.scenario;
    [("iv", &r.iv), ("naive", &r.naive)]
        .into_iter()
        .map(|(name, m)| {
            vec![
                nf.fmt(s.beta[2]),
                nf.fmt(s.gamma2),
                s.n.to_string(),
                nf.fmt(s.target_censoring),
                nf.fmt(r.mean_censored_fraction),
                name.to_string(),
                nf.fmt(m.raw.bias),
                nf.fmt(m.raw.empirical_se),
                nf.fmt(m.raw.mean_se),
                nf.fmt(m.raw.coverage),
                m.failures.to_string(),
                nf.fmt(m.trimmed.bias),
                nf.fmt(m.trimmed.empirical_se),
                nf.fmt(m.trimmed.mean_se),
                nf.fmt(m.trimmed.coverage),
                nf.fmt(r.weak_flag_rate),
                r.rejected_draws.to_string(),
                match s.link {
                    crate::sim::Link::Linear => "linear".into(),
                    crate::sim::Link::Logistic(_) => "logistic".into(),
                },
                m.unreliable.to_string(),
            ]
        })
        .collect()
}

pub fn sim_table(results: &[SimResult], nf: NumFmt) -> String {
    let mut t = Table::new(SIM_COLUMNS);
    for r in results {
        for row in sim_rows(r, nf) {
            t.row(row);
        }
    }
    t.render()
}

pub fn sim_csv(results: &[SimResult], nf: NumFmt) -> String {
    let mut out = SIM_COLUMNS.join(",");
    out.push('\n');
    for r in results {
        for row in sim_rows(r, nf) {
            out.push_str(&row.join(","));
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_significant_digits() {
        let nf = NumFmt { full: false };
        assert_eq!(nf.fmt(0.123456), "0.1235");
        assert_eq!(nf.fmt(12.3456), "12.35");
        assert_eq!(nf.fmt(-0.00123456), "-0.001235");
        assert_eq!(nf.fmt(1234567.0), "1.235e6");
        assert_eq!(nf.fmt(0.0), "0");
        assert_eq!(nf.fmt(f64::INFINITY), "inf");
        let full = NumFmt { full: true };
        assert_eq!(full.fmt(0.1 + 0.2), "0.30000000000000004");
    }
}
