//! Command-line surface: `fit`, `predict`, `simulate`, `km`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::additive::FitMode;
use crate::artifact::FitArtifact;
use crate::censoring::fit_km_censoring;
use crate::data::{center, load_dataset_path, FitOptions, Schema, Tau};
use crate::error::{Error, Result};
use crate::inference::wald_summary;
use crate::pipeline::fit_pipeline;
use crate::prediction::predict_with_bands;
use crate::report::{cif_table, coefficient_block, first_stage_block, sim_csv, sim_table, NumFmt};
use crate::sim::{run_monte_carlo, Link, LogisticExposure, SimScenario, SimTau, UnmeasuredLaw};

/// Parsed command line.
#[derive(Debug, Parser)]
#[command(
    name = "subdist-iv",
    version,
    about = "Instrumental-variable estimation for additive subdistribution hazards"
)]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print numbers with full round-trip precision instead of 4 significant digits.
    #[arg(long)]
    pub full_precision: bool,
}

#[derive(Debug, Args, Clone)]
pub struct InputArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Column mapping, e.g. `time=ftime,status=fstatus,exposure=rtx,instrument=z,covariates=age+sex`.
    /// Default layout: id,time,status,exposure,instrument,covariates...
    #[arg(long)]
    pub schema: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the two-stage IV (default) or naive model.
    Fit {
        #[command(flatten)]
        input: InputArgs,
        /// Two-stage instrumental-variable fit (the default)
        #[arg(long, conflicts_with = "naive")]
        iv: bool,
        /// Ordinary additive subdistribution fit on the observed exposure
        #[arg(long)]
        naive: bool,
        /// Upper integration limit (default: largest cause-1 time).
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// Save the fit artifact for `predict`.
        #[arg(long)]
        artifact: Option<PathBuf>,
        /// Write (time, H0_star, H0_mod) at each event time.
        #[arg(long)]
        baseline_out: Option<PathBuf>,
        /// Write per-subject influence components.
        #[arg(long)]
        dump_influence: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Predict cumulative incidence with pointwise bands from a saved fit.
    Predict {
        #[arg(long)]
        artifact: PathBuf,
        /// Exposure value on the original scale.
        #[arg(long, allow_hyphen_values = true)]
        exposure: f64,
        /// Observed covariates on the original scale, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        covariates: Vec<f64>,
        /// Query times, comma separated.
        #[arg(long, value_delimiter = ',')]
        times: Vec<f64>,
        /// Evenly spaced grid of this many points on [0, tau] (used when no times are given).
        #[arg(long, default_value_t = 21)]
        grid: usize,
        #[arg(long)]
        level: Option<f64>,
        /// Data file to check against the artifact's input digest.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        schema: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Monte Carlo study; comma-separated lists expand into a grid of scenarios.
    Simulate {
        #[arg(long, value_delimiter = ',', default_value = "1000")]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0.4")]
        gamma2: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.4")]
        beta3: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.3")]
        censoring: Vec<f64>,
        #[arg(long, value_enum, default_value_t = LinkArg::Linear)]
        link: LinkArg,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        #[arg(long, default_value_t = 20240607)]
        seed: u64,
        #[arg(long)]
        workers: Option<usize>,
        /// `cutoff` (t0), `max` (largest cause-1 time) or a number.
        #[arg(long, default_value = "cutoff")]
        tau: String,
        #[arg(long, default_value_t = 100_000)]
        pilot: usize,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Also write full results (including per-replicate outcomes) as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Kaplan-Meier estimate of the censoring survival G(t) = P(C >= t).
    Km {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LinkArg {
    Linear,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn schema_of(spec: &Option<String>) -> Result<Schema> {
    match spec {
        Some(s) => Schema::parse(s),
        None => Ok(Schema::positional()),
    }
}

/// Executes a parsed command and returns the report text.
pub fn run(config: &RunConfig) -> Result<String> {
    match &config.command {
        Command::Fit {
            input,
            naive,
            tau,
            level,
            artifact,
            baseline_out,
            dump_influence,
            common,
            ..
        } => {
            let nf = NumFmt { full: common.full_precision };
            let raw = load_dataset_path(&input.input, &schema_of(&input.schema)?)?;
            let opts = FitOptions {
                tau: tau.map_or(Tau::Auto, Tau::Fixed),
                ci_level: *level,
                ..FitOptions::default()
            };
            opts.validate()?;
            let mode = if *naive { FitMode::Naive } else { FitMode::Iv };
            let p = fit_pipeline(&raw, &opts, mode)?;
            let digest = raw.digest();
            let mut out = String::new();
            let count = |st: &dyn Fn(u32) -> bool| raw.subjects.iter().filter(|s| st(s.status)).count();
            out.push_str(&format!(
                "subdist-iv {} fit ({mode})\ninput: {} (n = {}, p = {}), sha256 {}\ncause-1 events: {}, competing: {}, censored: {}; tau = {}\n\n",
                env!("CARGO_PKG_VERSION"),
                input.input.display(),
                raw.n(),
                raw.p,
                digest,
                count(&|s| s == raw.cause_of_interest),
                count(&|s| s != 0 && s != raw.cause_of_interest),
                count(&|s| s == 0),
                nf.fmt(p.fit.tau),
            ));
            if let Some(first) = &p.first {
                out.push_str(&first_stage_block(first, &raw.covariate_names, nf));
                out.push('\n');
            }
            let rows = wald_summary(&p.fit, &p.variance, *level);
            out.push_str(&coefficient_block(&rows, *level, nf));
            out.push_str(&format!(
                "\nDIAGNOSTICS\nS2n condition (scaled): {}\nestimating-equation residual: {}\nmax |sum phi1|: {}\n",
                nf.fmt(p.fit.condition),
                nf.fmt(p.fit.equation_residual),
                nf.fmt(p.influence.phi1_sum().amax()),
            ));
            if let Some(path) = baseline_out {
                let mut text = String::from("time,H0_star,H0_mod\n");
                for k in 0..p.fit.grid.len() {
                    text.push_str(&format!(
                        "{:?},{:?},{:?}\n",
                        p.fit.grid[k], p.fit.h0_star[k], p.fit.h0_mod[k]
                    ));
                }
                write_file(path, &text)?;
                out.push_str(&format!("baseline written to {}\n", path.display()));
            }
            if let Some(path) = dump_influence {
                let q = p.fit.q();
                let mut text = String::from("id");
                for part in ["phi1", "phi2", "phi3"] {
                    for name in &p.fit.names {
                        text.push_str(&format!(",{part}_{name}"));
                    }
                }
                text.push('\n');
                for (i, s) in p.data.subjects.iter().enumerate() {
                    text.push_str(&s.id);
                    for part in [&p.influence.phi1, &p.influence.phi2, &p.influence.phi3] {
                        for j in 0..q {
                            text.push_str(&format!(",{:?}", part[i][j]));
                        }
                    }
                    text.push('\n');
                }
                write_file(path, &text)?;
                out.push_str(&format!("influence functions written to {}\n", path.display()));
            }
            if let Some(path) = artifact {
                FitArtifact::from_pipeline(&p, digest, opts).save(path)?;
                out.push_str(&format!("artifact written to {}\n", path.display()));
            }
            Ok(out)
        }
        Command::Predict {
            artifact,
            exposure,
            covariates,
            times,
            grid,
            level,
            input,
            schema,
            common,
        } => {
            let nf = NumFmt { full: common.full_precision };
            let a = FitArtifact::load(artifact)?;
            if let Some(path) = input {
                let d = load_dataset_path(path, &schema_of(schema)?)?;
                let actual = d.digest();
                if actual != a.input_digest {
                    return Err(Error::DigestMismatch {
                        expected: a.input_digest.clone(),
                        actual,
                    });
                }
            }
            let times: Vec<f64> = if times.is_empty() {
                if *grid < 2 {
                    return Err(Error::InvalidOption("grid needs at least 2 points".into()));
                }
                (0..*grid)
                    .map(|k| a.fit.tau * k as f64 / (*grid - 1) as f64)
                    .collect()
            } else {
                times.clone()
            };
            let level = level.unwrap_or(a.options.ci_level);
            if !(level > 0.0 && level < 1.0) {
                return Err(Error::InvalidOption(format!("level must lie in (0, 1), got {level}")));
            }
            let curve = predict_with_bands(&a.fit, &a.variance, *exposure, covariates, &times, level)?;
            Ok(format!(
                "# cumulative incidence of cause 1 ({} fit), {}% pointwise bands\n{}",
                a.fit.mode,
                level * 100.0,
                cif_table(&curve, nf)
            ))
        }
        Command::Simulate {
            n,
            gamma2,
            beta3,
            censoring,
            link,
            reps,
            seed,
            workers,
            tau,
            pilot,
            format,
            json,
            common,
        } => {
            let nf = NumFmt { full: common.full_precision };
            let tau = match tau.as_str() {
                "cutoff" => SimTau::Cutoff,
                "max" => SimTau::MaxEvent,
                other => SimTau::Fixed(other.parse().map_err(|_| {
                    Error::InvalidOption(format!("tau must be `cutoff`, `max` or a number, got `{other}`"))
                })?),
            };
            let mut results = Vec::new();
            for &b3 in beta3 {
                for &g2 in gamma2 {
                    for &nn in n {
                        for &c in censoring {
                            let mut s = SimScenario::linear(nn, g2, b3, c);
                            if *link == LinkArg::Logistic {
                                s.link = Link::Logistic(LogisticExposure::default());
                                s.unmeasured = UnmeasuredLaw::Uniform { half_width: 0.5 };
                            }
                            s.reps = *reps;
                            s.seed = *seed;
                            s.tau = tau;
                            s.pilot_size = *pilot;
                            results.push(run_monte_carlo(&s, *workers)?);
                        }
                    }
                }
            }
            if let Some(path) = json {
                let body = serde_json::to_string_pretty(&results)
                    .map_err(|e| Error::ArtifactFormat(e.to_string()))?;
                write_file(path, &body)?;
            }
            Ok(match format {
                Format::Text => sim_table(&results, nf),
                Format::Csv => sim_csv(&results, nf),
            })
        }
        Command::Km { input, common } => {
            let nf = NumFmt { full: common.full_precision };
            let d = center(&load_dataset_path(&input.input, &schema_of(&input.schema)?)?)?;
            let g = fit_km_censoring(&d)?;
            let mut out = String::from("time\tG\n");
            out.push_str(&format!("{}\t{}\n", nf.fmt(0.0), nf.fmt(1.0)));
            for (t, v) in g.jump_times.iter().zip(&g.values) {
                out.push_str(&format!("{}\t{}\n", nf.fmt(*t), nf.fmt(*v)));
            }
            Ok(out)
        }
    }
}

fn common_of(cmd: &Command) -> &Common {
    match cmd {
        Command::Fit { common, .. }
        | Command::Predict { common, .. }
        | Command::Simulate { common, .. }
        | Command::Km { common, .. } => common,
    }
}

/// Parses arguments, runs, writes the report and returns the exit status:
/// 0 success, 2 usage error, 3 data error, 4 numerical error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let config = match RunConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = run(&config).and_then(|report| match &common_of(&config.command).out {
        Some(path) => write_file(path, &report),
        None => std::io::stdout()
            .write_all(report.as_bytes())
            .map_err(|e| io_err(Path::new("<stdout>"), e)),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error [{}/{}]: {e}", e.module(), e.code());
            e.exit_code()
        }
    }
}
