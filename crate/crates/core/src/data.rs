//! Subject records, dataset validation, schema mapping and centering.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One subject's composite outcome and covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    /// Follow-up time `min(T, C)`.
    pub time: f64,
    /// 0 = censored, 1 = cause 1, 2.. = competing causes.
    pub status: u32,
    pub exposure: f64,
    pub instrument: f64,
    pub covariates: Vec<f64>,
}

impl Subject {
    pub fn is_censored(&self) -> bool {
        self.status == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub subjects: Vec<Subject>,
    pub p: usize,
    pub cause_of_interest: u32,
    /// Largest cause code declared for the dataset (at least 2).
    pub n_causes: u32,
    pub covariate_names: Vec<String>,
    /// Means removed from instrument, exposure and each covariate, in that
    /// order. All zeros until [`center`] has been applied.
    pub centering_offsets: Vec<f64>,
}

impl Dataset {
    /// Validates subjects and builds an uncentered dataset.
    pub fn new(subjects: Vec<Subject>, cause_of_interest: u32) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::EmptyInput);
        }
        let p = subjects[0].covariates.len();
        let mut max_status = 0;
        for (row, s) in subjects.iter().enumerate() {
            if !(s.time.is_finite() && s.time >= 0.0) {
                return Err(Error::MalformedRow {
                    row,
                    column: "time".into(),
                    reason: format!("time must be finite and nonnegative, got {}", s.time),
                });
            }
            for (column, v) in [("exposure", s.exposure), ("instrument", s.instrument)] {
                if !v.is_finite() {
                    return Err(Error::MalformedRow {
                        row,
                        column: column.into(),
                        reason: "value must be finite".into(),
                    });
                }
            }
            if s.covariates.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    actual: s.covariates.len(),
                });
            }
            if let Some(j) = s.covariates.iter().position(|v| !v.is_finite()) {
                return Err(Error::MalformedRow {
                    row,
                    column: format!("covariate {j}"),
                    reason: "value must be finite".into(),
                });
            }
            max_status = max_status.max(s.status);
        }
        if !subjects.iter().any(|s| s.status == cause_of_interest) {
            return Err(Error::NoEventsOfInterest {
                cause: cause_of_interest,
            });
        }
        Ok(Dataset {
            p,
            cause_of_interest,
            n_causes: max_status.max(2),
            covariate_names: (1..=p).map(|j| format!("x{j}")).collect(),
            centering_offsets: vec![0.0; p + 2],
            subjects,
        })
    }

    pub fn with_covariate_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                actual: names.len(),
            });
        }
        self.covariate_names = names;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    pub fn max_time(&self) -> f64 {
        self.subjects.iter().map(|s| s.time).fold(0.0, f64::max)
    }

    /// Largest observed time of the cause of interest.
    pub fn max_event_time(&self) -> f64 {
        self.subjects
            .iter()
            .filter(|s| s.status == self.cause_of_interest)
            .map(|s| s.time)
            .fold(0.0, f64::max)
    }

    pub fn is_centered(&self) -> bool {
        let n = self.n() as f64;
        let mean = |f: &dyn Fn(&Subject) -> f64| self.subjects.iter().map(f).sum::<f64>() / n;
        mean(&|s| s.instrument).abs() < 1e-12
            && mean(&|s| s.exposure).abs() < 1e-12
            && (0..self.p).all(|j| mean(&|s| s.covariates[j]).abs() < 1e-12)
    }

    /// Returns the data on the original scale by adding the offsets back.
    pub fn uncentered(&self) -> Dataset {
        let o = &self.centering_offsets;
        let mut out = self.clone();
        for s in &mut out.subjects {
            s.instrument += o[0];
            s.exposure += o[1];
            for (x, off) in s.covariates.iter_mut().zip(&o[2..]) {
                *x += off;
            }
        }
        out.centering_offsets = vec![0.0; self.p + 2];
        out
    }

    /// SHA-256 of the canonical CSV rendering, used to detect dataset drift.
    pub fn digest(&self) -> String {
        let mut buf = Vec::new();
        write_csv(self, &mut buf).expect("writing to memory cannot fail");
        hex::encode(Sha256::digest(&buf))
    }
}

/// Subtracts column means from instrument, exposure and covariates.
///
/// Offsets accumulate, so re-centering already centered data leaves values
/// unchanged up to rounding and keeps the original-scale offsets.
pub fn center(dataset: &Dataset) -> Result<Dataset> {
    if dataset.subjects.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = dataset.n() as f64;
    let p = dataset.p;
    let mut means = vec![0.0; p + 2];
    for s in &dataset.subjects {
        means[0] += s.instrument;
        means[1] += s.exposure;
        for j in 0..p {
            means[2 + j] += s.covariates[j];
        }
    }
    for m in &mut means {
        *m /= n;
    }
    let mut out = dataset.clone();
    for s in &mut out.subjects {
        s.instrument -= means[0];
        s.exposure -= means[1];
        for j in 0..p {
            s.covariates[j] -= means[2 + j];
        }
    }
    for (o, m) in out.centering_offsets.iter_mut().zip(&means) {
        *o += m;
    }
    Ok(out)
}

/// Upper integration limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum Tau {
    /// Largest observed time of the cause of interest.
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum WeightScheme {
    #[default]
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub tau: Tau,
    pub weight_scheme: WeightScheme,
    pub ci_level: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tau: Tau::Auto,
            weight_scheme: WeightScheme::Unit,
            ci_level: 0.95,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::InvalidOption(format!(
                "confidence level must lie in (0, 1), got {}",
                self.ci_level
            )));
        }
        if let Tau::Fixed(t) = self.tau {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::InvalidOption(format!("tau must be positive, got {t}")));
            }
        }
        Ok(())
    }

    /// Resolves `tau` against a dataset.
    pub fn resolve_tau(&self, dataset: &Dataset) -> Result<f64> {
        self.validate()?;
        match self.tau {
            Tau::Auto => Ok(dataset.max_event_time()),
            Tau::Fixed(t) => {
                let max = dataset.max_time();
                if t > max {
                    Err(Error::InvalidOption(format!(
                        "tau = {t} exceeds the largest observed time {max}"
                    )))
                } else {
                    Ok(t)
                }
            }
        }
    }
}

/// Mapping from CSV columns to roles.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Schema {
    pub id: Option<String>,
    pub time: Option<String>,
    pub status: Option<String>,
    pub exposure: Option<String>,
    pub instrument: Option<String>,
    /// `None` means every column not claimed by another role, in file order.
    pub covariates: Option<Vec<String>>,
    pub cause_of_interest: u32,
}

impl Schema {
    /// Positional layout: id, time, status, exposure, instrument, covariates...
    pub fn positional() -> Self {
        Schema {
            cause_of_interest: 1,
            ..Default::default()
        }
    }

    /// Parses `role=column` pairs separated by commas, e.g.
    /// `time=ftime,status=fstatus,exposure=rtx,instrument=center,covariates=age+sex`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut schema = Schema::positional();
        for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (role, col) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidSchema(format!("expected role=column, got `{part}`")))?;
            let col = col.trim().to_string();
            if col.is_empty() {
                return Err(Error::InvalidSchema(format!("empty column for role `{role}`")));
            }
            match role.trim() {
                "id" => schema.id = Some(col),
                "time" => schema.time = Some(col),
                "status" => schema.status = Some(col),
                "exposure" => schema.exposure = Some(col),
                "instrument" => schema.instrument = Some(col),
                "covariates" => {
                    schema.covariates = Some(
                        col.split('+')
                            .map(|c| c.trim().to_string())
                            .filter(|c| !c.is_empty())
                            .collect(),
                    )
                }
                "cause" => {
                    schema.cause_of_interest = col
                        .parse()
                        .ok()
                        .filter(|&c| c > 0)
                        .ok_or_else(|| Error::InvalidSchema(format!("invalid cause `{col}`")))?
                }
                other => return Err(Error::InvalidSchema(format!("unknown role `{other}`"))),
            }
        }
        Ok(schema)
    }

    fn is_positional(&self) -> bool {
        self.id.is_none()
            && self.time.is_none()
            && self.status.is_none()
            && self.exposure.is_none()
            && self.instrument.is_none()
            && self.covariates.is_none()
    }
}

struct Layout {
    id: Option<usize>,
    time: usize,
    status: usize,
    exposure: usize,
    instrument: usize,
    covariates: Vec<usize>,
    covariate_names: Vec<String>,
}

fn resolve_layout(headers: &[String], schema: &Schema) -> Result<Layout> {
    if schema.is_positional() {
        if headers.len() < 5 {
            return Err(Error::MissingColumn(
                ["id", "time", "status", "exposure", "instrument"][headers.len()].into(),
            ));
        }
        return Ok(Layout {
            id: Some(0),
            time: 1,
            status: 2,
            exposure: 3,
            instrument: 4,
            covariates: (5..headers.len()).collect(),
            covariate_names: headers[5..].to_vec(),
        });
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let required = |role: &Option<String>, label: &str| -> Result<usize> {
        match role {
            Some(c) => find(c),
            None => Err(Error::InvalidSchema(format!("role `{label}` is not mapped"))),
        }
    };
    let id = schema.id.as_deref().map(find).transpose()?;
    let time = required(&schema.time, "time")?;
    let status = required(&schema.status, "status")?;
    let exposure = required(&schema.exposure, "exposure")?;
    let instrument = required(&schema.instrument, "instrument")?;
    let covariates: Vec<usize> = match &schema.covariates {
        Some(cols) => cols.iter().map(|c| find(c)).collect::<Result<_>>()?,
        None => {
            let claimed = [Some(time), Some(status), Some(exposure), Some(instrument), id];
            (0..headers.len())
                .filter(|j| !claimed.contains(&Some(*j)))
                .collect()
        }
    };
    let covariate_names = covariates.iter().map(|&j| headers[j].clone()).collect();
    Ok(Layout {
        id,
        time,
        status,
        exposure,
        instrument,
        covariates,
        covariate_names,
    })
}

fn parse_num(field: Option<&str>, row: usize, column: &str) -> Result<f64> {
    let raw = field.unwrap_or("").trim();
    if raw.is_empty() {
        return Err(Error::MalformedRow {
            row,
            column: column.into(),
            reason: "missing value".into(),
        });
    }
    raw.parse::<f64>().map_err(|_| Error::MalformedRow {
        row,
        column: column.into(),
        reason: format!("`{raw}` is not a number"),
    })
}

/// Parses CSV text with a header row. Row indices in errors are 1-based data
/// rows (the header is row 0). Centering is not applied.
pub fn load_dataset<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::MalformedRow {
            row: 0,
            column: "header".into(),
            reason: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let layout = resolve_layout(&headers, schema)?;
    let mut subjects = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| Error::MalformedRow {
            row,
            column: "record".into(),
            reason: e.to_string(),
        })?;
        let status_col = &headers[layout.status];
        let raw_status = record.get(layout.status).unwrap_or("").trim();
        let status = parse_status(raw_status).ok_or_else(|| {
            if raw_status.is_empty() {
                Error::MalformedRow {
                    row,
                    column: status_col.clone(),
                    reason: "missing value".into(),
                }
            } else {
                Error::UnknownStatus {
                    row,
                    value: raw_status.to_string(),
                }
            }
        })?;
        let time = parse_num(record.get(layout.time), row, &headers[layout.time])?;
        if !(time.is_finite() && time >= 0.0) {
            return Err(Error::MalformedRow {
                row,
                column: headers[layout.time].clone(),
                reason: format!("time must be finite and nonnegative, got {time}"),
            });
        }
        let exposure = parse_num(record.get(layout.exposure), row, &headers[layout.exposure])?;
        let instrument = parse_num(record.get(layout.instrument), row, &headers[layout.instrument])?;
        let covariates = layout
            .covariates
            .iter()
            .map(|&j| parse_num(record.get(j), row, &headers[j]))
            .collect::<Result<Vec<_>>>()?;
        for (v, col) in [(exposure, layout.exposure), (instrument, layout.instrument)]
            .into_iter()
            .chain(covariates.iter().copied().zip(layout.covariates.iter().copied()))
        {
            if !v.is_finite() {
                return Err(Error::MalformedRow {
                    row,
                    column: headers[col].clone(),
                    reason: "value must be finite".into(),
                });
            }
        }
        let id = match layout.id {
            Some(j) => record.get(j).unwrap_or("").trim().to_string(),
            None => row.to_string(),
        };
        subjects.push(Subject {
            id,
            time,
            status,
            exposure,
            instrument,
            covariates,
        });
    }
    Dataset::new(subjects, schema.cause_of_interest)?.with_covariate_names(layout.covariate_names)
}

fn parse_status(raw: &str) -> Option<u32> {
    if let Ok(v) = raw.parse::<u32>() {
        return Some(v);
    }
    // Accept integral floats such as "1.0" written by some tools.
    let f: f64 = raw.parse().ok()?;
    (f >= 0.0 && f.fract() == 0.0 && f <= u32::MAX as f64).then_some(f as u32)
}

pub fn load_dataset_path(path: &Path, schema: &Schema) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    load_dataset(std::io::BufReader::new(file), schema)
}

/// Writes the positional CSV layout. Floats use the shortest representation
/// that parses back to the same bits.
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let io_err = |e: csv::Error| Error::Io {
        path: "<csv>".into(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        "id".to_string(),
        "time".into(),
        "status".into(),
        "exposure".into(),
        "instrument".into(),
    ];
    header.extend(dataset.covariate_names.iter().cloned());
    w.write_record(&header).map_err(io_err)?;
    for s in &dataset.subjects {
        let mut rec = vec![
            s.id.clone(),
            s.time.to_string(),
            s.status.to_string(),
            s.exposure.to_string(),
            s.instrument.to_string(),
        ];
        rec.extend(s.covariates.iter().map(f64::to_string));
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<csv>".into(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subj(time: f64, status: u32, xe: f64, xi: f64, xo: Vec<f64>) -> Subject {
        Subject {
            id: String::new(),
            time,
            status,
            exposure: xe,
            instrument: xi,
            covariates: xo,
        }
    }

    #[test]
    fn three_rows_infer_two_causes() {
        let csv = "id,time,status,exposure,instrument\na,1,1,0,0\nb,2,2,1,1\nc,3,0,1,0\n";
        let d = load_dataset(csv.as_bytes(), &Schema::positional()).unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.p, 0);
        assert!(d.n_causes >= 2);
    }

    #[test]
    fn negative_time_names_the_row() {
        let csv = "id,time,status,exposure,instrument\na,1,1,0,0\nb,-1,2,1,1\n";
        let err = load_dataset(csv.as_bytes(), &Schema::positional()).unwrap_err();
        match err {
            Error::MalformedRow { row, ref column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "time");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_value_and_unknown_status_are_rejected() {
        let csv = "id,time,status,exposure,instrument,age\na,1,1,0,0,\n";
        assert!(matches!(
            load_dataset(csv.as_bytes(), &Schema::positional()),
            Err(Error::MalformedRow { row: 1, .. })
        ));
        let csv = "id,time,status,exposure,instrument\na,1,x,0,0\n";
        assert!(matches!(
            load_dataset(csv.as_bytes(), &Schema::positional()),
            Err(Error::UnknownStatus { row: 1, .. })
        ));
        let csv = "id,time,status,exposure,instrument\n";
        assert_eq!(
            load_dataset(csv.as_bytes(), &Schema::positional()).unwrap_err(),
            Error::EmptyInput
        );
    }

    #[test]
    fn named_schema_maps_columns() {
        let csv = "ftime,st,z,rtx,age,sex\n1.5,1,1,0,50,1\n2.5,0,0,1,60,0\n";
        let schema =
            Schema::parse("time=ftime,status=st,exposure=rtx,instrument=z,covariates=sex+age")
                .unwrap();
        let d = load_dataset(csv.as_bytes(), &schema).unwrap();
        assert_eq!(d.covariate_names, vec!["sex", "age"]);
        assert_eq!(d.subjects[0].covariates, vec![1.0, 50.0]);
        assert_eq!(d.subjects[1].exposure, 1.0);
        assert_eq!(d.subjects[0].id, "1");
        let missing = Schema::parse("time=t,status=st,exposure=rtx,instrument=z").unwrap();
        assert_eq!(
            load_dataset(csv.as_bytes(), &missing).unwrap_err(),
            Error::MissingColumn("t".into())
        );
    }

    #[test]
    fn constant_column_centers_to_zero() {
        let d = Dataset::new(
            vec![
                subj(1.0, 1, 3.0, 1.0, vec![7.0]),
                subj(2.0, 0, 5.0, 0.0, vec![7.0]),
            ],
            1,
        )
        .unwrap();
        let c = center(&d).unwrap();
        assert!(c.subjects.iter().all(|s| s.covariates[0] == 0.0));
        assert_eq!(c.centering_offsets, vec![0.5, 4.0, 7.0]);
        assert!(c.is_centered());
    }

    #[test]
    fn binary_instrument_centers_by_hand_mean() {
        let subjects = (0..10)
            .map(|i| subj(1.0 + i as f64, 1, 0.0, if i < 4 { 1.0 } else { 0.0 }, vec![]))
            .collect();
        let c = center(&Dataset::new(subjects, 1).unwrap()).unwrap();
        for (i, s) in c.subjects.iter().enumerate() {
            let want = if i < 4 { 0.6 } else { -0.4 };
            assert!((s.instrument - want).abs() < 1e-15);
        }
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let d = Dataset::new(
            vec![
                subj(0.1 + 0.2, 1, 1.0 / 3.0, 1.0, vec![std::f64::consts::PI, -1e-300]),
                subj(2.0, 2, -0.0, 0.0, vec![1e300, 5e-324]),
            ],
            1,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        let back = load_dataset(buf.as_slice(), &Schema::positional()).unwrap();
        for (a, b) in d.subjects.iter().zip(&back.subjects) {
            assert_eq!(a.time.to_bits(), b.time.to_bits());
            assert_eq!(a.exposure.to_bits(), b.exposure.to_bits());
            for (x, y) in a.covariates.iter().zip(&b.covariates) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn tau_is_validated() {
        let d = Dataset::new(vec![subj(1.0, 1, 0.0, 0.0, vec![]), subj(3.0, 0, 0.0, 0.0, vec![])], 1)
            .unwrap();
        let mut o = FitOptions::default();
        assert_eq!(o.resolve_tau(&d).unwrap(), 1.0);
        o.tau = Tau::Fixed(4.0);
        assert!(o.resolve_tau(&d).is_err());
        o.tau = Tau::Fixed(2.5);
        assert_eq!(o.resolve_tau(&d).unwrap(), 2.5);
        o.ci_level = 1.0;
        assert!(o.resolve_tau(&d).is_err());
    }
}
