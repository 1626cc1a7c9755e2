//! Versioned, checksummed fit artifacts.
//!
//! Layout: one header line `subdist-iv-artifact <version> sha256=<hex>`
//! followed by a JSON body. Floats are written with round-trip precision so
//! loading reproduces every numeric field bit-for-bit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::additive::SubdistFit;
use crate::data::FitOptions;
use crate::error::{Error, Result};
use crate::first_stage::FirstStageFit;
use crate::inference::VarianceComponents;
use crate::pipeline::Pipeline;

pub const MAGIC: &str = "subdist-iv-artifact";
pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub tool_version: String,
    /// Digest of the uncentered input data.
    pub input_digest: String,
    pub options: FitOptions,
    pub centering_offsets: Vec<f64>,
    pub covariate_names: Vec<String>,
    pub fit: SubdistFit,
    pub first: Option<FirstStageFit>,
    pub variance: VarianceComponents,
}

impl FitArtifact {
    pub fn from_pipeline(p: &Pipeline, input_digest: String, options: FitOptions) -> Self {
        FitArtifact {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            input_digest,
            options,
            centering_offsets: p.data.centering_offsets.clone(),
            covariate_names: p.data.covariate_names.clone(),
            fit: p.fit.clone(),
            first: p.first.clone(),
            variance: p.variance.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let body = serde_json::to_vec(self).map_err(|e| Error::ArtifactFormat(e.to_string()))?;
        let mut out = format!(
            "{MAGIC} {FORMAT_VERSION} sha256={}\n",
            hex::encode(Sha256::digest(&body))
        )
        .into_bytes();
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or(Error::ArtifactChecksum)?;
        let header = std::str::from_utf8(&bytes[..nl])
            .map_err(|_| Error::ArtifactFormat("header is not UTF-8".into()))?;
        let mut parts = header.split(' ');
        if parts.next() != Some(MAGIC) {
            return Err(Error::ArtifactFormat("missing artifact header".into()));
        }
        let version = parts.next().unwrap_or("");
        if version != FORMAT_VERSION {
            return Err(Error::ArtifactVersion {
                found: version.to_string(),
                expected: FORMAT_VERSION.to_string(),
            });
        }
        let checksum = parts
            .next()
            .and_then(|p| p.strip_prefix("sha256="))
            .ok_or_else(|| Error::ArtifactFormat("missing checksum".into()))?;
        let body = &bytes[nl + 1..];
        if hex::encode(Sha256::digest(body)) != checksum {
            return Err(Error::ArtifactChecksum);
        }
        serde_json::from_slice(body).map_err(|e| Error::ArtifactFormat(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_bytes(&bytes)
    }
}

/// Serializes `f64` as a JSON number when finite and as `"inf"`, `"-inf"`
/// or `"NaN"` otherwise, since JSON has no non-finite numbers.
pub mod nonfinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("NaN")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "NaN" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("invalid float `{other}`"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::additive::FitMode;
    use crate::data::{Dataset, Subject};
    use crate::pipeline::fit_pipeline;

    fn artifact() -> FitArtifact {
        let subjects = (0..50)
            .map(|i| {
                let f = i as f64;
                let xi = (i % 2) as f64;
                Subject {
                    id: i.to_string(),
                    time: 0.1 + ((f * 1.3).sin() + 1.0) + f * 1e-3,
                    status: [1, 2, 0, 1][i % 4],
                    exposure: 0.7 * xi + (f * 0.9).cos() / 3.0,
                    instrument: xi,
                    covariates: vec![(f * 0.31).sin()],
                }
            })
            .collect();
        let d = Dataset::new(subjects, 1).unwrap();
        let opts = FitOptions::default();
        let p = fit_pipeline(&d, &opts, FitMode::Iv).unwrap();
        FitArtifact::from_pipeline(&p, d.digest(), opts)
    }

    #[test]
    fn round_trip_is_exact() {
        let a = artifact();
        let back = FitArtifact::from_bytes(&a.to_bytes().unwrap()).unwrap();
        assert_eq!(a, back);
        for (x, y) in a.fit.beta.iter().zip(&back.fit.beta) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn truncation_and_version_are_detected() {
        let bytes = artifact().to_bytes().unwrap();
        let cut = &bytes[..bytes.len() - 10];
        assert_eq!(FitArtifact::from_bytes(cut).unwrap_err(), Error::ArtifactChecksum);
        let header_only = &bytes[..20];
        assert!(FitArtifact::from_bytes(header_only).is_err());
        let text = String::from_utf8(bytes).unwrap().replacen(" 1 sha256", " 9 sha256", 1);
        assert!(matches!(
            FitArtifact::from_bytes(text.as_bytes()),
            Err(Error::ArtifactVersion { .. })
        ));
    }

    #[test]
    fn nonfinite_floats_survive() {
        #[derive(Serialize, Deserialize)]
        struct W(#[serde(with = "nonfinite")] f64);
        for v in [f64::INFINITY, f64::NEG_INFINITY, 1.5] {
            let s = serde_json::to_string(&W(v)).unwrap();
            assert_eq!(serde_json::from_str::<W>(&s).unwrap().0, v);
        }
        let s = serde_json::to_string(&W(f64::NAN)).unwrap();
        assert!(serde_json::from_str::<W>(&s).unwrap().0.is_nan());
    }
}
