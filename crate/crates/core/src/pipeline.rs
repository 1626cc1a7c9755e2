//! End-to-end composition: center, censoring weights, first stage, second
//! stage, influence functions and covariance.

use crate::additive::{fit_iv, fit_naive, FitMode, SubdistFit};
use crate::censoring::{build_ipcw, fit_km_censoring, CensoringSurvival, IpcwProcesses};
use crate::data::{center, Dataset, FitOptions};
use crate::error::Result;
use crate::first_stage::{fit_first_stage, FirstStageFit};
use crate::inference::{influence_functions, sandwich_variance, InfluenceRecords, VarianceComponents};

#[derive(Debug, Clone)]
pub struct Pipeline {
    /// Centered data the fit was computed on.
    pub data: Dataset,
    pub censoring: CensoringSurvival,
    pub ipcw: IpcwProcesses,
    /// Present for IV fits.
    pub first: Option<FirstStageFit>,
    pub fit: SubdistFit,
    pub influence: InfluenceRecords,
    pub variance: VarianceComponents,
}

pub fn fit_pipeline(raw: &Dataset, opts: &FitOptions, mode: FitMode) -> Result<Pipeline> {
    let data = center(raw)?;
    let tau = opts.resolve_tau(&data)?;
    let censoring = fit_km_censoring(&data)?;
    let ipcw = build_ipcw(&data, &censoring, tau)?;
    let first = match mode {
        FitMode::Iv => Some(fit_first_stage(&data)?),
        FitMode::Naive => None,
    };
    let fit = match &first {
        Some(first) => fit_iv(&data, first, &ipcw, opts)?,
        None => fit_naive(&data, &ipcw, opts)?,
    };
    let influence = influence_functions(&fit, &data, first.as_ref(), &ipcw, &censoring)?;
    let variance = sandwich_variance(&influence, &fit, first.as_ref())?;
    Ok(Pipeline {
        data,
        censoring,
        ipcw,
        first,
        fit,
        influence,
        variance,
    })
}
