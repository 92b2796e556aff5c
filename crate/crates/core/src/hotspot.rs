//! Exceedance confidence regions from a predictive ensemble.

use nalgebra::DVector;
use serde::Serialize;

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::ingest::CovariateSeries;
use crate::predict::{posterior_predictive, PredictiveEnsemble};
use crate::sampler::PosteriorSamples;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HotspotResult {
    /// Sites in the estimated region, ascending.
    pub region: Vec<usize>,
    pub critical_value: f64,
    pub test_stats: Vec<f64>,
    pub alpha: f64,
    pub threshold: f64,
    pub t0: usize,
}

/// `Ỹ_n = √B (Ŷ_n − u) / σ̃_n`.
pub fn test_statistic(ens: &PredictiveEnsemble, u: f64) -> Result<DVector<f64>> {
    if let Some(n) = ens.sd.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::Degenerate(format!("predictive SD is zero at site {n}")));
    }
    let root_b = (ens.len() as f64).sqrt();
    Ok(DVector::from_fn(ens.n_sites(), |n, _| root_b * (ens.mean[n] - u) / ens.sd[n]))
}

/// Per-row minimum of the statistic over the sites at or above `u`; `+∞`
/// for rows where no site reaches `u`.
pub fn row_minima(ens: &PredictiveEnsemble, stats: &DVector<f64>, u: f64) -> Vec<f64> {
    ens.values
        .row_iter()
        .map(|row| {
            row.iter()
                .zip(stats.iter())
                .filter(|(y, _)| **y >= u)
                .map(|(_, s)| *s)
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Lower (type-1) empirical quantile: the smallest order statistic whose
/// empirical CDF reaches `p`.
pub fn lower_quantile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

/// `Ĉ_α`, the α-quantile of the per-row minima.
pub fn critical_value(ens: &PredictiveEnsemble, stats: &DVector<f64>, u: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Argument(format!("alpha {alpha} outside (0, 1)")));
    }
    if stats.len() != ens.n_sites() {
        return Err(Error::Shape("test statistics do not match the ensemble".into()));
    }
    let minima = row_minima(ens, stats, u);
    if minima.iter().all(|m| m.is_infinite()) {
        return Err(Error::UndefinedRegion(format!(
            "no predictive draw reaches u = {u} at any site"
        )));
    }
    Ok(lower_quantile(&minima, alpha))
}

pub fn hotspot_from_ensemble(ens: &PredictiveEnsemble, u: f64, alpha: f64) -> Result<HotspotResult> {
    let stats = test_statistic(ens, u)?;
    let c = critical_value(ens, &stats, u, alpha)?;
    Ok(HotspotResult {
        region: (0..stats.len()).filter(|&n| stats[n] >= c).collect(),
        critical_value: c,
        test_stats: stats.iter().copied().collect(),
        alpha,
        threshold: u,
        t0: ens.t0,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_hotspot(
    samples: &PosteriorSamples,
    basis: &BasisSet,
    covariate: &CovariateSeries,
    t0: usize,
    u: f64,
    alpha: f64,
    seed: u64,
) -> Result<HotspotResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Argument(format!("alpha {alpha} outside (0, 1)")));
    }
    let ens = posterior_predictive(samples, basis, covariate, t0, seed)?;
    hotspot_from_ensemble(&ens, u, alpha)
}
