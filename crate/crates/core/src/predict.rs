//! Posterior-predictive simulation and the summaries built on it.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::ingest::{haversine_km, time_to_year_week, CovariateDesign, CovariateSeries};
use crate::linalg;
use crate::model::{draw_residual, mean_from_covariate, sample_label, ModelParams, SiteMarginal};
use crate::rng::substream;
use crate::sampler::PosteriorSamples;

const TAG_PREDICT: u64 = 0x5052_4544;

/// B predictive fields at one target time, with per-site summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveEnsemble {
    /// B×N simulated fields.
    pub values: DMatrix<f64>,
    /// B×N mean surface of the draw behind each row.
    pub means: DMatrix<f64>,
    /// Posterior draw behind each row.
    pub draw_of_row: Vec<usize>,
    /// Per-site ensemble mean Ŷ.
    pub mean: DVector<f64>,
    /// Per-site ensemble SD σ̃.
    pub sd: DVector<f64>,
    pub t0: usize,
    pub year: usize,
    pub week: usize,
}

impl PredictiveEnsemble {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn n_sites(&self) -> usize {
        self.values.ncols()
    }
}

fn column_summaries(values: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let b = values.nrows() as f64;
    let mut mean = DVector::zeros(values.ncols());
    let mut sd = DVector::zeros(values.ncols());
    for (n, col) in values.column_iter().enumerate() {
        let m = linalg::compensated_sum(col.iter().copied()) / b;
        let ss = linalg::compensated_sum(col.iter().map(|x| (x - m) * (x - m)));
        mean[n] = m;
        sd[n] = (ss / (b - 1.0)).sqrt();
    }
    (mean, sd)
}

/// Simulate `replicates` fields per parameter set at time `t0`; row
/// `b` uses `params[b / replicates]` and its own random substream.
pub fn simulate_predictive(
    params: &[&ModelParams],
    replicates: usize,
    basis: &BasisSet,
    design: &CovariateDesign,
    t0: usize,
    seed: u64,
) -> Result<PredictiveEnsemble> {
    if t0 == 0 {
        return Err(Error::Argument("target time is 1-based".into()));
    }
    let rows = params.len() * replicates;
    if rows < 2 {
        return Err(Error::Argument(format!("a predictive ensemble needs B >= 2, got {rows}")));
    }
    let (year, week) = time_to_year_week(t0, basis.weeks_per_year());
    let x0_row = design.row(year)?;
    let n = basis.n_sites();
    let per_draw: Vec<(DVector<f64>, Vec<DMatrix<f64>>)> = params
        .par_iter()
        .map(|p| {
            let mu = mean_from_covariate(&p.coeffs, basis, x0_row, week);
            let factors = p.clusters.iter().map(|c| linalg::psd_factor(&c.phi)).collect();
            (mu, factors)
        })
        .collect();
    let fields: Vec<DVector<f64>> = (0..rows)
        .into_par_iter()
        .map(|b| {
            let d = b / replicates;
            let p = params[d];
            let (mu, factors) = &per_draw[d];
            let mut rng = substream(seed, TAG_PREDICT, b as u64);
            let k = sample_label(&mut rng, &p.weights.pi);
            let (eps, _, _) = draw_residual(&mut rng, &p.clusters[k], &factors[k], &basis.h);
            mu + eps
        })
        .collect();
    let mut values = DMatrix::zeros(rows, n);
    let mut means = DMatrix::zeros(rows, n);
    for (b, f) in fields.iter().enumerate() {
        values.set_row(b, &f.transpose());
        means.set_row(b, &per_draw[b / replicates].0.transpose());
    }
    let (mean, sd) = column_summaries(&values);
    Ok(PredictiveEnsemble {
        values,
        means,
        draw_of_row: (0..rows).map(|b| b / replicates).collect(),
        mean,
        sd,
        t0,
        year,
        week,
    })
}

/// One predictive field per retained draw.
pub fn posterior_predictive(
    samples: &PosteriorSamples,
    basis: &BasisSet,
    covariate: &CovariateSeries,
    t0: usize,
    seed: u64,
) -> Result<PredictiveEnsemble> {
    let design = CovariateDesign::new(covariate, basis.fit_years())?;
    let params: Vec<&ModelParams> = samples.draws.iter().map(|d| &d.params).collect();
    simulate_predictive(&params, 1, basis, &design, t0, seed)
}

/// Posterior summary of a per-site quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteSummary {
    pub mean: DVector<f64>,
    pub sd: DVector<f64>,
    /// mean / sd, or 0 where the posterior is degenerate at zero.
    pub t_stat: DVector<f64>,
}

fn summarize_draws(draws: &[DVector<f64>]) -> SiteSummary {
    let n = draws[0].len();
    let m = DMatrix::from_fn(draws.len(), n, |b, s| draws[b][s]);
    let (mean, sd) = if draws.len() > 1 {
        column_summaries(&m)
    } else {
        (draws[0].clone(), DVector::zeros(n))
    };
    let t_stat = DVector::from_fn(n, |s, _| if sd[s] > 0.0 { mean[s] / sd[s] } else { 0.0 });
    SiteSummary { mean, sd, t_stat }
}

/// `10 (μ(T1, t2) − μ(1, t2)) / (T1 − 1)` for one parameter set.
pub fn drc_field(params: &ModelParams, basis: &BasisSet, design: &CovariateDesign, t2: usize) -> Result<DVector<f64>> {
    let t1 = basis.fit_years();
    if t1 < 2 {
        return Err(Error::Argument("the rate of change needs at least two fitted years".into()));
    }
    if t2 == 0 || t2 > basis.weeks_per_year() {
        return Err(Error::Argument(format!("week {t2} outside 1..={}", basis.weeks_per_year())));
    }
    let last = mean_from_covariate(&params.coeffs, basis, design.row(t1)?, t2);
    let first = mean_from_covariate(&params.coeffs, basis, design.row(1)?, t2);
    Ok((last - first) * (10.0 / (t1 - 1) as f64))
}

pub fn decadal_rate_of_change(
    samples: &PosteriorSamples,
    basis: &BasisSet,
    covariate: &CovariateSeries,
    t2: usize,
) -> Result<SiteSummary> {
    if samples.is_empty() {
        return Err(Error::Argument("no posterior draws".into()));
    }
    let design = CovariateDesign::new(covariate, basis.fit_years())?;
    let draws = samples
        .draws
        .iter()
        .map(|d| drc_field(&d.params, basis, &design, t2))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize_draws(&draws))
}

/// Rate of change averaged over all weeks of the year, per draw.
pub fn overall_decadal_rate_of_change(
    samples: &PosteriorSamples,
    basis: &BasisSet,
    covariate: &CovariateSeries,
) -> Result<SiteSummary> {
    if samples.is_empty() {
        return Err(Error::Argument("no posterior draws".into()));
    }
    let design = CovariateDesign::new(covariate, basis.fit_years())?;
    let t2n = basis.weeks_per_year();
    let draws = samples
        .draws
        .iter()
        .map(|d| {
            let mut acc = DVector::zeros(basis.n_sites());
            for t2 in 1..=t2n {
                acc += drc_field(&d.params, basis, &design, t2)?;
            }
            Ok(acc / t2n as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize_draws(&draws))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnLevel {
    pub mean: f64,
    pub sd: f64,
    pub per_draw: Vec<f64>,
}

/// `T0`-year return level for one parameter set, the covariate averaged over
/// 1-based covariate year indices `[from, from + T0)`.
pub fn return_level_for(
    params: &ModelParams,
    basis: &BasisSet,
    design: &CovariateDesign,
    site: usize,
    t2: usize,
    t0_years: usize,
    from: usize,
) -> Result<f64> {
    if site >= basis.n_sites() {
        return Err(Error::Argument(format!("site {site} outside 0..{}", basis.n_sites())));
    }
    if t2 == 0 || t2 > basis.weeks_per_year() {
        return Err(Error::Argument(format!("week {t2} outside 1..={}", basis.weeks_per_year())));
    }
    if t0_years == 0 {
        return Err(Error::Argument("return period must be at least one year".into()));
    }
    let x = design.window_mean(from, t0_years)?;
    let mu = mean_from_covariate(&params.coeffs, basis, [design.intercept(), x], t2)[site];
    let p = 1.0 - 1.0 / (basis.weeks_per_year() * t0_years) as f64;
    let q = SiteMarginal::new(site, &params.clusters, &params.weights.pi, &basis.h).quantile(p)?;
    Ok(mu + q)
}

pub fn return_level(
    samples: &PosteriorSamples,
    basis: &BasisSet,
    covariate: &CovariateSeries,
    site: usize,
    t2: usize,
    t0_years: usize,
    reference_year: i64,
) -> Result<ReturnLevel> {
    if samples.is_empty() {
        return Err(Error::Argument("no posterior draws".into()));
    }
    let design = CovariateDesign::new(covariate, basis.fit_years())?;
    let from = covariate.index_of_year(reference_year)?;
    let per_draw = samples
        .draws
        .par_iter()
        .map(|d| return_level_for(&d.params, basis, &design, site, t2, t0_years, from))
        .collect::<Result<Vec<_>>>()?;
    let b = per_draw.len() as f64;
    let mean = linalg::compensated_sum(per_draw.iter().copied()) / b;
    let sd = if per_draw.len() > 1 {
        (linalg::compensated_sum(per_draw.iter().map(|x| (x - mean) * (x - mean))) / (b - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(ReturnLevel { mean, sd, per_draw })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// A common level u at every site.
    Fixed(f64),
    /// The site's marginal p-quantile added to its mean surface.
    Quantile(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExceedanceMode {
    /// At least one site exceeds.
    Union,
    /// Every site exceeds.
    Intersection,
}

impl std::str::FromStr for ExceedanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "union" => Ok(ExceedanceMode::Union),
            "intersection" => Ok(ExceedanceMode::Intersection),
            other => Err(Error::Argument(format!("unknown exceedance mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExceedanceEstimate {
    pub probability: f64,
    pub mc_se: f64,
}

/// Per-row thresholds over `d0`.
fn row_thresholds(
    ens: &PredictiveEnsemble,
    params: &[&ModelParams],
    basis: &BasisSet,
    d0: &[usize],
    threshold: Threshold,
) -> Result<Vec<Vec<f64>>> {
    match threshold {
        Threshold::Fixed(u) => Ok(vec![vec![u; d0.len()]; ens.len()]),
        Threshold::Quantile(p) => {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Argument(format!("quantile level {p} outside (0, 1)")));
            }
            let draws = ens.draw_of_row.iter().copied().max().map_or(0, |m| m + 1);
            if draws > params.len() {
                return Err(Error::Argument("ensemble refers to more draws than were supplied".into()));
            }
            let residual_q = (0..draws)
                .into_par_iter()
                .map(|d| {
                    let p_d = params[d];
                    d0.iter()
                        .map(|&n| SiteMarginal::new(n, &p_d.clusters, &p_d.weights.pi, &basis.h).quantile(p))
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((0..ens.len())
                .map(|b| {
                    let q = &residual_q[ens.draw_of_row[b]];
                    d0.iter().zip(q).map(|(&n, q)| ens.means[(b, n)] + q).collect()
                })
                .collect())
        }
    }
}

/// Monte Carlo frequency of the union or intersection exceedance event over
/// the sites in `d0`. `params` are the parameter sets behind the ensemble.
pub fn exceedance_from_ensemble(
    ens: &PredictiveEnsemble,
    params: &[&ModelParams],
    basis: &BasisSet,
    d0: &[usize],
    threshold: Threshold,
    mode: ExceedanceMode,
) -> Result<ExceedanceEstimate> {
    if d0.is_empty() {
        return Err(Error::Argument("the site set D0 is empty".into()));
    }
    if let Some(n) = d0.iter().find(|n| **n >= ens.n_sites()) {
        return Err(Error::Argument(format!("site {n} outside 0..{}", ens.n_sites())));
    }
    let thresholds = row_thresholds(ens, params, basis, d0, threshold)?;
    let hits = (0..ens.len())
        .filter(|&b| {
            let mut exceed = d0.iter().zip(&thresholds[b]).map(|(&n, u)| ens.values[(b, n)] > *u);
            match mode {
                ExceedanceMode::Union => exceed.any(|e| e),
                ExceedanceMode::Intersection => exceed.all(|e| e),
            }
        })
        .count();
    let b = ens.len() as f64;
    let p = hits as f64 / b;
    Ok(ExceedanceEstimate {
        probability: p,
        mc_se: (p * (1.0 - p) / b).sqrt(),
    })
}

#[allow(clippy::too_many_arguments)]
pub fn joint_exceedance_prob(
    samples: &PosteriorSamples,
    basis: &BasisSet,
    covariate: &CovariateSeries,
    d0: &[usize],
    threshold: Threshold,
    mode: ExceedanceMode,
    t0: usize,
    seed: u64,
) -> Result<ExceedanceEstimate> {
    if d0.is_empty() {
        return Err(Error::Argument("the site set D0 is empty".into()));
    }
    let ens = posterior_predictive(samples, basis, covariate, t0, seed)?;
    let params: Vec<&ModelParams> = samples.draws.iter().map(|d| &d.params).collect();
    exceedance_from_ensemble(&ens, &params, basis, d0, threshold, mode)
}

/// Sites within `radius_km` of `center`; the nearest site is always included.
pub fn sites_within_km(coords: &[(f64, f64)], center: (f64, f64), radius_km: f64) -> Result<Vec<usize>> {
    if coords.is_empty() {
        return Err(Error::Argument("no sites".into()));
    }
    if !(radius_km >= 0.0) {
        return Err(Error::Argument(format!("radius {radius_km} km must be non-negative")));
    }
    let dist: Vec<f64> = coords.iter().map(|c| haversine_km(center, *c)).collect();
    let nearest = (0..dist.len()).min_by(|a, b| dist[*a].total_cmp(&dist[*b])).unwrap_or(0);
    Ok((0..dist.len())
        .filter(|&n| n == nearest || dist[n] <= radius_km)
        .collect())
}
