//! Proper scoring of held-out data: Brier score, threshold-weighted CRPS,
//! skill scores and the chronological evaluation harness.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::ingest::{CovariateDesign, CovariateSeries, GriddedDataset};
use crate::linalg::{compensated_sum, NeumaierSum};
use crate::model::ModelParams;
use crate::predict::simulate_predictive;
use crate::rng::derive_seed;
use crate::sampler::PosteriorSamples;

/// Empirical step CDF of predictive draws for one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveCdf {
    draws: Vec<f64>,
}

impl PredictiveCdf {
    pub fn new(mut draws: Vec<f64>) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::Argument("a predictive CDF needs at least one draw".into()));
        }
        if draws.iter().any(|d| !d.is_finite()) {
            return Err(Error::Argument("predictive draws must be finite".into()));
        }
        draws.sort_by(f64::total_cmp);
        Ok(PredictiveCdf { draws })
    }

    pub fn draws(&self) -> &[f64] {
        &self.draws
    }

    /// Number of draws at or below `x`.
    fn count_le(&self, x: f64) -> usize {
        self.draws.partition_point(|d| *d <= x)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.count_le(x) as f64 / self.draws.len() as f64
    }

    pub fn sf(&self, x: f64) -> f64 {
        (self.draws.len() - self.count_le(x)) as f64 / self.draws.len() as f64
    }
}

/// `(1{y > u} − F̄(u))²`.
pub fn brier_score(y: f64, f: &PredictiveCdf, u: f64) -> f64 {
    let event = if y > u { 1.0 } else { 0.0 };
    let d = event - f.sf(u);
    d * d
}

/// `∫_u^∞ (F(x) − 1{y ≤ x})² dx`, exact for the step CDF: the integrand is
/// constant between consecutive breakpoints and zero past the largest one.
pub fn twcrps(y: f64, f: &PredictiveCdf, u: f64) -> f64 {
    let b = f.draws.len() as f64;
    let start = f.count_le(u);
    let mut points: Vec<f64> = f.draws[start..].to_vec();
    if y > u {
        let at = points.partition_point(|d| *d <= y);
        points.insert(at, y);
    }
    let mut total = NeumaierSum::default();
    let mut left = u;
    let mut below = start;
    for &p in &points {
        if p > left {
            let ind = if y <= left { 1.0 } else { 0.0 };
            let d = below as f64 / b - ind;
            total.add(d * d * (p - left));
            left = p;
        }
        below = f.count_le(left);
    }
    total.value()
}

/// Skill of a model against a benchmark, percent: `100 (m_B − m_M) / m_B`.
pub fn skill_score(model_mean: f64, benchmark_mean: f64) -> Result<f64> {
    if benchmark_mean == 0.0 {
        return Err(Error::UndefinedSkill);
    }
    Ok(100.0 * (benchmark_mean - model_mean) / benchmark_mean)
}

fn flat_mean(x: &[f64]) -> f64 {
    compensated_sum(x.iter().copied()) / x.len() as f64
}

/// Per-cell scores of one model at one level.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CellScores {
    pub brier: Vec<f64>,
    pub twcrps: Vec<f64>,
}

/// `(BSS %, TWCRPSS %)` from aligned per-cell scores, flat means over cells.
pub fn skill_scores(model: &CellScores, benchmark: &CellScores) -> Result<(f64, f64)> {
    if model.brier.len() != benchmark.brier.len()
        || model.twcrps.len() != benchmark.twcrps.len()
        || model.brier.is_empty()
        || model.twcrps.is_empty()
    {
        return Err(Error::Shape("score vectors must be non-empty and aligned".into()));
    }
    Ok((
        skill_score(flat_mean(&model.brier), flat_mean(&benchmark.brier))?,
        skill_score(flat_mean(&model.twcrps), flat_mean(&benchmark.twcrps))?,
    ))
}

/// Columns `1..=cut` for training, the rest for testing.
pub fn chronological_split(data: &GriddedDataset, cut: usize) -> Result<(GriddedDataset, GriddedDataset)> {
    let t = data.n_weeks();
    let wpy = data.weeks_per_year();
    if cut < 1 || cut >= t || cut % wpy != 0 {
        return Err(Error::Argument(format!(
            "cut {cut} must be a year boundary (multiple of {wpy}) strictly inside 1..{t}"
        )));
    }
    Ok((data.weeks(1, cut)?, data.weeks(cut + 1, t)?))
}

/// Type-7 (linear interpolation) sample quantile.
pub fn quantile_type7(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    type7_sorted(&sorted, p)
}

fn type7_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `steps` levels at training quantiles spaced evenly in probability over
/// `[p_lo, p_hi]`.
pub fn threshold_levels(train: &DMatrix<f64>, p_lo: f64, p_hi: f64, steps: usize) -> Result<Vec<f64>> {
    if train.is_empty() {
        return Err(Error::Argument("no training values".into()));
    }
    if !(0.0 <= p_lo && p_lo <= p_hi && p_hi <= 1.0) || steps == 0 {
        return Err(Error::Argument(format!("bad level range [{p_lo}, {p_hi}] with {steps} steps")));
    }
    let mut sorted: Vec<f64> = train.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    Ok((0..steps)
        .map(|i| {
            let p = if steps == 1 {
                p_lo
            } else {
                p_lo + (p_hi - p_lo) * i as f64 / (steps - 1) as f64
            };
            type7_sorted(&sorted, p)
        })
        .collect())
}

/// Mean scores of one model over the test cells at each level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelScores {
    pub level: f64,
    pub brier: f64,
    pub twcrps: f64,
    pub cells: usize,
}

const TAG_SCORE: u64 = 0x5C0E;

/// Score the posterior predictive of `samples` on every cell of `test`,
/// whose first column is time `first_time` in the model's calendar.
pub fn score_model(
    samples: &PosteriorSamples,
    basis: &BasisSet,
    covariate: &CovariateSeries,
    test: &GriddedDataset,
    first_time: usize,
    levels: &[f64],
    seed: u64,
) -> Result<Vec<LevelScores>> {
    if samples.len() < 2 {
        return Err(Error::Argument("scoring needs at least two posterior draws".into()));
    }
    if test.n_sites() != basis.n_sites() {
        return Err(Error::Shape("test data and basis disagree on the number of sites".into()));
    }
    let design = CovariateDesign::new(covariate, basis.fit_years())?;
    let params: Vec<&ModelParams> = samples.draws.iter().map(|d| &d.params).collect();
    let mut brier = vec![NeumaierSum::default(); levels.len()];
    let mut crps = vec![NeumaierSum::default(); levels.len()];
    for s in 0..test.n_weeks() {
        let t0 = first_time + s;
        let ens = simulate_predictive(&params, 1, basis, &design, t0, derive_seed(seed, TAG_SCORE, t0 as u64))?;
        let obs = test.week(s + 1);
        let per_site: Vec<Vec<(f64, f64)>> = (0..test.n_sites())
            .into_par_iter()
            .map(|n| {
                let f = PredictiveCdf::new(ens.values.column(n).iter().copied().collect())?;
                Ok(levels.iter().map(|u| (brier_score(obs[n], &f, *u), twcrps(obs[n], &f, *u))).collect())
            })
            .collect::<Result<_>>()?;
        for site in per_site {
            for (i, (b, c)) in site.into_iter().enumerate() {
                brier[i].add(b);
                crps[i].add(c);
            }
        }
    }
    let cells = test.n_sites() * test.n_weeks();
    Ok(levels
        .iter()
        .enumerate()
        .map(|(i, u)| LevelScores {
            level: *u,
            brier: brier[i].value() / cells as f64,
            twcrps: crps[i].value() / cells as f64,
            cells,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkillRow {
    pub model: String,
    pub u: f64,
    pub bss: f64,
    pub twcrpss: f64,
}

/// Skill of `model` against `benchmark` at each common level.
pub fn skill_table(name: &str, model: &[LevelScores], benchmark: &[LevelScores]) -> Result<Vec<SkillRow>> {
    if model.len() != benchmark.len() {
        return Err(Error::Shape("models were scored at different levels".into()));
    }
    model
        .iter()
        .zip(benchmark)
        .map(|(m, b)| {
            if m.level != b.level || m.cells != b.cells {
                return Err(Error::Shape("models were scored on different cells or levels".into()));
            }
            Ok(SkillRow {
                model: name.to_string(),
                u: m.level,
                bss: skill_score(m.brier, b.brier)?,
                twcrpss: skill_score(m.twcrps, b.twcrps)?,
            })
        })
        .collect()
}
