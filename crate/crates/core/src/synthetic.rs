//! Synthetic scenarios with a known generating model: a regular site grid,
//! a trending covariate, a basis built from an exponential correlation and
//! ground-truth parameters.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{leading_eofs, seasonal_spline_matrix, spatial_spline_matrix, BasisSet, EofRule, SpatialLayout};
use crate::error::{Error, Result};
use crate::ingest::{haversine_km, CovariateDesign, CovariateSeries, GriddedDataset};
use crate::model::{generate_synthetic, ClusterParams, DegreesOfFreedom, LatentState, MeanCoefficients, MixtureWeights, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub weight: f64,
    pub df: f64,
    pub tau2: f64,
    /// Φ_k = phi_scale · diag(Δ).
    pub phi_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub n_lon: usize,
    pub n_lat: usize,
    pub lon_range: [f64; 2],
    pub lat_range: [f64; 2],
    pub years: usize,
    pub weeks_per_year: usize,
    pub p_t: usize,
    pub layout: SpatialLayout,
    pub rank: usize,
    /// e-folding distance of the exponential correlation, km.
    pub correlation_km: f64,
    pub level: f64,
    pub seasonal_amplitude: f64,
    /// Mean change per unit of the raw covariate.
    pub trend: f64,
    pub first_year: i64,
    /// Covariate increase per year.
    pub covariate_slope: f64,
    /// Covariate years beyond the simulated window, for projections.
    pub projection_years: usize,
    pub components: Vec<ComponentSpec>,
    pub delta: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_lon: 5,
            n_lat: 4,
            lon_range: [35.0, 39.0],
            lat_range: [18.0, 21.0],
            years: 4,
            weeks_per_year: 52,
            p_t: 6,
            layout: SpatialLayout {
                n_long: 4,
                n_lat: 4,
                ..SpatialLayout::default()
            },
            rank: 3,
            correlation_km: 250.0,
            level: 28.0,
            seasonal_amplitude: 2.0,
            trend: 1.0,
            first_year: 2000,
            covariate_slope: 0.05,
            projection_years: 20,
            components: vec![
                ComponentSpec {
                    weight: 0.6,
                    df: 20.0,
                    tau2: 0.05,
                    phi_scale: 0.3,
                },
                ComponentSpec {
                    weight: 0.4,
                    df: 3.0,
                    tau2: 0.05,
                    phi_scale: 0.3,
                },
            ],
            delta: 1.0,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn n_sites(&self) -> usize {
        self.n_lon * self.n_lat
    }

    pub fn n_weeks(&self) -> usize {
        self.years * self.weeks_per_year
    }
}

/// Regular lon/lat grid, longitude varying fastest.
pub fn grid_coords(n_lon: usize, n_lat: usize, lon: [f64; 2], lat: [f64; 2]) -> Vec<(f64, f64)> {
    let step = |r: [f64; 2], n: usize, i: usize| {
        if n == 1 {
            0.5 * (r[0] + r[1])
        } else {
            r[0] + (r[1] - r[0]) * i as f64 / (n - 1) as f64
        }
    };
    (0..n_lat)
        .flat_map(|j| (0..n_lon).map(move |i| (step(lon, n_lon, i), step(lat, n_lat, j))))
        .collect()
}

pub fn exponential_correlation(coords: &[(f64, f64)], range_km: f64) -> DMatrix<f64> {
    let n = coords.len();
    DMatrix::from_fn(n, n, |i, j| (-haversine_km(coords[i], coords[j]) / range_km).exp())
}

/// Linear covariate with a small deterministic wiggle.
pub fn trend_covariate(first_year: i64, len: usize, slope: f64) -> Result<CovariateSeries> {
    let years = (0..len as i64).map(|i| first_year + i).collect();
    let values = (0..len)
        .map(|i| 27.0 + slope * i as f64 + 0.02 * (1.3 * i as f64).sin())
        .collect();
    CovariateSeries::new(years, values)
}

/// Basis whose EOFs come from the true correlation rather than the data.
pub fn truth_basis(cfg: &ScenarioConfig, coords: &[(f64, f64)], cov: &CovariateSeries) -> Result<BasisSet> {
    let x0 = CovariateDesign::new(cov, cfg.years)?.x0();
    let x1 = seasonal_spline_matrix(cfg.weeks_per_year, cfg.p_t)?;
    let splines = spatial_spline_matrix(coords, &cfg.layout, 1.0)?;
    let eofs = leading_eofs(&exponential_correlation(coords, cfg.correlation_km), EofRule::Count(cfg.rank))?;
    let zero = DMatrix::zeros(splines.matrix.ncols(), cfg.p_t);
    BasisSet::assemble(x0, x1, splines.matrix, splines.retained, eofs, [zero.clone(), zero])
}

/// Mean coefficients for a level with a seasonal cycle and a covariate trend.
/// Both spline bases sum to one, so a constant block shifts the mean uniformly.
pub fn truth_coefficients(cfg: &ScenarioConfig, basis: &BasisSet, design: &CovariateDesign) -> MeanCoefficients {
    let (p_s, p_t) = (basis.p_s(), basis.p_t());
    let root_t1 = (basis.fit_years() as f64).sqrt();
    let mut c = MeanCoefficients::zeros(p_s, p_t);
    // The standardised covariate moves by 1/scale per raw unit and averages
    // zero over the fit window, so `level` is the fit-window mean.
    let per_raw = design.standardize(1.0) - design.standardize(0.0);
    let slope = cfg.trend / per_raw;
    for j in 0..2 {
        c.beta[0][j] = DMatrix::from_fn(p_s, p_t, |s, k| {
            let phase = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / p_t as f64;
            let tilt = 0.3 * (s as f64 / p_s.max(1) as f64 - 0.5);
            root_t1 * (cfg.level + tilt + cfg.seasonal_amplitude * phase.sin())
        });
        c.beta[1][j] = DMatrix::from_element(p_s, p_t, slope);
    }
    for i in 0..2 {
        for j in 0..2 {
            let b = &c.beta[i][j];
            let m = b.mean();
            c.mu_hyper[i][j] = m;
            c.sigma2_hyper[i][j] = (b.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / b.len() as f64).max(1e-6);
        }
    }
    c
}

pub fn truth_params(cfg: &ScenarioConfig, basis: &BasisSet, design: &CovariateDesign) -> Result<ModelParams> {
    if cfg.components.is_empty() {
        return Err(Error::Argument("scenario needs at least one component".into()));
    }
    let delta = DMatrix::from_diagonal(&basis.delta);
    let clusters = cfg
        .components
        .iter()
        .map(|c| {
            Ok(ClusterParams {
                phi: &delta * c.phi_scale,
                tau2: c.tau2,
                df: DegreesOfFreedom::from_value(c.df)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = cfg.components.iter().map(|c| c.weight).sum();
    let pi = cfg.components.iter().map(|c| c.weight / total).collect();
    Ok(ModelParams {
        coeffs: truth_coefficients(cfg, basis, design),
        clusters,
        weights: MixtureWeights::from_pi(pi, cfg.delta)?,
    })
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub data: GriddedDataset,
    pub covariate: CovariateSeries,
    pub basis: BasisSet,
    pub params: ModelParams,
    pub latent: LatentState,
}

pub fn simulate_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    if cfg.n_sites() < 2 || cfg.years < 2 {
        return Err(Error::Argument("scenario needs at least 2 sites and 2 years".into()));
    }
    let coords = grid_coords(cfg.n_lon, cfg.n_lat, cfg.lon_range, cfg.lat_range);
    let covariate = trend_covariate(cfg.first_year, cfg.years + cfg.projection_years, cfg.covariate_slope)?;
    let basis = truth_basis(cfg, &coords, &covariate)?;
    let design = CovariateDesign::new(&covariate, cfg.years)?;
    let params = truth_params(cfg, &basis, &design)?;
    let (data, latent) = generate_synthetic(&params, &basis, &design, &coords, cfg.n_weeks(), cfg.seed)?;
    Ok(Scenario {
        data,
        covariate,
        basis,
        params,
        latent,
    })
}
