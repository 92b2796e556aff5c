#![allow(dead_code)]

use ltpdpm::basis::{seasonal_spline_matrix, BasisSet, SpatialBasis};
use ltpdpm::ingest::{CovariateDesign, CovariateSeries};
use ltpdpm::model::{ClusterParams, DegreesOfFreedom, MeanCoefficients, MixtureWeights, ModelParams};
use ltpdpm::sampler::{Draw, MCMCConfig, PosteriorSamples};
use nalgebra::{DMatrix, DVector};

pub const WEEKS: usize = 4;

/// Linear covariate 1, 2, …, `len` labelled from year 2000.
pub fn linear_covariate(len: usize) -> CovariateSeries {
    CovariateSeries::new((0..len as i64).map(|i| 2000 + i).collect(), (1..=len).map(|v| v as f64).collect()).unwrap()
}

/// Basis with the given H, a single constant spatial spline, `fit_years`
/// fitted years of `WEEKS` weeks and a linear covariate.
pub fn tiny_basis(h: DMatrix<f64>, delta: Vec<f64>, fit_years: usize) -> (BasisSet, CovariateSeries) {
    let n = h.nrows();
    let cov = linear_covariate(fit_years + 30);
    let x0 = CovariateDesign::new(&cov, fit_years).unwrap().x0();
    let x1 = seasonal_spline_matrix(WEEKS, 4).unwrap();
    let x2 = DMatrix::from_element(n, 1, 1.0);
    let zero = DMatrix::zeros(1, 4);
    let basis = BasisSet::assemble(
        x0,
        x1,
        x2,
        vec![0],
        SpatialBasis {
            h,
            delta: DVector::from_vec(delta),
        },
        [zero.clone(), zero],
    )
    .unwrap();
    (basis, cov)
}

pub fn cluster(phi: DMatrix<f64>, tau2: f64, df: f64) -> ClusterParams {
    ClusterParams {
        phi,
        tau2,
        df: DegreesOfFreedom::from_value(df).unwrap(),
    }
}

pub fn params(coeffs: MeanCoefficients, clusters: Vec<ClusterParams>, pi: Vec<f64>) -> ModelParams {
    ModelParams {
        coeffs,
        clusters,
        weights: MixtureWeights::from_pi(pi, 1.0).unwrap(),
    }
}

pub fn samples_of(params: Vec<ModelParams>) -> PosteriorSamples {
    PosteriorSamples {
        draws: params
            .into_iter()
            .map(|p| Draw {
                counts: vec![0; p.clusters.len()],
                params: p,
                log_likelihood: 0.0,
                log_posterior: 0.0,
            })
            .collect(),
        config: MCMCConfig::default(),
        block_seconds: [0.0; ltpdpm::sampler::N_BLOCKS],
    }
}

/// Unit-norm column `(1, …, 1)/√n`.
pub fn flat_h(n: usize) -> DMatrix<f64> {
    DMatrix::from_element(n, 1, 1.0 / (n as f64).sqrt())
}
