//! Gibbs sampler for the mixture model, its configuration and retained draws.

pub mod conditionals;
pub mod diagnostics;
pub mod geweke;
pub mod store;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::dist::{gamma_logpdf, inverse_gamma_logpdf, inverse_wishart_logpdf, normal_logpdf};
use crate::error::{Error, Result};
use crate::ingest::GriddedDataset;
use crate::model::{
    dpm_logdensity, mean_matrix, ClusterParams, DegreesOfFreedom, LatentState, MeanCoefficients, MixtureWeights,
    ModelParams,
};
use crate::rng::substream;

use conditionals::*;

/// Hyperparameters of the priors on the mean and residual model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    /// Prior SD of μ_{i;j}, per covariate column i.
    pub mu_sd: [f64; 2],
    /// Inverse-gamma shape and scale of σ²_{i;j}, per i.
    pub sigma2_shape: [f64; 2],
    pub sigma2_scale: [f64; 2],
    /// Φ_k ~ IW(L + offset, Δ).
    pub phi_df_offset: f64,
    pub tau2_shape: f64,
    pub tau2_scale: f64,
    pub delta_shape: f64,
    pub delta_rate: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            mu_sd: [100.0, 10.0],
            sigma2_shape: [0.01, 0.1],
            sigma2_scale: [0.01, 0.1],
            phi_df_offset: 2.0,
            tau2_shape: 1.0,
            tau2_scale: 1.0,
            delta_shape: 0.1,
            delta_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MCMCConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Number of mixture components.
    pub k: usize,
    pub seed: u64,
    /// Pin every a_k at this grid value and skip its update.
    pub fixed_df: Option<f64>,
    pub hyper: Hyperparameters,
}

impl Default for MCMCConfig {
    fn default() -> Self {
        MCMCConfig {
            n_iter: 60_000,
            burn_in: 10_000,
            thin: 5,
            k: 5,
            seed: 1,
            fixed_df: None,
            hyper: Hyperparameters::default(),
        }
    }
}

impl MCMCConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iter {
            return Err(Error::Argument(format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(Error::Argument("thin must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(Error::Argument("need at least one mixture component".into()));
        }
        if let Some(a) = self.fixed_df {
            DegreesOfFreedom::from_value(a)?;
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }
}

/// Full sampler state: parameters plus latent variables.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsState {
    pub coeffs: MeanCoefficients,
    pub clusters: Vec<ClusterParams>,
    pub weights: MixtureWeights,
    pub latent: LatentState,
}

impl GibbsState {
    pub fn params(&self) -> ModelParams {
        ModelParams {
            coeffs: self.coeffs.clone(),
            clusters: self.clusters.clone(),
            weights: self.weights.clone(),
        }
    }

    /// Relabel components: new component `k` is old component `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let kk = self.clusters.len();
        let mut seen = vec![false; kk];
        if perm.len() != kk || perm.iter().any(|&p| p >= kk || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Argument("not a permutation of the components".into()));
        }
        let mut inverse = vec![0; kk];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let clusters = perm.iter().map(|&o| self.clusters[o].clone()).collect();
        let pi: Vec<f64> = perm.iter().map(|&o| self.weights.pi[o]).collect();
        let weights = MixtureWeights::from_pi(pi, self.weights.delta)?;
        let mut latent = self.latent.clone();
        for g in latent.labels.iter_mut() {
            *g = inverse[*g];
        }
        Ok(GibbsState {
            coeffs: self.coeffs.clone(),
            clusters,
            weights,
            latent,
        })
    }
}

/// Starting state: β from the preliminary fit, uniform random labels, unit
/// scales, W from the projected residuals, Φ = Δ, τ² = 0.1, a spread over the
/// grid and δ = 1.
pub fn initial_state(data: &SamplerData, cfg: &MCMCConfig) -> Result<GibbsState> {
    let kk = cfg.k;
    let basis = &data.basis;
    let mut coeffs = MeanCoefficients::from_least_squares(basis);
    coeffs.sigma2_hyper = [[1.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let b = &coeffs.beta[i][j];
            let mean = b.mean();
            coeffs.mu_hyper[i][j] = mean;
            let var = b.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / b.len().max(1) as f64;
            coeffs.sigma2_hyper[i][j] = var.max(1e-6);
        }
    }
    let clusters = (0..kk)
        .map(|k| {
            let df = match cfg.fixed_df {
                Some(a) => DegreesOfFreedom::from_value(a)?,
                None => DegreesOfFreedom::grid_index(
                    ((2 * k + 1) * DegreesOfFreedom::GRID_LEN / (2 * kk)).min(DegreesOfFreedom::GRID_LEN - 1),
                ),
            };
            Ok(ClusterParams {
                phi: data.delta_matrix(),
                tau2: 0.1,
                df,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = MixtureWeights::from_pi(vec![1.0 / kk as f64; kk], 1.0)?;
    let t = data.n_weeks();
    let labels = (0..t)
        .map(|s| substream(cfg.seed, INIT_TAG, s as u64).random_range(0..kk))
        .collect();
    let mean = mean_matrix(&coeffs, basis);
    let w = basis.h.tr_mul(&(&data.y - mean));
    Ok(GibbsState {
        coeffs,
        clusters,
        weights,
        latent: LatentState {
            labels,
            sigma2: vec![1.0; t],
            w,
        },
    })
}

const INIT_TAG: u64 = 0x1417;

pub const N_BLOCKS: usize = 9;

/// Update order within one sweep.
pub const BLOCK_NAMES: [&str; N_BLOCKS] = [
    "latent",
    "update_phi",
    "update_tau",
    "rescale_clusters",
    "update_df",
    "update_sticks",
    "update_delta",
    "update_beta",
    "update_mean_hypers",
];

fn wrap(iteration: usize, block: &'static str) -> impl FnOnce(Error) -> Error {
    move |e| Error::Sampler {
        iteration,
        block,
        source: Box::new(e),
    }
}

/// One Gibbs sweep. `timings` accumulates seconds per block.
pub fn sweep(
    data: &SamplerData,
    cfg: &MCMCConfig,
    state: &mut GibbsState,
    iteration: usize,
    timings: &mut [f64; N_BLOCKS],
) -> Result<()> {
    let seed = cfg.seed;
    let hyper = &cfg.hyper;
    let mut clock = Instant::now();
    let mut lap = |slot: usize, timings: &mut [f64; N_BLOCKS]| {
        timings[slot] += clock.elapsed().as_secs_f64();
        clock = Instant::now();
    };
    let res = residuals(data, state);
    update_latent(data, state, &res, seed, iteration).map_err(wrap(iteration, BLOCK_NAMES[0]))?;
    lap(0, timings);
    update_phi(data, hyper, state, &mut rng_for(seed, iteration, BLOCK_PHI)).map_err(wrap(iteration, BLOCK_NAMES[1]))?;
    lap(1, timings);
    update_tau(data, hyper, state, &res, &mut rng_for(seed, iteration, BLOCK_TAU))
        .map_err(wrap(iteration, BLOCK_NAMES[2]))?;
    lap(2, timings);
    rescale_clusters(data, hyper, state, &mut rng_for(seed, iteration, BLOCK_RESCALE))
        .map_err(wrap(iteration, BLOCK_NAMES[3]))?;
    lap(3, timings);
    if cfg.fixed_df.is_none() {
        update_df(state, &mut rng_for(seed, iteration, BLOCK_DF));
    }
    lap(4, timings);
    update_sticks(state, &mut rng_for(seed, iteration, BLOCK_STICKS)).map_err(wrap(iteration, BLOCK_NAMES[5]))?;
    lap(5, timings);
    update_delta(hyper, state, &mut rng_for(seed, iteration, BLOCK_DELTA));
    lap(6, timings);
    update_beta(data, state, &mut rng_for(seed, iteration, BLOCK_BETA)).map_err(wrap(iteration, BLOCK_NAMES[7]))?;
    lap(7, timings);
    update_mean_hypers(hyper, state, &mut rng_for(seed, iteration, BLOCK_HYPER));
    lap(8, timings);
    Ok(())
}

/// One retained posterior draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub params: ModelParams,
    /// Cluster occupancy m_k at this draw.
    pub counts: Vec<usize>,
    /// Marginal log-likelihood of the data with W, σ² and g integrated out.
    pub log_likelihood: f64,
    /// `log_likelihood` plus the log prior density of the parameters.
    pub log_posterior: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    pub draws: Vec<Draw>,
    pub config: MCMCConfig,
    /// Seconds per sweep block, summed over the run.
    pub block_seconds: [f64; N_BLOCKS],
}

impl PosteriorSamples {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

/// Marginal log-likelihood `Σ_t log f_DPM(Y_t − μ_t)`.
pub fn log_likelihood(data: &SamplerData, params: &ModelParams) -> Result<f64> {
    let mean = mean_matrix(&params.coeffs, &data.basis);
    let mut total = crate::linalg::NeumaierSum::default();
    for t in 0..data.n_weeks() {
        let r = DVector::from(data.y.column(t) - mean.column(t));
        total.add(dpm_logdensity(&r, &params.clusters, &params.weights.pi, &data.basis.h)?);
    }
    Ok(total.value())
}

pub fn log_prior(data: &SamplerData, hyper: &Hyperparameters, params: &ModelParams) -> Result<f64> {
    let mut lp = 0.0;
    let c = &params.coeffs;
    for i in 0..2 {
        for j in 0..2 {
            let (mu, s2) = (c.mu_hyper[i][j], c.sigma2_hyper[i][j]);
            lp += c.beta[i][j].iter().map(|b| normal_logpdf(*b, mu, s2)).sum::<f64>();
            lp += normal_logpdf(mu, 0.0, hyper.mu_sd[i] * hyper.mu_sd[i]);
            lp += inverse_gamma_logpdf(s2, hyper.sigma2_shape[i], hyper.sigma2_scale[i]);
        }
    }
    let l = data.rank() as f64;
    let delta = data.delta_matrix();
    for k in &params.clusters {
        lp += inverse_wishart_logpdf(&k.phi, l + hyper.phi_df_offset, &delta)?;
        lp += inverse_gamma_logpdf(k.tau2, hyper.tau2_shape, hyper.tau2_scale);
        lp -= (DegreesOfFreedom::GRID_LEN as f64).ln();
    }
    let w = &params.weights;
    for v in &w.v[..w.v.len() - 1] {
        lp += w.delta.ln() + (w.delta - 1.0) * (-v).ln_1p();
    }
    lp += gamma_logpdf(w.delta, hyper.delta_shape, hyper.delta_rate);
    Ok(lp)
}

fn record(data: &SamplerData, cfg: &MCMCConfig, state: &GibbsState) -> Result<Draw> {
    let params = state.params();
    let log_likelihood = log_likelihood(data, &params)?;
    let log_posterior = log_likelihood + log_prior(data, &cfg.hyper, &params)?;
    Ok(Draw {
        counts: conditionals::cluster_counts(&state.latent.labels, cfg.k),
        params,
        log_likelihood,
        log_posterior,
    })
}

/// Run the sampler from its default initial state.
pub fn gibbs_fit(data: &GriddedDataset, basis: &BasisSet, cfg: &MCMCConfig) -> Result<PosteriorSamples> {
    cfg.validate()?;
    let sd = SamplerData::new(data.values().clone(), basis)?;
    let state = initial_state(&sd, cfg)?;
    run_chain(&sd, cfg, state, |_, _| {})
}

/// Run the sampler from `state`; `observe` sees every post-sweep state.
pub fn run_chain<F: FnMut(usize, &GibbsState)>(
    data: &SamplerData,
    cfg: &MCMCConfig,
    mut state: GibbsState,
    mut observe: F,
) -> Result<PosteriorSamples> {
    cfg.validate()?;
    if state.clusters.len() != cfg.k {
        return Err(Error::Argument("initial state has the wrong number of components".into()));
    }
    let mut timings = [0.0; N_BLOCKS];
    let mut draws = Vec::with_capacity(cfg.retained());
    for it in 1..=cfg.n_iter {
        sweep(data, cfg, &mut state, it, &mut timings)?;
        observe(it, &state);
        if it > cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0 {
            draws.push(record(data, cfg, &state).map_err(wrap(it, "record"))?);
        }
    }
    Ok(PosteriorSamples {
        draws,
        config: cfg.clone(),
        block_seconds: timings,
    })
}

/// Prior predictive density functional used by the diagnostics: the mixture
/// density of a fixed residual vector under one draw.
pub fn predictive_log_density(params: &ModelParams, eps: &DVector<f64>, h: &DMatrix<f64>) -> Result<f64> {
    dpm_logdensity(eps, &params.clusters, &params.weights.pi, h)
}

