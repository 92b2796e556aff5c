//! Joint-distribution test of the sampler: prior draws of (state, data)
//! compared against a chain that alternates one Gibbs sweep with a fresh
//! draw of the data given the state.

use nalgebra::DMatrix;
use rand::Rng;

use super::conditionals::SamplerData;
use super::diagnostics::{effective_sample_size, mean, variance};
use super::{sweep, GibbsState, Hyperparameters, MCMCConfig};
use crate::basis::BasisSet;
use crate::dist::{sample_beta, sample_gamma, sample_inverse_gamma, sample_inverse_wishart, standard_normal, standard_normal_vector};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{
    mean_matrix, sample_label, stick_breaking, ClusterParams, DegreesOfFreedom, LatentState, MeanCoefficients,
    MixtureWeights,
};
use crate::rng::substream;

const TAG_MARGINAL: u64 = 0x6E77_0001;
const TAG_DATA: u64 = 0x6E77_0002;

/// Proper, moderately informative priors so that every test functional has
/// finite moments.
pub fn geweke_hyperparameters() -> Hyperparameters {
    Hyperparameters {
        mu_sd: [1.0, 1.0],
        sigma2_shape: [3.0, 3.0],
        sigma2_scale: [2.0, 2.0],
        phi_df_offset: 6.0,
        tau2_shape: 3.0,
        tau2_scale: 1.0,
        delta_shape: 2.0,
        delta_rate: 2.0,
    }
}

/// Draw parameters and latent variables from the prior.
pub fn sample_prior_state<R: Rng + ?Sized>(
    rng: &mut R,
    basis: &BasisSet,
    hyper: &Hyperparameters,
    k: usize,
    fixed_df: Option<f64>,
) -> Result<GibbsState> {
    let (p_s, p_t) = (basis.p_s(), basis.p_t());
    let mut coeffs = MeanCoefficients::zeros(p_s, p_t);
    for i in 0..2 {
        for j in 0..2 {
            let mu = hyper.mu_sd[i] * standard_normal(rng);
            let s2 = sample_inverse_gamma(rng, hyper.sigma2_shape[i], hyper.sigma2_scale[i]);
            coeffs.mu_hyper[i][j] = mu;
            coeffs.sigma2_hyper[i][j] = s2;
            coeffs.beta[i][j] = DMatrix::from_fn(p_s, p_t, |_, _| mu + s2.sqrt() * standard_normal(rng));
        }
    }
    let l = basis.rank();
    let delta_m = DMatrix::from_diagonal(&basis.delta);
    let clusters = (0..k)
        .map(|_| {
            let mut phi = sample_inverse_wishart(rng, l as f64 + hyper.phi_df_offset, &delta_m)?;
            linalg::symmetrize(&mut phi);
            let tau2 = sample_inverse_gamma(rng, hyper.tau2_shape, hyper.tau2_scale);
            let df = match fixed_df {
                Some(a) => DegreesOfFreedom::from_value(a)?,
                None => DegreesOfFreedom::grid_index(rng.random_range(0..DegreesOfFreedom::GRID_LEN)),
            };
            Ok(ClusterParams { phi, tau2, df })
        })
        .collect::<Result<Vec<_>>>()?;
    let delta = sample_gamma(rng, hyper.delta_shape, hyper.delta_rate);
    let mut v: Vec<f64> = (0..k - 1)
        .map(|_| sample_beta(rng, 1.0, delta).min(super::conditionals::STICK_CEILING))
        .collect();
    v.push(1.0);
    let weights = MixtureWeights {
        pi: stick_breaking(&v)?,
        v,
        delta,
    };
    let t = basis.fit_years() * basis.weeks_per_year();
    let factors: Vec<DMatrix<f64>> = clusters.iter().map(|c| linalg::psd_factor(&c.phi)).collect();
    let mut latent = LatentState {
        labels: vec![0; t],
        sigma2: vec![0.0; t],
        w: DMatrix::zeros(l, t),
    };
    for s in 0..t {
        let g = sample_label(rng, &weights.pi);
        let a = clusters[g].a();
        let s2 = sample_inverse_gamma(rng, 0.5 * a, 0.5 * a - 1.0);
        let w = &factors[g] * standard_normal_vector(rng, l) * s2.sqrt();
        latent.labels[s] = g;
        latent.sigma2[s] = s2;
        latent.w.set_column(s, &w);
    }
    Ok(GibbsState {
        coeffs,
        clusters,
        weights,
        latent,
    })
}

/// `Y_t = μ_t + H W_t + σ_t τ_{g_t} η_t`.
pub fn simulate_observations<R: Rng + ?Sized>(rng: &mut R, basis: &BasisSet, state: &GibbsState) -> DMatrix<f64> {
    let mut y = mean_matrix(&state.coeffs, basis) + &basis.h * &state.latent.w;
    let n = basis.n_sites();
    for (t, mut col) in y.column_iter_mut().enumerate() {
        let g = state.latent.labels[t];
        let sd = (state.latent.sigma2[t] * state.clusters[g].tau2).sqrt();
        col += standard_normal_vector(rng, n) * sd;
    }
    y
}

/// Test functionals of (state, data), with their names.
pub fn functionals(state: &GibbsState, y: &DMatrix<f64>) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let c = &state.coeffs;
    for i in 0..2 {
        for j in 0..2 {
            let tag = format!("{}_{}", i + 1, j + 1);
            out.push((format!("mu_{tag}"), c.mu_hyper[i][j]));
            out.push((format!("log_sigma2_{tag}"), c.sigma2_hyper[i][j].ln()));
            out.push((format!("beta_mean_{tag}"), c.beta[i][j].mean()));
            out.push((format!("beta_first_{tag}"), c.beta[i][j][(0, 0)]));
        }
    }
    for (k, cl) in state.clusters.iter().enumerate().take(2) {
        out.push((format!("log_tau2_{}", k + 1), cl.tau2.ln()));
        out.push((format!("df_{}", k + 1), cl.a()));
        out.push((format!("log_phi11_{}", k + 1), cl.phi[(0, 0)].ln()));
        if cl.phi.nrows() > 1 {
            out.push((format!("phi12_{}", k + 1), cl.phi[(0, 1)]));
        }
    }
    out.push(("pi_1".into(), state.weights.pi[0]));
    out.push(("log_delta".into(), state.weights.delta.ln()));
    let t = state.latent.labels.len() as f64;
    out.push((
        "label_1_share".into(),
        state.latent.labels.iter().filter(|g| **g == 0).count() as f64 / t,
    ));
    out.push((
        "mean_log_sigma2".into(),
        state.latent.sigma2.iter().map(|s| s.ln()).sum::<f64>() / t,
    ));
    out.push(("w_first".into(), state.latent.w[(0, 0)]));
    out.push(("y_mean".into(), y.mean()));
    out.push(("y_first".into(), y[(0, 0)]));
    out.push(("log_y_ms".into(), (y.norm_squared() / y.len() as f64).ln()));
    out
}

#[derive(Debug, Clone)]
pub struct GewekeReport {
    pub names: Vec<String>,
    pub marginal_mean: Vec<f64>,
    pub successive_mean: Vec<f64>,
    /// Difference of means over its standard error, the successive chain's
    /// variance deflated by its effective sample size.
    pub z: Vec<f64>,
}

impl GewekeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.z.iter().fold(0.0, |m, z| m.max(z.abs()))
    }
}

/// `marginal` independent prior draws against `successive` sweeps of the
/// data-refreshing chain.
pub fn geweke_test(
    basis: &BasisSet,
    cfg: &MCMCConfig,
    marginal: usize,
    successive: usize,
) -> Result<GewekeReport> {
    if marginal < 10 || successive < 10 {
        return Err(Error::Argument("Geweke test needs at least 10 draws of each kind".into()));
    }
    let hyper = &cfg.hyper;
    let mut names = Vec::new();
    let mut mc: Vec<Vec<f64>> = Vec::new();
    for m in 0..marginal {
        let mut rng = substream(cfg.seed, TAG_MARGINAL, m as u64);
        let state = sample_prior_state(&mut rng, basis, hyper, cfg.k, cfg.fixed_df)?;
        let y = simulate_observations(&mut rng, basis, &state);
        let f = functionals(&state, &y);
        if names.is_empty() {
            names = f.iter().map(|(n, _)| n.clone()).collect();
            mc = vec![Vec::with_capacity(marginal); f.len()];
        }
        for (slot, (_, v)) in f.into_iter().enumerate() {
            mc[slot].push(v);
        }
    }

    let mut rng = substream(cfg.seed, TAG_DATA, u64::MAX);
    let mut state = sample_prior_state(&mut rng, basis, hyper, cfg.k, cfg.fixed_df)?;
    let y = simulate_observations(&mut rng, basis, &state);
    let mut data = SamplerData::new(y, basis)?;
    let mut sc: Vec<Vec<f64>> = vec![Vec::with_capacity(successive); names.len()];
    let mut timings = [0.0; super::N_BLOCKS];
    for it in 1..=successive {
        sweep(&data, cfg, &mut state, it, &mut timings)?;
        let mut rng = substream(cfg.seed, TAG_DATA, it as u64);
        data.set_observations(simulate_observations(&mut rng, basis, &state));
        for (slot, (_, v)) in functionals(&state, &data.y).into_iter().enumerate() {
            sc[slot].push(v);
        }
    }

    let mut report = GewekeReport {
        names,
        marginal_mean: Vec::new(),
        successive_mean: Vec::new(),
        z: Vec::new(),
    };
    for (a, b) in mc.iter().zip(&sc) {
        let (ma, mb) = (mean(a), mean(b));
        let ess = effective_sample_size(b).max(1.0);
        let se = (variance(a) / a.len() as f64 + variance(b) / ess).sqrt();
        report.marginal_mean.push(ma);
        report.successive_mean.push(mb);
        report.z.push(if se > 0.0 { (ma - mb) / se } else { 0.0 });
    }
    Ok(report)
}
