//! Full conditional updates of the Gibbs sweep.
//!
//! Each update is a free function over a [`SamplerData`] context and a
//! mutable [`GibbsState`] so it can be exercised in isolation.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rayon::prelude::*;

use crate::basis::BasisSet;
use crate::dist::{
    self, sample_beta, sample_gamma, sample_inverse_gamma, sample_inverse_wishart, sample_log_categorical,
    standard_normal, standard_normal_vector,
};
use crate::error::{Error, Result};
use crate::linalg::{self, symmetric_eigen_descending};
use crate::model::{mean_matrix, stick_breaking, ComponentKernel, DegreesOfFreedom};
use crate::rng::{substream, sweep_tag};

use super::{GibbsState, Hyperparameters};

/// Lower bound applied to drawn nugget and scale variances.
pub const VARIANCE_FLOOR: f64 = 1e-10;
/// Upper bound on sampled sticks so that `ln(1 − V)` stays finite.
pub const STICK_CEILING: f64 = 1.0 - 1e-12;

pub(crate) const BLOCK_LATENT: u64 = 1;
pub(crate) const BLOCK_PHI: u64 = 2;
pub(crate) const BLOCK_TAU: u64 = 3;
pub(crate) const BLOCK_DF: u64 = 4;
pub(crate) const BLOCK_STICKS: u64 = 5;
pub(crate) const BLOCK_DELTA: u64 = 6;
pub(crate) const BLOCK_BETA: u64 = 7;
pub(crate) const BLOCK_HYPER: u64 = 8;
pub(crate) const BLOCK_RESCALE: u64 = 9;

/// Data-dependent quantities reused across sweeps.
#[derive(Debug, Clone)]
pub struct SamplerData {
    pub y: DMatrix<f64>,
    pub basis: BasisSet,
    /// L×T, `HᵀY`.
    pub hty: DMatrix<f64>,
    /// P_S×T, `X2;2ᵀY`.
    pub z2: DMatrix<f64>,
    /// T×2P_T rows `x0(t1) ⊗ x1(t2)`.
    pub c_rows: DMatrix<f64>,
    /// Eigen-decompositions `X2;jᵀX2;j = U Λ Uᵀ`.
    pub gram_eig: [(DMatrix<f64>, DVector<f64>); 2],
    /// `Uᵀ1` per block.
    pub u_ones: [DVector<f64>; 2],
}

impl SamplerData {
    pub fn new(y: DMatrix<f64>, basis: &BasisSet) -> Result<Self> {
        let t = y.ncols();
        if y.nrows() != basis.n_sites() || t != basis.fit_years() * basis.weeks_per_year() {
            return Err(Error::Argument(format!(
                "data is {}x{} but the basis expects {}x{}",
                y.nrows(),
                t,
                basis.n_sites(),
                basis.fit_years() * basis.weeks_per_year()
            )));
        }
        let p_t = basis.p_t();
        let t2n = basis.weeks_per_year();
        let c_rows = DMatrix::from_fn(t, 2 * p_t, |row, col| {
            let (t1, t2) = (row / t2n, row % t2n);
            basis.x0[(t1, col / p_t)] * basis.x1[(t2, col % p_t)]
        });
        let g1 = basis.ht_x2.tr_mul(&basis.ht_x2);
        let g2 = basis.x2_2.tr_mul(&basis.x2_2);
        let eig = |g: &DMatrix<f64>| {
            let (values, vectors) = symmetric_eigen_descending(g);
            (vectors, values)
        };
        let gram_eig = [eig(&g1), eig(&g2)];
        let ones = DVector::from_element(basis.p_s(), 1.0);
        let u_ones = [gram_eig[0].0.tr_mul(&ones), gram_eig[1].0.tr_mul(&ones)];
        let mut data = SamplerData {
            hty: DMatrix::zeros(0, 0),
            z2: DMatrix::zeros(0, 0),
            y,
            basis: basis.clone(),
            c_rows,
            gram_eig,
            u_ones,
        };
        data.refresh();
        Ok(data)
    }

    /// Replace the observations, keeping the design-only precomputations.
    pub fn set_observations(&mut self, y: DMatrix<f64>) {
        self.y = y;
        self.refresh();
    }

    fn refresh(&mut self) {
        self.hty = self.basis.h.tr_mul(&self.y);
        self.z2 = self.basis.x2_2.tr_mul(&self.y);
    }

    pub fn n_sites(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_weeks(&self) -> usize {
        self.y.ncols()
    }

    pub fn rank(&self) -> usize {
        self.basis.rank()
    }

    pub fn delta_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.basis.delta)
    }
}

/// Residual summaries `‖r_t‖²` and `u_t = Hᵀr_t` for `r_t = Y_t − μ_t`.
#[derive(Debug, Clone)]
pub struct Residuals {
    pub rr: Vec<f64>,
    pub u: DMatrix<f64>,
}

pub fn residuals(data: &SamplerData, state: &GibbsState) -> Residuals {
    let mean = mean_matrix(&state.coeffs, &data.basis);
    let r = &data.y - &mean;
    let rr = r.column_iter().map(|c| c.norm_squared()).collect();
    let u = data.basis.h.tr_mul(&r);
    Residuals { rr, u }
}

fn block_rng(seed: u64, iteration: usize, block: u64) -> crate::rng::StreamRng {
    substream(seed, sweep_tag(iteration, block), 0)
}

struct LatentKernel {
    density: ComponentKernel,
    /// Cholesky of `Φ⁻¹ + I/τ²`, the scaled posterior precision of W.
    w_prec: Cholesky<f64, Dyn>,
    log_pi: f64,
    a: f64,
}

/// Joint draw of `(g_t, σ²_t, W_t)` for every week: the label from its
/// conditional with σ² and W integrated out, then σ² given the label, then W.
pub fn update_latent(
    data: &SamplerData,
    state: &mut GibbsState,
    res: &Residuals,
    seed: u64,
    iteration: usize,
) -> Result<()> {
    let n = data.n_sites();
    let l = data.rank();
    let kernels = state
        .clusters
        .iter()
        .zip(&state.weights.pi)
        .enumerate()
        .map(|(k, (c, p))| {
            let name = format!("Φ_{}", k + 1);
            let density = ComponentKernel::new(c, n, &name)?;
            let phi_inv = linalg::cholesky(&c.phi, &name)?.inverse();
            let mut prec = phi_inv + DMatrix::identity(l, l) / density.tau2;
            linalg::symmetrize(&mut prec);
            let w_prec = linalg::cholesky(&prec, &format!("W precision {}", k + 1))?;
            Ok(LatentKernel {
                density,
                w_prec,
                log_pi: if *p > 0.0 { p.ln() } else { f64::NEG_INFINITY },
                a: c.a(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let tag = sweep_tag(iteration, BLOCK_LATENT);
    let draws: Vec<(usize, f64, DVector<f64>)> = (0..data.n_weeks())
        .into_par_iter()
        .map(|t| {
            let mut rng = substream(seed, tag, t as u64);
            let u = res.u.column(t).into_owned();
            let rr = res.rr[t];
            let logw: Vec<f64> = kernels
                .iter()
                .map(|kern| kern.log_pi + kern.density.logdensity_from(rr, &u))
                .collect();
            let k = sample_log_categorical(&mut rng, &logw);
            let kern = &kernels[k];
            let quad = kern.density.quadratic(rr, &u);
            let shape = 0.5 * (kern.a + n as f64);
            let scale = 0.5 * kern.a - 1.0 + 0.5 * quad;
            let sigma2 = sample_inverse_gamma(&mut rng, shape, scale).max(VARIANCE_FLOOR);
            let mean = kern.w_prec.solve(&(u / kern.density.tau2));
            let xi = standard_normal_vector(&mut rng, l);
            let noise = kern
                .w_prec
                .l_dirty()
                .tr_solve_lower_triangular(&xi)
                .expect("Cholesky factor has a positive diagonal");
            (k, sigma2, mean + noise * sigma2.sqrt())
        })
        .collect();
    for (t, (k, s2, w)) in draws.into_iter().enumerate() {
        state.latent.labels[t] = k;
        state.latent.sigma2[t] = s2;
        state.latent.w.set_column(t, &w);
    }
    Ok(())
}

pub fn cluster_counts(labels: &[usize], k: usize) -> Vec<usize> {
    let mut m = vec![0; k];
    for &g in labels {
        m[g] += 1;
    }
    m
}

/// Φ_k ~ IW(L + offset + m_k, Δ + Σ W_t W_tᵀ / σ²_t).
pub fn update_phi<R: Rng + ?Sized>(
    data: &SamplerData,
    hyper: &Hyperparameters,
    state: &mut GibbsState,
    rng: &mut R,
) -> Result<()> {
    let l = data.rank();
    let delta = data.delta_matrix();
    let kk = state.clusters.len();
    let mut scatter = vec![delta; kk];
    let mut counts = vec![0usize; kk];
    for t in 0..data.n_weeks() {
        let g = state.latent.labels[t];
        let w = state.latent.w.column(t);
        scatter[g] += (w * w.transpose()) / state.latent.sigma2[t];
        counts[g] += 1;
    }
    for k in 0..kk {
        let df = l as f64 + hyper.phi_df_offset + counts[k] as f64;
        let mut phi = sample_inverse_wishart(rng, df, &scatter[k])?;
        linalg::symmetrize(&mut phi);
        linalg::cholesky(&phi, &format!("Φ_{}", k + 1))?;
        state.clusters[k].phi = phi;
    }
    Ok(())
}

/// τ²_k ~ IG(a_τ + N m_k / 2, b_τ + ½ Σ ‖r_t − H W_t‖² / σ²_t).
pub fn update_tau<R: Rng + ?Sized>(
    data: &SamplerData,
    hyper: &Hyperparameters,
    state: &mut GibbsState,
    res: &Residuals,
    rng: &mut R,
) -> Result<()> {
    let n = data.n_sites() as f64;
    let kk = state.clusters.len();
    let mut ss = vec![0.0; kk];
    let mut counts = vec![0usize; kk];
    for t in 0..data.n_weeks() {
        let g = state.latent.labels[t];
        let u = res.u.column(t);
        let w = state.latent.w.column(t);
        let out_of_span = (res.rr[t] - u.norm_squared()).max(0.0);
        ss[g] += (out_of_span + (u - w).norm_squared()) / state.latent.sigma2[t];
        counts[g] += 1;
    }
    for k in 0..kk {
        let shape = hyper.tau2_shape + 0.5 * n * counts[k] as f64;
        let scale = hyper.tau2_scale + 0.5 * ss[k];
        let draw = sample_inverse_gamma(rng, shape, scale);
        if !draw.is_finite() {
            return Err(Error::Degenerate(format!("τ²_{} draw is not finite", k + 1)));
        }
        state.clusters[k].tau2 = draw.max(VARIANCE_FLOOR);
    }
    Ok(())
}

/// Joint move σ²_t → cσ²_t for the weeks of cluster k, with Φ_k → Φ_k/c and
/// τ²_k → τ²_k/c. The likelihood and the law of W are unchanged, so log c
/// has target `E ℓ − A e^{−ℓ} − B e^{ℓ}` from the priors and the Jacobian.
/// One independence Metropolis step per cluster, proposing from the Laplace
/// approximation; this unsticks the scale ridge the Gibbs blocks crawl along.
pub fn rescale_clusters<R: Rng + ?Sized>(
    data: &SamplerData,
    hyper: &Hyperparameters,
    state: &mut GibbsState,
    rng: &mut R,
) -> Result<()> {
    let l = data.rank();
    let kk = state.clusters.len();
    let mut counts = vec![0usize; kk];
    let mut sinv = vec![0.0; kk];
    for (g, s2) in state.latent.labels.iter().zip(&state.latent.sigma2) {
        counts[*g] += 1;
        sinv[*g] += 1.0 / s2;
    }
    let nu = l as f64 + hyper.phi_df_offset;
    let mut factor = vec![1.0; kk];
    for k in 0..kk {
        let theta = &state.clusters[k];
        let alpha = 0.5 * theta.a();
        let e = -alpha * counts[k] as f64 + 0.5 * nu * l as f64 + hyper.tau2_shape;
        let a = (alpha - 1.0) * sinv[k];
        let phi_inv = linalg::cholesky(&theta.phi, &format!("Φ_{}", k + 1))?.inverse();
        let trace: f64 = (0..l).map(|i| data.basis.delta[i] * phi_inv[(i, i)]).sum();
        let b = 0.5 * trace + hyper.tau2_scale / theta.tau2;
        let root = (e * e + 4.0 * a * b).sqrt();
        let mode_c = if e >= 0.0 { (e + root) / (2.0 * b) } else { 2.0 * a / (root - e) };
        let mode = mode_c.ln();
        let sd = 1.2 / (a / mode_c + b * mode_c).sqrt();
        let target = |x: f64| e * x - a * (-x).exp() - b * x.exp();
        let proposal = |x: f64| -0.5 * ((x - mode) / sd).powi(2);
        let x = mode + sd * standard_normal(rng);
        let log_ratio = target(x) - target(0.0) + proposal(0.0) - proposal(x);
        if rng.random::<f64>().ln() < log_ratio {
            factor[k] = x.exp();
        }
    }
    for (g, s2) in state.latent.labels.iter().zip(state.latent.sigma2.iter_mut()) {
        *s2 *= factor[*g];
    }
    for (theta, c) in state.clusters.iter_mut().zip(&factor) {
        theta.phi /= *c;
        theta.tau2 /= *c;
    }
    Ok(())
}

/// Unnormalised log-conditional of a over the grid given the scales of one cluster.
pub fn df_log_conditional(count: usize, sum_log_s2: f64, sum_inv_s2: f64) -> Vec<f64> {
    let m = count as f64;
    DegreesOfFreedom::grid()
        .map(|df| {
            let h = 0.5 * df.value();
            m * (h * (h - 1.0).ln() - dist::log_gamma(h)) - (h + 1.0) * sum_log_s2 - (h - 1.0) * sum_inv_s2
        })
        .collect()
}

pub fn update_df<R: Rng + ?Sized>(state: &mut GibbsState, rng: &mut R) {
    let kk = state.clusters.len();
    let mut counts = vec![0usize; kk];
    let mut slog = vec![0.0; kk];
    let mut sinv = vec![0.0; kk];
    for (g, s2) in state.latent.labels.iter().zip(&state.latent.sigma2) {
        counts[*g] += 1;
        slog[*g] += s2.ln();
        sinv[*g] += 1.0 / s2;
    }
    for k in 0..kk {
        let logw = df_log_conditional(counts[k], slog[k], sinv[k]);
        state.clusters[k].df = DegreesOfFreedom::grid_index(sample_log_categorical(rng, &logw));
    }
}

/// V_k ~ Beta(1 + m_k, δ + Σ_{l>k} m_l) for k < K, V_K = 1.
pub fn update_sticks<R: Rng + ?Sized>(state: &mut GibbsState, rng: &mut R) -> Result<()> {
    let kk = state.clusters.len();
    let counts = cluster_counts(&state.latent.labels, kk);
    let mut tail: usize = counts.iter().sum();
    let mut v = Vec::with_capacity(kk);
    for count in counts.iter().take(kk - 1) {
        tail -= count;
        let draw = sample_beta(rng, 1.0 + *count as f64, state.weights.delta + tail as f64);
        v.push(draw.min(STICK_CEILING));
    }
    v.push(1.0);
    state.weights.pi = stick_breaking(&v)?;
    state.weights.v = v;
    Ok(())
}

/// δ ~ Gamma(a_δ + K − 1, b_δ − Σ_{k<K} ln(1 − V_k)).
pub fn update_delta<R: Rng + ?Sized>(hyper: &Hyperparameters, state: &mut GibbsState, rng: &mut R) {
    let kk = state.weights.v.len();
    let s: f64 = state.weights.v[..kk - 1].iter().map(|v| (-v).ln_1p()).sum();
    state.weights.delta = sample_gamma(rng, hyper.delta_shape + (kk - 1) as f64, hyper.delta_rate - s);
}

/// All four β_{i;j} blocks. The j blocks decouple because `X2;1ᵀX2;2 = 0`;
/// within a block the precision `A ⊗ G_j + D ⊗ I` is block-diagonalised by
/// the eigenvectors of `G_j`, leaving P_S independent 2P_T-dimensional solves.
pub fn update_beta<R: Rng + ?Sized>(
    data: &SamplerData,
    state: &mut GibbsState,
    rng: &mut R,
) -> Result<()> {
    let p_t = data.basis.p_t();
    let q = 2 * p_t;
    let t = data.n_weeks();
    let weights: Vec<f64> = (0..t)
        .map(|s| 1.0 / (state.latent.sigma2[s] * state.clusters[state.latent.labels[s]].tau2))
        .collect();
    let mut mw = data.c_rows.clone();
    for (s, w) in weights.iter().enumerate() {
        mw.row_mut(s).scale_mut(*w);
    }
    let a = data.c_rows.tr_mul(&mw);
    for j in 0..2 {
        let z = if j == 0 {
            data.basis.ht_x2.tr_mul(&(&data.hty - &state.latent.w))
        } else {
            data.z2.clone()
        };
        let (u, lambda) = &data.gram_eig[j];
        let mut rhs = u.tr_mul(&(z * &mw));
        let prec_diag: Vec<f64> = (0..q).map(|c| 1.0 / state.coeffs.sigma2_hyper[c / p_t][j]).collect();
        for c in 0..q {
            let i = c / p_t;
            let prior = state.coeffs.mu_hyper[i][j] / state.coeffs.sigma2_hyper[i][j];
            for s in 0..rhs.nrows() {
                rhs[(s, c)] += data.u_ones[j][s] * prior;
            }
        }
        let mut gamma = DMatrix::zeros(rhs.nrows(), q);
        for s in 0..rhs.nrows() {
            let mut prec = &a * lambda[s].max(0.0);
            for c in 0..q {
                prec[(c, c)] += prec_diag[c];
            }
            let chol = linalg::cholesky(&prec, &format!("β block {} precision", j + 1))?;
            let mean = chol.solve(&rhs.row(s).transpose());
            let xi = standard_normal_vector(rng, q);
            let noise = chol
                .l_dirty()
                .tr_solve_lower_triangular(&xi)
                .expect("Cholesky factor has a positive diagonal");
            gamma.set_row(s, &(mean + noise).transpose());
        }
        let beta = u * gamma;
        for i in 0..2 {
            state.coeffs.beta[i][j] = beta.columns(i * p_t, p_t).into_owned();
        }
    }
    Ok(())
}

/// Centered conjugate pair: μ_{i;j} | β, σ² then σ²_{i;j} | β, μ.
pub fn update_mean_hypers<R: Rng + ?Sized>(hyper: &Hyperparameters, state: &mut GibbsState, rng: &mut R) {
    for i in 0..2 {
        for j in 0..2 {
            let beta = &state.coeffs.beta[i][j];
            let p = beta.len() as f64;
            let s2 = state.coeffs.sigma2_hyper[i][j];
            let prec = p / s2 + 1.0 / (hyper.mu_sd[i] * hyper.mu_sd[i]);
            let mean = beta.sum() / s2 / prec;
            let mu = mean + dist::standard_normal(rng) / prec.sqrt();
            let ss: f64 = beta.iter().map(|b| (b - mu) * (b - mu)).sum();
            let s2_new = sample_inverse_gamma(
                rng,
                hyper.sigma2_shape[i] + 0.5 * p,
                hyper.sigma2_scale[i] + 0.5 * ss,
            );
            state.coeffs.mu_hyper[i][j] = mu;
            state.coeffs.sigma2_hyper[i][j] = s2_new.max(VARIANCE_FLOOR);
        }
    }
}

pub(crate) fn rng_for(seed: u64, iteration: usize, block: u64) -> crate::rng::StreamRng {
    block_rng(seed, iteration, block)
}
