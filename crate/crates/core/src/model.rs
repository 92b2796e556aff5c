//! The generative model: parameter types, low-rank t and mixture densities,
//! site marginals, tail dependence, covariance and a synthetic generator.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::basis::{kronecker_mean, BasisSet};
use crate::bundle::Bundle;
use crate::dist::{self, log_sum_exp, sample_inverse_gamma, standard_normal_vector};
use crate::error::{Error, Result};
use crate::ingest::{time_to_year_week, CovariateDesign, GriddedDataset};
use crate::linalg::{self, chol_logdet};
use crate::rng::substream;

/// Smallest nugget variance used inside density evaluation.
pub const TAU2_DENSITY_FLOOR: f64 = 1e-12;

/// Degrees of freedom on the grid {2.1, 2.2, …, 40.0}, stored in tenths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DegreesOfFreedom(u16);

impl DegreesOfFreedom {
    pub const MIN_TENTHS: u16 = 21;
    pub const MAX_TENTHS: u16 = 400;
    pub const GRID_LEN: usize = (Self::MAX_TENTHS - Self::MIN_TENTHS + 1) as usize;

    pub fn from_tenths(tenths: u16) -> Result<Self> {
        if !(Self::MIN_TENTHS..=Self::MAX_TENTHS).contains(&tenths) {
            return Err(Error::Argument(format!(
                "degrees of freedom {}.{} outside the grid 2.1..=40.0",
                tenths / 10,
                tenths % 10
            )));
        }
        Ok(DegreesOfFreedom(tenths))
    }

    /// Nearest grid point; errors unless `a` is within 1e-9 of it.
    pub fn from_value(a: f64) -> Result<Self> {
        let tenths = (a * 10.0).round();
        if !((a * 10.0 - tenths).abs() < 1e-6) || !(0.0..=u16::MAX as f64).contains(&tenths) {
            return Err(Error::Argument(format!("degrees of freedom {a} is not on the 0.1 grid")));
        }
        Self::from_tenths(tenths as u16)
    }

    pub fn grid_index(index: usize) -> Self {
        DegreesOfFreedom(Self::MIN_TENTHS + index as u16)
    }

    pub fn index(self) -> usize {
        (self.0 - Self::MIN_TENTHS) as usize
    }

    pub fn tenths(self) -> u16 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 10.0
    }

    pub fn max() -> Self {
        DegreesOfFreedom(Self::MAX_TENTHS)
    }

    pub fn grid() -> impl Iterator<Item = Self> {
        (Self::MIN_TENTHS..=Self::MAX_TENTHS).map(DegreesOfFreedom)
    }
}

/// Parameters of one low-rank t component.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterParams {
    /// L×L dispersion of the random effects.
    pub phi: DMatrix<f64>,
    pub tau2: f64,
    pub df: DegreesOfFreedom,
}

impl ClusterParams {
    pub fn a(&self) -> f64 {
        self.df.value()
    }

    /// `h_n Φ h_mᵀ` for rows `n`, `m` of `H`.
    pub fn hphih(&self, h: &DMatrix<f64>, n: usize, m: usize) -> f64 {
        let hn = h.row(n);
        let hm = h.row(m);
        (hn * &self.phi * hm.transpose())[(0, 0)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights {
    pub pi: Vec<f64>,
    pub v: Vec<f64>,
    pub delta: f64,
}

impl MixtureWeights {
    pub fn from_sticks(v: Vec<f64>, delta: f64) -> Result<Self> {
        let pi = stick_breaking(&v)?;
        Ok(MixtureWeights { pi, v, delta })
    }

    pub fn from_pi(pi: Vec<f64>, delta: f64) -> Result<Self> {
        let v = sticks_from_pi(&pi)?;
        let pi = stick_breaking(&v)?;
        Ok(MixtureWeights { pi, v, delta })
    }
}

/// β_{i;j} for covariate column i and span block j, each a P_S×P_T block whose
/// column-major flattening is the paper's vector ordering (p2 fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct MeanCoefficients {
    pub beta: [[DMatrix<f64>; 2]; 2],
    pub mu_hyper: [[f64; 2]; 2],
    pub sigma2_hyper: [[f64; 2]; 2],
}

impl MeanCoefficients {
    pub fn zeros(p_s: usize, p_t: usize) -> Self {
        let z = DMatrix::zeros(p_s, p_t);
        MeanCoefficients {
            beta: [[z.clone(), z.clone()], [z.clone(), z]],
            mu_hyper: [[0.0; 2]; 2],
            sigma2_hyper: [[1.0; 2]; 2],
        }
    }

    /// β_{i;1} = β_{i;2} = the preliminary least-squares blocks.
    pub fn from_least_squares(basis: &BasisSet) -> Self {
        let mut c = Self::zeros(basis.p_s(), basis.p_t());
        for i in 0..2 {
            c.beta[i] = [basis.beta_ls[i].clone(), basis.beta_ls[i].clone()];
        }
        c
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut c = self.clone();
        for row in c.beta.iter_mut() {
            for b in row.iter_mut() {
                *b *= factor;
            }
        }
        c
    }
}

/// Per-week latent quantities: labels (0-based), scales and `W_t = σ_t Z_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub labels: Vec<usize>,
    pub sigma2: Vec<f64>,
    /// L×T.
    pub w: DMatrix<f64>,
}

/// Complete parameter set of the mean and residual model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub coeffs: MeanCoefficients,
    pub clusters: Vec<ClusterParams>,
    pub weights: MixtureWeights,
}

impl ModelParams {
    pub fn to_bundle(&self) -> Bundle {
        let mut b = Bundle::new();
        for i in 0..2 {
            for j in 0..2 {
                b.insert(format!("beta_{}_{}", i + 1, j + 1), self.coeffs.beta[i][j].clone());
            }
        }
        let flat = |m: [[f64; 2]; 2]| DMatrix::from_row_slice(2, 2, &[m[0][0], m[0][1], m[1][0], m[1][1]]);
        b.insert("mu_hyper", flat(self.coeffs.mu_hyper));
        b.insert("sigma2_hyper", flat(self.coeffs.sigma2_hyper));
        for (k, c) in self.clusters.iter().enumerate() {
            b.insert(format!("phi_{}", k + 1), c.phi.clone());
        }
        b.insert_vector("tau2", &self.clusters.iter().map(|c| c.tau2).collect::<Vec<_>>());
        b.insert_vector("df", &self.clusters.iter().map(|c| c.a()).collect::<Vec<_>>());
        b.insert_vector("pi", &self.weights.pi);
        b.insert_vector("V", &self.weights.v);
        b.insert_scalar("delta", self.weights.delta);
        b
    }

    pub fn from_bundle(b: &Bundle) -> Result<Self> {
        let beta = std::array::from_fn(|i| {
            std::array::from_fn(|j| b.get(&format!("beta_{}_{}", i + 1, j + 1)).cloned())
        });
        let [[b11, b12], [b21, b22]] = beta;
        let unflat = |m: &DMatrix<f64>| [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]];
        let coeffs = MeanCoefficients {
            beta: [[b11?, b12?], [b21?, b22?]],
            mu_hyper: unflat(b.get("mu_hyper")?),
            sigma2_hyper: unflat(b.get("sigma2_hyper")?),
        };
        let tau2 = b.vector("tau2")?;
        let df = b.vector("df")?;
        let clusters = (0..tau2.len())
            .map(|k| {
                Ok(ClusterParams {
                    phi: b.get(&format!("phi_{}", k + 1))?.clone(),
                    tau2: tau2[k],
                    df: DegreesOfFreedom::from_value(df[k])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let weights = MixtureWeights {
            pi: b.vector("pi")?.as_slice().to_vec(),
            v: b.vector("V")?.as_slice().to_vec(),
            delta: b.scalar("delta")?,
        };
        Ok(ModelParams {
            coeffs,
            clusters,
            weights,
        })
    }
}

/// Stick-breaking weights. The running sum of the weights is tracked directly
/// so the last weight is the exact residual and the weights sum to one in
/// floating point.
pub fn stick_breaking(v: &[f64]) -> Result<Vec<f64>> {
    let k = v.len();
    if k == 0 {
        return Err(Error::Argument("no sticks".into()));
    }
    if v[k - 1] != 1.0 {
        return Err(Error::Argument(format!("last stick must equal 1, got {}", v[k - 1])));
    }
    if let Some(bad) = v.iter().position(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::Argument(format!("stick {} = {} outside [0, 1]", bad + 1, v[bad])));
    }
    let mut pi = Vec::with_capacity(k);
    let mut used = 0.0;
    for &vk in &v[..k - 1] {
        let rest = 1.0 - used;
        let p = (vk * rest).min(rest);
        pi.push(p);
        used += p;
    }
    pi.push(1.0 - used);
    Ok(pi)
}

/// Sticks that reproduce `pi` exactly under [`stick_breaking`].
pub fn sticks_from_pi(pi: &[f64]) -> Result<Vec<f64>> {
    let k = pi.len();
    if k == 0 || pi.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::Argument("weights must be non-negative".into()));
    }
    let mut v = Vec::with_capacity(k);
    let mut used = 0.0;
    for &p in &pi[..k - 1] {
        let rest = 1.0 - used;
        let target = p.min(rest);
        let vk = if rest <= 0.0 {
            0.0
        } else if target >= rest {
            1.0
        } else {
            let mut best = (target / rest).clamp(0.0, 1.0);
            let forward = |x: f64| (x * rest).min(rest);
            if forward(best) != target {
                let mut cand = best;
                for step in [f64::next_up, f64::next_down] {
                    let mut x = best;
                    for _ in 0..8 {
                        x = step(x).clamp(0.0, 1.0);
                        if forward(x) == target {
                            cand = x;
                            break;
                        }
                    }
                    if forward(cand) == target {
                        break;
                    }
                }
                best = cand;
            }
            best
        };
        v.push(vk);
        used += (vk * rest).min(rest);
    }
    v.push(1.0);
    Ok(v)
}

/// μ_t at 1-based time `t` (fit window or projection years).
pub fn mean_surface(
    coeffs: &MeanCoefficients,
    basis: &BasisSet,
    design: &CovariateDesign,
    t: usize,
) -> Result<DVector<f64>> {
    if t == 0 {
        return Err(Error::Argument("time index is 1-based".into()));
    }
    let (t1, t2) = time_to_year_week(t, basis.weeks_per_year());
    let row = design.row(t1)?;
    Ok(mean_from_covariate(coeffs, basis, row, t2))
}

/// μ for an explicit covariate row `(x0;1, x0;2)` and week `t2`.
pub fn mean_from_covariate(
    coeffs: &MeanCoefficients,
    basis: &BasisSet,
    x0_row: [f64; 2],
    t2: usize,
) -> DVector<f64> {
    let x1 = basis.x1.row(t2 - 1).transpose();
    let mut out = DVector::zeros(basis.n_sites());
    for (j, x2j) in [&basis.x2_1, &basis.x2_2].into_iter().enumerate() {
        let v = (&coeffs.beta[0][j] * &x1) * x0_row[0] + (&coeffs.beta[1][j] * &x1) * x0_row[1];
        out += x2j * v;
    }
    out
}

/// μ over the whole fit window, N×(T1·T2).
pub fn mean_matrix(coeffs: &MeanCoefficients, basis: &BasisSet) -> DMatrix<f64> {
    let mut out = kronecker_mean(
        &basis.x0,
        &basis.x1,
        &basis.x2_1,
        &[coeffs.beta[0][0].clone(), coeffs.beta[1][0].clone()],
    );
    out += kronecker_mean(
        &basis.x0,
        &basis.x1,
        &basis.x2_2,
        &[coeffs.beta[0][1].clone(), coeffs.beta[1][1].clone()],
    );
    out
}

/// Precomputed pieces of one component's multivariate t density.
#[derive(Debug, Clone)]
pub struct ComponentKernel {
    pub a: f64,
    pub tau2: f64,
    /// Cholesky of `τ²I_L + Φ`.
    pub inner: Cholesky<f64, Dyn>,
    log_norm: f64,
    n: usize,
}

impl ComponentKernel {
    pub fn new(theta: &ClusterParams, n: usize, name: &str) -> Result<Self> {
        let l = theta.phi.nrows();
        linalg::cholesky(&theta.phi, name)?;
        let tau2 = theta.tau2.max(TAU2_DENSITY_FLOOR);
        let m = &theta.phi + DMatrix::identity(l, l) * tau2;
        let inner = linalg::cholesky(&m, &format!("τ²I + {name}"))?;
        let a = theta.a();
        let nf = n as f64;
        let c = (a - 2.0) / a;
        let logdet = nf * c.ln() + (nf - l as f64) * tau2.ln() + chol_logdet(&inner);
        let log_norm = dist::log_gamma(0.5 * (a + nf))
            - dist::log_gamma(0.5 * a)
            - 0.5 * nf * (a * std::f64::consts::PI).ln()
            - 0.5 * logdet;
        Ok(ComponentKernel {
            a,
            tau2,
            inner,
            log_norm,
            n,
        })
    }

    /// Quadratic form `rᵀ(τ²I + HΦHᵀ)⁻¹r` from `‖r‖²` and `u = Hᵀr`.
    pub fn quadratic(&self, rr: f64, u: &DVector<f64>) -> f64 {
        let out_of_span = (rr - u.norm_squared()).max(0.0) / self.tau2;
        out_of_span + u.dot(&self.inner.solve(u))
    }

    pub fn logdensity_from(&self, rr: f64, u: &DVector<f64>) -> f64 {
        let q = self.quadratic(rr, u);
        self.log_norm - 0.5 * (self.a + self.n as f64) * (q / (self.a - 2.0)).ln_1p()
    }
}

/// Log-density of the N-variate t with dispersion `((a−2)/a)(HΦHᵀ + τ²I)`,
/// evaluated through `HᵀH = I` in O(N L²).
pub fn lowrank_t_logdensity(eps: &DVector<f64>, theta: &ClusterParams, h: &DMatrix<f64>) -> Result<f64> {
    check_dims(eps, theta, h)?;
    let kernel = ComponentKernel::new(theta, eps.len(), "Φ")?;
    let u = h.tr_mul(eps);
    Ok(kernel.logdensity_from(eps.norm_squared(), &u))
}

fn check_dims(eps: &DVector<f64>, theta: &ClusterParams, h: &DMatrix<f64>) -> Result<()> {
    if h.nrows() != eps.len() || theta.phi.nrows() != h.ncols() || !theta.phi.is_square() {
        return Err(Error::Argument(format!(
            "dimension mismatch: eps {}, H {}x{}, Φ {}x{}",
            eps.len(),
            h.nrows(),
            h.ncols(),
            theta.phi.nrows(),
            theta.phi.ncols()
        )));
    }
    Ok(())
}

/// `log Σ_k π_k f_T(eps; Θ_k)`.
pub fn dpm_logdensity(
    eps: &DVector<f64>,
    clusters: &[ClusterParams],
    pi: &[f64],
    h: &DMatrix<f64>,
) -> Result<f64> {
    if clusters.len() != pi.len() || clusters.is_empty() {
        return Err(Error::Argument("weights and components must align".into()));
    }
    let u = h.tr_mul(eps);
    let rr = eps.norm_squared();
    let mut terms = Vec::with_capacity(pi.len());
    for (k, (theta, p)) in clusters.iter().zip(pi).enumerate() {
        check_dims(eps, theta, h)?;
        let kernel = ComponentKernel::new(theta, eps.len(), &format!("Φ_{}", k + 1))?;
        terms.push(p.ln() + kernel.logdensity_from(rr, &u));
    }
    Ok(log_sum_exp(&terms))
}

/// Squared scale of component `k`'s univariate t marginal at site `n`.
pub fn site_scale2(theta: &ClusterParams, h: &DMatrix<f64>, n: usize) -> f64 {
    let a = theta.a();
    (a - 2.0) / a * (theta.hphih(h, n, n) + theta.tau2)
}

/// Site-`n` marginal of the mixture: a K-mixture of scaled univariate t laws.
#[derive(Debug, Clone)]
pub struct SiteMarginal {
    pub weights: Vec<f64>,
    pub scales: Vec<f64>,
    pub dfs: Vec<f64>,
}

impl SiteMarginal {
    pub fn new(n: usize, clusters: &[ClusterParams], pi: &[f64], h: &DMatrix<f64>) -> Self {
        SiteMarginal {
            weights: pi.to_vec(),
            scales: clusters.iter().map(|c| site_scale2(c, h, n).sqrt()).collect(),
            dfs: clusters.iter().map(|c| c.a()).collect(),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.scales)
            .zip(&self.dfs)
            .filter(|((w, _), _)| **w > 0.0)
            .map(|((w, s), a)| w * dist::student_t_cdf(x / s, *a))
            .sum()
    }

    pub fn sf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.scales)
            .zip(&self.dfs)
            .filter(|((w, _), _)| **w > 0.0)
            .map(|((w, s), a)| w * dist::student_t_sf(x / s, *a))
            .sum()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.scales)
            .zip(&self.dfs)
            .filter(|((w, _), _)| **w > 0.0)
            .map(|((w, s), a)| w * dist::student_t_logpdf(x / s, *a).exp() / s)
            .sum()
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Argument(format!("probability {p} outside (0, 1)")));
        }
        let width = self.scales.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        // upper-tail probabilities are resolved on the survival function
        if p > 0.5 {
            let target = 1.0 - p;
            dist::monotone_inverse(|x| -self.sf(x), -target, 0.0, width, 1e-12)
        } else {
            dist::monotone_inverse(|x| self.cdf(x), p, 0.0, width, 1e-12)
        }
    }
}

pub fn marginal_mixture_cdf(n: usize, x: f64, clusters: &[ClusterParams], pi: &[f64], h: &DMatrix<f64>) -> f64 {
    SiteMarginal::new(n, clusters, pi, h).cdf(x)
}

pub fn marginal_mixture_quantile(
    n: usize,
    p: f64,
    clusters: &[ClusterParams],
    pi: &[f64],
    h: &DMatrix<f64>,
) -> Result<f64> {
    SiteMarginal::new(n, clusters, pi, h).quantile(p)
}

/// Index of the heaviest-tailed component among those with positive weight
/// (smallest a, lowest index on ties).
pub fn heaviest_component(clusters: &[ClusterParams], pi: &[f64]) -> usize {
    let mut best: Option<usize> = None;
    for (k, c) in clusters.iter().enumerate() {
        if pi.get(k).copied().unwrap_or(1.0) <= 0.0 {
            continue;
        }
        if best.is_none_or(|b| c.df < clusters[b].df) {
            best = Some(k);
        }
    }
    best.unwrap_or(0)
}

/// χ from its correlation and df: `2·F̄_T(√((a+1)(1−r)/(1+r)); a+1)`.
pub fn chi_from_correlation(r: f64, a: f64) -> f64 {
    let arg = ((a + 1.0) * (1.0 - r) / (1.0 + r)).max(0.0).sqrt();
    2.0 * dist::student_t_sf(arg, a + 1.0)
}

/// Tail-dependence coefficient between sites `n1` and `n2`.
pub fn chi_coefficient(
    n1: usize,
    n2: usize,
    clusters: &[ClusterParams],
    pi: &[f64],
    h: &DMatrix<f64>,
) -> Result<f64> {
    if n1 == n2 {
        return Err(Error::Argument("χ needs two distinct sites".into()));
    }
    let m = &clusters[heaviest_component(clusters, pi)];
    let v1 = m.hphih(h, n1, n1) + m.tau2;
    let v2 = m.hphih(h, n2, n2) + m.tau2;
    let r = (m.hphih(h, n1, n2) / (v1 * v2).sqrt()).clamp(-1.0, 1.0);
    Ok(chi_from_correlation(r, m.a()))
}

/// `Σ_k π_k (h_{n1} Φ_k h_{n2}ᵀ + τ²_k 1{n1=n2})`.
pub fn model_covariance(n1: usize, n2: usize, clusters: &[ClusterParams], pi: &[f64], h: &DMatrix<f64>) -> f64 {
    clusters
        .iter()
        .zip(pi)
        .map(|(c, p)| p * (c.hphih(h, n1, n2) + if n1 == n2 { c.tau2 } else { 0.0 }))
        .sum()
}

/// One draw of ε = σ(HZ + η) from component `theta`, returning (ε, σ², W = σZ).
pub fn draw_residual<R: Rng + ?Sized>(
    rng: &mut R,
    theta: &ClusterParams,
    phi_factor: &DMatrix<f64>,
    h: &DMatrix<f64>,
) -> (DVector<f64>, f64, DVector<f64>) {
    let a = theta.a();
    let sigma2 = sample_inverse_gamma(rng, 0.5 * a, 0.5 * a - 1.0);
    let sigma = sigma2.sqrt();
    let z = phi_factor * standard_normal_vector(rng, phi_factor.ncols());
    let eta = standard_normal_vector(rng, h.nrows()) * theta.tau2.max(0.0).sqrt();
    let eps = (h * &z + eta) * sigma;
    (eps, sigma2, z * sigma)
}

pub fn sample_label<R: Rng + ?Sized>(rng: &mut R, pi: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in pi.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    pi.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

const TAG_GENERATE: u64 = 0x6E4E;

/// Simulate `weeks` weeks from the model; deterministic in `seed`.
pub fn generate_synthetic(
    params: &ModelParams,
    basis: &BasisSet,
    design: &CovariateDesign,
    coords: &[(f64, f64)],
    weeks: usize,
    seed: u64,
) -> Result<(GriddedDataset, LatentState)> {
    let n = basis.n_sites();
    let l = basis.rank();
    if params.clusters.len() != params.weights.pi.len() {
        return Err(Error::Argument("weights and components must align".into()));
    }
    let factors: Vec<DMatrix<f64>> = params.clusters.iter().map(|c| linalg::psd_factor(&c.phi)).collect();
    let mut values = DMatrix::zeros(n, weeks);
    let mut latent = LatentState {
        labels: vec![0; weeks],
        sigma2: vec![0.0; weeks],
        w: DMatrix::zeros(l, weeks),
    };
    for t in 1..=weeks {
        let mu = mean_surface(&params.coeffs, basis, design, t)?;
        let mut rng = substream(seed, TAG_GENERATE, t as u64);
        let k = sample_label(&mut rng, &params.weights.pi);
        let (eps, s2, w) = draw_residual(&mut rng, &params.clusters[k], &factors[k], &basis.h);
        values.set_column(t - 1, &(mu + eps));
        latent.labels[t - 1] = k;
        latent.sigma2[t - 1] = s2;
        latent.w.set_column(t - 1, &w);
    }
    let data = GriddedDataset::new(values, coords.to_vec(), basis.weeks_per_year())?;
    Ok((data, latent))
}
