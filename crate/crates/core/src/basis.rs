//! Design matrices: seasonal and spatial splines, the preliminary
//! least-squares fit, EOFs and the in-span/out-of-span split.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bspline::BSplineBasis;
use crate::bundle::Bundle;
use crate::error::{Error, Result};
use crate::ingest::{CovariateSeries, GriddedDataset};
use crate::linalg::{self, compensated_sum};

/// Seasonal design `X1`: row `t2` holds the cubic B-splines on `[1, T2]` at `t2`.
pub fn seasonal_spline_matrix(weeks_per_year: usize, p_t: usize) -> Result<DMatrix<f64>> {
    if p_t < 4 {
        return Err(Error::Argument(format!("P_T = {p_t}, cubic splines need at least 4")));
    }
    if weeks_per_year < p_t {
        return Err(Error::Argument(format!("T2 = {weeks_per_year} is smaller than P_T = {p_t}")));
    }
    let b = BSplineBasis::new(1.0, weeks_per_year as f64, p_t)?;
    let mut x1 = DMatrix::zeros(weeks_per_year, p_t);
    for t2 in 1..=weeks_per_year {
        let (first, vals) = b.eval_local(t2 as f64).expect("week inside spline domain");
        for (k, v) in vals.iter().enumerate() {
            x1[(t2 - 1, first + k)] = *v;
        }
    }
    Ok(x1)
}

/// Arrangement of the tensor-product spatial splines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialLayout {
    pub n_long: usize,
    pub n_lat: usize,
    /// Counter-clockwise rotation of the spline axes, degrees.
    #[serde(default)]
    pub rotation_deg: f64,
    /// `[u_min, u_max, v_min, v_max]` in the rotated frame; defaults to the
    /// bounding box of the sites.
    #[serde(default)]
    pub bounds: Option<[f64; 4]>,
}

impl Default for SpatialLayout {
    fn default() -> Self {
        SpatialLayout {
            n_long: 30,
            n_lat: 10,
            rotation_deg: 0.0,
            bounds: None,
        }
    }
}

impl SpatialLayout {
    pub fn rotate(&self, (lon, lat): (f64, f64)) -> (f64, f64) {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        (c * lon + s * lat, -s * lon + c * lat)
    }
}

#[derive(Debug, Clone)]
pub struct SpatialSplines {
    /// N×P_S retained tensor-product columns.
    pub matrix: DMatrix<f64>,
    /// Retained tensor indices `i_long · n_lat + i_lat`, ascending.
    pub retained: Vec<usize>,
}

/// Tensor-product spatial design `X2`, pruned to the columns carrying
/// `prune_mass` of the total basis weight (weight = column sum).
pub fn spatial_spline_matrix(
    coords: &[(f64, f64)],
    layout: &SpatialLayout,
    prune_mass: f64,
) -> Result<SpatialSplines> {
    if layout.n_long < 4 || layout.n_lat < 4 {
        return Err(Error::Argument(format!(
            "spatial layout {}x{} needs at least 4 splines per axis",
            layout.n_long, layout.n_lat
        )));
    }
    if coords.is_empty() {
        return Err(Error::Argument("no sites".into()));
    }
    if !(prune_mass > 0.0) {
        return Err(Error::Argument(format!("prune mass {prune_mass} must be positive")));
    }
    let rotated: Vec<(f64, f64)> = coords.iter().map(|c| layout.rotate(*c)).collect();
    let [u0, u1, v0, v1] = match layout.bounds {
        Some(b) => b,
        None => {
            let fold = |f: fn(f64, f64) -> f64, init: f64, pick: fn(&(f64, f64)) -> f64| {
                rotated.iter().map(pick).fold(init, f)
            };
            [
                fold(f64::min, f64::INFINITY, |p| p.0),
                fold(f64::max, f64::NEG_INFINITY, |p| p.0),
                fold(f64::min, f64::INFINITY, |p| p.1),
                fold(f64::max, f64::NEG_INFINITY, |p| p.1),
            ]
        }
    };
    if !(u1 > u0) || !(v1 > v0) {
        return Err(Error::Degenerate(
            "sites are collinear along a spline axis; the spatial domain has zero extent".into(),
        ));
    }
    if let Some(i) = rotated.iter().position(|(u, v)| *u < u0 || *u > u1 || *v < v0 || *v > v1) {
        return Err(Error::Argument(format!("site {i} lies outside the spline domain")));
    }
    let bu = BSplineBasis::new(u0, u1, layout.n_long)?;
    let bv = BSplineBasis::new(v0, v1, layout.n_lat)?;
    let n = coords.len();
    let total_cols = layout.n_long * layout.n_lat;
    let mut full = DMatrix::zeros(n, total_cols);
    for (row, (u, v)) in rotated.iter().enumerate() {
        let (fu, vu) = bu.eval_local(*u).expect("inside domain");
        let (fv, vv) = bv.eval_local(*v).expect("inside domain");
        for (a, wa) in vu.iter().enumerate() {
            for (b, wb) in vv.iter().enumerate() {
                full[(row, (fu + a) * layout.n_lat + fv + b)] = wa * wb;
            }
        }
    }
    let weights: Vec<f64> = (0..total_cols)
        .map(|c| compensated_sum(full.column(c).iter().copied()))
        .collect();
    let retained = if prune_mass >= 1.0 {
        (0..total_cols).collect()
    } else {
        prune_by_mass(&weights, prune_mass)
    };
    let matrix = full.select_columns(&retained);
    Ok(SpatialSplines { matrix, retained })
}

/// Greedy selection by descending weight until the kept share reaches `mass`;
/// returned indices are ascending.
fn prune_by_mass(weights: &[f64], mass: f64) -> Vec<usize> {
    let total = compensated_sum(weights.iter().copied());
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));
    let mut kept = Vec::new();
    let mut acc = crate::linalg::NeumaierSum::default();
    for idx in order {
        if acc.value() >= mass * total {
            break;
        }
        acc.add(weights[idx]);
        kept.push(idx);
    }
    kept.sort_unstable();
    kept
}

/// Least-squares fit of the full Kronecker mean model.
#[derive(Debug, Clone)]
pub struct PreliminaryFit {
    /// Per covariate column `p0`, the P_S×P_T coefficient block.
    pub coefficients: [DMatrix<f64>; 2],
    pub fitted: DMatrix<f64>,
    pub residuals: DMatrix<f64>,
}

fn left_inverse(x: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    let gram = x.tr_mul(x);
    let chol = linalg::cholesky(&gram, name)?;
    Ok(chol.solve(&x.transpose()))
}

/// Evaluate `Σ_p0 x0[t1,p0] · X2 · B_p0 · X1ᵀ` for every week, N×(T1·T2).
pub fn kronecker_mean(
    x0: &DMatrix<f64>,
    x1: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    blocks: &[DMatrix<f64>; 2],
) -> DMatrix<f64> {
    let (t1n, t2n) = (x0.nrows(), x1.nrows());
    let f: Vec<DMatrix<f64>> = blocks.iter().map(|b| x2 * (b * x1.transpose())).collect();
    let mut out = DMatrix::zeros(x2.nrows(), t1n * t2n);
    for t1 in 0..t1n {
        for t2 in 0..t2n {
            let mut col = out.column_mut(t1 * t2n + t2);
            col.axpy(x0[(t1, 0)], &f[0].column(t2), 0.0);
            col.axpy(x0[(t1, 1)], &f[1].column(t2), 1.0);
        }
    }
    out
}

pub fn preliminary_fit(
    values: &DMatrix<f64>,
    x0: &DMatrix<f64>,
    x1: &DMatrix<f64>,
    x2: &DMatrix<f64>,
) -> Result<PreliminaryFit> {
    let (t1n, t2n) = (x0.nrows(), x1.nrows());
    if x0.ncols() != 2 {
        return Err(Error::Argument("X0 must have two columns".into()));
    }
    if values.ncols() != t1n * t2n || values.nrows() != x2.nrows() {
        return Err(Error::Argument(format!(
            "data is {}x{} but the designs imply {}x{}",
            values.nrows(),
            values.ncols(),
            x2.nrows(),
            t1n * t2n
        )));
    }
    let a0 = left_inverse(x0, "X0ᵀX0")?;
    let a1 = left_inverse(x1, "X1ᵀX1")?;
    let a2 = left_inverse(x2, "X2ᵀX2")?;
    let z = &a2 * values;
    let p_s = x2.ncols();
    let coefficients: [DMatrix<f64>; 2] = std::array::from_fn(|p0| {
        let mut w = DMatrix::zeros(p_s, t2n);
        for t1 in 0..t1n {
            w += z.columns(t1 * t2n, t2n) * a0[(p0, t1)];
        }
        w * a1.transpose()
    });
    let fitted = kronecker_mean(x0, x1, x2, &coefficients);
    let residuals = values - &fitted;
    Ok(PreliminaryFit {
        coefficients,
        fitted,
        residuals,
    })
}

pub fn preliminary_residuals(
    data: &GriddedDataset,
    x0: &DMatrix<f64>,
    x1: &DMatrix<f64>,
    x2: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    Ok(preliminary_fit(data.values(), x0, x1, x2)?.residuals)
}

/// Unbiased covariance across the columns of an N×T matrix.
pub fn sample_covariance(residuals: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let t = residuals.ncols();
    if t < 2 {
        return Err(Error::Argument(format!("need at least 2 columns, got {t}")));
    }
    let means = residuals.column_mean();
    let mut centered = residuals.clone();
    for mut col in centered.column_iter_mut() {
        col -= &means;
    }
    let mut s = &centered * centered.transpose() / (t as f64 - 1.0);
    linalg::symmetrize(&mut s);
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EofRule {
    Count(usize),
    Threshold(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialBasis {
    /// N×L, orthonormal columns.
    pub h: DMatrix<f64>,
    /// Matching eigenvalues, positive and non-increasing.
    pub delta: DVector<f64>,
}

impl SpatialBasis {
    pub fn rank(&self) -> usize {
        self.h.ncols()
    }
}

/// Flip each column so its largest-magnitude entry is positive (first index wins ties).
pub fn fix_signs(h: &mut DMatrix<f64>) {
    for mut col in h.column_iter_mut() {
        let mut best = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

pub fn leading_eofs(sigma: &DMatrix<f64>, rule: EofRule) -> Result<SpatialBasis> {
    let n = sigma.nrows();
    if sigma.ncols() != n || n == 0 {
        return Err(Error::Argument("covariance must be square and non-empty".into()));
    }
    let (vals, vecs) = match rule {
        EofRule::Count(l) => {
            if l == 0 || l > n {
                return Err(Error::Argument(format!("L = {l} outside 1..={n}")));
            }
            linalg::top_eigenpairs(sigma, l)
        }
        EofRule::Threshold(q) => {
            if !(q > 0.0 && q <= 1.0) {
                return Err(Error::Argument(format!("threshold q = {q} outside (0, 1]")));
            }
            let mut count = 8.min(n);
            loop {
                let (vals, vecs) = linalg::top_eigenpairs(sigma, count);
                let cut = q * vals[0];
                if count == n || vals[count - 1] < cut || vals[0] <= 0.0 {
                    let l = vals.iter().take_while(|v| **v >= cut).count().max(1);
                    break (vals.rows(0, l).into_owned(), vecs.columns(0, l).into_owned());
                }
                count = (2 * count).min(n);
            }
        }
    };
    if !(vals[0] > 0.0) {
        return Err(Error::Degenerate("covariance has no positive eigenvalue".into()));
    }
    if let Some(l) = vals.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::Degenerate(format!(
            "only {l} positive eigenvalues, fewer than the requested basis size"
        )));
    }
    let mut h = vecs;
    fix_signs(&mut h);
    Ok(SpatialBasis { h, delta: vals })
}

/// `X2;1 = H(HᵀX2)` and `X2;2 = X2 − X2;1`.
pub fn split_projection(x2: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if x2.nrows() != h.nrows() {
        return Err(Error::Argument(format!(
            "X2 has {} rows but H has {}",
            x2.nrows(),
            h.nrows()
        )));
    }
    let inner = h.tr_mul(x2);
    let x21 = h * inner;
    let x22 = x2 - &x21;
    Ok((x21, x22))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisConfig {
    pub p_t: usize,
    pub layout: SpatialLayout,
    pub prune_mass: f64,
    pub eof_rule: EofRule,
}

impl Default for BasisConfig {
    fn default() -> Self {
        BasisConfig {
            p_t: 12,
            layout: SpatialLayout::default(),
            prune_mass: 0.99,
            eof_rule: EofRule::Threshold(0.01),
        }
    }
}

/// Everything the sampler and predictor need about the design.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    /// T1×2 orthonormal covariate design over the fit window.
    pub x0: DMatrix<f64>,
    /// T2×P_T seasonal splines.
    pub x1: DMatrix<f64>,
    /// N×P_S pruned spatial splines.
    pub x2: DMatrix<f64>,
    pub retained: Vec<usize>,
    pub h: DMatrix<f64>,
    pub delta: DVector<f64>,
    /// L×P_S, `HᵀX2`.
    pub ht_x2: DMatrix<f64>,
    pub x2_1: DMatrix<f64>,
    pub x2_2: DMatrix<f64>,
    /// Preliminary least-squares coefficient blocks (P_S×P_T) per covariate column.
    pub beta_ls: [DMatrix<f64>; 2],
}

impl BasisSet {
    pub fn prepare(data: &GriddedDataset, cov: &CovariateSeries, cfg: &BasisConfig) -> Result<Self> {
        let x0 = crate::ingest::standardize_covariate(cov, data.years())?;
        let x1 = seasonal_spline_matrix(data.weeks_per_year(), cfg.p_t)?;
        let splines = spatial_spline_matrix(data.coords(), &cfg.layout, cfg.prune_mass)?;
        let prelim = preliminary_fit(data.values(), &x0, &x1, &splines.matrix)?;
        let sigma = sample_covariance(&prelim.residuals)?;
        let eofs = leading_eofs(&sigma, cfg.eof_rule)?;
        Self::assemble(x0, x1, splines.matrix, splines.retained, eofs, prelim.coefficients)
    }

    pub fn assemble(
        x0: DMatrix<f64>,
        x1: DMatrix<f64>,
        x2: DMatrix<f64>,
        retained: Vec<usize>,
        eofs: SpatialBasis,
        beta_ls: [DMatrix<f64>; 2],
    ) -> Result<Self> {
        let (x2_1, x2_2) = split_projection(&x2, &eofs.h)?;
        let ht_x2 = eofs.h.tr_mul(&x2);
        for b in &beta_ls {
            if b.shape() != (x2.ncols(), x1.ncols()) {
                return Err(Error::Shape("coefficient block does not match P_S×P_T".into()));
            }
        }
        Ok(BasisSet {
            x0,
            x1,
            x2,
            retained,
            h: eofs.h,
            delta: eofs.delta,
            ht_x2,
            x2_1,
            x2_2,
            beta_ls,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.x2.nrows()
    }

    pub fn fit_years(&self) -> usize {
        self.x0.nrows()
    }

    pub fn weeks_per_year(&self) -> usize {
        self.x1.nrows()
    }

    pub fn p_t(&self) -> usize {
        self.x1.ncols()
    }

    pub fn p_s(&self) -> usize {
        self.x2.ncols()
    }

    pub fn rank(&self) -> usize {
        self.h.ncols()
    }

    pub fn to_bundle(&self) -> Bundle {
        let mut b = Bundle::new();
        b.insert("X0", self.x0.clone());
        b.insert("X1", self.x1.clone());
        b.insert("X2", self.x2.clone());
        b.insert_vector("retained", &self.retained.iter().map(|r| *r as f64).collect::<Vec<_>>());
        b.insert("H", self.h.clone());
        b.insert_vector("Delta", self.delta.as_slice());
        b.insert("beta_ls_1", self.beta_ls[0].clone());
        b.insert("beta_ls_2", self.beta_ls[1].clone());
        b
    }

    pub fn from_bundle(b: &Bundle) -> Result<Self> {
        let delta = b.vector("Delta")?;
        let retained = b.vector("retained")?.iter().map(|r| *r as usize).collect();
        Self::assemble(
            b.get("X0")?.clone(),
            b.get("X1")?.clone(),
            b.get("X2")?.clone(),
            retained,
            SpatialBasis {
                h: b.get("H")?.clone(),
                delta,
            },
            [b.get("beta_ls_1")?.clone(), b.get("beta_ls_2")?.clone()],
        )
    }
}
