//! Scalar distributions and random variate generators used by the model.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

pub use statrs::function::gamma::ln_gamma as log_gamma;

/// Survival function of the standard Student-t with `df` degrees of freedom.
pub fn student_t_sf(x: f64, df: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::INFINITY {
        return 0.0;
    }
    if x == f64::NEG_INFINITY {
        return 1.0;
    }
    let tail = 0.5 * beta_reg(0.5 * df, 0.5, df / (df + x * x));
    if x >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

pub fn student_t_cdf(x: f64, df: f64) -> f64 {
    student_t_sf(-x, df)
}

pub fn student_t_logpdf(x: f64, df: f64) -> f64 {
    ln_gamma(0.5 * (df + 1.0))
        - ln_gamma(0.5 * df)
        - 0.5 * (df * std::f64::consts::PI).ln()
        - 0.5 * (df + 1.0) * (x * x / df).ln_1p()
}

/// Quantile of the standard Student-t.
pub fn student_t_quantile(p: f64, df: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Argument(format!("probability {p} outside (0, 1)")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    monotone_inverse(|x| student_t_cdf(x, df), p, 0.0, 1.0, 1e-13)
}

/// Log-density of Inverse-Gamma(shape, scale) at `x`.
pub fn inverse_gamma_logpdf(x: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mean) * (x - mean) / var)
}

pub fn gamma_logpdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Log-density of Inverse-Wishart(df, scale) at `x`.
pub fn inverse_wishart_logpdf(x: &DMatrix<f64>, df: f64, scale: &DMatrix<f64>) -> Result<f64> {
    let p = x.nrows() as f64;
    let cx = crate::linalg::cholesky(x, "inverse-Wishart argument")?;
    let cs = crate::linalg::cholesky(scale, "inverse-Wishart scale")?;
    let log_mvgamma = 0.25 * p * (p - 1.0) * std::f64::consts::PI.ln()
        + (0..x.nrows()).map(|j| ln_gamma(0.5 * (df - j as f64))).sum::<f64>();
    let trace = (cx.solve(scale)).trace();
    Ok(0.5 * df * crate::linalg::chol_logdet(&cs)
        - 0.5 * df * p * std::f64::consts::LN_2
        - log_mvgamma
        - 0.5 * (df + p + 1.0) * crate::linalg::chol_logdet(&cx)
        - 0.5 * trace)
}

/// Solve `f(x) = target` for a non-decreasing `f`, starting from a bracket
/// around `center` of half-width `width` that is widened until it holds.
pub fn monotone_inverse<F: Fn(f64) -> f64>(
    f: F,
    target: f64,
    center: f64,
    width: f64,
    xtol: f64,
) -> Result<f64> {
    let mut lo = center - width;
    let mut hi = center + width;
    let mut step = width.max(1e-300);
    let mut guard = 0;
    while f(lo) > target {
        step *= 2.0;
        lo = center - step;
        guard += 1;
        if guard > 2000 {
            return Err(Error::Degenerate("could not bracket quantile from below".into()));
        }
    }
    step = width.max(1e-300);
    guard = 0;
    while f(hi) < target {
        step *= 2.0;
        hi = center + step;
        guard += 1;
        if guard > 2000 {
            return Err(Error::Degenerate("could not bracket quantile from above".into()));
        }
    }
    Ok(brent(|x| f(x) - target, lo, hi, xtol))
}

/// Brent's root finder on a sign-changing bracket `[a, b]`.
pub fn brent<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, xtol: f64) -> f64 {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return a;
    }
    if fb == 0.0 {
        return b;
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..500 {
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return b;
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
    }
    b
}

/// Numerically stable `ln(sum(exp(values)))`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Draw an index with probability proportional to `exp(log_weights)`.
pub fn sample_log_categorical<R: Rng + ?Sized>(rng: &mut R, log_weights: &[f64]) -> usize {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut target = rng.random::<f64>() * total;
    for (k, w) in weights.iter().enumerate() {
        if target < *w {
            return k;
        }
        target -= w;
    }
    // rounding can leave a sliver past the last positive weight
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

pub fn sample_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("gamma parameters are positive")
        .sample(rng)
}

/// Inverse-Gamma(shape, scale): reciprocal of Gamma(shape, rate = scale).
pub fn sample_inverse_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    scale / Gamma::new(shape, 1.0).expect("inverse-gamma shape is positive").sample(rng)
}

pub fn sample_beta<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    Beta::new(a, b).expect("beta parameters are positive").sample(rng)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn standard_normal_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| standard_normal(rng)))
}

/// Inverse-Wishart(df, scale) draw via the Bartlett decomposition.
///
/// With `scale = C Cᵀ` and `A Aᵀ ~ Wishart(df, I)`, the draw is
/// `C (A Aᵀ)⁻¹ Cᵀ`.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(
    rng: &mut R,
    df: f64,
    scale: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    if df <= p as f64 - 1.0 {
        return Err(Error::Argument(format!(
            "inverse-Wishart degrees of freedom {df} too small for dimension {p}"
        )));
    }
    let c = scale
        .clone()
        .cholesky()
        .ok_or_else(|| Error::singular("inverse-Wishart scale"))?
        .l();
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let chi2 = 2.0 * Gamma::new(0.5 * (df - i as f64), 1.0).unwrap().sample(rng);
        a[(i, i)] = chi2.sqrt();
        for j in 0..i {
            a[(i, j)] = standard_normal(rng);
        }
    }
    // M = C A⁻ᵀ, i.e. Mᵀ = A⁻¹ Cᵀ solved against the lower-triangular A.
    let mt = a
        .solve_lower_triangular(&c.transpose())
        .ok_or_else(|| Error::singular("Bartlett factor"))?;
    let mut out = mt.transpose() * &mt;
    crate::linalg::symmetrize(&mut out);
    Ok(out)
}
