//! Convergence diagnostics over scalar traces.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::PosteriorSamples;
use crate::error::{Error, Result};

/// Traces with fewer effective draws than this are flagged.
pub const DEFAULT_ESS_THRESHOLD: f64 = 100.0;

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn autocovariance(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
}

/// Effective sample size by Geyer's initial monotone positive sequence.
/// A constant trace has ESS 0.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return 0.0;
    }
    let m = mean(x);
    let g0 = autocovariance(x, m, 0);
    if !(g0 > 0.0) {
        return 0.0;
    }
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = (autocovariance(x, m, 2 * k) + autocovariance(x, m, 2 * k + 1)) / g0;
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        tau += 2.0 * pair;
        prev = pair;
        k += 1;
    }
    (n as f64 / tau.max(1.0 / n as f64)).min(n as f64 * (n as f64).log10().max(1.0))
}

/// Split-chain potential scale reduction from the two halves of one trace.
pub fn split_rhat(x: &[f64]) -> f64 {
    let half = x.len() / 2;
    if half < 2 {
        return f64::NAN;
    }
    let a = &x[..half];
    let b = &x[x.len() - half..];
    let w = 0.5 * (variance(a) + variance(b));
    let (ma, mb) = (mean(a), mean(b));
    let grand = 0.5 * (ma + mb);
    let between = half as f64 * ((ma - grand).powi(2) + (mb - grand).powi(2));
    if w == 0.0 {
        return if between == 0.0 { f64::NAN } else { f64::INFINITY };
    }
    let n = half as f64;
    let var_plus = (n - 1.0) / n * w + between / n;
    (var_plus / w).sqrt()
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceSummary {
    pub parameter: String,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    pub ess: f64,
    pub rhat: f64,
    pub flagged: bool,
}

pub fn summarize(parameter: &str, x: &[f64], ess_threshold: f64) -> TraceSummary {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let ess = effective_sample_size(x);
    let rhat = split_rhat(x);
    TraceSummary {
        parameter: parameter.to_string(),
        mean: mean(x),
        sd: variance(x).max(0.0).sqrt(),
        q05: quantile_sorted(&sorted, 0.05),
        q50: quantile_sorted(&sorted, 0.5),
        q95: quantile_sorted(&sorted, 0.95),
        ess,
        rhat,
        flagged: ess < ess_threshold || !(rhat < 1.1),
    }
}

/// Label-invariant scalar functionals of each draw.
pub fn scalar_traces(samples: &PosteriorSamples) -> Vec<(String, Vec<f64>)> {
    let d = &samples.draws;
    let mut out: Vec<(String, Vec<f64>)> = vec![
        ("log_posterior".into(), d.iter().map(|x| x.log_posterior).collect()),
        ("log_likelihood".into(), d.iter().map(|x| x.log_likelihood).collect()),
        (
            "min_df".into(),
            d.iter()
                .map(|x| x.params.clusters.iter().map(|c| c.a()).fold(f64::INFINITY, f64::min))
                .collect(),
        ),
        (
            "mean_tau2".into(),
            d.iter()
                .map(|x| x.params.clusters.iter().zip(&x.params.weights.pi).map(|(c, p)| p * c.tau2).sum())
                .collect(),
        ),
        (
            "mean_trace_phi".into(),
            d.iter()
                .map(|x| x.params.clusters.iter().zip(&x.params.weights.pi).map(|(c, p)| p * c.phi.trace()).sum())
                .collect(),
        ),
        (
            "max_pi".into(),
            d.iter().map(|x| x.params.weights.pi.iter().copied().fold(0.0, f64::max)).collect(),
        ),
        (
            "occupied".into(),
            d.iter().map(|x| x.counts.iter().filter(|c| **c > 0).count() as f64).collect(),
        ),
        ("delta".into(), d.iter().map(|x| x.params.weights.delta).collect()),
    ];
    for i in 0..2 {
        for j in 0..2 {
            out.push((
                format!("mu_{}_{}", i + 1, j + 1),
                d.iter().map(|x| x.params.coeffs.mu_hyper[i][j]).collect(),
            ));
            out.push((
                format!("sigma2_{}_{}", i + 1, j + 1),
                d.iter().map(|x| x.params.coeffs.sigma2_hyper[i][j]).collect(),
            ));
        }
    }
    out
}

pub fn diagnostics(samples: &PosteriorSamples, ess_threshold: f64) -> Result<Vec<TraceSummary>> {
    if samples.len() < 100 {
        return Err(Error::Argument(format!(
            "diagnostics need at least 100 draws, got {}",
            samples.len()
        )));
    }
    Ok(scalar_traces(samples)
        .iter()
        .map(|(name, x)| summarize(name, x, ess_threshold))
        .collect())
}

pub fn write_summary_csv(rows: &[TraceSummary], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Trace values, one column per functional.
pub fn write_traces_csv(samples: &PosteriorSamples, path: &Path) -> Result<()> {
    let traces = scalar_traces(samples);
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let header: Vec<&str> = std::iter::once("draw").chain(traces.iter().map(|(n, _)| n.as_str())).collect();
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for b in 0..samples.len() {
        let row: Vec<String> = std::iter::once((b + 1).to_string())
            .chain(traces.iter().map(|(_, x)| x[b].to_string()))
            .collect();
        writeln!(w, "{}", row.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::standard_normal;
    use crate::rng::substream;

    #[test]
    fn white_noise_rhat_is_one() {
        let mut rng = substream(5, 0, 0);
        let x: Vec<f64> = (0..20_000).map(|_| standard_normal(&mut rng)).collect();
        let r = split_rhat(&x);
        assert!(r > 0.99 && r < 1.01, "rhat {r}");
    }

    #[test]
    fn constant_chain_is_flagged() {
        let x = vec![3.0; 500];
        let s = summarize("c", &x, DEFAULT_ESS_THRESHOLD);
        assert_eq!(s.ess, 0.0);
        assert!(s.flagged);
    }

    #[test]
    fn ar1_ess_matches_theory() {
        let rho: f64 = 0.5;
        let n = 50_000;
        let mut rng = substream(9, 0, 0);
        let mut x = Vec::with_capacity(n);
        let mut prev = standard_normal(&mut rng);
        for _ in 0..n {
            prev = rho * prev + (1.0 - rho * rho).sqrt() * standard_normal(&mut rng);
            x.push(prev);
        }
        let expected = n as f64 * (1.0 - rho) / (1.0 + rho);
        let ess = effective_sample_size(&x);
        assert!((ess - expected).abs() < 0.2 * expected, "ess {ess} vs {expected}");
    }
}
