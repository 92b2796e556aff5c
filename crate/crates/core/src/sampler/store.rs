//! On-disk posterior store: chunks of up to 1000 draws as named-matrix
//! bundles (one row per draw) plus a JSON manifest.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{Draw, MCMCConfig, PosteriorSamples, BLOCK_NAMES};
use crate::bundle::Bundle;
use crate::error::{Error, Result};
use crate::model::{ClusterParams, DegreesOfFreedom, MeanCoefficients, MixtureWeights, ModelParams};

pub const CHUNK_DRAWS: usize = 1000;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub format: String,
    pub seed: u64,
    pub config: MCMCConfig,
    pub draws: usize,
    pub k: usize,
    pub l: usize,
    pub p_s: usize,
    pub p_t: usize,
    pub chunks: Vec<String>,
    /// Wall-clock seconds per sweep block; the only non-reproducible field.
    pub timings: BTreeMap<String, f64>,
}

fn chunk_bundle(draws: &[Draw], k: usize, l: usize, p: usize) -> Bundle {
    let rows = draws.len();
    let mut b = Bundle::new();
    for i in 0..2 {
        for j in 0..2 {
            let m = DMatrix::from_fn(rows, p, |r, c| draws[r].params.coeffs.beta[i][j].as_slice()[c]);
            b.insert(format!("beta_{}_{}", i + 1, j + 1), m);
        }
    }
    let hyper = |f: fn(&MeanCoefficients) -> [[f64; 2]; 2]| {
        DMatrix::from_fn(rows, 4, |r, c| f(&draws[r].params.coeffs)[c / 2][c % 2])
    };
    b.insert("mu_hyper", hyper(|c| c.mu_hyper));
    b.insert("sigma2_hyper", hyper(|c| c.sigma2_hyper));
    b.insert(
        "phi",
        DMatrix::from_fn(rows, k * l * l, |r, c| {
            let phi = &draws[r].params.clusters[c / (l * l)].phi;
            let e = c % (l * l);
            phi[(e / l, e % l)]
        }),
    );
    let per_k = |f: &dyn Fn(&Draw, usize) -> f64| DMatrix::from_fn(rows, k, |r, c| f(&draws[r], c));
    b.insert("tau2", per_k(&|d, c| d.params.clusters[c].tau2));
    b.insert("df", per_k(&|d, c| d.params.clusters[c].a()));
    b.insert("pi", per_k(&|d, c| d.params.weights.pi[c]));
    b.insert("V", per_k(&|d, c| d.params.weights.v[c]));
    b.insert("counts", per_k(&|d, c| d.counts[c] as f64));
    let scalar = |f: fn(&Draw) -> f64| DMatrix::from_fn(rows, 1, |r, _| f(&draws[r]));
    b.insert("delta", scalar(|d| d.params.weights.delta));
    b.insert("log_likelihood", scalar(|d| d.log_likelihood));
    b.insert("log_posterior", scalar(|d| d.log_posterior));
    b
}

fn draws_from_chunk(b: &Bundle, m: &StoreManifest) -> Result<Vec<Draw>> {
    let (k, l) = (m.k, m.l);
    let rows = b.get("delta")?.nrows();
    let betas: Vec<&DMatrix<f64>> = (0..4)
        .map(|ij| b.get(&format!("beta_{}_{}", ij / 2 + 1, ij % 2 + 1)))
        .collect::<Result<_>>()?;
    let (mu, s2, phi) = (b.get("mu_hyper")?, b.get("sigma2_hyper")?, b.get("phi")?);
    let (tau2, df, pi, v, counts) = (b.get("tau2")?, b.get("df")?, b.get("pi")?, b.get("V")?, b.get("counts")?);
    let (delta, ll, lp) = (b.get("delta")?, b.get("log_likelihood")?, b.get("log_posterior")?);
    (0..rows)
        .map(|r| {
            let beta_block = |ij: usize| DMatrix::from_iterator(m.p_s, m.p_t, betas[ij].row(r).iter().copied());
            let hyp = |x: &DMatrix<f64>| [[x[(r, 0)], x[(r, 1)]], [x[(r, 2)], x[(r, 3)]]];
            let coeffs = MeanCoefficients {
                beta: [[beta_block(0), beta_block(1)], [beta_block(2), beta_block(3)]],
                mu_hyper: hyp(mu),
                sigma2_hyper: hyp(s2),
            };
            let clusters = (0..k)
                .map(|c| {
                    Ok(ClusterParams {
                        phi: DMatrix::from_fn(l, l, |i, j| phi[(r, c * l * l + i * l + j)]),
                        tau2: tau2[(r, c)],
                        df: DegreesOfFreedom::from_value(df[(r, c)])?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Draw {
                params: ModelParams {
                    coeffs,
                    clusters,
                    weights: MixtureWeights {
                        pi: pi.row(r).iter().copied().collect(),
                        v: v.row(r).iter().copied().collect(),
                        delta: delta[(r, 0)],
                    },
                },
                counts: counts.row(r).iter().map(|c| *c as usize).collect(),
                log_likelihood: ll[(r, 0)],
                log_posterior: lp[(r, 0)],
            })
        })
        .collect()
}

pub fn write_samples(samples: &PosteriorSamples, dir: &Path) -> Result<StoreManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let first = samples
        .draws
        .first()
        .ok_or_else(|| Error::Argument("no draws to store".into()))?;
    let k = first.params.clusters.len();
    let l = first.params.clusters[0].phi.nrows();
    let (p_s, p_t) = first.params.coeffs.beta[0][0].shape();
    let mut chunks = Vec::new();
    for (c, draws) in samples.draws.chunks(CHUNK_DRAWS).enumerate() {
        let name = format!("chunk_{c:04}.bin");
        chunk_bundle(draws, k, l, p_s * p_t).write(&dir.join(&name))?;
        chunks.push(name);
    }
    let timings = BLOCK_NAMES
        .iter()
        .zip(samples.block_seconds)
        .map(|(n, s)| (n.to_string(), s))
        .collect();
    let manifest = StoreManifest {
        format: "ltpdpm-samples-1".into(),
        seed: samples.config.seed,
        config: samples.config.clone(),
        draws: samples.len(),
        k,
        l,
        p_s,
        p_t,
        chunks,
        timings,
    };
    let path = dir.join(MANIFEST);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<StoreManifest> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
}

pub fn read_samples(dir: &Path) -> Result<PosteriorSamples> {
    let manifest = read_manifest(dir)?;
    let mut draws = Vec::with_capacity(manifest.draws);
    for name in &manifest.chunks {
        let path = dir.join(name);
        let bundle = Bundle::read(&path)?;
        draws.extend(draws_from_chunk(&bundle, &manifest).map_err(|e| Error::format(&path, e.to_string()))?);
    }
    if draws.len() != manifest.draws {
        return Err(Error::format(dir, format!("manifest lists {} draws, chunks hold {}", manifest.draws, draws.len())));
    }
    let mut block_seconds = [0.0; super::N_BLOCKS];
    for (slot, name) in BLOCK_NAMES.iter().enumerate() {
        block_seconds[slot] = manifest.timings.get(*name).copied().unwrap_or(0.0);
    }
    Ok(PosteriorSamples {
        draws,
        config: manifest.config,
        block_seconds,
    })
}
