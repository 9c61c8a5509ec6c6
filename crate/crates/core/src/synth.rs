//! Synthetic screening libraries with a learnable feature-to-target map and
//! a heavy upper tail.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::{FeatureKind, FeatureMatrix, Library, ObjectiveSense};
use crate::seed::{derive_seed, rng};
use crate::stats::mean;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthStructure {
    /// Clustered dense descriptors scored by a smooth random function.
    GpScored,
    /// Sparse binary fingerprints scored by a sparse linear model with a
    /// few pairwise interactions.
    SparseLinear,
}

impl fmt::Display for SynthStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthStructure::GpScored => "gp-scored",
            SynthStructure::SparseLinear => "sparse-linear",
        })
    }
}

impl FromStr for SynthStructure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gp-scored" => Ok(SynthStructure::GpScored),
            "sparse-linear" => Ok(SynthStructure::SparseLinear),
            other => Err(Error::InvalidConfig(format!("unknown library structure `{other}`"))),
        }
    }
}

/// Heavy-tail transform of a latent score: standardise, add noise, exponentiate.
fn heavy_tail(latent: &[f64], noise: f64, seed: u64) -> Vec<f64> {
    let m = mean(latent);
    let var = latent.iter().map(|v| (v - m).powi(2)).sum::<f64>() / latent.len() as f64;
    let sd = var.sqrt().max(1e-12);
    let mut r = rng(seed);
    latent
        .iter()
        .map(|&v| {
            let z = (v - m) / sd + noise * r.sample::<f64, _>(StandardNormal);
            (0.8 * z).exp()
        })
        .collect()
}

fn gp_scored(seed: u64, n: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng(derive_seed(seed, &[1]));
    let clusters = 24;
    let centers: Vec<f64> = (0..clusters * d).map(|_| 1.5 * r.sample::<f64, _>(StandardNormal)).collect();
    let mut x = Vec::with_capacity(n * d);
    for _ in 0..n {
        let c = r.random_range(0..clusters);
        for j in 0..d {
            x.push(centers[c * d + j] + 0.6 * r.sample::<f64, _>(StandardNormal));
        }
    }
    let features = 256;
    let lengthscale = 0.9 * (d as f64).sqrt();
    let w_dist = Normal::new(0.0, 1.0 / lengthscale).expect("positive scale");
    let w: Vec<f64> = (0..features * d).map(|_| w_dist.sample(&mut r)).collect();
    let b: Vec<f64> = (0..features).map(|_| r.random_range(0.0..std::f64::consts::TAU)).collect();
    let a: Vec<f64> = (0..features).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
    let u: Vec<f64> = (0..d).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
    let latent: Vec<f64> = x
        .chunks(d)
        .map(|row| {
            let lin: f64 = row.iter().zip(&u).map(|(p, q)| p * q).sum::<f64>() / (d as f64).sqrt();
            let rf: f64 = (0..features)
                .map(|k| {
                    let dot: f64 = row.iter().zip(&w[k * d..(k + 1) * d]).map(|(p, q)| p * q).sum();
                    a[k] * (dot + b[k]).cos()
                })
                .sum::<f64>()
                * (2.0 / features as f64).sqrt();
            0.5 * lin + rf
        })
        .collect();
    (x, heavy_tail(&latent, 0.15, derive_seed(seed, &[2])))
}

fn sparse_linear(seed: u64, n: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng(derive_seed(seed, &[1]));
    let p: Vec<f64> = (0..d).map(|_| r.random_range(0.02..0.3)).collect();
    let active = (d / 8).max(1);
    let idx = rand::seq::index::sample(&mut r, d, active).into_vec();
    let coef: Vec<f64> = (0..active).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
    let pairs: Vec<(usize, usize, f64)> = (0..active / 2)
        .map(|_| (r.random_range(0..d), r.random_range(0..d), r.sample::<f64, _>(StandardNormal)))
        .collect();
    let mut x = Vec::with_capacity(n * d);
    for _ in 0..n {
        for &pj in &p {
            x.push(if r.random::<f64>() < pj { 1.0 } else { 0.0 });
        }
    }
    let latent: Vec<f64> = x
        .chunks(d)
        .map(|row| {
            let lin: f64 = idx.iter().zip(&coef).map(|(&j, c)| c * row[j]).sum();
            let inter: f64 = pairs.iter().map(|&(i, j, c)| c * row[i] * row[j]).sum();
            lin + inter
        })
        .collect();
    (x, heavy_tail(&latent, 0.15, derive_seed(seed, &[2])))
}

/// Generates an `n`-candidate maximisation library; deterministic per seed.
pub fn generate_synthetic_library(seed: u64, n: usize, d: usize, structure: SynthStructure) -> Result<Library> {
    if n < 100 {
        return Err(Error::InvalidConfig(format!("synthetic libraries need >= 100 candidates, got {n}")));
    }
    if d == 0 {
        return Err(Error::InvalidConfig("feature dimension must be >= 1".into()));
    }
    let (x, y) = match structure {
        SynthStructure::GpScored => gp_scored(seed, n, d),
        SynthStructure::SparseLinear => sparse_linear(seed, n, d),
    };
    let kind = match structure {
        SynthStructure::GpScored => FeatureKind::Dense,
        SynthStructure::SparseLinear => FeatureKind::Fingerprint,
    };
    let ids = (0..n).map(|i| format!("s{i:06}")).collect();
    let header = format!("# batchscreen-library n={n} d={d} seed={seed} structure={structure}");
    Ok(Library::new(ids, FeatureMatrix::new(n, d, x)?, y, ObjectiveSense::Maximize, kind, true)?
        .with_metadata(vec![header]))
}
