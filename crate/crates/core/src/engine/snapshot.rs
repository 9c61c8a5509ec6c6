//! Frozen posteriors handed to Thompson workers, with the per-pool caches
//! needed to score every candidate quickly.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::acquisition::{ranked_top_s, RankedList};
use crate::error::{Error, Result};
use crate::pbp::{
    pbp_batch_eval, pbp_sample_weights, BatchInputs, BnnArchitecture, FactorEntry, FactoredPosterior, GammaParams,
};
use crate::pool::{Library, PoolView};
use crate::rf::{rf_eval_rows, LinearPosterior, RandomFeatureBasis, RandomFeatureModel};

#[derive(Debug, Clone, PartialEq)]
pub enum PosteriorSnapshot {
    RandomFeatures(Arc<RandomFeatureModel>),
    Bnn(Arc<FactoredPosterior>),
}

#[derive(Debug, Clone)]
enum PoolCache {
    Features { basis: Arc<RandomFeatureBasis>, phi: Arc<Vec<f64>> },
    Inputs(Arc<BatchInputs>),
}

/// Posterior plus pool-level precomputation for drawing and scoring
/// sampled functions.
#[derive(Debug, Clone)]
pub struct PreparedSnapshot {
    posterior: PosteriorSnapshot,
    cache: PoolCache,
}

impl PreparedSnapshot {
    /// Prepares `posterior` against `library`, reusing the cache of
    /// `previous` when it was built for the same library and basis.
    pub fn new(posterior: PosteriorSnapshot, library: &Library, previous: Option<&PreparedSnapshot>) -> Self {
        let cache = match &posterior {
            PosteriorSnapshot::RandomFeatures(model) => match previous.map(|p| &p.cache) {
                Some(PoolCache::Features { basis, phi }) if **basis == model.basis => {
                    PoolCache::Features { basis: Arc::clone(basis), phi: Arc::clone(phi) }
                }
                _ => PoolCache::Features {
                    basis: Arc::new(model.basis.clone()),
                    phi: Arc::new(model.basis.feature_matrix(library.features())),
                },
            },
            PosteriorSnapshot::Bnn(_) => match previous.map(|p| &p.cache) {
                Some(PoolCache::Inputs(inputs)) if inputs.rows() == library.len() => {
                    PoolCache::Inputs(Arc::clone(inputs))
                }
                _ => PoolCache::Inputs(Arc::new(BatchInputs::new(library.features()))),
            },
        };
        Self { posterior, cache }
    }

    /// Uses an already computed feature matrix for the pool.
    pub fn with_features(model: Arc<RandomFeatureModel>, phi: Arc<Vec<f64>>) -> Self {
        let basis = Arc::new(model.basis.clone());
        Self { posterior: PosteriorSnapshot::RandomFeatures(model), cache: PoolCache::Features { basis, phi } }
    }

    pub fn posterior(&self) -> &PosteriorSnapshot {
        &self.posterior
    }

    /// Values of one posterior function draw at every pool candidate.
    pub fn sample_scores(&self, seed: u64) -> Result<Vec<f64>> {
        match (&self.posterior, &self.cache) {
            (PosteriorSnapshot::RandomFeatures(model), PoolCache::Features { phi, .. }) => {
                let theta = model.posterior.sample(seed)?;
                Ok(rf_eval_rows(&theta, phi, model.basis.m))
            }
            (PosteriorSnapshot::Bnn(q), PoolCache::Inputs(inputs)) => {
                let w = pbp_sample_weights(q, seed);
                Ok(pbp_batch_eval(&w, inputs))
            }
            _ => Err(Error::ProtocolViolation("snapshot cache does not match posterior".into())),
        }
    }

    /// One Thompson worker's ranked top-`s` list.
    pub fn ranked_list(&self, view: &PoolView, s: usize, seed: u64) -> Result<RankedList> {
        let scores = self.sample_scores(seed)?;
        ranked_top_s(&scores, view, s)
    }
}

/// Serialisable form of a [`PosteriorSnapshot`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum PosteriorPayload {
    RandomFeatures {
        basis: RandomFeatureBasis,
        mean: Vec<f64>,
        /// Lower Cholesky factor of the weight precision, packed by rows.
        factor: Vec<f64>,
        noise: f64,
    },
    Bnn {
        arch: BnnArchitecture,
        factors: Vec<FactorEntry>,
        noise: GammaParams,
        weight_precision: GammaParams,
    },
}

impl From<&PosteriorSnapshot> for PosteriorPayload {
    fn from(s: &PosteriorSnapshot) -> Self {
        match s {
            PosteriorSnapshot::RandomFeatures(model) => {
                let l = &model.posterior.precision_chol;
                let m = l.nrows();
                let mut factor = Vec::with_capacity(m * (m + 1) / 2);
                for i in 0..m {
                    for j in 0..=i {
                        factor.push(l[(i, j)]);
                    }
                }
                PosteriorPayload::RandomFeatures {
                    basis: model.basis.clone(),
                    mean: model.posterior.mean.as_slice().to_vec(),
                    factor,
                    noise: model.posterior.noise,
                }
            }
            PosteriorSnapshot::Bnn(q) => PosteriorPayload::Bnn {
                arch: q.arch.clone(),
                factors: q.to_entries(),
                noise: q.noise,
                weight_precision: q.weight_precision,
            },
        }
    }
}

impl TryFrom<PosteriorPayload> for PosteriorSnapshot {
    type Error = Error;

    fn try_from(p: PosteriorPayload) -> Result<Self> {
        match p {
            PosteriorPayload::RandomFeatures { basis, mean, factor, noise } => {
                let m = basis.m;
                if basis.weights.len() != m * basis.dim || basis.phases.len() != m {
                    return Err(Error::Wire("random-feature basis has inconsistent sizes".into()));
                }
                if mean.len() != m || factor.len() != m * (m + 1) / 2 {
                    return Err(Error::Wire("linear posterior has inconsistent sizes".into()));
                }
                let mut l = DMatrix::zeros(m, m);
                let mut k = 0;
                for i in 0..m {
                    for j in 0..=i {
                        l[(i, j)] = factor[k];
                        k += 1;
                    }
                }
                let posterior = LinearPosterior { mean: DVector::from_vec(mean), precision_chol: l, noise };
                Ok(PosteriorSnapshot::RandomFeatures(Arc::new(RandomFeatureModel { basis, posterior })))
            }
            PosteriorPayload::Bnn { arch, factors, noise, weight_precision } => Ok(PosteriorSnapshot::Bnn(Arc::new(
                FactoredPosterior::from_entries(arch, &factors, noise, weight_precision)?,
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::SqExpKernel;
    use crate::pbp::pbp_init;
    use crate::rf::rf_build_basis;

    #[test]
    fn random_feature_payload_round_trips_through_json() {
        let basis = rf_build_basis(SqExpKernel::new(0.2, 1.1, 1e-4).unwrap(), 6, 2, 3).unwrap();
        let model = RandomFeatureModel::fit_inputs(basis, &[&[0.1, 0.2], &[0.7, 0.3]], &[1.0, -0.5]).unwrap();
        let snap = PosteriorSnapshot::RandomFeatures(Arc::new(model));
        let json = serde_json::to_string(&PosteriorPayload::from(&snap)).unwrap();
        let back: PosteriorPayload = serde_json::from_str(&json).unwrap();
        assert_eq!(PosteriorSnapshot::try_from(back).unwrap(), snap);
    }

    #[test]
    fn network_payload_round_trips_through_json() {
        let q = pbp_init(&BnnArchitecture::new(3, vec![4]), 1).unwrap();
        let snap = PosteriorSnapshot::Bnn(Arc::new(q));
        let json = serde_json::to_string(&PosteriorPayload::from(&snap)).unwrap();
        let back: PosteriorPayload = serde_json::from_str(&json).unwrap();
        assert_eq!(PosteriorSnapshot::try_from(back).unwrap(), snap);
    }
}
