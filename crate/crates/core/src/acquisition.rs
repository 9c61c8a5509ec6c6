//! Acquisition scores and batch selection rules.
//!
//! Scores are passed as full-length slices indexed by candidate; evaluated
//! candidates are skipped using the pool view. Ties always go to the lowest
//! candidate index.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::GpPosterior;
use crate::pbp::{pbp_point_eval, pbp_sample_weights, FactoredPosterior};
use crate::pool::PoolView;
use crate::rf::RandomFeatureModel;
use crate::seed::rng;
use crate::stats::{norm_cdf, norm_pdf, sample_gaussian};

/// Expected improvement of N(mu, sigma^2) over `best`, without input checks.
#[inline]
pub fn ei(mu: f64, sigma: f64, best: f64) -> f64 {
    let d = mu - best;
    if sigma <= 0.0 {
        return d.max(0.0);
    }
    let z = d / sigma;
    (d * norm_cdf(z) + sigma * norm_pdf(z)).max(0.0)
}

pub fn expected_improvement(mu: f64, sigma: f64, best: f64) -> Result<f64> {
    if !(mu.is_finite() && sigma.is_finite() && best.is_finite()) {
        return Err(Error::NonFinite("expected-improvement inputs"));
    }
    if sigma < 0.0 {
        return Err(Error::InvalidConfig(format!("predictive sd must be >= 0, got {sigma}")));
    }
    Ok(ei(mu, sigma, best))
}

/// Descending score, then ascending index.
#[inline]
fn rank_order(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

fn check_scores(scores: &[f64], view: &PoolView) -> Result<()> {
    if scores.len() != view.len() {
        return Err(Error::InvalidConfig(format!(
            "{} scores for a pool of {}",
            scores.len(),
            view.len()
        )));
    }
    Ok(())
}

/// Highest-scoring candidate that is neither evaluated nor excluded.
pub fn ts_argmax(scores: &[f64], view: &PoolView, exclusions: &[usize]) -> Result<usize> {
    check_scores(scores, view)?;
    let mut excluded = vec![false; view.len()];
    for &e in exclusions {
        if e < excluded.len() {
            excluded[e] = true;
        }
    }
    let mut best: Option<usize> = None;
    for i in view.unevaluated().filter(|&i| !excluded[i]) {
        if scores[i].is_nan() {
            return Err(Error::NonFinite("acquisition score"));
        }
        if best.is_none_or(|b| scores[i] > scores[b]) {
            best = Some(i);
        }
    }
    best.ok_or(Error::PoolExhausted)
}

/// Ordered candidate list; `short` is set when fewer than the requested
/// number of candidates remained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedList {
    pub indices: Vec<usize>,
    pub short: bool,
}

/// Top `s` unevaluated candidates in non-increasing score order.
pub fn ranked_top_s(scores: &[f64], view: &PoolView, s: usize) -> Result<RankedList> {
    check_scores(scores, view)?;
    if s == 0 {
        return Err(Error::InvalidConfig("batch size must be >= 1".into()));
    }
    let mut cand: Vec<usize> = view.unevaluated().collect();
    if cand.iter().any(|&i| scores[i].is_nan()) {
        return Err(Error::NonFinite("acquisition score"));
    }
    if cand.is_empty() {
        return Err(Error::PoolExhausted);
    }
    let short = cand.len() < s;
    if cand.len() > s {
        cand.select_nth_unstable_by(s - 1, |&a, &b| rank_order(scores, a, b));
        cand.truncate(s);
        cand.shrink_to_fit();
    }
    cand.sort_unstable_by(|&a, &b| rank_order(scores, a, b));
    Ok(RankedList { indices: cand, short })
}

/// Greedy exploitation: rank by predictive mean.
pub fn greedy_rank(means: &[f64], view: &PoolView, s: usize) -> Result<RankedList> {
    ranked_top_s(means, view, s)
}

/// `round(eps * s)` uniform picks plus greedy picks for the rest. Greedy
/// entries come first; random entries never repeat a greedy one.
pub fn epsilon_greedy_batch(means: &[f64], view: &PoolView, s: usize, eps: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::InvalidConfig(format!("epsilon must lie in [0, 1], got {eps}")));
    }
    if s == 0 {
        return Err(Error::InvalidConfig("batch size must be >= 1".into()));
    }
    let remaining = view.remaining();
    if remaining == 0 {
        return Err(Error::PoolExhausted);
    }
    let total = s.min(remaining);
    let n_random = ((eps * s as f64).round() as usize).min(total);
    let n_greedy = total - n_random;
    let mut batch = if n_greedy > 0 { greedy_rank(means, view, n_greedy)?.indices } else { Vec::new() };
    if n_random > 0 {
        let mut taken = vec![false; view.len()];
        batch.iter().for_each(|&i| taken[i] = true);
        let rest: Vec<usize> = view.unevaluated().filter(|&i| !taken[i]).collect();
        let mut r = rng(seed);
        batch.extend(index::sample(&mut r, rest.len(), n_random).into_iter().map(|k| rest[k]));
    }
    Ok(batch)
}

/// `s` distinct uniform draws from the unevaluated candidates.
pub fn random_batch(view: &PoolView, s: usize, seed: u64) -> Result<Vec<usize>> {
    if s == 0 {
        return Err(Error::InvalidConfig("batch size must be >= 1".into()));
    }
    let rest: Vec<usize> = view.unevaluated().collect();
    if rest.is_empty() {
        return Err(Error::PoolExhausted);
    }
    let mut r = rng(seed);
    Ok(index::sample(&mut r, rest.len(), s.min(rest.len())).into_iter().map(|k| rest[k]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum FantasyStrategy {
    #[default]
    PosteriorSample,
    KrigingBeliever,
    /// Constant lie; `None` uses the incumbent.
    ConstantLiar(Option<f64>),
}

/// Model whose predictive distribution generates fantasies.
#[derive(Debug, Clone, Copy)]
pub enum PredictiveSource<'a> {
    Gp(&'a GpPosterior),
    Linear(&'a RandomFeatureModel),
    Bnn(&'a FactoredPosterior),
}

impl PredictiveSource<'_> {
    /// Joint predictive for noisy targets at `xs`.
    fn joint(&self, xs: &[&[f64]]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (mean, mut cov, noise) = match self {
            PredictiveSource::Gp(gp) => {
                let (m, c) = gp.predict_joint(xs);
                (m, c, gp.kernel().noise_variance)
            }
            PredictiveSource::Linear(model) => {
                let phis: Vec<Vec<f64>> = xs.iter().map(|x| model.basis.features(x)).collect();
                let (m, c) = model.posterior.predict_joint(&phis);
                (m, c, model.posterior.noise)
            }
            PredictiveSource::Bnn(_) => unreachable!("network fantasies sample weights instead"),
        };
        for i in 0..cov.nrows() {
            cov[(i, i)] += noise;
        }
        Ok((mean, cov))
    }
}

/// Hypothesised outcomes at pending locations.
pub fn fantasize(
    source: PredictiveSource<'_>,
    pending: &[&[f64]],
    strategy: FantasyStrategy,
    incumbent: Option<f64>,
    seed: u64,
) -> Result<Vec<f64>> {
    if pending.is_empty() {
        return Err(Error::InvalidConfig("fantasies need at least one pending point".into()));
    }
    match strategy {
        FantasyStrategy::ConstantLiar(value) => {
            let l = value
                .or(incumbent)
                .ok_or_else(|| Error::InvalidConfig("constant liar needs a value or an incumbent".into()))?;
            Ok(vec![l; pending.len()])
        }
        FantasyStrategy::KrigingBeliever => match source {
            PredictiveSource::Bnn(q) => pending.iter().map(|x| q.forward_moments(x).map(|(m, _)| m)).collect(),
            _ => Ok(source.joint(pending)?.0.as_slice().to_vec()),
        },
        FantasyStrategy::PosteriorSample => match source {
            PredictiveSource::Bnn(q) => {
                use rand_distr::{Distribution, StandardNormal};
                let w = pbp_sample_weights(q, seed);
                let mut r = rng(crate::seed::derive_seed(seed, &[1]));
                let sd = q.noise.inverse_mean().sqrt();
                Ok(pending
                    .iter()
                    .map(|x| {
                        let z: f64 = StandardNormal.sample(&mut r);
                        pbp_point_eval(&w, x) + sd * z
                    })
                    .collect())
            }
            _ => {
                let (mean, cov) = source.joint(pending)?;
                let mut r = rng(seed);
                Ok(sample_gaussian(&mean, &cov, &mut r)?.as_slice().to_vec())
            }
        },
    }
}
