//! Batch expected improvement with fantasised outcomes at pending points.
//!
//! Slot 1 maximises plain EI. Each later slot maximises EI averaged over
//! fantasy sets drawn jointly at the already chosen points; the incumbent
//! under a fantasy is the best of the real and fantasised values.

use nalgebra::{DMatrix, DVector};

use crate::acquisition::{ei, FantasyStrategy};
use crate::error::{Error, Result};
use crate::gp::{GpPosterior, PoolPredictor, SqExpKernel};
use crate::pool::{Library, PoolView};
use crate::seed::{derive_seed, rng, Rng};
use crate::stats::sample_gaussian;

/// One batch slot and the acquisition value it won with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pick {
    pub index: usize,
    pub value: f64,
}

fn argmax(scores: &[f64], view: &PoolView, taken: &[bool]) -> Option<Pick> {
    let mut best: Option<Pick> = None;
    for i in view.unevaluated().filter(|&i| !taken[i]) {
        if best.is_none_or(|b| scores[i] > b.value) {
            best = Some(Pick { index: i, value: scores[i] });
        }
    }
    best
}

fn draw(
    strategy: FantasyStrategy,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    incumbent: f64,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    Ok(match strategy {
        FantasyStrategy::PosteriorSample => sample_gaussian(mean, cov, rng)?.as_slice().to_vec(),
        FantasyStrategy::KrigingBeliever => mean.as_slice().to_vec(),
        FantasyStrategy::ConstantLiar(l) => vec![l.unwrap_or(incumbent); mean.len()],
    })
}

fn fantasy_count(strategy: FantasyStrategy, n_fantasies: usize) -> usize {
    match strategy {
        FantasyStrategy::PosteriorSample => n_fantasies,
        _ => 1,
    }
}

fn check(y: &[f64], s: usize, n_fantasies: usize, view: &PoolView) -> Result<f64> {
    if s == 0 || n_fantasies == 0 {
        return Err(Error::InvalidConfig("batch size and fantasy count must be >= 1".into()));
    }
    if view.remaining() == 0 {
        return Err(Error::PoolExhausted);
    }
    y.iter().copied().reduce(f64::max).ok_or_else(|| Error::InvalidConfig("EI needs observations".into()))
}

/// Proposes up to `s` candidates using incremental Cholesky updates of the
/// pool predictor. `y` holds engine-space targets aligned with the
/// predictor's training points; the predictor is returned to its original
/// state afterwards.
pub fn parallel_ei_propose(
    predictor: &mut PoolPredictor,
    y: &[f64],
    view: &PoolView,
    s: usize,
    n_fantasies: usize,
    strategy: FantasyStrategy,
    seed: u64,
) -> Result<Vec<Pick>> {
    let incumbent = check(y, s, n_fantasies, view)?;
    let n = predictor.len();
    if y.len() != n {
        return Err(Error::InvalidConfig(format!("{} targets for {n} training points", y.len())));
    }
    let cp = predictor.checkpoint();
    let result = propose_incremental(predictor, y, view, s, n_fantasies, strategy, seed, incumbent);
    predictor.restore(cp)?;
    result
}

#[allow(clippy::too_many_arguments)]
fn propose_incremental(
    predictor: &mut PoolPredictor,
    y: &[f64],
    view: &PoolView,
    s: usize,
    n_fantasies: usize,
    strategy: FantasyStrategy,
    seed: u64,
    incumbent: f64,
) -> Result<Vec<Pick>> {
    let n = y.len();
    let pool = view.len();
    let noise = predictor.kernel().noise_variance;
    let mut jitter = predictor.jitter();
    let mut w_real = predictor.whiten(y);
    let mut base = predictor.mean_from_whitened(&w_real);
    let mut taken = vec![false; pool];

    let scores: Vec<f64> = (0..pool).map(|i| ei(base[i], predictor.variance()[i].sqrt(), incumbent)).collect();
    let Some(first) = argmax(&scores, view, &taken) else { return Err(Error::PoolExhausted) };
    taken[first.index] = true;
    let mut picks = vec![first];

    for k in 1..s {
        let pending: Vec<usize> = picks.iter().map(|p| p.index).collect();
        let mut cov = predictor.covariance(&pending, n);
        for i in 0..pending.len() {
            cov[(i, i)] += noise;
        }
        let mu = DVector::from_iterator(pending.len(), pending.iter().map(|&i| base[i]));
        predictor.push(pending[k - 1])?;
        if predictor.jitter() != jitter {
            jitter = predictor.jitter();
            w_real = predictor.whiten(y);
            base = predictor.mean_from_whitened(&w_real);
        }
        let sd: Vec<f64> = predictor.variance().iter().map(|v| v.sqrt()).collect();
        let f = fantasy_count(strategy, n_fantasies);
        let mut acc = vec![0.0; pool];
        let mut r = rng(derive_seed(seed, &[k as u64]));
        let mut full = y.to_vec();
        for _ in 0..f {
            let fy = draw(strategy, &mu, &cov, incumbent, &mut r)?;
            let best = fy.iter().copied().fold(incumbent, f64::max);
            full.truncate(n);
            full.extend_from_slice(&fy);
            let w = predictor.whiten(&full);
            let mut mean = base.clone();
            predictor.accumulate_mean(&w, n, &mut mean);
            for i in view.unevaluated().filter(|&i| !taken[i]) {
                acc[i] += ei(mean[i], sd[i], best);
            }
        }
        acc.iter_mut().for_each(|a| *a /= f as f64);
        let Some(pick) = argmax(&acc, view, &taken) else { break };
        taken[pick.index] = true;
        picks.push(pick);
    }
    Ok(picks)
}

/// Reference implementation that refits a dense GP for every fantasy set.
/// Slow; used to check [`parallel_ei_propose`].
#[allow(clippy::too_many_arguments)]
pub fn parallel_ei_propose_dense(
    library: &Library,
    kernel: SqExpKernel,
    train: &[usize],
    y: &[f64],
    view: &PoolView,
    s: usize,
    n_fantasies: usize,
    strategy: FantasyStrategy,
    seed: u64,
) -> Result<Vec<Pick>> {
    let incumbent = check(y, s, n_fantasies, view)?;
    let feats = library.features();
    let rows = |idx: &[usize]| -> Vec<Vec<f64>> { idx.iter().map(|&i| feats.row(i).to_vec()).collect() };
    let real = GpPosterior::fit(rows(train), y, kernel)?;
    let pool = view.len();
    let mut taken = vec![false; pool];

    let scores: Vec<f64> = (0..pool)
        .map(|i| {
            let (m, v) = real.predict(feats.row(i));
            ei(m, v.sqrt(), incumbent)
        })
        .collect();
    let Some(first) = argmax(&scores, view, &taken) else { return Err(Error::PoolExhausted) };
    taken[first.index] = true;
    let mut picks = vec![first];

    for k in 1..s {
        let pending: Vec<usize> = picks.iter().map(|p| p.index).collect();
        let xs: Vec<&[f64]> = pending.iter().map(|&i| feats.row(i)).collect();
        let (mu, mut cov) = real.predict_joint(&xs);
        for i in 0..pending.len() {
            cov[(i, i)] += kernel.noise_variance;
        }
        let all: Vec<usize> = train.iter().chain(&pending).copied().collect();
        let f = fantasy_count(strategy, n_fantasies);
        let mut acc = vec![0.0; pool];
        let mut r = rng(derive_seed(seed, &[k as u64]));
        for _ in 0..f {
            let fy = draw(strategy, &mu, &cov, incumbent, &mut r)?;
            let best = fy.iter().copied().fold(incumbent, f64::max);
            let targets: Vec<f64> = y.iter().chain(&fy).copied().collect();
            let gp = GpPosterior::fit(rows(&all), &targets, kernel)?;
            for i in view.unevaluated().filter(|&i| !taken[i]) {
                let (m, v) = gp.predict(feats.row(i));
                acc[i] += ei(m, v.sqrt(), best);
            }
        }
        acc.iter_mut().for_each(|a| *a /= f as f64);
        let Some(pick) = argmax(&acc, view, &taken) else { break };
        taken[pick.index] = true;
        picks.push(pick);
    }
    Ok(picks)
}
