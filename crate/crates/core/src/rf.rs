//! Random Fourier feature approximation of the squared-exponential GP with a
//! conjugate Bayesian linear model on top, so whole posterior functions can
//! be sampled as finite weight vectors.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::SqExpKernel;
use crate::pool::FeatureMatrix;
use crate::seed::rng;

/// Added to the kernel noise when forming the linear-model likelihood.
pub const NOISE_FLOOR: f64 = 1e-6;

/// Cosine feature basis `phi(x) = sqrt(2 sv / m) cos(W x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomFeatureBasis {
    pub kernel: SqExpKernel,
    pub m: usize,
    pub dim: usize,
    /// Row-major m x D spectral frequencies (already divided by the lengthscale).
    pub weights: Vec<f64>,
    pub phases: Vec<f64>,
}

pub fn rf_build_basis(kernel: SqExpKernel, m: usize, dim: usize, seed: u64) -> Result<RandomFeatureBasis> {
    kernel.validate()?;
    if m == 0 || dim == 0 {
        return Err(Error::InvalidConfig("feature count and dimension must be >= 1".into()));
    }
    let mut r = rng(seed);
    let inv_l = 1.0 / kernel.lengthscale;
    let mut weights = Vec::with_capacity(m * dim);
    let mut phases = Vec::with_capacity(m);
    for _ in 0..m {
        for _ in 0..dim {
            let z: f64 = StandardNormal.sample(&mut r);
            weights.push(z * inv_l);
        }
        phases.push(r.random::<f64>() * 2.0 * PI);
    }
    Ok(RandomFeatureBasis { kernel, m, dim, weights, phases })
}

impl RandomFeatureBasis {
    #[inline]
    pub fn scale(&self) -> f64 {
        (2.0 * self.kernel.signal_variance / self.m as f64).sqrt()
    }

    /// Writes `phi(x)` into `out` (length m).
    pub fn features_into(&self, x: &[f64], out: &mut [f64]) {
        let s = self.scale();
        for (k, o) in out.iter_mut().enumerate() {
            let w = &self.weights[k * self.dim..(k + 1) * self.dim];
            let arg: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.phases[k];
            *o = s * arg.cos();
        }
    }

    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        self.features_into(x, &mut out);
        out
    }

    /// Row-major N x m feature matrix for every row of `x`.
    pub fn feature_matrix(&self, x: &FeatureMatrix) -> Vec<f64> {
        let mut out = vec![0.0; x.rows() * self.m];
        for (i, chunk) in out.chunks_mut(self.m).enumerate() {
            self.features_into(x.row(i), chunk);
        }
        out
    }
}

/// Dot product with four independent accumulators; deterministic order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3) + tail
}

/// Gaussian posterior over linear weights, N(mean, A^{-1}) with precision
/// `A = I + Phi^T Phi / noise` stored through its lower Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPosterior {
    pub mean: DVector<f64>,
    pub precision_chol: DMatrix<f64>,
    pub noise: f64,
}

impl LinearPosterior {
    pub fn prior(m: usize, noise: f64) -> Self {
        Self { mean: DVector::zeros(m), precision_chol: DMatrix::identity(m, m), noise }
    }

    /// Conditions the N(0, I) prior on `n` rows of features (row-major n x m).
    pub fn fit(phi: &[f64], m: usize, y: &[f64], noise: f64) -> Result<Self> {
        let n = y.len();
        if phi.len() != n * m {
            return Err(Error::InvalidConfig("feature rows and targets disagree".into()));
        }
        if !(noise > 0.0) {
            return Err(Error::InvalidConfig("linear-model noise must be > 0".into()));
        }
        if n == 0 {
            return Ok(Self::prior(m, noise));
        }
        // Row-major n x m is column-major m x n.
        let phit = DMatrix::from_column_slice(m, n, phi);
        let mut a = &phit * phit.transpose();
        a /= noise;
        for i in 0..m {
            a[(i, i)] += 1.0;
        }
        let chol = a.cholesky().ok_or(Error::IllConditioned { jitter: 0.0 })?;
        let b = &phit * DVector::from_column_slice(y) / noise;
        let mean = chol.solve(&b);
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("linear posterior mean"));
        }
        Ok(Self { mean, precision_chol: chol.unpack(), noise })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// theta = mean + L^{-T} z, which has covariance A^{-1}.
    pub fn sample(&self, seed: u64) -> Result<Vec<f64>> {
        let mut r = rng(seed);
        let z = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| StandardNormal.sample(&mut r)));
        let delta = self
            .precision_chol
            .tr_solve_lower_triangular(&z)
            .ok_or(Error::IllConditioned { jitter: 0.0 })?;
        Ok((&self.mean + delta).as_slice().to_vec())
    }

    /// Values `theta . phi_j` of the draws `sample(seed)` would return for
    /// each seed, without forming theta: each value is
    /// `mean . phi_j + z . (L^{-1} phi_j)`.
    pub fn sample_at(&self, phis: &[Vec<f64>], seeds: &[u64]) -> Result<Vec<Vec<f64>>> {
        let (mean, proj) = self.projections(phis)?;
        let mut z = vec![0.0; self.dim()];
        Ok(seeds
            .iter()
            .map(|&seed| {
                let mut r = rng(seed);
                z.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut r));
                mean.iter().zip(&proj).map(|(m, w)| m + dot(&z, w)).collect()
            })
            .collect())
    }

    /// Means `mean . phi_j` and whitened directions `L^{-1} phi_j`, the
    /// fixed parts of [`LinearPosterior::sample_at`].
    pub fn projections(&self, phis: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let mut means = Vec::with_capacity(phis.len());
        let mut proj = Vec::with_capacity(phis.len());
        for phi in phis {
            if phi.len() != self.dim() {
                return Err(Error::InvalidConfig("feature vector has wrong length".into()));
            }
            let p = DVector::from_column_slice(phi);
            means.push(p.dot(&self.mean));
            let w = self.precision_chol.solve_lower_triangular(&p).ok_or(Error::IllConditioned { jitter: 0.0 })?;
            proj.push(w.as_slice().to_vec());
        }
        Ok((means, proj))
    }

    /// Latent predictive mean and variance for a feature vector.
    pub fn predict(&self, phi: &[f64]) -> (f64, f64) {
        let p = DVector::from_column_slice(phi);
        let mean = p.dot(&self.mean);
        let v = self.precision_chol.solve_lower_triangular(&p).unwrap_or_else(|| DVector::zeros(p.len()));
        (mean, v.norm_squared())
    }

    /// Joint latent predictive for several feature vectors.
    pub fn predict_joint(&self, phis: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
        let m = self.dim();
        let k = phis.len();
        let mut p = DMatrix::zeros(m, k);
        for (c, phi) in phis.iter().enumerate() {
            p.column_mut(c).copy_from_slice(phi);
        }
        let mean = p.tr_mul(&self.mean);
        let v = self.precision_chol.solve_lower_triangular(&p).unwrap_or_else(|| DMatrix::zeros(m, k));
        (mean, v.tr_mul(&v))
    }
}

/// Precision factor grown one observation at a time with rank-one
/// Cholesky updates; targets are supplied when a posterior is requested so
/// that re-standardised targets never force a refactorisation.
#[derive(Debug, Clone)]
pub struct IncrementalLinearModel {
    m: usize,
    noise: f64,
    chol: Cholesky<f64, Dyn>,
    phi: Vec<f64>,
}

impl IncrementalLinearModel {
    pub fn new(m: usize, noise: f64) -> Result<Self> {
        if !(noise > 0.0) {
            return Err(Error::InvalidConfig("linear-model noise must be > 0".into()));
        }
        let chol = DMatrix::<f64>::identity(m, m).cholesky().ok_or(Error::IllConditioned { jitter: 0.0 })?;
        Ok(Self { m, noise, chol, phi: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.phi.len() / self.m
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn push(&mut self, phi: &[f64]) -> Result<()> {
        if phi.len() != self.m {
            return Err(Error::InvalidConfig("feature row has wrong length".into()));
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature row"));
        }
        self.chol.rank_one_update(&DVector::from_column_slice(phi), 1.0 / self.noise);
        self.phi.extend_from_slice(phi);
        Ok(())
    }

    /// Posterior for targets aligned with the pushed rows.
    pub fn posterior(&self, y: &[f64]) -> Result<LinearPosterior> {
        if y.len() != self.len() {
            return Err(Error::InvalidConfig("targets and feature rows disagree".into()));
        }
        let mut b = DVector::zeros(self.m);
        for (row, &yi) in self.phi.chunks(self.m).zip(y) {
            let c = yi / self.noise;
            b.iter_mut().zip(row).for_each(|(bi, p)| *bi += c * p);
        }
        let mean = self.chol.solve(&b);
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("linear posterior mean"));
        }
        Ok(LinearPosterior { mean, precision_chol: self.chol.l(), noise: self.noise })
    }
}

/// Random-feature basis together with its linear-weight posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomFeatureModel {
    pub basis: RandomFeatureBasis,
    pub posterior: LinearPosterior,
}

impl RandomFeatureModel {
    /// Fits the linear posterior from cached feature rows.
    pub fn fit(basis: RandomFeatureBasis, phi_rows: &[f64], y: &[f64]) -> Result<Self> {
        let noise = basis.kernel.noise_variance + NOISE_FLOOR;
        let posterior = LinearPosterior::fit(phi_rows, basis.m, y, noise)?;
        Ok(Self { basis, posterior })
    }

    /// Fits from raw inputs, computing features on the fly.
    pub fn fit_inputs(basis: RandomFeatureBasis, x: &[&[f64]], y: &[f64]) -> Result<Self> {
        let mut phi = vec![0.0; x.len() * basis.m];
        for (row, xi) in phi.chunks_mut(basis.m).zip(x) {
            basis.features_into(xi, row);
        }
        Self::fit(basis, &phi, y)
    }

    pub fn prior(basis: RandomFeatureBasis) -> Self {
        let noise = basis.kernel.noise_variance + NOISE_FLOOR;
        let posterior = LinearPosterior::prior(basis.m, noise);
        Self { basis, posterior }
    }
}

pub fn rf_posterior_sample(model: &RandomFeatureModel, seed: u64) -> Result<Vec<f64>> {
    model.posterior.sample(seed)
}

pub fn rf_eval(theta: &[f64], basis: &RandomFeatureBasis, x: &[f64]) -> f64 {
    dot(theta, &basis.features(x))
}

/// Evaluates theta against a cached row-major feature matrix.
pub fn rf_eval_rows(theta: &[f64], phi_rows: &[f64], m: usize) -> Vec<f64> {
    phi_rows.chunks(m).map(|row| dot(theta, row)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel() -> SqExpKernel {
        SqExpKernel::new(0.1, 1.0, 1e-4).unwrap()
    }

    #[test]
    fn same_seed_same_basis() {
        let a = rf_build_basis(kernel(), 50, 2, 9).unwrap();
        let b = rf_build_basis(kernel(), 50, 2, 9).unwrap();
        assert_eq!(a, b);
        let c = rf_build_basis(kernel(), 50, 2, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn feature_norm_is_bounded() {
        let k = SqExpKernel::new(0.3, 2.5, 0.0).unwrap();
        let basis = rf_build_basis(k, 64, 3, 1).unwrap();
        let mut r = rng(2);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..3).map(|_| r.random::<f64>()).collect();
            let phi = basis.features(&x);
            assert!(dot(&phi, &phi) <= 2.0 * k.signal_variance + 1e-12);
        }
    }

    #[test]
    fn eval_basics() {
        let basis = rf_build_basis(kernel(), 8, 2, 3).unwrap();
        let x = [0.2, 0.7];
        assert_eq!(rf_eval(&[0.0; 8], &basis, &x), 0.0);
        let mut e1 = vec![0.0; 8];
        e1[0] = 1.0;
        let expected = basis.scale() * (basis.weights[0] * x[0] + basis.weights[1] * x[1] + basis.phases[0]).cos();
        assert!((rf_eval(&e1, &basis, &x) - expected).abs() < 1e-15);
    }

    #[test]
    fn empty_fit_is_prior() {
        let basis = rf_build_basis(kernel(), 5, 1, 0).unwrap();
        let model = RandomFeatureModel::fit(basis, &[], &[]).unwrap();
        assert_eq!(model.posterior.mean, DVector::zeros(5));
        assert_eq!(model.posterior.precision_chol, DMatrix::identity(5, 5));
    }

    #[test]
    fn sampling_is_deterministic() {
        let basis = rf_build_basis(kernel(), 20, 1, 0).unwrap();
        let model = RandomFeatureModel::fit_inputs(basis, &[&[0.1], &[0.5]], &[1.0, -1.0]).unwrap();
        assert_eq!(rf_posterior_sample(&model, 4).unwrap(), rf_posterior_sample(&model, 4).unwrap());
        assert_ne!(rf_posterior_sample(&model, 4).unwrap(), rf_posterior_sample(&model, 5).unwrap());
    }

    #[test]
    fn incremental_model_matches_batch_fit() {
        let basis = rf_build_basis(kernel(), 12, 2, 8).unwrap();
        let xs: Vec<Vec<f64>> = (0..7).map(|i| vec![0.1 * i as f64, 0.05 * (i * i) as f64]).collect();
        let y: Vec<f64> = (0..7).map(|i| (i as f64).sin()).collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let batch = RandomFeatureModel::fit_inputs(basis.clone(), &refs, &y).unwrap();
        let mut inc = IncrementalLinearModel::new(12, batch.posterior.noise).unwrap();
        for x in &refs {
            inc.push(&basis.features(x)).unwrap();
        }
        let post = inc.posterior(&y).unwrap();
        assert!((post.mean - &batch.posterior.mean).amax() < 1e-8);
        assert!((post.precision_chol - &batch.posterior.precision_chol).amax() < 1e-8);
    }

    #[test]
    fn sample_at_matches_full_draw() {
        let basis = rf_build_basis(kernel(), 40, 2, 5).unwrap();
        let xs: [&[f64]; 3] = [&[0.1, 0.2], &[0.5, 0.5], &[0.9, 0.1]];
        let model = RandomFeatureModel::fit_inputs(basis, &xs, &[0.3, -0.2, 1.0]).unwrap();
        let phis: Vec<Vec<f64>> = [[0.3, 0.3], [0.7, 0.8]].iter().map(|x| model.basis.features(x)).collect();
        let fast = model.posterior.sample_at(&phis, &[0, 1, 2, 3, 4]).unwrap();
        for seed in 0..5 {
            let theta = model.posterior.sample(seed).unwrap();
            let direct: Vec<f64> = phis.iter().map(|p| dot(&theta, p)).collect();
            for (a, b) in direct.iter().zip(&fast[seed as usize]) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..11).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }
}
