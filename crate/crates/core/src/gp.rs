//! Exact Gaussian-process regression with an isotropic squared-exponential
//! kernel, plus an incremental predictor specialised to a fixed candidate pool.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::{FeatureMatrix, Library};
use crate::stats::{cholesky_jittered, JITTER_LADDER};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqExpKernel {
    pub lengthscale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl SqExpKernel {
    pub fn new(lengthscale: f64, signal_variance: f64, noise_variance: f64) -> Result<Self> {
        let k = Self { lengthscale, signal_variance, noise_variance };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale > 0.0 && self.lengthscale.is_finite()) {
            return Err(Error::InvalidConfig(format!("lengthscale must be > 0, got {}", self.lengthscale)));
        }
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "signal variance must be > 0, got {}",
                self.signal_variance
            )));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise variance must be >= 0, got {}",
                self.noise_variance
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.signal_variance * (-0.5 * d2 / (self.lengthscale * self.lengthscale)).exp()
    }

    /// Noise-free Gram matrix.
    pub fn gram(&self, xs: &[&[f64]]) -> DMatrix<f64> {
        let n = xs.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = self.signal_variance;
            for j in 0..i {
                let v = self.eval(xs[i], xs[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }
}

/// Dense GP posterior over arbitrary training inputs (zero prior mean).
#[derive(Debug, Clone)]
pub struct GpPosterior {
    kernel: SqExpKernel,
    x: Vec<Vec<f64>>,
    y: DVector<f64>,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

pub fn gp_fit(x: &FeatureMatrix, y: &[f64], kernel: SqExpKernel) -> Result<GpPosterior> {
    let rows = (0..x.rows()).map(|i| x.row(i).to_vec()).collect();
    GpPosterior::fit(rows, y, kernel)
}

impl GpPosterior {
    pub fn fit(x: Vec<Vec<f64>>, y: &[f64], kernel: SqExpKernel) -> Result<Self> {
        kernel.validate()?;
        if x.is_empty() {
            return Err(Error::InvalidConfig("GP needs at least one training point".into()));
        }
        if x.len() != y.len() {
            return Err(Error::InvalidConfig("GP inputs and targets differ in length".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("GP targets"));
        }
        let refs: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
        let mut k = kernel.gram(&refs);
        for i in 0..k.nrows() {
            k[(i, i)] += kernel.noise_variance;
        }
        let (chol, jitter) = cholesky_jittered(&k)?;
        let y = DVector::from_column_slice(y);
        let w = chol.solve_lower_triangular(&y).ok_or(Error::IllConditioned { jitter })?;
        let alpha = chol.tr_solve_lower_triangular(&w).ok_or(Error::IllConditioned { jitter })?;
        Ok(Self { kernel, x, y, chol, alpha, jitter })
    }

    pub fn kernel(&self) -> &SqExpKernel {
        &self.kernel
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn targets(&self) -> &[f64] {
        self.y.as_slice()
    }

    fn cross(&self, q: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| self.kernel.eval(xi, q)))
    }

    /// Latent predictive mean and variance at `q`.
    pub fn predict(&self, q: &[f64]) -> (f64, f64) {
        let ks = self.cross(q);
        let mean = ks.dot(&self.alpha);
        let v = self.chol.solve_lower_triangular(&ks).unwrap_or_else(|| DVector::zeros(ks.len()));
        let var = (self.kernel.signal_variance - v.norm_squared()).max(0.0);
        (mean, var)
    }

    /// Joint latent predictive over several query points.
    pub fn predict_joint(&self, qs: &[&[f64]]) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.x.len();
        let mut ks = DMatrix::zeros(n, qs.len());
        for (c, q) in qs.iter().enumerate() {
            for (r, xi) in self.x.iter().enumerate() {
                ks[(r, c)] = self.kernel.eval(xi, q);
            }
        }
        let mean = ks.tr_mul(&self.alpha);
        let v = self.chol.solve_lower_triangular(&ks).unwrap_or_else(|| DMatrix::zeros(n, qs.len()));
        let cov = self.kernel.gram(qs) - v.tr_mul(&v);
        (mean, cov)
    }
}

/// Options for the marginal-likelihood lengthscale search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSearch {
    /// Bounds expressed in units of sqrt(D).
    pub min_lengthscale: f64,
    pub max_lengthscale: f64,
    pub grid: usize,
    pub refine_steps: usize,
    /// Noise variance as a fraction of the fitted signal variance.
    pub noise_ratio: f64,
}

impl Default for KernelSearch {
    fn default() -> Self {
        Self { min_lengthscale: 0.02, max_lengthscale: 2.0, grid: 12, refine_steps: 12, noise_ratio: 1e-6 }
    }
}

impl KernelSearch {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_lengthscale > 0.0 && self.max_lengthscale > self.min_lengthscale) {
            return Err(Error::InvalidConfig("lengthscale bounds must satisfy 0 < min < max".into()));
        }
        if self.grid < 2 {
            return Err(Error::InvalidConfig("lengthscale grid needs at least 2 points".into()));
        }
        if !(self.noise_ratio > 0.0) {
            return Err(Error::InvalidConfig("noise ratio must be > 0".into()));
        }
        Ok(())
    }

    /// Kernel used before enough data exists to fit one.
    pub fn fallback(&self, dim: usize) -> SqExpKernel {
        let l = (self.min_lengthscale * self.max_lengthscale).sqrt() * (dim as f64).sqrt();
        SqExpKernel { lengthscale: l, signal_variance: 1.0, noise_variance: self.noise_ratio }
    }
}

/// Log marginal likelihood with the signal variance profiled out.
/// Returns (value, fitted signal variance).
fn profile_likelihood(xs: &[&[f64]], y: &DVector<f64>, lengthscale: f64, noise_ratio: f64) -> Option<(f64, f64)> {
    let n = xs.len() as f64;
    let unit = SqExpKernel { lengthscale, signal_variance: 1.0, noise_variance: 0.0 };
    let mut r = unit.gram(xs);
    for i in 0..r.nrows() {
        r[(i, i)] += noise_ratio;
    }
    let (l, _) = cholesky_jittered(&r).ok()?;
    let w = l.solve_lower_triangular(y)?;
    let sv = (w.norm_squared() / n).max(1e-8);
    let logdet: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Some((-0.5 * n * sv.ln() - 0.5 * logdet, sv))
}

/// Fits lengthscale and signal variance by maximising the marginal
/// likelihood: a log-spaced grid followed by golden-section refinement
/// around the best grid point.
pub fn fit_kernel(xs: &[&[f64]], y: &[f64], search: &KernelSearch) -> Result<SqExpKernel> {
    search.validate()?;
    let dim = xs.first().map_or(1, |x| x.len());
    if xs.len() < 3 {
        return Ok(search.fallback(dim));
    }
    let yv = DVector::from_column_slice(y);
    let unit = (dim as f64).sqrt();
    let lo = (search.min_lengthscale * unit).ln();
    let hi = (search.max_lengthscale * unit).ln();
    let step = (hi - lo) / (search.grid - 1) as f64;
    let score = |log_l: f64| {
        profile_likelihood(xs, &yv, log_l.exp(), search.noise_ratio).map_or(f64::NEG_INFINITY, |(v, _)| v)
    };

    let grid: Vec<f64> = (0..search.grid).map(|i| lo + step * i as f64).collect();
    let scores: Vec<f64> = grid.iter().map(|&g| score(g)).collect();
    let best = scores
        .iter()
        .enumerate()
        .fold(0, |b, (i, &s)| if s > scores[b] { i } else { b });
    if !scores[best].is_finite() {
        return Err(Error::IllConditioned { jitter: *JITTER_LADDER.last().unwrap_or(&0.0) });
    }

    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(grid.len() - 1)]);
    let mut best_x = grid[best];
    let mut best_s = scores[best];
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (score(c), score(d));
    for _ in 0..search.refine_steps {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = score(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = score(d);
        }
    }
    for (x, s) in [(c, fc), (d, fd)] {
        if s > best_s {
            best_s = s;
            best_x = x;
        }
    }
    let lengthscale = best_x.exp();
    let (_, sv) = profile_likelihood(xs, &yv, lengthscale, search.noise_ratio)
        .ok_or(Error::IllConditioned { jitter: 0.0 })?;
    SqExpKernel::new(lengthscale, sv, sv * search.noise_ratio)
}

/// Saved predictor state for [`PoolPredictor::restore`].
#[derive(Debug, Clone)]
pub struct Checkpoint {
    len: usize,
    jitter: f64,
    var: Vec<f64>,
}

/// GP predictor over every candidate of a fixed library, updated one
/// training point at a time.
///
/// Row `i` of `v` holds `L^{-1} K(X, pool)` for the `i`-th training point,
/// so adding a point costs O(nP) and the posterior variance over the whole
/// pool is maintained incrementally.
#[derive(Debug, Clone)]
pub struct PoolPredictor {
    library: Arc<Library>,
    kernel: SqExpKernel,
    jitter: f64,
    train: Vec<usize>,
    /// Packed lower-triangular Cholesky factor, row by row.
    chol: Vec<f64>,
    v: Vec<Vec<f64>>,
    var: Vec<f64>,
}

impl PoolPredictor {
    pub fn new(library: Arc<Library>, kernel: SqExpKernel) -> Result<Self> {
        kernel.validate()?;
        let n = library.len();
        Ok(Self {
            library,
            kernel,
            jitter: 0.0,
            train: Vec::new(),
            chol: Vec::new(),
            v: Vec::new(),
            var: vec![kernel.signal_variance; n],
        })
    }

    /// Predictor conditioned on `train`, escalating jitter when needed.
    pub fn build(library: Arc<Library>, kernel: SqExpKernel, train: &[usize]) -> Result<Self> {
        let mut p = Self::new(library, kernel)?;
        for &i in train {
            p.push(i)?;
        }
        Ok(p)
    }

    pub fn kernel(&self) -> &SqExpKernel {
        &self.kernel
    }

    pub fn library(&self) -> &Arc<Library> {
        &self.library
    }

    pub fn len(&self) -> usize {
        self.train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty()
    }

    pub fn train(&self) -> &[usize] {
        &self.train
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Latent posterior variance at every pool candidate.
    pub fn variance(&self) -> &[f64] {
        &self.var
    }

    #[inline]
    fn row_offset(i: usize) -> usize {
        i * (i + 1) / 2
    }

    fn chol_row(&self, i: usize) -> &[f64] {
        let o = Self::row_offset(i);
        &self.chol[o..o + i + 1]
    }

    /// Adds pool candidate `index` as a training input.
    pub fn push(&mut self, index: usize) -> Result<()> {
        if index >= self.library.len() {
            return Err(Error::ProtocolViolation(format!("training index {index} outside pool")));
        }
        if self.try_push(index) {
            return Ok(());
        }
        let train = std::mem::take(&mut self.train);
        let current = self.jitter;
        for &jitter in JITTER_LADDER.iter().filter(|&&j| j > current) {
            self.reset(jitter);
            let mut ok = true;
            for &i in train.iter().chain(std::iter::once(&index)) {
                if !self.try_push(i) {
                    ok = false;
                    break;
                }
            }
            if ok {
                return Ok(());
            }
        }
        Err(Error::IllConditioned { jitter: *JITTER_LADDER.last().unwrap_or(&0.0) })
    }

    fn reset(&mut self, jitter: f64) {
        self.jitter = jitter;
        self.train.clear();
        self.chol.clear();
        self.v.clear();
        self.var.iter_mut().for_each(|v| *v = self.kernel.signal_variance);
    }

    fn try_push(&mut self, index: usize) -> bool {
        let feats = self.library.features();
        let x = feats.row(index);
        let n = self.train.len();
        let l: Vec<f64> = self.v.iter().map(|row| row[index]).collect();
        let d2 = self.kernel.signal_variance + self.kernel.noise_variance + self.jitter
            - l.iter().map(|v| v * v).sum::<f64>();
        if !(d2 > 1e-12 * self.kernel.signal_variance) {
            return false;
        }
        let d = d2.sqrt();
        let mut row: Vec<f64> = (0..feats.rows()).map(|p| self.kernel.eval(x, feats.row(p))).collect();
        for (j, vj) in self.v.iter().enumerate() {
            let c = l[j];
            if c != 0.0 {
                row.iter_mut().zip(vj).for_each(|(r, v)| *r -= c * v);
            }
        }
        let inv = 1.0 / d;
        row.iter_mut().for_each(|r| *r *= inv);
        self.var.iter_mut().zip(&row).for_each(|(s, r)| *s = (*s - r * r).max(0.0));
        self.chol.extend_from_slice(&l);
        self.chol.push(d);
        self.v.push(row);
        self.train.push(index);
        debug_assert_eq!(self.chol.len(), Self::row_offset(n + 1));
        true
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { len: self.train.len(), jitter: self.jitter, var: self.var.clone() }
    }

    /// Drops training points added after `cp` was taken. If a later push
    /// escalated the jitter, the earlier state is rebuilt from scratch.
    pub fn restore(&mut self, cp: Checkpoint) -> Result<()> {
        if cp.len > self.train.len() {
            return Err(Error::ProtocolViolation("checkpoint is newer than predictor".into()));
        }
        if cp.jitter != self.jitter {
            let train: Vec<usize> = self.train[..cp.len].to_vec();
            self.reset(cp.jitter);
            for i in train {
                if !self.try_push(i) {
                    return Err(Error::IllConditioned { jitter: cp.jitter });
                }
            }
            return Ok(());
        }
        self.train.truncate(cp.len);
        self.v.truncate(cp.len);
        self.chol.truncate(Self::row_offset(cp.len));
        self.var = cp.var;
        Ok(())
    }

    /// Forward substitution `L^{-1} y` for targets aligned with [`train`](Self::train).
    pub fn whiten(&self, y: &[f64]) -> Vec<f64> {
        let mut w = Vec::with_capacity(y.len());
        for (i, &yi) in y.iter().enumerate().take(self.train.len()) {
            let row = self.chol_row(i);
            let s: f64 = row[..i].iter().zip(&w).map(|(a, b)| a * b).sum();
            w.push((yi - s) / row[i]);
        }
        w
    }

    /// Latent posterior mean over the pool given whitened targets.
    pub fn mean_from_whitened(&self, w: &[f64]) -> Vec<f64> {
        let mut mean = vec![0.0; self.library.len()];
        self.accumulate_mean(w, 0, &mut mean);
        mean
    }

    /// Adds the contribution of training rows `start..w.len()` to `mean`.
    pub fn accumulate_mean(&self, w: &[f64], start: usize, mean: &mut [f64]) {
        for (j, &wj) in w.iter().enumerate().skip(start) {
            mean.iter_mut().zip(&self.v[j]).for_each(|(m, v)| *m += wj * v);
        }
    }

    /// Latent posterior mean over the pool for targets aligned with training order.
    pub fn mean(&self, y: &[f64]) -> Vec<f64> {
        self.mean_from_whitened(&self.whiten(y))
    }

    /// Latent covariance between pool candidates using only the first
    /// `rows` training points.
    pub fn covariance(&self, idx: &[usize], rows: usize) -> DMatrix<f64> {
        let feats = self.library.features();
        let k = idx.len();
        let mut c = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in 0..=a {
                let mut v = self.kernel.eval(feats.row(idx[a]), feats.row(idx[b]));
                for row in self.v.iter().take(rows) {
                    v -= row[idx[a]] * row[idx[b]];
                }
                c[(a, b)] = v;
                c[(b, a)] = v;
            }
        }
        c
    }
}
