//! Bayesian neural network regression trained by probabilistic
//! backpropagation: a fully factored Gaussian posterior over weights,
//! moment-matched forward propagation and assumed-density-filtering updates.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::FeatureMatrix;
use crate::seed::rng;
use crate::stats::{norm_cdf, norm_pdf};

/// Shape and rate of the Gamma hyperpriors on both precisions.
pub const PRIOR_SHAPE: f64 = 6.0;
pub const PRIOR_RATE: f64 = 6.0;

/// Weights whose updated variance falls below this keep their old factor.
const MIN_VARIANCE: f64 = 1e-100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    /// Identity hidden units; used to check moment propagation.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BnnArchitecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl BnnArchitecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>) -> Self {
        Self { input_dim, hidden, activation: Activation::Relu }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidConfig("network input dimension must be >= 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden layers must have >= 1 unit".into()));
        }
        Ok(())
    }

    /// (rows, cols) of every weight matrix; cols include the bias column.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut sizes = vec![self.input_dim];
        sizes.extend(&self.hidden);
        sizes.push(1);
        sizes.windows(2).map(|w| (w[1], w[0] + 1)).collect()
    }

    pub fn weight_count(&self) -> usize {
        self.layer_shapes().iter().map(|(r, c)| r * c).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl GammaParams {
    pub fn prior() -> Self {
        Self { alpha: PRIOR_SHAPE, beta: PRIOR_RATE }
    }

    /// Mean precision alpha / beta.
    pub fn mean(&self) -> f64 {
        self.alpha / self.beta
    }

    /// E[1 / precision] = beta / (alpha - 1).
    pub fn inverse_mean(&self) -> f64 {
        self.beta / (self.alpha - 1.0)
    }
}

/// Gaussian factors of one weight matrix, row-major rows x cols; the last
/// column multiplies the constant bias input.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerFactors {
    pub rows: usize,
    pub cols: usize,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl LayerFactors {
    #[inline]
    fn scale(&self) -> f64 {
        1.0 / (self.cols as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactoredPosterior {
    pub arch: BnnArchitecture,
    pub layers: Vec<LayerFactors>,
    pub noise: GammaParams,
    pub weight_precision: GammaParams,
}

/// One entry of the flat posterior serialisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorEntry {
    pub layer: usize,
    pub row: usize,
    pub col: usize,
    pub m: f64,
    pub v: f64,
}

pub fn pbp_init(arch: &BnnArchitecture, seed: u64) -> Result<FactoredPosterior> {
    arch.validate()?;
    let mut r = rng(seed);
    let prior = GammaParams::prior();
    let layers = arch
        .layer_shapes()
        .into_iter()
        .map(|(rows, cols)| {
            let sd = 1.0 / (cols as f64).sqrt();
            let m = (0..rows * cols)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    z * sd
                })
                .collect();
            LayerFactors { rows, cols, m, v: vec![prior.inverse_mean(); rows * cols] }
        })
        .collect();
    Ok(FactoredPosterior { arch: arch.clone(), layers, noise: prior, weight_precision: prior })
}

/// Mean and variance of max(0, Z) for Z ~ N(mu, var), with derivatives
/// (dm/dmu, dm/dvar, dv/dmu, dv/dvar).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectifierMoments {
    pub mean: f64,
    pub var: f64,
    pub dm_dmu: f64,
    pub dm_dvar: f64,
    pub dv_dmu: f64,
    pub dv_dvar: f64,
}

pub fn rectifier_moments(mu: f64, var: f64) -> RectifierMoments {
    if var <= 1e-300 {
        let on = mu > 0.0;
        return RectifierMoments {
            mean: mu.max(0.0),
            var: 0.0,
            dm_dmu: if on { 1.0 } else { 0.0 },
            dm_dvar: 0.0,
            dv_dmu: 0.0,
            dv_dvar: if on { 1.0 } else { 0.0 },
        };
    }
    let sigma = var.sqrt();
    let alpha = mu / sigma;
    let cdf = norm_cdf(alpha);
    let pdf = norm_pdf(alpha);
    let gamma = if alpha < -30.0 {
        -alpha - 1.0 / alpha + 2.0 / alpha.powi(3)
    } else {
        pdf / cdf
    };
    let v_aux = mu + sigma * gamma;
    let mean = cdf * v_aux;
    let var_out = (mean * v_aux * norm_cdf(-alpha) + cdf * var * (1.0 - gamma * (gamma + alpha))).max(0.0);
    RectifierMoments {
        mean,
        var: var_out,
        dm_dmu: cdf,
        dm_dvar: pdf / (2.0 * sigma),
        dv_dmu: 2.0 * mean * (1.0 - cdf),
        dv_dvar: cdf - mean * pdf / sigma,
    }
}

/// Cached quantities from one forward pass, reused by the backward pass.
#[derive(Debug, Default)]
struct Trace {
    /// Per layer: input means and variances (bias entry last).
    inputs: Vec<(Vec<f64>, Vec<f64>)>,
    /// Per hidden layer: activation derivatives.
    acts: Vec<Vec<RectifierMoments>>,
}

impl FactoredPosterior {
    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    fn forward(&self, x: &[f64], trace: Option<&mut Trace>) -> Result<(f64, f64)> {
        if x.len() != self.arch.input_dim {
            return Err(Error::InvalidConfig(format!(
                "input has dimension {}, network expects {}",
                x.len(),
                self.arch.input_dim
            )));
        }
        let mut a: Vec<f64> = x.to_vec();
        a.push(1.0);
        let mut b = vec![0.0; a.len()];
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut acts = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        let mut out = (0.0, 0.0);
        for (l, layer) in self.layers.iter().enumerate() {
            let s = layer.scale();
            let s2 = s * s;
            let mut mu = vec![0.0; layer.rows];
            let mut var = vec![0.0; layer.rows];
            for k in 0..layer.rows {
                let mr = &layer.m[k * layer.cols..(k + 1) * layer.cols];
                let vr = &layer.v[k * layer.cols..(k + 1) * layer.cols];
                let mut sm = 0.0;
                let mut sv = 0.0;
                for j in 0..layer.cols {
                    sm += mr[j] * a[j];
                    sv += vr[j] * (b[j] + a[j] * a[j]) + mr[j] * mr[j] * b[j];
                }
                mu[k] = s * sm;
                var[k] = s2 * sv;
                if !mu[k].is_finite() || !var[k].is_finite() {
                    return Err(Error::Numeric { layer: l, message: "non-finite pre-activation moments".into() });
                }
            }
            inputs.push((a, b));
            if l == last {
                out = (mu[0], var[0].max(0.0));
                a = Vec::new();
                b = Vec::new();
            } else {
                let moments: Vec<RectifierMoments> = match self.arch.activation {
                    Activation::Relu => mu.iter().zip(&var).map(|(&m, &v)| rectifier_moments(m, v)).collect(),
                    Activation::Linear => mu
                        .iter()
                        .zip(&var)
                        .map(|(&m, &v)| RectifierMoments {
                            mean: m,
                            var: v,
                            dm_dmu: 1.0,
                            dm_dvar: 0.0,
                            dv_dmu: 0.0,
                            dv_dvar: 1.0,
                        })
                        .collect(),
                };
                a = moments.iter().map(|r| r.mean).chain(std::iter::once(1.0)).collect();
                b = moments.iter().map(|r| r.var).chain(std::iter::once(0.0)).collect();
                if a.iter().chain(&b).any(|v| !v.is_finite()) {
                    return Err(Error::Numeric { layer: l, message: "non-finite activation moments".into() });
                }
                acts.push(moments);
            }
        }
        if let Some(t) = trace {
            t.inputs = inputs;
            t.acts = acts;
        }
        Ok(out)
    }

    /// Predictive mean and variance of the network output f(x).
    pub fn forward_moments(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.forward(x, None)
    }

    /// Gaussian predictive for a noisy target: (mu_f, var_f + E[1/gamma]).
    pub fn predictive(&self, x: &[f64]) -> Result<(f64, f64)> {
        let (m, v) = self.forward(x, None)?;
        Ok((m, v + self.noise.inverse_mean()))
    }

    pub fn to_entries(&self) -> Vec<FactorEntry> {
        let mut out = Vec::with_capacity(self.arch.weight_count());
        for (l, layer) in self.layers.iter().enumerate() {
            for row in 0..layer.rows {
                for col in 0..layer.cols {
                    let i = row * layer.cols + col;
                    out.push(FactorEntry { layer: l, row, col, m: layer.m[i], v: layer.v[i] });
                }
            }
        }
        out
    }

    pub fn from_entries(
        arch: BnnArchitecture,
        entries: &[FactorEntry],
        noise: GammaParams,
        weight_precision: GammaParams,
    ) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.layer_shapes();
        let mut layers: Vec<LayerFactors> = shapes
            .iter()
            .map(|&(rows, cols)| LayerFactors { rows, cols, m: vec![f64::NAN; rows * cols], v: vec![f64::NAN; rows * cols] })
            .collect();
        if entries.len() != arch.weight_count() {
            return Err(Error::Wire(format!(
                "posterior has {} factors, architecture needs {}",
                entries.len(),
                arch.weight_count()
            )));
        }
        for e in entries {
            let layer = layers.get_mut(e.layer).ok_or_else(|| Error::Wire(format!("layer {} out of range", e.layer)))?;
            if e.row >= layer.rows || e.col >= layer.cols {
                return Err(Error::Wire(format!("factor ({}, {}, {}) out of range", e.layer, e.row, e.col)));
            }
            let i = e.row * layer.cols + e.col;
            layer.m[i] = e.m;
            layer.v[i] = e.v;
        }
        if layers.iter().any(|l| l.m.iter().chain(&l.v).any(|v| !v.is_finite())) {
            return Err(Error::Wire("posterior factors missing or non-finite".into()));
        }
        Ok(Self { arch, layers, noise, weight_precision })
    }
}

pub fn pbp_forward_moments(q: &FactoredPosterior, x: &[f64]) -> Result<(f64, f64)> {
    q.forward_moments(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    /// Applied; `reverted` weights kept their previous factors.
    Applied { reverted: usize },
    /// log Z was not finite; nothing changed.
    Skipped,
}

fn log_normal(y: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * (y - mean).powi(2) / var
}

/// One ADF step on a single observation.
pub fn pbp_adf_update(q: &mut FactoredPosterior, x: &[f64], y: f64) -> Result<UpdateOutcome> {
    if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training pair"));
    }
    let mut trace = Trace::default();
    let (mu_f, var_f) = match q.forward(x, Some(&mut trace)) {
        Ok(v) => v,
        Err(Error::Numeric { .. }) => return Ok(UpdateOutcome::Skipped),
        Err(e) => return Err(e),
    };
    let (a, b) = (q.noise.alpha, q.noise.beta);
    let v0 = var_f + b / (a - 1.0);
    let v1 = var_f + b / a;
    let v2 = var_f + b / (a + 1.0);
    let log_z = log_normal(y, mu_f, v0);
    let log_z1 = log_normal(y, mu_f, v1);
    let log_z2 = log_normal(y, mu_f, v2);
    if !(log_z.is_finite() && log_z1.is_finite() && log_z2.is_finite()) {
        return Ok(UpdateOutcome::Skipped);
    }

    let r = y - mu_f;
    let mut g_mu = vec![r / v0];
    let mut g_var = vec![-0.5 / v0 + 0.5 * r * r / (v0 * v0)];

    // Backward pass: gradients of log Z w.r.t. every mean and variance,
    // all evaluated at the pre-update factors.
    let n_layers = q.layers.len();
    let mut grads: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(n_layers);
    for l in (0..n_layers).rev() {
        let layer = &q.layers[l];
        let (ai, bi) = &trace.inputs[l];
        let s = layer.scale();
        let s2 = s * s;
        let mut gm = vec![0.0; layer.rows * layer.cols];
        let mut gv = vec![0.0; layer.rows * layer.cols];
        let mut ga = vec![0.0; layer.cols];
        let mut gb = vec![0.0; layer.cols];
        for k in 0..layer.rows {
            let (gmu, gvar) = (g_mu[k], g_var[k]);
            let off = k * layer.cols;
            for j in 0..layer.cols {
                let mkj = layer.m[off + j];
                let vkj = layer.v[off + j];
                gm[off + j] = gmu * s * ai[j] + gvar * s2 * 2.0 * mkj * bi[j];
                gv[off + j] = gvar * s2 * (bi[j] + ai[j] * ai[j]);
                if l > 0 {
                    ga[j] += gmu * s * mkj + gvar * s2 * 2.0 * vkj * ai[j];
                    gb[j] += gvar * s2 * (vkj + mkj * mkj);
                }
            }
        }
        grads.push((gm, gv));
        if l > 0 {
            let acts = &trace.acts[l - 1];
            g_mu = acts.iter().enumerate().map(|(j, d)| ga[j] * d.dm_dmu + gb[j] * d.dv_dmu).collect();
            g_var = acts.iter().enumerate().map(|(j, d)| ga[j] * d.dm_dvar + gb[j] * d.dv_dvar).collect();
        }
    }
    grads.reverse();

    let mut reverted = 0;
    for (layer, (gm, gv)) in q.layers.iter_mut().zip(&grads) {
        for i in 0..layer.m.len() {
            let (m, v) = (layer.m[i], layer.v[i]);
            let m_new = m + v * gm[i];
            let v_new = v - v * v * (gm[i] * gm[i] - 2.0 * gv[i]);
            if v_new <= MIN_VARIANCE || !v_new.is_finite() || !m_new.is_finite() {
                reverted += 1;
            } else {
                layer.m[i] = m_new;
                layer.v[i] = v_new;
            }
        }
    }

    let alpha_new = 1.0 / ((log_z2 - 2.0 * log_z1 + log_z).exp() * (a + 1.0) / a - 1.0);
    let beta_new = 1.0 / ((log_z2 - log_z1).exp() * (a + 1.0) / b - (log_z1 - log_z).exp() * a / b);
    if alpha_new.is_finite() && beta_new.is_finite() && alpha_new > 1.0 && beta_new > 0.0 {
        q.noise = GammaParams { alpha: alpha_new, beta: beta_new };
    }
    Ok(UpdateOutcome::Applied { reverted })
}

/// Site parameters of the prior factors, refined once per epoch.
#[derive(Debug, Clone)]
struct PriorSites {
    m_nat: Vec<Vec<f64>>,
    v_nat: Vec<Vec<f64>>,
    a_nat: Vec<Vec<f64>>,
    b_nat: Vec<Vec<f64>>,
}

impl PriorSites {
    fn new(q: &FactoredPosterior) -> Self {
        let prec = (q.weight_precision.alpha - 1.0) / q.weight_precision.beta;
        let zeros = || q.layers.iter().map(|l| vec![0.0; l.m.len()]).collect::<Vec<_>>();
        Self {
            m_nat: zeros(),
            v_nat: q.layers.iter().map(|l| vec![prec; l.m.len()]).collect(),
            a_nat: zeros(),
            b_nat: zeros(),
        }
    }

    /// Re-estimates the weight-precision Gamma by moment matching each
    /// prior factor against its cavity.
    fn refine(&mut self, q: &mut FactoredPosterior) {
        for (l, layer) in q.layers.iter_mut().enumerate() {
            for i in 0..layer.m.len() {
                let v_nat = 1.0 / layer.v[i];
                let m_nat = layer.m[i] / layer.v[i];
                let v_cav_nat = v_nat - self.v_nat[l][i];
                let m_cav_nat = m_nat - self.m_nat[l][i];
                let v_cav = 1.0 / v_cav_nat;
                let m_cav = m_cav_nat / v_cav_nat;
                let a_cav_nat = (q.weight_precision.alpha - 1.0) - self.a_nat[l][i];
                let b_cav_nat = -q.weight_precision.beta - self.b_nat[l][i];
                let a_cav = a_cav_nat + 1.0;
                let b_cav = -b_cav_nat;
                if !(v_cav > 0.0 && b_cav > 0.0 && a_cav > 1.0 && v_cav < 1e6) {
                    continue;
                }
                let v0 = v_cav + b_cav / (a_cav - 1.0);
                let v1 = v_cav + b_cav / a_cav;
                let v2 = v_cav + b_cav / (a_cav + 1.0);
                let lz = -0.5 * v0.ln() - 0.5 * m_cav * m_cav / v0;
                let lz1 = -0.5 * v1.ln() - 0.5 * m_cav * m_cav / v1;
                let lz2 = -0.5 * v2.ln() - 0.5 * m_cav * m_cav / v2;
                let dm = -m_cav / v0;
                let dv = -0.5 / v0 + 0.5 * m_cav * m_cav / (v0 * v0);
                let m_new = m_cav + v_cav * dm;
                let v_new = v_cav - v_cav * v_cav * (dm * dm - 2.0 * dv);
                let a_new = 1.0 / ((lz2 - 2.0 * lz1 + lz).exp() * (a_cav + 1.0) / a_cav - 1.0);
                let b_new = 1.0 / ((lz2 - lz1).exp() * (a_cav + 1.0) / b_cav - (lz1 - lz).exp() * a_cav / b_cav);
                let ok = [m_new, v_new, a_new, b_new].iter().all(|v| v.is_finite())
                    && v_new > MIN_VARIANCE
                    && a_new > 1.0
                    && b_new > 0.0;
                if !ok {
                    continue;
                }
                self.m_nat[l][i] = m_new / v_new - m_cav_nat;
                self.v_nat[l][i] = 1.0 / v_new - v_cav_nat;
                self.a_nat[l][i] = (a_new - 1.0) - a_cav_nat;
                self.b_nat[l][i] = -b_new - b_cav_nat;
                layer.m[i] = m_new;
                layer.v[i] = v_new;
                q.weight_precision = GammaParams { alpha: a_new, beta: b_new };
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FitReport {
    pub updates: usize,
    pub skipped: usize,
    pub reverted: usize,
}

/// Runs `epochs` ADF passes over the data, each in a freshly shuffled
/// order, refining the weight prior after every pass.
pub fn pbp_fit(q: &mut FactoredPosterior, x: &[&[f64]], y: &[f64], epochs: usize, seed: u64) -> Result<FitReport> {
    if x.len() != y.len() {
        return Err(Error::InvalidConfig("inputs and targets differ in length".into()));
    }
    let mut report = FitReport::default();
    if epochs == 0 {
        return Ok(report);
    }
    if x.is_empty() {
        return Err(Error::InvalidConfig("PBP fit needs at least one observation".into()));
    }
    let mut sites = PriorSites::new(q);
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut r = rng(seed);
    for _ in 0..epochs {
        order.shuffle(&mut r);
        for &i in &order {
            match pbp_adf_update(q, x[i], y[i])? {
                UpdateOutcome::Applied { reverted } => {
                    report.updates += 1;
                    report.reverted += reverted;
                }
                UpdateOutcome::Skipped => report.skipped += 1,
            }
        }
        sites.refine(q);
    }
    if report.skipped > 0 {
        log::debug!("pbp fit skipped {} of {} updates", report.skipped, report.skipped + report.updates);
    }
    Ok(report)
}

/// Concrete weights drawn from the factored posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSample {
    pub activation: Activation,
    /// Row-major (rows x cols) per layer, bias column last.
    pub layers: Vec<(usize, usize, Vec<f64>)>,
}

pub fn pbp_sample_weights(q: &FactoredPosterior, seed: u64) -> WeightSample {
    let mut r = rng(seed);
    let layers = q
        .layers
        .iter()
        .map(|l| {
            let w = l
                .m
                .iter()
                .zip(&l.v)
                .map(|(&m, &v)| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    m + v.sqrt() * z
                })
                .collect();
            (l.rows, l.cols, w)
        })
        .collect();
    WeightSample { activation: q.arch.activation, layers }
}

impl WeightSample {
    /// Weights equal to the posterior means.
    pub fn means(q: &FactoredPosterior) -> Self {
        Self { activation: q.arch.activation, layers: q.layers.iter().map(|l| (l.rows, l.cols, l.m.clone())).collect() }
    }
}

/// Deterministic forward pass of the sampled network.
pub fn pbp_point_eval(w: &WeightSample, x: &[f64]) -> f64 {
    let mut a: Vec<f64> = x.to_vec();
    let last = w.layers.len() - 1;
    for (l, (rows, cols, wl)) in w.layers.iter().enumerate() {
        a.push(1.0);
        let s = 1.0 / (*cols as f64).sqrt();
        let mut out: Vec<f64> = (0..*rows)
            .map(|k| s * wl[k * cols..(k + 1) * cols].iter().zip(&a).map(|(p, q)| p * q).sum::<f64>())
            .collect();
        if l != last && w.activation == Activation::Relu {
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        a = out;
    }
    a[0]
}

/// Pool features with a trailing bias column, prepared once for batched
/// network evaluation.
#[derive(Debug, Clone)]
pub struct BatchInputs {
    x: DMatrix<f64>,
}

impl BatchInputs {
    pub fn new(features: &FeatureMatrix) -> Self {
        let (n, d) = (features.rows(), features.dim());
        let x = DMatrix::from_fn(n, d + 1, |i, j| if j < d { features.row(i)[j] } else { 1.0 });
        Self { x }
    }

    pub fn rows(&self) -> usize {
        self.x.nrows()
    }
}

/// Evaluates the sampled network at every prepared input with dense
/// matrix products.
pub fn pbp_batch_eval(w: &WeightSample, inputs: &BatchInputs) -> Vec<f64> {
    let n = inputs.rows();
    let last = w.layers.len() - 1;
    let mut h = inputs.x.clone();
    for (l, (rows, cols, wl)) in w.layers.iter().enumerate() {
        let s = 1.0 / (*cols as f64).sqrt();
        // Row-major rows x cols is column-major cols x rows, i.e. W^T.
        let wt = DMatrix::from_column_slice(*cols, *rows, wl);
        let mut z = &h * wt;
        z *= s;
        if l == last {
            return z.column(0).iter().copied().collect();
        }
        if w.activation == Activation::Relu {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        h = z.insert_column(*rows, 1.0);
        debug_assert_eq!(h.nrows(), n);
    }
    unreachable!("network has an output layer")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn small_arch() -> BnnArchitecture {
        BnnArchitecture::new(3, vec![8])
    }

    #[test]
    fn init_constants() {
        let q = pbp_init(&small_arch(), 1).unwrap();
        assert!(q.layers.iter().all(|l| l.v.iter().all(|&v| (v - 1.2).abs() < 1e-15)));
        assert_eq!(q.noise.mean(), 1.0);
        assert_eq!(q.weight_precision, GammaParams { alpha: 6.0, beta: 6.0 });
        assert_eq!(q, pbp_init(&small_arch(), 1).unwrap());
        assert_eq!(q.layers[0].cols, 4);
        assert_eq!(q.layers[1].rows, 1);
    }

    #[test]
    fn rectifier_standard_normal() {
        let r = rectifier_moments(0.0, 1.0);
        assert!((r.mean - 0.398_942_280_401_432_7).abs() < 1e-12);
        assert!((r.var - (0.5 - 1.0 / (2.0 * std::f64::consts::PI))).abs() < 1e-12);
    }

    #[test]
    fn rectifier_far_negative_is_finite() {
        let r = rectifier_moments(-50.0, 1.0);
        assert!(r.mean >= 0.0 && r.mean < 1e-10);
        assert!(r.var >= 0.0 && r.var.is_finite());
    }

    #[test]
    fn rectifier_derivatives_match_finite_differences() {
        for &(mu, var) in &[(0.3, 0.7), (-1.2, 0.4), (2.0, 1.5)] {
            let r = rectifier_moments(mu, var);
            let h = 1e-6;
            let dmu = (rectifier_moments(mu + h, var).mean - rectifier_moments(mu - h, var).mean) / (2.0 * h);
            let dvar = (rectifier_moments(mu, var + h).mean - rectifier_moments(mu, var - h).mean) / (2.0 * h);
            let vmu = (rectifier_moments(mu + h, var).var - rectifier_moments(mu - h, var).var) / (2.0 * h);
            let vvar = (rectifier_moments(mu, var + h).var - rectifier_moments(mu, var - h).var) / (2.0 * h);
            assert!((dmu - r.dm_dmu).abs() < 1e-6);
            assert!((dvar - r.dm_dvar).abs() < 1e-6);
            assert!((vmu - r.dv_dmu).abs() < 1e-6);
            assert!((vvar - r.dv_dvar).abs() < 1e-6);
        }
    }

    #[test]
    fn point_mass_posterior_is_deterministic() {
        let mut q = pbp_init(&small_arch(), 4).unwrap();
        q.layers.iter_mut().for_each(|l| l.v.iter_mut().for_each(|v| *v = 0.0));
        let x = [0.3, -1.0, 2.0];
        let (m, v) = q.forward_moments(&x).unwrap();
        assert_eq!(v, 0.0);
        let w = WeightSample::means(&q);
        assert!((m - pbp_point_eval(&w, &x)).abs() < 1e-12);
        assert_eq!(pbp_sample_weights(&q, 3), w);
    }

    #[test]
    fn wrong_input_dimension_is_rejected() {
        let q = pbp_init(&small_arch(), 4).unwrap();
        assert!(q.forward_moments(&[1.0]).is_err());
    }

    #[test]
    fn flat_list_round_trip() {
        let q = pbp_init(&small_arch(), 2).unwrap();
        let back = FactoredPosterior::from_entries(q.arch.clone(), &q.to_entries(), q.noise, q.weight_precision).unwrap();
        assert_eq!(q, back);
        let mut short = q.to_entries();
        short.pop();
        assert!(FactoredPosterior::from_entries(q.arch.clone(), &short, q.noise, q.weight_precision).is_err());
    }

    #[test]
    fn uninformative_update_barely_moves() {
        let mut q = pbp_init(&small_arch(), 5).unwrap();
        q.noise = GammaParams { alpha: 2.0, beta: 1e12 };
        let x = [0.1, 0.2, 0.3];
        let (mu, _) = q.forward_moments(&x).unwrap();
        let before = q.clone();
        pbp_adf_update(&mut q, &x, mu).unwrap();
        for (a, b) in q.layers.iter().zip(&before.layers) {
            for (ma, mb) in a.m.iter().zip(&b.m) {
                assert!((ma - mb).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn linear_unit_converges_monotonically() {
        let arch = BnnArchitecture::new(1, vec![]);
        let mut q = pbp_init(&arch, 6).unwrap();
        let (x, y) = ([0.7], 1.5);
        let mut gap = (q.forward_moments(&x).unwrap().0 - y).abs();
        for _ in 0..30 {
            pbp_adf_update(&mut q, &x, y).unwrap();
            let g = (q.forward_moments(&x).unwrap().0 - y).abs();
            assert!(g <= gap + 1e-12, "{g} > {gap}");
            gap = g;
        }
        assert!(gap < 0.1);
    }

    #[test]
    fn variances_stay_positive_under_random_updates() {
        let mut q = pbp_init(&BnnArchitecture::new(2, vec![10]), 7).unwrap();
        let mut r = rng(8);
        for _ in 0..10_000 {
            let x = [r.random::<f64>() * 4.0 - 2.0, r.random::<f64>() * 4.0 - 2.0];
            let y = r.random::<f64>() * 6.0 - 3.0;
            pbp_adf_update(&mut q, &x, y).unwrap();
        }
        assert!(q.layers.iter().all(|l| l.v.iter().all(|&v| v > 0.0)));
        assert!(q.noise.alpha > 0.0 && q.noise.beta > 0.0);
    }

    #[test]
    fn update_order_matters() {
        let q0 = pbp_init(&small_arch(), 9).unwrap();
        let (xa, xb) = ([0.1, 0.5, -0.3], [1.0, -0.4, 0.2]);
        let mut q1 = q0.clone();
        pbp_adf_update(&mut q1, &xa, 1.0).unwrap();
        pbp_adf_update(&mut q1, &xb, -0.5).unwrap();
        let mut q2 = q0;
        pbp_adf_update(&mut q2, &xb, -0.5).unwrap();
        pbp_adf_update(&mut q2, &xa, 1.0).unwrap();
        assert_ne!(q1, q2);
    }

    #[test]
    fn zero_epochs_is_identity() {
        let mut q = pbp_init(&small_arch(), 10).unwrap();
        let before = q.clone();
        pbp_fit(&mut q, &[&[0.0, 0.0, 0.0]], &[1.0], 0, 3).unwrap();
        assert_eq!(q, before);
    }

    #[test]
    fn batch_eval_matches_point_eval() {
        let q = pbp_init(&small_arch(), 11).unwrap();
        let w = pbp_sample_weights(&q, 12);
        let mut r = rng(13);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| (0..3).map(|_| r.random::<f64>()).collect()).collect();
        let fm = FeatureMatrix::from_rows(&rows).unwrap();
        let batch = pbp_batch_eval(&w, &BatchInputs::new(&fm));
        for (row, b) in rows.iter().zip(&batch) {
            assert!((pbp_point_eval(&w, row) - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_give_zero() {
        let arch = small_arch();
        let w = WeightSample {
            activation: Activation::Relu,
            layers: arch.layer_shapes().iter().map(|&(r, c)| (r, c, vec![0.0; r * c])).collect(),
        };
        assert_eq!(pbp_point_eval(&w, &[1.0, 2.0, 3.0]), 0.0);
    }

    #[test]
    fn affine_single_layer_by_hand() {
        let w = WeightSample { activation: Activation::Relu, layers: vec![(1, 3, vec![2.0, -1.0, 0.5])] };
        let s = 1.0 / 3f64.sqrt();
        assert!((pbp_point_eval(&w, &[1.5, 4.0]) - s * (3.0 - 4.0 + 0.5)).abs() < 1e-15);
    }
}
