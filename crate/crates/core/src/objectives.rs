//! Synthetic benchmark objectives discretised to candidate pools.
//!
//! All objectives are minimised. Pools store unit-cube coordinates as
//! features and raw function values as targets.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::{FeatureKind, FeatureMatrix, Library, ObjectiveSense};
use crate::seed::rng;
use crate::stats::cholesky_jittered;

pub const BRANIN_MIN: f64 = 0.397_887_357_729_738_2;
pub const HARTMANN6_MIN: f64 = -3.322_368_011_391_339;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveName {
    Bohachevsky,
    Branin,
    Hartmann6,
    GpPrior,
}

impl ObjectiveName {
    pub const ALL: [ObjectiveName; 4] =
        [ObjectiveName::Bohachevsky, ObjectiveName::Branin, ObjectiveName::Hartmann6, ObjectiveName::GpPrior];

    pub fn dim(self) -> usize {
        match self {
            ObjectiveName::Hartmann6 => 6,
            _ => 2,
        }
    }

    pub fn bounds(self) -> Vec<(f64, f64)> {
        match self {
            ObjectiveName::Bohachevsky => vec![(-100.0, 100.0); 2],
            ObjectiveName::Branin => vec![(-5.0, 10.0), (0.0, 15.0)],
            ObjectiveName::Hartmann6 => vec![(0.0, 1.0); 6],
            ObjectiveName::GpPrior => vec![(0.0, 1.0); 2],
        }
    }
}

impl fmt::Display for ObjectiveName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectiveName::Bohachevsky => "bohachevsky",
            ObjectiveName::Branin => "branin",
            ObjectiveName::Hartmann6 => "hartmann6",
            ObjectiveName::GpPrior => "gp-prior",
        })
    }
}

impl FromStr for ObjectiveName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ObjectiveName::ALL
            .into_iter()
            .find(|o| o.to_string() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown objective `{s}`")))
    }
}

fn check_box(name: ObjectiveName, x: &[f64]) -> Result<()> {
    let bounds = name.bounds();
    if x.len() != bounds.len() {
        return Err(Error::OutOfDomain(format!("{name} takes {} inputs, got {}", bounds.len(), x.len())));
    }
    for (v, (lo, hi)) in x.iter().zip(bounds) {
        if !(lo..=hi).contains(v) {
            return Err(Error::OutOfDomain(format!("{name}: {v} outside [{lo}, {hi}]")));
        }
    }
    Ok(())
}

pub fn bohachevsky(x: &[f64]) -> f64 {
    x[0] * x[0] + 2.0 * x[1] * x[1] - 0.3 * (3.0 * PI * x[0]).cos() - 0.4 * (4.0 * PI * x[1]).cos() + 0.7
}

pub fn branin(x: &[f64]) -> f64 {
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    let u = x[1] - b * x[0] * x[0] + c * x[0] - 6.0;
    u * u + 10.0 * (1.0 - t) * x[0].cos() + 10.0
}

const H6_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
const H6_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];
const H6_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];

pub fn hartmann6(x: &[f64]) -> f64 {
    -(0..4)
        .map(|i| {
            let e: f64 = (0..6).map(|j| H6_A[i][j] * (x[j] - H6_P[i][j]).powi(2)).sum();
            H6_ALPHA[i] * (-e).exp()
        })
        .sum::<f64>()
}

pub fn eval_bohachevsky(x: &[f64]) -> Result<f64> {
    check_box(ObjectiveName::Bohachevsky, x)?;
    Ok(bohachevsky(x))
}

pub fn eval_branin(x: &[f64]) -> Result<f64> {
    check_box(ObjectiveName::Branin, x)?;
    Ok(branin(x))
}

pub fn eval_hartmann6(x: &[f64]) -> Result<f64> {
    check_box(ObjectiveName::Hartmann6, x)?;
    Ok(hartmann6(x))
}

/// Radical-inverse Halton point `index` (1-based recommended) in `dim <= 6` dimensions.
pub fn halton(index: u64, dim: usize) -> Vec<f64> {
    const PRIMES: [u64; 6] = [2, 3, 5, 7, 11, 13];
    PRIMES[..dim]
        .iter()
        .map(|&b| {
            let (mut i, mut f, mut r) = (index, 1.0, 0.0);
            while i > 0 {
                f /= b as f64;
                r += f * (i % b) as f64;
                i /= b;
            }
            r
        })
        .collect()
}

fn build_library(name: &str, unit: Vec<f64>, targets: Vec<f64>, dim: usize) -> Result<Library> {
    let n = targets.len();
    let ids = (0..n).map(|i| format!("{name}-{i}")).collect();
    let feats = FeatureMatrix::new(n, dim, unit)?;
    Library::new(ids, feats, targets, ObjectiveSense::Minimize, FeatureKind::Dense, false)
}

fn grid_unit(resolution: usize) -> Vec<f64> {
    let last = (resolution - 1) as f64;
    let mut unit = Vec::with_capacity(resolution * resolution * 2);
    for i in 0..resolution {
        for j in 0..resolution {
            unit.push(i as f64 / last);
            unit.push(j as f64 / last);
        }
    }
    unit
}

/// `resolution x resolution` grid over a 2-D objective's box.
pub fn grid_library(name: ObjectiveName, resolution: usize) -> Result<Library> {
    if resolution < 2 {
        return Err(Error::InvalidConfig("grid resolution must be >= 2".into()));
    }
    let f = match name {
        ObjectiveName::Bohachevsky => bohachevsky,
        ObjectiveName::Branin => branin,
        other => return Err(Error::InvalidConfig(format!("{other} has no closed-form 2-D grid"))),
    };
    let bounds = name.bounds();
    let unit = grid_unit(resolution);
    let targets = unit
        .chunks(2)
        .map(|u| {
            let x: Vec<f64> = u.iter().zip(&bounds).map(|(v, (lo, hi))| lo + v * (hi - lo)).collect();
            f(&x)
        })
        .collect();
    build_library(&name.to_string(), unit, targets, 2)
}

/// First `n` Halton points (skipping the origin) scored by Hartmann-6.
pub fn hartmann6_library(n: usize) -> Result<Library> {
    let mut unit = Vec::with_capacity(n * 6);
    for k in 1..=n as u64 {
        unit.extend(halton(k, 6));
    }
    let targets = unit.chunks(6).map(hartmann6).collect();
    build_library("hartmann6", unit, targets, 6)
}

/// One exact draw from a zero-mean GP with squared-exponential kernel on a
/// regular grid over the unit square, returned row-major.
///
/// The kernel factorises across axes, so the draw is `L Z Lᵀ` with `L` the
/// Cholesky factor of the 1-D Gram matrix and `Z` standard normal.
pub fn sample_gp_prior_surface(seed: u64, resolution: usize, lengthscale: f64, signal_variance: f64) -> Result<Vec<f64>> {
    if resolution < 2 {
        return Err(Error::InvalidConfig("grid resolution must be >= 2".into()));
    }
    let step = 1.0 / (resolution - 1) as f64;
    let k1 = DMatrix::from_fn(resolution, resolution, |i, j| {
        let d = (i as f64 - j as f64) * step;
        (-0.5 * d * d / (lengthscale * lengthscale)).exp()
    });
    let (l, _) = cholesky_jittered(&k1)?;
    let mut r = rng(seed);
    let z = DMatrix::from_fn(resolution, resolution, |_, _| StandardNormal.sample(&mut r));
    let f = &l * z * l.transpose() * signal_variance.sqrt();
    let mut out = Vec::with_capacity(resolution * resolution);
    for i in 0..resolution {
        for j in 0..resolution {
            out.push(f[(i, j)]);
        }
    }
    Ok(out)
}

/// GP-prior objective on a unit-square grid (length scale 0.1, unit signal variance).
pub fn gp_prior_library(seed: u64, resolution: usize) -> Result<Library> {
    let targets = sample_gp_prior_surface(seed, resolution, 0.1, 1.0)?;
    build_library("gp-prior", grid_unit(resolution), targets, 2)
}

/// Discrete pool for `name` at the default benchmark sizes.
pub fn objective_library(name: ObjectiveName, seed: u64) -> Result<Library> {
    match name {
        ObjectiveName::Bohachevsky | ObjectiveName::Branin => grid_library(name, 200),
        ObjectiveName::Hartmann6 => hartmann6_library(50_000),
        ObjectiveName::GpPrior => gp_prior_library(seed, 100),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        assert!(bohachevsky(&[0.0, 0.0]).abs() < 1e-15);
        for m in [[-PI, 12.275], [PI, 2.275], [9.42478, 2.475]] {
            assert!((branin(&m) - BRANIN_MIN).abs() < 1e-5);
        }
        let xstar = [0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573];
        assert!((hartmann6(&xstar) - HARTMANN6_MIN).abs() < 1e-5);
        assert!(eval_branin(&[11.0, 0.0]).is_err());
        assert!(eval_hartmann6(&[0.5; 5]).is_err());
    }

    #[test]
    fn halton_prefix() {
        assert_eq!(halton(1, 2), vec![0.5, 1.0 / 3.0]);
        assert_eq!(halton(2, 2), vec![0.25, 2.0 / 3.0]);
    }

    #[test]
    fn grid_pool_minimum_bounds_every_value() {
        let lib = grid_library(ObjectiveName::Branin, 50).unwrap();
        assert_eq!(lib.len(), 2500);
        assert!(lib.optimum() >= BRANIN_MIN);
        assert!(lib.targets().iter().all(|&v| v >= lib.optimum()));
        assert_eq!(lib.features().row(2499), &[1.0, 1.0]);
    }

    #[test]
    fn gp_surface_is_deterministic() {
        let a = sample_gp_prior_surface(3, 20, 0.1, 1.0).unwrap();
        assert_eq!(a, sample_gp_prior_surface(3, 20, 0.1, 1.0).unwrap());
        assert_ne!(a, sample_gp_prior_surface(4, 20, 0.1, 1.0).unwrap());
    }
}
