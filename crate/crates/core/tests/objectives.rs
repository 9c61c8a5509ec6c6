use batchscreen::objectives::{
    branin, eval_branin, eval_hartmann6, grid_library, halton, hartmann6, hartmann6_library, ObjectiveName,
    BRANIN_MIN, HARTMANN6_MIN,
};
use batchscreen::Error;

/// Compass search inside the box, shrinking the step on failure.
fn refine(f: impl Fn(&[f64]) -> f64, mut x: Vec<f64>, bounds: &[(f64, f64)]) -> f64 {
    let mut step: Vec<f64> = bounds.iter().map(|(lo, hi)| (hi - lo) * 0.01).collect();
    let mut fx = f(&x);
    for _ in 0..200 {
        let mut improved = false;
        for d in 0..x.len() {
            for sign in [1.0, -1.0] {
                let mut y = x.clone();
                y[d] = (y[d] + sign * step[d]).clamp(bounds[d].0, bounds[d].1);
                let fy = f(&y);
                if fy < fx {
                    x = y;
                    fx = fy;
                    improved = true;
                }
            }
        }
        if !improved {
            step.iter_mut().for_each(|s| *s *= 0.5);
        }
    }
    fx
}

#[test]
fn branin_dense_grid_minimum() {
    let n = 2000;
    let bounds = ObjectiveName::Branin.bounds();
    let mut best = (f64::INFINITY, vec![0.0, 0.0]);
    for i in 0..n {
        for j in 0..n {
            let x = [
                bounds[0].0 + (bounds[0].1 - bounds[0].0) * i as f64 / (n - 1) as f64,
                bounds[1].0 + (bounds[1].1 - bounds[1].0) * j as f64 / (n - 1) as f64,
            ];
            let v = branin(&x);
            if v < best.0 {
                best = (v, x.to_vec());
            }
        }
    }
    let refined = refine(branin, best.1, &bounds);
    assert!((best.0 - refined).abs() < 1e-3);
    assert!((refined - BRANIN_MIN).abs() < 1e-6, "{refined}");
    for m in [[-std::f64::consts::PI, 12.275], [std::f64::consts::PI, 2.275], [9.42478, 2.475]] {
        assert!((branin(&m) - BRANIN_MIN).abs() < 1e-5);
    }
}

#[test]
fn hartmann6_quasi_random_scan_minimum() {
    let bounds = ObjectiveName::Hartmann6.bounds();
    let mut best = (f64::INFINITY, Vec::new());
    for i in 1..=10_000_000u64 {
        let x = halton(i, 6);
        let v = hartmann6(&x);
        if v < best.0 {
            best = (v, x);
        }
    }
    let refined = refine(hartmann6, best.1, &bounds);
    assert!((refined - HARTMANN6_MIN).abs() < 1e-3, "{refined}");
    assert!(best.0 > HARTMANN6_MIN - 1e-9);
}

#[test]
fn pools_bound_the_known_minima() {
    let lib = grid_library(ObjectiveName::Branin, 200).unwrap();
    assert!(lib.optimum() >= BRANIN_MIN && lib.optimum() < BRANIN_MIN + 0.05);
    let lib = hartmann6_library(5000).unwrap();
    assert!(lib.optimum() >= HARTMANN6_MIN);
    assert_eq!(lib.len(), 5000);
}

#[test]
fn out_of_domain_points_are_rejected() {
    assert!(matches!(eval_branin(&[20.0, 0.0]), Err(Error::OutOfDomain(_))));
    assert!(eval_hartmann6(&[0.5; 5]).is_err());
    assert!(eval_hartmann6(&[1.5, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
}
