//! Sampled checks of the standing assumptions, restricted to the domain box.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::{find_equilibria, SystemSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionFlags {
    /// Drift and sigma finite at every sample (boundedness on the box).
    pub bounded_on_box: bool,
    pub uniform_ellipticity: bool,
    /// Radial margin negative at the outermost radius.
    pub radial_drift: bool,
    pub unique_stable_equilibrium: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub lambda_hat: f64,
    #[serde(rename = "Lambda_hat")]
    pub big_lambda_hat: f64,
    /// `(radius, margin)` pairs, radius increasing.
    pub radial_margin: Vec<(f64, f64)>,
    pub satisfied_on_box: AssumptionFlags,
    pub scope: String,
}

/// Worst case over directions of `alpha * Lambda + |x|^(1-beta) b(x).x/|x|` at `|x - c| = radius`,
/// `c` the box center.
pub fn radial_margin(system: &SystemSpec, alpha: f64, beta: f64, big_lambda: f64, radius: f64) -> f64 {
    let d = system.dim();
    let center = system.domain().center();
    let directions: Vec<Vec<f64>> = match d {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..64)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / 64.0;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        _ => {
            let mut dirs = Vec::new();
            for k in 0..d {
                for s in [1.0, -1.0] {
                    let mut e = vec![0.0; d];
                    e[k] = s;
                    dirs.push(e);
                }
            }
            dirs
        }
    };
    directions
        .iter()
        .map(|u| {
            let x: Vec<f64> = center.iter().zip(u).map(|(c, e)| c + radius * e).collect();
            let b = system.drift(&x);
            let radial: f64 = b.iter().zip(u).map(|(p, q)| p * q).sum();
            alpha * big_lambda + radius.powf(1.0 - beta) * radial
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Samples ellipticity bounds over `n_samples` random box points and evaluates the radial
/// drift margin at four radii up to the box inradius.
///
/// The ellipticity bounds at each sampled `y` are the extreme eigenvalues of `a(y)`, i.e. the
/// extremes of the Rayleigh quotient `x^T a(y) x / |x|^2` over all `x`.
pub fn check_assumptions(
    system: &SystemSpec,
    alpha: f64,
    beta: f64,
    n_samples: usize,
    seed: u64,
) -> AssumptionReport {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let domain = system.domain();
    let d = system.dim();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut bounded = true;
    for _ in 0..n_samples.max(1) {
        let u: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let y = domain.from_unit(&u);
        if system.eval_drift(&y).is_err() {
            bounded = false;
        }
        match system.eval_a(&y) {
            Ok(a) => {
                let eig = a.symmetric_eigenvalues();
                lo = lo.min(eig.min());
                hi = hi.max(eig.max());
            }
            Err(_) => {
                bounded = false;
                lo = lo.min(0.0);
            }
        }
    }
    let r_max = domain.inradius();
    let radial_margin: Vec<(f64, f64)> = [0.25, 0.5, 0.75, 1.0]
        .iter()
        .map(|f| {
            let r = f * r_max;
            (r, radial_margin(system, alpha, beta, hi, r))
        })
        .collect();
    let unique_stable = match find_equilibria(system, 32, 1e-10) {
        Ok(eq) => eq.len() == 1 && eq[0].is_stable(),
        Err(_) => false,
    };
    AssumptionReport {
        lambda_hat: lo,
        big_lambda_hat: hi,
        satisfied_on_box: AssumptionFlags {
            bounded_on_box: bounded,
            uniform_ellipticity: lo > 0.0 && lo <= hi,
            radial_drift: radial_margin.last().is_some_and(|&(_, m)| m < 0.0),
            unique_stable_equilibrium: unique_stable,
        },
        radial_margin,
        scope: "sampled on the domain box only".to_string(),
    }
}
