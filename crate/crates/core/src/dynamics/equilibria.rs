use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{halton, DynamicsError, SystemSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EquilibriumKind {
    Stable,
    Unstable,
    Saddle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub location: Vec<f64>,
    /// Real parts of the Jacobian eigenvalues, ascending.
    pub jacobian_eigen_real_parts: Vec<f64>,
    pub kind: EquilibriumKind,
    /// `|b(location)|`.
    pub residual: f64,
}

impl Equilibrium {
    pub fn is_stable(&self) -> bool {
        self.kind == EquilibriumKind::Stable
    }
}

/// Stable iff every real part is negative; saddle when both signs occur.
pub fn classify(real_parts: &[f64]) -> EquilibriumKind {
    let neg = real_parts.iter().filter(|&&r| r < 0.0).count();
    let pos = real_parts.iter().filter(|&&r| r > 0.0).count();
    if neg == real_parts.len() {
        EquilibriumKind::Stable
    } else if neg > 0 && pos > 0 {
        EquilibriumKind::Saddle
    } else {
        EquilibriumKind::Unstable
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|t| t * t).sum::<f64>().sqrt()
}

fn eigen_real_parts(j: &DMatrix<f64>) -> Vec<f64> {
    let mut re: Vec<f64> = j.complex_eigenvalues().iter().map(|c| c.re).collect();
    re.sort_by(f64::total_cmp);
    re
}

/// Damped Newton iteration on `b(x) = 0`. Returns the final iterate and `|b|`.
fn newton(system: &SystemSpec, start: Vec<f64>, tol: f64) -> Option<(Vec<f64>, f64)> {
    let domain = system.domain();
    let diam = domain.diameter();
    let mut x = start;
    let mut fx = system.drift(&x);
    let mut r = norm(&fx);
    for _ in 0..100 {
        if r <= tol {
            return Some((x, r));
        }
        let jac = system.drift_jacobian(&x);
        let rhs = -DVector::from_column_slice(&fx);
        let step = jac.lu().solve(&rhs)?;
        if step.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let ft = system.drift(&trial);
            let rt = norm(&ft);
            if rt.is_finite() && rt < r {
                x = trial;
                fx = ft;
                r = rt;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        // wandered far outside the box
        let far = x.iter().enumerate().any(|(k, &v)| {
            v < domain.lower(k) - diam || v > domain.upper(k) + diam
        });
        if far {
            return None;
        }
    }
    (r <= tol).then_some((x, r))
}

/// Roots of `b` inside the domain box, deduplicated and classified.
///
/// Starts are the first `n_starts` Halton points of the box. Roots closer than
/// `1e-6 * diameter` are merged.
pub fn find_equilibria(
    system: &SystemSpec,
    n_starts: usize,
    tol: f64,
) -> Result<Vec<Equilibrium>, DynamicsError> {
    let domain = system.domain();
    let merge = 1e-6 * domain.diameter();
    let mut roots: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut starts: Vec<Vec<f64>> = vec![domain.center()];
    starts.extend((1..n_starts).map(|k| domain.from_unit(&halton(k, system.dim()))));
    for start in starts {
        let Some((x, r)) = newton(system, start, tol) else {
            continue;
        };
        if !domain.contains(&x) {
            continue;
        }
        let dup = roots.iter_mut().find(|(y, _)| {
            let d: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            d <= merge
        });
        match dup {
            Some(existing) if r < existing.1 => *existing = (x, r),
            Some(_) => {}
            None => roots.push((x, r)),
        }
    }
    if roots.is_empty() {
        return Err(DynamicsError::NoEquilibria { starts: n_starts, tol });
    }
    roots.sort_by(|a, b| {
        a.0.iter()
            .zip(&b.0)
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(roots
        .into_iter()
        .map(|(location, residual)| {
            let re = eigen_real_parts(&system.drift_jacobian(&location));
            Equilibrium {
                kind: classify(&re),
                jacobian_eigen_real_parts: re,
                location,
                residual,
            }
        })
        .collect())
}
