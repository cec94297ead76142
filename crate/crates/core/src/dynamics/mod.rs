//! Diffusion systems `dX = b(X) dt + eps * sigma(X) dB`.
//!
//! A [`SystemSpec`] is built from a serializable [`SystemDescriptor`]: either one of the
//! built-in named systems or component-wise expression strings in `x1..xd`.

mod assumptions;
mod builtin;
mod descriptor;
mod equilibria;
pub mod expr;
mod generator;

use std::borrow::Cow;

use nalgebra::DMatrix;
use thiserror::Error;

pub use assumptions::{check_assumptions, radial_margin, AssumptionFlags, AssumptionReport};
pub use builtin::{Builtin, Monomial};
pub use descriptor::{builtin_names, BuiltinParams, CustomSystem, Entry, NamedSystem, SigmaDescriptor, SystemDescriptor};
pub use equilibria::{classify, find_equilibria, Equilibrium, EquilibriumKind};
pub use expr::{Expr, ParseError};
pub use generator::{apply_generator, ScalarField, TestFunction};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("drift component {component} (of {dim}) failed to parse: {source}")]
    DriftParse {
        component: usize,
        dim: usize,
        source: ParseError,
    },
    #[error("sigma entry ({row}, {col}) failed to parse: {source}")]
    SigmaParse {
        row: usize,
        col: usize,
        source: ParseError,
    },
    #[error("drift component {component} is not finite at {x:?}")]
    NonFiniteDrift { component: usize, x: Vec<f64> },
    #[error("sigma entry ({row}, {col}) is not finite at {x:?}")]
    NonFiniteSigma { row: usize, col: usize, x: Vec<f64> },
    #[error("diffusion matrix a = sigma sigma^T is not positive definite at {x:?}")]
    DegenerateDiffusion { x: Vec<f64> },
    #[error("point has dimension {got}, system has dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("inconsistent system: {0}")]
    Inconsistent(String),
    #[error("unknown built-in system '{0}'")]
    UnknownBuiltin(String),
    #[error("no equilibria found in the domain box ({starts} starts, tol {tol:e})")]
    NoEquilibria { starts: usize, tol: f64 },
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    bounds: Vec<(f64, f64)>,
}

impl DomainBox {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<DomainBox, DynamicsError> {
        if bounds.is_empty() {
            return Err(DynamicsError::Inconsistent("empty domain box".into()));
        }
        for (k, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(DynamicsError::Inconsistent(format!(
                    "box axis {k} has invalid bounds [{lo}, {hi}]"
                )));
            }
        }
        Ok(DomainBox { bounds })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn lower(&self, k: usize) -> f64 {
        self.bounds[k].0
    }

    pub fn upper(&self, k: usize) -> f64 {
        self.bounds[k].1
    }

    pub fn width(&self, k: usize) -> f64 {
        self.bounds[k].1 - self.bounds[k].0
    }

    pub fn diameter(&self) -> f64 {
        (0..self.dim()).map(|k| self.width(k).powi(2)).sum::<f64>().sqrt()
    }

    pub fn center(&self) -> Vec<f64> {
        self.bounds.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect()
    }

    /// Radius of the largest ball around the center that fits in the box.
    pub fn inradius(&self) -> f64 {
        (0..self.dim()).map(|k| 0.5 * self.width(k)).fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.bounds)
            .all(|(&v, &(lo, hi))| v >= lo && v <= hi)
    }

    /// Maps a point of the unit cube into the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.bounds)
            .map(|(&t, &(lo, hi))| lo + t * (hi - lo))
            .collect()
    }
}

/// `k`-th point (1-based) of the Halton sequence in `dim` dimensions.
pub fn halton(k: usize, dim: usize) -> Vec<f64> {
    const PRIMES: [usize; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    (0..dim)
        .map(|j| {
            let base = PRIMES[j % PRIMES.len()];
            let mut f = 1.0;
            let mut r = 0.0;
            let mut i = k;
            while i > 0 {
                f /= base as f64;
                r += f * (i % base) as f64;
                i /= base;
            }
            r
        })
        .collect()
}

/// Central-difference step `eps^(1/3) * max(1, |x|)`.
pub(crate) fn fd_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * x.abs().max(1.0)
}

#[derive(Debug, Clone)]
enum Drift {
    Builtin(Builtin),
    Expr(Vec<Expr>),
}

#[derive(Debug, Clone)]
enum Diffusion {
    Identity,
    Constant {
        sigma: DMatrix<f64>,
        a: DMatrix<f64>,
        a_inv: DMatrix<f64>,
    },
    /// Row-major `d x m` entries.
    Field { m: usize, entries: Vec<Expr> },
}

/// `a^{-1}(x)` in a form that avoids allocation for constant diffusions.
#[derive(Debug, Clone)]
pub enum InvMetric<'a> {
    Identity,
    Matrix(Cow<'a, DMatrix<f64>>),
}

impl InvMetric<'_> {
    /// `v^T a^{-1} v`.
    pub fn quad(&self, v: &[f64]) -> f64 {
        match self {
            InvMetric::Identity => v.iter().map(|t| t * t).sum(),
            InvMetric::Matrix(m) => {
                let d = v.len();
                let mut s = 0.0;
                for i in 0..d {
                    let mut row = 0.0;
                    for j in 0..d {
                        row += m[(i, j)] * v[j];
                    }
                    s += v[i] * row;
                }
                s
            }
        }
    }

    /// `out = a^{-1} v`.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        match self {
            InvMetric::Identity => out.copy_from_slice(v),
            InvMetric::Matrix(m) => {
                let d = v.len();
                for i in 0..d {
                    out[i] = (0..d).map(|j| m[(i, j)] * v[j]).sum();
                }
            }
        }
    }
}

/// A diffusion system on a bounded domain box.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    dim: usize,
    drift: Drift,
    diffusion: Diffusion,
    domain: DomainBox,
    descriptor: SystemDescriptor,
}

impl SystemSpec {
    pub fn from_descriptor(descriptor: &SystemDescriptor) -> Result<SystemSpec, DynamicsError> {
        descriptor::build(descriptor)
    }

    /// Built-in system by name with default parameters and box.
    pub fn builtin(name: &str) -> Result<SystemSpec, DynamicsError> {
        SystemSpec::from_descriptor(&SystemDescriptor::named(name))
    }

    /// Expression-defined system with identity diffusion.
    pub fn from_exprs(drift: &[&str], bounds: Vec<(f64, f64)>) -> Result<SystemSpec, DynamicsError> {
        SystemSpec::from_descriptor(&SystemDescriptor::Custom(CustomSystem {
            dimension: drift.len(),
            drift: drift.iter().map(|s| s.to_string()).collect(),
            sigma: SigmaDescriptor::identity(),
            domain_box: bounds.iter().map(|&(lo, hi)| [lo, hi]).collect(),
        }))
    }

    fn assemble(
        dim: usize,
        drift: Drift,
        diffusion: Diffusion,
        domain: DomainBox,
        descriptor: SystemDescriptor,
    ) -> Result<SystemSpec, DynamicsError> {
        if domain.dim() != dim {
            return Err(DynamicsError::Inconsistent(format!(
                "box has {} axes, system dimension is {dim}",
                domain.dim()
            )));
        }
        Ok(SystemSpec {
            dim,
            drift,
            diffusion,
            domain,
            descriptor,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of noise components `m` (columns of sigma).
    pub fn noise_dim(&self) -> usize {
        match &self.diffusion {
            Diffusion::Identity => self.dim,
            Diffusion::Constant { sigma, .. } => sigma.ncols(),
            Diffusion::Field { m, .. } => *m,
        }
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn descriptor(&self) -> &SystemDescriptor {
        &self.descriptor
    }

    pub fn builtin_kind(&self) -> Option<&Builtin> {
        match &self.drift {
            Drift::Builtin(b) => Some(b),
            Drift::Expr(_) => None,
        }
    }

    /// Potential `V` with `b = -grad V`, when the drift is a built-in gradient field.
    pub fn potential(&self, x: &[f64]) -> Option<f64> {
        match &self.drift {
            Drift::Builtin(b) => b.potential(x),
            Drift::Expr(_) => None,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), DynamicsError> {
        if x.len() != self.dim {
            return Err(DynamicsError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Unchecked drift evaluation into `out`.
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.drift {
            Drift::Builtin(b) => b.drift(x, out),
            Drift::Expr(exprs) => {
                for (o, e) in out.iter_mut().zip(exprs) {
                    *o = e.eval(x);
                }
            }
        }
    }

    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.drift_into(x, &mut out);
        out
    }

    /// `b(x)`, with non-finite components reported by index.
    pub fn eval_drift(&self, x: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        self.check_dim(x)?;
        let out = self.drift(x);
        if let Some(component) = out.iter().position(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFiniteDrift {
                component,
                x: x.to_vec(),
            });
        }
        Ok(out)
    }

    /// `Db(x)`: analytic for built-ins, central differences otherwise.
    pub fn drift_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        if let Drift::Builtin(b) = &self.drift {
            return b.jacobian(x);
        }
        let d = self.dim;
        let mut jac = DMatrix::zeros(d, d);
        let mut xp = x.to_vec();
        let mut fp = vec![0.0; d];
        let mut fm = vec![0.0; d];
        for k in 0..d {
            let h = fd_step(x[k]);
            xp[k] = x[k] + h;
            self.drift_into(&xp, &mut fp);
            xp[k] = x[k] - h;
            self.drift_into(&xp, &mut fm);
            xp[k] = x[k];
            for i in 0..d {
                jac[(i, k)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        jac
    }

    /// `sigma(x)`, a `d x m` matrix.
    pub fn sigma(&self, x: &[f64]) -> DMatrix<f64> {
        match &self.diffusion {
            Diffusion::Identity => DMatrix::identity(self.dim, self.dim),
            Diffusion::Constant { sigma, .. } => sigma.clone(),
            Diffusion::Field { m, entries } => {
                DMatrix::from_row_iterator(self.dim, *m, entries.iter().map(|e| e.eval(x)))
            }
        }
    }

    /// `out += scale * sigma(x) xi` without forming sigma for the constant cases.
    pub fn add_sigma_times(&self, x: &[f64], xi: &[f64], scale: f64, out: &mut [f64]) {
        match &self.diffusion {
            Diffusion::Identity => {
                for (o, z) in out.iter_mut().zip(xi) {
                    *o += scale * z;
                }
            }
            Diffusion::Constant { sigma, .. } => {
                for i in 0..self.dim {
                    let s: f64 = (0..sigma.ncols()).map(|j| sigma[(i, j)] * xi[j]).sum();
                    out[i] += scale * s;
                }
            }
            Diffusion::Field { m, entries } => {
                for i in 0..self.dim {
                    let s: f64 = (0..*m).map(|j| entries[i * m + j].eval(x) * xi[j]).sum();
                    out[i] += scale * s;
                }
            }
        }
    }

    pub fn is_diffusion_constant(&self) -> bool {
        !matches!(self.diffusion, Diffusion::Field { .. })
    }

    fn a_unchecked(&self, x: &[f64]) -> DMatrix<f64> {
        match &self.diffusion {
            Diffusion::Identity => DMatrix::identity(self.dim, self.dim),
            Diffusion::Constant { a, .. } => a.clone(),
            Diffusion::Field { .. } => {
                let s = self.sigma(x);
                &s * s.transpose()
            }
        }
    }

    /// `a(x) = sigma sigma^T`, checked for finiteness and positive definiteness.
    pub fn eval_a(&self, x: &[f64]) -> Result<DMatrix<f64>, DynamicsError> {
        self.check_dim(x)?;
        if let Diffusion::Field { m, entries } = &self.diffusion {
            for (idx, e) in entries.iter().enumerate() {
                if !e.eval(x).is_finite() {
                    return Err(DynamicsError::NonFiniteSigma {
                        row: idx / m,
                        col: idx % m,
                        x: x.to_vec(),
                    });
                }
            }
        }
        let a = self.a_unchecked(x);
        if a.clone().cholesky().is_none() {
            return Err(DynamicsError::DegenerateDiffusion { x: x.to_vec() });
        }
        Ok(a)
    }

    pub fn eval_a_inv(&self, x: &[f64]) -> Result<DMatrix<f64>, DynamicsError> {
        match &self.diffusion {
            Diffusion::Identity => {
                self.check_dim(x)?;
                Ok(DMatrix::identity(self.dim, self.dim))
            }
            Diffusion::Constant { a_inv, .. } => {
                self.check_dim(x)?;
                Ok(a_inv.clone())
            }
            Diffusion::Field { .. } => {
                let a = self.eval_a(x)?;
                let chol = a
                    .cholesky()
                    .ok_or_else(|| DynamicsError::DegenerateDiffusion { x: x.to_vec() })?;
                Ok(symmetrize(chol.inverse()))
            }
        }
    }

    /// `a^{-1}(x)` for hot loops. Degenerate points yield a NaN-filled matrix.
    pub fn inv_metric(&self, x: &[f64]) -> InvMetric<'_> {
        match &self.diffusion {
            Diffusion::Identity => InvMetric::Identity,
            Diffusion::Constant { a_inv, .. } => InvMetric::Matrix(Cow::Borrowed(a_inv)),
            Diffusion::Field { .. } => {
                let m = self
                    .eval_a_inv(x)
                    .unwrap_or_else(|_| DMatrix::from_element(self.dim, self.dim, f64::NAN));
                InvMetric::Matrix(Cow::Owned(m))
            }
        }
    }

    /// Whether `a(x)` has vanishing off-diagonal entries at every given point.
    pub fn is_diagonal_diffusion_at<'p, I>(&self, points: I) -> bool
    where
        I: IntoIterator<Item = &'p [f64]>,
    {
        match &self.diffusion {
            Diffusion::Identity => true,
            Diffusion::Constant { a, .. } => is_diagonal(a),
            Diffusion::Field { .. } => points.into_iter().all(|x| is_diagonal(&self.a_unchecked(x))),
        }
    }

    /// Deterministic sample of box points (Halton).
    pub fn sample_points(&self, n: usize) -> Vec<Vec<f64>> {
        (1..=n)
            .map(|k| self.domain.from_unit(&halton(k, self.dim)))
            .collect()
    }

    /// Largest spectral norm of `Db` over a Halton sample of the box and its corners.
    pub fn lipschitz_estimate(&self) -> f64 {
        let mut pts = self.sample_points(256);
        for mask in 0..(1usize << self.dim) {
            pts.push(
                (0..self.dim)
                    .map(|k| {
                        if mask & (1 << k) != 0 {
                            self.domain.upper(k)
                        } else {
                            self.domain.lower(k)
                        }
                    })
                    .collect(),
            );
        }
        pts.iter()
            .map(|x| {
                let j = self.drift_jacobian(x);
                j.svd(false, false).singular_values.max()
            })
            .fold(0.0, f64::max)
    }
}

fn is_diagonal(a: &DMatrix<f64>) -> bool {
    let scale = a.amax().max(1e-300);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            if i != j && a[(i, j)].abs() > 1e-12 * scale {
                return false;
            }
        }
    }
    true
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}
