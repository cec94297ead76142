use nalgebra::DMatrix;

/// Monomial `coef * x1^p * x2^q` of a planar polynomial potential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Monomial {
    pub coef: f64,
    pub p: i32,
    pub q: i32,
}

/// Built-in drift fields with analytic Jacobians.
#[derive(Debug, Clone, PartialEq)]
pub enum Builtin {
    /// `b(x) = -x`.
    Ou1d,
    /// `b(x) = x - x^3 + tilt`; `tilt = 0` is the symmetric double well.
    DoubleWell1d { tilt: f64 },
    /// `b(x) = A x`.
    Linear2d { a: [[f64; 2]; 2] },
    /// `b = -grad V` with `V` a sum of monomials.
    Gradient2d { terms: Vec<Monomial> },
}

pub(crate) const NAMES: [&str; 5] = ["ou1d", "doublewell1d", "asymdoublewell1d", "linear2d", "gradient2d"];

pub(crate) const DEFAULT_TILT: f64 = 0.1;
pub(crate) const DEFAULT_LINEAR: [[f64; 2]; 2] = [[-1.0, 2.0], [-2.0, -1.0]];

/// `V = x1^4/4 - x1^2/2 + x2^2/2`: wells at `(+-1, 0)`, saddle at the origin.
pub(crate) fn default_gradient_terms() -> Vec<Monomial> {
    vec![
        Monomial { coef: 0.25, p: 4, q: 0 },
        Monomial { coef: -0.5, p: 2, q: 0 },
        Monomial { coef: 0.5, p: 0, q: 2 },
    ]
}

fn pw(x: f64, n: i32) -> f64 {
    if n <= 0 {
        1.0
    } else {
        x.powi(n)
    }
}

impl Builtin {
    pub fn dim(&self) -> usize {
        match self {
            Builtin::Ou1d | Builtin::DoubleWell1d { .. } => 1,
            Builtin::Linear2d { .. } | Builtin::Gradient2d { .. } => 2,
        }
    }

    pub(crate) fn drift(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Builtin::Ou1d => out[0] = -x[0],
            Builtin::DoubleWell1d { tilt } => out[0] = x[0] - x[0] * x[0] * x[0] + tilt,
            Builtin::Linear2d { a } => {
                out[0] = a[0][0] * x[0] + a[0][1] * x[1];
                out[1] = a[1][0] * x[0] + a[1][1] * x[1];
            }
            Builtin::Gradient2d { terms } => {
                let (u, v) = (x[0], x[1]);
                let mut g = [0.0; 2];
                for t in terms {
                    if t.p > 0 {
                        g[0] += t.coef * t.p as f64 * pw(u, t.p - 1) * pw(v, t.q);
                    }
                    if t.q > 0 {
                        g[1] += t.coef * t.q as f64 * pw(u, t.p) * pw(v, t.q - 1);
                    }
                }
                out[0] = -g[0];
                out[1] = -g[1];
            }
        }
    }

    pub(crate) fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        match self {
            Builtin::Ou1d => DMatrix::from_element(1, 1, -1.0),
            Builtin::DoubleWell1d { .. } => DMatrix::from_element(1, 1, 1.0 - 3.0 * x[0] * x[0]),
            Builtin::Linear2d { a } => DMatrix::from_row_slice(2, 2, &[a[0][0], a[0][1], a[1][0], a[1][1]]),
            Builtin::Gradient2d { terms } => {
                let (u, v) = (x[0], x[1]);
                let mut h = [[0.0; 2]; 2];
                for t in terms {
                    let (p, q) = (t.p as f64, t.q as f64);
                    if t.p > 1 {
                        h[0][0] += t.coef * p * (p - 1.0) * pw(u, t.p - 2) * pw(v, t.q);
                    }
                    if t.q > 1 {
                        h[1][1] += t.coef * q * (q - 1.0) * pw(u, t.p) * pw(v, t.q - 2);
                    }
                    if t.p > 0 && t.q > 0 {
                        h[0][1] += t.coef * p * q * pw(u, t.p - 1) * pw(v, t.q - 1);
                    }
                }
                DMatrix::from_row_slice(2, 2, &[-h[0][0], -h[0][1], -h[0][1], -h[1][1]])
            }
        }
    }

    /// Potential `V` with `b = -grad V`, when one exists in closed form.
    pub fn potential(&self, x: &[f64]) -> Option<f64> {
        match self {
            Builtin::Ou1d => Some(0.5 * x[0] * x[0]),
            Builtin::DoubleWell1d { tilt } => {
                let u = x[0];
                Some(0.25 * u.powi(4) - 0.5 * u * u - tilt * u)
            }
            Builtin::Linear2d { a } => {
                // gradient field only for symmetric A
                if (a[0][1] - a[1][0]).abs() > 0.0 {
                    return None;
                }
                Some(-0.5 * (a[0][0] * x[0] * x[0] + 2.0 * a[0][1] * x[0] * x[1] + a[1][1] * x[1] * x[1]))
            }
            Builtin::Gradient2d { terms } => Some(
                terms
                    .iter()
                    .map(|t| t.coef * pw(x[0], t.p) * pw(x[1], t.q))
                    .sum(),
            ),
        }
    }
}
