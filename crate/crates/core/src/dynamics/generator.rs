use nalgebra::DMatrix;

use super::{fd_step, Expr, SystemSpec};

/// A twice differentiable scalar function on the state space.
///
/// Gradients and Hessians default to central differences.
pub trait ScalarField {
    fn value(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut xp = x.to_vec();
        (0..x.len())
            .map(|k| {
                let h = fd_step(x[k]);
                xp[k] = x[k] + h;
                let fp = self.value(&xp);
                xp[k] = x[k] - h;
                let fm = self.value(&xp);
                xp[k] = x[k];
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        // second differences of values: step eps^(1/4) balances truncation and rounding
        let d = x.len();
        let step = |v: f64| f64::EPSILON.powf(0.25) * v.abs().max(1.0);
        let f0 = self.value(x);
        let mut hess = DMatrix::zeros(d, d);
        let mut y = x.to_vec();
        for i in 0..d {
            let hi = step(x[i]);
            y[i] = x[i] + hi;
            let fp = self.value(&y);
            y[i] = x[i] - hi;
            let fm = self.value(&y);
            y[i] = x[i];
            hess[(i, i)] = (fp - 2.0 * f0 + fm) / (hi * hi);
            for j in 0..i {
                let hj = step(x[j]);
                let mut corner = |si: f64, sj: f64| {
                    y[i] = x[i] + si * hi;
                    y[j] = x[j] + sj * hj;
                    let v = self.value(&y);
                    y[i] = x[i];
                    y[j] = x[j];
                    v
                };
                let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                    / (4.0 * hi * hj);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        hess
    }
}

/// Test functions with closed-form derivatives, plus expression-defined ones.
#[derive(Debug, Clone, PartialEq)]
pub enum TestFunction {
    /// `|x|^2`.
    SquaredNorm,
    /// `exp(-|x|^2)`.
    Gaussian,
    Constant(f64),
    Expr(Expr),
}

impl ScalarField for TestFunction {
    fn value(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|t| t * t).sum();
        match self {
            TestFunction::SquaredNorm => r2,
            TestFunction::Gaussian => (-r2).exp(),
            TestFunction::Constant(c) => *c,
            TestFunction::Expr(e) => e.eval(x),
        }
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            TestFunction::SquaredNorm => x.iter().map(|t| 2.0 * t).collect(),
            TestFunction::Gaussian => {
                let g = self.value(x);
                x.iter().map(|t| -2.0 * t * g).collect()
            }
            TestFunction::Constant(_) => vec![0.0; x.len()],
            TestFunction::Expr(_) => {
                let mut xp = x.to_vec();
                (0..x.len())
                    .map(|k| {
                        let h = fd_step(x[k]);
                        xp[k] = x[k] + h;
                        let fp = self.value(&xp);
                        xp[k] = x[k] - h;
                        let fm = self.value(&xp);
                        xp[k] = x[k];
                        (fp - fm) / (2.0 * h)
                    })
                    .collect()
            }
        }
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = x.len();
        match self {
            TestFunction::SquaredNorm => DMatrix::identity(d, d) * 2.0,
            TestFunction::Gaussian => {
                let g = self.value(x);
                DMatrix::from_fn(d, d, |i, j| {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    g * (4.0 * x[i] * x[j] - 2.0 * delta)
                })
            }
            TestFunction::Constant(_) => DMatrix::zeros(d, d),
            TestFunction::Expr(e) => FnField(|y: &[f64]| e.eval(y)).hessian(x),
        }
    }
}

struct FnField<F>(F);

impl<F: Fn(&[f64]) -> f64> ScalarField for FnField<F> {
    fn value(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }
}

/// `L f(x) = b(x) . grad f(x) + (eps^2 / 2) tr(a(x) Hess f(x))`.
pub fn apply_generator(system: &SystemSpec, f: &dyn ScalarField, x: &[f64], eps: f64) -> f64 {
    let b = system.drift(x);
    let g = f.gradient(x);
    let transport: f64 = b.iter().zip(&g).map(|(p, q)| p * q).sum();
    if eps == 0.0 {
        return transport;
    }
    let a = system.sigma(x);
    let a = &a * a.transpose();
    let h = f.hessian(x);
    let trace: f64 = (0..x.len())
        .flat_map(|i| (0..x.len()).map(move |j| (i, j)))
        .map(|(i, j)| a[(i, j)] * h[(j, i)])
        .sum();
    transport + 0.5 * eps * eps * trace
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squared_norm_on_ou() {
        let s = SystemSpec::builtin("ou1d").unwrap();
        let v = apply_generator(&s, &TestFunction::SquaredNorm, &[1.0], 0.1);
        assert!((v - (-1.99)).abs() < 1e-12);
    }

    #[test]
    fn constant_is_annihilated() {
        let s = SystemSpec::builtin("gradient2d").unwrap();
        assert_eq!(apply_generator(&s, &TestFunction::Constant(3.0), &[0.3, 0.2], 0.5), 0.0);
    }

    #[test]
    fn zero_noise_is_directional_derivative() {
        let s = SystemSpec::builtin("linear2d").unwrap();
        let f = TestFunction::Expr(Expr::parse("sin(x1) * exp(x2) + x1^2 * x2").unwrap());
        for x in s.sample_points(10) {
            let lf = apply_generator(&s, &f, &x, 0.0);
            let b = s.drift(&x);
            let g = [x[0].cos() * x[1].exp() + 2.0 * x[0] * x[1], x[0].sin() * x[1].exp() + x[0] * x[0]];
            let exact = b[0] * g[0] + b[1] * g[1];
            assert!((lf - exact).abs() <= 1e-6 * exact.abs().max(1.0));
        }
    }

    #[test]
    fn fd_hessian_matches_closed_form() {
        let x = [0.4, -0.3];
        let closed = TestFunction::Gaussian.hessian(&x);
        let fd = TestFunction::Expr(Expr::parse("exp(-(x1^2 + x2^2))").unwrap()).hessian(&x);
        assert!((closed - fd).amax() < 1e-6);
    }

    #[test]
    fn lyapunov_function_decreases_far_out() {
        // L|x|^2 = eps^2 tr a + 2 b.x < 0 wherever b.x < -d eps^2 Lambda / 2
        let s = SystemSpec::builtin("doublewell1d").unwrap();
        let eps = 0.3;
        for x in [1.5, -1.8, 2.2] {
            let bx = s.drift(&[x])[0] * x;
            assert!(bx < -eps * eps / 2.0);
            assert!(apply_generator(&s, &TestFunction::SquaredNorm, &[x], eps) < 0.0);
        }
    }
}
