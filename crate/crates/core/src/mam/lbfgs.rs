//! Preconditioned L-BFGS with Armijo backtracking.

use std::collections::VecDeque;

pub(crate) struct Outcome {
    pub x: Vec<f64>,
    /// Max-norm of the gradient at `x`.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted step, starting with the initial value.
    pub trace: Vec<f64>,
}

pub(crate) struct Settings {
    pub tol: f64,
    pub max_iter: usize,
    pub memory: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes `fg(x, grad) -> f`. `precond(v)` applies an SPD approximation of the inverse Hessian
/// in place; it seeds every two-loop recursion.
pub(crate) fn minimize<F, P>(mut fg: F, precond: P, x0: Vec<f64>, settings: &Settings) -> Outcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
    P: Fn(&mut [f64]),
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut f = fg(&x, &mut g);
    let mut trace = vec![f];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut iterations = 0;

    while iterations < settings.max_iter && n > 0 {
        if max_norm(&g) <= settings.tol || !f.is_finite() {
            break;
        }
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &d);
            for i in 0..n {
                d[i] -= a * y[i];
            }
            alphas.push(a);
        }
        precond(&mut d);
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let beta = rho * dot(y, &d);
            for i in 0..n {
                d[i] += (a - beta) * s[i];
            }
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            pairs.clear();
            d = g.iter().map(|v| -v).collect();
            precond(&mut d);
            slope = dot(&g, &d);
            if !(slope < 0.0) {
                break;
            }
        }

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            let f_new = fg(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= f + 1e-4 * step * slope {
                accepted = true;
                let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
                let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
                    if pairs.len() == settings.memory {
                        pairs.pop_front();
                    }
                    pairs.push_back((s, y, 1.0 / sy));
                }
                std::mem::swap(&mut x, &mut x_new);
                std::mem::swap(&mut g, &mut g_new);
                f = f_new;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            if pairs.is_empty() {
                break;
            }
            pairs.clear();
            continue;
        }
        trace.push(f);
    }
    let grad_norm = max_norm(&g);
    Outcome {
        x,
        grad_norm,
        iterations,
        converged: grad_norm <= settings.tol,
        trace,
    }
}

/// Constant-coefficient symmetric tridiagonal solve, applied independently to each coordinate of
/// a node-major vector.
pub(crate) struct TridiagonalPreconditioner {
    n: usize,
    stride: usize,
    /// Modified super-diagonal and pivots from the Thomas forward sweep.
    c_prime: Vec<f64>,
    pivots: Vec<f64>,
    off: f64,
}

impl TridiagonalPreconditioner {
    /// `diag` on the diagonal, `off` on both off-diagonals; `n` unknowns per coordinate, `stride`
    /// coordinates interleaved node-major.
    pub fn new(n: usize, stride: usize, diag: f64, off: f64) -> TridiagonalPreconditioner {
        let mut c_prime = vec![0.0; n];
        let mut pivots = vec![0.0; n];
        for i in 0..n {
            let prev = if i == 0 { 0.0 } else { c_prime[i - 1] };
            pivots[i] = diag - off * prev;
            c_prime[i] = off / pivots[i];
        }
        TridiagonalPreconditioner {
            n,
            stride,
            c_prime,
            pivots,
            off,
        }
    }

    pub fn solve(&self, v: &mut [f64]) {
        let (n, d) = (self.n, self.stride);
        for c in 0..d {
            let at = |i: usize| i * d + c;
            v[at(0)] /= self.pivots[0];
            for i in 1..n {
                v[at(i)] = (v[at(i)] - self.off * v[at(i - 1)]) / self.pivots[i];
            }
            for i in (0..n.saturating_sub(1)).rev() {
                v[at(i)] -= self.c_prime[i] * v[at(i + 1)];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let settings = Settings {
            tol: 1e-10,
            max_iter: 200,
            memory: 5,
        };
        let scales = [1.0, 10.0, 100.0, 0.1];
        let out = minimize(
            |x, g| {
                let mut f = 0.0;
                for i in 0..4 {
                    g[i] = scales[i] * (x[i] - 1.0);
                    f += 0.5 * scales[i] * (x[i] - 1.0).powi(2);
                }
                f
            },
            |_| {},
            vec![0.0; 4],
            &settings,
        );
        assert!(out.converged);
        assert!(out.x.iter().all(|v| (v - 1.0).abs() < 1e-8));
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rosenbrock() {
        let settings = Settings {
            tol: 1e-8,
            max_iter: 2000,
            memory: 8,
        };
        let out = minimize(
            |x, g| {
                let (a, b) = (x[0], x[1]);
                g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
                g[1] = 200.0 * (b - a * a);
                (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
            },
            |_| {},
            vec![-1.2, 1.0],
            &settings,
        );
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn thomas_solve_inverts_tridiagonal() {
        let (n, d) = (7, 2);
        let p = TridiagonalPreconditioner::new(n, d, 3.0, -1.0);
        let z: Vec<f64> = (0..n * d).map(|i| (i as f64).sin()).collect();
        let mut v = vec![0.0; n * d];
        for c in 0..d {
            for i in 0..n {
                let mut s = 3.0 * z[i * d + c];
                if i > 0 {
                    s -= z[(i - 1) * d + c];
                }
                if i + 1 < n {
                    s -= z[(i + 1) * d + c];
                }
                v[i * d + c] = s;
            }
        }
        p.solve(&mut v);
        for (a, b) in v.iter().zip(&z) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
