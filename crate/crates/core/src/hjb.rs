//! Fast-sweeping solver for the stationary equation `1/2 grad W^T a grad W + b^T grad W = 0`,
//! `W = 0` at the sources, on one- and two-dimensional grids with diagonal `a`.
//!
//! With `m_k = -b_k / a_kk` the equation reads `sum_k (a_kk / 2)(p_k - m_k)^2 = sum_k b_k^2 / (2 a_kk)`.
//! The Godunov flux of each convex term reduces to `(a_kk / 2h^2) (W - c_k)_+^2` with
//! `c_k = min(W_left + h m_k, W_right - h m_k)`, so every node update is a sorted-threshold
//! quadratic with a closed-form causal root.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::format_float;
use crate::dynamics::{DomainBox, SystemSpec};

#[derive(Debug, Error)]
pub enum HjbError {
    #[error("grid solver supports dimension 1 or 2, got {0}; use the path solver instead")]
    UnsupportedDimension(usize),
    #[error("diffusion matrix is not diagonal on the grid; the upwind scheme needs diagonal a, use the path solver instead")]
    NonDiagonalDiffusion,
    #[error("grid needs at least one source")]
    NoSources,
    #[error("source {0:?} lies outside the domain box")]
    SourceOutside(Vec<f64>),
    #[error("grid needs at least 3 nodes per axis and positive spacing")]
    BadSpacing,
    #[error("diffusion degenerate at {0:?}")]
    Degenerate(Vec<f64>),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Uniform grid over the domain box; `x1` varies fastest in flat indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub counts: Vec<usize>,
    pub lower: Vec<f64>,
    pub spacing: Vec<f64>,
    /// Flat indices of the sources, sorted and deduplicated.
    pub sources: Vec<usize>,
}

impl Grid {
    /// Spacing close to `h` that divides each box side exactly; sources snap to the nearest node.
    pub fn new(domain: &DomainBox, h: f64, sources: &[Vec<f64>]) -> Result<Grid, HjbError> {
        if !(h.is_finite() && h > 0.0) {
            return Err(HjbError::BadSpacing);
        }
        let counts = (0..domain.dim())
            .map(|k| (domain.width(k) / h).round() as usize + 1)
            .collect();
        Grid::with_counts(domain, counts, sources)
    }

    pub fn with_counts(domain: &DomainBox, counts: Vec<usize>, sources: &[Vec<f64>]) -> Result<Grid, HjbError> {
        let d = domain.dim();
        if d == 0 || d > 2 {
            return Err(HjbError::UnsupportedDimension(d));
        }
        if counts.len() != d || counts.iter().any(|&n| n < 3) {
            return Err(HjbError::BadSpacing);
        }
        if sources.is_empty() {
            return Err(HjbError::NoSources);
        }
        let lower: Vec<f64> = (0..d).map(|k| domain.lower(k)).collect();
        let spacing: Vec<f64> = (0..d).map(|k| domain.width(k) / (counts[k] - 1) as f64).collect();
        let mut grid = Grid {
            counts,
            lower,
            spacing,
            sources: Vec::new(),
        };
        let mut idx = Vec::with_capacity(sources.len());
        for s in sources {
            if s.len() != d || !domain.contains(s) {
                return Err(HjbError::SourceOutside(s.clone()));
            }
            let multi: Vec<usize> = (0..d)
                .map(|k| (((s[k] - grid.lower[k]) / grid.spacing[k]).round() as usize).min(grid.counts[k] - 1))
                .collect();
            idx.push(grid.flat(&multi));
        }
        idx.sort_unstable();
        idx.dedup();
        grid.sources = idx;
        Ok(grid)
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flat(&self, multi: &[usize]) -> usize {
        match multi {
            [i] => *i,
            [i, j] => i + self.counts[0] * j,
            _ => unreachable!("grid dimension is 1 or 2"),
        }
    }

    pub fn multi(&self, flat: usize) -> Vec<usize> {
        match self.dim() {
            1 => vec![flat],
            _ => vec![flat % self.counts[0], flat / self.counts[0]],
        }
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.multi(flat)
            .iter()
            .enumerate()
            .map(|(k, &i)| self.lower[k] + i as f64 * self.spacing[k])
            .collect()
    }

    fn on_boundary(&self, multi: &[usize]) -> bool {
        multi.iter().zip(&self.counts).any(|(&i, &n)| i == 0 || i + 1 == n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HjbSolution {
    pub grid: Grid,
    /// Node values; `+inf` where no causal information arrived.
    pub w: Vec<f64>,
    pub sweeps: usize,
    pub max_delta: f64,
    pub converged: bool,
    /// Max `|H(x, grad W)|` over interior nodes.
    pub residual: f64,
    /// Max `|a grad W|`, the size of the optimal control on the grid.
    pub control_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HjbSummary {
    pub counts: Vec<usize>,
    pub spacing: Vec<f64>,
    pub sources: Vec<Vec<f64>>,
    pub sweeps: usize,
    pub max_delta: f64,
    pub converged: bool,
    pub residual: f64,
    pub control_radius: f64,
    pub unresolved_nodes: usize,
}

impl HjbSolution {
    pub fn value(&self, flat: usize) -> Option<f64> {
        Some(self.w[flat]).filter(|v| v.is_finite())
    }

    /// Multilinear interpolation; `None` outside the grid or next to unresolved nodes.
    pub fn interpolate(&self, x: &[f64]) -> Option<f64> {
        let g = &self.grid;
        if x.len() != g.dim() {
            return None;
        }
        let mut base = Vec::with_capacity(g.dim());
        let mut frac = Vec::with_capacity(g.dim());
        for k in 0..g.dim() {
            let s = (x[k] - g.lower[k]) / g.spacing[k];
            let top = (g.counts[k] - 1) as f64;
            if !(s >= -1e-9 && s <= top + 1e-9) {
                return None;
            }
            let s = s.clamp(0.0, top);
            let i = (s.floor() as usize).min(g.counts[k] - 2);
            base.push(i);
            frac.push(s - i as f64);
        }
        let mut total = 0.0;
        for corner in 0..(1usize << g.dim()) {
            let mut weight = 1.0;
            let multi: Vec<usize> = (0..g.dim())
                .map(|k| {
                    let up = corner >> k & 1 == 1;
                    weight *= if up { frac[k] } else { 1.0 - frac[k] };
                    base[k] + usize::from(up)
                })
                .collect();
            if weight == 0.0 {
                continue;
            }
            total += weight * self.value(g.flat(&multi))?;
        }
        Some(total)
    }

    pub fn summary(&self) -> HjbSummary {
        HjbSummary {
            counts: self.grid.counts.clone(),
            spacing: self.grid.spacing.clone(),
            sources: self.grid.sources.iter().map(|&s| self.grid.point(s)).collect(),
            sweeps: self.sweeps,
            max_delta: self.max_delta,
            converged: self.converged,
            residual: self.residual,
            control_radius: self.control_radius,
            unresolved_nodes: self.w.iter().filter(|v| !v.is_finite()).count(),
        }
    }

    /// Rows `x1[,x2],W`; unresolved nodes have an empty `W`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), HjbError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.grid.dim()).map(|k| format!("x{k}")).collect();
        header.push("W".into());
        out.write_record(&header)?;
        for idx in 0..self.grid.len() {
            let mut rec: Vec<String> = self.grid.point(idx).into_iter().map(format_float).collect();
            rec.push(self.value(idx).map(format_float).unwrap_or_default());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `H(x, p) = 1/2 p^T a(x) p + b(x)^T p`.
pub fn derive_hamiltonian(system: &SystemSpec, x: &[f64], p: &[f64]) -> f64 {
    let b = system.drift(x);
    let sigma = system.sigma(x);
    let a = &sigma * sigma.transpose();
    let d = p.len();
    let mut quad = 0.0;
    for i in 0..d {
        for j in 0..d {
            quad += p[i] * a[(i, j)] * p[j];
        }
    }
    0.5 * quad + b.iter().zip(p).map(|(u, v)| u * v).sum::<f64>()
}

/// Per-node drift and diagonal of `a`.
struct NodeData {
    b: Vec<f64>,
    a: Vec<f64>,
}

fn node_data(system: &SystemSpec, grid: &Grid) -> Result<NodeData, HjbError> {
    let d = grid.dim();
    let mut b = Vec::with_capacity(grid.len() * d);
    let mut a = Vec::with_capacity(grid.len() * d);
    let constant = system.is_diffusion_constant();
    let a_const = if constant {
        let x = grid.point(0);
        Some(system.eval_a(&x).map_err(|_| HjbError::Degenerate(x))?)
    } else {
        None
    };
    for idx in 0..grid.len() {
        let x = grid.point(idx);
        b.extend(system.drift(&x));
        let m = match &a_const {
            Some(m) => m.clone(),
            None => system.eval_a(&x).map_err(|_| HjbError::Degenerate(x.clone()))?,
        };
        for i in 0..d {
            for j in 0..d {
                if i != j && m[(i, j)] != 0.0 {
                    return Err(HjbError::NonDiagonalDiffusion);
                }
            }
            a.push(m[(i, i)]);
        }
    }
    Ok(NodeData { b, a })
}

/// Causal root of `sum_k alpha_k (W - c_k)_+^2 = r`.
fn local_solve(c: &mut [(f64, f64)], r: f64) -> f64 {
    c.sort_by(|p, q| p.0.total_cmp(&q.0));
    let (mut sa, mut sac, mut sacc) = (0.0, 0.0, 0.0);
    let mut w = f64::INFINITY;
    for m in 0..c.len() {
        let (ck, ak) = c[m];
        if !ck.is_finite() {
            break;
        }
        sa += ak;
        sac += ak * ck;
        sacc += ak * ck * ck;
        let disc = sac * sac - sa * (sacc - r);
        if disc < 0.0 {
            break;
        }
        w = (sac + disc.sqrt()) / sa;
        if m + 1 == c.len() || w <= c[m + 1].0 {
            break;
        }
    }
    w
}

/// Gauss-Seidel sweeps over the `2^d` axis orderings until a sweep moves no node by more than `tol`.
pub fn sweep_solve(system: &SystemSpec, grid: &Grid, tol: f64, max_sweeps: usize) -> Result<HjbSolution, HjbError> {
    let d = grid.dim();
    if system.dim() != d || d == 0 || d > 2 {
        return Err(HjbError::UnsupportedDimension(system.dim()));
    }
    if grid.sources.is_empty() {
        return Err(HjbError::NoSources);
    }
    let data = node_data(system, grid)?;
    let n = grid.len();
    let mut w = vec![f64::INFINITY; n];
    let mut is_source = vec![false; n];
    for &s in &grid.sources {
        w[s] = 0.0;
        is_source[s] = true;
    }
    let stride = [1, grid.counts[0]];
    let mut cap_base = 0.0f64;
    let mut sweeps = 0;
    let mut max_delta = f64::INFINITY;
    let mut thresholds = Vec::with_capacity(d);

    while sweeps < max_sweeps {
        let order = sweeps % (1 << d);
        let mut delta = 0.0f64;
        let mut visit = |idx: usize, w: &mut Vec<f64>| {
            if is_source[idx] {
                return;
            }
            let multi = grid.multi(idx);
            thresholds.clear();
            let mut r = 0.0;
            for k in 0..d {
                let (bk, ak, h) = (data.b[idx * d + k], data.a[idx * d + k], grid.spacing[k]);
                let mk = -bk / ak;
                r += bk * bk / (2.0 * ak);
                let left = if multi[k] > 0 { w[idx - stride[k]] + h * mk } else { f64::INFINITY };
                let right = if multi[k] + 1 < grid.counts[k] {
                    w[idx + stride[k]] - h * mk
                } else {
                    f64::INFINITY
                };
                thresholds.push((left.min(right), ak / (2.0 * h * h)));
            }
            let cand = local_solve(&mut thresholds, r);
            if !(cand < w[idx]) {
                return;
            }
            // cap against runaway values from the outflow boundary
            if cap_base > 0.0 && cand > 10.0 * cap_base {
                return;
            }
            let change = if w[idx].is_finite() { w[idx] - cand } else { f64::INFINITY };
            delta = delta.max(change);
            w[idx] = cand;
            cap_base = cap_base.max(cand);
        };
        match d {
            1 => {
                if order == 0 {
                    (0..n).for_each(|i| visit(i, &mut w));
                } else {
                    (0..n).rev().for_each(|i| visit(i, &mut w));
                }
            }
            _ => {
                let (nx, ny) = (grid.counts[0], grid.counts[1]);
                let xs: Vec<usize> = if order & 1 == 0 { (0..nx).collect() } else { (0..nx).rev().collect() };
                let ys: Vec<usize> = if order & 2 == 0 { (0..ny).collect() } else { (0..ny).rev().collect() };
                for &j in &ys {
                    for &i in &xs {
                        visit(i + nx * j, &mut w);
                    }
                }
            }
        }
        sweeps += 1;
        max_delta = delta;
        if max_delta < tol {
            break;
        }
    }
    let mut sol = HjbSolution {
        grid: grid.clone(),
        w,
        sweeps,
        max_delta,
        converged: max_delta < tol,
        residual: 0.0,
        control_radius: 0.0,
    };
    let (res, radius) = residual_and_radius(system, &sol);
    sol.residual = res;
    sol.control_radius = radius;
    Ok(sol)
}

/// Drift-upwinded one-sided gradient at an interior node; `None` next to unresolved values.
fn upwind_gradient(sol: &HjbSolution, idx: usize, b: &[f64]) -> Option<Vec<f64>> {
    let g = &sol.grid;
    let stride = [1, g.counts[0]];
    let here = sol.value(idx)?;
    (0..g.dim())
        .map(|k| {
            let h = g.spacing[k];
            let fwd = || sol.value(idx + stride[k]).map(|v| (v - here) / h);
            let bwd = || sol.value(idx - stride[k]).map(|v| (here - v) / h);
            if b[k] < 0.0 {
                fwd()
            } else if b[k] > 0.0 {
                bwd()
            } else {
                Some((fwd()? + bwd()?) / 2.0)
            }
        })
        .collect()
}

fn residual_and_radius(system: &SystemSpec, sol: &HjbSolution) -> (f64, f64) {
    let g = &sol.grid;
    let mut res = 0.0f64;
    let mut radius = 0.0f64;
    for idx in 0..g.len() {
        if g.sources.binary_search(&idx).is_ok() || g.on_boundary(&g.multi(idx)) {
            continue;
        }
        let x = g.point(idx);
        let b = system.drift(&x);
        let Some(p) = upwind_gradient(sol, idx, &b) else {
            continue;
        };
        res = res.max(derive_hamiltonian(system, &x, &p).abs());
        let sigma = system.sigma(&x);
        let ap = &sigma * (sigma.transpose() * nalgebra::DVector::from_column_slice(&p));
        radius = radius.max(ap.norm());
    }
    (res, radius)
}

/// Max `|H(x, grad W)|` over interior non-source nodes, with one-sided differences taken on the
/// upstream side of the drift.
pub fn residual(system: &SystemSpec, solution: &HjbSolution) -> f64 {
    residual_and_radius(system, solution).0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ou_solution(h: f64) -> HjbSolution {
        let s = SystemSpec::from_descriptor(
            &serde_json::from_str(r#"{"name":"ou1d","box":[[-2,2]]}"#).unwrap(),
        )
        .unwrap();
        let grid = Grid::new(s.domain(), h, &[vec![0.0]]).unwrap();
        sweep_solve(&s, &grid, 1e-12, 100).unwrap()
    }

    #[test]
    fn hamiltonian_values() {
        let ou = SystemSpec::builtin("ou1d").unwrap();
        assert_eq!(derive_hamiltonian(&ou, &[0.7], &[0.0]), 0.0);
        assert_eq!(derive_hamiltonian(&ou, &[1.0], &[2.0]), 0.0);
        let free = SystemSpec::from_exprs(&["0", "0"], vec![(-1.0, 1.0); 2]).unwrap();
        assert_eq!(derive_hamiltonian(&free, &[0.3, 0.1], &[1.0, 1.0]), 1.0);
    }

    #[test]
    fn ou_is_exact_up_to_first_order() {
        let sol = ou_solution(0.005);
        assert!(sol.converged);
        let i = sol.grid.flat(&[600]);
        assert!((sol.grid.point(i)[0] - 1.0).abs() < 1e-12);
        // discrete solution x^2 + h|x|
        assert!((sol.w[i] - 1.005).abs() < 1e-9, "{}", sol.w[i]);
        assert_eq!(sol.w[sol.grid.sources[0]], 0.0);
        assert!(sol.w.iter().enumerate().all(|(k, v)| *v > 0.0 || sol.grid.sources.contains(&k)));
    }

    #[test]
    fn mesh_halving_and_residual() {
        let errs: Vec<f64> = [0.02, 0.01, 0.005]
            .iter()
            .map(|&h| (ou_solution(h).interpolate(&[1.0]).unwrap() - 1.0).abs())
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.5..=2.5).contains(&ratio), "{ratio}");
        }
        let res: Vec<f64> = [0.02, 0.01, 0.005].iter().map(|&h| ou_solution(h).residual).collect();
        assert!(res[1] < 0.6 * res[0] && res[2] < 0.6 * res[1], "{res:?}");
    }

    #[test]
    fn perturbation_raises_residual() {
        let s = SystemSpec::from_descriptor(&serde_json::from_str(r#"{"name":"ou1d","box":[[-2,2]]}"#).unwrap())
            .unwrap();
        let mut sol = ou_solution(0.01);
        let base = residual(&s, &sol);
        sol.w[250] += 0.1;
        assert!(residual(&s, &sol) > base);
    }

    #[test]
    fn double_well_barrier() {
        let s = SystemSpec::builtin("doublewell1d").unwrap();
        let grid = Grid::new(s.domain(), 0.005, &[vec![-1.0], vec![1.0]]).unwrap();
        let sol = sweep_solve(&s, &grid, 1e-12, 100).unwrap();
        assert!((sol.interpolate(&[0.0]).unwrap() - 0.5).abs() < 1e-2);
    }

    #[test]
    fn zero_drift_stays_zero() {
        let s = SystemSpec::from_exprs(&["0"], vec![(-1.0, 1.0)]).unwrap();
        let grid = Grid::new(s.domain(), 0.1, &[vec![0.0]]).unwrap();
        let sol = sweep_solve(&s, &grid, 1e-12, 10).unwrap();
        assert!(sol.w.iter().all(|v| *v == 0.0));
        assert_eq!(sol.residual, 0.0);
    }

    #[test]
    fn rotational_2d_matches_norm_squared() {
        let s = SystemSpec::builtin("linear2d").unwrap();
        let dom = DomainBox::new(vec![(-1.5, 1.5); 2]).unwrap();
        let grid = Grid::with_counts(&dom, vec![121, 121], &[vec![0.0, 0.0]]).unwrap();
        let sol = sweep_solve(&s, &grid, 1e-10, 400).unwrap();
        assert!(sol.converged);
        let v = sol.interpolate(&[1.0, 0.0]).unwrap();
        assert!((v - 1.0).abs() < 0.1, "{v}");
        assert!(sol.w.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn rejects_non_diagonal_and_3d() {
        let desc = serde_json::from_str(
            r#"{"dimension":2,"drift":["-x1","-x2"],"sigma":[["1","0.5"],["0","1"]],"box":[[-1,1],[-1,1]]}"#,
        )
        .unwrap();
        let s = SystemSpec::from_descriptor(&desc).unwrap();
        let grid = Grid::new(s.domain(), 0.1, &[vec![0.0, 0.0]]).unwrap();
        assert!(matches!(sweep_solve(&s, &grid, 1e-8, 10), Err(HjbError::NonDiagonalDiffusion)));
        let dom = DomainBox::new(vec![(-1.0, 1.0); 3]).unwrap();
        assert!(matches!(Grid::new(&dom, 0.1, &[vec![0.0; 3]]), Err(HjbError::UnsupportedDimension(3))));
    }

    #[test]
    fn csv_layout() {
        let sol = ou_solution(0.5);
        let mut buf = Vec::new();
        sol.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x1,W\n-2,"));
        assert_eq!(text.lines().count(), 10);
    }
}
