//! Discrete Freidlin-Wentzell action on uniform time grids.
//!
//! For a path `phi_0..phi_N` with step `dt = T / N`, segment `k` contributes
//!
//! ```text
//! (dt / 2) v_k^T a^{-1}(m_k) v_k,   v_k = (phi_{k+1} - phi_k) / dt - b(m_k),   m_k = (phi_k + phi_{k+1}) / 2
//! ```
//!
//! The reversed path `y_j = phi_{N-j}` driven by `u_j` through the implicit-midpoint dynamics
//! `(y_{j+1} - y_j) / dt + b((y_j + y_{j+1}) / 2) + u_j = 0` has `u_{N-1-k} = v_k`, so its control
//! cost reproduces the forward action term by term.

use std::io::{Read, Write};

use thiserror::Error;

use crate::dynamics::SystemSpec;

#[derive(Debug, Error)]
pub enum PathError {
    #[error("a path needs at least two nodes, got {0}")]
    TooFewNodes(usize),
    #[error("horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("node {node} is not finite")]
    NonFinite { node: usize },
    #[error("node data length {len} is not a multiple of dimension {dim}")]
    Ragged { len: usize, dim: usize },
    #[error("time column is not uniform at row {row}")]
    NonUniformTime { row: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv header must be t, x1..xd; got {0:?}")]
    BadHeader(Vec<String>),
}

/// Time-discretized path with both endpoints fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    dim: usize,
    horizon: f64,
    /// `(N + 1) * dim` coordinates, node-major.
    nodes: Vec<f64>,
}

impl DiscretePath {
    pub fn new(dim: usize, horizon: f64, nodes: Vec<f64>) -> Result<DiscretePath, PathError> {
        if dim == 0 || nodes.len() % dim != 0 {
            return Err(PathError::Ragged { len: nodes.len(), dim });
        }
        let count = nodes.len() / dim;
        if count < 2 {
            return Err(PathError::TooFewNodes(count));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(PathError::BadHorizon(horizon));
        }
        if let Some(i) = nodes.iter().position(|v| !v.is_finite()) {
            return Err(PathError::NonFinite { node: i / dim });
        }
        Ok(DiscretePath { dim, horizon, nodes })
    }

    pub fn from_points(horizon: f64, points: &[Vec<f64>]) -> Result<DiscretePath, PathError> {
        let dim = points.first().map_or(0, Vec::len);
        if points.iter().any(|p| p.len() != dim) {
            return Err(PathError::Ragged { len: points.len(), dim });
        }
        DiscretePath::new(dim, horizon, points.concat())
    }

    /// Straight line from `from` to `to` with `n_segments` segments.
    pub fn straight(from: &[f64], to: &[f64], horizon: f64, n_segments: usize) -> Result<DiscretePath, PathError> {
        let n = n_segments.max(1);
        let mut nodes = Vec::with_capacity((n + 1) * from.len());
        for k in 0..=n {
            let s = k as f64 / n as f64;
            nodes.extend(from.iter().zip(to).map(|(a, b)| a + s * (b - a)));
        }
        DiscretePath::new(from.len(), horizon, nodes)
    }

    /// Path sampled from `f(t)` at the uniform grid.
    pub fn from_fn<F: Fn(f64) -> Vec<f64>>(horizon: f64, n_segments: usize, f: F) -> Result<DiscretePath, PathError> {
        let pts: Vec<Vec<f64>> = (0..=n_segments)
            .map(|k| f(horizon * k as f64 / n_segments as f64))
            .collect();
        DiscretePath::from_points(horizon, &pts)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of segments `N`.
    pub fn segments(&self) -> usize {
        self.nodes.len() / self.dim - 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.segments() as f64
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.nodes[k * self.dim..(k + 1) * self.dim]
    }

    pub fn start(&self) -> &[f64] {
        self.node(0)
    }

    pub fn end(&self) -> &[f64] {
        self.node(self.segments())
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.nodes
    }

    /// Interior coordinates `phi_1..phi_{N-1}`, node-major.
    pub fn interior(&self) -> &[f64] {
        &self.nodes[self.dim..self.nodes.len() - self.dim]
    }

    /// Replaces interior nodes; endpoints are never touched.
    pub fn set_interior(&mut self, interior: &[f64]) {
        let d = self.dim;
        let len = self.nodes.len();
        self.nodes[d..len - d].copy_from_slice(interior);
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        self.nodes.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.horizon * k as f64 / self.segments() as f64
    }

    /// Piecewise-linear interpolation at time `t`, clamped to `[0, T]`.
    pub fn at_time(&self, t: f64) -> Vec<f64> {
        let n = self.segments();
        let s = (t / self.horizon).clamp(0.0, 1.0) * n as f64;
        let k = (s.floor() as usize).min(n - 1);
        let w = s - k as f64;
        let (a, b) = (self.node(k), self.node(k + 1));
        a.iter().zip(b).map(|(p, q)| p + w * (q - p)).collect()
    }

    /// The same geometric curve on a new uniform grid with `n_segments` segments.
    pub fn resampled(&self, horizon: f64, n_segments: usize) -> DiscretePath {
        let scale = self.horizon / horizon;
        let nodes = (0..=n_segments)
            .flat_map(|k| self.at_time(scale * horizon * k as f64 / n_segments as f64))
            .collect();
        DiscretePath {
            dim: self.dim,
            horizon,
            nodes,
        }
    }

    /// Re-grids to `horizon >= T` by holding the start point for the extra time up front.
    pub fn padded_start(&self, horizon: f64, n_segments: usize) -> DiscretePath {
        let shift = (horizon - self.horizon).max(0.0);
        let nodes = (0..=n_segments)
            .flat_map(|k| {
                let t = horizon * k as f64 / n_segments as f64;
                self.at_time(t - shift)
            })
            .collect();
        DiscretePath {
            dim: self.dim,
            horizon,
            nodes,
        }
    }

    /// The sub-path between nodes `from..=to` with its own horizon.
    pub fn slice(&self, from: usize, to: usize) -> Result<DiscretePath, PathError> {
        let nodes = self.nodes[from * self.dim..(to + 1) * self.dim].to_vec();
        DiscretePath::new(self.dim, self.dt() * (to - from) as f64, nodes)
    }

    /// Writes `t, x1..xd` rows with a header.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), PathError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|i| format!("x{i}")));
        out.write_record(&header)?;
        for k in 0..=self.segments() {
            let mut row = vec![format_float(self.time(k))];
            row.extend(self.node(k).iter().map(|v| format_float(*v)));
            out.write_record(&row)?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<DiscretePath, PathError> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let dim = header.len().saturating_sub(1);
        let expected: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=dim).map(|i| format!("x{i}")))
            .collect();
        if dim == 0 || header != expected {
            return Err(PathError::BadHeader(header));
        }
        let mut times = Vec::new();
        let mut nodes = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().unwrap_or(f64::NAN))
                .collect();
            times.push(vals[0]);
            nodes.extend_from_slice(&vals[1..]);
        }
        let n = times.len().saturating_sub(1);
        if n == 0 {
            return Err(PathError::TooFewNodes(times.len()));
        }
        let horizon = times[n] - times[0];
        let dt = horizon / n as f64;
        for (row, w) in times.windows(2).enumerate() {
            if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs().max(1.0) {
                return Err(PathError::NonUniformTime { row: row + 1 });
            }
        }
        DiscretePath::new(dim, horizon, nodes)
    }
}

/// Shortest decimal that round-trips.
pub(crate) fn format_float(v: f64) -> String {
    let s = format!("{v:?}");
    s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
}

/// States and piecewise-constant controls of `dy/dt = -b(y) - u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTrajectory {
    dim: usize,
    horizon: f64,
    /// `(N + 1) * dim`.
    states: Vec<f64>,
    /// `N * dim`.
    controls: Vec<f64>,
}

impl ControlTrajectory {
    pub fn new(dim: usize, horizon: f64, states: Vec<f64>, controls: Vec<f64>) -> Result<ControlTrajectory, PathError> {
        DiscretePath::new(dim, horizon, states.clone())?;
        if controls.len() + dim != states.len() {
            return Err(PathError::Ragged {
                len: controls.len(),
                dim,
            });
        }
        Ok(ControlTrajectory {
            dim,
            horizon,
            states,
            controls,
        })
    }

    /// Integrates the implicit-midpoint control dynamics from `y0` by fixed-point iteration.
    pub fn integrate(
        system: &SystemSpec,
        y0: &[f64],
        horizon: f64,
        controls: Vec<f64>,
    ) -> Result<ControlTrajectory, PathError> {
        let d = y0.len();
        let n = controls.len() / d;
        let dt = horizon / n as f64;
        let mut states = y0.to_vec();
        let mut mid = vec![0.0; d];
        let mut b = vec![0.0; d];
        for k in 0..n {
            let y = states[k * d..(k + 1) * d].to_vec();
            let u = &controls[k * d..(k + 1) * d];
            // explicit predictor, then fixed-point on the midpoint rule
            system.drift_into(&y, &mut b);
            let mut next: Vec<f64> = (0..d).map(|i| y[i] - dt * (b[i] + u[i])).collect();
            for _ in 0..100 {
                for i in 0..d {
                    mid[i] = 0.5 * (y[i] + next[i]);
                }
                system.drift_into(&mid, &mut b);
                let upd: Vec<f64> = (0..d).map(|i| y[i] - dt * (b[i] + u[i])).collect();
                let delta = upd.iter().zip(&next).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
                next = upd;
                if delta <= 1e-15 * next.iter().map(|v| v.abs()).fold(1.0, f64::max) {
                    break;
                }
            }
            states.extend(next);
        }
        ControlTrajectory::new(d, horizon, states, controls)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn segments(&self) -> usize {
        self.controls.len() / self.dim
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.segments() as f64
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn control(&self, k: usize) -> &[f64] {
        &self.controls[k * self.dim..(k + 1) * self.dim]
    }

    /// Largest `|(y_{k+1} - y_k)/dt + b(mid) + u_k|` over segments.
    pub fn dynamics_residual(&self, system: &SystemSpec) -> f64 {
        let d = self.dim;
        let dt = self.dt();
        let mut mid = vec![0.0; d];
        let mut b = vec![0.0; d];
        (0..self.segments())
            .map(|k| {
                let (y0, y1, u) = (self.state(k), self.state(k + 1), self.control(k));
                for i in 0..d {
                    mid[i] = 0.5 * (y0[i] + y1[i]);
                }
                system.drift_into(&mid, &mut b);
                (0..d)
                    .map(|i| ((y1[i] - y0[i]) / dt + b[i] + u[i]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Per-segment costs `(dt/2) u^T a^{-1}(mid) u`.
    pub fn segment_costs(&self, system: &SystemSpec) -> Vec<f64> {
        let d = self.dim;
        let dt = self.dt();
        let mut mid = vec![0.0; d];
        (0..self.segments())
            .map(|k| {
                let (y0, y1) = (self.state(k), self.state(k + 1));
                for i in 0..d {
                    mid[i] = 0.5 * (y0[i] + y1[i]);
                }
                0.5 * dt * system.inv_metric(&mid).quad(self.control(k))
            })
            .collect()
    }

    /// Remaining control cost from each node to the end, `N + 1` values ending at 0.
    pub fn cost_to_go(&self, system: &SystemSpec) -> Vec<f64> {
        let costs = self.segment_costs(system);
        let mut out = vec![0.0; costs.len() + 1];
        for k in (0..costs.len()).rev() {
            out[k] = out[k + 1] + costs[k];
        }
        out
    }

    /// Back to the forward path `phi_k = y_{N-k}`.
    pub fn to_path(&self) -> DiscretePath {
        let n = self.segments();
        let nodes = (0..=n).rev().flat_map(|k| self.state(k).to_vec()).collect();
        DiscretePath {
            dim: self.dim,
            horizon: self.horizon,
            nodes,
        }
    }
}

fn midpoint(a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..out.len() {
        out[i] = 0.5 * (a[i] + b[i]);
    }
}

/// Per-segment discrete action terms.
pub fn segment_actions(system: &SystemSpec, path: &DiscretePath) -> Vec<f64> {
    let d = path.dim();
    let dt = path.dt();
    let mut mid = vec![0.0; d];
    let mut b = vec![0.0; d];
    let mut v = vec![0.0; d];
    (0..path.segments())
        .map(|k| {
            let (p0, p1) = (path.node(k), path.node(k + 1));
            midpoint(p0, p1, &mut mid);
            system.drift_into(&mid, &mut b);
            for i in 0..d {
                v[i] = (p1[i] - p0[i]) / dt - b[i];
            }
            0.5 * dt * system.inv_metric(&mid).quad(&v)
        })
        .collect()
}

/// Midpoint-rule discretization of `S_{0T}`.
pub fn path_action(system: &SystemSpec, path: &DiscretePath) -> f64 {
    segment_actions(system, path).iter().sum()
}

/// Action of the path with `interior` substituted, and its gradient with respect to `interior`.
///
/// `grad` must have the length of `interior`.
pub(crate) fn action_and_gradient(
    system: &SystemSpec,
    start: &[f64],
    end: &[f64],
    dt: f64,
    interior: &[f64],
    grad: &mut [f64],
) -> f64 {
    let d = start.len();
    let n = interior.len() / d + 1;
    let node = |k: usize| -> &[f64] {
        if k == 0 {
            start
        } else if k == n {
            end
        } else {
            &interior[(k - 1) * d..k * d]
        }
    };
    grad.iter_mut().for_each(|g| *g = 0.0);
    let constant_metric = system.is_diffusion_constant();
    let mut total = 0.0;
    let mut mid = vec![0.0; d];
    let mut b = vec![0.0; d];
    let mut v = vec![0.0; d];
    let mut av = vec![0.0; d];
    let mut q = vec![0.0; d];
    for k in 0..n {
        let (p0, p1) = (node(k), node(k + 1));
        midpoint(p0, p1, &mut mid);
        system.drift_into(&mid, &mut b);
        for i in 0..d {
            v[i] = (p1[i] - p0[i]) / dt - b[i];
        }
        let metric = system.inv_metric(&mid);
        metric.apply(&v, &mut av);
        let quad: f64 = v.iter().zip(&av).map(|(p, r)| p * r).sum();
        total += 0.5 * dt * quad;

        let jac = system.drift_jacobian(&mid);
        // J^T a^{-1} v
        let mut jt_av = vec![0.0; d];
        for i in 0..d {
            jt_av[i] = (0..d).map(|r| jac[(r, i)] * av[r]).sum();
        }
        // (dt/4) d/dm (v^T a^{-1}(m) v) with v held fixed
        if constant_metric {
            q.iter_mut().for_each(|t| *t = 0.0);
        } else {
            let mut shifted = mid.clone();
            for l in 0..d {
                let h = crate::dynamics::fd_step(mid[l]);
                shifted[l] = mid[l] + h;
                let qp = system.inv_metric(&shifted).quad(&v);
                shifted[l] = mid[l] - h;
                let qm = system.inv_metric(&shifted).quad(&v);
                shifted[l] = mid[l];
                q[l] = 0.25 * dt * (qp - qm) / (2.0 * h);
            }
        }
        // d/d phi_{k+1}: av - (dt/2) J^T av + q ;  d/d phi_k: -av - (dt/2) J^T av + q
        if k + 1 < n {
            let g = &mut grad[k * d..(k + 1) * d];
            for i in 0..d {
                g[i] += av[i] - 0.5 * dt * jt_av[i] + q[i];
            }
        }
        if k > 0 {
            let g = &mut grad[(k - 1) * d..k * d];
            for i in 0..d {
                g[i] += -av[i] - 0.5 * dt * jt_av[i] + q[i];
            }
        }
    }
    total
}

/// Gradient of [`path_action`] with respect to each interior node.
pub fn path_action_gradient(system: &SystemSpec, path: &DiscretePath) -> Vec<Vec<f64>> {
    let mut grad = vec![0.0; path.interior().len()];
    action_and_gradient(system, path.start(), path.end(), path.dt(), path.interior(), &mut grad);
    grad.chunks(path.dim()).map(<[f64]>::to_vec).collect()
}

/// `sum_k (dt/2) u_k^T a^{-1}(mid_k) u_k`.
pub fn control_cost(system: &SystemSpec, traj: &ControlTrajectory) -> f64 {
    traj.segment_costs(system).iter().sum()
}

/// Time reversal `y_j = phi_{N-j}` with controls solving the midpoint dynamics exactly.
pub fn reverse_to_control(system: &SystemSpec, path: &DiscretePath) -> ControlTrajectory {
    let d = path.dim();
    let n = path.segments();
    let dt = path.dt();
    let states: Vec<f64> = (0..=n).rev().flat_map(|k| path.node(k).to_vec()).collect();
    let mut controls = Vec::with_capacity(n * d);
    let mut mid = vec![0.0; d];
    let mut b = vec![0.0; d];
    for j in 0..n {
        let y0 = &states[j * d..(j + 1) * d];
        let y1 = &states[(j + 1) * d..(j + 2) * d];
        midpoint(y0, y1, &mut mid);
        system.drift_into(&mid, &mut b);
        controls.extend((0..d).map(|i| -(y1[i] - y0[i]) / dt - b[i]));
    }
    ControlTrajectory {
        dim: d,
        horizon: path.horizon(),
        states,
        controls,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ou() -> SystemSpec {
        SystemSpec::builtin("ou1d").unwrap()
    }

    #[test]
    fn constant_path_at_equilibrium_is_free() {
        let s = SystemSpec::builtin("doublewell1d").unwrap();
        let p = DiscretePath::straight(&[1.0], &[1.0], 3.0, 50).unwrap();
        assert_eq!(path_action(&s, &p), 0.0);
        assert!(path_action_gradient(&s, &p).iter().flatten().all(|g| *g == 0.0));
        let c = reverse_to_control(&s, &p);
        assert!(c.controls.iter().all(|u| *u == 0.0));
        assert!(c.states.iter().all(|y| *y == 1.0));
    }

    #[test]
    fn free_particle_unit_line() {
        let s = SystemSpec::from_exprs(&["0"], vec![(-2.0, 2.0)]).unwrap();
        let p = DiscretePath::straight(&[0.0], &[1.0], 1.0, 10).unwrap();
        assert!((path_action(&s, &p) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn ou_linear_path_matches_closed_form() {
        // (1/2) int_0^1 (1 + t)^2 dt = 7/6
        let p = DiscretePath::from_fn(1.0, 1000, |t| vec![t]).unwrap();
        assert!((path_action(&ou(), &p) - 7.0 / 6.0).abs() < 1e-4);
    }

    #[test]
    fn reversal_round_trip_and_duality() {
        let s = SystemSpec::builtin("doublewell1d").unwrap();
        let p = DiscretePath::from_fn(2.0, 40, |t| vec![-1.0 + 0.5 * t + 0.1 * (3.0 * t).sin()]).unwrap();
        let c = reverse_to_control(&s, &p);
        assert_eq!(c.state(0), p.end());
        assert_eq!(c.state(40), p.start());
        assert!(c.dynamics_residual(&s) < 1e-12);
        assert_eq!(c.to_path(), p);
        let (a, b) = (path_action(&s, &p), control_cost(&s, &c));
        assert!((a - b).abs() <= 1e-12 * a);
        let ctg = c.cost_to_go(&s);
        assert!((ctg[0] - a).abs() <= 1e-12 * a);
        assert!(ctg.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn zero_control_costs_nothing() {
        let s = ou();
        let c = ControlTrajectory::integrate(&s, &[1.0], 1.0, vec![0.0; 20]).unwrap();
        assert_eq!(control_cost(&s, &c), 0.0);
    }

    #[test]
    fn unit_control_cost() {
        let s = ou();
        let c = ControlTrajectory::integrate(&s, &[1.0], 1.0, vec![1.0; 100]).unwrap();
        assert!((control_cost(&s, &c) - 0.5).abs() < 1e-14);
        assert!(c.dynamics_residual(&s) < 1e-12);
    }

    #[test]
    fn integrate_then_reverse_recovers_controls() {
        let s = SystemSpec::builtin("linear2d").unwrap();
        let controls: Vec<f64> = (0..60).map(|i| (i as f64 * 0.1).sin()).collect();
        let c = ControlTrajectory::integrate(&s, &[0.5, -0.2], 1.5, controls.clone()).unwrap();
        let back = reverse_to_control(&s, &c.to_path());
        for (u, w) in back.controls.iter().zip(&controls) {
            assert!((u - w).abs() < 1e-9);
        }
    }

    #[test]
    fn midpoint_rule_is_second_order() {
        let s = ou();
        let exact = 7.0 / 6.0;
        let err = |n| {
            let p = DiscretePath::from_fn(1.0, n, |t| vec![t]).unwrap();
            (path_action(&s, &p) - exact).abs()
        };
        let ratio = err(50) / err(100);
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn csv_round_trip() {
        let p = DiscretePath::from_fn(2.0, 8, |t| vec![t.sin(), t * t]).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x1,x2\n"));
        let back = DiscretePath::read_csv(&buf[..]).unwrap();
        assert_eq!(back.points(), p.points());
        assert!((back.horizon() - 2.0).abs() < 1e-15);
        assert!(matches!(
            DiscretePath::read_csv(&b"time,x1\n0,1\n1,2\n"[..]),
            Err(PathError::BadHeader(_))
        ));
    }

    #[test]
    fn padded_start_holds_initial_point() {
        let p = DiscretePath::straight(&[0.0], &[1.0], 1.0, 10).unwrap();
        let q = p.padded_start(2.0, 20);
        assert_eq!(q.node(5), &[0.0]);
        assert_eq!(q.end(), &[1.0]);
        assert!((q.node(15)[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn invalid_paths_rejected() {
        assert!(matches!(DiscretePath::new(1, 1.0, vec![0.0]), Err(PathError::TooFewNodes(1))));
        assert!(matches!(DiscretePath::new(1, 0.0, vec![0.0, 1.0]), Err(PathError::BadHorizon(_))));
        assert!(matches!(
            DiscretePath::new(1, 1.0, vec![0.0, f64::NAN]),
            Err(PathError::NonFinite { node: 1 })
        ));
    }
}
