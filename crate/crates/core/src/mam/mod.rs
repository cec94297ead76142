//! Minimum action method: `V(x_from, x_to) = inf_T inf_phi S_{0T}(phi)` on a ladder of horizons.

mod lbfgs;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{action_and_gradient, reverse_to_control, segment_actions, DiscretePath, PathError};
use crate::dynamics::{classify, Equilibrium, EquilibriumKind, SystemSpec};
use crate::graph::CostMatrix;
use lbfgs::{minimize, Settings, TridiagonalPreconditioner};

#[derive(Debug, Error)]
pub enum MamError {
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
    #[error("point has dimension {got}, system has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Path(#[from] PathError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MamOptions {
    /// Segments per path; the path has `n_nodes + 1` nodes.
    pub n_nodes: usize,
    /// Strictly increasing horizons tried in order.
    pub horizons: Vec<f64>,
    /// Stop when the gradient max-norm drops below this.
    pub tol: f64,
    pub max_iter: usize,
    pub multi_start: usize,
    /// Seeds the midpoint perturbations of extra starts; set from the experiment seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for MamOptions {
    fn default() -> Self {
        MamOptions {
            n_nodes: 200,
            horizons: vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0],
            tol: 1e-6,
            max_iter: 5000,
            multi_start: 1,
            seed: 0,
        }
    }
}

impl MamOptions {
    pub fn validate(&self) -> Result<(), MamError> {
        let bad = |m: &str| Err(MamError::InvalidOptions(m.to_string()));
        if self.n_nodes == 0 {
            return bad("n_nodes must be positive");
        }
        if self.horizons.is_empty() {
            return bad("horizons must not be empty");
        }
        if self.horizons.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return bad("horizons must be positive and finite");
        }
        if self.horizons.windows(2).any(|w| w[1] <= w[0]) {
            return bad("horizons must be strictly increasing");
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive");
        }
        if self.multi_start == 0 {
            return bad("multi_start must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rung {
    pub horizon: f64,
    pub value: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct QuasipotentialResult {
    pub value: f64,
    pub best_t: f64,
    #[serde(skip)]
    pub path: DiscretePath,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    /// The last horizon still improved on its predecessor by more than 1%.
    pub horizon_limited: bool,
    /// Least distance of interior nodes to equilibria the path should avoid.
    pub excluded_equilibrium_proximity: Option<f64>,
    pub ladder: Vec<Rung>,
    /// Every accepted optimizer step of the winning solve lowered the action.
    pub monotone_descent: bool,
    pub warnings: Vec<String>,
}

struct Solved {
    path: DiscretePath,
    value: f64,
    grad_norm: f64,
    iterations: usize,
    converged: bool,
    monotone: bool,
}

/// Per-problem constants shared by all solves.
struct Context<'a> {
    system: &'a SystemSpec,
    opts: &'a MamOptions,
    kappa: f64,
    metric_scale: f64,
}

impl<'a> Context<'a> {
    fn new(system: &'a SystemSpec, opts: &'a MamOptions, x_from: &[f64]) -> Context<'a> {
        let lip = system.lipschitz_estimate();
        let d = system.dim();
        let scale = system
            .eval_a_inv(x_from)
            .map(|m| m.trace() / d as f64)
            .ok()
            .filter(|s| s.is_finite() && *s > 0.0)
            .unwrap_or(1.0);
        Context {
            system,
            opts,
            kappa: if lip.is_finite() { lip * lip } else { 1.0 },
            metric_scale: scale,
        }
    }

    fn solve(&self, init: DiscretePath) -> Solved {
        let d = init.dim();
        let n = init.segments();
        let dt = init.dt();
        let mut path = init;
        if n < 2 {
            let value = segment_actions(self.system, &path).iter().sum();
            return Solved {
                path,
                value,
                grad_norm: 0.0,
                iterations: 0,
                converged: true,
                monotone: true,
            };
        }
        let start = path.start().to_vec();
        let end = path.end().to_vec();
        // Hessian model: a^{-1} (L / dt + dt kappa I) per coordinate
        let s = self.metric_scale;
        let pre = TridiagonalPreconditioner::new(n - 1, d, s * (2.0 / dt + dt * self.kappa), -s / dt);
        let settings = Settings {
            tol: self.opts.tol,
            max_iter: self.opts.max_iter,
            memory: 10,
        };
        let out = minimize(
            |x, g| action_and_gradient(self.system, &start, &end, dt, x, g),
            |v| pre.solve(v),
            path.interior().to_vec(),
            &settings,
        );
        path.set_interior(&out.x);
        let monotone = out.trace.windows(2).all(|w| w[1] <= w[0]);
        Solved {
            value: segment_actions(self.system, &path).iter().sum(),
            path,
            grad_norm: out.grad_norm,
            iterations: out.iterations,
            converged: out.converged,
            monotone,
        }
    }

    /// Straight line plus seeded perturbations, and `warm` first when given.
    fn initial_paths(
        &self,
        x_from: &[f64],
        x_to: &[f64],
        horizon: f64,
        warm: Option<DiscretePath>,
    ) -> Result<Vec<DiscretePath>, MamError> {
        let n = self.opts.n_nodes;
        let line = DiscretePath::straight(x_from, x_to, horizon, n)?;
        let span = x_from
            .iter()
            .zip(x_to)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
            .max(0.1 * self.system.domain().diameter());
        let mut out: Vec<DiscretePath> = warm.into_iter().collect();
        out.push(line.clone());
        for k in 1..self.opts.multi_start {
            let mut rng = ChaCha12Rng::seed_from_u64(self.opts.seed);
            rng.set_stream(k as u64);
            let dir: Vec<f64> = (0..x_from.len())
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    0.25 * span * z
                })
                .collect();
            let mut p = line.clone();
            let d = x_from.len();
            let mut interior = p.interior().to_vec();
            for (j, chunk) in interior.chunks_mut(d).enumerate() {
                let bump = (std::f64::consts::PI * (j + 1) as f64 / n as f64).sin();
                for (c, e) in chunk.iter_mut().zip(&dir) {
                    *c += bump * e;
                }
            }
            p.set_interior(&interior);
            out.push(p);
        }
        Ok(out)
    }

    /// Solves every start; ties go to the earliest.
    fn best_of(&self, inits: Vec<DiscretePath>) -> Solved {
        let solved: Vec<Solved> = inits.into_par_iter().map(|p| self.solve(p)).collect();
        solved
            .into_iter()
            .reduce(|best, s| if s.value < best.value { s } else { best })
            .expect("at least one start")
    }
}

fn check_dim(system: &SystemSpec, x: &[f64]) -> Result<(), MamError> {
    if x.len() != system.dim() {
        return Err(MamError::DimensionMismatch {
            expected: system.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

fn source_warnings(system: &SystemSpec, x_from: &[f64]) -> Vec<String> {
    let mut out = Vec::new();
    let b = system.drift(x_from);
    let norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm <= 1e-6) {
        out.push(format!("source is not an equilibrium (|b| = {norm:.3e})"));
    }
    let real: Vec<f64> = system
        .drift_jacobian(x_from)
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .collect();
    if classify(&real) != EquilibriumKind::Stable {
        out.push("source is not a stable equilibrium".to_string());
    }
    for w in &out {
        log::warn!("{w}");
    }
    out
}

/// Least distance from interior nodes to any of `points`.
pub fn min_proximity(path: &DiscretePath, points: &[Vec<f64>]) -> Option<f64> {
    if points.is_empty() || path.segments() < 2 {
        return None;
    }
    (1..path.segments())
        .flat_map(|k| {
            let node = path.node(k);
            points.iter().map(move |p| {
                node.iter()
                    .zip(p)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
        })
        .reduce(f64::min)
}

fn finish(solved: Solved, best_t: f64, ladder: Vec<Rung>, horizon_limited: bool, warnings: Vec<String>) -> QuasipotentialResult {
    QuasipotentialResult {
        value: solved.value,
        best_t,
        path: solved.path,
        iterations: solved.iterations,
        grad_norm: solved.grad_norm,
        converged: solved.converged,
        horizon_limited,
        excluded_equilibrium_proximity: None,
        ladder,
        monotone_descent: solved.monotone,
        warnings,
    }
}

/// Local minimizer of the discrete action at fixed horizon, started from the straight line
/// (and the configured perturbations of it).
pub fn minimize_action_fixed_t(
    system: &SystemSpec,
    x_from: &[f64],
    x_to: &[f64],
    horizon: f64,
    opts: &MamOptions,
) -> Result<QuasipotentialResult, MamError> {
    opts.validate()?;
    check_dim(system, x_from)?;
    check_dim(system, x_to)?;
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(PathError::BadHorizon(horizon).into());
    }
    let ctx = Context::new(system, opts, x_from);
    let inits = ctx.initial_paths(x_from, x_to, horizon, None)?;
    let solved = crate::parallel::install(|| ctx.best_of(inits));
    let rung = Rung {
        horizon,
        value: solved.value,
        converged: solved.converged,
    };
    Ok(finish(solved, horizon, vec![rung], false, Vec::new()))
}

/// Minimum over the horizon ladder, each rung warm-started from the previous minimizer with the
/// source held during the added time.
pub fn quasipotential(
    system: &SystemSpec,
    x_from: &[f64],
    x_to: &[f64],
    opts: &MamOptions,
) -> Result<QuasipotentialResult, MamError> {
    opts.validate()?;
    check_dim(system, x_from)?;
    check_dim(system, x_to)?;
    let warnings = source_warnings(system, x_from);
    let ctx = Context::new(system, opts, x_from);
    crate::parallel::install(|| {
        let mut ladder = Vec::new();
        let mut best: Option<(Solved, f64)> = None;
        let mut warm: Option<DiscretePath> = None;
        for &t in &opts.horizons {
            let seed = warm.take().map(|p| p.padded_start(t, opts.n_nodes));
            let solved = ctx.best_of(ctx.initial_paths(x_from, x_to, t, seed)?);
            ladder.push(Rung {
                horizon: t,
                value: solved.value,
                converged: solved.converged,
            });
            warm = Some(solved.path.clone());
            // equal values within rounding keep the shorter horizon
            let improves = best
                .as_ref()
                .is_none_or(|(b, _)| solved.value < b.value - 1e-9 * b.value.abs());
            if improves {
                best = Some((solved, t));
            }
        }
        let horizon_limited = match ladder.as_slice() {
            [.., prev, last] => last.value < prev.value * (1.0 - 0.01),
            _ => false,
        };
        let (solved, t) = best.expect("non-empty ladder");
        Ok(finish(solved, t, ladder, horizon_limited, warnings))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub from: usize,
    pub to: usize,
    pub value: f64,
    pub best_t: f64,
    pub converged: bool,
    pub horizon_limited: bool,
    pub excluded_equilibrium_proximity: Option<f64>,
    /// Proximity fell below `1e-3` of the box diameter.
    pub proximity_warning: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCosts {
    pub matrix: CostMatrix,
    pub entries: Vec<PairEntry>,
    /// Some entry did not converge.
    pub provisional: bool,
}

/// `V~(x_i, x_j)` for every ordered pair. Avoidance of the other equilibria is not enforced; the
/// closest approach is recorded instead.
pub fn pair_cost_matrix(
    system: &SystemSpec,
    equilibria: &[Equilibrium],
    opts: &MamOptions,
) -> Result<PairCosts, MamError> {
    opts.validate()?;
    let j = equilibria.len();
    let pairs: Vec<(usize, usize)> = (0..j)
        .flat_map(|a| (0..j).filter(move |&b| b != a).map(move |b| (a, b)))
        .collect();
    let threshold = 1e-3 * system.domain().diameter();
    let entries: Vec<PairEntry> = crate::parallel::install(|| {
        pairs
            .par_iter()
            .map(|&(a, b)| {
                let r = quasipotential(system, &equilibria[a].location, &equilibria[b].location, opts)?;
                let excluded: Vec<Vec<f64>> = (0..j)
                    .filter(|&k| k != a && k != b)
                    .map(|k| equilibria[k].location.clone())
                    .collect();
                let prox = min_proximity(&r.path, &excluded);
                let warn = prox.is_some_and(|p| p < threshold);
                if warn {
                    log::warn!("path {a}->{b} passes within {:.3e} of an excluded equilibrium", prox.unwrap_or(0.0));
                }
                Ok(PairEntry {
                    from: a,
                    to: b,
                    value: r.value,
                    best_t: r.best_t,
                    converged: r.converged,
                    horizon_limited: r.horizon_limited,
                    excluded_equilibrium_proximity: prox,
                    proximity_warning: warn,
                })
            })
            .collect::<Result<Vec<_>, MamError>>()
    })?;
    let mut matrix = CostMatrix::zeros(j);
    for e in &entries {
        matrix.set(e.from, e.to, Some(e.value));
    }
    Ok(PairCosts {
        provisional: entries.iter().any(|e| !e.converged),
        matrix,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldValue {
    pub x: Vec<f64>,
    pub value: f64,
    pub best_t: f64,
    pub converged: bool,
    pub horizon_limited: bool,
}

/// [`quasipotential`] at each target, in target order.
pub fn quasipotential_field(
    system: &SystemSpec,
    x_from: &[f64],
    targets: &[Vec<f64>],
    opts: &MamOptions,
) -> Result<Vec<FieldValue>, MamError> {
    crate::parallel::install(|| {
        targets
            .par_iter()
            .map(|x| {
                let r = quasipotential(system, x_from, x, opts)?;
                Ok(FieldValue {
                    x: x.clone(),
                    value: r.value,
                    best_t: r.best_t,
                    converged: r.converged,
                    horizon_limited: r.horizon_limited,
                })
            })
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpSplit {
    pub node: usize,
    /// Action of the optimal path up to the split node.
    pub partial_action: f64,
    /// Independent ladder solve from the source to the split node.
    pub head: f64,
    /// Fixed-horizon re-solve of the remainder.
    pub tail: f64,
    pub total: f64,
    pub relative_gap: f64,
}

/// Splits an optimal path at `node` and re-solves both pieces.
pub fn dp_split_check(
    system: &SystemSpec,
    result: &QuasipotentialResult,
    node: usize,
    opts: &MamOptions,
) -> Result<DpSplit, MamError> {
    let path = &result.path;
    let n = path.segments();
    if node == 0 || node >= n {
        return Err(MamError::InvalidOptions(format!("split node {node} must be interior")));
    }
    let segs = segment_actions(system, path);
    let partial_action: f64 = segs[..node].iter().sum();
    let head = quasipotential(system, path.start(), path.node(node), opts)?.value;
    let tail_path = path.slice(node, n)?;
    let ctx = Context::new(system, opts, path.node(node));
    let line = DiscretePath::straight(path.node(node), path.end(), tail_path.horizon(), n - node)?;
    let tail = crate::parallel::install(|| ctx.best_of(vec![tail_path, line])).value;
    let total = result.value;
    Ok(DpSplit {
        node,
        partial_action,
        head,
        tail,
        total,
        relative_gap: (head + tail - total).abs() / total.abs().max(f64::MIN_POSITIVE),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostToGo {
    /// Accumulated cost at each state of the reversed trajectory, in control time.
    pub values: Vec<f64>,
    pub max_increase: f64,
    pub monotone: bool,
}

/// Along the control-form trajectory `y_k = phi_{N-k}` the action accumulated up to `y_k` on the
/// forward path is the value at `y_k`; it must not increase in control time.
pub fn cost_to_go_check(system: &SystemSpec, result: &QuasipotentialResult) -> CostToGo {
    let ctrl = reverse_to_control(system, &result.path);
    let remaining = ctrl.cost_to_go(system);
    let max_increase = remaining
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-12 * result.value.abs().max(1.0);
    CostToGo {
        monotone: max_increase <= tol,
        max_increase,
        values: remaining,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fast() -> MamOptions {
        MamOptions {
            n_nodes: 100,
            ..MamOptions::default()
        }
    }

    #[test]
    fn options_validation() {
        assert!(MamOptions::default().validate().is_ok());
        let bad = MamOptions {
            horizons: vec![2.0, 1.0],
            ..MamOptions::default()
        };
        assert!(matches!(bad.validate(), Err(MamError::InvalidOptions(_))));
    }

    #[test]
    fn trivial_pair_is_free() {
        let s = SystemSpec::builtin("ou1d").unwrap();
        let r = quasipotential(&s, &[0.0], &[0.0], &fast()).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.best_t, 1.0);
        assert!(r.converged);
    }

    #[test]
    fn ou_fixed_horizon() {
        let s = SystemSpec::builtin("ou1d").unwrap();
        let r = minimize_action_fixed_t(&s, &[0.0], &[1.0], 1.0, &MamOptions::default()).unwrap();
        let exact = (1f64.exp().powi(2) - 1.0) / (4.0 * 1f64.sinh().powi(2));
        assert!((r.value - exact).abs() < 1e-3, "{} vs {exact}", r.value);
        assert!(r.converged);
        assert!(r.monotone_descent);
        let straight = crate::action::path_action(&s, &DiscretePath::straight(&[0.0], &[1.0], 1.0, 200).unwrap());
        assert!(r.value <= straight);
    }

    #[test]
    fn ou_ladder_and_checks() {
        let s = SystemSpec::builtin("ou1d").unwrap();
        let r = quasipotential(&s, &[0.0], &[1.0], &fast()).unwrap();
        assert!((r.value - 1.0).abs() < 0.02, "{}", r.value);
        assert!(r.value >= 1.0 - 1e-12, "midpoint action keeps the gradient lower bound");
        let ctg = cost_to_go_check(&s, &r);
        assert!(ctg.monotone);
        let dp = dp_split_check(&s, &r, 80, &fast()).unwrap();
        assert!(dp.relative_gap < 0.01, "{dp:?}");
    }

    #[test]
    fn multi_start_is_deterministic() {
        let s = SystemSpec::builtin("doublewell1d").unwrap();
        let opts = MamOptions {
            n_nodes: 60,
            multi_start: 3,
            seed: 9,
            horizons: vec![2.0, 4.0],
            ..MamOptions::default()
        };
        let a = quasipotential(&s, &[-1.0], &[-0.5], &opts).unwrap();
        let b = quasipotential(&s, &[-1.0], &[-0.5], &opts).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.path, b.path);
    }

    #[test]
    fn single_equilibrium_matrix() {
        let s = SystemSpec::builtin("ou1d").unwrap();
        let eq = crate::dynamics::find_equilibria(&s, 8, 1e-10).unwrap();
        let pc = pair_cost_matrix(&s, &eq, &fast()).unwrap();
        assert_eq!(pc.matrix, CostMatrix::zeros(1));
        assert!(!pc.provisional);
    }
}
