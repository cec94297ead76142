//! Equilibrium graph calculus: i-graphs, `Z(x_i)` and the normalized equilibrium potentials.
//!
//! An i-graph assigns every node except the root `i` one outgoing edge `m -> parent[m]` such that
//! following edges from any node ends at `i`. `Z(x_i)` is the least total cost over i-graphs,
//! computed by brute force for small `J` and by Chu-Liu/Edmonds otherwise. Among equal-cost optima
//! the lexicographically smallest parent vector is returned.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::format_float;
use crate::dynamics::{Equilibrium, SystemSpec};
use crate::mam::{quasipotential, MamError, MamOptions};

pub const MAX_BRUTEFORCE: usize = 8;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("brute-force enumeration refused for J = {0} > 8; use z_value_edmonds")]
    TooLarge(usize),
    #[error("root {root} out of range for J = {j}")]
    RootOutOfRange { root: usize, j: usize },
    #[error("no i-graph with finite cost reaches root {0}")]
    Unreachable(usize),
    #[error("no equilibrium is reachable from all others")]
    AllUnreachable,
    #[error("invalid cost matrix: {0}")]
    Invalid(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Mam(#[from] MamError),
}

/// `J x J` transition costs, row = source. `None` marks an unreachable pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    rows: Vec<Vec<Option<f64>>>,
}

impl CostMatrix {
    pub fn new(rows: Vec<Vec<Option<f64>>>) -> Result<CostMatrix, GraphError> {
        let j = rows.len();
        if j == 0 {
            return Err(GraphError::Invalid("empty matrix".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != j {
                return Err(GraphError::Invalid(format!("row {i} has {} entries, expected {j}", row.len())));
            }
            if row[i] != Some(0.0) {
                return Err(GraphError::Invalid(format!("diagonal entry {i} must be 0")));
            }
            if let Some((k, v)) = row
                .iter()
                .enumerate()
                .find_map(|(k, v)| v.filter(|v| !(v.is_finite() && *v >= 0.0)).map(|v| (k, v)))
            {
                return Err(GraphError::Invalid(format!("entry ({i},{k}) = {v} is not a finite nonnegative number")));
            }
        }
        Ok(CostMatrix { rows })
    }

    pub fn from_finite(rows: &[Vec<f64>]) -> Result<CostMatrix, GraphError> {
        CostMatrix::new(rows.iter().map(|r| r.iter().copied().map(Some).collect()).collect())
    }

    pub fn zeros(j: usize) -> CostMatrix {
        CostMatrix {
            rows: (0..j).map(|i| (0..j).map(|k| if i == k { Some(0.0) } else { None }).collect()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, from: usize, to: usize) -> Option<f64> {
        self.rows[from][to]
    }

    pub(crate) fn set(&mut self, from: usize, to: usize, value: Option<f64>) {
        self.rows[from][to] = value;
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.rows
    }

    /// Adds `c` to every finite off-diagonal entry.
    pub fn shifted(&self, c: f64) -> CostMatrix {
        let mut out = self.clone();
        for (i, row) in out.rows.iter_mut().enumerate() {
            for (k, v) in row.iter_mut().enumerate() {
                if i != k {
                    *v = v.map(|x| x + c);
                }
            }
        }
        out
    }

    /// Header `from,to_0..to_{J-1}`; unreachable entries are empty fields.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), GraphError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["from".to_string()];
        header.extend((0..self.len()).map(|k| format!("to_{k}")));
        out.write_record(&header)?;
        for (i, row) in self.rows.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(row.iter().map(|v| v.map(format_float).unwrap_or_default()));
            out.write_record(&rec)?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<CostMatrix, GraphError> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let j = header.len().saturating_sub(1);
        let expected: Vec<String> = std::iter::once("from".to_string())
            .chain((0..j).map(|k| format!("to_{k}")))
            .collect();
        if header != expected {
            return Err(GraphError::Invalid(format!("bad header {header:?}")));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.get(0).map(str::trim) != Some(i.to_string().as_str()) {
                return Err(GraphError::Invalid(format!("row {i} is out of order")));
            }
            let row = rec
                .iter()
                .skip(1)
                .map(|s| {
                    let s = s.trim();
                    if s.is_empty() {
                        Ok(None)
                    } else {
                        s.parse::<f64>()
                            .map(Some)
                            .map_err(|_| GraphError::Invalid(format!("row {i}: cannot parse {s:?}")))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        CostMatrix::new(rows)
    }
}

/// `parent[m]` is the head of the single edge leaving `m`; `None` exactly at the root.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeMap {
    pub root: usize,
    pub parent: Vec<Option<usize>>,
}

impl EdgeMap {
    /// Edges `(m, n)` in node order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.parent
            .iter()
            .enumerate()
            .filter_map(|(m, p)| p.map(|n| (m, n)))
            .collect()
    }

    /// One outgoing edge per non-root node, none at the root, and every walk ends at the root.
    pub fn is_igraph(&self) -> bool {
        let j = self.parent.len();
        if self.root >= j || self.parent[self.root].is_some() {
            return false;
        }
        (0..j).all(|start| {
            let mut node = start;
            for _ in 0..j {
                match self.parent[node] {
                    None => return node == self.root,
                    Some(n) if n < j && n != node => node = n,
                    Some(_) => return false,
                }
            }
            false
        })
    }

    /// Sum of edge costs in node order; `None` if any edge is unreachable.
    pub fn cost(&self, costs: &CostMatrix) -> Option<f64> {
        self.edges()
            .iter()
            .try_fold(0.0, |acc, &(m, n)| costs.get(m, n).map(|c| acc + c))
    }
}

fn check_root(j: usize, root: usize) -> Result<(), GraphError> {
    if root >= j {
        return Err(GraphError::RootOutOfRange { root, j });
    }
    Ok(())
}

/// All i-graphs on `J` nodes rooted at `root`, in lexicographic order of the parent vector.
pub fn enumerate_igraphs(j: usize, root: usize) -> Result<Vec<EdgeMap>, GraphError> {
    if j > MAX_BRUTEFORCE {
        return Err(GraphError::TooLarge(j));
    }
    check_root(j, root)?;
    let others: Vec<usize> = (0..j).filter(|&m| m != root).collect();
    let mut digits = vec![0usize; others.len()];
    let mut out = Vec::new();
    loop {
        let mut parent = vec![None; j];
        for (slot, &m) in others.iter().enumerate() {
            parent[m] = Some(digits[slot]);
        }
        let map = EdgeMap { root, parent };
        if map.is_igraph() {
            out.push(map);
        }
        // odometer, last node varies fastest
        let mut pos = digits.len();
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < j {
                break;
            }
            digits[pos] = 0;
        }
    }
}

fn tie_tol(z: f64, j: usize) -> f64 {
    1e-12 * z.abs().max(1.0) * j.max(1) as f64
}

/// Exhaustive minimum over [`enumerate_igraphs`].
pub fn z_value_bruteforce(costs: &CostMatrix, root: usize) -> Result<(f64, EdgeMap), GraphError> {
    let j = costs.len();
    let graphs = enumerate_igraphs(j, root)?;
    let priced: Vec<(f64, EdgeMap)> = graphs
        .into_iter()
        .filter_map(|g| g.cost(costs).map(|c| (c, g)))
        .collect();
    let best = priced
        .iter()
        .map(|(c, _)| *c)
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(GraphError::Unreachable(root));
    }
    let tol = tie_tol(best, j);
    let (z, map) = priced
        .into_iter()
        .find(|(c, _)| *c <= best + tol)
        .expect("minimum is attained");
    Ok((z, map))
}

/// Optimal in-arborescence cost for `allowed[m][n]` edge costs `m -> n`.
fn arborescence_value(allowed: &[Vec<f64>], root: usize) -> Option<f64> {
    let mut n = allowed.len();
    let mut root = root;
    // in-arborescence on m -> n is an out-arborescence on n -> m
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    for (m, row) in allowed.iter().enumerate() {
        for (k, &w) in row.iter().enumerate() {
            if m != k && m != root && w.is_finite() {
                edges.push((k, m, w));
            }
        }
    }
    let mut total = 0.0;
    loop {
        let mut in_w = vec![f64::INFINITY; n];
        let mut pre = vec![usize::MAX; n];
        for &(u, v, w) in &edges {
            if u != v && w < in_w[v] {
                in_w[v] = w;
                pre[v] = u;
            }
        }
        if (0..n).any(|v| v != root && !in_w[v].is_finite()) {
            return None;
        }
        in_w[root] = 0.0;
        let mut id = vec![usize::MAX; n];
        let mut seen = vec![usize::MAX; n];
        let mut count = 0;
        for v in 0..n {
            total += in_w[v];
            let mut u = v;
            while seen[u] != v && id[u] == usize::MAX && u != root {
                seen[u] = v;
                u = pre[u];
            }
            if u != root && id[u] == usize::MAX {
                let mut x = pre[u];
                while x != u {
                    id[x] = count;
                    x = pre[x];
                }
                id[u] = count;
                count += 1;
            }
        }
        if count == 0 {
            return Some(total);
        }
        for slot in id.iter_mut() {
            if *slot == usize::MAX {
                *slot = count;
                count += 1;
            }
        }
        edges = edges
            .into_iter()
            .filter_map(|(u, v, w)| {
                let (cu, cv) = (id[u], id[v]);
                (cu != cv).then(|| (cu, cv, w - in_w[v]))
            })
            .collect();
        n = count;
        root = id[root];
    }
}

fn dense(costs: &CostMatrix) -> Vec<Vec<f64>> {
    costs
        .rows()
        .iter()
        .map(|r| r.iter().map(|v| v.unwrap_or(f64::INFINITY)).collect())
        .collect()
}

/// Chu-Liu/Edmonds minimum. The optimum value costs `O(J^3)`; resolving ties to the
/// lexicographically smallest map re-solves with one parent pinned at a time.
pub fn z_value_edmonds(costs: &CostMatrix, root: usize) -> Result<(f64, EdgeMap), GraphError> {
    let j = costs.len();
    check_root(j, root)?;
    let mut allowed = dense(costs);
    let best = arborescence_value(&allowed, root).ok_or(GraphError::Unreachable(root))?;
    let tol = tie_tol(best, j);
    let mut parent = vec![None; j];
    for m in (0..j).filter(|&m| m != root) {
        let row = allowed[m].clone();
        let mut fixed = false;
        for n in (0..j).filter(|&n| n != m && row[n].is_finite()) {
            let mut pinned = vec![f64::INFINITY; j];
            pinned[n] = row[n];
            allowed[m] = pinned;
            if arborescence_value(&allowed, root).is_some_and(|v| v <= best + tol) {
                parent[m] = Some(n);
                fixed = true;
                break;
            }
        }
        if !fixed {
            return Err(GraphError::Invalid(format!("could not resolve the optimal edge of node {m}")));
        }
    }
    let map = EdgeMap { root, parent };
    let z = map.cost(costs).ok_or(GraphError::Unreachable(root))?;
    Ok((z, map))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphResult {
    /// `Z(x_i)`, `None` where no finite i-graph exists.
    pub z: Vec<Option<f64>>,
    pub edge_maps: Vec<Option<EdgeMap>>,
    /// `Z_i - min_j Z_j`.
    pub w: Vec<Option<f64>>,
}

/// `Z` for every root and `W_i = Z_i - min_j Z_j`.
pub fn equilibrium_potentials(costs: &CostMatrix) -> Result<GraphResult, GraphError> {
    let j = costs.len();
    let per_root: Vec<Option<(f64, EdgeMap)>> = (0..j)
        .into_par_iter()
        .map(|i| match z_value_edmonds(costs, i) {
            Ok(r) => Ok(Some(r)),
            Err(GraphError::Unreachable(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_, _>>()?;
    let z: Vec<Option<f64>> = per_root.iter().map(|r| r.as_ref().map(|(z, _)| *z)).collect();
    let min = z.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(GraphError::AllUnreachable);
    }
    Ok(GraphResult {
        w: z.iter().map(|v| v.map(|v| v - min)).collect(),
        edge_maps: per_root.into_iter().map(|r| r.map(|(_, m)| m)).collect(),
        z,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub source: usize,
    /// Cost of reaching the point from the source.
    pub v: f64,
    pub w_source: f64,
    pub total: f64,
    pub converged: bool,
    pub horizon_limited: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalValue {
    pub x: Vec<f64>,
    pub value: f64,
    /// Index into the equilibrium list of the minimizing branch.
    pub argmin: usize,
    pub branches: Vec<Branch>,
}

/// `W(x) = min_i [V_i(x) + W_i]` over stable equilibria with finite `W_i`.
pub fn assemble_global_w(
    system: &SystemSpec,
    equilibria: &[Equilibrium],
    w_i: &[Option<f64>],
    x: &[f64],
    opts: &MamOptions,
) -> Result<GlobalValue, GraphError> {
    if equilibria.len() != w_i.len() {
        return Err(GraphError::Invalid(format!(
            "{} equilibria but {} potentials",
            equilibria.len(),
            w_i.len()
        )));
    }
    let sources: Vec<(usize, f64)> = equilibria
        .iter()
        .zip(w_i)
        .enumerate()
        .filter_map(|(k, (e, w))| w.filter(|_| e.is_stable()).map(|w| (k, w)))
        .collect();
    if sources.is_empty() {
        return Err(GraphError::AllUnreachable);
    }
    let branches: Vec<Branch> = crate::parallel::install(|| {
        sources
            .par_iter()
            .map(|&(k, w)| {
                let r = quasipotential(system, &equilibria[k].location, x, opts)?;
                Ok(Branch {
                    source: k,
                    v: r.value,
                    w_source: w,
                    total: r.value + w,
                    converged: r.converged,
                    horizon_limited: r.horizon_limited,
                })
            })
            .collect::<Result<Vec<_>, MamError>>()
    })?;
    let best = branches
        .iter()
        .fold(&branches[0], |b, c| if c.total < b.total { c } else { b });
    Ok(GlobalValue {
        x: x.to_vec(),
        value: best.total,
        argmin: best.source,
        branches: branches.clone(),
    })
}
