//! Command dispatch and artifact writing.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::config::{Command, ExperimentConfig};
use crate::action::format_float;
use crate::dynamics::{check_assumptions, find_equilibria, Equilibrium, SystemDescriptor, SystemSpec, TestFunction};
use crate::graph::equilibrium_potentials;
use crate::hjb::{sweep_solve, Grid, HjbError};
use crate::mam::{cost_to_go_check, dp_split_check, minimize_action_fixed_t, pair_cost_matrix, quasipotential, quasipotential_field};
use crate::sde::{ball_measure, estimate_invariant_density, generator_average, log_transform, simulate_em};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Manifest {
    pub command: String,
    /// `ok` or `FAILED`.
    pub status: String,
    pub failures: Vec<String>,
    pub files: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub manifest: Option<Manifest>,
    /// `(label, value)` rows of the summary table.
    pub summary: Vec<(String, String)>,
    pub error: Option<String>,
}

impl RunOutcome {
    /// Fixed-width two-column table.
    pub fn render_summary(&self) -> String {
        let width = self.summary.iter().map(|(k, _)| k.len()).max().unwrap_or(0).max(12);
        let mut out = String::new();
        for (k, v) in &self.summary {
            out.push_str(&format!("{k:<width$}  {v}\n"));
        }
        out
    }
}

/// Collects artifacts and failure flags for one run.
struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
    failures: Vec<String>,
    summary: Vec<(String, String)>,
}

impl Artifacts {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), String> {
        fs::write(self.dir.join(name), bytes).map_err(|e| format!("writing {name}: {e}"))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), String> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<(), String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).map_err(|e| e.to_string())?;
        for r in rows {
            w.write_record(r).map_err(|e| e.to_string())?;
        }
        let bytes = w.into_inner().map_err(|e| e.to_string())?;
        self.write(name, &bytes)
    }

    fn fail(&mut self, reason: impl Into<String>) {
        let r = reason.into();
        log::warn!("{r}");
        self.failures.push(r);
    }

    fn row(&mut self, label: impl Into<String>, value: impl ToString) {
        self.summary.push((label.into(), value.to_string()));
    }
}

fn opt_float(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

fn axis_header(d: usize) -> Vec<String> {
    (1..=d).map(|k| format!("x{k}")).collect()
}

fn point_cells(x: &[f64]) -> Vec<String> {
    x.iter().copied().map(format_float).collect()
}

fn fmt_point(x: &[f64]) -> String {
    let parts: Vec<String> = x.iter().map(|v| format!("{v:.4}")).collect();
    format!("({})", parts.join(", "))
}

/// Prepares the output directory, refusing to replace one without `overwrite`. Only directories
/// that are empty or hold a previous run's manifest are ever cleared.
fn prepare_dir(dir: &Path, overwrite: bool) -> Result<(), String> {
    if dir.exists() {
        if !overwrite {
            return Err(format!("output directory {} exists; pass --overwrite to replace it", dir.display()));
        }
        let empty = fs::read_dir(dir).map_err(|e| e.to_string())?.next().is_none();
        if !empty && !dir.join("manifest.json").is_file() {
            return Err(format!(
                "refusing to overwrite {}: it is not empty and holds no manifest.json",
                dir.display()
            ));
        }
        fs::remove_dir_all(dir).map_err(|e| e.to_string())?;
    }
    fs::create_dir_all(dir).map_err(|e| format!("creating {}: {e}", dir.display()))
}

fn system_label(system: &SystemSpec) -> String {
    match system.descriptor() {
        SystemDescriptor::Named(n) => n.name.clone(),
        SystemDescriptor::Custom(_) => "custom".to_string(),
    }
}

fn stable_points(eq: &[Equilibrium]) -> Vec<Vec<f64>> {
    eq.iter().filter(|e| e.is_stable()).map(|e| e.location.clone()).collect()
}

fn default_source(system: &SystemSpec, config: &ExperimentConfig) -> Result<Vec<f64>, String> {
    let o = config.equilibria_options();
    let eq = find_equilibria(system, o.n_starts, o.tol).map_err(|e| e.to_string())?;
    stable_points(&eq)
        .into_iter()
        .next()
        .ok_or_else(|| "no stable equilibrium to use as source".to_string())
}

/// Executes the configured command.
pub fn run(config: &ExperimentConfig) -> RunOutcome {
    let system = match config.validate() {
        Ok(s) => s,
        Err(e) => {
            return RunOutcome {
                exit_code: EXIT_CONFIG,
                manifest: None,
                summary: Vec::new(),
                error: Some(e.to_string()),
            }
        }
    };
    let dir = PathBuf::from(&config.out);
    if let Err(e) = prepare_dir(&dir, config.overwrite) {
        return RunOutcome {
            exit_code: EXIT_CONFIG,
            manifest: None,
            summary: Vec::new(),
            error: Some(e),
        };
    }
    let mut art = Artifacts {
        dir,
        files: Vec::new(),
        failures: Vec::new(),
        summary: Vec::new(),
    };
    art.row("command", config.command);
    art.row("system", system_label(&system));
    art.row("seed", config.seed);
    let result = match config.command {
        Command::Equilibria => cmd_equilibria(&system, config, &mut art),
        Command::Quasipotential => cmd_quasipotential(&system, config, &mut art),
        Command::Hjb => cmd_hjb(&system, config, &mut art),
        Command::Simulate => cmd_simulate(&system, config, &mut art),
        Command::Compare => cmd_compare(&system, config, &mut art),
        Command::Multiwell => cmd_multiwell(&system, config, &mut art),
    };
    if let Err(e) = result {
        art.fail(e);
    }
    finish(config.command, art)
}

fn finish(command: Command, mut art: Artifacts) -> RunOutcome {
    art.files.sort();
    let mut files = Vec::new();
    for name in &art.files {
        match fs::read(art.dir.join(name)) {
            Ok(bytes) => files.push(ManifestEntry {
                path: name.clone(),
                sha256: hex::encode(Sha256::digest(&bytes)),
                bytes: bytes.len() as u64,
            }),
            Err(e) => art.failures.push(format!("reading back {name}: {e}")),
        }
    }
    let ok = art.failures.is_empty();
    let manifest = Manifest {
        command: command.name().to_string(),
        status: if ok { "ok" } else { "FAILED" }.to_string(),
        failures: art.failures.clone(),
        files,
    };
    let mut error = None;
    match serde_json::to_string_pretty(&manifest) {
        Ok(mut text) => {
            text.push('\n');
            if let Err(e) = fs::write(art.dir.join("manifest.json"), text) {
                error = Some(format!("writing manifest.json: {e}"));
            }
        }
        Err(e) => error = Some(e.to_string()),
    }
    art.row("status", &manifest.status);
    for f in &art.failures {
        art.summary.push(("failure".into(), f.clone()));
    }
    RunOutcome {
        exit_code: if ok && error.is_none() { EXIT_OK } else { EXIT_NUMERICAL },
        manifest: Some(manifest),
        summary: art.summary,
        error,
    }
}

fn cmd_equilibria(system: &SystemSpec, config: &ExperimentConfig, art: &mut Artifacts) -> Result<(), String> {
    let o = config.equilibria_options();
    let (list, status) = match find_equilibria(system, o.n_starts, o.tol) {
        Ok(eq) => (eq, "found".to_string()),
        Err(e) => {
            art.fail(e.to_string());
            (Vec::new(), "none".to_string())
        }
    };
    art.json("equilibria.json", &json!({ "status": status, "equilibria": list }))?;
    let report = check_assumptions(system, o.alpha, o.beta, o.n_samples, config.seed);
    art.json("assumptions.json", &report)?;
    art.row("equilibria", list.len());
    for e in &list {
        art.row(format!("  {}", fmt_point(&e.location)), format!("{:?}", e.kind).to_lowercase());
    }
    art.row("lambda_hat", format!("{:.6}", report.lambda_hat));
    art.row("Lambda_hat", format!("{:.6}", report.big_lambda_hat));
    Ok(())
}

fn cmd_quasipotential(system: &SystemSpec, config: &ExperimentConfig, art: &mut Artifacts) -> Result<(), String> {
    let q = config.quasipotential_options();
    let opts = config.mam_options();
    let from = match q.from.clone() {
        Some(f) => f,
        None => default_source(system, config)?,
    };
    art.row("from", fmt_point(&from));
    let mut records = Vec::new();
    for (k, target) in q.targets.iter().enumerate() {
        let r = match q.fixed_horizon {
            Some(t) => minimize_action_fixed_t(system, &from, target, t, &opts),
            None => quasipotential(system, &from, target, &opts),
        }
        .map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        r.path.write_csv(&mut buf).map_err(|e| e.to_string())?;
        let name = format!("path_{k}.csv");
        art.write(&name, &buf)?;
        let ctg = cost_to_go_check(system, &r);
        let split = if r.value > 0.0 && r.path.segments() >= 4 && q.fixed_horizon.is_none() {
            Some(dp_split_check(system, &r, r.path.segments() / 2, &opts).map_err(|e| e.to_string())?)
        } else {
            None
        };
        if !r.converged {
            art.fail(format!("target {k}: optimizer did not converge"));
        }
        if r.horizon_limited {
            art.fail(format!("target {k}: horizon-limited"));
        }
        art.row(format!("W {}", fmt_point(target)), format!("{:.6}  (T = {})", r.value, r.best_t));
        records.push(json!({
            "target": target,
            "path_file": name,
            "result": r,
            "cost_to_go": { "monotone": ctg.monotone, "max_increase": ctg.max_increase },
            "dp_split": split,
        }));
    }
    art.json("quasipotential.json", &json!({ "from": from, "results": records }))
}

fn cmd_hjb(system: &SystemSpec, config: &ExperimentConfig, art: &mut Artifacts) -> Result<(), String> {
    let h = config.hjb_options();
    let sources = match h.sources.clone() {
        Some(s) => s,
        None => {
            let o = config.equilibria_options();
            stable_points(&find_equilibria(system, o.n_starts, o.tol).map_err(|e| e.to_string())?)
        }
    };
    let grid = Grid::new(system.domain(), h.h, &sources).map_err(|e| e.to_string())?;
    let sol = sweep_solve(system, &grid, h.tol, h.max_sweeps).map_err(|e| e.to_string())?;
    let mut buf = Vec::new();
    sol.write_csv(&mut buf).map_err(|e| e.to_string())?;
    art.write("hjb.csv", &buf)?;
    art.json("hjb.json", &sol.summary())?;
    if !sol.converged {
        art.fail(format!("sweeps did not converge (max delta {:.3e})", sol.max_delta));
    }
    art.row("nodes", grid.len());
    art.row("sweeps", sol.sweeps);
    art.row("residual", format!("{:.3e}", sol.residual));
    art.row("max |a grad W|", format!("{:.6}", sol.control_radius));
    Ok(())
}

fn cmd_simulate(system: &SystemSpec, config: &ExperimentConfig, art: &mut Artifacts) -> Result<(), String> {
    let sim = config.sim_options();
    let s = config.simulate_options();
    let warnings: Vec<String> = sim.stability_warning(system).into_iter().collect();
    let bins = vec![s.bins; system.dim()];
    let est = estimate_invariant_density(system, &sim, &bins).map_err(|e| e.to_string())?;
    let log = log_transform(&est);
    let mut buf = Vec::new();
    est.write_csv(&mut buf, &log).map_err(|e| e.to_string())?;
    art.write("density.csv", &buf)?;
    art.json(
        "density.json",
        &json!({
            "eps": est.eps, "dt": est.dt, "steps": sim.steps, "burn_in_steps": est.burn_in_steps,
            "retained": est.retained, "escapes": est.escapes, "escape_fraction": est.escape_fraction(),
            "reliable": est.reliable, "bins": est.bins, "warnings": warnings,
        }),
    )?;
    if !est.reliable {
        art.fail(format!("escape fraction {:.4} exceeds 5%", est.escape_fraction()));
    }
    let mut stationarity = Vec::new();
    for (name, f) in [("squared_norm", TestFunction::SquaredNorm), ("gaussian", TestFunction::Gaussian)] {
        let avg = generator_average(system, &sim, &f).map_err(|e| e.to_string())?;
        let within = avg.mean.abs() <= 3.0 * avg.standard_error;
        art.row(format!("mean L f ({name})"), format!("{:.3e} +- {:.1e}", avg.mean, avg.standard_error));
        stationarity.push(json!({ "test_function": name, "mean": avg.mean, "standard_error": avg.standard_error, "within_3_se": within }));
    }
    art.json("stationarity.json", &stationarity)?;
    if s.trajectory_every > 0 {
        let states = simulate_em(system, &sim, s.trajectory_every).map_err(|e| e.to_string())?;
        let mut header = vec!["t".to_string()];
        header.extend(axis_header(system.dim()));
        let rows: Vec<Vec<String>> = states
            .iter()
            .enumerate()
            .map(|(k, x)| {
                let mut r = vec![format_float(k as f64 * s.trajectory_every as f64 * sim.dt)];
                r.extend(point_cells(x));
                r
            })
            .collect();
        art.csv("trajectory.csv", &header, &rows)?;
    }
    art.row("retained samples", est.retained);
    art.row("escape fraction", format!("{:.3e}", est.escape_fraction()));
    Ok(())
}

fn cmd_compare(system: &SystemSpec, config: &ExperimentConfig, art: &mut Artifacts) -> Result<(), String> {
    let c = config.compare_options();
    let source = match c.source.clone() {
        Some(s) => s,
        None => default_source(system, config)?,
    };
    let mam = quasipotential_field(system, &source, &c.probes, &config.mam_options()).map_err(|e| e.to_string())?;
    for f in mam.iter().filter(|f| !f.converged) {
        art.fail(format!("path solver did not converge at {}", fmt_point(&f.x)));
    }
    let h = config.hjb_options();
    let grid = Grid::new(system.domain(), h.h, std::slice::from_ref(&source)).map_err(|e| e.to_string())?;
    let hjb = match sweep_solve(system, &grid, h.tol, h.max_sweeps) {
        Ok(sol) => {
            if !sol.converged {
                art.fail("grid sweeps did not converge");
            }
            Some(sol)
        }
        Err(e @ HjbError::NonDiagonalDiffusion) => {
            art.row("grid solver", e.to_string());
            None
        }
        Err(e) => return Err(e.to_string()),
    };
    let mc = if c.monte_carlo.unwrap_or(true) {
        let sim = config.sim_options();
        let bins = vec![config.simulate_options().bins; system.dim()];
        let est = estimate_invariant_density(system, &sim, &bins).map_err(|e| e.to_string())?;
        if !est.reliable {
            art.fail(format!("escape fraction {:.4} exceeds 5%", est.escape_fraction()));
        }
        Some(log_transform(&est))
    } else {
        None
    };
    let mut header = axis_header(system.dim());
    header.extend(["W_mam", "W_hjb", "W_mc"].map(String::from));
    let mut rows = Vec::new();
    let mut max_disc = 0.0f64;
    for f in &mam {
        let w_hjb = hjb.as_ref().and_then(|s| s.interpolate(&f.x));
        let w_mc = mc.as_ref().and_then(|l| l.at(&f.x)).map(|(w, _)| w);
        let vals: Vec<f64> = [Some(f.value), w_hjb, w_mc].into_iter().flatten().collect();
        for a in &vals {
            for b in &vals {
                max_disc = max_disc.max((a - b).abs());
            }
        }
        let mut r = point_cells(&f.x);
        r.extend([format_float(f.value), opt_float(w_hjb), opt_float(w_mc)]);
        rows.push(r);
    }
    art.csv("compare.csv", &header, &rows)?;
    art.json(
        "compare.json",
        &json!({ "source": source, "eps": config.sim_options().eps, "max_discrepancy": max_disc, "probes": c.probes.len() }),
    )?;
    art.row("probes", c.probes.len());
    art.row("max discrepancy", format!("{max_disc:.6}"));
    Ok(())
}

fn cmd_multiwell(system: &SystemSpec, config: &ExperimentConfig, art: &mut Artifacts) -> Result<(), String> {
    let o = config.equilibria_options();
    let m = config.multiwell_options();
    let opts = config.mam_options();
    let all = find_equilibria(system, o.n_starts, o.tol).map_err(|e| e.to_string())?;
    let nodes: Vec<Equilibrium> = all.iter().filter(|e| !m.stable_only || e.is_stable()).cloned().collect();
    art.json("equilibria.json", &json!({ "stable_only": m.stable_only, "equilibria": nodes }))?;
    if nodes.is_empty() {
        return Err("no equilibria for the graph".into());
    }
    let pairs = pair_cost_matrix(system, &nodes, &opts).map_err(|e| e.to_string())?;
    let mut buf = Vec::new();
    pairs.matrix.write_csv(&mut buf).map_err(|e| e.to_string())?;
    art.write("costmatrix.csv", &buf)?;
    art.json("pairs.json", &json!({ "provisional": pairs.provisional, "entries": pairs.entries }))?;
    if pairs.provisional {
        art.fail("cost matrix is provisional: some transition did not converge");
    }
    let graph = equilibrium_potentials(&pairs.matrix).map_err(|e| e.to_string())?;
    art.json("graph.json", &graph)?;
    for (e, (z, w)) in nodes.iter().zip(graph.z.iter().zip(&graph.w)) {
        art.row(
            format!("Z, W_i at {}", fmt_point(&e.location)),
            format!("{}, {}", z.map_or("unreachable".into(), |v| format!("{v:.6}")), w.map_or("-".into(), |v| format!("{v:.6}"))),
        );
    }
    if !m.points.is_empty() {
        let mut header = axis_header(system.dim());
        header.extend(["W", "source"].map(String::from));
        let mut rows = Vec::new();
        for x in &m.points {
            let g = crate::graph::assemble_global_w(system, &nodes, &graph.w, x, &opts).map_err(|e| e.to_string())?;
            if g.branches.iter().any(|b| !b.converged) {
                art.fail(format!("global W at {}: a branch did not converge", fmt_point(x)));
            }
            let mut r = point_cells(x);
            r.extend([format_float(g.value), g.argmin.to_string()]);
            rows.push(r);
        }
        art.csv("global_w.csv", &header, &rows)?;
    }
    if m.simulate {
        let sim = config.sim_options();
        let centers: Vec<Vec<f64>> = nodes.iter().map(|e| e.location.clone()).collect();
        let balls = ball_measure(system, &sim, &centers, m.rho1).map_err(|e| e.to_string())?;
        let verdict = exponent_order_matches(&graph.w, &balls.balls.iter().map(|b| (b.exponent, b.lower_bound)).collect::<Vec<_>>());
        art.json("balls.json", &json!({ "measure": balls, "ordering_matches": verdict }))?;
        art.row("exponent ordering", if verdict { "matches W_i" } else { "MISMATCH" });
        if !verdict {
            art.fail("ball exponents are not ordered like W_i");
        }
    }
    Ok(())
}

/// Whether `W_i < W_j` implies a smaller exponent at `i` for every pair. An exponent that is only
/// a lower bound cannot witness being smaller.
pub fn exponent_order_matches(w: &[Option<f64>], exponents: &[(f64, bool)]) -> bool {
    let n = w.len().min(exponents.len());
    (0..n).all(|i| {
        (0..n).all(|j| match (w[i], w[j]) {
            (Some(wi), Some(wj)) if wi < wj => {
                let (ei, lower_i) = exponents[i];
                let (ej, _) = exponents[j];
                !lower_i && ei < ej
            }
            _ => true,
        })
    })
}
