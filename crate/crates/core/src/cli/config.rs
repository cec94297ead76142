//! Experiment configuration: strict JSON with dotted-path overrides.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dynamics::{SystemDescriptor, SystemSpec};
use crate::mam::MamOptions;
use crate::sde::SimOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Equilibria,
    Quasipotential,
    Hjb,
    Simulate,
    Compare,
    Multiwell,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::Equilibria,
        Command::Quasipotential,
        Command::Hjb,
        Command::Simulate,
        Command::Compare,
        Command::Multiwell,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Equilibria => "equilibria",
            Command::Quasipotential => "quasipotential",
            Command::Hjb => "hjb",
            Command::Simulate => "simulate",
            Command::Compare => "compare",
            Command::Multiwell => "multiwell",
        }
    }

    pub fn parse(name: &str) -> Option<Command> {
        Command::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquilibriaOptions {
    pub n_starts: usize,
    pub tol: f64,
    pub alpha: f64,
    pub beta: f64,
    pub n_samples: usize,
}

impl Default for EquilibriaOptions {
    fn default() -> Self {
        EquilibriaOptions {
            n_starts: 64,
            tol: 1e-10,
            alpha: 1.0,
            beta: 1.0,
            n_samples: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct QuasipotentialOptions {
    /// Defaults to the first stable equilibrium.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub from: Option<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    /// Solve at this single horizon instead of the ladder.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HjbOptions {
    pub h: f64,
    pub tol: f64,
    pub max_sweeps: usize,
    /// Defaults to the stable equilibria.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sources: Option<Vec<Vec<f64>>>,
}

impl Default for HjbOptions {
    fn default() -> Self {
        HjbOptions {
            h: 0.01,
            tol: 1e-10,
            max_sweeps: 500,
            sources: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateOptions {
    /// Histogram bins per axis.
    pub bins: usize,
    /// Keep every n-th state in `trajectory.csv`; 0 writes no trajectory.
    pub trajectory_every: u64,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        SimulateOptions {
            bins: 100,
            trajectory_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct CompareOptions {
    /// Defaults to the first stable equilibrium.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<Vec<f64>>,
    pub probes: Vec<Vec<f64>>,
    /// Also run the Monte Carlo estimate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultiwellOptions {
    /// Build the graph on stable equilibria only.
    pub stable_only: bool,
    /// Ball radius for the simulated exponent check.
    pub rho1: f64,
    /// Run the simulated exponent-ordering check.
    pub simulate: bool,
    /// Points at which to assemble the global `W`.
    pub points: Vec<Vec<f64>>,
}

impl Default for MultiwellOptions {
    fn default() -> Self {
        MultiwellOptions {
            stable_only: true,
            rho1: 0.2,
            simulate: false,
            points: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemDescriptor,
    pub command: Command,
    pub out: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub overwrite: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equilibria: Option<EquilibriaOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mam: Option<MamOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quasipotential: Option<QuasipotentialOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hjb: Option<HjbOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multiwell: Option<MultiwellOptions>,
}

/// Field-level problems found before any computation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, e) in self.0.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            write!(f, "config error: {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

impl ExperimentConfig {
    pub fn equilibria_options(&self) -> EquilibriaOptions {
        self.equilibria.clone().unwrap_or_default()
    }

    pub fn mam_options(&self) -> MamOptions {
        MamOptions {
            seed: self.seed,
            ..self.mam.clone().unwrap_or_default()
        }
    }

    pub fn sim_options(&self) -> SimOptions {
        SimOptions {
            seed: self.seed,
            ..self.sim.clone().unwrap_or_default()
        }
    }

    pub fn hjb_options(&self) -> HjbOptions {
        self.hjb.clone().unwrap_or_default()
    }

    pub fn simulate_options(&self) -> SimulateOptions {
        self.simulate.clone().unwrap_or_default()
    }

    pub fn quasipotential_options(&self) -> QuasipotentialOptions {
        self.quasipotential.clone().unwrap_or_default()
    }

    pub fn compare_options(&self) -> CompareOptions {
        self.compare.clone().unwrap_or_default()
    }

    pub fn multiwell_options(&self) -> MultiwellOptions {
        self.multiwell.clone().unwrap_or_default()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Every semantic problem, in a fixed order.
    pub fn validate(&self) -> Result<SystemSpec, ConfigErrors> {
        let mut errs = Vec::new();
        let system = match SystemSpec::from_descriptor(&self.system) {
            Ok(s) => Some(s),
            Err(e) => {
                errs.push(format!("system: {e}"));
                None
            }
        };
        let d = system.as_ref().map(SystemSpec::dim);
        let mut point = |field: &str, p: &[f64]| {
            if let Some(d) = d {
                if p.len() != d {
                    errs.push(format!("{field}: point {p:?} has dimension {}, system has {d}", p.len()));
                }
            }
            if p.iter().any(|v| !v.is_finite()) {
                errs.push(format!("{field}: point {p:?} is not finite"));
            }
        };
        if let Some(q) = &self.quasipotential {
            if let Some(f) = &q.from {
                point("quasipotential.from", f);
            }
            for t in &q.targets {
                point("quasipotential.targets", t);
            }
        }
        if let Some(h) = &self.hjb {
            for s in h.sources.iter().flatten() {
                point("hjb.sources", s);
            }
        }
        if let Some(c) = &self.compare {
            if let Some(s) = &c.source {
                point("compare.source", s);
            }
            for p in &c.probes {
                point("compare.probes", p);
            }
        }
        if let Some(m) = &self.multiwell {
            for p in &m.points {
                point("multiwell.points", p);
            }
        }
        if let Some(x0) = self.sim.as_ref().and_then(|s| s.x0.as_ref()) {
            point("sim.x0", x0);
        }
        if self.out.trim().is_empty() {
            errs.push("out: must name a directory".into());
        }
        let e = self.equilibria_options();
        if e.n_starts == 0 {
            errs.push("equilibria.n_starts: must be positive".into());
        }
        if !(e.tol > 0.0) {
            errs.push("equilibria.tol: must be positive".into());
        }
        if !(e.alpha > 0.0) {
            errs.push("equilibria.alpha: must be positive".into());
        }
        if !(e.beta > 0.0 && e.beta <= 1.0) {
            errs.push("equilibria.beta: must lie in (0, 1]".into());
        }
        if let Err(err) = self.mam_options().validate() {
            errs.push(format!("mam: {err}"));
        }
        if let Err(err) = self.sim_options().validate() {
            errs.push(format!("sim: {err}"));
        }
        let h = self.hjb_options();
        if !(h.h.is_finite() && h.h > 0.0) {
            errs.push("hjb.h: must be positive".into());
        }
        if !(h.tol > 0.0) {
            errs.push("hjb.tol: must be positive".into());
        }
        if h.max_sweeps == 0 {
            errs.push("hjb.max_sweeps: must be positive".into());
        }
        if self.simulate_options().bins == 0 {
            errs.push("simulate.bins: must be positive".into());
        }
        let m = self.multiwell_options();
        if !(m.rho1.is_finite() && m.rho1 > 0.0) {
            errs.push("multiwell.rho1: must be positive".into());
        }
        if self.quasipotential.as_ref().and_then(|q| q.fixed_horizon).is_some_and(|t| !(t.is_finite() && t > 0.0)) {
            errs.push("quasipotential.fixed_horizon: must be positive".into());
        }
        match self.command {
            Command::Quasipotential if self.quasipotential_options().targets.is_empty() => {
                errs.push("quasipotential.targets: required for the quasipotential command".into());
            }
            Command::Compare if self.compare_options().probes.is_empty() => {
                errs.push("compare.probes: required for the compare command".into());
            }
            Command::Hjb | Command::Compare | Command::Simulate if d.is_some_and(|d| d > 2) => {
                errs.push(format!("command {}: supports dimension 1 or 2 only", self.command));
            }
            _ => {}
        }
        match (errs.is_empty(), system) {
            (true, Some(s)) => Ok(s),
            _ => Err(ConfigErrors(errs)),
        }
    }
}

/// Strict parse plus validation.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigErrors> {
    parse_with_overrides(text, &[])
}

/// Applies `(dotted.path, value)` overrides to the JSON before the strict parse. Values that parse
/// as JSON are used as such, anything else as a string.
pub fn parse_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<ExperimentConfig, ConfigErrors> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| ConfigErrors(vec![format!("invalid JSON: {e}")]))?;
    let mut errs = Vec::new();
    for (path, raw) in overrides {
        if let Err(e) = set_path(&mut value, path, raw) {
            errs.push(e);
        }
    }
    if !errs.is_empty() {
        return Err(ConfigErrors(errs));
    }
    let config: ExperimentConfig = serde_json::from_value(value).map_err(|e| ConfigErrors(vec![e.to_string()]))?;
    config.validate()?;
    Ok(config)
}

fn set_path(root: &mut Value, path: &str, raw: &str) -> Result<(), String> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(format!("override `{path}`: empty key"));
    }
    let parsed = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for (depth, key) in keys.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| format!("override `{path}`: `{}` is not an object", keys[..depth].join(".")))?;
        if depth + 1 == keys.len() {
            obj.insert(key.to_string(), parsed);
            return Ok(());
        }
        node = obj
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config() {
        let c = parse_config(r#"{"system":"ou1d","command":"equilibria","out":"run1"}"#).unwrap();
        assert_eq!(c.command, Command::Equilibria);
        assert_eq!(c.out, "run1");
        assert_eq!(c.seed, 0);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = parse_config(r#"{"system":"ou1d","command":"simulate","out":"r","sim":{"epsilonn":0.2}}"#).unwrap_err();
        assert!(e.to_string().contains("epsilonn"), "{e}");
        let e = parse_config(r#"{"system":"ou1d","command":"simulate","out":"r","epsilonn":0.2}"#).unwrap_err();
        assert!(e.to_string().contains("epsilonn"), "{e}");
    }

    #[test]
    fn missing_field_is_named() {
        let e = parse_config(r#"{"system":"ou1d","out":"r"}"#).unwrap_err();
        assert!(e.to_string().contains("command"), "{e}");
    }

    #[test]
    fn round_trip_is_identity() {
        let text = r#"{
            "system": {"dimension":1,"drift":["x1 - x1^3"],"sigma":"identity","box":[[-2.5,2.5]]},
            "command": "compare", "out": "cmp", "seed": 42,
            "mam": {"n_nodes": 120, "horizons": [1, 4, 16]},
            "sim": {"eps": 0.2, "steps": 10000},
            "compare": {"probes": [[0.5], [1.0]]}
        }"#;
        let a = parse_config(text).unwrap();
        let b = parse_config(&a.to_json()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn overrides_apply_before_validation() {
        let base = r#"{"system":"ou1d","command":"simulate","out":"r"}"#;
        let c = parse_with_overrides(base, &[("sim.eps".into(), "0.2".into()), ("seed".into(), "5".into())]).unwrap();
        assert_eq!(c.sim_options().eps, 0.2);
        assert_eq!(c.sim_options().seed, 5);
        let e = parse_with_overrides(base, &[("sim.epz".into(), "0.2".into())]).unwrap_err();
        assert!(e.to_string().contains("epz"));
    }

    #[test]
    fn semantic_errors_are_collected() {
        let e = parse_config(
            r#"{"system":"ou1d","command":"quasipotential","out":"r","hjb":{"h":-1},"mam":{"horizons":[2,1]}}"#,
        )
        .unwrap_err();
        assert_eq!(e.0.len(), 3, "{e}");
    }

    #[test]
    fn block_seeds_are_rejected() {
        assert!(parse_config(r#"{"system":"ou1d","command":"simulate","out":"r","sim":{"seed":3}}"#).is_err());
    }
}
