//! The `qp` command-line driver.

pub mod config;
pub mod run;

use std::path::PathBuf;

use clap::Parser;

pub use config::{parse_config, parse_with_overrides, Command, ConfigErrors, ExperimentConfig};
pub use run::{run, Manifest, ManifestEntry, RunOutcome, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK};

#[derive(Debug, Parser)]
#[command(name = "qp", about = "Quasipotential experiments driven by a JSON config")]
struct Args {
    /// One of: equilibria, quasipotential, hjb, simulate, compare, multiwell.
    command: String,
    /// Path to the experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Replace an existing output directory from a previous run.
    #[arg(long)]
    overwrite: bool,
}

/// Splits `--a.b value` / `--a.b=value` overrides from the arguments clap should see.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), String> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(key) = a.strip_prefix("--").filter(|k| k.contains('.')) else {
            rest.push(a);
            continue;
        };
        match key.split_once('=') {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => {
                let v = it.next().ok_or_else(|| format!("override --{key} needs a value"))?;
                overrides.push((key.to_string(), v));
            }
        }
    }
    Ok((rest, overrides))
}

/// Runs the CLI and returns the process exit code.
pub fn main_with_args(args: Vec<String>) -> i32 {
    let (rest, overrides) = match split_overrides(args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let parsed = match Args::try_parse_from(rest) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let Some(command) = Command::parse(&parsed.command) else {
        eprintln!("config error: unknown command `{}`", parsed.command);
        return EXIT_CONFIG;
    };
    let text = match std::fs::read_to_string(&parsed.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("config error: reading {}: {e}", parsed.config.display());
            return EXIT_CONFIG;
        }
    };
    let mut config = match parse_with_overrides(&text, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    if config.command != command {
        eprintln!(
            "config error: command `{command}` does not match the config's command `{}`",
            config.command
        );
        return EXIT_CONFIG;
    }
    config.overwrite |= parsed.overwrite;
    let outcome = run(&config);
    print!("{}", outcome.render_summary());
    if let Some(e) = &outcome.error {
        eprintln!("error: {e}");
    }
    outcome.exit_code
}
