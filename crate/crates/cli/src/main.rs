// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod error;
mod run;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use config::{expand, parse_config, parse_override, RunSpec};
use error::{CliError, Result};
use run::{execute, prepare, Experiment, Prepared, RunOutput};

const OUTPUT_ENV: &str = "QNDSIM_OUTPUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "qndsim", version, about = "Pulsed QND phonon readout with a squeezed microwave meter")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Field moments after one pulse against their closed forms.
    Moments(RunArgs),
    /// Monte Carlo quadrature record and phonon-number estimate.
    Sample(RunArgs),
    /// Wigner grid, marginal and reconstructed phonon histogram.
    Wigner(RunArgs),
    /// Three-level model against the effective squeezing rate.
    ValidateJj(RunArgs),
    /// Rerun a manifest and compare output hashes.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override a config value, `key.path=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads for sweep runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Takes precedence over `output_dir` in the config and over QNDSIM_OUTPUT_DIR.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileHash {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunRecord {
    index: usize,
    seed: u64,
    overrides: Map<String, Value>,
    files: Vec<FileHash>,
    summary: Value,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    tolerance_failure: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    experiment: Experiment,
    code_version: String,
    /// Effective config after `--set` overrides.
    config: Value,
    jobs: usize,
    wall_time_s: f64,
    runs: Vec<RunRecord>,
}

/// Everything validated; nothing computed or written yet.
struct Plan {
    raw: Value,
    runs: Vec<(RunSpec, Prepared)>,
}

fn plan(experiment: Experiment, text: &str, overrides: &[(String, Value)]) -> Result<Plan> {
    let (raw, cfg) = parse_config(text, overrides)?;
    let runs = expand(&raw, &cfg)?
        .into_iter()
        .map(|spec| prepare(experiment, &spec).map(|p| (spec, p)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Plan { raw, runs })
}

fn execute_all(plan: &Plan, jobs: usize) -> Result<Vec<RunOutput>> {
    if jobs == 0 {
        return Err(CliError::Config("--jobs must be >= 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {jobs} workers: {e}")))?;
    pool.install(|| plan.runs.par_iter().map(|(spec, prep)| execute(prep, spec.seed)).collect())
}

/// Sweep runs go to `run-NNN/`; a single run writes at the top level.
fn run_dir(plan: &Plan, index: usize) -> String {
    if plan.runs.len() == 1 && plan.runs[0].0.overrides.is_empty() {
        String::new()
    } else {
        format!("run-{index:03}/")
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn records(plan: &Plan, outputs: &[RunOutput]) -> Vec<RunRecord> {
    plan.runs
        .iter()
        .zip(outputs)
        .map(|((spec, _), out)| {
            let dir = run_dir(plan, spec.index);
            RunRecord {
                index: spec.index,
                seed: spec.seed,
                overrides: spec.overrides.clone(),
                files: out
                    .artifacts
                    .iter()
                    .map(|a| FileHash { path: format!("{dir}{}", a.name), sha256: sha256_hex(&a.bytes) })
                    .collect(),
                summary: out.summary.clone(),
                tolerance_failure: out.tolerance_failure.clone(),
            }
        })
        .collect()
}

fn resolve_output_dir(flag: Option<PathBuf>, raw: &Value) -> Result<PathBuf> {
    if let Some(dir) = flag {
        return Ok(dir);
    }
    if let Some(dir) = raw.get("output_dir").and_then(Value::as_str) {
        return Ok(PathBuf::from(dir));
    }
    match std::env::var_os(OUTPUT_ENV) {
        Some(dir) if !dir.is_empty() => Ok(PathBuf::from(dir)),
        _ => Err(CliError::Config(format!(
            "no output directory: pass --output-dir, set `output_dir`, or set {OUTPUT_ENV}"
        ))),
    }
}

fn write_outputs(root: &Path, plan: &Plan, outputs: &[RunOutput], manifest: &Manifest) -> Result<()> {
    for ((spec, _), out) in plan.runs.iter().zip(outputs) {
        let dir = root.join(run_dir(plan, spec.index));
        fs::create_dir_all(&dir).map_err(CliError::io(format!("creating {}", dir.display())))?;
        for a in &out.artifacts {
            let path = dir.join(&a.name);
            fs::write(&path, &a.bytes).map_err(CliError::io(format!("writing {}", path.display())))?;
        }
    }
    let mut bytes = serde_json::to_vec_pretty(manifest).map_err(qndsim::Error::from)?;
    bytes.push(b'\n');
    let path = root.join("manifest.json");
    fs::write(&path, bytes).map_err(CliError::io(format!("writing {}", path.display())))
}

fn tolerance_outcome(runs: &[RunRecord]) -> Result<()> {
    let failures: Vec<String> =
        runs.iter().filter_map(|r| r.tolerance_failure.as_ref().map(|f| format!("run {}: {f}", r.index))).collect();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Tolerance(failures.join("; ")))
    }
}

fn run_experiment(experiment: Experiment, args: RunArgs) -> Result<()> {
    let start = Instant::now();
    let text = fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let overrides = args.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
    let plan = plan(experiment, &text, &overrides)?;
    let root = resolve_output_dir(args.output_dir, &plan.raw)?;
    let outputs = execute_all(&plan, args.jobs)?;
    let manifest = Manifest {
        experiment,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config: plan.raw.clone(),
        jobs: args.jobs,
        wall_time_s: start.elapsed().as_secs_f64(),
        runs: records(&plan, &outputs),
    };
    write_outputs(&root, &plan, &outputs, &manifest)?;
    for r in &manifest.runs {
        eprintln!("run {} (seed {}): {}", r.index, r.seed, r.summary);
    }
    eprintln!("wrote {}", root.display());
    tolerance_outcome(&manifest.runs)
}

fn replay(args: ReplayArgs) -> Result<()> {
    let text = fs::read_to_string(&args.manifest)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", args.manifest.display())))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("not a manifest: {e}")))?;
    let config = serde_json::to_string(&manifest.config).map_err(qndsim::Error::from)?;
    let plan = plan(manifest.experiment, &config, &[])?;
    let outputs = execute_all(&plan, args.jobs)?;
    let fresh = records(&plan, &outputs);
    let expected: Vec<&FileHash> = manifest.runs.iter().flat_map(|r| &r.files).collect();
    let got: Vec<&FileHash> = fresh.iter().flat_map(|r| &r.files).collect();
    let mismatched: Vec<&str> = expected
        .iter()
        .filter(|e| !got.iter().any(|g| g.path == e.path && g.sha256 == e.sha256))
        .map(|e| e.path.as_str())
        .collect();
    if !mismatched.is_empty() || expected.len() != got.len() {
        return Err(CliError::Replay(format!(
            "{} of {} files differ: {}",
            mismatched.len(),
            expected.len(),
            mismatched.join(", ")
        )));
    }
    eprintln!("replay: {} files identical", expected.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Moments(a) => run_experiment(Experiment::Moments, a),
        Command::Sample(a) => run_experiment(Experiment::Sample, a),
        Command::Wigner(a) => run_experiment(Experiment::Wigner, a),
        Command::ValidateJj(a) => run_experiment(Experiment::ValidateJj, a),
        Command::Replay(a) => replay(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
