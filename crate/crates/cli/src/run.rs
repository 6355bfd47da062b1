use qndsim::fock::CompositeState;
use qndsim::jj::{self, ThreeLevelParams};
use qndsim::protocol::{self, evolve_pulse, initial_state, ProtocolParams};
use qndsim::sampler;
use qndsim::wigner::{self, Convention, GridSpec, Sidecar};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{require, RunSpec};
use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Moments,
    Sample,
    Wigner,
    ValidateJj,
}

/// Largest `|numeric − closed form| / max(|closed form|, 1)` accepted by `moments`.
pub const MOMENT_TOLERANCE: f64 = 1e-6;
/// Largest `|∫W − 1|` accepted by `wigner`.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-3;

/// A run whose inputs have all been validated.
#[derive(Clone, Debug)]
pub enum Prepared {
    Moments { params: ProtocolParams },
    Sample { params: ProtocolParams, shots: usize },
    Wigner { params: ProtocolParams, convention: Convention, grid: GridSpec },
    ValidateJj { model: ThreeLevelParams, t_final: f64, steps: usize, tolerance: f64 },
}

pub fn prepare(experiment: Experiment, run: &RunSpec) -> Result<Prepared> {
    let cfg = &run.config;
    match experiment {
        Experiment::Moments => Ok(Prepared::Moments { params: require(&cfg.protocol, "protocol")?.to_params()? }),
        Experiment::Sample => {
            let params = require(&cfg.protocol, "protocol")?.to_params()?;
            let shots = require(&cfg.sample, "sample")?.shots;
            if shots < 2 {
                return Err(CliError::Config(format!("sample.shots must be >= 2, got {shots}")));
            }
            Ok(Prepared::Sample { params, shots })
        }
        Experiment::Wigner => {
            let params = require(&cfg.protocol, "protocol")?.to_params()?;
            let w = require(&cfg.wigner, "wigner")?;
            let grid = wigner::auto_grid(&params, w.convention, w.points_per_sigma)?;
            Ok(Prepared::Wigner { params, convention: w.convention, grid })
        }
        Experiment::ValidateJj => {
            let s = require(&cfg.jj, "jj")?;
            s.model.validate()?;
            let gamma = s.model.gamma_eff_predicted();
            if !(gamma > 0.0) {
                return Err(CliError::Config(
                    "jj: predicted squeezing rate is zero; pump and couplings must be > 0".into(),
                ));
            }
            if !(s.gamma_t_final > 0.0) || !s.gamma_t_final.is_finite() {
                return Err(CliError::Config(format!(
                    "jj.gamma_t_final must be finite and > 0, got {}",
                    s.gamma_t_final
                )));
            }
            if s.steps == 0 {
                return Err(CliError::Config("jj.steps must be >= 1".into()));
            }
            if !(s.tolerance > 0.0) {
                return Err(CliError::Config(format!("jj.tolerance must be > 0, got {}", s.tolerance)));
            }
            Ok(Prepared::ValidateJj {
                model: s.model,
                t_final: s.gamma_t_final / gamma,
                steps: s.steps,
                tolerance: s.tolerance,
            })
        }
    }
}

/// One output file held in memory until every run has finished.
#[derive(Clone, Debug)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub artifacts: Vec<Artifact>,
    pub summary: Value,
    /// Set when the run finished but missed a numerical tolerance.
    pub tolerance_failure: Option<String>,
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(v).map_err(qndsim::Error::from)?;
    out.push(b'\n');
    Ok(out)
}

fn buffer(f: impl FnOnce(&mut Vec<u8>) -> qndsim::Result<()>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    f(&mut out)?;
    Ok(out)
}

pub fn execute(prepared: &Prepared, seed: u64) -> Result<RunOutput> {
    match prepared {
        Prepared::Moments { params } => moments(params, seed),
        Prepared::Sample { params, shots } => sample(params, *shots, seed),
        Prepared::Wigner { params, convention, grid } => wigner_maps(params, *convention, grid, seed),
        Prepared::ValidateJj { model, t_final, steps, tolerance } => validate_jj(model, *t_final, *steps, *tolerance),
    }
}

fn moments(p: &ProtocolParams, seed: u64) -> Result<RunOutput> {
    let m = protocol::field_moments(&evolve_pulse(&initial_state(p)?, p)?)?;
    let closed = [
        ("mean_y", m.mean_y, protocol::mean_y(p)),
        ("mean_x", m.mean_x, protocol::mean_x(p)),
        ("var_y", m.var_y, protocol::var_y(p)),
    ];
    let worst = closed.iter().map(|(_, got, want)| (got - want).abs() / want.abs().max(1.0)).fold(0.0, f64::max);
    let positive = p.thermal_n > 0.0;
    let doc = json!({
        "params": p,
        "seed": seed,
        "numeric": m,
        "closed_form": {"mean_y": closed[0].2, "mean_x": closed[1].2, "var_y": closed[2].2},
        "max_scaled_error": worst,
        "relative_uncertainty": if positive { Some(protocol::relative_uncertainty(p)?) } else { None },
        "relative_uncertainty_limit": if positive { Some(protocol::relative_uncertainty_limit(p.thermal_n)?) } else { None },
        "distinguishability_threshold": protocol::distinguishability_threshold(p.pulse_area)?,
        "distinguishable": protocol::is_distinguishable(p)?,
        "temperature_kelvin": if positive { Some(protocol::temperature_from_n(p.thermal_n, p.nu)?) } else { None },
    });
    let tolerance_failure = (worst > MOMENT_TOLERANCE)
        .then(|| format!("field moments differ from closed forms by {worst:e} (tolerance {MOMENT_TOLERANCE:e})"));
    Ok(RunOutput {
        artifacts: vec![Artifact { name: "moments.json".into(), bytes: json_bytes(&doc)? }],
        summary: json!({"max_scaled_error": worst}),
        tolerance_failure,
    })
}

fn sample(p: &ProtocolParams, shots: usize, seed: u64) -> Result<RunOutput> {
    let record = sampler::sample_record(p, shots, seed)?;
    let report = sampler::estimate(&record)?;
    Ok(RunOutput {
        artifacts: vec![
            Artifact { name: "record.csv".into(), bytes: buffer(|o| sampler::write_record_csv(&record, o))? },
            Artifact { name: "report.json".into(), bytes: buffer(|o| sampler::write_report_json(&report, o))? },
        ],
        summary: json!({"n_hat": report.n_hat, "n_stderr": report.n_stderr, "misassign_rate": report.misassign_rate}),
        tolerance_failure: None,
    })
}

fn wigner_maps(p: &ProtocolParams, convention: Convention, grid: &GridSpec, seed: u64) -> Result<RunOutput> {
    let w = match convention {
        Convention::PaperClosedForm => wigner::wigner_paper(p, grid)?,
        Convention::StandardNumeric => match evolve_pulse(&initial_state(p)?, p)? {
            CompositeState::Blocks(b) => wigner::wigner_numeric_blocks(&b, p, grid)?,
            CompositeState::Dense(_) => unreachable!("initial_state builds blocks"),
        },
    };
    let marginal = wigner::marginal_p(&w);
    let rec = wigner::reconstruct_pn(&marginal, p)?;
    let integral = w.integral();
    let tv = rec.histogram.total_variation_to_thermal(p.thermal_n);
    let sidecar =
        |file: &str| json_bytes(&Sidecar { file, params: p, convention, grid: Some(*grid), seed: Some(seed) });
    let artifacts = vec![
        Artifact { name: "wigner_grid.csv".into(), bytes: buffer(|o| wigner::write_grid_csv(&w, o))? },
        Artifact { name: "wigner_grid.json".into(), bytes: sidecar("wigner_grid.csv")? },
        Artifact { name: "marginal.csv".into(), bytes: buffer(|o| wigner::write_marginal_csv(&marginal, o))? },
        Artifact { name: "marginal.json".into(), bytes: sidecar("marginal.csv")? },
        Artifact { name: "histogram.csv".into(), bytes: buffer(|o| wigner::write_histogram_csv(&rec.histogram, o))? },
        Artifact { name: "histogram.json".into(), bytes: sidecar("histogram.csv")? },
    ];
    let tolerance_failure = ((integral - 1.0).abs() > NORMALIZATION_TOLERANCE)
        .then(|| format!("Wigner integral {integral} deviates from 1 by more than {NORMALIZATION_TOLERANCE:e}"));
    Ok(RunOutput {
        artifacts,
        summary: json!({"integral": integral, "min_value": w.min_value(), "total_variation": tv, "overlap_warning": rec.warning}),
        tolerance_failure,
    })
}

fn validate_jj(q: &ThreeLevelParams, t_final: f64, steps: usize, tolerance: f64) -> Result<RunOutput> {
    let r = jj::validate_effective_gamma(q, t_final, steps)?;
    let tolerance_failure = (r.max_rel_error > tolerance).then(|| {
        format!(
            "Var(Y) departs from exp(-2 gamma_eff t) by {:.3} (tolerance {tolerance}); fitted rate {:.5} vs predicted {:.5}",
            r.max_rel_error, r.gamma_fit, r.gamma_eff_predicted
        )
    });
    Ok(RunOutput {
        artifacts: vec![
            Artifact { name: "jj_report.json".into(), bytes: buffer(|o| jj::write_report_json(&r, o))? },
            Artifact { name: "jj_variance.csv".into(), bytes: buffer(|o| jj::write_report_csv(&r, o))? },
        ],
        summary: json!({
            "gamma_eff_predicted": r.gamma_eff_predicted,
            "gamma_fit": r.gamma_fit,
            "max_rel_error": r.max_rel_error,
            "warnings": r.warnings,
        }),
        tolerance_failure,
    })
}
