use std::path::PathBuf;

use qndsim::jj::ThreeLevelParams;
use qndsim::protocol::ProtocolParams;
use qndsim::wigner::Convention;
use rand_xoshiro::rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<SampleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wigner: Option<WignerSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jj: Option<JjSection>,
    /// Each entry maps dotted keys to values and defines one run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<Map<String, Value>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuUnit {
    RadPerS,
    Hz,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    pub pulse_area: f64,
    pub thermal_n: f64,
    pub nu: f64,
    #[serde(default = "default_nu_unit")]
    pub nu_unit: NuUnit,
    /// Give exactly one of `squeeze_r` and `squeeze_gain` (`e^{2r}`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub squeeze_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub squeeze_gain: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phonon_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_dim: Option<usize>,
}

fn default_nu_unit() -> NuUnit {
    NuUnit::RadPerS
}

impl ProtocolSection {
    pub fn to_params(&self) -> Result<ProtocolParams> {
        let r = match (self.squeeze_r, self.squeeze_gain) {
            (Some(r), None) => r,
            (None, Some(g)) => ProtocolParams::squeeze_from_gain(g)?,
            _ => return Err(CliError::Config("protocol: give exactly one of squeeze_r and squeeze_gain".into())),
        };
        let nu = match self.nu_unit {
            NuUnit::RadPerS => self.nu,
            NuUnit::Hz => 2.0 * std::f64::consts::PI * self.nu,
        };
        let p = ProtocolParams::new(self.pulse_area, r, self.thermal_n, nu)?;
        let (db, da) = (self.phonon_dim.unwrap_or(p.phonon_dim), self.field_dim.unwrap_or(p.field_dim));
        Ok(p.with_dims(db, da)?)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    pub shots: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WignerSection {
    #[serde(default = "default_convention")]
    pub convention: Convention,
    #[serde(default = "default_points_per_sigma")]
    pub points_per_sigma: f64,
}

fn default_convention() -> Convention {
    Convention::PaperClosedForm
}

fn default_points_per_sigma() -> f64 {
    4.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JjSection {
    pub model: ThreeLevelParams,
    /// Final time in units of `1/gamma_eff_predicted`.
    #[serde(default = "default_gamma_t")]
    pub gamma_t_final: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Allowed `max_t |Var_full / Var_effective − 1|`.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_gamma_t() -> f64 {
    0.5
}

fn default_steps() -> usize {
    100
}

fn default_tolerance() -> f64 {
    0.05
}

/// Parse `key.path=value`; the value is JSON if it parses, otherwise a string.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s.split_once('=').ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{s}`")))?;
    if k.is_empty() || k.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!("--set has an empty key segment in `{k}`")));
    }
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

/// Set `path` (dot separated) inside `root`, creating objects on the way.
pub fn apply_override(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut node = root;
    let mut parts = path.split('.').peekable();
    while let Some(part) = parts.next() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("`{path}`: `{part}` is not inside an object")))?;
        if parts.peek().is_none() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

pub fn parse_config(text: &str, overrides: &[(String, Value)]) -> Result<(Value, Config)> {
    let mut raw: Value =
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config is not valid JSON: {e}")))?;
    for (k, v) in overrides {
        apply_override(&mut raw, k, v.clone())?;
    }
    let cfg: Config = serde_json::from_value(raw.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    Ok((raw, cfg))
}

/// One resolved run of a sweep.
#[derive(Clone, Debug)]
pub struct RunSpec {
    pub index: usize,
    pub seed: u64,
    pub overrides: Map<String, Value>,
    pub config: Config,
}

/// Seed of sweep run `i`: the `i`-th output of SplitMix64 started at the base seed.
pub fn derived_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    (0..count).map(|_| rng.next_u64()).collect()
}

/// Expand the sweep; a config without a sweep is a single run with the base seed.
pub fn expand(raw: &Value, cfg: &Config) -> Result<Vec<RunSpec>> {
    if cfg.sweep.is_empty() {
        return Ok(vec![RunSpec { index: 0, seed: cfg.seed, overrides: Map::new(), config: cfg.clone() }]);
    }
    let mut base = raw.clone();
    if let Some(obj) = base.as_object_mut() {
        obj.remove("sweep");
    }
    let seeds = derived_seeds(cfg.seed, cfg.sweep.len());
    cfg.sweep
        .iter()
        .zip(seeds)
        .enumerate()
        .map(|(index, (ov, seed))| {
            let mut v = base.clone();
            for (k, val) in ov {
                if k == "seed" || k == "sweep" {
                    return Err(CliError::Config(format!("sweep entry {index} may not override `{k}`")));
                }
                apply_override(&mut v, k, val.clone())?;
            }
            let mut config: Config =
                serde_json::from_value(v).map_err(|e| CliError::Config(format!("sweep entry {index}: {e}")))?;
            config.seed = seed;
            Ok(RunSpec { index, seed, overrides: ov.clone(), config })
        })
        .collect()
}

pub fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T> {
    section.as_ref().ok_or_else(|| CliError::Config(format!("missing `{name}` section")))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{"seed": 7, "protocol": {"pulse_area": 1.0, "thermal_n": 1.0, "nu": 1e9, "nu_unit": "hz", "squeeze_gain": 50}}"#;

    #[test]
    fn override_values_parse_as_json_or_string() {
        assert_eq!(parse_override("a.b=3").unwrap(), ("a.b".into(), Value::from(3)));
        assert_eq!(parse_override("a=x=y").unwrap(), ("a".into(), Value::from("x=y")));
        assert_eq!(parse_override("a=true").unwrap().1, Value::Bool(true));
        assert!(parse_override("novalue").is_err());
        assert!(parse_override("a..b=1").is_err());
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let (_, cfg) = parse_config(BASE, &[parse_override("protocol.thermal_n=2.5").unwrap()]).unwrap();
        assert_eq!(cfg.protocol.unwrap().thermal_n, 2.5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse_config(BASE, &[parse_override("protocol.colour=1").unwrap()]).is_err());
        assert!(parse_config(BASE, &[parse_override("extra=1").unwrap()]).is_err());
        assert!(parse_config(r#"{"protocol": null}"#, &[]).is_err());
    }

    #[test]
    fn hz_and_rad_per_s_agree() {
        let (_, cfg) = parse_config(BASE, &[]).unwrap();
        let a = cfg.protocol.unwrap().to_params().unwrap();
        let (_, cfg) = parse_config(
            BASE,
            &[
                parse_override("protocol.nu_unit=rad_per_s").unwrap(),
                parse_override(&format!("protocol.nu={}", 2.0 * std::f64::consts::PI * 1e9)).unwrap(),
            ],
        )
        .unwrap();
        let b = cfg.protocol.unwrap().to_params().unwrap();
        assert_eq!(a.nu, b.nu);
        assert_eq!(a.field_dim, 600);
    }

    #[test]
    fn squeezing_must_be_given_once() {
        let (_, cfg) = parse_config(BASE, &[parse_override("protocol.squeeze_r=1").unwrap()]).unwrap();
        assert!(cfg.protocol.unwrap().to_params().is_err());
    }

    #[test]
    fn sweep_seeds_are_derived_and_stable() {
        let text = r#"{"seed": 7, "protocol": {"pulse_area": 1.0, "thermal_n": 1.0, "nu": 1.0, "squeeze_r": 0.5},
                       "sweep": [{"protocol.thermal_n": 0.5}, {"protocol.thermal_n": 2}]}"#;
        let (raw, cfg) = parse_config(text, &[]).unwrap();
        let runs = expand(&raw, &cfg).unwrap();
        assert_eq!(runs.len(), 2);
        assert_ne!(runs[0].seed, runs[1].seed);
        assert_eq!(runs[1].config.protocol.as_ref().unwrap().thermal_n, 2.0);
        assert_eq!(derived_seeds(7, 2), vec![runs[0].seed, runs[1].seed]);
        assert!(runs.iter().all(|r| r.config.sweep.is_empty()));
    }

    #[test]
    fn sweep_cannot_override_seed() {
        let text = r#"{"seed": 7, "sweep": [{"seed": 1}]}"#;
        let (raw, cfg) = parse_config(text, &[]).unwrap();
        assert!(expand(&raw, &cfg).is_err());
    }
}
