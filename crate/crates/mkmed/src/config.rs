//! TOML loading for run configurations and generator specs. Unknown keys
//! are rejected; diagnostics carry the offending line and field.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use mkmed_core::align::CoverageProfile;
use mkmed_core::config::RunConfig;
use mkmed_core::synthgen::SynthSpec;

use crate::error::{CliError, CliResult};

/// The generator spec used when `generate` gets no `--config`.
pub const DEFAULT_SPEC: &str = include_str!("../default_spec.toml");

/// Presence probability: one value for every modality or five values in
/// the order image, text, structure, props, kg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coverage {
    Uniform(f64),
    PerModality([f64; 5]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub n_molecules: Option<usize>,
    pub n_diseases: Option<usize>,
    pub n_procedures: Option<usize>,
    pub n_medications: Option<usize>,
    pub coverage: Option<Coverage>,
    pub coverage_seed: Option<u64>,
    pub n_patients: Option<usize>,
    pub visits_mean: Option<f64>,
    pub rule_noise: Option<f64>,
    pub ddi_density: Option<f64>,
    pub chronic_pool: Option<usize>,
    pub seed: Option<u64>,
}

impl SpecFile {
    pub fn into_spec(self) -> SynthSpec {
        let d = SynthSpec::default();
        let cseed = self.coverage_seed.unwrap_or(d.coverage.seed);
        let coverage = match self.coverage {
            None => CoverageProfile { seed: cseed, ..d.coverage },
            Some(Coverage::Uniform(p)) => CoverageProfile::uniform(p, cseed),
            Some(Coverage::PerModality(p)) => CoverageProfile { p, seed: cseed },
        };
        SynthSpec {
            n_molecules: self.n_molecules.unwrap_or(d.n_molecules),
            n_diseases: self.n_diseases.unwrap_or(d.n_diseases),
            n_procedures: self.n_procedures.unwrap_or(d.n_procedures),
            n_medications: self.n_medications.unwrap_or(d.n_medications),
            coverage,
            n_patients: self.n_patients.unwrap_or(d.n_patients),
            visits_mean: self.visits_mean.unwrap_or(d.visits_mean),
            rule_noise: self.rule_noise.unwrap_or(d.rule_noise),
            ddi_density: self.ddi_density.unwrap_or(d.ddi_density),
            chronic_pool: self.chronic_pool.unwrap_or(d.chronic_pool),
            seed: self.seed.unwrap_or(d.seed),
        }
    }
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(CliError::io(path))
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str, origin: &str) -> CliResult<T> {
    toml::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))
}

pub fn parse_spec(text: &str, origin: &str) -> CliResult<SynthSpec> {
    let spec = parse::<SpecFile>(text, origin)?.into_spec();
    spec.validate().map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
    Ok(spec)
}

pub fn load_spec(path: Option<&Path>) -> CliResult<SynthSpec> {
    match path {
        Some(p) => parse_spec(&read(p)?, &p.display().to_string()),
        None => parse_spec(DEFAULT_SPEC, "bundled default spec"),
    }
}

pub fn parse_run_config(text: &str, origin: &str) -> CliResult<RunConfig> {
    let cfg: RunConfig = parse(text, origin)?;
    cfg.validate().map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
    Ok(cfg)
}

/// Without a file, the built-in defaults apply (γ = 0.95).
pub fn load_run_config(path: Option<&Path>) -> CliResult<RunConfig> {
    match path {
        Some(p) => parse_run_config(&read(p)?, &p.display().to_string()),
        None => Ok(RunConfig::default()),
    }
}

/// Parallelism cap from `MKMED_THREADS` (default 1).
pub fn thread_cap() -> CliResult<usize> {
    match std::env::var("MKMED_THREADS") {
        Err(_) => Ok(1),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Config(format!("MKMED_THREADS must be a positive integer, got {s:?}"))),
        },
    }
}
