//! JSON run configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Error;
use crate::grid::{build_grid, steps_in, Grid};
use crate::presets::InitialDatum;
use crate::rate::FiringRateSpec;
use crate::steady::{EquilibriumOptions, PowerOptions};
use crate::transport::{CouplingMode, DEFAULT_PICARD_MAX_ITER, DEFAULT_PICARD_TOL};

pub const DEFAULT_DELTA: f64 = 0.01;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub s_max: f64,
    pub d_max: f64,
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CouplingKind {
    #[default]
    Picard,
    Explicit,
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    #[serde(default)]
    pub mode: CouplingKind,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Activity held fixed in `frozen` mode.
    #[serde(default)]
    pub x: Option<f64>,
    /// Use the previously measured activity when the fixed point fails.
    #[serde(default = "yes")]
    pub fallback_to_explicit: bool,
}

fn default_tol() -> f64 {
    DEFAULT_PICARD_TOL
}

fn default_max_iter() -> usize {
    DEFAULT_PICARD_MAX_ITER
}

fn yes() -> bool {
    true
}

impl Default for CouplingConfig {
    fn default() -> Self {
        CouplingConfig {
            mode: CouplingKind::Picard,
            tol: DEFAULT_PICARD_TOL,
            max_iter: DEFAULT_PICARD_MAX_ITER,
            x: None,
            fallback_to_explicit: true,
        }
    }
}

impl CouplingConfig {
    pub fn mode(&self) -> CouplingMode {
        match self.mode {
            CouplingKind::Picard => CouplingMode::Picard {
                tol: self.tol,
                max_iter: self.max_iter,
            },
            CouplingKind::Explicit => CouplingMode::Explicit,
            CouplingKind::Frozen => CouplingMode::Frozen { x: self.x.unwrap_or(0.0) },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteadyConfig {
    #[serde(default = "default_steady_tol")]
    pub tol: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default = "default_power_tol")]
    pub power_tol: f64,
    #[serde(default = "default_power_max_iter")]
    pub power_max_iter: usize,
}

fn default_steady_tol() -> f64 {
    EquilibriumOptions::default().tol
}

fn default_max_outer() -> usize {
    EquilibriumOptions::default().max_outer
}

fn default_power_tol() -> f64 {
    PowerOptions::default().tol
}

fn default_power_max_iter() -> usize {
    PowerOptions::default().max_iter
}

impl Default for SteadyConfig {
    fn default() -> Self {
        SteadyConfig {
            tol: default_steady_tol(),
            max_outer: default_max_outer(),
            power_tol: default_power_tol(),
            power_max_iter: default_power_max_iter(),
        }
    }
}

impl SteadyConfig {
    pub fn options(&self) -> EquilibriumOptions {
        EquilibriumOptions {
            power: self.power_options(),
            tol: self.tol,
            max_outer: self.max_outer,
            ..EquilibriumOptions::default()
        }
    }

    pub fn power_options(&self) -> PowerOptions {
        PowerOptions {
            tol: self.power_tol,
            max_iter: self.power_max_iter,
        }
    }
}

/// A validated run description. Fully deterministic: there is no seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub spec: FiringRateSpec,
    pub initial: InitialDatum,
    pub t_end: f64,
    pub coupling: CouplingConfig,
    /// Field snapshot cadence in time units.
    pub snapshot_every: Option<f64>,
    /// Discharge-flux cadence in time units.
    pub flux_every: Option<f64>,
    pub steady: SteadyConfig,
    pub output_dir: Option<PathBuf>,
}

/// Field-level form before names are resolved, so that every problem can be
/// reported at once.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    grid: GridConfig,
    spec: Value,
    initial: Value,
    t_end: f64,
    #[serde(default)]
    coupling: CouplingConfig,
    #[serde(default)]
    snapshot_every: Option<f64>,
    #[serde(default)]
    flux_every: Option<f64>,
    #[serde(default)]
    steady: SteadyConfig,
    #[serde(default)]
    output_dir: Option<PathBuf>,
}

/// Parses and validates a configuration. `origin` names the source in error
/// messages.
pub fn parse_config(text: &str, origin: &str) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        path: origin.into(),
        message: e.to_string(),
    })?;
    let mut violations = Vec::new();
    let spec = serde_json::from_value::<FiringRateSpec>(raw.spec)
        .map_err(|e| violations.push(format!("spec: {e}")))
        .ok();
    // a bare string names a datum without parameters
    let initial = match raw.initial {
        Value::String(name) => serde_json::from_value::<InitialDatum>(serde_json::json!({ "name": name })),
        other => serde_json::from_value::<InitialDatum>(other),
    }
    .map_err(|e| violations.push(format!("initial: {e}")))
    .ok();
    let spec_ok = spec.is_some();
    let (Some(spec), Some(initial)) = (spec.clone(), initial) else {
        // keep collecting the other problems, with placeholders for what failed
        let partial = RunConfig {
            grid: raw.grid,
            spec: spec.unwrap_or_else(crate::presets::example1_spec),
            initial: initial.unwrap_or(InitialDatum::ExpA),
            t_end: raw.t_end,
            coupling: raw.coupling,
            snapshot_every: raw.snapshot_every,
            flux_every: raw.flux_every,
            steady: raw.steady,
            output_dir: raw.output_dir,
        };
        if let Err(ConfigError::Validation(more)) = partial.validate() {
            violations.extend(more.into_iter().filter(|m| spec_ok || !m.starts_with("spec")));
        }
        return Err(ConfigError::Validation(violations));
    };
    let config = RunConfig {
        grid: raw.grid,
        spec,
        initial,
        t_end: raw.t_end,
        coupling: raw.coupling,
        snapshot_every: raw.snapshot_every,
        flux_every: raw.flux_every,
        steady: raw.steady,
        output_dir: raw.output_dir,
    };
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &std::path::Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text, &path.display().to_string())
}

fn commensurate(name: &str, value: f64, delta: f64, out: &mut Vec<String>) {
    if steps_in(value, delta).is_none() {
        out.push(format!("{name} = {value} is not a multiple of delta = {delta}"));
    }
}

impl RunConfig {
    fn grid_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let d = self.grid.delta;
        if !(d > 0.0 && d.is_finite()) {
            out.push(format!("grid.delta = {d} must be positive"));
            return out;
        }
        commensurate("grid.s_max", self.grid.s_max, d, &mut out);
        commensurate("grid.d_max", self.grid.d_max, d, &mut out);
        if !(self.t_end >= 0.0) {
            out.push(format!("t_end = {} must be non-negative", self.t_end));
        } else {
            commensurate("t_end", self.t_end, d, &mut out);
        }
        for (name, every) in [("snapshot_every", self.snapshot_every), ("flux_every", self.flux_every)] {
            if let Some(e) = every {
                if e > 0.0 {
                    commensurate(name, e, d, &mut out);
                } else {
                    out.push(format!("{name} = {e} must be positive"));
                }
            }
        }
        out
    }

    /// Every violation, not just the first.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut out = self.grid_violations();
        if let Err(e) = self.spec.validate() {
            out.push(format!("spec: {e}"));
        }
        if self.grid.delta > 0.0 {
            commensurate("spec.sigma", self.spec.sigma, self.grid.delta, &mut out);
        }
        if let Err(e) = self.initial.validate() {
            out.push(format!("initial: {e}"));
        }
        if let Err(e) = self.coupling.mode().validate() {
            out.push(format!("coupling: {e}"));
        }
        if self.coupling.mode == CouplingKind::Frozen && self.coupling.x.is_none() {
            out.push("coupling: frozen mode needs x".into());
        }
        if !(self.steady.tol > 0.0 && self.steady.power_tol > 0.0) {
            out.push("steady: tolerances must be positive".into());
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Validation(out))
        }
    }

    pub fn build_grid(&self) -> Result<Grid, Error> {
        build_grid(self.grid.delta, self.grid.s_max, self.grid.d_max)
    }

    /// Cadence in steps for a time interval already checked to be a multiple
    /// of delta.
    pub fn steps(&self, every: Option<f64>) -> Option<usize> {
        every.and_then(|e| steps_in(e, self.grid.delta))
    }

    /// Canonical JSON of the resolved configuration; its hash identifies a run.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
