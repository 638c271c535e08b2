//! Experiment configuration: a TOML (or JSON) tree with a versioned schema.
//! Unknown keys are rejected; errors carry the offending field path.

use std::collections::BTreeMap;
use std::path::Path;

use gsvie::comparison::FreezeMode;
use gsvie::scenario::{ControlStrategy, NoiseKind};
use gsvie::SCHEMA_VERSION;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: String,
    pub grid: GridSection,
    /// Defaults to the system's band, or `(1, 1)` without a system.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<BandSection>,
    #[serde(default = "default_controls")]
    pub controls: Vec<ControlStrategy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSection>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "N")]
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandSection {
    pub sigma_lo: f64,
    pub sigma_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    #[default]
    Direct,
    Picard,
    /// Both sides of a separable system.
    Separable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKind {
    BTerminal,
    #[default]
    BTerminalSquare,
    XTerminal,
    XTerminalSquare,
}

impl FunctionalKind {
    pub fn needs_system(self) -> bool {
        matches!(self, FunctionalKind::XTerminal | FunctionalKind::XTerminalSquare)
    }

    pub fn label(self) -> &'static str {
        match self {
            FunctionalKind::BTerminal => "B(T)",
            FunctionalKind::BTerminalSquare => "B(T)^2",
            FunctionalKind::XTerminal => "X(T)",
            FunctionalKind::XTerminalSquare => "X(T)^2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Scenarios per control.
    #[serde(default = "default_scenarios")]
    pub scenarios: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise: NoiseKind,
    #[serde(default)]
    pub method: SolveMethod,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Picard weight; defaults to the contraction weight of the system.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default)]
    pub functional: FunctionalKind,
    /// Also evaluate the exact lattice (B functionals only).
    #[serde(default)]
    pub lattice: bool,
    #[serde(default = "default_ns")]
    pub ns: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub deltas: Vec<f64>,
    #[serde(default)]
    pub freeze: FreezeMode,
    /// Comparison tolerance; defaults to `10 sqrt(dt)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_disc: Option<f64>,
    /// Random tuples per assumption check.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Also write the `(B, <B>)` paths.
    #[serde(default)]
    pub write_scenarios: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            scenarios: default_scenarios(),
            seed: 0,
            noise: NoiseKind::default(),
            method: SolveMethod::default(),
            tol: default_tol(),
            max_iter: default_max_iter(),
            beta: None,
            functional: FunctionalKind::default(),
            lattice: false,
            ns: default_ns(),
            deltas: Vec::new(),
            freeze: FreezeMode::default(),
            tol_disc: None,
            samples: default_samples(),
            write_scenarios: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_directory")]
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: default_directory(),
            formats: default_formats(),
        }
    }
}

impl OutputSection {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

fn default_controls() -> Vec<ControlStrategy> {
    vec![ControlStrategy::ConstantLo, ControlStrategy::ConstantHi, ControlStrategy::UniformRandom]
}
fn default_scenarios() -> usize {
    100
}
fn default_tol() -> f64 {
    1e-10
}
fn default_max_iter() -> usize {
    60
}
fn default_ns() -> Vec<usize> {
    vec![2, 4, 8, 16, 32]
}
fn default_samples() -> usize {
    10_000
}
fn default_directory() -> String {
    "out".into()
}
fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

fn schema(path: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Schema(format!("{path}: {msg}"))
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when the file name ends in `.json`.
    pub fn parse(text: &str, json: bool) -> Result<Self, CliError> {
        let cfg: Self = if json {
            let de = &mut serde_json::Deserializer::from_str(text);
            serde_path_to_error::deserialize(de).map_err(|e| schema(&e.path().to_string(), e.inner()))?
        } else {
            let de = toml::Deserializer::parse(text).map_err(|e| schema(".", e.to_string().trim()))?;
            serde_path_to_error::deserialize(de).map_err(|e| schema(&e.path().to_string(), e.inner().message()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Other(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.extension().is_some_and(|e| e == "json"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Checks value ranges that the type system does not.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(schema(
                "schema_version",
                format!("unsupported version `{}` (expected `{SCHEMA_VERSION}`)", self.schema_version),
            ));
        }
        if !(self.grid.horizon > 0.0 && self.grid.horizon.is_finite()) {
            return Err(schema("grid.T", "must be positive and finite"));
        }
        if self.grid.steps == 0 {
            return Err(schema("grid.N", "must be at least 1"));
        }
        if let Some(b) = self.band {
            if !(b.sigma_lo > 0.0 && b.sigma_lo <= b.sigma_hi && b.sigma_hi.is_finite()) {
                return Err(schema("band", "need 0 < sigma_lo <= sigma_hi < inf"));
            }
        }
        if self.controls.is_empty() {
            return Err(schema("controls", "at least one control is required"));
        }
        for (k, c) in self.controls.iter().enumerate() {
            if let ControlStrategy::BangBang { switch_times } = c {
                if switch_times.iter().any(|t| !(*t >= 0.0 && *t <= self.grid.horizon)) {
                    return Err(schema(&format!("controls[{k}].switch_times"), "switch times must lie in [0, T]"));
                }
            }
        }
        let run = &self.run;
        if run.scenarios < 2 {
            return Err(schema("run.scenarios", "at least 2 scenarios per control"));
        }
        if !(run.tol > 0.0) {
            return Err(schema("run.tol", "must be positive"));
        }
        if run.max_iter == 0 {
            return Err(schema("run.max_iter", "must be at least 1"));
        }
        if run.beta.is_some_and(|b| !(b >= 0.0 && b.is_finite())) {
            return Err(schema("run.beta", "must be nonnegative and finite"));
        }
        if run.ns.is_empty() || run.ns.contains(&0) {
            return Err(schema("run.ns", "must be a nonempty list of positive integers"));
        }
        if run.deltas.iter().any(|d| !(*d > 0.0)) {
            return Err(schema("run.deltas", "must be positive"));
        }
        if run.tol_disc.is_some_and(|t| !(t >= 0.0)) {
            return Err(schema("run.tol_disc", "must be nonnegative"));
        }
        if run.samples == 0 {
            return Err(schema("run.samples", "must be at least 1"));
        }
        if self.output.formats.is_empty() {
            return Err(schema("output.formats", "at least one format is required"));
        }
        if let Some(sys) = &self.system {
            if !gsvie::registry::NAMES.contains(&sys.name.as_str()) {
                return Err(schema(
                    "system.name",
                    format!("unknown system `{}` (known: {})", sys.name, gsvie::registry::NAMES.join(", ")),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = "1.0"
[grid]
T = 1.0
N = 64
[system]
name = "example-4.8"
"#;

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::parse(MINIMAL, false).unwrap();
        assert_eq!(c.controls.len(), 3);
        assert_eq!(c.run.scenarios, 100);
        assert_eq!(c.run.ns, vec![2, 4, 8, 16, 32]);
        assert_eq!(c.output.directory, "out");
    }

    #[test]
    fn round_trip_is_idempotent() {
        let full = r#"
schema_version = "1.0"
controls = [{ strategy = "constant_hi" }, { strategy = "bang_bang", switch_times = [0.25, 0.5] }]
[grid]
T = 2.0
N = 32
[band]
sigma_lo = 0.5
sigma_hi = 1.5
[system]
name = "linear-sde"
params = { mu = 0.1, c = 0.3 }
[run]
scenarios = 10
seed = 7
method = "picard"
beta = 3.0
functional = "x_terminal"
deltas = [0.1, 0.05]
freeze = "h_only"
tol_disc = 0.2
[output]
directory = "x"
formats = ["json"]
"#;
        for text in [MINIMAL, full] {
            let a = ExperimentConfig::parse(text, false).unwrap();
            let once = a.to_toml();
            let b = ExperimentConfig::parse(&once, false).unwrap();
            assert_eq!(a, b);
            assert_eq!(once, b.to_toml());
            let json = serde_json::to_string(&a).unwrap();
            assert_eq!(ExperimentConfig::parse(&json, true).unwrap(), a);
        }
    }

    #[test]
    fn unknown_keys_name_their_path() {
        let bad = MINIMAL.replace("N = 64", "N = 64\nsteps = 3");
        let e = ExperimentConfig::parse(&bad, false).unwrap_err().to_string();
        assert!(e.contains("grid"), "{e}");
        let bad = format!("{MINIMAL}[run]\nscenarioz = 3\n");
        let e = ExperimentConfig::parse(&bad, false).unwrap_err().to_string();
        assert!(e.contains("run") && e.contains("scenarioz"), "{e}");
        let json = r#"{"schema_version": "1.0", "grid": {"T": 1.0, "N": "x"}}"#;
        let e = ExperimentConfig::parse(json, true).unwrap_err().to_string();
        assert!(e.contains("grid.N"), "{e}");
    }

    #[test]
    fn semantic_checks() {
        let e = ExperimentConfig::parse(&MINIMAL.replace("\"1.0\"", "\"0.9\""), false).unwrap_err();
        assert!(e.to_string().contains("schema_version"));
        let e = ExperimentConfig::parse(&MINIMAL.replace("N = 64", "N = 0"), false).unwrap_err();
        assert!(e.to_string().contains("grid.N"));
        let e = ExperimentConfig::parse(&MINIMAL.replace("example-4.8", "nope"), false).unwrap_err();
        assert!(e.to_string().contains("system.name"));
    }
}
