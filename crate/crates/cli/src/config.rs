//! Experiment configuration files.
//!
//! A config is a JSON or TOML document. Only `schema-version`, `seed` and
//! `model` are required; every other section falls back to the defaults
//! listed on its type. Keys are snake_case except `schema-version`.
//!
//! ```toml
//! schema-version = 1
//! seed = 7
//!
//! [model]
//! builtin = "mf_ou_cos"
//!
//! [sim]
//! n_particles = 4096
//! replicas = 16
//! ```

use std::path::{Path, PathBuf};

use mfergodic::ergodic::{GreedyConfig, Probe, TauberianConfig, VanishingConfig};
use mfergodic::functional::TerminalReward;
use mfergodic::value::SimConfig;
use mfergodic::{benchmarks, AffineModel, InitialLaw, ModelSpec, OptimizerConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Where the model comes from. Exactly one key must be set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelRef {
    /// Name of a built-in benchmark.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    /// Path to a JSON or TOML model spec, relative to the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    /// Inline model spec.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spec: Option<ModelSpec>,
}

/// Simulation budget; the seed lives at the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub n_particles: usize,
    pub dt: f64,
    pub replicas: usize,
    pub truncation_tol: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        SimSection {
            n_particles: d.n_particles,
            dt: d.dt,
            replicas: d.replicas,
            truncation_tol: d.truncation_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckParams {
    /// Random cloud pairs for the sampled inequality check.
    pub samples: usize,
    pub particles: usize,
}

impl Default for CheckParams {
    fn default() -> Self {
        CheckParams {
            samples: 200,
            particles: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateParams {
    pub horizon: f64,
    /// Record every `stride` steps.
    pub stride: usize,
    /// Relative slack on the second-moment envelope.
    pub moment_slack: f64,
}

impl Default for SimulateParams {
    fn default() -> Self {
        SimulateParams {
            horizon: 10.0,
            stride: 10,
            moment_slack: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoupleParams {
    pub horizon: f64,
    /// The second system starts as the first shifted by this amount.
    pub shift: f64,
    /// Relative slack on the contraction envelope.
    pub slack: f64,
}

impl Default for CoupleParams {
    fn default() -> Self {
        CoupleParams {
            horizon: 3.0,
            shift: 1.0,
            slack: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValueParams {
    pub beta: f64,
    pub horizon: f64,
    /// Constant windows of the finite-horizon policy family.
    pub windows: usize,
    pub terminal: TerminalReward,
}

impl Default for ValueParams {
    fn default() -> Self {
        ValueParams {
            beta: 0.1,
            horizon: 5.0,
            windows: 4,
            terminal: TerminalReward::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointParams {
    pub horizon: f64,
    pub windows: usize,
    /// Also report `|v^T - φ(μ) - λT|` at these horizons.
    pub envelope_horizons: Vec<f64>,
    /// Ergodic pair written by `ergodic-pair`; computed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair_file: Option<PathBuf>,
}

impl Default for FixedPointParams {
    fn default() -> Self {
        FixedPointParams {
            horizon: 2.0,
            windows: 4,
            envelope_horizons: vec![],
            pair_file: None,
        }
    }
}

/// How `∂_μ φ` is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DerivativeChoice {
    /// Exact Poisson-equation solution for a fixed action; 1-d OU models
    /// only. The model's first action when `action` is empty.
    PoissonOracle {
        #[serde(default)]
        action: Vec<f64>,
    },
    /// Finite differences of the interpolated `φ̂` table.
    PhiTable {
        #[serde(default = "default_fd_step")]
        fd_step: f64,
    },
}

fn default_fd_step() -> f64 {
    1e-3
}

impl Default for DerivativeChoice {
    fn default() -> Self {
        DerivativeChoice::PoissonOracle { action: vec![] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HjbParams {
    pub derivative: DerivativeChoice,
    pub probes: Vec<Probe>,
    /// Particles per probe ensemble.
    pub particles: usize,
    /// Grid resolution for interval action sets.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair_file: Option<PathBuf>,
}

impl Default for HjbParams {
    fn default() -> Self {
        let probes = [(0.0, 0.5), (1.0, 0.25), (-1.5, 1.0), (2.0, 0.1), (0.5, 2.0)]
            .iter()
            .enumerate()
            .map(|(k, &(m, v))| Probe {
                id: format!("p{k}"),
                law: InitialLaw::gaussian(m, v),
            })
            .collect();
        HjbParams {
            derivative: DerivativeChoice::default(),
            probes,
            particles: 1024,
            resolution: None,
            pair_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyParams {
    pub horizon: f64,
    pub burn_in: f64,
    /// Steps between samples of the drift diagnostic.
    pub stride: usize,
    pub derivative: DerivativeChoice,
    pub greedy: GreedyConfig,
    /// Constant action compared against the greedy feedback.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare_constant: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair_file: Option<PathBuf>,
}

impl Default for VerifyParams {
    fn default() -> Self {
        VerifyParams {
            horizon: 50.0,
            burn_in: 10.0,
            stride: 20,
            derivative: DerivativeChoice::default(),
            greedy: GreedyConfig::default(),
            compare_constant: None,
            pair_file: None,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_law() -> InitialLaw {
    InitialLaw::dirac(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(rename = "schema-version")]
    pub schema_version: u32,
    /// Mandatory; nothing is seeded from the clock.
    pub seed: u64,
    /// Subcommand this config is meant for; any when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operation: Option<String>,
    pub model: ModelRef,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_law")]
    pub initial_law: InitialLaw,
    /// Further initial laws for `tauberian`.
    #[serde(default)]
    pub extra_laws: Vec<InitialLaw>,
    /// JSON policy used as the search template instead of the model's
    /// first constant action.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_file: Option<PathBuf>,
    #[serde(default)]
    pub check: CheckParams,
    #[serde(default)]
    pub simulate: SimulateParams,
    #[serde(default)]
    pub couple: CoupleParams,
    #[serde(default)]
    pub value: ValueParams,
    #[serde(default)]
    pub vanishing: VanishingConfig,
    #[serde(default)]
    pub tauberian: TauberianConfig,
    #[serde(default)]
    pub fixed_point: FixedPointParams,
    #[serde(default)]
    pub hjb: HjbParams,
    #[serde(default)]
    pub verify: VerifyParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Toml,
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Format> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Ok(Format::Json),
            Some("toml") => Ok(Format::Toml),
            _ => Err(CliError::config(
                path.display().to_string(),
                "config files must end in .json or .toml",
            )),
        }
    }
}

fn parse_error(format: Format, path: String, message: String) -> CliError {
    let key = match (format, path.as_str()) {
        (Format::Json, "" | ".") => "json".to_string(),
        (Format::Toml, "" | ".") => "toml".to_string(),
        _ => path,
    };
    CliError::config(key, message)
}

fn parse_doc<T: serde::de::DeserializeOwned>(text: &str, format: Format) -> Result<T> {
    match format {
        Format::Json => {
            let de = &mut serde_json::Deserializer::from_str(text);
            serde_path_to_error::deserialize(de)
                .map_err(|e| parse_error(format, e.path().to_string(), e.inner().to_string()))
        }
        Format::Toml => {
            let de = toml::Deserializer::new(text);
            serde_path_to_error::deserialize(de)
                .map_err(|e| parse_error(format, e.path().to_string(), e.inner().to_string()))
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Prefixes the key of a core config error with its section.
fn in_section<T>(section: &str, r: mfergodic::Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        mfergodic::Error::Config { key, message } => CliError::config(format!("{section}.{key}"), message),
        other => CliError::Core(other),
    })
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::config(key, format!("must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    /// Parses without touching the file system.
    pub fn parse(text: &str, format: Format) -> Result<ExperimentConfig> {
        parse_doc(text, format)
    }

    /// Reads, validates and canonicalizes a config file. Relative paths
    /// inside it are resolved against its directory.
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let mut cfg = Self::parse(&read(path)?, Format::from_path(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.canonicalize()?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        fix(&mut self.model.file);
        fix(&mut self.policy_file);
        fix(&mut self.fixed_point.pair_file);
        fix(&mut self.hjb.pair_file);
        fix(&mut self.verify.pair_file);
    }

    /// Inlines a model file so the config, and its hash, carry the model
    /// itself.
    pub fn canonicalize(&mut self) -> Result<()> {
        if let Some(path) = self.model.file.take() {
            if self.model.builtin.is_some() || self.model.spec.is_some() {
                return Err(CliError::config("model", "set exactly one of `builtin`, `file`, `spec`"));
            }
            let spec: ModelSpec = parse_doc(&read(&path)?, Format::from_path(&path)?)
                .map_err(|e| CliError::config(format!("model.file ({})", path.display()), e.to_string()))?;
            self.model.spec = Some(spec);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::config(
                "schema-version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        let model = self.model()?;
        let d = mfergodic::Dynamics::dim(&model);
        in_section("sim", self.sim_config().validate())?;
        in_section("optimizer", self.optimizer.validate())?;
        in_section("initial_law", self.initial_law.validate(d))?;
        for (i, law) in self.extra_laws.iter().enumerate() {
            in_section(&format!("extra_laws[{i}]"), law.validate(d))?;
        }
        in_section("vanishing", self.vanishing.validate())?;
        positive("simulate.horizon", self.simulate.horizon)?;
        positive("couple.horizon", self.couple.horizon)?;
        positive("value.beta", self.value.beta)?;
        positive("value.horizon", self.value.horizon)?;
        positive("fixed_point.horizon", self.fixed_point.horizon)?;
        positive("verify.horizon", self.verify.horizon)?;
        if !(self.verify.burn_in >= 0.0 && self.verify.burn_in < self.verify.horizon) {
            return Err(CliError::config("verify.burn_in", "must lie in [0, horizon)"));
        }
        for (key, w) in [("value.windows", self.value.windows), ("fixed_point.windows", self.fixed_point.windows)] {
            if w == 0 {
                return Err(CliError::config(key, "need at least one window"));
            }
        }
        if self.hjb.probes.is_empty() {
            return Err(CliError::config("hjb.probes", "need at least one probe"));
        }
        for (i, p) in self.hjb.probes.iter().enumerate() {
            in_section(&format!("hjb.probes[{i}].law"), p.law.validate(d))?;
        }
        Ok(())
    }

    pub fn model(&self) -> Result<AffineModel> {
        let m = &self.model;
        match (&m.builtin, &m.file, &m.spec) {
            (Some(name), None, None) => benchmarks::by_name(name).ok_or_else(|| {
                CliError::config(
                    "model.builtin",
                    format!("unknown benchmark `{name}`; known: {}", benchmarks::NAMES.join(", ")),
                )
            }),
            (None, None, Some(spec)) => in_section("model.spec", AffineModel::new(spec.clone())),
            (None, Some(_), None) => Err(CliError::config("model.file", "model file was not loaded")),
            _ => Err(CliError::config("model", "set exactly one of `builtin`, `file`, `spec`")),
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            n_particles: self.sim.n_particles,
            dt: self.sim.dt,
            replicas: self.sim.replicas,
            seed: self.seed,
            truncation_tol: self.sim.truncation_tol,
            coupled_rate: 0.0,
        }
    }

    /// Errors when the config is pinned to another subcommand.
    pub fn check_operation(&self, op: &str) -> Result<()> {
        match &self.operation {
            Some(o) if o != op => Err(CliError::config(
                "operation",
                format!("config is for `{o}`, not `{op}`"),
            )),
            _ => Ok(()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::config("toml", e.to_string()))
    }

    /// Compact JSON with sorted keys and every default filled in. The
    /// output directory is left out: it says where results go, not what
    /// they are.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output_dir");
        }
        v.to_string()
    }

    /// Hex SHA-256 of [`canonical_json`](Self::canonical_json).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
