//! Declarative run configuration: one TOML document with a section per
//! pipeline stage. Unknown keys are rejected so a typo'd hyperparameter
//! fails loudly instead of silently falling back to a default.

use std::path::{Path, PathBuf};

use ctqwalk_core::fisher::{
    DEFAULT_CONDITION_CAP, DEFAULT_FLOOR, DEFAULT_STEP,
};
use ctqwalk_core::{
    DatasetConfig, DatasetFormat, Error, GridAxis, InitialStateSpec, NetworkConfig, Result,
    TrainingConfig,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub chain: ChainSection,
    pub initial_state: InitialStateSpec,
    pub evolution: EvolutionSection,
    #[serde(default)]
    pub simulate: Option<SimulateSection>,
    #[serde(default)]
    pub fisher: Option<FisherSection>,
    #[serde(default)]
    pub datagen: Option<DatagenSection>,
    #[serde(default)]
    pub network: Option<NetworkSection>,
    #[serde(default)]
    pub training: Option<TrainingSection>,
    #[serde(default)]
    pub eval: Option<EvalSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    pub num_sites: usize,
    pub neighbour_order: usize,
    /// Coupling values for single-instance simulation.
    #[serde(default)]
    pub couplings: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionSection {
    pub time: f64,
}

/// One coupling axis: either a sweep or a pinned value.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum AxisSection {
    Sweep { low: f64, high: f64, count: usize },
    Fixed { fixed: f64 },
}

impl AxisSection {
    pub fn to_grid_axis(self) -> GridAxis {
        match self {
            AxisSection::Sweep { low, high, count } => GridAxis::Sweep { low, high, count },
            AxisSection::Fixed { fixed } => GridAxis::Fixed(fixed),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    /// When present, sweep the couplings and emit one probability surface per
    /// site instead of a single distribution.
    #[serde(default)]
    pub grid: Option<Vec<AxisSection>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FisherSection {
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_floor")]
    pub floor: f64,
    #[serde(default = "default_condition_cap")]
    pub condition_cap: f64,
    /// Grid resolution per coupling axis over [0, 1].
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    pub chain_lengths: Vec<usize>,
    pub times: Vec<f64>,
}

fn default_step() -> f64 {
    DEFAULT_STEP
}

fn default_floor() -> f64 {
    DEFAULT_FLOOR
}

fn default_condition_cap() -> f64 {
    DEFAULT_CONDITION_CAP
}

fn default_grid_points() -> usize {
    30
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatagenSection {
    pub n_samp: usize,
    pub n_mc: usize,
    pub resources: u64,
    pub low: f64,
    pub high: f64,
    pub fraction: f64,
    #[serde(default = "default_format")]
    pub format: String,
    #[serde(default)]
    pub memory_budget_mb: Option<u64>,
    #[serde(default)]
    pub noiseless_validation: bool,
}

fn default_format() -> String {
    "csv".into()
}

impl DatagenSection {
    pub fn format(&self) -> Result<DatasetFormat> {
        self.format.parse()
    }

    pub fn to_dataset_config(&self, config: &RunConfig) -> DatasetConfig {
        DatasetConfig {
            num_sites: config.chain.num_sites,
            neighbour_order: config.chain.neighbour_order,
            initial_state: config.initial_state.clone(),
            time: config.evolution.time,
            resources: self.resources,
            n_samp: self.n_samp,
            n_mc: self.n_mc,
            low: self.low,
            high: self.high,
            fraction: self.fraction,
            seed: config.seed,
            memory_budget: self
                .memory_budget_mb
                .map(|mb| mb * 1024 * 1024)
                .unwrap_or(ctqwalk_core::datagen::DEFAULT_MEMORY_BUDGET),
            noiseless_validation: self.noiseless_validation,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    #[serde(default = "default_profile")]
    pub profile: String,
    #[serde(default)]
    pub hidden_layers: Option<Vec<usize>>,
    #[serde(default = "default_bn_epsilon")]
    pub batch_norm_epsilon: f64,
    #[serde(default = "default_bn_momentum")]
    pub batch_norm_momentum: f64,
}

fn default_profile() -> String {
    "desk".into()
}

fn default_bn_epsilon() -> f64 {
    1e-5
}

fn default_bn_momentum() -> f64 {
    0.99
}

impl NetworkSection {
    pub fn to_network_config(&self, input_width: usize, output_width: usize) -> Result<NetworkConfig> {
        let mut network = match self.profile.as_str() {
            "desk" => NetworkConfig::desk(input_width, output_width),
            "full" => NetworkConfig::full(input_width, output_width),
            "custom" => {
                let hidden = self.hidden_layers.clone().ok_or_else(|| {
                    Error::InvalidConfig(
                        "network.profile = \"custom\" needs network.hidden_layers".into(),
                    )
                })?;
                NetworkConfig {
                    hidden_layers: hidden,
                    ..NetworkConfig::desk(input_width, output_width)
                }
            }
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown network.profile {other:?}, expected desk, full or custom"
                )))
            }
        };
        network.batch_norm_epsilon = self.batch_norm_epsilon;
        network.batch_norm_momentum = self.batch_norm_momentum;
        network.validate()?;
        Ok(network)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_epsilon")]
    pub adam_epsilon: f64,
    #[serde(default = "default_shuffle")]
    pub shuffle: bool,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_adam_epsilon() -> f64 {
    1e-8
}

fn default_shuffle() -> bool {
    true
}

impl TrainingSection {
    pub fn to_training_config(&self, seed: u64) -> TrainingConfig {
        TrainingConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_epsilon: self.adam_epsilon,
            seed,
            shuffle: self.shuffle,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// `grid` or `random`.
    pub points: String,
    #[serde(default)]
    pub axes: Option<Vec<AxisSection>>,
    #[serde(default)]
    pub n_test: Option<usize>,
    #[serde(default = "default_random_low")]
    pub random_low: f64,
    #[serde(default = "default_random_high")]
    pub random_high: f64,
    pub replicas: usize,
    #[serde(default)]
    pub slices: Vec<SliceSection>,
}

fn default_random_low() -> f64 {
    0.0
}

fn default_random_high() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceSection {
    /// 1-based index of the swept coupling.
    pub swept: usize,
    pub fixed: Vec<FixedAxis>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_tolerance() -> f64 {
    1e-9
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedAxis {
    /// 1-based coupling index.
    pub axis: usize,
    pub value: f64,
}

/// Loads the configuration file, applies `--set key=value` overrides, and
/// deserializes with unknown keys rejected.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::InvalidConfig(format!("cannot read config {}: {e}", path.display()))
    })?;
    let mut table: toml::Table = text
        .parse()
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    for entry in overrides {
        apply_override(&mut table, entry)?;
    }
    table
        .try_into()
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

/// Applies one `section.key=value` override onto the parsed document.
fn apply_override(table: &mut toml::Table, entry: &str) -> Result<()> {
    let (path, raw) = entry.split_once('=').ok_or_else(|| {
        Error::InvalidConfig(format!("override {entry:?} must look like key=value"))
    })?;
    let value = parse_override_value(raw);
    let mut segments = path.split('.').collect::<Vec<_>>();
    let last = segments.pop().ok_or_else(|| {
        Error::InvalidConfig(format!("override {entry:?} has an empty key"))
    })?;
    let mut current = table;
    for segment in segments {
        current = current
            .entry(segment.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                Error::InvalidConfig(format!("override {entry:?}: {segment} is not a table"))
            })?;
    }
    current.insert(last.to_string(), value);
    Ok(())
}

/// Interprets the raw override text as TOML when possible, else as a string.
fn parse_override_value(raw: &str) -> toml::Value {
    let candidate = format!("v = {raw}");
    if let Ok(table) = candidate.parse::<toml::Table>() {
        if let Some(value) = table.get("v") {
            return value.clone();
        }
    }
    toml::Value::String(raw.to_string())
}

/// Stable hash of the effective configuration, echoed into manifests.
pub fn config_digest(config: &RunConfig) -> Result<u64> {
    let canonical = toml::to_string(config)
        .map_err(|e| Error::InvalidConfig(format!("config echo failed: {e}")))?;
    Ok(ctqwalk_core::rng::fnv1a64(canonical.as_bytes()))
}

/// Serialized echo of the effective configuration.
pub fn config_echo(config: &RunConfig) -> Result<String> {
    toml::to_string(config).map_err(|e| Error::InvalidConfig(format!("config echo failed: {e}")))
}
