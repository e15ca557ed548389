//! Instance configuration: a TOML file shared by solve, optimize, simulate
//! and report runs. The `[pricing]` and `[offload]` sections are optional;
//! each command checks for the section it needs.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use aoictl_core::io::read_model;
use aoictl_core::joac::{Epsilon, JoacInstance};
use aoictl_core::mdp::AgingMdpInstance;
use aoictl_core::mobility::MobilityModel;
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    /// Path to the transition-matrix file, relative to this config file.
    pub model: PathBuf,
    pub max_age: usize,
    pub utility: UtilitySpec,
    pub pricing: Option<PricingSection>,
    pub offload: Option<OffloadSection>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum UtilitySpec {
    /// `utility = "linear"`: U(x) = M - x.
    Named(String),
    /// Explicit table of length `max_age`.
    Values(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricingSection {
    /// Per-location upload prices.
    pub prices: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffloadSection {
    /// Per-location operator cost per uploaded byte-rate unit.
    pub costs: Vec<f64>,
    /// Per-location capacity; omitted means unbounded.
    pub capacities: Option<Vec<f64>>,
    pub devices: u64,
    pub mean_size: f64,
    pub slot_seconds: f64,
    pub latency_target: usize,
    pub epsilon: EpsilonSpec,
    /// Cap the deferral bound at latency_target + 3.
    #[serde(default)]
    pub cap_t_max: bool,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum EpsilonSpec {
    Scalar(f64),
    PerLocation(Vec<f64>),
}

/// Config plus the loaded mobility model.
pub struct LoadedInstance {
    pub config: InstanceConfig,
    pub model: Arc<MobilityModel>,
}

impl InstanceConfig {
    pub fn utility_values(&self) -> Result<Vec<f64>, CliError> {
        match &self.utility {
            UtilitySpec::Named(name) if name == "linear" => {
                Ok(AgingMdpInstance::linear_utility(self.max_age))
            }
            UtilitySpec::Named(name) => Err(CliError::Config(format!(
                "unknown utility \"{name}\"; use \"linear\" or an explicit table"
            ))),
            UtilitySpec::Values(v) => {
                if v.len() != self.max_age {
                    return Err(CliError::Config(format!(
                        "utility table has {} entries, max_age is {}",
                        v.len(),
                        self.max_age
                    )));
                }
                Ok(v.clone())
            }
        }
    }
}

pub fn load_instance(path: &Path) -> Result<LoadedInstance, CliError> {
    let text = std::fs::read_to_string(path)?;
    let config: InstanceConfig =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{path:?}: {e}")))?;
    let model_path = match path.parent() {
        Some(dir) => dir.join(&config.model),
        None => config.model.clone(),
    };
    let model = Arc::new(read_model(&model_path)?);
    Ok(LoadedInstance { config, model })
}

impl LoadedInstance {
    /// The aging-control MDP from the `[pricing]` section.
    pub fn mdp(&self) -> Result<AgingMdpInstance, CliError> {
        let pricing = self.config.pricing.as_ref().ok_or_else(|| {
            CliError::Config("this command needs a [pricing] section".to_string())
        })?;
        Ok(AgingMdpInstance::new(
            Arc::clone(&self.model),
            self.config.max_age,
            self.config.utility_values()?,
            pricing.prices.clone(),
        )?)
    }

    /// The offloading problem from the `[offload]` section.
    pub fn joac(&self) -> Result<JoacInstance, CliError> {
        let offload = self.config.offload.as_ref().ok_or_else(|| {
            CliError::Config("this command needs an [offload] section".to_string())
        })?;
        let l = self.model.num_locations();
        let instance = JoacInstance {
            model: Arc::clone(&self.model),
            costs: offload.costs.clone(),
            capacities: offload
                .capacities
                .clone()
                .unwrap_or_else(|| vec![f64::INFINITY; l]),
            device_count: offload.devices,
            mean_size: offload.mean_size,
            slot_seconds: offload.slot_seconds,
            latency_target: offload.latency_target,
            epsilon: match &offload.epsilon {
                EpsilonSpec::Scalar(e) => Epsilon::Scalar(*e),
                EpsilonSpec::PerLocation(v) => Epsilon::PerLocation(v.clone()),
            },
            max_age: self.config.max_age,
            utility: self.config.utility_values()?,
            cap_t_max_at_d_plus_3: offload.cap_t_max,
        };
        instance.validate()?;
        Ok(instance)
    }
}
