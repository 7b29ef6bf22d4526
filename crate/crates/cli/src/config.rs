//! JSON run configuration. Every key is optional; an empty object `{}` is a
//! valid configuration.

use std::path::{Path, PathBuf};

use perforated::autograd::Activation;
use perforated::data::{Dataset, SplitFractions};
use perforated::experiment::{DatasetSpec, SweepConfig};
use perforated::network::{LayerSpec, NetworkSpec};
use perforated::pb::PbConfig;
use perforated::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Full layer list. When absent an MLP is built from `hidden`.
    pub layers: Option<Vec<LayerSpec>>,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub width_multiplier: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            layers: None,
            hidden: vec![16, 16],
            activation: Activation::Tanh,
            width_multiplier: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub width_multipliers: Vec<f64>,
    pub cycles: Vec<usize>,
    pub seeds: Option<Vec<u64>>,
    pub parallel: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            width_multipliers: vec![1.0, 0.5, 0.25, 0.125],
            cycles: vec![0, 1, 2, 3],
            seeds: None,
            parallel: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetSpec,
    pub split: SplitFractions,
    pub network: NetworkConfig,
    pub pb: PbConfig,
    pub sweep: SweepSection,
    /// Fill wall-time columns; off by default so artifacts are reproducible.
    pub record_timing: bool,
}

impl RunConfig {
    /// Reads `path`, or returns the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Usage(format!("cannot read config file {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Usage(format!("invalid config file {}: {e}", path.display())))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn dataset(&self) -> Result<Dataset> {
        self.dataset.build(self.seed, self.split)
    }

    /// Network for `dataset`: input width and class count come from the data.
    pub fn network_spec(&self, dataset: &Dataset) -> Result<NetworkSpec> {
        let spec = match &self.network.layers {
            Some(layers) => NetworkSpec {
                input_shape: dataset.sample_shape.clone(),
                layers: layers.clone(),
                width_multiplier: self.network.width_multiplier,
                seed: 0,
            },
            None => {
                let mut dims = vec![dataset.features.cols()];
                dims.extend(&self.network.hidden);
                dims.push(dataset.n_classes);
                NetworkSpec::mlp(&dims, self.network.activation, self.network.width_multiplier, 0)
            }
        };
        spec.resolve()?;
        Ok(spec)
    }

    pub fn sweep_config(&self, base: NetworkSpec) -> SweepConfig {
        SweepConfig {
            base,
            width_multipliers: self.sweep.width_multipliers.clone(),
            cycles: self.sweep.cycles.clone(),
            seeds: self.sweep.seeds.clone().unwrap_or_else(|| vec![self.seed]),
            pb: self.pb.clone(),
            parallel: self.sweep.parallel,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 1}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"pb": {"pool": 2}}"#).is_err());
    }

    #[test]
    fn mlp_takes_dims_from_data() {
        let c = RunConfig::default();
        let ds = c.dataset().unwrap();
        let spec = c.network_spec(&ds).unwrap();
        assert_eq!(spec.param_count().unwrap(), 2 * 16 + 16 + 16 * 16 + 16 + 16 * 2 + 2);
    }
}
