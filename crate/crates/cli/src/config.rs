//! Run configuration: one flat TOML table, every key optional, unknown keys rejected.
//!
//! ```toml
//! # data = "series/"          # a CSV file or a directory of them; omit for synthetic data
//! synth_variables = 4
//! synth_length = 3000
//! synth_noise_std = 0.1
//! protocol = 1
//! train_ratio = 0.7
//! val_ratio = 0.1
//! test_ratio = 0.2
//! lookback = 48
//! horizon = 12
//! stacks = ["trend", "seasonality"]
//! learner = "tcn"
//! epochs = 200
//! seed = 0
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use nft_core::data::{synth_generate, SplitSpec, SynthSpec};
use nft_core::{Error, LearnerKind, ModelConfig, PipelineSpec, RawSeries, Result, StackKind, TrainingConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// CSV file or directory of CSV files (one series each). `None` generates data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    pub synth_variables: usize,
    pub synth_length: usize,
    pub synth_noise_std: f64,
    /// Number of generated series; series `k` draws its noise from `synth_seed + k`.
    pub synth_series: usize,
    pub synth_seed: u64,

    pub protocol: u8,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
    pub lookback: usize,
    pub horizon: usize,
    pub stride: usize,

    pub stacks: Vec<StackKind>,
    pub blocks_per_stack: usize,
    pub fourier_order: usize,
    pub trend_degree: usize,
    pub learner: LearnerKind,
    pub tcn_hidden: usize,
    pub tcn_kernel: usize,
    pub tcn_dilations: Vec<usize>,
    pub fc_layers: usize,
    pub fc_units: usize,

    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub shuffle: bool,

    pub out: PathBuf,
    /// Seeds initialization, shuffling and the protocol-2 split.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::new(4, 48, 12);
        let training = TrainingConfig::default();
        Self {
            data: None,
            synth_variables: 4,
            synth_length: 3000,
            synth_noise_std: 0.1,
            synth_series: 1,
            synth_seed: 0,
            protocol: 1,
            train_ratio: 0.7,
            val_ratio: 0.1,
            test_ratio: 0.2,
            lookback: model.lookback,
            horizon: model.horizon,
            stride: 1,
            stacks: model.stacks,
            blocks_per_stack: model.blocks_per_stack,
            fourier_order: model.fourier_order,
            trend_degree: model.trend_degree,
            learner: model.learner,
            tcn_hidden: model.tcn_hidden,
            tcn_kernel: model.tcn_kernel,
            tcn_dilations: model.tcn_dilations,
            fc_layers: model.fc_layers,
            fc_units: model.fc_units,
            learning_rate: training.learning_rate,
            epochs: training.epochs,
            batch_size: training.batch_size,
            patience: training.patience,
            shuffle: training.shuffle,
            out: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().replace('\n', " ")))
    }

    /// Reads a config file. Relative `data` paths resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg = Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let (Some(data), Some(dir)) = (&cfg.data, path.parent()) {
            if data.is_relative() {
                cfg.data = Some(std::path::absolute(dir.join(data)).map_err(|e| Error::Io {
                    path: data.clone(),
                    source: e,
                })?);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("a run config always serializes")
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            protocol: self.protocol,
            ratios: [self.train_ratio, self.val_ratio, self.test_ratio],
        }
    }

    pub fn pipeline(&self) -> PipelineSpec {
        PipelineSpec {
            lookback: self.lookback,
            horizon: self.horizon,
            stride: self.stride,
            split: self.split_spec(),
            seed: self.seed,
        }
    }

    /// The model layout for data with `variables` variables.
    pub fn model(&self, variables: usize) -> ModelConfig {
        ModelConfig {
            variables,
            lookback: self.lookback,
            horizon: self.horizon,
            stacks: self.stacks.clone(),
            blocks_per_stack: self.blocks_per_stack,
            fourier_order: self.fourier_order,
            trend_degree: self.trend_degree,
            learner: self.learner,
            tcn_hidden: self.tcn_hidden,
            tcn_kernel: self.tcn_kernel,
            tcn_dilations: self.tcn_dilations.clone(),
            fc_layers: self.fc_layers,
            fc_units: self.fc_units,
            seed: self.seed,
        }
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            seed: self.seed,
            shuffle: self.shuffle,
        }
    }

    /// Checks everything that can be checked before touching data.
    pub fn validate(&self) -> Result<()> {
        self.split_spec().validate()?;
        self.training().validate()?;
        self.model(self.synth_variables.max(1)).validate()?;
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if self.data.is_none() && (self.synth_variables == 0 || self.synth_length == 0 || self.synth_series == 0) {
            return Err(Error::Config(
                "synth_variables, synth_length and synth_series must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn synth_specs(&self) -> Vec<SynthSpec> {
        (0..self.synth_series as u64)
            .map(|k| SynthSpec::standard(self.synth_variables, self.synth_length, self.synth_noise_std, self.synth_seed + k))
            .collect()
    }

    /// Loads `data`, or generates the configured synthetic series.
    pub fn load_series(&self) -> Result<Vec<RawSeries>> {
        match &self.data {
            Some(path) => nft_core::load_path(path),
            None => self
                .synth_specs()
                .iter()
                .enumerate()
                .map(|(k, spec)| {
                    let mut s = synth_generate(spec)?.series;
                    s.id = format!("series_{k:03}");
                    Ok(s)
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(RunConfig::parse("").unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse("epochz = 3\n").unwrap_err();
        assert!(err.to_string().contains("epochz"), "{err}");
        assert!(RunConfig::parse("learner = \"lstm\"\n").is_err());
    }

    #[test]
    fn overrides_flow_into_module_configs() {
        let cfg = RunConfig::parse("lookback = 20\nhorizon = 5\nlearner = \"fc\"\nseed = 3\nepochs = 0\n").unwrap();
        let m = cfg.model(3);
        assert_eq!((m.variables, m.lookback, m.horizon, m.learner, m.seed), (3, 20, 5, LearnerKind::Fc, 3));
        assert_eq!(cfg.training().epochs, 0);
        assert!(RunConfig::parse("train_ratio = 0.9\n").unwrap().validate().is_err());
    }
}
