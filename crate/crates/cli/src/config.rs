//! Run configuration file and the flags that override it.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use morphnas_core::data::DataKind;
use morphnas_core::search::{SearchConfig, Variant};
use morphnas_core::tensor::Real;

use crate::CliError;

/// Where the series comes from and how it is windowed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DataKind,
    /// CSV file; a synthetic series is generated when absent.
    pub path: Option<PathBuf>,
    pub synth_length: usize,
    pub synth_seed: u64,
    /// Input window in hours; defaults per kind.
    pub window: Option<usize>,
    /// Forecast horizon in hours; defaults per kind.
    pub horizon: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            kind: DataKind::Load,
            path: None,
            synth_length: 2160,
            synth_seed: 0,
            window: None,
            horizon: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub search: SearchConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

fn parse<T: std::str::FromStr<Err = morphnas_core::Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: morphnas_core::Error| e.to_string())
}

/// Data selection flags; each overrides the `data` key of the same name.
#[derive(Args, Clone, Debug, Default)]
pub struct DataArgs {
    /// Series kind: load or wind
    #[arg(long, value_parser = parse::<DataKind>)]
    pub kind: Option<DataKind>,
    /// CSV file with the series (synthetic data when omitted)
    #[arg(long = "data", value_name = "CSV")]
    pub path: Option<PathBuf>,
    /// Rows of synthetic data
    #[arg(long)]
    pub synth_length: Option<usize>,
    /// Seed of the synthetic series
    #[arg(long)]
    pub synth_seed: Option<u64>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
}

impl DataArgs {
    pub fn apply(&self, d: &mut DataConfig) {
        if let Some(v) = self.kind {
            d.kind = v;
        }
        if let Some(v) = &self.path {
            d.path = Some(v.clone());
        }
        if let Some(v) = self.synth_length {
            d.synth_length = v;
        }
        if let Some(v) = self.synth_seed {
            d.synth_seed = v;
        }
        if self.window.is_some() {
            d.window = self.window;
        }
        if self.horizon.is_some() {
            d.horizon = self.horizon;
        }
    }
}

/// Search flags; each overrides the `search` key of the same name.
#[derive(Args, Clone, Debug, Default)]
pub struct SearchArgs {
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub pool_capacity: Option<usize>,
    /// full, no-selector, no-pool or no-selector-no-pool
    #[arg(long, value_parser = parse::<Variant>)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub forced_wider: Option<usize>,
    #[arg(long)]
    pub forced_deeper: Option<usize>,
    /// Uniform noise magnitude added after each morph
    #[arg(long)]
    pub noise: Option<Real>,
    #[arg(long)]
    pub learning_rate: Option<Real>,
    #[arg(long)]
    pub actor_learning_rate: Option<Real>,
    /// Master seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed networks, e.g. "fc-4,conv-4,rnn-4"
    #[arg(long)]
    pub seed_layers: Option<String>,
    #[arg(long, value_name = "BOOL")]
    pub train_whole_pool: Option<bool>,
    #[arg(long, value_name = "BOOL")]
    pub verify_morphs: Option<bool>,
}

impl SearchArgs {
    pub fn apply(&self, s: &mut SearchConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field {
                    s.$field = v.clone();
                })*
            };
        }
        set!(
            episodes,
            epochs,
            batch_size,
            pool_capacity,
            variant,
            forced_wider,
            forced_deeper,
            noise,
            learning_rate,
            actor_learning_rate,
            seed,
            seed_layers,
            train_whole_pool,
            verify_morphs
        );
    }
}
