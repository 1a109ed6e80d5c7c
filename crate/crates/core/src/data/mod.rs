//! Time-series ingestion, feature construction, windowing, splitting,
//! scaling, error metrics and synthetic series.

mod features;
mod metrics;
mod synth;
mod table;
mod window;

use serde::{Deserialize, Serialize};

pub use features::{build_load_features, build_wind_features, hour_day, LOAD_FEATURES, WIND_FEATURES, WIND_KNOWN_AHEAD};
pub use metrics::{mae, rmse};
pub use synth::{synth_generate, WIND_CAPACITY};
pub use table::{load_csv, write_csv, Schema, SeriesTable, TIMESTAMP_COLUMN};
pub use window::{make_windows, prepare, split_regions, NormStats, PreparedData, Regions, WindowSpec, WindowedDataset};

/// Which forecasting task a series belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Load,
    Wind,
}

impl std::str::FromStr for DataKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "load" => Ok(DataKind::Load),
            "wind" => Ok(DataKind::Wind),
            _ => Err(crate::Error::InvalidArgument(format!("unknown data kind {s:?} (expected load or wind)"))),
        }
    }
}

impl std::fmt::Display for DataKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DataKind::Load => "load",
            DataKind::Wind => "wind",
        })
    }
}
