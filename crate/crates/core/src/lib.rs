//! Architecture search for time-series electricity forecasting by
//! function-preserving network growth.
//!
//! Networks are ordered stacks of time-axis dense layers, kernel-3
//! convolutions and vanilla ReLU RNNs ending in a linear readout. A
//! reinforcement-learned controller picks whether to widen a layer, insert an
//! identity-initialised layer, or leave the network unchanged; the chosen
//! morphism keeps the network's function intact so training resumes from the
//! parent's weights. A bounded pool of scored candidates feeds each episode.

pub mod arch;
pub mod controller;
pub mod data;
pub mod error;
pub mod morph;
pub mod pool;
pub mod rng;
pub mod search;
pub mod tensor;

pub use error::{Error, Result};
