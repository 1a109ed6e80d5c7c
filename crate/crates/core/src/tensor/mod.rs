//! Dense differentiable-computation core.
//!
//! [`Array`] is a plain row-major buffer. [`Tape`] records operations on
//! arrays and replays them in reverse to accumulate gradients. The layer
//! kernels in [`kernels`] are shared between the recorded path (training) and
//! the plain inference path so both compute bit-identical values.

mod adam;
mod array;
pub mod kernels;
pub(crate) mod lstm;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use array::Array;
pub use kernels::{conv1d_forward, fcn_forward, relu, rnn_forward, CONV_KERNEL};
pub use lstm::{lstm_cell_forward, LstmCellParams};
pub use tape::{GradTensor, NodeId, Tape};

/// Numeric width used by every network, tensor and checkpoint.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
/// Numeric width used by every network, tensor and checkpoint.
#[cfg(feature = "f32")]
pub type Real = f32;

/// Name of the active precision, as written into checkpoints.
#[cfg(not(feature = "f32"))]
pub const PRECISION: &str = "f64";
#[cfg(feature = "f32")]
pub const PRECISION: &str = "f32";

/// Tolerance for function preservation of a single morphism.
#[cfg(not(feature = "f32"))]
pub const PRESERVATION_TOL: Real = 1e-9;
#[cfg(feature = "f32")]
pub const PRESERVATION_TOL: Real = 1e-4;

/// Parameters of one searchable layer. No layer carries a bias.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerParams {
    /// `w`: `T_in x T_out`, applied along the time axis and shared across channels.
    Fcn { w: Array },
    /// `kernel`: `3 x C_in x C_out`, stride 1, zero same-padding.
    Conv1d { kernel: Array },
    /// `w`: `p x m` input weights, `h`: `m x m` recurrent weights.
    Rnn { w: Array, h: Array },
}

impl LayerParams {
    pub fn arrays(&self) -> Vec<&Array> {
        match self {
            LayerParams::Fcn { w } => vec![w],
            LayerParams::Conv1d { kernel } => vec![kernel],
            LayerParams::Rnn { w, h } => vec![w, h],
        }
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut Array> {
        match self {
            LayerParams::Fcn { w } => vec![w],
            LayerParams::Conv1d { kernel } => vec![kernel],
            LayerParams::Rnn { w, h } => vec![w, h],
        }
    }

    pub fn param_count(&self) -> usize {
        self.arrays().iter().map(|a| a.len()).sum()
    }

    pub fn array_names(&self) -> &'static [&'static str] {
        match self {
            LayerParams::Fcn { .. } => &["w"],
            LayerParams::Conv1d { .. } => &["kernel"],
            LayerParams::Rnn { .. } => &["w", "h"],
        }
    }
}
