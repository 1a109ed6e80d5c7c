//! Architecture description: layer tokens, shape inference and parameter
//! counting, plus the parameterised [`Network`] and its checkpoint format.

mod checkpoint;
mod network;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub(crate) use checkpoint::{decode_array, decode_floats, encode_array, encode_floats, EncodedArray};
pub use checkpoint::{deserialize, load_checkpoint, save_checkpoint, serialize, CHECKPOINT_SCHEMA_VERSION};
pub use network::{Network, OptimizerState};
pub(crate) use network::fresh_layer_state as network_fresh_state;

use crate::error::{Error, Result};
use crate::tensor::CONV_KERNEL;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Fcn,
    Conv,
    Rnn,
}

impl LayerKind {
    pub const ALL: [LayerKind; 3] = [LayerKind::Fcn, LayerKind::Conv, LayerKind::Rnn];

    pub fn token_prefix(self) -> &'static str {
        match self {
            LayerKind::Fcn => "fc",
            LayerKind::Conv => "conv",
            LayerKind::Rnn => "rnn",
        }
    }

    pub fn index(self) -> usize {
        match self {
            LayerKind::Fcn => 0,
            LayerKind::Conv => 1,
            LayerKind::Rnn => 2,
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token_prefix())
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fc" | "fcn" => Ok(LayerKind::Fcn),
            "conv" | "cnn" => Ok(LayerKind::Conv),
            "rnn" => Ok(LayerKind::Rnn),
            _ => Err(Error::Token(s.to_string())),
        }
    }
}

/// One searchable layer. `units` is the output time length for FCN, the output
/// channel count for CNN and the hidden size for RNN.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub units: usize,
}

impl LayerSpec {
    pub fn new(kind: LayerKind, units: usize) -> Result<Self> {
        if units == 0 {
            return Err(Error::InvalidArgument(format!("{kind} layer needs at least one unit")));
        }
        Ok(LayerSpec { kind, units })
    }

    pub fn fcn(units: usize) -> Self {
        LayerSpec::new(LayerKind::Fcn, units).expect("units >= 1")
    }

    pub fn conv(units: usize) -> Self {
        LayerSpec::new(LayerKind::Conv, units).expect("units >= 1")
    }

    pub fn rnn(units: usize) -> Self {
        LayerSpec::new(LayerKind::Rnn, units).expect("units >= 1")
    }

    pub fn kernel(&self) -> Option<usize> {
        (self.kind == LayerKind::Conv).then_some(CONV_KERNEL)
    }

    pub fn output_shape(&self, input: Shape) -> Shape {
        match self.kind {
            LayerKind::Fcn => Shape::new(self.units, input.channels),
            LayerKind::Conv | LayerKind::Rnn => Shape::new(input.time, self.units),
        }
    }

    pub fn param_count(&self, input: Shape) -> usize {
        match self.kind {
            LayerKind::Fcn => input.time * self.units,
            LayerKind::Conv => CONV_KERNEL * input.channels * self.units,
            LayerKind::Rnn => input.channels * self.units + self.units * self.units,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.kind, self.units)
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, units) = s.trim().split_once('-').ok_or_else(|| Error::Token(s.to_string()))?;
        let kind: LayerKind = kind.parse().map_err(|_| Error::Token(s.to_string()))?;
        let units: usize = units.parse().map_err(|_| Error::Token(s.to_string()))?;
        LayerSpec::new(kind, units).map_err(|_| Error::Token(s.to_string()))
    }
}

/// `time x channels` activation shape of one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub time: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(time: usize, channels: usize) -> Self {
        Shape { time, channels }
    }

    pub fn size(&self) -> usize {
        self.time * self.channels
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.time, self.channels)
    }
}

/// Input shape plus an ordered list of layers. The flatten-to-scalar readout
/// is implicit and always last.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchitectureDescriptor {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

impl ArchitectureDescriptor {
    pub fn new(input: Shape, layers: Vec<LayerSpec>) -> Result<Self> {
        let d = ArchitectureDescriptor { input, layers };
        d.infer_shapes()?;
        Ok(d)
    }

    pub fn from_tokens(input: Shape, tokens: &str) -> Result<Self> {
        ArchitectureDescriptor::new(input, parse_tokens(tokens)?)
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// `(input, output)` shape of every layer, in order.
    pub fn infer_shapes(&self) -> Result<Vec<(Shape, Shape)>> {
        if self.input.time == 0 || self.input.channels == 0 {
            return Err(Error::InvalidArgument(format!("empty input shape {}", self.input)));
        }
        let mut cur = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            if l.units == 0 {
                return Err(Error::InvalidArgument(format!("layer {i} has zero units")));
            }
            let next = l.output_shape(cur);
            out.push((cur, next));
            cur = next;
        }
        Ok(out)
    }

    /// Shape fed to the readout head.
    pub fn readout_input(&self) -> Shape {
        self.layers.iter().fold(self.input, |s, l| l.output_shape(s))
    }

    /// Input shape of layer `i`; `i == len()` gives the readout input.
    pub fn shape_before(&self, i: usize) -> Shape {
        self.layers[..i].iter().fold(self.input, |s, l| l.output_shape(s))
    }

    /// Total weights of all layers and the readout. There are no biases.
    pub fn count_params(&self) -> usize {
        let mut cur = self.input;
        let mut total = 0;
        for l in &self.layers {
            total += l.param_count(cur);
            cur = l.output_shape(cur);
        }
        total + cur.size()
    }

    /// Comma-separated token rendering, e.g. `rnn-4,rnn-4,conv-4,fc-16`.
    pub fn tokens(&self) -> String {
        render_tokens(&self.layers)
    }
}

impl fmt::Display for ArchitectureDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.layers.is_empty() {
            write!(f, "[{}] -> readout", self.input)
        } else {
            write!(f, "[{}] {} -> readout", self.input, self.layers.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(" -> "))
        }
    }
}

pub fn render_tokens(layers: &[LayerSpec]) -> String {
    layers.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",")
}

/// Parses `fc-12,fc-4,rnn-3`. Arrows (`->`, `→`) are accepted as separators.
pub fn parse_tokens(s: &str) -> Result<Vec<LayerSpec>> {
    let normalized = s.replace("->", ",").replace('→', ",");
    normalized
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::parse)
        .collect()
}
