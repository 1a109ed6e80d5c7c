//! JSON checkpoint format. Weight arrays are stored row-major as base64 of
//! little-endian floats so that a round trip is bit-exact.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::network::OptimizerState;
use super::{parse_tokens, ArchitectureDescriptor, Network, Shape};
use crate::error::{Error, Result};
use crate::tensor::{AdamConfig, AdamState, Array, LayerParams, Real, PRECISION};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

const REAL_BYTES: usize = std::mem::size_of::<Real>();

#[derive(Clone, Debug, Serialize, Deserialize)]
pub(crate) struct EncodedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: String,
}

#[derive(Serialize, Deserialize)]
struct EncodedLayer {
    token: String,
    arrays: Vec<EncodedArray>,
}

#[derive(Serialize, Deserialize)]
struct EncodedAdam {
    config: AdamConfig,
    t: u64,
    m: String,
    v: String,
}

#[derive(Serialize, Deserialize)]
struct EncodedOptimizer {
    layers: Vec<Vec<EncodedAdam>>,
    readout: EncodedAdam,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    schema_version: u32,
    precision: String,
    input_shape: [usize; 2],
    tokens: String,
    layers: Vec<EncodedLayer>,
    readout: EncodedArray,
    epochs_trained: usize,
    score: Option<Real>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    optimizer: Option<EncodedOptimizer>,
}

pub(crate) fn encode_floats(data: &[Real]) -> String {
    let mut bytes = Vec::with_capacity(data.len() * REAL_BYTES);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub(crate) fn decode_floats(s: &str, what: &str) -> Result<Vec<Real>> {
    let bytes = STANDARD
        .decode(s)
        .map_err(|e| Error::Checkpoint(format!("{what}: bad base64: {e}")))?;
    if bytes.len() % REAL_BYTES != 0 {
        return Err(Error::Checkpoint(format!("{what}: byte length {} is not a multiple of {REAL_BYTES}", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(REAL_BYTES)
        .map(|c| Real::from_le_bytes(c.try_into().expect("chunk size")))
        .collect())
}

pub(crate) fn encode_array(name: &str, a: &Array) -> EncodedArray {
    EncodedArray {
        name: name.to_string(),
        shape: a.shape().to_vec(),
        data: encode_floats(a.data()),
    }
}

pub(crate) fn decode_array(e: &EncodedArray, what: &str) -> Result<Array> {
    let data = decode_floats(&e.data, what)?;
    let expected: usize = e.shape.iter().product();
    if data.len() != expected {
        return Err(Error::Checkpoint(format!(
            "{what}: shape {:?} needs {expected} values, found {}",
            e.shape,
            data.len()
        )));
    }
    Array::from_vec(&e.shape, data)
}

fn encode_adam(s: &AdamState) -> EncodedAdam {
    EncodedAdam {
        config: s.config,
        t: s.t,
        m: encode_floats(&s.m),
        v: encode_floats(&s.v),
    }
}

fn decode_adam(e: &EncodedAdam, what: &str) -> Result<AdamState> {
    Ok(AdamState {
        config: e.config,
        t: e.t,
        m: decode_floats(&e.m, what)?,
        v: decode_floats(&e.v, what)?,
    })
}

/// Renders a network as a checkpoint document.
pub fn serialize(network: &Network, with_optimizer: bool) -> Result<String> {
    let layers = network
        .descriptor
        .layers
        .iter()
        .zip(&network.layers)
        .map(|(spec, p)| EncodedLayer {
            token: spec.to_string(),
            arrays: p
                .array_names()
                .iter()
                .zip(p.arrays())
                .map(|(n, a)| encode_array(n, a))
                .collect(),
        })
        .collect();
    let optimizer = with_optimizer.then(|| EncodedOptimizer {
        layers: network
            .optimizer
            .layers
            .iter()
            .map(|states| states.iter().map(encode_adam).collect())
            .collect(),
        readout: encode_adam(&network.optimizer.readout),
    });
    let doc = CheckpointDoc {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        precision: PRECISION.to_string(),
        input_shape: [network.descriptor.input.time, network.descriptor.input.channels],
        tokens: network.tokens(),
        layers,
        readout: encode_array("readout", &network.readout),
        epochs_trained: network.epochs_trained,
        score: network.score,
        optimizer,
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

/// Parses and validates a checkpoint document.
pub fn deserialize(text: &str) -> Result<Network> {
    let doc: CheckpointDoc = serde_json::from_str(text)?;
    if doc.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(Error::Checkpoint(format!(
            "schema version {} is not supported (expected {CHECKPOINT_SCHEMA_VERSION})",
            doc.schema_version
        )));
    }
    if doc.precision != PRECISION {
        return Err(Error::Checkpoint(format!(
            "checkpoint precision {} does not match build precision {PRECISION}",
            doc.precision
        )));
    }
    let specs = parse_tokens(&doc.tokens)?;
    if specs.len() != doc.layers.len() {
        return Err(Error::Checkpoint(format!(
            "tokens list {} layers but {} layer records are present",
            specs.len(),
            doc.layers.len()
        )));
    }
    let mut layers = Vec::with_capacity(specs.len());
    for (i, (spec, enc)) in specs.iter().zip(&doc.layers).enumerate() {
        if enc.token != spec.to_string() {
            return Err(Error::Checkpoint(format!("layer {i}: record token {} != {spec}", enc.token)));
        }
        let arr = |name: &str| -> Result<Array> {
            let e = enc
                .arrays
                .iter()
                .find(|a| a.name == name)
                .ok_or_else(|| Error::Checkpoint(format!("layer {i}: missing array {name:?}")))?;
            decode_array(e, &format!("layer {i} array {name}"))
        };
        let params = match spec.kind {
            super::LayerKind::Fcn => LayerParams::Fcn { w: arr("w")? },
            super::LayerKind::Conv => LayerParams::Conv1d { kernel: arr("kernel")? },
            super::LayerKind::Rnn => LayerParams::Rnn { w: arr("w")?, h: arr("h")? },
        };
        layers.push(params);
    }
    let readout = decode_array(&doc.readout, "readout")?;
    let descriptor = ArchitectureDescriptor::new(Shape::new(doc.input_shape[0], doc.input_shape[1]), specs)?;
    let mut net = Network::from_parts(descriptor, layers, readout).map_err(|e| Error::Checkpoint(e.to_string()))?;
    net.epochs_trained = doc.epochs_trained;
    net.score = doc.score;
    if let Some(opt) = &doc.optimizer {
        let layers = opt
            .layers
            .iter()
            .enumerate()
            .map(|(i, states)| {
                states
                    .iter()
                    .map(|s| decode_adam(s, &format!("optimizer layer {i}")))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        net.optimizer = OptimizerState {
            layers,
            readout: decode_adam(&opt.readout, "optimizer readout")?,
        };
        net.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    Ok(net)
}

pub fn save_checkpoint(network: &Network, path: &Path, with_optimizer: bool) -> Result<()> {
    let text = serialize(network, with_optimizer)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    deserialize(&text)
}
