//! Function-preserving morphisms: widening a layer by unit replication and
//! inserting an identity-initialised layer.
//!
//! Both transformations rely on every layer input being a rectified
//! activation, which the network guarantees by rectifying its raw input.

mod verify;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use verify::{verify_preservation, InputRange};

use crate::arch::{LayerKind, LayerSpec, Network};
use crate::error::{Error, Result};
use crate::tensor::{AdamState, Array, LayerParams, Real, CONV_KERNEL};

/// Successor in the widening sequence 4, 8, 16, 32, 48, 64, ...
///
/// Widths below 16 double (rounding up to the next sequence element); from
/// 16 on each step adds 16. Off-sequence widths go to the smallest sequence
/// element strictly above them.
pub fn next_width(current: usize) -> usize {
    match current {
        0..=3 => 4,
        4..=7 => 8,
        8..=15 => 16,
        k => (k / 16 + 1) * 16,
    }
}

/// Unit replication map for widening `old` units to `new` units.
///
/// `g[k]` is the source unit of new unit `k` (0-based); the first `old`
/// entries are the identity. `f_w[k]` is one over the number of new units
/// sharing `g[k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WiderMapping {
    pub old: usize,
    pub new: usize,
    pub g: Vec<usize>,
    pub f_w: Vec<Real>,
}

impl WiderMapping {
    /// Builds the mapping for an explicit source assignment of the extra units.
    pub fn from_sources(old: usize, g: Vec<usize>) -> Result<Self> {
        let new = g.len();
        if old == 0 || new <= old {
            return Err(Error::InvalidArgument(format!("widening needs new width > old width >= 1, got {old} -> {new}")));
        }
        if let Some(k) = (0..old).find(|&k| g[k] != k) {
            return Err(Error::InvalidArgument(format!("unit {k} must map to itself")));
        }
        if let Some(k) = g.iter().position(|&s| s >= old) {
            return Err(Error::InvalidArgument(format!("unit {k} maps to {} outside 0..{old}", g[k])));
        }
        let mut counts = vec![0usize; old];
        for &s in &g {
            counts[s] += 1;
        }
        let f_w = g.iter().map(|&s| 1.0 / counts[s] as Real).collect();
        Ok(WiderMapping { old, new, g, f_w })
    }

    /// Number of new units replicating source unit `j`.
    pub fn multiplicity(&self, j: usize) -> usize {
        self.g.iter().filter(|&&s| s == j).count()
    }
}

/// Random replication map: extra units copy a uniformly drawn original unit.
pub fn make_mapping(old: usize, new: usize, rng: &mut impl Rng) -> Result<WiderMapping> {
    if old == 0 || new <= old {
        return Err(Error::InvalidArgument(format!("widening needs new width > old width >= 1, got {old} -> {new}")));
    }
    let g = (0..new).map(|k| if k < old { k } else { rng.random_range(0..old) }).collect();
    WiderMapping::from_sources(old, g)
}

/// One transformation chosen by the controller.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum MorphAction {
    /// Widen layer `layer` (0-based). `width` overrides the widening sequence.
    Wider { layer: usize, width: Option<usize> },
    /// Insert an identity layer after layer `position` (1-based; 0 is the front).
    Deeper { kind: LayerKind, position: usize },
    Unchanged,
}

impl MorphAction {
    pub fn wider(layer: usize) -> Self {
        MorphAction::Wider { layer, width: None }
    }

    /// `(kernel, stride)` of an inserted convolution.
    pub fn conv_geometry(&self) -> Option<(usize, usize)> {
        match self {
            MorphAction::Deeper { kind: LayerKind::Conv, .. } => Some((CONV_KERNEL, 1)),
            _ => None,
        }
    }
}

/// Parameter sets modified by a morphism.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Touched {
    Layer(usize),
    Readout,
}

/// Checks the widening mask: layer `i` may be widened only when the next
/// layer has the same kind or is the readout.
pub fn check_widenable(layers: &[LayerSpec], i: usize) -> Result<()> {
    let Some(spec) = layers.get(i) else {
        return Err(Error::InvalidArgument(format!("layer index {i} out of range (network has {} layers)", layers.len())));
    };
    match layers.get(i + 1) {
        None => Ok(()),
        Some(next) if next.kind == spec.kind => Ok(()),
        Some(next) => Err(Error::Masking {
            layer: i,
            kind: spec.to_string(),
            successor: next.to_string(),
        }),
    }
}

/// Eligibility of every layer under the widening mask.
pub fn widen_mask(layers: &[LayerSpec]) -> Vec<bool> {
    (0..layers.len()).map(|i| check_widenable(layers, i).is_ok()).collect()
}

/// Replicates `axis` through `g`, scaling new slice `k` by `f_w(k)^power`.
fn replicate_axis(a: &Array, axis: usize, map: &WiderMapping, power: i32) -> Array {
    let shape = a.shape();
    debug_assert_eq!(shape[axis], map.old);
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut new_shape = shape.to_vec();
    new_shape[axis] = map.new;
    let mut data = Vec::with_capacity(outer * map.new * inner);
    for o in 0..outer {
        for (k, &s) in map.g.iter().enumerate() {
            let src = &a.data()[(o * map.old + s) * inner..(o * map.old + s + 1) * inner];
            if power == 0 {
                data.extend_from_slice(src);
            } else {
                let f = map.f_w[k].powi(power);
                data.extend(src.iter().map(|v| v * f));
            }
        }
    }
    Array::from_vec(&new_shape, data).expect("computed shape")
}

/// Maps Adam moments through `remap(array, power)`: first moments with power 1,
/// second moments with power 2. The step counter is kept.
fn remap_state(st: &AdamState, shape: &[usize], remap: impl Fn(&Array, i32) -> Array) -> AdamState {
    let m = remap(&Array::from_vec(shape, st.m.clone()).expect("state matches parameters"), 1);
    let v = remap(&Array::from_vec(shape, st.v.clone()).expect("state matches parameters"), 2);
    AdamState {
        config: st.config,
        m: m.into_data(),
        v: v.into_data(),
        t: st.t,
    }
}

/// Widens layer `layer` to `mapping.new` units and rescales its successor.
pub fn widen(network: &Network, layer: usize, mapping: &WiderMapping) -> Result<Network> {
    let specs = &network.descriptor.layers;
    check_widenable(specs, layer)?;
    let spec = specs[layer];
    if mapping.old != spec.units {
        return Err(Error::InvalidArgument(format!(
            "mapping widens {} units but layer {layer} ({spec}) has {}",
            mapping.old, spec.units
        )));
    }

    // Parameters of the widened layer replicate unscaled along the new unit
    // axis while its gradients replicate scaled by f_w; the successor is the
    // other way round. Adam moments follow their gradients.
    let mut net = network.clone();
    let old_state = &network.optimizer.layers[layer];
    let (params, state) = match &network.layers[layer] {
        LayerParams::Fcn { w } => (
            LayerParams::Fcn { w: replicate_axis(w, 1, mapping, 0) },
            vec![remap_state(&old_state[0], w.shape(), |a, p| replicate_axis(a, 1, mapping, p))],
        ),
        LayerParams::Conv1d { kernel } => (
            LayerParams::Conv1d { kernel: replicate_axis(kernel, 2, mapping, 0) },
            vec![remap_state(&old_state[0], kernel.shape(), |a, p| replicate_axis(a, 2, mapping, p))],
        ),
        LayerParams::Rnn { w, h } => {
            // H'[l, k] = f_w(l) * H[g(l), g(k)]; its gradient is f_w(k) * G[g(l), g(k)]
            let both = |a: &Array, row_power: i32, col_power: i32| replicate_axis(&replicate_axis(a, 1, mapping, col_power), 0, mapping, row_power);
            (
                LayerParams::Rnn {
                    w: replicate_axis(w, 1, mapping, 0),
                    h: both(h, 1, 0),
                },
                vec![
                    remap_state(&old_state[0], w.shape(), |a, p| replicate_axis(a, 1, mapping, p)),
                    remap_state(&old_state[1], h.shape(), |a, p| both(a, 0, p)),
                ],
            )
        }
    };
    net.layers[layer] = params;
    net.optimizer.layers[layer] = state;
    net.descriptor.layers[layer].units = mapping.new;

    if layer + 1 < specs.len() {
        let old_state = &network.optimizer.layers[layer + 1];
        let (params, state) = match &network.layers[layer + 1] {
            LayerParams::Fcn { w } => (
                LayerParams::Fcn { w: replicate_axis(w, 0, mapping, 1) },
                vec![remap_state(&old_state[0], w.shape(), |a, _| replicate_axis(a, 0, mapping, 0))],
            ),
            LayerParams::Conv1d { kernel } => (
                LayerParams::Conv1d { kernel: replicate_axis(kernel, 1, mapping, 1) },
                vec![remap_state(&old_state[0], kernel.shape(), |a, _| replicate_axis(a, 1, mapping, 0))],
            ),
            LayerParams::Rnn { w, h } => (
                LayerParams::Rnn {
                    w: replicate_axis(w, 0, mapping, 1),
                    h: h.clone(),
                },
                vec![remap_state(&old_state[0], w.shape(), |a, _| replicate_axis(a, 0, mapping, 0)), old_state[1].clone()],
            ),
        };
        net.layers[layer + 1] = params;
        net.optimizer.layers[layer + 1] = state;
    } else {
        let axis = if spec.kind == LayerKind::Fcn { 0 } else { 1 };
        net.readout = replicate_axis(&network.readout, axis, mapping, 1);
        net.optimizer.readout = remap_state(&network.optimizer.readout, network.readout.shape(), |a, _| replicate_axis(a, axis, mapping, 0));
    }
    net.validate()?;
    Ok(net)
}

/// Inserts an identity-initialised layer of `kind` after layer `position`
/// (1-based; 0 inserts in front of the first layer).
///
/// Width follows the preceding activation: CNN and RNN take its channel
/// count, FCN its time length.
pub fn deepen(network: &Network, kind: LayerKind, position: usize) -> Result<Network> {
    let n = network.descriptor.len();
    if position > n {
        return Err(Error::InvalidArgument(format!("insert position {position} out of range 0..={n}")));
    }
    let input = network.descriptor.shape_before(position);
    let (spec, params) = match kind {
        LayerKind::Fcn => (
            LayerSpec::fcn(input.time),
            LayerParams::Fcn { w: Array::identity(input.time) },
        ),
        LayerKind::Conv => {
            let c = input.channels;
            let mut kernel = Array::zeros(&[CONV_KERNEL, c, c]);
            for i in 0..c {
                kernel.set3(1, i, i, 1.0);
            }
            (LayerSpec::conv(c), LayerParams::Conv1d { kernel })
        }
        LayerKind::Rnn => {
            let c = input.channels;
            (
                LayerSpec::rnn(c),
                LayerParams::Rnn {
                    w: Array::identity(c),
                    h: Array::zeros(&[c, c]),
                },
            )
        }
    };
    let mut net = network.clone();
    net.descriptor.layers.insert(position, spec);
    net.optimizer.layers.insert(position, crate::arch::network_fresh_state(&params));
    net.layers.insert(position, params);
    net.validate()?;
    Ok(net)
}

/// Result of applying a [`MorphAction`].
#[derive(Clone, Debug)]
pub struct Morphed {
    pub network: Network,
    pub touched: Vec<Touched>,
}

/// Applies `action`; widening draws its replication map from `rng`.
pub fn apply(network: &Network, action: MorphAction, rng: &mut impl Rng) -> Result<Morphed> {
    match action {
        MorphAction::Unchanged => Ok(Morphed {
            network: network.clone(),
            touched: vec![],
        }),
        MorphAction::Wider { layer, width } => {
            check_widenable(&network.descriptor.layers, layer)?;
            let m = network.descriptor.layers[layer].units;
            let n = width.unwrap_or_else(|| next_width(m));
            let mapping = make_mapping(m, n, rng)?;
            let net = widen(network, layer, &mapping)?;
            let succ = if layer + 1 < net.descriptor.len() {
                Touched::Layer(layer + 1)
            } else {
                Touched::Readout
            };
            Ok(Morphed {
                network: net,
                touched: vec![Touched::Layer(layer), succ],
            })
        }
        MorphAction::Deeper { kind, position } => Ok(Morphed {
            network: deepen(network, kind, position)?,
            touched: vec![Touched::Layer(position)],
        }),
    }
}

/// Adds uniform noise in `[-magnitude, magnitude]` to the touched parameters.
pub fn perturb(network: &mut Network, touched: &[Touched], magnitude: Real, rng: &mut impl Rng) {
    if magnitude <= 0.0 {
        return;
    }
    let mut jitter = |a: &mut Array| {
        for v in a.data_mut() {
            *v += rng.random_range(-magnitude..=magnitude);
        }
    };
    for t in touched {
        match *t {
            Touched::Layer(i) => network.layers[i].arrays_mut().into_iter().for_each(&mut jitter),
            Touched::Readout => jitter(&mut network.readout),
        }
    }
}
