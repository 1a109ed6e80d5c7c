use rand::Rng;

use super::{ArchitectureDescriptor, LayerKind, LayerSpec, Shape};
use crate::error::{Error, Result};
use crate::tensor::{kernels, AdamConfig, AdamState, Array, LayerParams, NodeId, Real, Tape, CONV_KERNEL};

/// Adam moments for every parameter array of a [`Network`].
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub layers: Vec<Vec<AdamState>>,
    pub readout: AdamState,
}

impl OptimizerState {
    pub fn fresh(layers: &[LayerParams], readout: &Array) -> Self {
        OptimizerState {
            layers: layers.iter().map(fresh_layer_state).collect(),
            readout: AdamState::new(readout.len(), AdamConfig::default()),
        }
    }
}

pub(crate) fn fresh_layer_state(p: &LayerParams) -> Vec<AdamState> {
    p.arrays()
        .iter()
        .map(|a| AdamState::new(a.len(), AdamConfig::default()))
        .collect()
}

/// A descriptor bound to concrete weights and training bookkeeping.
///
/// The forward pass rectifies the raw input, runs every layer (ReLU after
/// FCN and CNN, ReLU inside the RNN recurrence) and ends in a bias-free
/// linear readout over the flattened final activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub descriptor: ArchitectureDescriptor,
    pub layers: Vec<LayerParams>,
    /// `[T_f, C_f]`
    pub readout: Array,
    pub optimizer: OptimizerState,
    pub epochs_trained: usize,
    pub score: Option<Real>,
}

fn uniform(shape: &[usize], bound: Real, rng: &mut impl Rng) -> Array {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Array::from_vec(shape, data).expect("shape product")
}

pub(crate) fn random_layer(spec: LayerSpec, input: Shape, rng: &mut impl Rng) -> LayerParams {
    match spec.kind {
        LayerKind::Fcn => {
            let bound = (6.0 / input.time as Real).sqrt();
            LayerParams::Fcn {
                w: uniform(&[input.time, spec.units], bound, rng),
            }
        }
        LayerKind::Conv => {
            let bound = (6.0 / (CONV_KERNEL * input.channels) as Real).sqrt();
            LayerParams::Conv1d {
                kernel: uniform(&[CONV_KERNEL, input.channels, spec.units], bound, rng),
            }
        }
        LayerKind::Rnn => {
            let bound = (6.0 / input.channels as Real).sqrt();
            // recurrent spectral radius around 0.5
            let rec = 0.5 * (3.0 / spec.units as Real).sqrt();
            LayerParams::Rnn {
                w: uniform(&[input.channels, spec.units], bound, rng),
                h: uniform(&[spec.units, spec.units], rec, rng),
            }
        }
    }
}

pub(crate) fn expected_arrays(spec: LayerSpec, input: Shape) -> Vec<Vec<usize>> {
    match spec.kind {
        LayerKind::Fcn => vec![vec![input.time, spec.units]],
        LayerKind::Conv => vec![vec![CONV_KERNEL, input.channels, spec.units]],
        LayerKind::Rnn => vec![vec![input.channels, spec.units], vec![spec.units, spec.units]],
    }
}

impl Network {
    /// Freshly initialised network.
    pub fn random(descriptor: ArchitectureDescriptor, rng: &mut impl Rng) -> Result<Self> {
        let shapes = descriptor.infer_shapes()?;
        let layers: Vec<LayerParams> = descriptor
            .layers
            .iter()
            .zip(&shapes)
            .map(|(spec, (inp, _))| random_layer(*spec, *inp, rng))
            .collect();
        let ro = descriptor.readout_input();
        let bound = (6.0 / (ro.size() + 1) as Real).sqrt();
        let readout = uniform(&[ro.time, ro.channels], bound, rng);
        Network::from_parts(descriptor, layers, readout)
    }

    /// Assembles a network from explicit weights, checking every shape.
    pub fn from_parts(descriptor: ArchitectureDescriptor, layers: Vec<LayerParams>, readout: Array) -> Result<Self> {
        let optimizer = OptimizerState::fresh(&layers, &readout);
        let net = Network {
            descriptor,
            layers,
            readout,
            optimizer,
            epochs_trained: 0,
            score: None,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = self.descriptor.infer_shapes()?;
        if shapes.len() != self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "descriptor has {} layers but {} parameter sets were given",
                shapes.len(),
                self.layers.len()
            )));
        }
        for (i, ((spec, (inp, _)), params)) in self.descriptor.layers.iter().zip(&shapes).zip(&self.layers).enumerate() {
            let expected = expected_arrays(*spec, *inp);
            let kind_ok = matches!(
                (spec.kind, params),
                (LayerKind::Fcn, LayerParams::Fcn { .. })
                    | (LayerKind::Conv, LayerParams::Conv1d { .. })
                    | (LayerKind::Rnn, LayerParams::Rnn { .. })
            );
            let actual: Vec<Vec<usize>> = params.arrays().iter().map(|a| a.shape().to_vec()).collect();
            if !kind_ok || actual != expected {
                return Err(Error::InvalidArgument(format!(
                    "layer {i} ({spec}) expects arrays {expected:?}, found {actual:?}"
                )));
            }
        }
        let ro = self.descriptor.readout_input();
        if self.readout.shape() != [ro.time, ro.channels] {
            return Err(Error::shape("readout", self.readout.shape(), &[ro.time, ro.channels]));
        }
        let opt_ok = self.optimizer.layers.len() == self.layers.len()
            && self
                .optimizer
                .layers
                .iter()
                .zip(&self.layers)
                .all(|(st, p)| st.len() == p.arrays().len() && st.iter().zip(p.arrays()).all(|(s, a)| s.len() == a.len()))
            && self.optimizer.readout.len() == self.readout.len();
        if !opt_ok {
            return Err(Error::InvalidArgument("optimizer state does not match parameters".into()));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> Shape {
        self.descriptor.input
    }

    pub fn tokens(&self) -> String {
        self.descriptor.tokens()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum::<usize>() + self.readout.len()
    }

    /// All parameter arrays: layer arrays in order, then the readout.
    pub fn param_arrays(&self) -> Vec<&Array> {
        let mut v: Vec<&Array> = self.layers.iter().flat_map(|l| l.arrays()).collect();
        v.push(&self.readout);
        v
    }

    fn check_input(&self, x: &Array) -> Result<()> {
        let inp = self.descriptor.input;
        if x.ndim() != 3 || x.shape()[1] != inp.time || x.shape()[2] != inp.channels {
            return Err(Error::shape("network input", x.shape(), &[0, inp.time, inp.channels]));
        }
        Ok(())
    }

    /// Hidden activation after every layer for a batch `[B, T, C]`; index 0 is
    /// the rectified input.
    pub fn activations(&self, x: &Array) -> Result<Vec<Array>> {
        self.check_input(x)?;
        let mut acts = vec![kernels::relu(x)];
        for p in &self.layers {
            let cur = acts.last().expect("non-empty");
            let next = match p {
                LayerParams::Fcn { w } => kernels::relu(&kernels::fcn_fwd(w, cur)?),
                LayerParams::Conv1d { kernel } => kernels::relu(&kernels::conv_fwd(kernel, cur)?),
                LayerParams::Rnn { w, h } => kernels::rnn_fwd(w, h, cur)?,
            };
            acts.push(next);
        }
        Ok(acts)
    }

    /// Scalar prediction per sample of a batch `[B, T, C]`.
    pub fn predict(&self, x: &Array) -> Result<Array> {
        let acts = self.activations(x)?;
        kernels::readout_fwd(&self.readout, acts.last().expect("non-empty"))
    }

    /// Records the forward pass on `tape`. Returns the prediction node and the
    /// parameter leaves in [`Network::param_arrays`] order.
    pub fn forward_tape(&self, tape: &mut Tape, x: NodeId) -> Result<(NodeId, Vec<NodeId>)> {
        self.check_input(tape.value(x))?;
        let mut params = Vec::new();
        let mut cur = tape.relu(x);
        for p in &self.layers {
            cur = match p {
                LayerParams::Fcn { w } => {
                    let w = tape.leaf(w.clone());
                    params.push(w);
                    let z = tape.fcn(w, cur)?;
                    tape.relu(z)
                }
                LayerParams::Conv1d { kernel } => {
                    let k = tape.leaf(kernel.clone());
                    params.push(k);
                    let z = tape.conv1d(k, cur)?;
                    tape.relu(z)
                }
                LayerParams::Rnn { w, h } => {
                    let w = tape.leaf(w.clone());
                    let h = tape.leaf(h.clone());
                    params.push(w);
                    params.push(h);
                    tape.rnn(w, h, cur)?
                }
            };
        }
        let r = tape.leaf(self.readout.clone());
        params.push(r);
        let y = tape.readout(r, cur)?;
        Ok((y, params))
    }

    /// Applies one Adam step per parameter array with the given gradients
    /// (in [`Network::param_arrays`] order).
    pub fn adam_step(&mut self, grads: &[&Array], config: AdamConfig) -> Result<()> {
        let expected = self.param_arrays().len();
        if grads.len() != expected {
            return Err(Error::shape("gradients", &[grads.len()], &[expected]));
        }
        if let Some(i) = grads.iter().position(|g| !g.all_finite()) {
            return Err(Error::NonFinite(format!("gradient of parameter array {i}")));
        }
        let mut gi = 0;
        for (params, states) in self.layers.iter_mut().zip(self.optimizer.layers.iter_mut()) {
            for (arr, st) in params.arrays_mut().into_iter().zip(states.iter_mut()) {
                st.config = config;
                st.step(arr.data_mut(), grads[gi].data())?;
                gi += 1;
            }
        }
        self.optimizer.readout.config = config;
        self.optimizer.readout.step(self.readout.data_mut(), grads[gi].data())
    }

    /// Replaces the optimizer state of layer `i` with zero moments.
    pub fn reset_layer_optimizer(&mut self, i: usize) {
        self.optimizer.layers[i] = fresh_layer_state(&self.layers[i]);
    }

    pub fn reset_readout_optimizer(&mut self) {
        self.optimizer.readout = AdamState::new(self.readout.len(), AdamConfig::default());
    }
}
