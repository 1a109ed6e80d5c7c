use rand::seq::SliceRandom;
use rand::Rng;

use crate::arch::Network;
use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::tensor::{AdamConfig, Array, Real, Tape};

/// Mean squared error and its parameter gradients on one batch.
pub fn batch_gradients(network: &Network, x: &Array, y: &Array) -> Result<(Real, Vec<Array>)> {
    let mut tape = Tape::new();
    let xi = tape.constant(x.clone());
    let (pred, params) = network.forward_tape(&mut tape, xi)?;
    let loss = tape.mse(pred, y)?;
    tape.backward(loss)?;
    let grads = params.iter().map(|&p| tape.grad(p).clone()).collect();
    Ok((tape.scalar(loss), grads))
}

/// Trains in place with Adam over shuffled mini-batches, reusing the
/// network's weights and optimizer state. Returns the mean training loss of
/// every epoch.
pub fn train_epochs(
    network: &mut Network,
    data: &WindowedDataset,
    epochs: usize,
    batch_size: usize,
    adam: AdamConfig,
    rng: &mut impl Rng,
) -> Result<Vec<Real>> {
    if epochs == 0 || batch_size == 0 {
        return Err(Error::InvalidArgument(format!("epochs ({epochs}) and batch size ({batch_size}) must be positive")));
    }
    if data.is_empty() {
        return Err(Error::Dataset("training split is empty".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch_size) {
            let (x, y) = data.batch(chunk);
            let (loss, grads) = batch_gradients(network, &x, &y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("loss {loss} in epoch {}", epoch + 1)));
            }
            let refs: Vec<&Array> = grads.iter().collect();
            network.adam_step(&refs, adam).map_err(|e| match e {
                Error::NonFinite(m) => Error::Diverged(m),
                other => other,
            })?;
            total += loss * chunk.len() as Real;
        }
        history.push(total / data.len() as Real);
        network.epochs_trained += 1;
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::arch::{ArchitectureDescriptor, Shape};

    fn mean_target(seed: u64, n: usize) -> WindowedDataset {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<Real> = (0..n * 8).map(|_| r.random_range(0.0..1.0)).collect();
        let inputs = Array::from_vec(&[n, 8, 1], data).unwrap();
        let targets = (0..n).map(|i| 2.0 * inputs.slice_outer(i, 1).data().iter().sum::<Real>() / 8.0).collect();
        WindowedDataset {
            inputs,
            targets,
            starts: (0..n).collect(),
            target_rows: (0..n).collect(),
        }
    }

    fn fc4(seed: u64) -> Network {
        let d = ArchitectureDescriptor::from_tokens(Shape::new(8, 1), "fc-4").unwrap();
        Network::random(d, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn learns_a_linear_target() {
        let mut wins = 0;
        for seed in 0..5 {
            let data = mean_target(seed, 200);
            let mut n = fc4(seed);
            let h = train_epochs(&mut n, &data, 20, 32, AdamConfig::with_lr(1e-2), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(h.len(), 20);
            assert_eq!(n.epochs_trained, 20);
            if h[19] < h[0] {
                wins += 1;
            }
        }
        assert!(wins >= 4);
    }

    #[test]
    fn deterministic_and_warm() {
        let data = mean_target(1, 64);
        let run = || {
            let mut n = fc4(3);
            let h = train_epochs(&mut n, &data, 3, 16, AdamConfig::default(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
            (n, h)
        };
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
        assert!(a.optimizer.readout.t > 0);
        assert!(train_epochs(&mut fc4(0), &data, 0, 16, AdamConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let mut data = mean_target(1, 16);
        data.targets[3] = Real::NAN;
        let err = train_epochs(&mut fc4(0), &data, 1, 16, AdamConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(err.is_numeric(), "{err}");
    }
}
