use rand::Rng;

use crate::arch::Network;
use crate::error::{Error, Result};
use crate::tensor::{Array, Real};

/// Closed interval inputs are drawn from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputRange {
    pub lo: Real,
    pub hi: Real,
}

impl Default for InputRange {
    fn default() -> Self {
        InputRange { lo: -1.0, hi: 1.0 }
    }
}

/// Largest absolute output difference between two networks over `samples`
/// uniformly drawn inputs.
pub fn verify_preservation(
    teacher: &Network,
    student: &Network,
    samples: usize,
    range: InputRange,
    rng: &mut impl Rng,
) -> Result<Real> {
    let a = teacher.input_shape();
    let b = student.input_shape();
    if a != b {
        return Err(Error::shape("verify_preservation", &[a.time, a.channels], &[b.time, b.channels]));
    }
    if samples == 0 || !(range.lo <= range.hi) {
        return Err(Error::InvalidArgument(format!(
            "need at least one sample and lo <= hi, got {samples} samples in [{}, {}]",
            range.lo, range.hi
        )));
    }
    let n = samples * a.time * a.channels;
    let data = (0..n).map(|_| rng.random_range(range.lo..=range.hi)).collect();
    let x = Array::from_vec(&[samples, a.time, a.channels], data)?;
    let yt = teacher.predict(&x)?;
    let ys = student.predict(&x)?;
    yt.max_abs_diff(&ys)
}
