use crate::error::{Error, Result};
use crate::tensor::Real;

fn check(y: &[Real], y_hat: &[Real]) -> Result<()> {
    if y.is_empty() || y.len() != y_hat.len() {
        return Err(Error::shape("metric", &[y.len()], &[y_hat.len()]));
    }
    Ok(())
}

/// Root mean squared error.
pub fn rmse(y: &[Real], y_hat: &[Real]) -> Result<Real> {
    check(y, y_hat)?;
    let s: Real = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((s / y.len() as Real).sqrt())
}

/// Mean absolute error.
pub fn mae(y: &[Real], y_hat: &[Real]) -> Result<Real> {
    check(y, y_hat)?;
    let s: Real = y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / y.len() as Real)
}
