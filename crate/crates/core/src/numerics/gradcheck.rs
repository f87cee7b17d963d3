//! Central finite-difference gradient checking.

use crate::error::Result;

use super::Tensor;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Magnitude below which gradient entries are compared absolutely
/// rather than relatively. Central differences at `h = 1e-5` carry
/// roughly `1e-10` of truncation and rounding noise, so relative error
/// is meaningless for entries much smaller than this.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Central-difference estimate of `∂f/∂input[i]` for every index in
/// `indices` (all entries when `None`).
pub fn numeric_gradient<F>(
    f: &mut F,
    input: &Tensor,
    indices: Option<&[usize]>,
    step: f64,
) -> Result<Vec<(usize, f64)>>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let all: Vec<usize>;
    let indices = match indices {
        Some(ix) => ix,
        None => {
            all = (0..input.len()).collect();
            &all
        }
    };
    let mut probe = input.clone();
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - step;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.push((i, (plus - minus) / (2.0 * step)));
    }
    Ok(out)
}

/// Largest relative error between an analytic gradient and central
/// differences of `f` at the selected indices.
pub fn max_relative_error<F>(
    f: &mut F,
    input: &Tensor,
    analytic: &Tensor,
    indices: Option<&[usize]>,
) -> Result<f64>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let numeric = numeric_gradient(f, input, indices, FD_STEP)?;
    Ok(numeric
        .into_iter()
        .map(|(i, n)| relative_error(analytic.data()[i], n))
        .fold(0.0, f64::max))
}
