use crate::error::{Error, Result};
use crate::numerics::{check_cross_entropy_args, log_sum_exp, Tensor};

/// Class-weighted cross-entropy of `logits[N × C]` against `targets`.
///
/// Each row contributes `−w[y]·log softmax(x)[y]` and the sum is divided
/// by the total weight of the targets, so uniform weights give the plain
/// mean cross-entropy. This is the value-only counterpart of
/// [`crate::numerics::Tape::weighted_cross_entropy`].
pub fn weighted_cross_entropy(logits: &Tensor, targets: &[usize], weights: &[f64]) -> Result<f64> {
    let (n, c) = logits.dims2()?;
    check_cross_entropy_args(n, c, targets, weights)?;
    let mut loss = 0.0;
    let mut total = 0.0;
    for (i, &y) in targets.iter().enumerate() {
        let row = logits.row(i);
        loss += weights[y] * (log_sum_exp(row) - row[y]);
        total += weights[y];
    }
    if total <= 0.0 {
        return Err(Error::data(
            "degenerate class weights: the targets carry zero total weight",
        ));
    }
    Ok(loss / total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_tape_value() {
        let x = Tensor::from_rows(&[&[2.0, 0.0, -1.0], &[0.5, 1.0, 3.0]]).unwrap();
        let w = [1.0, 2.0, 0.5];
        let mut tape = crate::numerics::Tape::new();
        let v = tape.leaf(x.clone(), true);
        let l = tape.weighted_cross_entropy(v, &[0, 2], &w).unwrap();
        let expected = tape.value(l).data()[0];
        assert_eq!(weighted_cross_entropy(&x, &[0, 2], &w).unwrap(), expected);
    }

    #[test]
    fn errors() {
        let x = Tensor::from_rows(&[&[0.0, 0.0]]).unwrap();
        assert!(matches!(
            weighted_cross_entropy(&x, &[2], &[1.0, 1.0]),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            weighted_cross_entropy(&x, &[1], &[1.0, 0.0]),
            Err(Error::Data(_))
        ));
    }
}
