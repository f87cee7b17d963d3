mod common;

use common::{gradient_suite, PRIMITIVES};

#[test]
fn every_primitive_and_the_classifier_loss_match_central_differences() {
    let cases = gradient_suite(7, 10, 2024).unwrap();
    assert!(cases.len() >= 100, "only {} instances", cases.len());
    for op in PRIMITIVES.iter().copied().chain(["classifier_loss"]) {
        assert!(cases.iter().any(|c| c.op == op), "{op} was not exercised");
    }
    let worst = cases
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .unwrap();
    assert!(
        worst.max_rel_error <= 1e-4,
        "{} relative error {:e}",
        worst.op,
        worst.max_rel_error
    );
}

#[test]
fn a_wrong_gradient_is_detected() {
    use guardlora::numerics::gradcheck::max_relative_error;
    use guardlora::numerics::Tensor;
    let x = Tensor::vector(vec![0.3, -1.2, 2.0]).unwrap();
    let mut cube =
        |t: &Tensor| -> guardlora::Result<f64> { Ok(t.data().iter().map(|v| v * v * v).sum()) };
    let wrong = Tensor::vector(x.data().iter().map(|v| 2.0 * v).collect()).unwrap();
    assert!(max_relative_error(&mut cube, &x, &wrong, None).unwrap() > 0.1);
    let right = Tensor::vector(x.data().iter().map(|v| 3.0 * v * v).collect()).unwrap();
    assert!(max_relative_error(&mut cube, &x, &right, None).unwrap() < 1e-8);
}
