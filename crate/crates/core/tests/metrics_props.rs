mod common;

use guardlora::metrics::{confusion, f_beta, report};
use proptest::prelude::*;

fn pairs() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1usize..200).prop_flat_map(|n| {
        (
            proptest::collection::vec(0usize..2, n),
            proptest::collection::vec(0usize..2, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn report_equals_brute_force((preds, labels) in pairs()) {
        let cm = confusion(&preds, &labels).unwrap();
        prop_assert_eq!(cm.total() as usize, preds.len());
        let r = report(&cm).unwrap();
        prop_assert_eq!(common::report_array(&r), common::brute_force_metrics(&preds, &labels));
        if let Some(f1) = r.f1 {
            let (tp, fp, fn_) = (cm.tp as f64, cm.fp as f64, cm.fn_ as f64);
            let alt = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
            prop_assert!((f1 - alt).abs() < 1e-12);
        }
    }

    #[test]
    fn swapping_classes_swaps_rates((preds, labels) in pairs()) {
        let flip = |v: &[usize]| v.iter().map(|x| 1 - x).collect::<Vec<_>>();
        let a = confusion(&preds, &labels).unwrap();
        let b = confusion(&flip(&preds), &flip(&labels)).unwrap();
        prop_assert_eq!(a.swapped(), b);
        let (ra, rb) = (report(&a).unwrap(), report(&b).unwrap());
        prop_assert_eq!(ra.accuracy, rb.accuracy);
        if let (Some(tpr), Some(fpr)) = (ra.tpr, rb.fpr) {
            prop_assert!((tpr + fpr - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn f_beta_lies_between_precision_and_recall(p in 0.01f64..=1.0, r in 0.01f64..=1.0, beta in 0.1f64..4.0) {
        let f = f_beta(p, r, beta);
        prop_assert!(f >= p.min(r) - 1e-12 && f <= p.max(r) + 1e-12);
    }
}

#[test]
fn f_beta_worked_examples() {
    assert!((f_beta(0.5, 1.0, 1.0) - 2.0 / 3.0).abs() < 1e-9);
    assert!((f_beta(0.5, 1.0, 0.5) - 5.0 / 9.0).abs() < 1e-9);
    assert!((f_beta(0.5, 1.0, 1.0) - 0.6667).abs() < 5e-5);
    assert!((f_beta(0.5, 1.0, 0.5) - 0.5556).abs() < 5e-5);
    assert_eq!(f_beta(0.0, 0.0, 1.0), 0.0);
}

#[test]
fn degenerate_inputs() {
    assert!(confusion(&[], &[]).is_err());
    assert!(confusion(&[1, 0], &[1]).is_err());
    assert!(confusion(&[2], &[1]).is_err());
    let r = report(&confusion(&[0, 0], &[0, 0]).unwrap()).unwrap();
    assert_eq!(
        (r.accuracy, r.precision, r.recall, r.f1),
        (Some(1.0), None, None, None)
    );
    assert_eq!(r.fpr, Some(0.0));
}
